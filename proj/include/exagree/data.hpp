#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "exagree/error.hpp"

namespace exagree {

/// One classification instance. Tokens are the raw (whitespace, lowercased)
/// surface forms without any model-specific special tokens; for pair tasks
/// the two sequences are stored concatenated and `pair_boundary` is the index
/// of the first token of the second sequence.
struct TokenSequence {
  std::vector<std::string> tokens;
  std::vector<int> ids;  // filled by Vocabulary::encode
  int pair_boundary = -1;
  int label = -1;

  bool is_pair() const { return pair_boundary >= 0; }
  int length() const { return static_cast<int>(tokens.size()); }
};

/// Token ids are assigned deterministically: four reserved entries, then
/// corpus tokens by descending frequency with lexicographic tie-break.
class Vocabulary {
 public:
  static constexpr const char* kPad = "[pad]";
  static constexpr const char* kUnk = "[unk]";
  static constexpr const char* kCls = "[cls]";
  static constexpr const char* kSep = "[sep]";

  Vocabulary();

  static Vocabulary build(const std::vector<TokenSequence>& corpus, int min_count = 1);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens_in_id_order);

  int lookup(const std::string& token) const;  // unk fallback
  void encode(TokenSequence& seq) const;
  void encode(std::vector<TokenSequence>& seqs) const;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  int pad_id() const { return 0; }
  int unk_id() const { return 1; }
  int cls_id() const { return 2; }
  int sep_id() const { return 3; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

std::vector<std::string> tokenize(const std::string& text);

struct LoadStats {
  long total = 0;
  long retained = 0;
  long filtered = 0;
  double retention() const { return total == 0 ? 1.0 : static_cast<double>(retained) / total; }
};

/// Reads a JSONL dataset ({"text": ..., "text_pair"?: ..., "label": int}).
/// Instances whose token count (combined for pairs) exceeds max_tokens are
/// dropped; input order is preserved. max_tokens <= 0 disables the filter.
std::vector<TokenSequence> load_dataset(const std::string& path, bool pair_task, int max_tokens,
                                        LoadStats* stats = nullptr);

}  // namespace exagree
