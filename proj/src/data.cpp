#include "exagree/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include <json.hpp>

namespace exagree {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocabulary::Vocabulary() {
  id_to_token_ = {kPad, kUnk, kCls, kSep};
  for (int i = 0; i < static_cast<int>(id_to_token_.size()); ++i) {
    token_to_id_[id_to_token_[static_cast<std::size_t>(i)]] = i;
  }
}

Vocabulary Vocabulary::build(const std::vector<TokenSequence>& corpus, int min_count) {
  std::map<std::string, long> counts;  // ordered map gives the lexicographic tie-break for free
  for (const TokenSequence& seq : corpus) {
    for (const std::string& tok : seq.tokens) ++counts[tok];
  }
  std::vector<std::pair<std::string, long>> entries(counts.begin(), counts.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, cnt] : entries) {
    if (cnt < min_count) continue;
    if (v.token_to_id_.count(tok)) continue;  // corpus token colliding with a reserved form
    v.token_to_id_[tok] = static_cast<int>(v.id_to_token_.size());
    v.id_to_token_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens_in_id_order) {
  if (tokens_in_id_order.size() < 4) throw ContractError("vocabulary must include the reserved tokens");
  Vocabulary v;
  v.id_to_token_ = tokens_in_id_order;
  v.token_to_id_.clear();
  for (int i = 0; i < static_cast<int>(v.id_to_token_.size()); ++i) {
    v.token_to_id_[v.id_to_token_[static_cast<std::size_t>(i)]] = i;
  }
  return v;
}

int Vocabulary::lookup(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? unk_id() : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocabulary::encode(TokenSequence& seq) const {
  seq.ids.resize(seq.tokens.size());
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) seq.ids[i] = lookup(seq.tokens[i]);
}

void Vocabulary::encode(std::vector<TokenSequence>& seqs) const {
  for (TokenSequence& s : seqs) encode(s);
}

std::vector<TokenSequence> load_dataset(const std::string& path, bool pair_task, int max_tokens,
                                        LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  std::vector<TokenSequence> out;
  LoadStats st;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) throw ParseError("invalid JSON record", line_no);
    if (!rec.contains("text") || !rec["text"].is_string()) {
      throw ParseError("missing or non-string \"text\"", line_no);
    }
    if (!rec.contains("label") || !rec["label"].is_number_integer() || rec["label"].get<long>() < 0) {
      throw SchemaError("\"label\" must be a non-negative integer", line_no);
    }
    TokenSequence seq;
    seq.tokens = tokenize(rec["text"].get<std::string>());
    if (pair_task) {
      if (!rec.contains("text_pair") || !rec["text_pair"].is_string()) {
        throw SchemaError("pair task requires a string \"text_pair\"", line_no);
      }
      const auto second = tokenize(rec["text_pair"].get<std::string>());
      if (seq.tokens.empty() || second.empty()) {
        throw SchemaError("pair instance with an empty side", line_no);
      }
      seq.pair_boundary = static_cast<int>(seq.tokens.size());
      seq.tokens.insert(seq.tokens.end(), second.begin(), second.end());
    } else if (rec.contains("text_pair") && !rec["text_pair"].is_null()) {
      throw SchemaError("\"text_pair\" present in a single-sequence dataset", line_no);
    }
    if (seq.tokens.empty()) throw SchemaError("instance with no tokens", line_no);
    seq.label = static_cast<int>(rec["label"].get<long>());
    ++st.total;
    if (max_tokens > 0 && seq.length() > max_tokens) {
      ++st.filtered;
      continue;
    }
    ++st.retained;
    out.push_back(std::move(seq));
  }
  if (stats) *stats = st;
  return out;
}

}  // namespace exagree
