#include "exagree/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace exagree {

using nlohmann::json;

namespace {

json params_to_json(const Model& model) {
  json arr = json::array();
  for (const auto& [name, m] : model.parameters()) {
    json entry;
    entry["name"] = name;
    entry["rows"] = m->rows();
    entry["cols"] = m->cols();
    entry["data"] = std::vector<double>(m->data(), m->data() + m->size());
    arr.push_back(std::move(entry));
  }
  return arr;
}

void params_from_json(Model& model, const json& arr) {
  const auto params = model.parameters();
  if (!arr.is_array() || arr.size() != params.size()) {
    throw ParseError("checkpoint: parameter count does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& entry = arr[i];
    if (entry.at("name").get<std::string>() != params[i].first) {
      throw ParseError("checkpoint: parameter " + std::to_string(i) + " is " +
                       entry.at("name").get<std::string>() + ", expected " + params[i].first);
    }
    Matrix& m = *params[i].second;
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const auto data = entry.at("data").get<std::vector<double>>();
    if (rows != m.rows() || cols != m.cols() ||
        data.size() != static_cast<std::size_t>(m.size())) {
      throw ParseError("checkpoint: shape mismatch for parameter " + params[i].first);
    }
    std::copy(data.begin(), data.end(), m.data());
  }
}

}  // namespace

std::string checkpoint_to_string(const Model& model) {
  json doc;
  doc["format"] = "exagree-checkpoint";
  doc["version"] = 1;
  doc["kind"] = model.kind();
  doc["activation"] = model.activation() == AttentionActivation::uniform ? "uniform" : "softmax";
  doc["vocab"] = model.vocab().tokens();
  if (const auto* t = dynamic_cast<const TransformerModel*>(&model)) {
    const TransformerConfig& c = t->config();
    doc["config"] = {{"layers", c.layers},   {"heads", c.heads},
                     {"model_dim", c.model_dim}, {"ff_dim", c.ff_dim},
                     {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
                     {"num_classes", c.num_classes}, {"pad_id", c.pad_id},
                     {"cls_id", c.cls_id},   {"sep_id", c.sep_id}};
  } else if (const auto* b = dynamic_cast<const BiLstmModel*>(&model)) {
    const BiLstmConfig& c = b->config();
    doc["config"] = {{"hidden_dim", c.hidden_dim}, {"embedding_dim", c.embedding_dim},
                     {"vocab_size", c.vocab_size}, {"num_classes", c.num_classes},
                     {"pad_id", c.pad_id},         {"pair_input", c.pair_input}};
  } else {
    throw CapabilityError("checkpoint: unsupported model kind " + model.kind());
  }
  doc["params"] = params_to_json(model);
  return doc.dump();
}

std::unique_ptr<Model> checkpoint_from_string(const std::string& text) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ParseError("checkpoint: invalid JSON");
  if (doc.value("format", "") != "exagree-checkpoint") {
    throw ParseError("checkpoint: unrecognized format field");
  }
  if (doc.value("version", 0) != 1) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(doc.value("version", 0)));
  }
  Vocabulary vocab = Vocabulary::from_tokens(doc.at("vocab").get<std::vector<std::string>>());
  const std::string kind = doc.at("kind").get<std::string>();
  const json& c = doc.at("config");
  std::unique_ptr<Model> model;
  if (kind == "transformer") {
    TransformerConfig cfg;
    cfg.layers = c.at("layers").get<int>();
    cfg.heads = c.at("heads").get<int>();
    cfg.model_dim = c.at("model_dim").get<int>();
    cfg.ff_dim = c.at("ff_dim").get<int>();
    cfg.vocab_size = c.at("vocab_size").get<int>();
    cfg.max_len = c.at("max_len").get<int>();
    cfg.num_classes = c.at("num_classes").get<int>();
    cfg.pad_id = c.at("pad_id").get<int>();
    cfg.cls_id = c.at("cls_id").get<int>();
    cfg.sep_id = c.at("sep_id").get<int>();
    model = std::make_unique<TransformerModel>(cfg, std::move(vocab), 0);
  } else if (kind == "bilstm") {
    BiLstmConfig cfg;
    cfg.hidden_dim = c.at("hidden_dim").get<int>();
    cfg.embedding_dim = c.at("embedding_dim").get<int>();
    cfg.vocab_size = c.at("vocab_size").get<int>();
    cfg.num_classes = c.at("num_classes").get<int>();
    cfg.pad_id = c.at("pad_id").get<int>();
    cfg.pair_input = c.at("pair_input").get<bool>();
    model = std::make_unique<BiLstmModel>(cfg, std::move(vocab), 0);
  } else {
    throw ParseError("checkpoint: unknown model kind " + kind);
  }
  model->set_activation(doc.value("activation", "softmax") == "uniform"
                            ? AttentionActivation::uniform
                            : AttentionActivation::softmax);
  params_from_json(*model, doc.at("params"));
  return model;
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out << checkpoint_to_string(model);
  out << '\n';
  if (!out) throw IoError("write failed: " + path);
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_from_string(text);
}

}  // namespace exagree
