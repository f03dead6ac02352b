#include "e2stn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "e2stn/error.hpp"
#include "json.hpp"

namespace e2stn {

using nlohmann::json;

void ModelConfig::validate() const {
  if (channels < 1 || bands < 1) throw ConfigError("channels and bands must be >= 1");
  if (classes < 2) throw ConfigError("need at least 2 classes");
  const auto& t = transfer;
  if (t.heads == 0 || t.model_dim % t.heads != 0) {
    throw ConfigError("transfer.model_dim (" + std::to_string(t.model_dim) + ") must be divisible by heads (" +
                      std::to_string(t.heads) + ")");
  }
  if (t.model_dim < 2) throw ConfigError("transfer.model_dim must be >= 2 for layer norm");
  if (t.encoder_layers < 1) throw ConfigError("transfer.encoder_layers must be >= 1");
  if (t.decoder_layers < 1) throw ConfigError("transfer.decoder_layers must be >= 1");
  if (t.ffn_dim < 1 || t.cnn_hidden < 1) throw ConfigError("transfer.ffn_dim and cnn_hidden must be >= 1");
  if (!(t.ln_eps > 0.0)) throw ConfigError("transfer.ln_eps must be positive");
  if (eval.filters1 < 1 || eval.depth < 1 || eval.filters2 < 1) throw ConfigError("eval conv filter counts must be >= 1");
  if (classifier.cheb_order < 1) throw ConfigError("classifier.cheb_order must be >= 1");
  if (classifier.graph_out < 1 || classifier.hidden < 1) throw ConfigError("classifier widths must be >= 1");
  if (!(classifier.logit_clamp > 0.0)) throw ConfigError("classifier.logit_clamp must be positive");
}

void TrainConfig::validate() const {
  if (lambda < 0.0 || nu < 0.0 || xi < 0.0) throw ConfigError("loss weights lambda, nu, xi must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (adam.learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must lie in [0, 1)");
}

namespace {

// Reads keys from an object, rejecting any key nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + where_ + "." + it.key() + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!j_.at(key).is_number_unsigned()) throw ConfigError("");
      }
      out = j_.at(key).get<T>();
    } catch (const std::exception&) {
      throw ConfigError("config key '" + where_ + "." + key + "' has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json to_json_value(const ExperimentConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  json j;
  j["model"] = {
      {"channels", m.channels},
      {"bands", m.bands},
      {"classes", m.classes},
      {"transfer",
       {{"model_dim", m.transfer.model_dim},
        {"heads", m.transfer.heads},
        {"ffn_dim", m.transfer.ffn_dim},
        {"encoder_layers", m.transfer.encoder_layers},
        {"decoder_layers", m.transfer.decoder_layers},
        {"cnn_hidden", m.transfer.cnn_hidden},
        {"attn_scale", m.transfer.attn_scale},
        {"q_residual", m.transfer.q_residual},
        {"ln_eps", m.transfer.ln_eps}}},
      {"eval",
       {{"filters1", m.eval.filters1},
        {"depth", m.eval.depth},
        {"filters2", m.eval.filters2},
        {"elu", m.eval.elu},
        {"frozen", m.eval.frozen},
        {"normalize_by_size", m.eval.normalize_by_size}}},
      {"classifier",
       {{"cheb_order", m.classifier.cheb_order},
        {"graph_out", m.classifier.graph_out},
        {"hidden", m.classifier.hidden},
        {"use_theta", m.classifier.use_theta},
        {"row_normalize", m.classifier.row_normalize},
        {"row_eps", m.classifier.row_eps},
        {"logit_clamp", m.classifier.logit_clamp}}},
  };
  j["train"] = {
      {"lambda", t.lambda},
      {"nu", t.nu},
      {"xi", t.xi},
      {"adam",
       {{"learning_rate", t.adam.learning_rate},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"eps", t.adam.eps}}},
      {"batch_size", t.batch_size},
      {"epochs", t.epochs},
      {"seed", t.seed},
      {"ablation", t.ablation},
      {"clip_norm", t.clip_norm},
      {"val_fraction", t.val_fraction},
      {"patience", t.patience},
      {"cosine_schedule", t.cosine_schedule},
  };
  return j;
}

}  // namespace

std::string to_json(const ExperimentConfig& config) { return to_json_value(config).dump(2); }

ExperimentConfig experiment_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  {
    Reader root(j, "config");
    if (const json* mj = root.child("model")) {
      auto& m = c.model;
      Reader r(*mj, "model");
      r.get("channels", m.channels);
      r.get("bands", m.bands);
      r.get("classes", m.classes);
      if (const json* tj = r.child("transfer")) {
        Reader t(*tj, "model.transfer");
        t.get("model_dim", m.transfer.model_dim);
        t.get("heads", m.transfer.heads);
        t.get("ffn_dim", m.transfer.ffn_dim);
        t.get("encoder_layers", m.transfer.encoder_layers);
        t.get("decoder_layers", m.transfer.decoder_layers);
        t.get("cnn_hidden", m.transfer.cnn_hidden);
        t.get("attn_scale", m.transfer.attn_scale);
        t.get("q_residual", m.transfer.q_residual);
        t.get("ln_eps", m.transfer.ln_eps);
        t.finish();
      }
      if (const json* ej = r.child("eval")) {
        Reader e(*ej, "model.eval");
        e.get("filters1", m.eval.filters1);
        e.get("depth", m.eval.depth);
        e.get("filters2", m.eval.filters2);
        e.get("elu", m.eval.elu);
        e.get("frozen", m.eval.frozen);
        e.get("normalize_by_size", m.eval.normalize_by_size);
        e.finish();
      }
      if (const json* cj = r.child("classifier")) {
        Reader k(*cj, "model.classifier");
        k.get("cheb_order", m.classifier.cheb_order);
        k.get("graph_out", m.classifier.graph_out);
        k.get("hidden", m.classifier.hidden);
        k.get("use_theta", m.classifier.use_theta);
        k.get("row_normalize", m.classifier.row_normalize);
        k.get("row_eps", m.classifier.row_eps);
        k.get("logit_clamp", m.classifier.logit_clamp);
        k.finish();
      }
      r.finish();
    }
    if (const json* tj = root.child("train")) {
      auto& t = c.train;
      Reader r(*tj, "train");
      r.get("lambda", t.lambda);
      r.get("nu", t.nu);
      r.get("xi", t.xi);
      if (const json* aj = r.child("adam")) {
        Reader a(*aj, "train.adam");
        a.get("learning_rate", t.adam.learning_rate);
        a.get("beta1", t.adam.beta1);
        a.get("beta2", t.adam.beta2);
        a.get("eps", t.adam.eps);
        a.finish();
      }
      r.get("batch_size", t.batch_size);
      r.get("epochs", t.epochs);
      r.get("seed", t.seed);
      r.get("ablation", t.ablation);
      r.get("clip_norm", t.clip_norm);
      r.get("val_fraction", t.val_fraction);
      r.get("patience", t.patience);
      r.get("cosine_schedule", t.cosine_schedule);
      r.finish();
    }
    root.finish();
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return experiment_from_json(ss.str());
}

ModelConfig tiny_model_config() {
  ModelConfig m;
  m.channels = 4;
  m.bands = 3;
  m.classes = 3;
  m.transfer.model_dim = 8;
  m.transfer.heads = 2;
  m.transfer.ffn_dim = 16;
  m.transfer.cnn_hidden = 2;
  m.eval.filters1 = 4;
  m.eval.depth = 2;
  m.eval.filters2 = 8;
  m.classifier.cheb_order = 2;
  m.classifier.graph_out = 8;
  m.classifier.hidden = 16;
  return m;
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  const std::string text = to_json_value(config).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace e2stn
