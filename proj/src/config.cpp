#include "pmst/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include "pmst/inference.hpp"
#include "pmst/rng.hpp"

namespace pmst {

namespace {

struct KeyDef {
  const char* key;
  const char* toy;
  const char* help;
};

// clang-format off
const std::array<KeyDef, 60> kSchema = {{
  {"profile", "toy", "base profile: toy | paper"},
  {"corpus.languages", "a,b,x,y", "language inventory (first tags, then content ranges)"},
  {"corpus.tokens_per_lang", "100", "content tokens per language"},
  {"corpus.feature_dim", "16", "speech feature width"},
  {"corpus.noise", "0.1", "feature noise stddev"},
  {"corpus.ratio", "12", "feature frames per source token"},
  {"corpus.len_min", "3", "minimum target length"},
  {"corpus.len_max", "10", "maximum target length"},
  {"corpus.feature_layer", "8", "speech feature renderer variant"},
  {"corpus.speech_pairs", "st:a-x:200,st:b-x:5000,st:b-y:5000", "speech pairs with train sizes"},
  {"corpus.mt_pairs", "all", "MT pretraining pairs, or 'all'"},
  {"corpus.mt_train_size", "2000", "train samples per MT pair"},
  {"corpus.valid_size", "50", "validation samples per pair"},
  {"corpus.test_size", "50", "test samples per pair"},
  {"corpus.contaminate_asr", "0", "ASR valid/test samples copied into train (demo of the filter)"},
  {"model.enc_layers", "4", "encoder layers"},
  {"model.dec_layers", "4", "decoder layers"},
  {"model.d_model", "64", "embedding dim"},
  {"model.ffn_dim", "256", "feed-forward dim"},
  {"model.heads", "4", "attention heads"},
  {"model.pre_norm", "true", "pre-norm layer placement"},
  {"model.conv_layers", "1", "1D conv subsampler layers (0..3)"},
  {"model.conv_channels", "16", "conv channels"},
  {"model.kernel", "5", "conv kernel size"},
  {"model.stride", "2", "conv stride"},
  {"model.dropout", "0.3", "dropout"},
  {"model.attention_dropout", "0.1", "attention dropout"},
  {"model.stacked_layers", "0", "new bottom encoder layers (speech route)"},
  {"model.adapter_dim", "64", "adapter bottleneck dim"},
  {"model.adapter_encoder", "true", "adapters after encoder layers"},
  {"model.adapter_decoder", "true", "adapters after decoder layers"},
  {"model.max_positions", "4096", "positional table limit"},
  {"train.max_updates", "20000", "max updates"},
  {"train.update_freq", "2", "gradient accumulation batches"},
  {"train.lr_max", "0.0005", "max learning rate"},
  {"train.lr_init", "1e-07", "initial learning rate"},
  {"train.warmup", "1000", "warmup steps"},
  {"train.adam_beta1", "0.9", "Adam beta1"},
  {"train.adam_beta2", "0.999", "Adam beta2"},
  {"train.adam_eps", "1e-08", "Adam epsilon"},
  {"train.weight_decay", "0", "weight decay"},
  {"train.grad_clip", "0", "gradient clipping norm, 0 = none"},
  {"train.label_smoothing", "0.2", "label smoothing"},
  {"train.validate_every", "250", "validation frequency"},
  {"train.patience", "5", "early stopping patience"},
  {"train.avg_last", "3", "checkpoints to average"},
  {"train.checkpoint_averaging", "true", "average the last checkpoints"},
  {"train.batch_cap", "4000", "max source features (or tokens) per batch"},
  {"train.temperature", "3", "language-pair sampling temperature"},
  {"train.pairs", "st:a-x,st:b-x,st:b-y", "pairs to train on"},
  {"train.early_stop_pairs", "st:a-x", "pairs whose mean valid BLEU stops training"},
  {"train.plan", "fine_tune_bottom", "freeze plan: fine_tune_bottom | stacked | adapters_only | full"},
  {"train.plan_k", "3", "fine-tuned bottom encoder layers"},
  {"train.valid_beam", "1", "beam size during validation"},
  {"train.decode_max_len", "64", "decode length cap"},
  {"pretrain.max_updates", "4000", "MT pretraining updates"},
  {"pretrain.validate_every", "500", "MT pretraining validation frequency"},
  {"pretrain.batch_cap", "1000", "MT pretraining batch cap (tokens)"},
  {"adapt.max_updates", "2000", "incremental adaptation updates"},
  {"adapt.validate_every", "1000", "incremental adaptation validation frequency"},
}};
// clang-format on

const KeyDef* find_key(const std::string& key) {
  for (const auto& def : kSchema)
    if (key == def.key) return &def;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& def : kSchema) values_[def.key] = def.toy;
}

void RunConfig::apply_profile(const std::string& name) {
  if (name == "toy") {
    values_["profile"] = "toy";
    return;
  }
  PMST_CHECK(name == "paper", "unknown profile: " + name);
  values_["profile"] = "paper";
  const std::vector<std::pair<std::string, std::string>> paper = {
      {"model.enc_layers", "24"},    {"model.dec_layers", "24"},
      {"model.d_model", "1024"},     {"model.ffn_dim", "8192"},
      {"model.heads", "16"},         {"model.pre_norm", "true"},
      {"model.conv_layers", "1"},    {"model.conv_channels", "80"},
      {"model.kernel", "5"},         {"model.stride", "2"},
      {"model.dropout", "0.3"},      {"model.attention_dropout", "0.1"},
      {"model.adapter_dim", "64"},   {"train.max_updates", "200000"},
      {"train.update_freq", "2"},    {"train.lr_max", "0.0005"},
      {"train.lr_init", "1e-07"},    {"train.warmup", "10000"},
      {"train.adam_beta1", "0.9"},   {"train.adam_beta2", "0.999"},
      {"train.weight_decay", "0"},   {"train.grad_clip", "0"},
      {"train.label_smoothing", "0.2"}, {"train.validate_every", "5000"},
      {"train.patience", "5"},       {"train.avg_last", "3"},
      {"train.batch_cap", "4000"},   {"train.temperature", "3"},
  };
  for (const auto& [k, v] : paper) values_[k] = v;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  PMST_CHECK(in.good(), "config: cannot open: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::vector<std::pair<std::string, std::string>> entries;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    PMST_CHECK(eq != std::string::npos,
               "config: expected 'key = value' at line " + std::to_string(lineno));
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  // profile first so explicit keys win over profile values
  for (const auto& [k, v] : entries)
    if (k == "profile") cfg.apply_profile(v);
  for (const auto& [k, v] : entries)
    if (k != "profile") cfg.set(k, v);
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "profile") {
    apply_profile(value);
    return;
  }
  PMST_CHECK(find_key(key) != nullptr, "config: unknown key: " + key);
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  PMST_CHECK(it != values_.end(), "config: unknown key: " + key);
  return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    int64_t n = std::stoll(v, &pos);
    PMST_CHECK(pos == v.size(), "");
    return n;
  } catch (...) {
    throw Error("config: " + key + " must be an integer, got '" + v + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    PMST_CHECK(pos == v.size(), "");
    return d;
  } catch (...) {
    throw Error("config: " + key + " must be a number, got '" + v + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("config: " + key + " must be true/false, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      cur = trim(cur);
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cur = trim(cur);
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  for (const auto& def : kSchema) out << def.key << " = " << values_.at(def.key) << "\n";
  return out.str();
}

uint64_t RunConfig::hash() const { return fnv1a(dump()); }

std::string RunConfig::schema_help() {
  std::ostringstream out;
  for (const auto& def : kSchema)
    out << "  " << def.key << " (default " << def.toy << "): " << def.help << "\n";
  return out.str();
}

CorpusSpec RunConfig::corpus_spec() const {
  CorpusSpec spec;
  spec.languages = get_list("corpus.languages");
  spec.tokens_per_lang = static_cast<int>(get_int("corpus.tokens_per_lang"));
  spec.feature_dim = static_cast<int>(get_int("corpus.feature_dim"));
  spec.noise = get_double("corpus.noise");
  spec.ratio = static_cast<int>(get_int("corpus.ratio"));
  spec.len_min = static_cast<int>(get_int("corpus.len_min"));
  spec.len_max = static_cast<int>(get_int("corpus.len_max"));
  spec.feature_layer = static_cast<int>(get_int("corpus.feature_layer"));
  return spec;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig cfg;
  cfg.enc_layers = static_cast<int>(get_int("model.enc_layers"));
  cfg.dec_layers = static_cast<int>(get_int("model.dec_layers"));
  cfg.d_model = static_cast<int>(get_int("model.d_model"));
  cfg.ffn_dim = static_cast<int>(get_int("model.ffn_dim"));
  cfg.heads = static_cast<int>(get_int("model.heads"));
  cfg.pre_norm = get_bool("model.pre_norm");
  cfg.conv_layers = static_cast<int>(get_int("model.conv_layers"));
  cfg.conv_channels = static_cast<int>(get_int("model.conv_channels"));
  cfg.kernel = static_cast<int>(get_int("model.kernel"));
  cfg.stride = static_cast<int>(get_int("model.stride"));
  cfg.feature_dim = static_cast<int>(get_int("corpus.feature_dim"));
  cfg.dropout = get_double("model.dropout");
  cfg.attention_dropout = get_double("model.attention_dropout");
  cfg.stacked_layers = static_cast<int>(get_int("model.stacked_layers"));
  cfg.max_positions = static_cast<int>(get_int("model.max_positions"));
  return cfg;
}

AdapterSpec RunConfig::adapter_spec(const std::vector<int>& encoder_skip) const {
  AdapterSpec spec;
  spec.bottleneck_dim = static_cast<int>(get_int("model.adapter_dim"));
  spec.encoder = get_bool("model.adapter_encoder");
  spec.decoder = get_bool("model.adapter_decoder");
  spec.encoder_skip = encoder_skip;
  return spec;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.max_updates = get_int("train.max_updates");
  cfg.update_freq = static_cast<int>(get_int("train.update_freq"));
  cfg.lr_max = get_double("train.lr_max");
  cfg.lr_init = get_double("train.lr_init");
  cfg.warmup = get_int("train.warmup");
  cfg.adam_beta1 = get_double("train.adam_beta1");
  cfg.adam_beta2 = get_double("train.adam_beta2");
  cfg.adam_eps = get_double("train.adam_eps");
  cfg.weight_decay = get_double("train.weight_decay");
  cfg.grad_clip = get_double("train.grad_clip");
  cfg.label_smoothing = get_double("train.label_smoothing");
  cfg.validate_every = get_int("train.validate_every");
  cfg.patience = static_cast<int>(get_int("train.patience"));
  cfg.avg_last = static_cast<int>(get_int("train.avg_last"));
  cfg.checkpoint_averaging = get_bool("train.checkpoint_averaging");
  cfg.early_stop_pairs = get_list("train.early_stop_pairs");
  cfg.batch_cap = get_int("train.batch_cap");
  cfg.pair_temperature = get_double("train.temperature");
  cfg.valid_beam = static_cast<int>(get_int("train.valid_beam"));
  cfg.decode_max_len = static_cast<int>(get_int("train.decode_max_len"));
  cfg.threads = default_threads();
  return cfg;
}

TrainConfig RunConfig::pretrain_config() const {
  TrainConfig cfg = train_config();
  cfg.max_updates = get_int("pretrain.max_updates");
  cfg.validate_every = get_int("pretrain.validate_every");
  cfg.batch_cap = get_int("pretrain.batch_cap");
  cfg.early_stop_pairs.clear();  // mean over all pretraining pairs
  return cfg;
}

TrainConfig RunConfig::adapt_config() const {
  TrainConfig cfg = train_config();
  cfg.max_updates = get_int("adapt.max_updates");
  cfg.validate_every = get_int("adapt.validate_every");
  cfg.checkpoint_averaging = false;
  return cfg;
}

FreezePlan RunConfig::freeze_plan() const {
  const std::string& p = get("train.plan");
  if (p == "fine_tune_bottom")
    return FreezePlan::fine_tune_bottom(static_cast<int>(get_int("train.plan_k")));
  if (p == "stacked") return FreezePlan::stacked();
  if (p == "adapters_only") return FreezePlan::adapters_only(true, {}, false);
  if (p == "full") return FreezePlan::full();
  throw Error("config: unknown train.plan: " + p);
}

std::vector<std::pair<PairKey, int>> RunConfig::speech_pairs() const {
  std::vector<std::pair<PairKey, int>> out;
  for (const std::string& item : get_list("corpus.speech_pairs")) {
    auto last_colon = item.rfind(':');
    PMST_CHECK(last_colon != std::string::npos && last_colon > 0,
               "config: speech pair must be task:src-tgt:count, got " + item);
    PairKey key = PairKey::parse(item.substr(0, last_colon));
    PMST_CHECK(key.task != Task::kMt, "config: speech pairs must be st or asr: " + item);
    int count = std::stoi(item.substr(last_colon + 1));
    out.emplace_back(key, count);
  }
  return out;
}

std::vector<PairKey> RunConfig::mt_pairs() const {
  const std::string& v = get("corpus.mt_pairs");
  std::vector<PairKey> out;
  if (v == "all") {
    auto langs = get_list("corpus.languages");
    for (const auto& s : langs)
      for (const auto& t : langs) out.push_back({Task::kMt, s, t});
    return out;
  }
  for (const std::string& item : get_list("corpus.mt_pairs")) {
    auto dash = item.find('-');
    PMST_CHECK(dash != std::string::npos, "config: mt pair must be src-tgt: " + item);
    out.push_back({Task::kMt, item.substr(0, dash), item.substr(dash + 1)});
  }
  return out;
}

std::vector<PairKey> RunConfig::train_pairs() const {
  std::vector<PairKey> out;
  for (const std::string& item : get_list("train.pairs")) out.push_back(PairKey::parse(item));
  return out;
}

}  // namespace pmst
