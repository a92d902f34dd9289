#ifndef PMST_CONFIG_HPP
#define PMST_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pmst/corpus.hpp"
#include "pmst/model.hpp"
#include "pmst/training.hpp"

namespace pmst {

// Flat dotted-key configuration document. Unknown keys are rejected, every
// key has a default ("toy" profile); `profile = paper` switches the defaults
// to the full-scale hyperparameter set.
class RunConfig {
 public:
  RunConfig();  // toy profile

  static RunConfig load(const std::string& path);
  static RunConfig from_text(const std::string& text);

  void set(const std::string& key, const std::string& value);  // throws on unknown key
  void apply_profile(const std::string& name);

  const std::string& get(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  std::string dump() const;  // canonical, schema order
  uint64_t hash() const;

  // typed views over the document
  CorpusSpec corpus_spec() const;
  ModelConfig model_config() const;
  AdapterSpec adapter_spec(const std::vector<int>& encoder_skip = {}) const;
  TrainConfig train_config() const;
  TrainConfig pretrain_config() const;  // train_config with the pretrain.* overrides
  TrainConfig adapt_config() const;     // train_config with the adapt.* overrides
  FreezePlan freeze_plan() const;

  // speech pair requests: "st:a-x:200,asr:b-b:1000" -> (key, train size)
  std::vector<std::pair<PairKey, int>> speech_pairs() const;
  // MT pretraining pairs; "all" = every ordered pair plus same-language copies
  std::vector<PairKey> mt_pairs() const;
  std::vector<PairKey> train_pairs() const;

  static std::string schema_help();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace pmst

#endif
