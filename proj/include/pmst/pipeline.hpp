#ifndef PMST_PIPELINE_HPP
#define PMST_PIPELINE_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmst/config.hpp"
#include "pmst/corpus.hpp"
#include "pmst/evaluation.hpp"
#include "pmst/inference.hpp"
#include "pmst/model.hpp"
#include "pmst/training.hpp"

namespace pmst::pipeline {

std::string pair_path(const std::string& dir, const PairKey& key, const std::string& split);

// writes per-pair corpus files (train/valid per MT pair; train/valid/test per
// speech pair) plus a manifest
void gen_data(const RunConfig& cfg, const std::string& out_dir, uint64_t seed);

void write_manifest(const std::string& path, const RunConfig& cfg, uint64_t seed,
                    const std::string& command);

// loads the named splits for a pair from a gen-data directory
Corpus load_split(const std::string& data_dir, const PairKey& key, const std::string& split);

// copies embed./enc./dec. parameters from a pretrained backbone
void init_from_backbone(Model& st_model, const Model& backbone);

struct TrainedModel {
  Model model;  // restored to the best checkpoint
  TrainResult result;
  std::set<std::string> trainable;
};

// full-plan text-to-text pretraining over the configured MT pairs
TrainedModel pretrain_mt(const RunConfig& cfg, const std::string& data_dir, uint64_t seed);

// speech-translation training from a pretrained backbone under the
// configured freeze plan
TrainedModel train_st(const RunConfig& cfg, const std::string& data_dir,
                      const Model& backbone, uint64_t seed);

TrainedModel adapt(const RunConfig& cfg, const std::string& data_dir, Model base,
                   const PairKey& new_pair, AdaptStrategy strategy, uint64_t seed);

// Decodes a corpus, translating between the model id space and the base id
// space when the model's vocabulary is filtered. Output ids are always in the
// base space.
struct DecodeRecord {
  std::string utterance_id;
  std::vector<int> tokens;  // content tokens, base id space
  double score = 0.0;
  bool forced = false;
};
std::vector<DecodeRecord> decode_records(std::span<Model* const> models, const Corpus& corpus,
                                         const DecodeOptions& opts, int threads = 1);
void write_records(const std::vector<DecodeRecord>& records, const std::string& path);
std::vector<DecodeRecord> read_records(const std::string& path);

// per-pair BLEU / language-id metrics against the corpus targets
EvalReport evaluate(std::span<Model* const> models, const Corpus& corpus,
                    const DecodeOptions& opts, int threads = 1);

// --- ablation harness ---------------------------------------------------------

struct AblationAxis {
  std::string key;
  std::vector<std::string> values;
};

struct AblationRow {
  std::vector<std::pair<std::string, std::string>> cell;
  bool ok = false;
  std::string error;
  std::vector<PairResult> pairs;
  double mean_bleu = 0.0;
  int64_t total_params = 0;
  int64_t trained_params = 0;
  double seconds_per_utt = 0.0;
  double relative_speed = 0.0;  // vs the conv_layers=1 cell (or the first cell)
  std::string label() const;
};

// Trains and evaluates every cell of the grid with shared seeds; pretrained
// backbones are cached per distinct model/corpus configuration. A failing
// cell is recorded and the grid continues.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<AblationAxis>& grid,
                                      const std::string& data_dir,
                                      std::span<const uint64_t> seeds);

std::string ablation_table(const std::vector<AblationRow>& rows);
std::string ablation_records(const std::vector<AblationRow>& rows);

}  // namespace pmst::pipeline

#endif
