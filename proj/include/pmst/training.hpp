#ifndef PMST_TRAINING_HPP
#define PMST_TRAINING_HPP

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pmst/corpus.hpp"
#include "pmst/model.hpp"

namespace pmst {

struct TrainConfig {
  int64_t max_updates = 20000;
  int update_freq = 2;
  double lr_max = 0.0005;
  double lr_init = 1e-7;
  int64_t warmup = 1000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // global norm, 0 = none
  double label_smoothing = 0.2;
  int64_t validate_every = 250;
  int patience = 5;
  int avg_last = 3;
  bool checkpoint_averaging = true;
  std::vector<std::string> early_stop_pairs;  // empty: mean over all pairs
  int64_t batch_cap = 4000;
  double pair_temperature = 3.0;
  int valid_beam = 1;
  int decode_max_len = 64;
  int threads = 1;
};

// inverse square root schedule: linear warmup from lr_init to lr_max,
// then lr_max * sqrt(warmup / step)
double lr_at(int64_t step, const TrainConfig& cfg);

// Early-stopping state machine: improvement resets the counter, stop once
// `patience` consecutive validations fail to improve the best metric.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  // returns true if training should stop after this validation
  bool feed(double metric);
  double best_metric() const { return best_; }
  int best_index() const { return best_index_; }  // 0-based validation index
  int counter() const { return counter_; }

 private:
  int patience_;
  double best_ = -1.0;
  int best_index_ = -1;
  int counter_ = 0;
  int seen_ = 0;
};

// elementwise arithmetic mean of named tensors
std::map<std::string, Tensor> average_checkpoints(
    const std::vector<std::map<std::string, Tensor>>& checkpoints);

struct PairData {
  PairKey key;
  const Corpus* train = nullptr;
  const Corpus* valid = nullptr;
};

struct ValidationRecord {
  int64_t step = 0;
  std::vector<std::pair<std::string, double>> pair_bleu;
  double mean = 0.0;
  double lr = 0.0;
  int patience_counter = 0;
};

struct TrainResult {
  std::map<std::string, Tensor> best;       // highest stopping metric, earliest step
  std::map<std::string, Tensor> averaged;   // mean of the last avg_last checkpoints
  std::vector<ValidationRecord> log;
  double best_metric = 0.0;
  int64_t best_step = 0;
  int64_t stopped_at = 0;
  bool early_stopped = false;
};

std::string format_metric_log(const std::vector<ValidationRecord>& log);
std::string metric_log_digest(const std::vector<ValidationRecord>& log);

// One teacher-forced pass for a sample: builds the graph, backprops into the
// model's gradient buffers, returns (loss summed over positions, target
// token count). Aborts on non-finite loss.
std::pair<double, int64_t> forward_backward(Model& model, const Sample& s,
                                            double label_smoothing,
                                            DropoutCtx* dropout = nullptr);

// The main loop: Adam over the trainable set only, gradient accumulation
// over update_freq batches with loss averaged per target token, periodic
// validation with early stopping, last-N checkpoint ring.
TrainResult train(Model& model, const std::set<std::string>& trainable,
                  const std::vector<PairData>& pairs, const TrainConfig& cfg, uint64_t seed);

enum class AdaptStrategy {
  kAdapters64All,
  kAdapters256All,
  kAdapters256Bottom,
  kConvAdapters256Bottom,
};

AdaptStrategy adapt_strategy_from_name(const std::string& s);
std::string adapt_strategy_name(AdaptStrategy s);

// Two-stage incremental learning: adds a language-scoped adapter group in the
// bottom (previously adapter-free) encoder layers of a trained model and
// trains only the strategy's parameter set on the new pair. Checkpoint
// averaging is disabled.
struct AdaptResult {
  TrainResult train;
  std::set<std::string> trainable;
};
AdaptResult incremental_adapt(Model& base, const PairData& new_pair, AdaptStrategy strategy,
                              TrainConfig cfg, uint64_t seed);

}  // namespace pmst

#endif
