#include "pmst/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "pmst/evaluation.hpp"
#include "pmst/inference.hpp"

namespace pmst {

double lr_at(int64_t step, const TrainConfig& cfg) {
  PMST_CHECK(step >= 0, "lr_at: negative step");
  PMST_CHECK(cfg.warmup >= 1, "lr_at: warmup must be >= 1");
  if (step <= cfg.warmup)
    return cfg.lr_init + (cfg.lr_max - cfg.lr_init) * static_cast<double>(step) /
                             static_cast<double>(cfg.warmup);
  return cfg.lr_max * std::sqrt(static_cast<double>(cfg.warmup) / static_cast<double>(step));
}

bool EarlyStopper::feed(double metric) {
  ++seen_;
  if (metric > best_ || best_index_ < 0) {
    best_ = metric;
    best_index_ = seen_ - 1;
    counter_ = 0;
  } else {
    ++counter_;
  }
  return counter_ >= patience_;
}

std::map<std::string, Tensor> average_checkpoints(
    const std::vector<std::map<std::string, Tensor>>& checkpoints) {
  PMST_CHECK(!checkpoints.empty(), "average: no checkpoints");
  std::map<std::string, Tensor> out = checkpoints[0];
  for (size_t i = 1; i < checkpoints.size(); ++i) {
    PMST_CHECK(checkpoints[i].size() == out.size(), "average: mismatched parameter names");
    for (auto& [name, acc] : out) {
      auto it = checkpoints[i].find(name);
      PMST_CHECK(it != checkpoints[i].end(), "average: missing tensor " + name);
      PMST_CHECK(it->second.shape == acc.shape, "average: shape mismatch for " + name);
      for (size_t j = 0; j < acc.data.size(); ++j) acc.data[j] += it->second.data[j];
    }
  }
  double inv = 1.0 / static_cast<double>(checkpoints.size());
  for (auto& [name, acc] : out)
    for (double& v : acc.data) v *= inv;
  return out;
}

std::string format_metric_log(const std::vector<ValidationRecord>& log) {
  std::ostringstream out;
  for (const auto& r : log) {
    out << "step=" << r.step;
    for (const auto& [pair, score] : r.pair_bleu) out << "\t" << pair << "=" << score;
    out << "\tmean=" << r.mean << "\tlr=" << r.lr << "\tpatience=" << r.patience_counter
        << "\n";
  }
  return out.str();
}

std::string metric_log_digest(const std::vector<ValidationRecord>& log) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(format_metric_log(log))));
  return buf;
}

namespace {

// Adam with moments kept only for the trainable set; absent gradients are
// treated as zero so mixed-route batches behave like standard data-parallel
// training.
class Adam {
 public:
  Adam(Model& model, const std::set<std::string>& trainable, const TrainConfig& cfg)
      : model_(model), cfg_(cfg) {
    for (const auto& name : trainable) {
      auto it = model.params.find(name);
      PMST_CHECK(it != model.params.end(), "optimizer: unknown parameter " + name);
      slots_.push_back({&it->second, Tensor(it->second.value.shape),
                        Tensor(it->second.value.shape)});
    }
  }

  void step(double lr, double grad_scale) {
    ++t_;
    if (cfg_.grad_clip > 0.0) {
      double sq = 0.0;
      for (const auto& s : slots_) {
        if (!s.param->has_grad) continue;
        for (double g : s.param->grad.data) sq += (g * grad_scale) * (g * grad_scale);
      }
      double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) grad_scale *= cfg_.grad_clip / norm;
    }
    double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
      size_t n = s.param->value.data.size();
      const bool has = s.param->has_grad;
      for (size_t i = 0; i < n; ++i) {
        double g = has ? s.param->grad.data[i] * grad_scale : 0.0;
        if (cfg_.weight_decay > 0.0) g += cfg_.weight_decay * s.param->value.data[i];
        s.m.data[i] = cfg_.adam_beta1 * s.m.data[i] + (1.0 - cfg_.adam_beta1) * g;
        s.v.data[i] = cfg_.adam_beta2 * s.v.data[i] + (1.0 - cfg_.adam_beta2) * g * g;
        double mhat = s.m.data[i] / bc1;
        double vhat = s.v.data[i] / bc2;
        s.param->value.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
      }
    }
  }

  void zero_grads() {
    for (auto& s : slots_) s.param->zero_grad();
  }

 private:
  struct Slot {
    Parameter* param;
    Tensor m, v;
  };
  Model& model_;
  const TrainConfig& cfg_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

double validate_pair(Model& model, const PairData& pd, const TrainConfig& cfg) {
  DecodeOptions opts;
  opts.beam = cfg.valid_beam;
  opts.max_len = cfg.decode_max_len;
  Model* mp = &model;
  auto hyps = decode_corpus({&mp, 1}, *pd.valid, opts, cfg.threads);
  std::vector<std::vector<int>> hyp_tokens, ref_tokens;
  for (size_t i = 0; i < hyps.size(); ++i) {
    hyp_tokens.push_back(content_tokens(hyps[i].tokens, model.vocab));
    ref_tokens.push_back(pd.valid->samples[i].tgt_tokens);
  }
  return bleu(hyp_tokens, ref_tokens);
}

}  // namespace

// loss summed over target positions; the update divides by the token total
std::pair<double, int64_t> forward_backward(Model& model, const Sample& s,
                                            double label_smoothing, DropoutCtx* dropout) {
  Graph g;
  GraphCtx ctx{g, dropout, {}};
  SourceInput in;
  in.route = s.is_speech() ? Route::kSpeech : Route::kText;
  if (s.is_speech())
    in.features = &s.features;
  else
    in.tokens = s.src_tokens;
  in.src_lang = s.src_lang;
  in.tgt_lang = s.tgt_lang;

  std::vector<int> prefix = model.decoder_input(s.tgt_lang, s.tgt_tokens);
  std::vector<int> labels = s.tgt_tokens;
  labels.push_back(Vocab::kEos);

  NodeId logits = model.forward(ctx, in, prefix, AdapterToggles{});
  NodeId loss = g.cross_entropy_label_smoothed(logits, labels, label_smoothing);
  double value = g.value(loss).data[0];
  if (!std::isfinite(value))
    throw Error("training aborted: non-finite loss on sample " + s.utterance_id);
  g.backward(loss);
  return {value, static_cast<int64_t>(labels.size())};
}

TrainResult train(Model& model, const std::set<std::string>& trainable,
                  const std::vector<PairData>& pairs, const TrainConfig& cfg, uint64_t seed) {
  PMST_CHECK(!trainable.empty(), "train: empty trainable set");
  PMST_CHECK(!pairs.empty(), "train: no training pairs");
  PMST_CHECK(cfg.patience >= 1 && cfg.avg_last >= 1 && cfg.update_freq >= 1,
             "train: bad config");

  Corpus merged;
  for (const auto& pd : pairs) {
    PMST_CHECK(pd.train && !pd.train->samples.empty(), "train: missing train split");
    for (const Sample& s : pd.train->samples) merged.samples.push_back(s);
  }

  std::vector<const PairData*> stop_pairs;
  for (const auto& want : cfg.early_stop_pairs) {
    const PairData* found = nullptr;
    for (const auto& pd : pairs)
      if (pd.key.str() == want) found = &pd;
    PMST_CHECK(found, "train: early-stop pair not in training set: " + want);
    stop_pairs.push_back(found);
  }
  if (stop_pairs.empty())
    for (const auto& pd : pairs) stop_pairs.push_back(&pd);
  for (const PairData* pd : stop_pairs)
    PMST_CHECK(pd->valid && !pd->valid->samples.empty(),
               "train: early-stop pair lacks a validation split: " + pd->key.str());

  BatchStream stream(merged, cfg.pair_temperature, cfg.batch_cap, seed ^ 0x5bd1e995u);
  Rng dropout_rng(seed ^ 0x2545f4914f6cdd1dull);
  DropoutCtx dropout{&dropout_rng, model.config.dropout, model.config.attention_dropout};
  Adam adam(model, trainable, cfg);
  EarlyStopper stopper(cfg.patience);

  TrainResult result;
  std::deque<std::map<std::string, Tensor>> ring;
  bool stop = false;

  for (int64_t update = 1; update <= cfg.max_updates && !stop; ++update) {
    adam.zero_grads();
    int64_t tokens = 0;
    for (int acc = 0; acc < cfg.update_freq; ++acc) {
      Batch batch = stream.next();
      for (const Sample* s : batch.samples)
        tokens += forward_backward(model, *s, cfg.label_smoothing, &dropout).second;
    }
    adam.step(lr_at(update, cfg), 1.0 / static_cast<double>(tokens));
    model.step = update;

    if (update % cfg.validate_every == 0) {
      ValidationRecord rec;
      rec.step = update;
      double sum = 0.0;
      for (const PairData* pd : stop_pairs) {
        double score = validate_pair(model, *pd, cfg);
        rec.pair_bleu.emplace_back(pd->key.str(), score);
        sum += score;
      }
      rec.mean = sum / static_cast<double>(stop_pairs.size());
      rec.lr = lr_at(update, cfg);

      ring.push_back(model.snapshot());
      while (ring.size() > static_cast<size_t>(cfg.avg_last)) ring.pop_front();

      bool improved = rec.mean > result.best_metric || result.log.empty();
      stop = stopper.feed(rec.mean);
      if (improved) {
        result.best = ring.back();
        result.best_metric = rec.mean;
        result.best_step = update;
      }
      rec.patience_counter = stopper.counter();
      result.log.push_back(std::move(rec));
      if (stop) result.early_stopped = true;
    }
    result.stopped_at = update;
  }

  if (ring.empty()) ring.push_back(model.snapshot());
  if (result.best.empty()) {
    result.best = ring.back();
    result.best_step = result.stopped_at;
  }
  std::vector<std::map<std::string, Tensor>> ring_v(ring.begin(), ring.end());
  result.averaged = cfg.checkpoint_averaging ? average_checkpoints(ring_v) : result.best;
  return result;
}

AdaptStrategy adapt_strategy_from_name(const std::string& s) {
  if (s == "adapters64_all") return AdaptStrategy::kAdapters64All;
  if (s == "adapters256_all") return AdaptStrategy::kAdapters256All;
  if (s == "adapters256_bottom") return AdaptStrategy::kAdapters256Bottom;
  if (s == "conv_adapters256_bottom") return AdaptStrategy::kConvAdapters256Bottom;
  throw Error("unknown adaptation strategy: " + s);
}

std::string adapt_strategy_name(AdaptStrategy s) {
  switch (s) {
    case AdaptStrategy::kAdapters64All: return "adapters64_all";
    case AdaptStrategy::kAdapters256All: return "adapters256_all";
    case AdaptStrategy::kAdapters256Bottom: return "adapters256_bottom";
    case AdaptStrategy::kConvAdapters256Bottom: return "conv_adapters256_bottom";
  }
  return "?";
}

AdaptResult incremental_adapt(Model& base, const PairData& new_pair, AdaptStrategy strategy,
                              TrainConfig cfg, uint64_t seed) {
  int dim = (strategy == AdaptStrategy::kAdapters64All) ? 64 : 256;
  bool train_all = strategy == AdaptStrategy::kAdapters64All ||
                   strategy == AdaptStrategy::kAdapters256All;
  bool train_conv = strategy == AdaptStrategy::kConvAdapters256Bottom;

  // new adapters go into the bottom encoder layers that the original training
  // fine-tuned (they carry no adapters of their own)
  PMST_CHECK(base.ft_bottom_k >= 1,
             "incremental adaptation expects a model with fine-tuned bottom layers");
  std::vector<int> layers;
  for (int i = 0; i < base.ft_bottom_k; ++i) layers.push_back(i);
  base.add_incremental_group(new_pair.key.src, dim, layers, seed ^ 0x7f4a7c15u);

  FreezePlan plan = FreezePlan::adapters_only(train_all, {new_pair.key.src}, train_conv);
  auto trainable = apply_freeze_plan(base, plan);

  cfg.checkpoint_averaging = false;  // disabled for incremental runs
  cfg.early_stop_pairs = {new_pair.key.str()};

  AdaptResult out{train(base, trainable, {new_pair}, cfg, seed), std::move(trainable)};
  base.restore(out.train.best);
  return out;
}

}  // namespace pmst
