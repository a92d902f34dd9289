#ifndef PMST_CORPUS_HPP
#define PMST_CORPUS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pmst/rng.hpp"
#include "pmst/tensor.hpp"
#include "pmst/vocab.hpp"

namespace pmst {

enum class Task { kAsr, kSt, kMt };

std::string task_name(Task t);
Task task_from_name(const std::string& s);

// "st:a-x" <-> (task, src, tgt)
struct PairKey {
  Task task;
  std::string src, tgt;
  std::string str() const;
  static PairKey parse(const std::string& s);
  bool operator<(const PairKey& o) const { return str() < o.str(); }
  bool operator==(const PairKey& o) const = default;
};

struct Sample {
  std::string utterance_id;
  Task task = Task::kMt;
  std::string src_lang, tgt_lang;
  std::vector<int> src_tokens;  // text payload (MT)
  Tensor features;              // speech payload (ASR/ST), frames x feature_dim
  std::vector<int> tgt_tokens;

  bool is_speech() const { return task != Task::kMt; }
  int64_t source_len() const {
    return is_speech() ? features.rows() : static_cast<int64_t>(src_tokens.size());
  }
  PairKey pair() const { return {task, src_lang, tgt_lang}; }
};

struct Corpus {
  std::vector<Sample> samples;
  size_t size() const { return samples.size(); }
};

// Controls the synthetic task family. Latent concept sequences are rendered
// per language through fixed permutations; speech features are per-token
// embedding vectors repeated `ratio` times with additive Gaussian noise.
// Renderer tables depend on language names and feature_layer only, never on
// the corpus seed, so independently generated corpora share one feature
// space.
struct CorpusSpec {
  std::vector<std::string> languages;
  int tokens_per_lang = 100;
  int feature_dim = 16;
  double noise = 0.1;
  int ratio = 12;  // feature frames per source token
  int len_min = 3;
  int len_max = 10;
  int feature_layer = 8;  // selects a renderer variant

  Vocab vocab() const { return Vocab(languages, tokens_per_lang); }
};

// per-language invertible rendering of latent concepts
int render_concept(const CorpusSpec& spec, const std::string& lang, int concept_id);
int invert_token(const CorpusSpec& spec, const std::string& lang, int token);
std::vector<int> render(const CorpusSpec& spec, const std::string& lang,
                        const std::vector<int>& concepts);

// the fixed embedding the speech renderer assigns to a content token
std::vector<double> token_feature(const CorpusSpec& spec, int token);

struct GenRequest {
  PairKey pair;
  int count = 0;
  std::string id_prefix;  // e.g. "train" / "valid" / "test"
};

Corpus generate_corpus(const CorpusSpec& spec, const std::vector<GenRequest>& requests,
                       uint64_t seed);

// --- language-pair temperature sampling -------------------------------------

struct PairStats {
  // insertion-ordered so sampling is reproducible
  std::vector<std::pair<std::string, int64_t>> counts;
  void add(const std::string& pair_id, int64_t n);
};

std::vector<double> pair_probabilities(const PairStats& stats, double temperature);
// draws pair index k with probability u_k^(1/T) / sum u_i^(1/T)
int temperature_sample(const PairStats& stats, double temperature, Rng& rng);

// --- batching ----------------------------------------------------------------

struct Batch {
  std::vector<const Sample*> samples;
  int64_t source_len_sum = 0;
};

// Heterogeneous batches: pair chosen per sample by temperature sampling,
// samples drawn uniformly with replacement within the pair. Samples longer
// than the cap are dropped up front with a warning.
class BatchStream {
 public:
  BatchStream(const Corpus& corpus, double temperature, int64_t max_source_features,
              uint64_t seed);
  Batch next();
  const std::vector<std::string>& warnings() const { return warnings_; }
  const PairStats& stats() const { return stats_; }

 private:
  std::vector<std::vector<const Sample*>> pools_;
  PairStats stats_;
  double temperature_;
  int64_t cap_;
  Rng rng_;
  const Sample* pending_ = nullptr;
  std::vector<std::string> warnings_;
};

// --- filters -----------------------------------------------------------------

struct ContaminationReport {
  size_t removed = 0;
  size_t train_size = 0;
  double rate() const { return train_size ? static_cast<double>(removed) / train_size : 0.0; }
};

Corpus filter_contamination(const Corpus& train, const std::vector<const Corpus*>& held,
                            ContaminationReport* report = nullptr);

// --- serialization -----------------------------------------------------------

// One line per sample; speech feature matrices go to "<path>.feats" in the
// tensor container format, keyed by utterance id.
void save_corpus(const Corpus& corpus, const CorpusSpec& spec, const std::string& path);
std::pair<Corpus, CorpusSpec> load_corpus(const std::string& path);

}  // namespace pmst

#endif
