#ifndef PMST_INFERENCE_HPP
#define PMST_INFERENCE_HPP

#include <span>
#include <string>
#include <vector>

#include "pmst/corpus.hpp"
#include "pmst/model.hpp"

namespace pmst {

struct Hypothesis {
  std::vector<int> tokens;  // starts with the target-language tag, ends with eos
  double logprob = 0.0;
  double score = 0.0;  // logprob / length
  bool forced = false; // closed at max_len without a natural eos
};

struct DecodeOptions {
  int beam = 5;
  int max_len = 64;  // generation steps after the target tag (eos included)
  AdapterToggles toggles;
  std::string tgt_lang_override;  // empty: use the sample's target language
  int n_best = 1;
};

// Beam search with per-step ensemble scoring (arithmetic mean of member
// log-probs, order-independent summation). Returns the completed hypothesis
// with the highest length-normalized score.
Hypothesis beam_search(std::span<Model* const> models, const SourceInput& input,
                       const DecodeOptions& opts,
                       std::vector<Hypothesis>* n_best_out = nullptr);

SourceInput sample_input(const Sample& s, const DecodeOptions& opts);

Hypothesis decode_sample(std::span<Model* const> models, const Sample& s,
                         const DecodeOptions& opts);

// Decodes every sample; sentences fan out over `threads` workers (results
// are positionally stable, so thread count never changes the output).
std::vector<Hypothesis> decode_corpus(std::span<Model* const> models, const Corpus& corpus,
                                      const DecodeOptions& opts, int threads = 1);

// hypothesis tokens minus tags/specials
std::vector<int> content_tokens(const std::vector<int>& tokens, const Vocab& vocab);

// speech -> pivot text (ST path), then pivot -> final text with the MT model,
// adapters disabled during the MT stage
Hypothesis cascade_translate(Model& st_model, Model& mt_model, const SourceInput& speech,
                             const std::string& pivot_lang, const std::string& final_lang,
                             const DecodeOptions& opts);

int default_threads();

}  // namespace pmst

#endif
