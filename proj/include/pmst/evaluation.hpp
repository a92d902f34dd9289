#ifndef PMST_EVALUATION_HPP
#define PMST_EVALUATION_HPP

#include <string>
#include <vector>

#include "pmst/vocab.hpp"

namespace pmst {

// Corpus BLEU over token-id sequences: modified n-gram precisions (n=1..4),
// exponential smoothing for zero match counts, brevity penalty
// exp(1 - ref_len/hyp_len) when the hypothesis side is shorter. Orders with
// no n-grams at all (every sentence shorter than n) are dropped from the
// geometric mean so short identical corpora still score 100.
double bleu(const std::vector<std::vector<int>>& hypotheses,
            const std::vector<std::vector<int>>& references);

// Percentage of hypotheses whose content tokens fall majority (> 50%) in the
// expected language's range. Empty hypotheses count as incorrect.
double lang_id_rate(const std::vector<std::vector<int>>& hypotheses,
                    const std::string& expected_lang, const Vocab& vocab);

// Percentage of content tokens that belong to the expected language
// (the script-ratio analog).
double lang_token_rate(const std::vector<std::vector<int>>& hypotheses,
                       const std::string& expected_lang, const Vocab& vocab);

struct PairResult {
  std::string pair;
  double bleu = 0.0;
  double lang_id = 0.0;
  double lang_tokens = 0.0;
  size_t sentences = 0;
};

struct EvalReport {
  std::vector<PairResult> pairs;
  int64_t total_params = 0;
  int64_t trained_params = 0;
  double relative_speed = 0.0;  // baseline time / this time, 0 if unmeasured

  std::string to_table() const;
  std::string to_records() const;  // line-delimited key=value records
};

}  // namespace pmst

#endif
