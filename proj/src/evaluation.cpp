#include "pmst/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace pmst {

namespace {

using Ngram = std::vector<int>;

void count_ngrams(const std::vector<int>& seq, int n, std::map<Ngram, int64_t>& out) {
  if (static_cast<int>(seq.size()) < n) return;
  for (size_t i = 0; i + n <= seq.size(); ++i) {
    Ngram g(seq.begin() + i, seq.begin() + i + n);
    ++out[g];
  }
}

}  // namespace

double bleu(const std::vector<std::vector<int>>& hypotheses,
            const std::vector<std::vector<int>>& references) {
  PMST_CHECK(hypotheses.size() == references.size(), "bleu: list length mismatch");
  PMST_CHECK(!hypotheses.empty(), "bleu: empty corpus");

  constexpr int kMaxOrder = 4;
  int64_t match[kMaxOrder] = {0, 0, 0, 0};
  int64_t total[kMaxOrder] = {0, 0, 0, 0};
  int64_t hyp_len = 0, ref_len = 0;

  for (size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& hyp = hypotheses[i];
    const auto& ref = references[i];
    hyp_len += static_cast<int64_t>(hyp.size());
    ref_len += static_cast<int64_t>(ref.size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      std::map<Ngram, int64_t> hyp_counts, ref_counts;
      count_ngrams(hyp, n, hyp_counts);
      count_ngrams(ref, n, ref_counts);
      for (const auto& [g, c] : hyp_counts) {
        total[n - 1] += c;
        auto it = ref_counts.find(g);
        if (it != ref_counts.end()) match[n - 1] += std::min(c, it->second);
      }
    }
  }

  if (hyp_len == 0) return 0.0;

  double log_sum = 0.0;
  int orders = 0;
  double smooth_inv = 1.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (total[n] == 0) continue;  // corpus has no n-grams of this order
    double p;
    if (match[n] == 0) {
      smooth_inv *= 2.0;
      p = 1.0 / (smooth_inv * static_cast<double>(total[n]));
    } else {
      p = static_cast<double>(match[n]) / static_cast<double>(total[n]);
    }
    log_sum += std::log(p);
    ++orders;
  }
  if (orders == 0) return 0.0;

  double bp = 1.0;
  if (hyp_len < ref_len)
    bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(orders));
}

double lang_id_rate(const std::vector<std::vector<int>>& hypotheses,
                    const std::string& expected_lang, const Vocab& vocab) {
  PMST_CHECK(!hypotheses.empty(), "lang_id_rate: empty corpus");
  int expected = vocab.lang_index(expected_lang);
  size_t correct = 0;
  for (const auto& hyp : hypotheses) {
    std::vector<int64_t> per_lang(vocab.num_languages(), 0);
    int64_t content = 0;
    for (int t : hyp) {
      int li = vocab.classify(t);
      if (li < 0) continue;
      ++per_lang[li];
      ++content;
    }
    if (content == 0) continue;  // empty hypothesis counts as incorrect
    if (2 * per_lang[expected] > content) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(hypotheses.size());
}

double lang_token_rate(const std::vector<std::vector<int>>& hypotheses,
                       const std::string& expected_lang, const Vocab& vocab) {
  int expected = vocab.lang_index(expected_lang);
  int64_t content = 0, in_lang = 0;
  for (const auto& hyp : hypotheses)
    for (int t : hyp) {
      int li = vocab.classify(t);
      if (li < 0) continue;
      ++content;
      if (li == expected) ++in_lang;
    }
  if (content == 0) return 0.0;
  return 100.0 * static_cast<double>(in_lang) / static_cast<double>(content);
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s %10s %10s %10s %10s\n", "pair", "BLEU",
                "lang-id%", "lang-tok%", "sents");
  out << line;
  for (const auto& p : pairs) {
    std::snprintf(line, sizeof(line), "%-16s %10.2f %10.1f %10.1f %10zu\n", p.pair.c_str(),
                  p.bleu, p.lang_id, p.lang_tokens, p.sentences);
    out << line;
  }
  std::snprintf(line, sizeof(line), "params total=%lld trained=%lld",
                static_cast<long long>(total_params), static_cast<long long>(trained_params));
  out << line;
  if (relative_speed > 0.0) {
    std::snprintf(line, sizeof(line), " rel-speed=%.2fx", relative_speed);
    out << line;
  }
  out << "\n";
  return out.str();
}

std::string EvalReport::to_records() const {
  std::ostringstream out;
  for (const auto& p : pairs) {
    out << "pair=" << p.pair << "\tbleu=" << p.bleu << "\tlang_id=" << p.lang_id
        << "\tlang_tokens=" << p.lang_tokens << "\tsentences=" << p.sentences << "\n";
  }
  out << "params\ttotal=" << total_params << "\ttrained=" << trained_params;
  if (relative_speed > 0.0) out << "\trel_speed=" << relative_speed;
  out << "\n";
  return out.str();
}

}  // namespace pmst
