#include "pmst/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <thread>

namespace pmst {

int default_threads() {
  if (const char* env = std::getenv("PMST_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

std::vector<int> content_tokens(const std::vector<int>& tokens, const Vocab& vocab) {
  std::vector<int> out;
  for (int t : tokens)
    if (vocab.is_content(t)) out.push_back(t);
  return out;
}

namespace {

std::vector<double> log_softmax_row(const Tensor& logits, int64_t row) {
  int64_t v = logits.cols();
  const double* r = logits.data.data() + row * v;
  double mx = *std::max_element(r, r + v);
  double sum = 0.0;
  for (int64_t j = 0; j < v; ++j) sum += std::exp(r[j] - mx);
  double lse = mx + std::log(sum);
  std::vector<double> out(v);
  for (int64_t j = 0; j < v; ++j) out[j] = r[j] - lse;
  return out;
}

// summation that does not depend on member order
double stable_mean(std::vector<double>& vals) {
  std::sort(vals.begin(), vals.end());
  double s = 0.0;
  for (double v : vals) s += v;
  return s / static_cast<double>(vals.size());
}

struct Beam {
  std::vector<int> tokens;
  double logprob = 0.0;
};

}  // namespace

Hypothesis beam_search(std::span<Model* const> models, const SourceInput& input,
                       const DecodeOptions& opts, std::vector<Hypothesis>* n_best_out) {
  PMST_CHECK(!models.empty(), "beam search: no models");
  PMST_CHECK(opts.beam >= 1, "beam search: beam must be >= 1");
  PMST_CHECK(opts.max_len >= 1, "beam search: max_len must be >= 1");
  for (size_t i = 1; i < models.size(); ++i)
    PMST_CHECK(models[i]->vocab == models[0]->vocab,
               "beam search: ensemble members must share a vocabulary");

  const Vocab& vocab = models[0]->vocab;
  int64_t v = vocab.size();
  int tag = vocab.lang_tag(input.tgt_lang);

  // one graph per member, encoder evaluated once, decoder re-run per step
  std::vector<std::unique_ptr<Graph>> graphs;
  std::vector<std::unique_ptr<GraphCtx>> ctxs;
  std::vector<NodeId> enc_outs;
  for (Model* m : models) {
    graphs.push_back(std::make_unique<Graph>());
    ctxs.push_back(std::make_unique<GraphCtx>(GraphCtx{*graphs.back(), nullptr, {}}));
    enc_outs.push_back(m->encode(*ctxs.back(), input, opts.toggles));
  }

  std::vector<Beam> live{{{tag}, 0.0}};
  std::vector<Hypothesis> completed;

  auto close = [&](const Beam& b, double eos_lp, bool forced_close) {
    Hypothesis h;
    h.tokens = b.tokens;
    h.tokens.push_back(Vocab::kEos);
    h.logprob = b.logprob + eos_lp;
    h.score = h.logprob / static_cast<double>(h.tokens.size());
    h.forced = forced_close;
    completed.push_back(std::move(h));
  };

  for (int step = 1; step <= opts.max_len && !live.empty(); ++step) {
    // per-live-hypothesis ensemble log-probs over the vocabulary
    std::vector<std::vector<double>> next_lp(live.size());
    for (size_t bi = 0; bi < live.size(); ++bi) {
      std::vector<std::vector<double>> member_lp;
      for (size_t mi = 0; mi < models.size(); ++mi) {
        NodeId logits =
            models[mi]->decode(*ctxs[mi], enc_outs[mi], live[bi].tokens, opts.toggles);
        member_lp.push_back(
            log_softmax_row(graphs[mi]->value(logits), graphs[mi]->value(logits).rows() - 1));
      }
      next_lp[bi].resize(v);
      std::vector<double> col(models.size());
      for (int64_t t = 0; t < v; ++t) {
        for (size_t mi = 0; mi < models.size(); ++mi) col[mi] = member_lp[mi][t];
        next_lp[bi][t] = stable_mean(col);
      }
    }

    if (step == opts.max_len) {
      for (size_t bi = 0; bi < live.size(); ++bi)
        close(live[bi], next_lp[bi][Vocab::kEos], true);
      live.clear();
      break;
    }

    struct Cand {
      size_t beam_idx;
      int token;
      double logprob;
    };
    std::vector<Cand> cands;
    cands.reserve(live.size() * static_cast<size_t>(v));
    for (size_t bi = 0; bi < live.size(); ++bi)
      for (int64_t t = 0; t < v; ++t) {
        if (t == Vocab::kPad || t == Vocab::kBos || t == Vocab::kUnk) continue;
        cands.push_back({bi, static_cast<int>(t), live[bi].logprob + next_lp[bi][t]});
      }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.token != b.token) return a.token < b.token;
      return a.beam_idx < b.beam_idx;
    });

    // an eos expansion finishes its hypothesis and gives up the slot, so
    // beam=1 reduces to plain greedy decoding
    std::vector<Beam> next_live;
    size_t budget = std::min(cands.size(), static_cast<size_t>(opts.beam));
    for (size_t ci = 0; ci < budget; ++ci) {
      const Cand& c = cands[ci];
      if (c.token == Vocab::kEos) {
        close(live[c.beam_idx], next_lp[c.beam_idx][Vocab::kEos], false);
      } else {
        Beam b = live[c.beam_idx];
        b.tokens.push_back(c.token);
        b.logprob = c.logprob;
        next_live.push_back(std::move(b));
      }
    }
    live = std::move(next_live);
  }

  PMST_CHECK(!completed.empty(), "beam search: no completed hypothesis");
  std::sort(completed.begin(), completed.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  });
  if (n_best_out) {
    n_best_out->assign(completed.begin(),
                       completed.begin() + std::min<size_t>(completed.size(), opts.n_best));
  }
  return completed.front();
}

SourceInput sample_input(const Sample& s, const DecodeOptions& opts) {
  SourceInput in;
  in.route = s.is_speech() ? Route::kSpeech : Route::kText;
  if (s.is_speech())
    in.features = &s.features;
  else
    in.tokens = s.src_tokens;
  in.src_lang = s.src_lang;
  in.tgt_lang = opts.tgt_lang_override.empty() ? s.tgt_lang : opts.tgt_lang_override;
  return in;
}

Hypothesis decode_sample(std::span<Model* const> models, const Sample& s,
                         const DecodeOptions& opts) {
  SourceInput in = sample_input(s, opts);
  return beam_search(models, in, opts);
}

std::vector<Hypothesis> decode_corpus(std::span<Model* const> models, const Corpus& corpus,
                                      const DecodeOptions& opts, int threads) {
  std::vector<Hypothesis> out(corpus.samples.size());
  if (threads <= 1) {
    for (size_t i = 0; i < corpus.samples.size(); ++i)
      out[i] = decode_sample(models, corpus.samples[i], opts);
    return out;
  }
  std::atomic<size_t> cursor{0};
  auto worker = [&]() {
    while (true) {
      size_t i = cursor.fetch_add(1);
      if (i >= corpus.samples.size()) return;
      out[i] = decode_sample(models, corpus.samples[i], opts);
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return out;
}

Hypothesis cascade_translate(Model& st_model, Model& mt_model, const SourceInput& speech,
                             const std::string& pivot_lang, const std::string& final_lang,
                             const DecodeOptions& opts) {
  PMST_CHECK(st_model.vocab.has_language(pivot_lang), "unknown language tag: " + pivot_lang);
  PMST_CHECK(mt_model.vocab.has_language(final_lang), "unknown language tag: " + final_lang);

  SourceInput stage1 = speech;
  stage1.tgt_lang = pivot_lang;
  Model* st = &st_model;
  Hypothesis pivot;
  try {
    pivot = beam_search({&st, 1}, stage1, opts);
  } catch (const Error& e) {
    throw Error(std::string("cascade[st]: ") + e.what());
  }
  std::vector<int> pivot_text = content_tokens(pivot.tokens, st_model.vocab);
  if (pivot_text.empty()) throw Error("cascade[st]: empty intermediate translation");

  SourceInput stage2;
  stage2.route = Route::kText;
  stage2.tokens = pivot_text;
  stage2.src_lang = pivot_lang;
  stage2.tgt_lang = final_lang;
  DecodeOptions mt_opts = opts;
  mt_opts.toggles = {false, false};  // adapters disabled during MT
  mt_opts.tgt_lang_override.clear();
  Model* mt = &mt_model;
  try {
    return beam_search({&mt, 1}, stage2, mt_opts);
  } catch (const Error& e) {
    throw Error(std::string("cascade[mt]: ") + e.what());
  }
}

}  // namespace pmst
