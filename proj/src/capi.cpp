#include "pmst.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "pmst/config.hpp"
#include "pmst/corpus.hpp"
#include "pmst/pipeline.hpp"
#include "pmst/training.hpp"

using namespace pmst;

struct pmst_config {
  RunConfig cfg;
};
struct pmst_corpus {
  Corpus corpus;
  CorpusSpec spec;
};
struct pmst_model {
  Model model;
};

namespace {

thread_local std::string g_last_error;

pmst_status classify(const std::string& msg, pmst_status fallback) {
  if (msg.find("cannot open") != std::string::npos ||
      msg.find("cannot write") != std::string::npos ||
      msg.find("truncated") != std::string::npos)
    return PMST_ERR_IO;
  if (msg.find("config:") != std::string::npos ||
      msg.find("unknown") != std::string::npos)
    return PMST_ERR_INVALID;
  return fallback;
}

template <typename Fn>
pmst_status wrap(pmst_status fallback, Fn&& fn) {
  try {
    fn();
    return PMST_OK;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return classify(g_last_error, fallback);
  } catch (...) {
    g_last_error = "unknown error";
    return fallback;
  }
}

pmst_status invalid(const char* msg) {
  g_last_error = msg;
  return PMST_ERR_INVALID;
}

DecodeOptions to_options(const pmst_decode_opts* o) {
  DecodeOptions opts;
  if (!o) return opts;
  opts.beam = o->beam;
  opts.max_len = o->max_len;
  opts.toggles.encoder = o->enc_adapters != 0;
  opts.toggles.decoder = o->dec_adapters != 0;
  if (o->tgt_lang) opts.tgt_lang_override = o->tgt_lang;
  return opts;
}

int opt_threads(const pmst_decode_opts* o) {
  if (o && o->threads >= 1) return o->threads;
  return default_threads();
}

struct LoadedModels {
  std::vector<Model> storage;
  std::vector<Model*> ptrs;
};

LoadedModels load_all(const char* const* ckpts, size_t n) {
  PMST_CHECK(ckpts != nullptr && n >= 1, "need at least one checkpoint");
  LoadedModels out;
  out.storage.reserve(n);
  for (size_t i = 0; i < n; ++i) out.storage.push_back(load_model(ckpts[i]));
  for (auto& m : out.storage) out.ptrs.push_back(&m);
  return out;
}

void write_train_outputs(const std::string& out_dir, const pipeline::TrainedModel& tm,
                         const Model& averaged_src, const RunConfig& cfg, uint64_t seed,
                         const std::string& command) {
  std::filesystem::create_directories(out_dir);
  Model best = tm.model;  // already restored to best
  best.restore(tm.result.best);
  save_model(best, out_dir + "/best.ckpt", metric_log_digest(tm.result.log));
  Model avg = averaged_src;
  avg.restore(tm.result.averaged);
  save_model(avg, out_dir + "/avg.ckpt", metric_log_digest(tm.result.log));
  std::ofstream log(out_dir + "/metrics.log");
  PMST_CHECK(log.good(), "cannot write: " + out_dir + "/metrics.log");
  log << format_metric_log(tm.result.log);
  pipeline::write_manifest(out_dir + "/manifest.txt", cfg, seed, command);
}

}  // namespace

extern "C" {

const char* pmst_version(void) { return "0.1.0"; }

const char* pmst_last_error(void) { return g_last_error.c_str(); }

/* ---- config ---------------------------------------------------------------- */

pmst_status pmst_config_create(pmst_config** out) {
  if (!out) return invalid("null output pointer");
  return wrap(PMST_ERR_RUNTIME, [&] { *out = new pmst_config{RunConfig()}; });
}

pmst_status pmst_config_load(const char* path, pmst_config** out) {
  if (!path || !out) return invalid("null argument");
  return wrap(PMST_ERR_IO, [&] { *out = new pmst_config{RunConfig::load(path)}; });
}

pmst_status pmst_config_set(pmst_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return invalid("null argument");
  return wrap(PMST_ERR_INVALID, [&] { cfg->cfg.set(key, value); });
}

pmst_status pmst_config_get(const pmst_config* cfg, const char* key, char* buf, size_t cap) {
  if (!cfg || !key || !buf) return invalid("null argument");
  return wrap(PMST_ERR_INVALID, [&] {
    const std::string& v = cfg->cfg.get(key);
    PMST_CHECK(v.size() + 1 <= cap, "buffer too small");
    std::memcpy(buf, v.c_str(), v.size() + 1);
  });
}

pmst_status pmst_config_dump(const pmst_config* cfg, char* buf, size_t cap, size_t* needed) {
  if (!cfg) return invalid("null argument");
  return wrap(PMST_ERR_INVALID, [&] {
    std::string d = cfg->cfg.dump();
    if (needed) *needed = d.size() + 1;
    if (buf) {
      PMST_CHECK(d.size() + 1 <= cap, "buffer too small");
      std::memcpy(buf, d.c_str(), d.size() + 1);
    }
  });
}

pmst_status pmst_config_hash(const pmst_config* cfg, uint64_t* out) {
  if (!cfg || !out) return invalid("null argument");
  *out = cfg->cfg.hash();
  return PMST_OK;
}

void pmst_config_free(pmst_config* cfg) { delete cfg; }

/* ---- corpus ---------------------------------------------------------------- */

pmst_status pmst_corpus_load(const char* path, pmst_corpus** out) {
  if (!path || !out) return invalid("null argument");
  return wrap(PMST_ERR_IO, [&] {
    auto [corpus, spec] = load_corpus(path);
    *out = new pmst_corpus{std::move(corpus), std::move(spec)};
  });
}

pmst_status pmst_corpus_save(const pmst_corpus* corpus, const char* path) {
  if (!corpus || !path) return invalid("null argument");
  return wrap(PMST_ERR_IO, [&] { save_corpus(corpus->corpus, corpus->spec, path); });
}

size_t pmst_corpus_size(const pmst_corpus* corpus) {
  return corpus ? corpus->corpus.size() : 0;
}

pmst_status pmst_corpus_filter_contamination(const pmst_corpus* train,
                                             const pmst_corpus* const* held, size_t n_held,
                                             pmst_corpus** out, size_t* removed) {
  if (!train || !out || (n_held > 0 && !held)) return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    std::vector<const Corpus*> held_v;
    for (size_t i = 0; i < n_held; ++i) held_v.push_back(&held[i]->corpus);
    ContaminationReport report;
    Corpus filtered = filter_contamination(train->corpus, held_v, &report);
    if (removed) *removed = report.removed;
    *out = new pmst_corpus{std::move(filtered), train->spec};
  });
}

void pmst_corpus_free(pmst_corpus* corpus) { delete corpus; }

pmst_status pmst_gen_data(const pmst_config* cfg, const char* out_dir, uint64_t seed) {
  if (!cfg || !out_dir) return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] { pipeline::gen_data(cfg->cfg, out_dir, seed); });
}

/* ---- model ----------------------------------------------------------------- */

pmst_status pmst_model_load(const char* path, pmst_model** out) {
  if (!path || !out) return invalid("null argument");
  return wrap(PMST_ERR_IO, [&] { *out = new pmst_model{load_model(path)}; });
}

pmst_status pmst_model_save(const pmst_model* model, const char* path) {
  if (!model || !path) return invalid("null argument");
  return wrap(PMST_ERR_IO, [&] { save_model(model->model, path); });
}

pmst_status pmst_model_total_params(const pmst_model* model, int64_t* out) {
  if (!model || !out) return invalid("null argument");
  *out = model->model.total_params();
  return PMST_OK;
}

pmst_status pmst_model_filter_vocab(const pmst_model* model, const char* languages_csv,
                                    pmst_model** out) {
  if (!model || !languages_csv || !out) return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    std::vector<std::string> keep;
    std::string cur;
    for (const char* p = languages_csv;; ++p) {
      if (*p == ',' || *p == '\0') {
        if (!cur.empty()) keep.push_back(cur);
        cur.clear();
        if (*p == '\0') break;
      } else {
        cur += *p;
      }
    }
    Model filtered = model->model;
    filtered.apply_vocab_filter(model->model.vocab.filter(keep));
    *out = new pmst_model{std::move(filtered)};
  });
}

void pmst_model_free(pmst_model* model) { delete model; }

/* ---- training --------------------------------------------------------------- */

pmst_status pmst_pretrain_mt(const pmst_config* cfg, const char* data_dir, uint64_t seed,
                             const char* out_ckpt) {
  if (!cfg || !data_dir || !out_ckpt) return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    pipeline::TrainedModel tm = pipeline::pretrain_mt(cfg->cfg, data_dir, seed);
    save_model(tm.model, out_ckpt, metric_log_digest(tm.result.log));
  });
}

pmst_status pmst_train(const pmst_config* cfg, const char* data_dir, const char* init_ckpt,
                       uint64_t seed, const char* out_dir) {
  if (!cfg || !data_dir || !init_ckpt || !out_dir) return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    Model backbone = load_model(init_ckpt);
    pipeline::TrainedModel tm = pipeline::train_st(cfg->cfg, data_dir, backbone, seed);
    write_train_outputs(out_dir, tm, tm.model, cfg->cfg, seed, "train");
  });
}

pmst_status pmst_adapt(const pmst_config* cfg, const char* data_dir, const char* base_ckpt,
                       const char* pair, const char* strategy, uint64_t seed,
                       const char* out_dir) {
  if (!cfg || !data_dir || !base_ckpt || !pair || !strategy || !out_dir)
    return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    Model base = load_model(base_ckpt);
    pipeline::TrainedModel tm =
        pipeline::adapt(cfg->cfg, data_dir, std::move(base), PairKey::parse(pair),
                        adapt_strategy_from_name(strategy), seed);
    write_train_outputs(out_dir, tm, tm.model, cfg->cfg, seed, "adapt");
  });
}

pmst_status pmst_average(const char* const* ckpts, size_t n, const char* out_ckpt) {
  if (!ckpts || n == 0 || !out_ckpt) return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    LoadedModels models = load_all(ckpts, n);
    std::vector<std::map<std::string, Tensor>> snaps;
    for (const Model& m : models.storage) snaps.push_back(m.snapshot());
    Model out = models.storage[0];
    out.restore(average_checkpoints(snaps));
    save_model(out, out_ckpt);
  });
}

/* ---- decode / evaluate --------------------------------------------------------- */

void pmst_decode_opts_init(pmst_decode_opts* opts) {
  if (!opts) return;
  opts->beam = 5;
  opts->max_len = 64;
  opts->enc_adapters = 1;
  opts->dec_adapters = 1;
  opts->tgt_lang = nullptr;
  opts->threads = 0;
}

pmst_status pmst_decode(const char* const* ckpts, size_t n_ckpts, const char* corpus_path,
                        const pmst_decode_opts* opts, const char* out_path) {
  if (!ckpts || n_ckpts == 0 || !corpus_path || !out_path) return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    LoadedModels models = load_all(ckpts, n_ckpts);
    auto [corpus, spec] = load_corpus(corpus_path);
    auto records = pipeline::decode_records(models.ptrs, corpus, to_options(opts),
                                            opt_threads(opts));
    pipeline::write_records(records, out_path);
  });
}

pmst_status pmst_cascade(const char* st_ckpt, const char* mt_ckpt, const char* corpus_path,
                         const char* pivot_lang, const char* final_lang,
                         const pmst_decode_opts* opts, const char* out_path) {
  if (!st_ckpt || !mt_ckpt || !corpus_path || !pivot_lang || !final_lang || !out_path)
    return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    Model st = load_model(st_ckpt);
    Model mt = load_model(mt_ckpt);
    auto [corpus, spec] = load_corpus(corpus_path);
    DecodeOptions o = to_options(opts);
    std::vector<pipeline::DecodeRecord> records;
    for (const Sample& s : corpus.samples) {
      PMST_CHECK(s.is_speech(), "cascade input must be speech: " + s.utterance_id);
      SourceInput in;
      in.route = Route::kSpeech;
      in.features = &s.features;
      in.src_lang = s.src_lang;
      in.tgt_lang = pivot_lang;
      Hypothesis h = cascade_translate(st, mt, in, pivot_lang, final_lang, o);
      pipeline::DecodeRecord r;
      r.utterance_id = s.utterance_id;
      for (int t : content_tokens(h.tokens, mt.vocab)) r.tokens.push_back(mt.vocab.to_base(t));
      r.score = h.score;
      r.forced = h.forced;
      records.push_back(std::move(r));
    }
    pipeline::write_records(records, out_path);
  });
}

pmst_status pmst_evaluate(const char* const* ckpts, size_t n_ckpts, const char* corpus_path,
                          const pmst_decode_opts* opts, const char* report_path) {
  if (!ckpts || n_ckpts == 0 || !corpus_path || !report_path) return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    LoadedModels models = load_all(ckpts, n_ckpts);
    auto [corpus, spec] = load_corpus(corpus_path);
    EvalReport report =
        pipeline::evaluate(models.ptrs, corpus, to_options(opts), opt_threads(opts));
    std::ofstream out(report_path);
    PMST_CHECK(out.good(), "cannot write: " + std::string(report_path));
    out << report.to_table();
    std::ofstream rec(std::string(report_path) + ".records");
    rec << report.to_records();
  });
}

pmst_status pmst_decode_text(pmst_model* const* models, size_t n_models, const char* src_lang,
                             const char* tgt_lang, const int32_t* tokens, size_t n_tokens,
                             const pmst_decode_opts* opts, int32_t* out_tokens, size_t cap,
                             size_t* out_len, double* out_score) {
  if (!models || n_models == 0 || !src_lang || !tgt_lang || (!tokens && n_tokens) ||
      !out_tokens || !out_len)
    return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    std::vector<Model*> ptrs;
    for (size_t i = 0; i < n_models; ++i) ptrs.push_back(&models[i]->model);
    SourceInput in;
    in.route = Route::kText;
    for (size_t i = 0; i < n_tokens; ++i) in.tokens.push_back(tokens[i]);
    in.src_lang = src_lang;
    in.tgt_lang = tgt_lang;
    DecodeOptions o = to_options(opts);
    o.tgt_lang_override.clear();
    Hypothesis h = beam_search(ptrs, in, o);
    std::vector<int> content = content_tokens(h.tokens, ptrs[0]->vocab);
    PMST_CHECK(content.size() <= cap, "output buffer too small");
    for (size_t i = 0; i < content.size(); ++i)
      out_tokens[i] = ptrs[0]->vocab.to_base(content[i]);
    *out_len = content.size();
    if (out_score) *out_score = h.score;
  });
}

pmst_status pmst_decode_speech(pmst_model* const* models, size_t n_models,
                               const char* src_lang, const char* tgt_lang,
                               const double* features, size_t frames, size_t feature_dim,
                               const pmst_decode_opts* opts, int32_t* out_tokens, size_t cap,
                               size_t* out_len, double* out_score) {
  if (!models || n_models == 0 || !src_lang || !tgt_lang || !features || !out_tokens ||
      !out_len)
    return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    std::vector<Model*> ptrs;
    for (size_t i = 0; i < n_models; ++i) ptrs.push_back(&models[i]->model);
    Tensor feats(static_cast<int64_t>(frames), static_cast<int64_t>(feature_dim));
    std::memcpy(feats.data.data(), features, frames * feature_dim * sizeof(double));
    SourceInput in;
    in.route = Route::kSpeech;
    in.features = &feats;
    in.src_lang = src_lang;
    in.tgt_lang = tgt_lang;
    DecodeOptions o = to_options(opts);
    o.tgt_lang_override.clear();
    Hypothesis h = beam_search(ptrs, in, o);
    std::vector<int> content = content_tokens(h.tokens, ptrs[0]->vocab);
    PMST_CHECK(content.size() <= cap, "output buffer too small");
    for (size_t i = 0; i < content.size(); ++i)
      out_tokens[i] = ptrs[0]->vocab.to_base(content[i]);
    *out_len = content.size();
    if (out_score) *out_score = h.score;
  });
}

pmst_status pmst_bleu_records(const char* records_path, const char* corpus_path,
                              double* out_bleu) {
  if (!records_path || !corpus_path || !out_bleu) return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    auto records = pipeline::read_records(records_path);
    auto [corpus, spec] = load_corpus(corpus_path);
    PMST_CHECK(records.size() == corpus.size(), "record/corpus length mismatch");
    std::vector<std::vector<int>> hyp, ref;
    for (size_t i = 0; i < records.size(); ++i) {
      hyp.push_back(records[i].tokens);
      ref.push_back(corpus.samples[i].tgt_tokens);
    }
    *out_bleu = bleu(hyp, ref);
  });
}

/* ---- ablation --------------------------------------------------------------------- */

pmst_status pmst_ablate(const pmst_config* cfg, const char* data_dir,
                        const char* const* grid_axes, size_t n_axes, const uint64_t* seeds,
                        size_t n_seeds, const char* out_dir) {
  if (!cfg || !data_dir || (n_axes > 0 && !grid_axes) || !seeds || n_seeds == 0 || !out_dir)
    return invalid("null argument");
  return wrap(PMST_ERR_RUNTIME, [&] {
    std::vector<pipeline::AblationAxis> grid;
    for (size_t i = 0; i < n_axes; ++i) {
      std::string s = grid_axes[i];
      auto eq = s.find('=');
      PMST_CHECK(eq != std::string::npos, "grid axis must be key=v1|v2: " + s);
      pipeline::AblationAxis axis;
      axis.key = s.substr(0, eq);
      std::string cur;
      for (size_t j = eq + 1; j <= s.size(); ++j) {
        if (j == s.size() || s[j] == '|') {
          PMST_CHECK(!cur.empty(), "grid axis has an empty value: " + s);
          axis.values.push_back(cur);
          cur.clear();
        } else {
          cur += s[j];
        }
      }
      grid.push_back(std::move(axis));
    }
    std::vector<uint64_t> seed_v(seeds, seeds + n_seeds);
    auto rows = pipeline::run_ablation(cfg->cfg, grid, data_dir, seed_v);
    std::filesystem::create_directories(out_dir);
    std::ofstream table(std::string(out_dir) + "/table.txt");
    PMST_CHECK(table.good(), "cannot write ablation table");
    table << pipeline::ablation_table(rows);
    std::ofstream rec(std::string(out_dir) + "/records.log");
    rec << pipeline::ablation_records(rows);
    pipeline::write_manifest(std::string(out_dir) + "/manifest.txt", cfg->cfg, seed_v[0],
                             "ablate");
  });
}

} /* extern "C" */
