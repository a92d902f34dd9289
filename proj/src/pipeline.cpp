#include "pmst/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace pmst::pipeline {

namespace fs = std::filesystem;

std::string pair_path(const std::string& dir, const PairKey& key, const std::string& split) {
  return dir + "/" + task_name(key.task) + "-" + key.src + "-" + key.tgt + "." + split +
         ".corpus";
}

void write_manifest(const std::string& path, const RunConfig& cfg, uint64_t seed,
                    const std::string& command) {
  std::ofstream out(path);
  PMST_CHECK(out.good(), "cannot write manifest: " + path);
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(cfg.hash()));
  out << "pmst-version 0.1.0\n";
  out << "config-hash " << hex << "\n";
  out << "seed " << seed << "\n";
  out << "command " << command << "\n";
}

void gen_data(const RunConfig& cfg, const std::string& out_dir, uint64_t seed) {
  CorpusSpec spec = cfg.corpus_spec();
  fs::create_directories(out_dir);
  int valid_size = static_cast<int>(cfg.get_int("corpus.valid_size"));
  int test_size = static_cast<int>(cfg.get_int("corpus.test_size"));
  int mt_train = static_cast<int>(cfg.get_int("corpus.mt_train_size"));
  int contaminate = static_cast<int>(cfg.get_int("corpus.contaminate_asr"));

  for (const PairKey& key : cfg.mt_pairs()) {
    Corpus train = generate_corpus(spec, {{key, mt_train, "train"}}, seed);
    Corpus valid = generate_corpus(spec, {{key, valid_size, "valid"}}, seed);
    save_corpus(train, spec, pair_path(out_dir, key, "train"));
    save_corpus(valid, spec, pair_path(out_dir, key, "valid"));
  }
  for (const auto& [key, count] : cfg.speech_pairs()) {
    Corpus train = generate_corpus(spec, {{key, count, "train"}}, seed);
    Corpus valid = generate_corpus(spec, {{key, valid_size, "valid"}}, seed);
    Corpus test = generate_corpus(spec, {{key, test_size, "test"}}, seed);
    if (key.task == Task::kAsr && contaminate > 0) {
      // replicate the organizers' leak: held-out audio also present in train
      for (int i = 0; i < contaminate && i < static_cast<int>(valid.size()); ++i)
        train.samples.push_back(valid.samples[i]);
      for (int i = 0; i < contaminate && i < static_cast<int>(test.size()); ++i)
        train.samples.push_back(test.samples[i]);
    }
    save_corpus(train, spec, pair_path(out_dir, key, "train"));
    save_corpus(valid, spec, pair_path(out_dir, key, "valid"));
    save_corpus(test, spec, pair_path(out_dir, key, "test"));
  }
  write_manifest(out_dir + "/manifest.txt", cfg, seed, "gen-data");
}

Corpus load_split(const std::string& data_dir, const PairKey& key, const std::string& split) {
  return load_corpus(pair_path(data_dir, key, split)).first;
}

void init_from_backbone(Model& st_model, const Model& backbone) {
  PMST_CHECK(st_model.vocab == backbone.vocab, "backbone init: vocabulary mismatch");
  for (auto& [name, par] : st_model.params) {
    if (name.rfind("embed.", 0) != 0 && name.rfind("enc.", 0) != 0 &&
        name.rfind("dec.", 0) != 0)
      continue;
    auto it = backbone.params.find(name);
    PMST_CHECK(it != backbone.params.end(), "backbone init: missing " + name);
    PMST_CHECK(it->second.value.shape == par.value.shape,
               "backbone init: shape mismatch for " + name);
    par.value = it->second.value;
  }
  st_model.ft_bottom_k = 0;
}

namespace {

struct LoadedPairs {
  std::vector<Corpus> storage;  // keeps corpora alive for PairData pointers
  std::vector<PairData> pairs;
};

LoadedPairs load_pairs(const std::string& data_dir, const std::vector<PairKey>& keys) {
  LoadedPairs out;
  out.storage.reserve(keys.size() * 2);
  for (const PairKey& key : keys) {
    out.storage.push_back(load_split(data_dir, key, "train"));
    const Corpus* train = &out.storage.back();
    out.storage.push_back(load_split(data_dir, key, "valid"));
    const Corpus* valid = &out.storage.back();
    out.pairs.push_back({key, train, valid});
  }
  return out;
}

}  // namespace

TrainedModel pretrain_mt(const RunConfig& cfg, const std::string& data_dir, uint64_t seed) {
  CorpusSpec spec = cfg.corpus_spec();
  ModelConfig mc = cfg.model_config();
  AdapterSpec no_adapters;
  no_adapters.encoder = false;
  no_adapters.decoder = false;
  no_adapters.bottleneck_dim = static_cast<int>(cfg.get_int("model.adapter_dim"));

  TrainedModel out{Model::build(mc, no_adapters, spec.vocab(), seed), {}, {}};
  LoadedPairs data = load_pairs(data_dir, cfg.mt_pairs());
  out.trainable = apply_freeze_plan(out.model, FreezePlan::full());
  out.result = train(out.model, out.trainable, data.pairs, cfg.pretrain_config(), seed);
  out.model.restore(out.result.best);
  return out;
}

TrainedModel train_st(const RunConfig& cfg, const std::string& data_dir,
                      const Model& backbone, uint64_t seed) {
  CorpusSpec spec = cfg.corpus_spec();
  ModelConfig mc = cfg.model_config();
  FreezePlan plan = cfg.freeze_plan();
  if (plan.mode == FreezePlan::Mode::kStacked && mc.stacked_layers == 0)
    mc.stacked_layers = 1;

  // no adapters inside the fine-tuned bottom layers
  std::vector<int> skip;
  if (plan.mode == FreezePlan::Mode::kFineTuneBottom)
    for (int i = 0; i < plan.bottom_layers; ++i) skip.push_back(i);

  TrainedModel out{Model::build(mc, cfg.adapter_spec(skip), spec.vocab(), seed), {}, {}};
  init_from_backbone(out.model, backbone);
  out.trainable = apply_freeze_plan(out.model, plan);

  LoadedPairs data = load_pairs(data_dir, cfg.train_pairs());
  out.result = train(out.model, out.trainable, data.pairs, cfg.train_config(), seed);
  out.model.restore(out.result.best);
  return out;
}

TrainedModel adapt(const RunConfig& cfg, const std::string& data_dir, Model base,
                   const PairKey& new_pair, AdaptStrategy strategy, uint64_t seed) {
  Corpus train_c = load_split(data_dir, new_pair, "train");
  Corpus valid_c = load_split(data_dir, new_pair, "valid");
  PairData pd{new_pair, &train_c, &valid_c};
  AdaptResult r = incremental_adapt(base, pd, strategy, cfg.adapt_config(), seed);
  return {std::move(base), std::move(r.train), std::move(r.trainable)};
}

namespace {

// corpus sample mapped into a filtered model's id space
Sample to_model_space(const Sample& s, const Vocab& vocab) {
  if (!vocab.is_filtered()) return s;
  Sample out = s;
  for (int& t : out.src_tokens) {
    int mapped = vocab.from_base(t);
    PMST_CHECK(mapped >= 0, "decode: token outside the filtered vocabulary");
    t = mapped;
  }
  for (int& t : out.tgt_tokens) {
    int mapped = vocab.from_base(t);
    PMST_CHECK(mapped >= 0, "decode: token outside the filtered vocabulary");
    t = mapped;
  }
  return out;
}

}  // namespace

std::vector<DecodeRecord> decode_records(std::span<Model* const> models, const Corpus& corpus,
                                         const DecodeOptions& opts, int threads) {
  PMST_CHECK(!models.empty(), "decode: no models");
  const Vocab& vocab = models[0]->vocab;
  Corpus mapped;
  mapped.samples.reserve(corpus.samples.size());
  for (const Sample& s : corpus.samples) mapped.samples.push_back(to_model_space(s, vocab));

  std::vector<Hypothesis> hyps = decode_corpus(models, mapped, opts, threads);
  std::vector<DecodeRecord> out(hyps.size());
  for (size_t i = 0; i < hyps.size(); ++i) {
    out[i].utterance_id = corpus.samples[i].utterance_id;
    for (int t : content_tokens(hyps[i].tokens, vocab)) out[i].tokens.push_back(vocab.to_base(t));
    out[i].score = hyps[i].score;
    out[i].forced = hyps[i].forced;
  }
  return out;
}

void write_records(const std::vector<DecodeRecord>& records, const std::string& path) {
  std::ofstream out(path);
  PMST_CHECK(out.good(), "cannot write: " + path);
  for (const auto& r : records) {
    out << r.utterance_id << '\t';
    for (size_t i = 0; i < r.tokens.size(); ++i) out << (i ? " " : "") << r.tokens[i];
    out << '\t' << r.score << '\t' << (r.forced ? "forced" : "-") << '\n';
  }
}

std::vector<DecodeRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  PMST_CHECK(in.good(), "cannot open: " + path);
  std::vector<DecodeRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    DecodeRecord r;
    std::string ids, score, flags;
    PMST_CHECK(std::getline(ls, r.utterance_id, '\t') && std::getline(ls, ids, '\t') &&
                   std::getline(ls, score, '\t') && std::getline(ls, flags),
               "bad decode record: " + line);
    std::istringstream is(ids);
    int t;
    while (is >> t) r.tokens.push_back(t);
    r.score = std::stod(score);
    r.forced = flags == "forced";
    out.push_back(std::move(r));
  }
  return out;
}

EvalReport evaluate(std::span<Model* const> models, const Corpus& corpus,
                    const DecodeOptions& opts, int threads) {
  auto records = decode_records(models, corpus, opts, threads);

  std::map<std::string, std::vector<size_t>> by_pair;
  for (size_t i = 0; i < corpus.samples.size(); ++i)
    by_pair[corpus.samples[i].pair().str()].push_back(i);

  const Vocab base_vocab =
      models[0]->vocab.is_filtered()
          ? Vocab(models[0]->vocab.languages(), models[0]->vocab.tokens_per_lang())
          : models[0]->vocab;

  EvalReport report;
  for (const auto& [pair, idxs] : by_pair) {
    PairResult pr;
    pr.pair = pair;
    pr.sentences = idxs.size();
    std::vector<std::vector<int>> hyp, ref;
    for (size_t i : idxs) {
      hyp.push_back(records[i].tokens);
      ref.push_back(corpus.samples[i].tgt_tokens);
    }
    pr.bleu = bleu(hyp, ref);
    std::string tgt = corpus.samples[idxs[0]].tgt_lang;
    if (!opts.tgt_lang_override.empty()) tgt = opts.tgt_lang_override;
    pr.lang_id = lang_id_rate(hyp, tgt, base_vocab);
    pr.lang_tokens = lang_token_rate(hyp, tgt, base_vocab);
    report.pairs.push_back(std::move(pr));
  }
  report.total_params = models[0]->total_params();
  return report;
}

// --- ablation -------------------------------------------------------------------

std::string AblationRow::label() const {
  std::string s;
  for (const auto& [k, v] : cell) {
    if (!s.empty()) s += ",";
    s += k + "=" + v;
  }
  return s;
}

namespace {

uint64_t backbone_key(const RunConfig& cfg) {
  std::string sig;
  for (const char* k :
       {"corpus.languages", "corpus.tokens_per_lang", "corpus.feature_dim", "corpus.noise",
        "corpus.ratio", "corpus.len_min", "corpus.len_max", "corpus.feature_layer",
        "model.enc_layers", "model.dec_layers", "model.d_model", "model.ffn_dim",
        "model.heads", "model.pre_norm", "pretrain.max_updates", "pretrain.validate_every",
        "pretrain.batch_cap"})
    sig += std::string(k) + "=" + cfg.get(k) + ";";
  return fnv1a(sig);
}

double median3(double a, double b, double c) {
  return std::max(std::min(a, b), std::min(std::max(a, b), c));
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<AblationAxis>& grid,
                                      const std::string& data_dir,
                                      std::span<const uint64_t> seeds) {
  PMST_CHECK(!seeds.empty(), "ablation: need at least one seed");
  for (const auto& axis : grid)
    PMST_CHECK(!axis.values.empty(), "ablation: empty axis " + axis.key);

  // Cartesian product of the axes (a single empty grid = one base cell)
  std::vector<std::vector<std::pair<std::string, std::string>>> cells{{}};
  for (const auto& axis : grid) {
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& cell : cells)
      for (const auto& value : axis.values) {
        auto c = cell;
        c.emplace_back(axis.key, value);
        next.push_back(std::move(c));
      }
    cells = std::move(next);
  }

  std::map<uint64_t, Model> backbones;
  std::vector<AblationRow> rows;

  for (const auto& cell : cells) {
    AblationRow row;
    row.cell = cell;
    try {
      RunConfig cfg = base;
      for (const auto& [k, v] : cell) cfg.set(k, v);

      uint64_t bk = backbone_key(cfg);
      if (!backbones.count(bk))
        backbones.emplace(bk, pretrain_mt(cfg, data_dir, seeds[0]).model);
      const Model& backbone = backbones.at(bk);

      // evaluate on the test split of the first early-stop pair
      std::vector<PairKey> stop_keys;
      for (const auto& p : cfg.train_config().early_stop_pairs)
        stop_keys.push_back(PairKey::parse(p));
      if (stop_keys.empty()) stop_keys.push_back(cfg.train_pairs().front());
      Corpus test = load_split(data_dir, stop_keys.front(), "test");

      std::map<std::string, std::vector<double>> bleus;
      double secs = 0.0;
      int64_t trained = 0, total = 0;
      for (size_t si = 0; si < seeds.size(); ++si) {
        TrainedModel tm = train_st(cfg, data_dir, backbone, seeds[si]);
        total = tm.model.total_params();
        trained = tm.model.param_count(tm.trainable);
        Model* mp = &tm.model;
        DecodeOptions opts;
        opts.beam = static_cast<int>(cfg.get_int("train.valid_beam"));
        opts.max_len = static_cast<int>(cfg.get_int("train.decode_max_len"));
        EvalReport rep = evaluate({&mp, 1}, test, opts, default_threads());
        for (const auto& pr : rep.pairs) bleus[pr.pair].push_back(pr.bleu);
        if (si == 0) {
          // decode timing, median of 3 repeats
          double t[3];
          for (int rep3 = 0; rep3 < 3; ++rep3) {
            auto t0 = std::chrono::steady_clock::now();
            decode_records({&mp, 1}, test, opts, 1);
            t[rep3] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                          .count();
          }
          secs = median3(t[0], t[1], t[2]) / static_cast<double>(test.size());
        }
      }
      for (const auto& [pair, scores] : bleus) {
        PairResult pr;
        pr.pair = pair;
        pr.bleu = 0.0;
        for (double b : scores) pr.bleu += b;
        pr.bleu /= static_cast<double>(scores.size());
        pr.sentences = test.size();
        row.pairs.push_back(pr);
        row.mean_bleu += pr.bleu;
      }
      if (!row.pairs.empty()) row.mean_bleu /= static_cast<double>(row.pairs.size());
      row.total_params = total;
      row.trained_params = trained;
      row.seconds_per_utt = secs;
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }

  // speed relative to the conv_layers=1 cell when present, else the first cell
  double baseline = 0.0;
  for (const auto& row : rows) {
    bool is_base = false;
    for (const auto& [k, v] : row.cell)
      if (k == "model.conv_layers" && v == "1") is_base = true;
    if (is_base && row.ok && row.seconds_per_utt > 0.0) {
      baseline = row.seconds_per_utt;
      break;
    }
  }
  if (baseline == 0.0)
    for (const auto& row : rows)
      if (row.ok && row.seconds_per_utt > 0.0) {
        baseline = row.seconds_per_utt;
        break;
      }
  for (auto& row : rows)
    if (row.ok && row.seconds_per_utt > 0.0 && baseline > 0.0)
      row.relative_speed = baseline / row.seconds_per_utt;

  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-48s %10s %14s %14s %10s\n", "cell", "BLEU",
                "trained", "total", "speed");
  out << line;
  for (const auto& r : rows) {
    if (!r.ok) {
      std::snprintf(line, sizeof(line), "%-48s FAILED: %s\n", r.label().c_str(),
                    r.error.c_str());
      out << line;
      continue;
    }
    std::snprintf(line, sizeof(line), "%-48s %10.2f %14lld %14lld %9.2fx\n",
                  r.label().c_str(), r.mean_bleu, static_cast<long long>(r.trained_params),
                  static_cast<long long>(r.total_params), r.relative_speed);
    out << line;
  }
  return out.str();
}

std::string ablation_records(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  for (const auto& r : rows) {
    out << "cell=" << r.label();
    if (!r.ok) {
      out << "\tstatus=failed\terror=" << r.error << "\n";
      continue;
    }
    out << "\tstatus=ok\tbleu=" << r.mean_bleu << "\ttrained=" << r.trained_params
        << "\ttotal=" << r.total_params << "\tsec_per_utt=" << r.seconds_per_utt
        << "\trel_speed=" << r.relative_speed << "\n";
  }
  return out.str();
}

}  // namespace pmst::pipeline
