// pmst command-line front end. Everything goes through the C API in pmst.h;
// this file only parses flags and moves strings around.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pmst.h"

namespace {

int status_to_exit(pmst_status s) {
  if (s == PMST_OK) return 0;
  if (s == PMST_ERR_INVALID) return 1;
  return 2;
}

int fail(pmst_status s) {
  std::fprintf(stderr, "pmst: error: %s\n", pmst_last_error());
  return status_to_exit(s);
}

struct ConfigHandle {
  pmst_config* cfg = nullptr;
  ~ConfigHandle() { pmst_config_free(cfg); }
};

// --config + repeated --set key=value
int load_config(const std::string& path, const std::vector<std::string>& sets,
                ConfigHandle& out) {
  pmst_status s =
      path.empty() ? pmst_config_create(&out.cfg) : pmst_config_load(path.c_str(), &out.cfg);
  if (s != PMST_OK) return fail(s);
  for (const std::string& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "pmst: error: --set expects key=value, got '%s'\n", kv.c_str());
      return 1;
    }
    s = pmst_config_set(out.cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != PMST_OK) return fail(s);
  }
  return 0;
}

std::vector<const char*> to_cstr(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

// comma-splits every element (so both --ckpt a,b and repeated --ckpt work)
std::vector<std::string> split_all(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (const auto& a : args) {
    std::string cur;
    for (char c : a) {
      if (c == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

void write_run_manifest(const std::string& out_path, const pmst_config* cfg, uint64_t seed,
                        const std::string& command) {
  std::ofstream out(out_path + ".manifest");
  if (!out.good()) return;
  out << "pmst-version " << pmst_version() << "\n";
  if (cfg) {
    uint64_t h = 0;
    pmst_config_hash(cfg, &h);
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    out << "config-hash " << hex << "\n";
  } else {
    out << "config-hash -\n";
  }
  out << "seed " << seed << "\n";
  out << "command " << command << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pmst — parameter-efficient multilingual speech translation toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, init_ckpt, base_ckpt, pair, strategy;
  std::string st_ckpt, mt_ckpt, input_path, pivot, final_lang, tgt_lang, languages, train_path;
  std::vector<std::string> sets, ckpts, grid, held, inputs;
  std::string seeds_csv = "1";
  uint64_t seed = 1;
  int beam = 5, max_len = 64, threads = 0;
  bool enc_adapters = true, dec_adapters = true;

  auto add_common = [&](CLI::App* cmd, bool with_config) {
    if (with_config) {
      cmd->add_option("--config", config_path, "run configuration file");
      cmd->add_option("--set", sets, "override a config key (key=value)");
    }
    cmd->add_option("--seed", seed, "random seed");
  };
  auto add_decode_flags = [&](CLI::App* cmd) {
    cmd->add_option("--beam", beam, "beam size");
    cmd->add_option("--max-len", max_len, "decode length cap");
    cmd->add_option("--enc-adapters", enc_adapters, "enable encoder adapters");
    cmd->add_option("--dec-adapters", dec_adapters, "enable decoder adapters");
    cmd->add_option("--tgt-lang", tgt_lang, "decode into this language (zero-shot)");
    cmd->add_option("--threads", threads, "worker threads (default: PMST_THREADS or 1)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate synthetic multilingual corpora");
  add_common(gen, true);
  gen->add_option("--out", out_path, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain-mt", "pretrain the text-to-text backbone");
  add_common(pre, true);
  pre->add_option("--data", data_dir, "gen-data directory")->required();
  pre->add_option("--out", out_path, "output checkpoint")->required();

  auto* tr = app.add_subcommand("train", "train the speech-translation model");
  add_common(tr, true);
  tr->add_option("--data", data_dir, "gen-data directory")->required();
  tr->add_option("--init", init_ckpt, "pretrained backbone checkpoint")->required();
  tr->add_option("--out", out_path, "output directory")->required();

  auto* ad = app.add_subcommand("adapt", "incremental adaptation to a new pair");
  add_common(ad, true);
  ad->add_option("--data", data_dir, "gen-data directory")->required();
  ad->add_option("--base", base_ckpt, "base checkpoint")->required();
  ad->add_option("--pair", pair, "new pair, e.g. st:d-x")->required();
  ad->add_option("--strategy", strategy, "adapters64_all | adapters256_all | adapters256_bottom | conv_adapters256_bottom")
      ->default_val("adapters256_bottom");
  ad->add_option("--out", out_path, "output directory")->required();

  auto* dec = app.add_subcommand("decode", "beam-search decode a corpus");
  add_common(dec, false);
  dec->add_option("--ckpt,--ensemble", ckpts, "checkpoint(s); comma-separate to ensemble")
      ->required();
  dec->add_option("--input", input_path, "corpus file")->required();
  dec->add_option("--out", out_path, "output records")->required();
  add_decode_flags(dec);

  auto* cas = app.add_subcommand("cascade", "speech -> pivot -> final two-stage decode");
  add_common(cas, false);
  cas->add_option("--st", st_ckpt, "speech-translation checkpoint")->required();
  cas->add_option("--mt", mt_ckpt, "text-translation checkpoint")->required();
  cas->add_option("--input", input_path, "speech corpus file")->required();
  cas->add_option("--pivot", pivot, "pivot language")->required();
  cas->add_option("--final", final_lang, "final language")->required();
  cas->add_option("--out", out_path, "output records")->required();
  add_decode_flags(cas);

  auto* ev = app.add_subcommand("evaluate", "decode and score a corpus");
  add_common(ev, false);
  ev->add_option("--ckpt,--ensemble", ckpts, "checkpoint(s)")->required();
  ev->add_option("--input", input_path, "corpus file")->required();
  ev->add_option("--out", out_path, "report path")->required();
  add_decode_flags(ev);

  auto* avg = app.add_subcommand("average", "elementwise mean of checkpoints");
  add_common(avg, false);
  avg->add_option("--inputs", inputs, "input checkpoints")->required();
  avg->add_option("--out", out_path, "output checkpoint")->required();

  auto* fv = app.add_subcommand("filter-vocab", "restrict a model to a language subset");
  add_common(fv, false);
  fv->add_option("--ckpt", init_ckpt, "input checkpoint")->required();
  fv->add_option("--languages", languages, "languages to keep (csv)")->required();
  fv->add_option("--out", out_path, "output checkpoint")->required();

  auto* fc = app.add_subcommand("filter-contamination",
                                "drop train samples that appear in held-out sets");
  add_common(fc, false);
  fc->add_option("--train", train_path, "training corpus")->required();
  fc->add_option("--held", held, "held-out corpora (csv)")->required();
  fc->add_option("--out", out_path, "filtered corpus")->required();

  auto* ab = app.add_subcommand("ablate", "train/evaluate a config grid");
  add_common(ab, true);
  ab->add_option("--data", data_dir, "gen-data directory")->required();
  ab->add_option("--grid", grid, "axis as key=v1|v2|v3 (repeatable)");
  ab->add_option("--seeds", seeds_csv, "comma-separated seeds")->default_val("1");
  ab->add_option("--out", out_path, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  pmst_decode_opts opts;
  pmst_decode_opts_init(&opts);
  opts.beam = beam;
  opts.max_len = max_len;
  opts.enc_adapters = enc_adapters ? 1 : 0;
  opts.dec_adapters = dec_adapters ? 1 : 0;
  opts.threads = threads;
  if (!tgt_lang.empty()) opts.tgt_lang = tgt_lang.c_str();

  if (gen->parsed() || pre->parsed() || tr->parsed() || ad->parsed() || ab->parsed()) {
    ConfigHandle cfg;
    if (int rc = load_config(config_path, sets, cfg)) return rc;

    pmst_status s = PMST_OK;
    if (gen->parsed()) {
      s = pmst_gen_data(cfg.cfg, out_path.c_str(), seed);
    } else if (pre->parsed()) {
      s = pmst_pretrain_mt(cfg.cfg, data_dir.c_str(), seed, out_path.c_str());
      if (s == PMST_OK) write_run_manifest(out_path, cfg.cfg, seed, "pretrain-mt");
    } else if (tr->parsed()) {
      s = pmst_train(cfg.cfg, data_dir.c_str(), init_ckpt.c_str(), seed, out_path.c_str());
    } else if (ad->parsed()) {
      s = pmst_adapt(cfg.cfg, data_dir.c_str(), base_ckpt.c_str(), pair.c_str(),
                     strategy.c_str(), seed, out_path.c_str());
    } else {
      std::vector<uint64_t> seed_list;
      for (const std::string& s2 : split_all({seeds_csv}))
        seed_list.push_back(std::stoull(s2));
      auto axes = to_cstr(grid);
      s = pmst_ablate(cfg.cfg, data_dir.c_str(), axes.data(), axes.size(), seed_list.data(),
                      seed_list.size(), out_path.c_str());
    }
    return s == PMST_OK ? 0 : fail(s);
  }

  if (dec->parsed() || ev->parsed()) {
    auto all = split_all(ckpts);
    auto cpaths = to_cstr(all);
    pmst_status s = dec->parsed()
                        ? pmst_decode(cpaths.data(), cpaths.size(), input_path.c_str(), &opts,
                                      out_path.c_str())
                        : pmst_evaluate(cpaths.data(), cpaths.size(), input_path.c_str(),
                                        &opts, out_path.c_str());
    if (s != PMST_OK) return fail(s);
    write_run_manifest(out_path, nullptr, seed, dec->parsed() ? "decode" : "evaluate");
    return 0;
  }

  if (cas->parsed()) {
    pmst_status s = pmst_cascade(st_ckpt.c_str(), mt_ckpt.c_str(), input_path.c_str(),
                                 pivot.c_str(), final_lang.c_str(), &opts, out_path.c_str());
    if (s != PMST_OK) return fail(s);
    write_run_manifest(out_path, nullptr, seed, "cascade");
    return 0;
  }

  if (avg->parsed()) {
    auto all = split_all(inputs);
    auto cpaths = to_cstr(all);
    pmst_status s = pmst_average(cpaths.data(), cpaths.size(), out_path.c_str());
    if (s != PMST_OK) return fail(s);
    write_run_manifest(out_path, nullptr, seed, "average");
    return 0;
  }

  if (fv->parsed()) {
    pmst_model* in = nullptr;
    pmst_status s = pmst_model_load(init_ckpt.c_str(), &in);
    if (s != PMST_OK) return fail(s);
    pmst_model* out = nullptr;
    s = pmst_model_filter_vocab(in, languages.c_str(), &out);
    if (s == PMST_OK) s = pmst_model_save(out, out_path.c_str());
    pmst_model_free(in);
    pmst_model_free(out);
    if (s != PMST_OK) return fail(s);
    write_run_manifest(out_path, nullptr, seed, "filter-vocab");
    return 0;
  }

  if (fc->parsed()) {
    pmst_corpus* train = nullptr;
    pmst_status s = pmst_corpus_load(train_path.c_str(), &train);
    if (s != PMST_OK) return fail(s);
    std::vector<pmst_corpus*> held_handles;
    for (const std::string& h : split_all(held)) {
      pmst_corpus* c = nullptr;
      s = pmst_corpus_load(h.c_str(), &c);
      if (s != PMST_OK) {
        pmst_corpus_free(train);
        for (auto* hc : held_handles) pmst_corpus_free(hc);
        return fail(s);
      }
      held_handles.push_back(c);
    }
    pmst_corpus* filtered = nullptr;
    size_t removed = 0;
    std::vector<const pmst_corpus*> held_const(held_handles.begin(), held_handles.end());
    s = pmst_corpus_filter_contamination(train, held_const.data(), held_const.size(),
                                         &filtered, &removed);
    if (s == PMST_OK) {
      std::fprintf(stderr, "pmst: removed %zu of %zu samples (%.2f%%)\n", removed,
                   pmst_corpus_size(train),
                   pmst_corpus_size(train)
                       ? 100.0 * static_cast<double>(removed) / pmst_corpus_size(train)
                       : 0.0);
      s = pmst_corpus_save(filtered, out_path.c_str());
    }
    pmst_corpus_free(train);
    pmst_corpus_free(filtered);
    for (auto* hc : held_handles) pmst_corpus_free(hc);
    if (s != PMST_OK) return fail(s);
    write_run_manifest(out_path, nullptr, seed, "filter-contamination");
    return 0;
  }

  return 1;
}
