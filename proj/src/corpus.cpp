#include "pmst/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "pmst/container.hpp"

namespace pmst {

std::string task_name(Task t) {
  switch (t) {
    case Task::kAsr: return "asr";
    case Task::kSt: return "st";
    case Task::kMt: return "mt";
  }
  return "?";
}

Task task_from_name(const std::string& s) {
  if (s == "asr") return Task::kAsr;
  if (s == "st") return Task::kSt;
  if (s == "mt") return Task::kMt;
  throw Error("unknown task: " + s);
}

std::string PairKey::str() const { return task_name(task) + ":" + src + "-" + tgt; }

PairKey PairKey::parse(const std::string& s) {
  auto colon = s.find(':');
  auto dash = s.find('-', colon == std::string::npos ? 0 : colon + 1);
  PMST_CHECK(colon != std::string::npos && dash != std::string::npos,
             "bad pair key (want task:src-tgt): " + s);
  PairKey k;
  k.task = task_from_name(s.substr(0, colon));
  k.src = s.substr(colon + 1, dash - colon - 1);
  k.tgt = s.substr(dash + 1);
  PMST_CHECK(!k.src.empty() && !k.tgt.empty(), "bad pair key: " + s);
  return k;
}

// --- renderer ----------------------------------------------------------------

namespace {

std::vector<int> lang_permutation(const CorpusSpec& spec, const std::string& lang) {
  std::vector<int> perm(spec.tokens_per_lang);
  for (int i = 0; i < spec.tokens_per_lang; ++i) perm[i] = i;
  Rng rng(fnv1a("perm:" + lang));
  for (int i = spec.tokens_per_lang - 1; i > 0; --i) {
    int j = static_cast<int>(rng.below(static_cast<uint64_t>(i + 1)));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

// concept base vectors, shared by all languages; feature_layer selects the table
std::vector<double> concept_vector(const CorpusSpec& spec, int concept_id) {
  Rng rng(fnv1a("featbase:" + std::to_string(spec.feature_layer) + ":" +
                std::to_string(concept_id)));
  std::vector<double> v(spec.feature_dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

std::vector<double> lang_offset(const CorpusSpec& spec, const std::string& lang) {
  Rng rng(fnv1a("featlang:" + std::to_string(spec.feature_layer) + ":" + lang));
  std::vector<double> v(spec.feature_dim);
  for (auto& x : v) x = 0.3 * rng.normal();
  return v;
}

}  // namespace

int render_concept(const CorpusSpec& spec, const std::string& lang, int concept_id) {
  PMST_CHECK(concept_id >= 0 && concept_id < spec.tokens_per_lang, "concept id out of range");
  Vocab v = spec.vocab();
  return v.content_token(lang, lang_permutation(spec, lang)[concept_id]);
}

int invert_token(const CorpusSpec& spec, const std::string& lang, int token) {
  Vocab v = spec.vocab();
  int local = token - v.content_range(lang).first;
  PMST_CHECK(local >= 0 && local < spec.tokens_per_lang, "token not in language range");
  auto perm = lang_permutation(spec, lang);
  for (int c = 0; c < spec.tokens_per_lang; ++c)
    if (perm[c] == local) return c;
  throw Error("invert_token: corrupt permutation");
}

std::vector<int> render(const CorpusSpec& spec, const std::string& lang,
                        const std::vector<int>& concepts) {
  Vocab v = spec.vocab();
  auto perm = lang_permutation(spec, lang);
  auto [begin, end] = v.content_range(lang);
  (void)end;
  std::vector<int> out;
  out.reserve(concepts.size());
  for (int c : concepts) out.push_back(begin + perm[c]);
  return out;
}

std::vector<double> token_feature(const CorpusSpec& spec, int token) {
  Vocab v = spec.vocab();
  int li = v.classify(token);
  PMST_CHECK(li >= 0, "token_feature: not a content token");
  const std::string& lang = spec.languages[li];
  int concept_id = invert_token(spec, lang, token);
  auto feat = concept_vector(spec, concept_id);
  auto off = lang_offset(spec, lang);
  for (int i = 0; i < spec.feature_dim; ++i) feat[i] += off[i];
  return feat;
}

// --- generation --------------------------------------------------------------

Corpus generate_corpus(const CorpusSpec& spec, const std::vector<GenRequest>& requests,
                       uint64_t seed) {
  PMST_CHECK(spec.ratio >= 1, "corpus: ratio must be >= 1");
  PMST_CHECK(spec.languages.size() >= 2, "corpus: need at least 2 languages");
  PMST_CHECK(spec.len_min >= 1 && spec.len_min <= spec.len_max, "corpus: bad length range");
  Vocab vocab = spec.vocab();  // validates disjoint ranges / duplicates

  Corpus out;
  for (const auto& req : requests) {
    PMST_CHECK(vocab.has_language(req.pair.src) && vocab.has_language(req.pair.tgt),
               "corpus: unknown language in pair " + req.pair.str());
    PMST_CHECK(req.pair.task != Task::kAsr || req.pair.src == req.pair.tgt,
               "corpus: ASR requires src == tgt");
    Rng rng(fnv1a(req.pair.str() + "#" + req.id_prefix, seed ^ 0x9e3779b97f4a7c15ull));
    for (int i = 0; i < req.count; ++i) {
      Sample s;
      s.task = req.pair.task;
      s.src_lang = req.pair.src;
      s.tgt_lang = req.pair.tgt;
      char idbuf[96];
      std::snprintf(idbuf, sizeof(idbuf), "%s-%s-%06d", req.pair.str().c_str(),
                    req.id_prefix.c_str(), i);
      s.utterance_id = idbuf;

      int len = rng.range(spec.len_min, spec.len_max);
      std::vector<int> concepts(len);
      for (auto& c : concepts) c = static_cast<int>(rng.below(spec.tokens_per_lang));

      s.tgt_tokens = render(spec, s.tgt_lang, concepts);
      if (s.task == Task::kMt) {
        s.src_tokens = render(spec, s.src_lang, concepts);
      } else {
        std::vector<int> src = render(spec, s.src_lang, concepts);
        s.features = Tensor(static_cast<int64_t>(len) * spec.ratio, spec.feature_dim);
        int64_t row = 0;
        for (int tok : src) {
          auto base = token_feature(spec, tok);
          for (int r = 0; r < spec.ratio; ++r, ++row)
            for (int d = 0; d < spec.feature_dim; ++d)
              s.features.at(row, d) = base[d] + spec.noise * rng.normal();
        }
      }
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

// --- temperature sampling ------------------------------------------------------

void PairStats::add(const std::string& pair_id, int64_t n) {
  PMST_CHECK(n > 0, "pair stats: counts must be positive");
  for (auto& [k, v] : counts)
    if (k == pair_id) {
      v += n;
      return;
    }
  counts.emplace_back(pair_id, n);
}

std::vector<double> pair_probabilities(const PairStats& stats, double temperature) {
  PMST_CHECK(temperature > 0.0, "temperature must be positive");
  PMST_CHECK(!stats.counts.empty(), "pair stats empty");
  std::vector<double> p(stats.counts.size());
  double z = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = std::pow(static_cast<double>(stats.counts[i].second), 1.0 / temperature);
    z += p[i];
  }
  for (auto& x : p) x /= z;
  return p;
}

int temperature_sample(const PairStats& stats, double temperature, Rng& rng) {
  auto p = pair_probabilities(stats, temperature);
  double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

// --- batching -----------------------------------------------------------------

BatchStream::BatchStream(const Corpus& corpus, double temperature, int64_t max_source_features,
                         uint64_t seed)
    : temperature_(temperature), cap_(max_source_features), rng_(seed) {
  PMST_CHECK(!corpus.samples.empty(), "batch stream: empty corpus");
  std::map<std::string, size_t> index;
  for (const Sample& s : corpus.samples) {
    if (s.source_len() > cap_) {
      warnings_.push_back("sample " + s.utterance_id + " longer than batch cap, skipped");
      continue;
    }
    std::string key = s.pair().str();
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, pools_.size());
      pools_.emplace_back();
      stats_.add(key, 1);
      pools_.back().push_back(&s);
    } else {
      pools_[it->second].push_back(&s);
      stats_.counts[it->second].second += 1;
    }
  }
  PMST_CHECK(!pools_.empty(), "batch stream: every sample exceeds the cap");
}

Batch BatchStream::next() {
  Batch b;
  if (pending_) {  // the draw that closed the previous batch opens this one
    b.samples.push_back(pending_);
    b.source_len_sum = pending_->source_len();
    pending_ = nullptr;
  }
  while (true) {
    int k = temperature_sample(stats_, temperature_, rng_);
    const auto& pool = pools_[k];
    const Sample* s = pool[rng_.below(pool.size())];
    if (b.source_len_sum + s->source_len() > cap_) {
      // every draw is eventually used, so pair frequencies stay unbiased;
      // a lone sample always fits (overlong ones were dropped up front)
      pending_ = s;
      return b;
    }
    b.samples.push_back(s);
    b.source_len_sum += s->source_len();
    if (b.source_len_sum >= cap_) return b;
  }
}

// --- contamination filter -------------------------------------------------------

Corpus filter_contamination(const Corpus& train, const std::vector<const Corpus*>& held,
                            ContaminationReport* report) {
  std::unordered_set<std::string> held_ids;
  for (const Corpus* c : held)
    for (const Sample& s : c->samples) held_ids.insert(s.utterance_id);
  Corpus out;
  size_t removed = 0;
  for (const Sample& s : train.samples) {
    if (held_ids.count(s.utterance_id)) {
      ++removed;
      continue;
    }
    out.samples.push_back(s);
  }
  if (report) {
    report->removed = removed;
    report->train_size = train.samples.size();
  }
  return out;
}

// --- serialization ---------------------------------------------------------------

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> v;
  std::istringstream in(s);
  int x;
  while (in >> x) v.push_back(x);
  return v;
}

std::string join_csv(const std::vector<std::string>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += v[i];
  }
  return s;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

void save_corpus(const Corpus& corpus, const CorpusSpec& spec, const std::string& path) {
  std::ofstream out(path);
  PMST_CHECK(out.good(), "corpus: cannot open for write: " + path);
  out << "#pmst-corpus v1\n";
  out << "#languages " << join_csv(spec.languages) << "\n";
  out << "#tokens_per_lang " << spec.tokens_per_lang << "\n";
  out << "#feature_dim " << spec.feature_dim << "\n";
  out << "#ratio " << spec.ratio << "\n";
  out << "#noise " << spec.noise << "\n";
  out << "#len " << spec.len_min << " " << spec.len_max << "\n";
  out << "#feature_layer " << spec.feature_layer << "\n";

  std::map<std::string, Tensor> feats;
  for (const Sample& s : corpus.samples) {
    out << s.utterance_id << '\t' << task_name(s.task) << '\t' << s.src_lang << '\t'
        << s.tgt_lang << '\t';
    if (s.is_speech()) {
      out << "f:" << s.utterance_id;
      feats.emplace(s.utterance_id, s.features);
    } else {
      out << "t:" << join_ints(s.src_tokens);
    }
    out << '\t' << join_ints(s.tgt_tokens) << '\n';
  }
  out.close();
  PMST_CHECK(out.good(), "corpus: write failed: " + path);
  if (!feats.empty())
    container::save(path + ".feats", R"({"format":"pmst-feats","version":1})", feats);
}

std::pair<Corpus, CorpusSpec> load_corpus(const std::string& path) {
  std::ifstream in(path);
  PMST_CHECK(in.good(), "corpus: cannot open: " + path);
  std::string line;
  PMST_CHECK(std::getline(in, line) && line == "#pmst-corpus v1",
             "corpus: bad file header: " + path);

  CorpusSpec spec;
  Corpus corpus;
  std::map<std::string, Tensor> feats;
  bool feats_loaded = false;

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      hs >> key;
      if (key == "languages") {
        std::string rest;
        hs >> rest;
        spec.languages = split_csv(rest);
      } else if (key == "tokens_per_lang") {
        hs >> spec.tokens_per_lang;
      } else if (key == "feature_dim") {
        hs >> spec.feature_dim;
      } else if (key == "ratio") {
        hs >> spec.ratio;
      } else if (key == "noise") {
        hs >> spec.noise;
      } else if (key == "len") {
        hs >> spec.len_min >> spec.len_max;
      } else if (key == "feature_layer") {
        hs >> spec.feature_layer;
      }
      continue;
    }
    std::istringstream ls(line);
    std::string id, task, src, tgt, source, target;
    PMST_CHECK(std::getline(ls, id, '\t') && std::getline(ls, task, '\t') &&
                   std::getline(ls, src, '\t') && std::getline(ls, tgt, '\t') &&
                   std::getline(ls, source, '\t') && std::getline(ls, target),
               "corpus: malformed line: " + line);
    Sample s;
    s.utterance_id = id;
    s.task = task_from_name(task);
    s.src_lang = src;
    s.tgt_lang = tgt;
    s.tgt_tokens = split_ints(target);
    if (source.rfind("t:", 0) == 0) {
      s.src_tokens = split_ints(source.substr(2));
    } else if (source.rfind("f:", 0) == 0) {
      if (!feats_loaded) {
        feats = container::load(path + ".feats").tensors;
        feats_loaded = true;
      }
      auto it = feats.find(source.substr(2));
      PMST_CHECK(it != feats.end(), "corpus: missing feature payload " + source.substr(2));
      s.features = it->second;
    } else {
      throw Error("corpus: bad source field: " + source);
    }
    corpus.samples.push_back(std::move(s));
  }
  return {std::move(corpus), std::move(spec)};
}

}  // namespace pmst
