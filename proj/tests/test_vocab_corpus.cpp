#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "pmst/corpus.hpp"
#include "pmst/vocab.hpp"

using namespace pmst;

namespace {

CorpusSpec tiny_spec() {
  CorpusSpec spec;
  spec.languages = {"a", "b", "x", "y"};
  spec.tokens_per_lang = 20;
  spec.feature_dim = 6;
  spec.noise = 0.0;
  spec.ratio = 1;
  spec.len_min = 2;
  spec.len_max = 5;
  return spec;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// chi-squared critical values at significance 0.001
double chi2_crit(int df) {
  const double crit[] = {10.828, 13.816, 16.266, 18.467, 20.515, 22.458};
  REQUIRE(df >= 1);
  REQUIRE(df <= 6);
  return crit[df - 1];
}

}  // namespace

TEST_CASE("vocab layout: pad 0, unique tags, disjoint contiguous ranges") {
  Vocab v({"a", "b", "x"}, 10);
  CHECK(Vocab::kPad == 0);
  CHECK(v.lang_tag("a") == 4);
  CHECK(v.lang_tag("x") == 6);
  CHECK(v.size() == 4 + 3 + 30);
  auto [ab, ae] = v.content_range("a");
  auto [bb, be] = v.content_range("b");
  CHECK(ab == 7);
  CHECK(ae == bb);
  CHECK(be == v.content_range("x").first);
  CHECK(v.classify(ab) == 0);
  CHECK(v.classify(bb) == 1);
  CHECK(v.classify(v.lang_tag("b")) == -1);
  CHECK_THROWS_AS(v.lang_tag("zz"), Error);
  CHECK_THROWS_AS(Vocab({"a", "a"}, 5), Error);
}

TEST_CASE("vocab filter keeps specials and tags, drops other content ranges") {
  Vocab v({"a", "b", "x", "y"}, 100);
  Vocab f = v.filter({"a", "x"});
  CHECK(f.size() == 4 + 4 + 200);
  CHECK(f.covers("a"));
  CHECK_FALSE(f.covers("b"));
  CHECK(f.lang_tag("b") == v.lang_tag("b"));  // tags survive

  SUBCASE("round trip: remap then inverse restores retained ids") {
    for (int t = 0; t < f.size(); ++t) CHECK(f.from_base(f.to_base(t)) == t);
    auto [b0, e0] = v.content_range("a");
    for (int t = b0; t < e0; ++t) CHECK(f.to_base(f.from_base(t)) == t);
    auto [db, de] = v.content_range("b");
    CHECK(f.from_base(db) == -1);  // dropped
    (void)de;
  }
  SUBCASE("identity filter keeps every id in place") {
    Vocab all = v.filter({"a", "b", "x", "y"});
    CHECK(all.size() == v.size());
    for (int t = 0; t < all.size(); ++t) CHECK(all.to_base(t) == t);
  }
  SUBCASE("empty or unknown set rejected") {
    CHECK_THROWS_AS(v.filter({}), Error);
    CHECK_THROWS_AS(v.filter({"nope"}), Error);
  }
}

TEST_CASE("renderer: invertible per-language maps, consistent across languages") {
  CorpusSpec spec = tiny_spec();
  std::vector<int> concepts{3, 1, 4, 1, 5};
  auto in_a = render(spec, "a", concepts);
  auto in_b = render(spec, "b", concepts);
  CHECK(in_a != in_b);
  for (size_t i = 0; i < concepts.size(); ++i) {
    CHECK(invert_token(spec, "a", in_a[i]) == concepts[i]);
    CHECK(invert_token(spec, "b", in_b[i]) == concepts[i]);
  }
}

TEST_CASE("generate_corpus: noiseless r=1 features equal the token embeddings") {
  CorpusSpec spec = tiny_spec();
  Corpus c = generate_corpus(spec, {{{Task::kSt, "a", "x"}, 4, "t"}}, 11);
  REQUIRE(c.size() == 4);
  for (const Sample& s : c.samples) {
    CHECK(s.task == Task::kSt);
    REQUIRE(s.features.rows() == static_cast<int64_t>(s.tgt_tokens.size()));
    // recover the source rendering from the target via the shared concepts
    std::vector<int> concepts;
    for (int t : s.tgt_tokens) concepts.push_back(invert_token(spec, "x", t));
    auto src = render(spec, "a", concepts);
    for (int64_t r = 0; r < s.features.rows(); ++r) {
      auto emb = token_feature(spec, src[r]);
      for (int d = 0; d < spec.feature_dim; ++d) CHECK(s.features.at(r, d) == emb[d]);
    }
  }
}

TEST_CASE("generate_corpus: ratio 12 gives feature length 12x target length") {
  CorpusSpec spec = tiny_spec();
  spec.ratio = 12;
  spec.len_min = 10;
  spec.len_max = 10;
  Corpus c = generate_corpus(spec, {{{Task::kSt, "a", "x"}, 2, "t"}}, 5);
  for (const Sample& s : c.samples) {
    CHECK(s.tgt_tokens.size() == 10);
    CHECK(s.features.rows() == 120);
  }
}

TEST_CASE("generate_corpus basics") {
  CorpusSpec spec = tiny_spec();
  SUBCASE("ASR requires src == tgt") {
    CHECK_THROWS_AS(generate_corpus(spec, {{{Task::kAsr, "a", "x"}, 1, "t"}}, 1), Error);
    Corpus c = generate_corpus(spec, {{{Task::kAsr, "b", "b"}, 3, "t"}}, 1);
    CHECK(c.size() == 3);
  }
  SUBCASE("MT samples carry token sources") {
    Corpus c = generate_corpus(spec, {{{Task::kMt, "a", "x"}, 3, "t"}}, 1);
    for (const Sample& s : c.samples) {
      CHECK_FALSE(s.is_speech());
      CHECK(s.src_tokens.size() == s.tgt_tokens.size());
    }
  }
  SUBCASE("bad specs rejected") {
    CorpusSpec one = spec;
    one.languages = {"a"};
    CHECK_THROWS_AS(generate_corpus(one, {}, 1), Error);
    CorpusSpec r0 = spec;
    r0.ratio = 0;
    CHECK_THROWS_AS(generate_corpus(r0, {}, 1), Error);
  }
}

TEST_CASE("corpus determinism: same spec and seed give identical bytes") {
  CorpusSpec spec = tiny_spec();
  spec.noise = 0.2;
  spec.ratio = 3;
  auto reqs = std::vector<GenRequest>{{{Task::kSt, "a", "x"}, 5, "t"},
                                      {{Task::kMt, "b", "y"}, 5, "t"}};
  std::filesystem::create_directories("test_tmp");
  Corpus c1 = generate_corpus(spec, reqs, 42);
  Corpus c2 = generate_corpus(spec, reqs, 42);
  save_corpus(c1, spec, "test_tmp/c1.corpus");
  save_corpus(c2, spec, "test_tmp/c2.corpus");
  CHECK(read_file("test_tmp/c1.corpus") == read_file("test_tmp/c2.corpus"));
  CHECK(read_file("test_tmp/c1.corpus.feats") == read_file("test_tmp/c2.corpus.feats"));
  Corpus c3 = generate_corpus(spec, reqs, 43);
  save_corpus(c3, spec, "test_tmp/c3.corpus");
  CHECK(read_file("test_tmp/c1.corpus") != read_file("test_tmp/c3.corpus"));
}

TEST_CASE("corpus save/load round trip") {
  CorpusSpec spec = tiny_spec();
  spec.noise = 0.3;
  spec.ratio = 2;
  Corpus c = generate_corpus(
      spec, {{{Task::kSt, "a", "x"}, 4, "t"}, {{Task::kMt, "b", "y"}, 4, "t"}}, 9);
  save_corpus(c, spec, "test_tmp/rt.corpus");
  auto [loaded, lspec] = load_corpus("test_tmp/rt.corpus");
  REQUIRE(loaded.size() == c.size());
  CHECK(lspec.languages == spec.languages);
  CHECK(lspec.tokens_per_lang == spec.tokens_per_lang);
  CHECK(lspec.ratio == spec.ratio);
  for (size_t i = 0; i < c.size(); ++i) {
    CHECK(loaded.samples[i].utterance_id == c.samples[i].utterance_id);
    CHECK(loaded.samples[i].task == c.samples[i].task);
    CHECK(loaded.samples[i].src_tokens == c.samples[i].src_tokens);
    CHECK(loaded.samples[i].tgt_tokens == c.samples[i].tgt_tokens);
    CHECK(loaded.samples[i].features.shape == c.samples[i].features.shape);
    CHECK(loaded.samples[i].features.data == c.samples[i].features.data);  // bit-exact
  }
}

TEST_CASE("temperature sampling probabilities") {
  PairStats stats;
  stats.add("taq-fr", 5025);
  stats.add("que-es", 698);

  SUBCASE("T=3 on the utterance counts 5025/698") {
    auto p = pair_probabilities(stats, 3.0);
    double c1 = std::cbrt(5025.0), c2 = std::cbrt(698.0);
    CHECK(p[0] == doctest::Approx(c1 / (c1 + c2)).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.659).epsilon(1e-3));
    CHECK(p[1] == doctest::Approx(0.341).epsilon(1e-3));
  }
  SUBCASE("T=1 reduces to proportional sampling") {
    auto p = pair_probabilities(stats, 1.0);
    CHECK(p[0] == doctest::Approx(5025.0 / 5723.0).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.878).epsilon(1e-3));
  }
  SUBCASE("equal counts are uniform at any T") {
    PairStats eq;
    eq.add("p1", 777);
    eq.add("p2", 777);
    eq.add("p3", 777);
    for (double t : {0.5, 1.0, 3.0, 100.0}) {
      auto p = pair_probabilities(eq, t);
      for (double x : p) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(pair_probabilities(PairStats{}, 3.0), Error);
    CHECK_THROWS_AS(pair_probabilities(stats, 0.0), Error);
    PairStats bad;
    CHECK_THROWS_AS(bad.add("p", 0), Error);
  }
}

TEST_CASE("sampling law: chi-squared goodness of fit at 1e6 draws") {
  PairStats stats;
  stats.add("taq-fr", 5025);
  stats.add("que-es", 698);
  stats.add("fr-en", 31207);
  for (double temperature : {1.0, 3.0, 100.0}) {
    auto p = pair_probabilities(stats, temperature);
    Rng rng(static_cast<uint64_t>(temperature * 1000) + 7);
    std::vector<int64_t> counts(p.size(), 0);
    const int64_t n = 1000000;
    for (int64_t i = 0; i < n; ++i) ++counts[temperature_sample(stats, temperature, rng)];
    double chi2 = 0.0;
    for (size_t k = 0; k < p.size(); ++k) {
      double expect = p[k] * static_cast<double>(n);
      chi2 += (counts[k] - expect) * (counts[k] - expect) / expect;
    }
    CHECK(chi2 < chi2_crit(static_cast<int>(p.size()) - 1));
  }
}

TEST_CASE("batching: caps, composition, and pair frequencies") {
  CorpusSpec spec = tiny_spec();
  spec.ratio = 4;
  Corpus c = generate_corpus(spec,
                             {{{Task::kSt, "a", "x"}, 40, "t"},
                              {{Task::kSt, "b", "x"}, 160, "t"},
                              {{Task::kMt, "b", "y"}, 80, "t"}},
                             3);

  SUBCASE("cap respected over 10k batches") {
    BatchStream stream(c, 3.0, 64, 77);
    for (int i = 0; i < 10000; ++i) {
      Batch b = stream.next();
      CHECK(b.source_len_sum <= 64);
      CHECK(!b.samples.empty());
      int64_t total = 0;
      for (const Sample* s : b.samples) total += s->source_len();
      CHECK(total == b.source_len_sum);
    }
  }
  SUBCASE("fixed-length samples: at most floor(cap/len) per batch") {
    CorpusSpec fixed = tiny_spec();
    fixed.ratio = 12;
    fixed.len_min = 10;
    fixed.len_max = 10;  // feature length 120
    Corpus cf = generate_corpus(fixed, {{{Task::kSt, "a", "x"}, 50, "t"}}, 4);
    BatchStream stream(cf, 3.0, 4000, 5);
    for (int i = 0; i < 200; ++i) {
      Batch b = stream.next();
      CHECK(b.samples.size() <= 33);
    }
  }
  SUBCASE("single-sample corpus: every batch is that sample") {
    Corpus one;
    one.samples.push_back(c.samples[0]);
    BatchStream stream(one, 3.0, 4000, 6);
    for (int i = 0; i < 20; ++i) {
      Batch b = stream.next();
      for (const Sample* s : b.samples)
        CHECK(s->utterance_id == one.samples[0].utterance_id);
    }
  }
  SUBCASE("overlong samples are skipped with a warning") {
    BatchStream stream(c, 3.0, 9, 8);  // shortest speech sample is 2*4=8 frames
    CHECK(!stream.warnings().empty());
  }
  SUBCASE("empirical pair frequencies track p_k within 1% absolute") {
    BatchStream stream(c, 3.0, 200, 99);
    PairStats stats;
    stats.add("st:a-x", 40);
    stats.add("st:b-x", 160);
    stats.add("mt:b-y", 80);
    auto p = pair_probabilities(stats, 3.0);
    std::map<std::string, int64_t> counts;
    int64_t total = 0;
    while (total < 1000000) {
      Batch b = stream.next();
      for (const Sample* s : b.samples) {
        ++counts[s->pair().str()];
        ++total;
      }
    }
    CHECK(std::abs(double(counts["st:a-x"]) / total - p[0]) < 0.01);
    CHECK(std::abs(double(counts["st:b-x"]) / total - p[1]) < 0.01);
    CHECK(std::abs(double(counts["mt:b-y"]) / total - p[2]) < 0.01);
  }
}

TEST_CASE("contamination filter") {
  CorpusSpec spec = tiny_spec();
  Corpus train = generate_corpus(spec, {{{Task::kAsr, "b", "b"}, 10, "train"}}, 1);
  Corpus held1 = generate_corpus(spec, {{{Task::kAsr, "b", "b"}, 5, "valid"}}, 2);

  SUBCASE("disjoint ids: identity, order preserved") {
    ContaminationReport rep;
    Corpus out = filter_contamination(train, {&held1}, &rep);
    CHECK(out.size() == train.size());
    CHECK(rep.removed == 0);
    for (size_t i = 0; i < out.size(); ++i)
      CHECK(out.samples[i].utterance_id == train.samples[i].utterance_id);
  }
  SUBCASE("set difference with rate report, idempotent") {
    Corpus contaminated = train;
    contaminated.samples.push_back(held1.samples[1]);
    contaminated.samples.push_back(held1.samples[3]);
    ContaminationReport rep;
    Corpus out = filter_contamination(contaminated, {&held1}, &rep);
    CHECK(out.size() == train.size());
    CHECK(rep.removed == 2);
    CHECK(rep.rate() == doctest::Approx(2.0 / 12.0));
    ContaminationReport rep2;
    Corpus out2 = filter_contamination(out, {&held1}, &rep2);
    CHECK(rep2.removed == 0);
    CHECK(out2.size() == out.size());
  }
  SUBCASE("explicit a,b,c minus b") {
    Corpus t3;
    for (const char* id : {"a", "b", "c"}) {
      Sample s;
      s.utterance_id = id;
      s.task = Task::kMt;
      s.src_lang = "a";
      s.tgt_lang = "x";
      t3.samples.push_back(s);
    }
    Corpus held;
    Sample hb;
    hb.utterance_id = "b";
    held.samples.push_back(hb);
    Corpus out = filter_contamination(t3, {&held});
    REQUIRE(out.size() == 2);
    CHECK(out.samples[0].utterance_id == "a");
    CHECK(out.samples[1].utterance_id == "c");
  }
}

TEST_CASE("pair keys parse and print") {
  PairKey k = PairKey::parse("st:a-x");
  CHECK(k.task == Task::kSt);
  CHECK(k.src == "a");
  CHECK(k.tgt == "x");
  CHECK(k.str() == "st:a-x");
  CHECK_THROWS_AS(PairKey::parse("nope"), Error);
  CHECK_THROWS_AS(PairKey::parse("zz:a-b"), Error);
}
