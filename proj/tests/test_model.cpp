#include <cmath>

#include "doctest.h"
#include "pmst/corpus.hpp"
#include "pmst/model.hpp"
#include "pmst/rng.hpp"
#include "pmst/training.hpp"

using namespace pmst;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.enc_layers = 2;
  cfg.dec_layers = 2;
  cfg.d_model = 16;
  cfg.ffn_dim = 32;
  cfg.heads = 2;
  cfg.conv_layers = 1;
  cfg.conv_channels = 8;
  cfg.feature_dim = 6;
  cfg.dropout = 0.0;
  cfg.attention_dropout = 0.0;
  return cfg;
}

Vocab tiny_vocab() { return Vocab({"a", "b", "x", "y"}, 12); }

Tensor random_features(int64_t len, int dim, uint64_t seed) {
  Tensor t(len, dim);
  Rng rng(seed);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

Tensor text_logits(Model& m, const std::vector<int>& tokens, const std::string& src,
                   const std::string& tgt, const AdapterToggles& t,
                   const std::vector<int>& target) {
  Graph g;
  GraphCtx ctx{g, nullptr, {}};
  SourceInput in;
  in.route = Route::kText;
  in.tokens = tokens;
  in.src_lang = src;
  in.tgt_lang = tgt;
  NodeId out = m.forward(ctx, in, m.decoder_input(tgt, target), t);
  return g.value(out);
}

Tensor speech_logits(Model& m, const Tensor& feats, const std::string& src,
                     const std::string& tgt, const AdapterToggles& t,
                     const std::vector<int>& target) {
  Graph g;
  GraphCtx ctx{g, nullptr, {}};
  SourceInput in;
  in.route = Route::kSpeech;
  in.features = &feats;
  in.src_lang = src;
  in.tgt_lang = tgt;
  NodeId out = m.forward(ctx, in, m.decoder_input(tgt, target), t);
  return g.value(out);
}

}  // namespace

TEST_CASE("build determinism: same seed, same parameters; count is stable") {
  Vocab v = tiny_vocab();
  Model m1 = Model::build(tiny_config(), AdapterSpec{}, v, 7);
  Model m2 = Model::build(tiny_config(), AdapterSpec{}, v, 7);
  Model m3 = Model::build(tiny_config(), AdapterSpec{}, v, 8);
  CHECK(m1.total_params() == m2.total_params());
  bool all_equal = true, any_diff = false;
  for (const auto& [name, p] : m1.params) {
    if (p.value.data != m2.params.at(name).value.data) all_equal = false;
    if (p.value.data != m3.params.at(name).value.data) any_diff = true;
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("adapter parameter count: bottleneck 64 at d_model 64 is 8320 per adapter") {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 64;
  cfg.heads = 4;
  cfg.enc_layers = 4;
  cfg.dec_layers = 4;
  AdapterSpec spec;
  spec.bottleneck_dim = 64;
  Model m = Model::build(cfg, spec, tiny_vocab(), 1);
  int64_t per_adapter = 0;
  for (const auto& [name, p] : m.params)
    if (name.rfind("ad.enc.0.", 0) == 0) per_adapter += p.value.numel();
  CHECK(per_adapter == 2 * (64 * 64) + 64 + 64);
}

TEST_CASE("identity at init: fresh adapters change nothing, toggles agree") {
  Vocab v = tiny_vocab();
  Model with = Model::build(tiny_config(), AdapterSpec{}, v, 3);
  AdapterSpec none;
  none.encoder = false;
  none.decoder = false;
  Model without = Model::build(tiny_config(), none, v, 3);

  std::vector<int> tokens{v.content_token("a", 0), v.content_token("a", 5)};
  std::vector<int> target{v.content_token("x", 1)};
  Tensor feats = random_features(9, 6, 21);

  Tensor on = text_logits(with, tokens, "a", "x", {true, true}, target);
  Tensor off = text_logits(with, tokens, "a", "x", {false, false}, target);
  Tensor bare = text_logits(without, tokens, "a", "x", {true, true}, target);
  CHECK(on.data == off.data);    // exact, not approximate
  CHECK(on.data == bare.data);   // same named init => same backbone

  Tensor s_on = speech_logits(with, feats, "a", "x", {true, true}, target);
  Tensor s_off = speech_logits(with, feats, "a", "x", {false, false}, target);
  CHECK(s_on.data == s_off.data);
}

TEST_CASE("speech route: conv halves the sequence, encoder sees L'") {
  ModelConfig cfg = tiny_config();
  Vocab v = tiny_vocab();
  for (int layers : {0, 1, 2, 3}) {
    cfg.conv_layers = layers;
    Model m = Model::build(cfg, AdapterSpec{}, v, 5);
    Graph g;
    GraphCtx ctx{g, nullptr, {}};
    Tensor feats = random_features(100, 6, 13);
    SourceInput in;
    in.route = Route::kSpeech;
    in.features = &feats;
    in.src_lang = "a";
    in.tgt_lang = "x";
    NodeId enc = m.encode(ctx, in, {});
    int64_t expect = 100;
    for (int i = 0; i < layers; ++i) expect = (expect - 1) / 2 + 1;
    CHECK(g.value(enc).rows() == expect);
  }
}

TEST_CASE("text route adds src tag and eos; unknown languages rejected") {
  Model m = Model::build(tiny_config(), AdapterSpec{}, tiny_vocab(), 5);
  SourceInput in;
  in.route = Route::kText;
  in.tokens = {m.vocab.content_token("a", 2)};
  in.src_lang = "a";
  in.tgt_lang = "x";
  CHECK(m.encoder_ids(in) ==
        std::vector<int>{m.vocab.lang_tag("a"), m.vocab.content_token("a", 2), Vocab::kEos});
  Graph g;
  GraphCtx ctx{g, nullptr, {}};
  NodeId enc = m.encode(ctx, in, {});
  CHECK(g.value(enc).rows() == 3);

  SourceInput bad = in;
  bad.src_lang = "qq";
  Graph g2;
  GraphCtx ctx2{g2, nullptr, {}};
  CHECK_THROWS_AS(m.encode(ctx2, bad, {}), Error);
}

TEST_CASE("route consistency: text batches leave conv gradients absent") {
  Model m = Model::build(tiny_config(), AdapterSpec{}, tiny_vocab(), 5);
  for (auto& [name, p] : m.params) p.requires_grad = true;
  Sample s;
  s.task = Task::kMt;
  s.src_lang = "a";
  s.tgt_lang = "x";
  s.src_tokens = {m.vocab.content_token("a", 1), m.vocab.content_token("a", 2)};
  s.tgt_tokens = {m.vocab.content_token("x", 1), m.vocab.content_token("x", 2)};
  forward_backward(m, s, 0.1);
  for (const auto& [name, p] : m.params) {
    if (name.rfind("sp.", 0) == 0 || name.rfind("stk.", 0) == 0) {
      CHECK_FALSE(p.has_grad);
    }
  }
  CHECK(m.params.at("embed.tokens").has_grad);
}

TEST_CASE("freeze plans produce the documented trainable sets") {
  ModelConfig cfg = tiny_config();
  cfg.enc_layers = 4;
  cfg.dec_layers = 4;
  AdapterSpec spec;
  spec.encoder_skip = {0, 1, 2};  // fine-tuned bottom layers carry no adapters
  Model m = Model::build(cfg, spec, tiny_vocab(), 2);

  SUBCASE("fine_tune_bottom(3) on a 4-layer encoder") {
    auto set = apply_freeze_plan(m, FreezePlan::fine_tune_bottom(3));
    CHECK(m.ft_bottom_k == 3);
    CHECK(set.count("enc.0.sa.wq"));
    CHECK(set.count("enc.2.ffn.w1"));
    CHECK_FALSE(set.count("enc.3.sa.wq"));  // top layer frozen
    CHECK_FALSE(set.count("dec.0.sa.wq"));  // decoder frozen
    CHECK_FALSE(set.count("embed.tokens"));
    CHECK(set.count("ad.dec.0.up.w"));      // adapters trainable
    CHECK(set.count("ad.enc.3.up.w"));
    CHECK_FALSE(m.params.count("ad.enc.0.up.w"));  // no adapter in FT layers
    CHECK(set.count("sp.pre.w"));
    CHECK(set.count("sp.conv.0.w"));
    CHECK(set.count("sp.post.w"));
    for (const auto& [name, p] : m.params)
      CHECK(p.requires_grad == (set.count(name) > 0));
  }
  SUBCASE("k beyond the encoder depth is an error") {
    CHECK_THROWS_AS(apply_freeze_plan(m, FreezePlan::fine_tune_bottom(5)), Error);
  }
  SUBCASE("stacked: only new layers, frontend and adapters train") {
    ModelConfig scfg = cfg;
    scfg.stacked_layers = 1;
    AdapterSpec all_adapters;  // stacked mode keeps adapters in all original layers
    Model sm = Model::build(scfg, all_adapters, tiny_vocab(), 2);
    auto set = apply_freeze_plan(sm, FreezePlan::stacked());
    CHECK(set.count("stk.0.sa.wq"));
    CHECK(set.count("sp.conv.0.w"));
    CHECK(set.count("ad.enc.0.up.w"));
    CHECK(set.count("ad.dec.3.up.w"));
    for (int i = 0; i < 4; ++i) {
      CHECK_FALSE(set.count("enc." + std::to_string(i) + ".sa.wq"));
      CHECK_FALSE(set.count("dec." + std::to_string(i) + ".sa.wq"));
    }
    CHECK_FALSE(set.count("embed.tokens"));
    // stacked mode requires stacked layers in the model
    CHECK_THROWS_AS(apply_freeze_plan(m, FreezePlan::stacked()), Error);
  }
  SUBCASE("adapters_only and incremental groups") {
    auto set = apply_freeze_plan(m, FreezePlan::adapters_only(true, {}, false));
    for (const auto& name : set) CHECK(name.rfind("ad.", 0) == 0);
    CHECK_THROWS_AS(apply_freeze_plan(m, FreezePlan::adapters_only(false, {"zz"}, false)),
                    Error);

    m.add_incremental_group("a", 256, {0, 1, 2}, 77);
    auto inc = apply_freeze_plan(m, FreezePlan::adapters_only(false, {"a"}, true));
    CHECK(inc.count("ad.inc.a.enc.0.up.w"));
    CHECK(inc.count("sp.conv.0.w"));
    CHECK_FALSE(inc.count("ad.dec.0.up.w"));
    CHECK_FALSE(inc.count("sp.pre.w"));  // conv stack only

    // bottom-only group is strictly smaller than bottom + all existing
    auto all = apply_freeze_plan(m, FreezePlan::adapters_only(true, {"a"}, false));
    CHECK(m.param_count(inc) < m.param_count(all));
  }
  SUBCASE("full plan covers everything") {
    auto set = apply_freeze_plan(m, FreezePlan::full());
    CHECK(set.size() == m.params.size());
  }
}

TEST_CASE("incremental adapters are scoped to their source language") {
  Model m = Model::build(tiny_config(), AdapterSpec{}, tiny_vocab(), 4);
  m.add_incremental_group("b", 32, {0}, 9);
  // zero-initialized: identity for everyone
  std::vector<int> target{m.vocab.content_token("x", 0)};
  Tensor feats = random_features(8, 6, 3);
  Tensor before_b = speech_logits(m, feats, "b", "x", {true, true}, target);

  // make the group non-trivial; only language b routes through it
  Tensor before_a = speech_logits(m, feats, "a", "x", {true, true}, target);
  for (auto& v : m.params.at("ad.inc.b.enc.0.up.w").value.data) v = 0.5;
  Tensor after_a = speech_logits(m, feats, "a", "x", {true, true}, target);
  Tensor after_b = speech_logits(m, feats, "b", "x", {true, true}, target);
  CHECK(before_a.data == after_a.data);
  CHECK(before_b.data != after_b.data);
  // encoder toggle gates the group as well
  Tensor b_off = speech_logits(m, feats, "b", "x", {false, true}, target);
  CHECK(b_off.data == before_b.data);

  CHECK_THROWS_AS(m.add_incremental_group("b", 32, {0}, 9), Error);
  CHECK_THROWS_AS(m.add_incremental_group("zz", 32, {0}, 9), Error);
}

TEST_CASE("stacked layers run on the speech route only") {
  ModelConfig cfg = tiny_config();
  cfg.stacked_layers = 1;
  Model m = Model::build(cfg, AdapterSpec{}, tiny_vocab(), 6);
  std::vector<int> tokens{m.vocab.content_token("a", 3)};
  std::vector<int> target{m.vocab.content_token("x", 3)};
  Tensor feats = random_features(8, 6, 31);

  Tensor text_before = text_logits(m, tokens, "a", "x", {}, target);
  Tensor speech_before = speech_logits(m, feats, "a", "x", {}, target);
  for (auto& v : m.params.at("stk.0.ffn.w1").value.data) v += 0.25;
  Tensor text_after = text_logits(m, tokens, "a", "x", {}, target);
  Tensor speech_after = speech_logits(m, feats, "a", "x", {}, target);
  CHECK(text_before.data == text_after.data);      // bypassed on text
  CHECK(speech_before.data != speech_after.data);  // active on speech
}

TEST_CASE("swap_bottom_layers restores the pretrained bottom") {
  ModelConfig cfg = tiny_config();
  Vocab v = tiny_vocab();
  AdapterSpec none;
  none.encoder = false;
  none.decoder = false;
  Model mt = Model::build(cfg, none, v, 11);

  AdapterSpec spec;
  spec.encoder_skip = {0};
  Model st = Model::build(cfg, spec, v, 12);
  for (auto& [name, p] : st.params) {
    auto it = mt.params.find(name);
    if (it != mt.params.end() && it->second.value.shape == p.value.shape &&
        (name.rfind("enc.", 0) == 0 || name.rfind("dec.", 0) == 0 ||
         name.rfind("embed.", 0) == 0))
      p.value = it->second.value;
  }
  st.ft_bottom_k = 1;

  SUBCASE("swap on an untrained model is a no-op") {
    Model swapped = swap_bottom_layers(st, mt);
    for (const auto& [name, p] : st.params)
      CHECK(p.value.data == swapped.params.at(name).value.data);
  }
  SUBCASE("swap undoes bottom-layer updates") {
    Model touched = st;
    for (auto& val : touched.params.at("enc.0.sa.wq").value.data) val += 0.1;
    Model swapped = swap_bottom_layers(touched, mt);
    CHECK(swapped.params.at("enc.0.sa.wq").value.data ==
          mt.params.at("enc.0.sa.wq").value.data);
    CHECK(swapped.ft_bottom_k == 0);
  }
  SUBCASE("shape mismatch is an error") {
    ModelConfig other = cfg;
    other.d_model = 32;
    other.heads = 2;
    Model big = Model::build(other, none, v, 1);
    CHECK_THROWS_AS(swap_bottom_layers(st, big), Error);
  }
}

TEST_CASE("sinusoidal positions depend only on (len, d_model)") {
  Tensor a = sinusoidal_positions(64, 16);
  Tensor b = sinusoidal_positions(64, 16);
  CHECK(a.data == b.data);
  Tensor longer = sinusoidal_positions(128, 16);
  for (int64_t r = 0; r < 64; ++r)
    for (int64_t c = 0; c < 16; ++c) CHECK(a.at(r, c) == longer.at(r, c));
  CHECK(a.at(0, 0) == 0.0);
  CHECK(a.at(0, 1) == 1.0);
}

TEST_CASE("post-norm variant runs") {
  ModelConfig cfg = tiny_config();
  cfg.pre_norm = false;
  Model m = Model::build(cfg, AdapterSpec{}, tiny_vocab(), 3);
  std::vector<int> target{m.vocab.content_token("x", 0)};
  Tensor out = text_logits(m, {m.vocab.content_token("a", 0)}, "a", "x", {}, target);
  CHECK(out.rows() == 2);
  for (double x : out.data) CHECK(std::isfinite(x));
}

TEST_CASE("vocab filtering re-indexes the embedding and shrinks the model") {
  Model m = Model::build(tiny_config(), AdapterSpec{}, tiny_vocab(), 19);
  int64_t before = m.total_params();
  Tensor original_embed = m.params.at("embed.tokens").value;
  Vocab filtered = m.vocab.filter({"a", "x"});
  m.apply_vocab_filter(filtered);
  CHECK(m.total_params() < before);
  CHECK(m.vocab.size() == filtered.size());
  const Tensor& embed = m.params.at("embed.tokens").value;
  CHECK(embed.rows() == filtered.size());
  for (int row = 0; row < filtered.size(); ++row)
    for (int c = 0; c < 16; ++c)
      CHECK(embed.at(row, c) == original_embed.at(filtered.to_base(row), c));
}
