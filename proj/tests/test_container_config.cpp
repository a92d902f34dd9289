#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pmst/config.hpp"
#include "pmst/container.hpp"
#include "pmst/model.hpp"
#include "pmst/rng.hpp"

using namespace pmst;

TEST_CASE("container round trip is bit-exact") {
  std::filesystem::create_directories("test_tmp");
  std::map<std::string, Tensor> tensors;
  Rng rng(17);
  Tensor a(3, 5);
  for (auto& v : a.data) v = rng.normal();
  a.data[0] = -0.0;
  a.data[1] = 1e-308;  // denormal-adjacent values survive
  Tensor b(std::vector<int64_t>{2, 3, 4});
  for (auto& v : b.data) v = rng.normal() * 1e12;
  Tensor scalar(1, 1);
  scalar.data[0] = 0.1 + 0.2;
  tensors.emplace("alpha", a);
  tensors.emplace("beta", b);
  tensors.emplace("gamma.scalar", scalar);

  container::save("test_tmp/rt.ckpt", R"({"k":"v"})", tensors);
  container::File loaded = container::load("test_tmp/rt.ckpt");
  CHECK(loaded.header == R"({"k":"v"})");
  REQUIRE(loaded.tensors.size() == 3);
  for (const auto& [name, t] : tensors) {
    CHECK(loaded.tensors.at(name).shape == t.shape);
    CHECK(loaded.tensors.at(name).data == t.data);
  }
  CHECK(container::load_header("test_tmp/rt.ckpt") == R"({"k":"v"})");
}

TEST_CASE("container rejects wrong magic and version") {
  std::filesystem::create_directories("test_tmp");
  container::save("test_tmp/bad.ckpt", "{}", {});
  auto corrupt_byte = [](const std::string& path, size_t offset, char value) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(offset);
    f.put(value);
  };
  corrupt_byte("test_tmp/bad.ckpt", 0, 'X');
  CHECK_THROWS_WITH_AS(container::load("test_tmp/bad.ckpt"),
                       doctest::Contains("bad magic"), Error);

  container::save("test_tmp/badv.ckpt", "{}", {});
  corrupt_byte("test_tmp/badv.ckpt", 4, 9);
  CHECK_THROWS_WITH_AS(container::load("test_tmp/badv.ckpt"),
                       doctest::Contains("unsupported format version"), Error);

  CHECK_THROWS_AS(container::load("test_tmp/missing.ckpt"), Error);
}

TEST_CASE("model save/load round trip preserves everything") {
  std::filesystem::create_directories("test_tmp");
  ModelConfig cfg;
  cfg.enc_layers = 2;
  cfg.dec_layers = 2;
  cfg.d_model = 16;
  cfg.ffn_dim = 32;
  cfg.heads = 2;
  cfg.feature_dim = 6;
  cfg.conv_channels = 8;
  AdapterSpec spec;
  spec.encoder_skip = {0};
  Vocab v({"a", "b", "x"}, 10);
  Model m = Model::build(cfg, spec, v, 23);
  m.add_incremental_group("b", 24, {0}, 5);
  m.ft_bottom_k = 1;
  m.step = 777;

  save_model(m, "test_tmp/model.ckpt", "digestdeadbeef");
  Model loaded = load_model("test_tmp/model.ckpt");
  CHECK(loaded.config.enc_layers == 2);
  CHECK(loaded.config.d_model == 16);
  CHECK(loaded.adapters.encoder_skip == std::vector<int>{0});
  CHECK(loaded.vocab == m.vocab);
  CHECK(loaded.ft_bottom_k == 1);
  CHECK(loaded.step == 777);
  REQUIRE(loaded.inc_groups.size() == 1);
  CHECK(loaded.inc_groups[0].src_lang == "b");
  CHECK(loaded.inc_groups[0].dim == 24);
  REQUIRE(loaded.params.size() == m.params.size());
  for (const auto& [name, p] : m.params)
    CHECK(loaded.params.at(name).value.data == p.value.data);  // bit-exact

  SUBCASE("filtered vocab survives the round trip") {
    Model filtered = m;
    filtered.inc_groups.clear();
    // drop the group's tensors so the param sets stay consistent
    std::erase_if(filtered.params,
                  [](const auto& kv) { return kv.first.rfind("ad.inc.", 0) == 0; });
    filtered.apply_vocab_filter(filtered.vocab.filter({"a", "x"}));
    save_model(filtered, "test_tmp/filtered.ckpt");
    Model back = load_model("test_tmp/filtered.ckpt");
    CHECK(back.vocab.is_filtered());
    CHECK(back.vocab == filtered.vocab);
    CHECK(back.params.at("embed.tokens").value.data ==
          filtered.params.at("embed.tokens").value.data);
  }
}

TEST_CASE("run config: defaults, profiles, strict keys") {
  RunConfig cfg;
  CHECK(cfg.get("model.d_model") == "64");
  CHECK(cfg.get_int("train.max_updates") == 20000);
  CHECK(cfg.get_double("train.lr_max") == 0.0005);
  CHECK(cfg.get_bool("model.pre_norm"));

  SUBCASE("unknown keys rejected everywhere") {
    CHECK_THROWS_WITH_AS(cfg.set("model.bogus", "1"),
                         doctest::Contains("unknown key"), Error);
    CHECK_THROWS_AS(RunConfig::from_text("no_such_key = 3\n"), Error);
    CHECK_THROWS_AS(cfg.get("nope"), Error);
  }
  SUBCASE("type errors carry the key name") {
    cfg.set("train.max_updates", "abc");
    CHECK_THROWS_WITH_AS(cfg.get_int("train.max_updates"),
                         doctest::Contains("train.max_updates"), Error);
  }
  SUBCASE("paper profile echoes the published hyperparameters") {
    RunConfig paper;
    paper.apply_profile("paper");
    CHECK(paper.get("model.enc_layers") == "24");
    CHECK(paper.get("model.dec_layers") == "24");
    CHECK(paper.get("model.d_model") == "1024");
    CHECK(paper.get("model.ffn_dim") == "8192");
    CHECK(paper.get("model.heads") == "16");
    CHECK(paper.get("model.pre_norm") == "true");
    CHECK(paper.get("model.conv_layers") == "1");
    CHECK(paper.get("model.conv_channels") == "80");
    CHECK(paper.get("model.kernel") == "5");
    CHECK(paper.get("model.stride") == "2");
    CHECK(paper.get("model.dropout") == "0.3");
    CHECK(paper.get("model.attention_dropout") == "0.1");
    CHECK(paper.get("model.adapter_dim") == "64");
    CHECK(paper.get("train.max_updates") == "200000");
    CHECK(paper.get("train.warmup") == "10000");
    CHECK(paper.get("train.lr_max") == "0.0005");
    CHECK(paper.get("train.lr_init") == "1e-07");
    CHECK(paper.get("train.validate_every") == "5000");
    CHECK(paper.get("train.patience") == "5");
    CHECK(paper.get("train.avg_last") == "3");
    CHECK(paper.get("train.batch_cap") == "4000");
    CHECK(paper.get("train.update_freq") == "2");
    CHECK(paper.get("train.temperature") == "3");
    CHECK(paper.get("train.label_smoothing") == "0.2");
    CHECK(paper.get("train.weight_decay") == "0");
    CHECK(paper.get("train.grad_clip") == "0");
    CHECK(paper.get("train.adam_beta1") == "0.9");
    CHECK(paper.get("train.adam_beta2") == "0.999");
    // the dump echoes the same values
    std::string dump = paper.dump();
    CHECK(dump.find("model.d_model = 1024") != std::string::npos);
    CHECK(dump.find("train.warmup = 10000") != std::string::npos);
  }
  SUBCASE("profile applies before explicit keys regardless of order") {
    RunConfig c = RunConfig::from_text("model.d_model = 32\nprofile = paper\n");
    CHECK(c.get("model.d_model") == "32");      // explicit wins
    CHECK(c.get("model.enc_layers") == "24");   // profile fills the rest
  }
  SUBCASE("comments and blank lines") {
    RunConfig c = RunConfig::from_text("# comment\n\nmodel.heads = 8 # trailing\n");
    CHECK(c.get("model.heads") == "8");
  }
  SUBCASE("dump/hash are deterministic and order-insensitive") {
    RunConfig c1 = RunConfig::from_text("model.heads = 8\ntrain.patience = 7\n");
    RunConfig c2 = RunConfig::from_text("train.patience = 7\nmodel.heads = 8\n");
    CHECK(c1.dump() == c2.dump());
    CHECK(c1.hash() == c2.hash());
    CHECK(c1.hash() != RunConfig().hash());
  }
}

TEST_CASE("run config typed views") {
  RunConfig cfg;
  cfg.set("corpus.speech_pairs", "st:a-x:200, asr:b-b:1000");
  auto pairs = cfg.speech_pairs();
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].first.str() == "st:a-x");
  CHECK(pairs[0].second == 200);
  CHECK(pairs[1].first.task == Task::kAsr);
  CHECK(pairs[1].second == 1000);

  cfg.set("corpus.languages", "a,b");
  auto mt = cfg.mt_pairs();
  CHECK(mt.size() == 4);  // all ordered pairs incl. copies

  cfg.set("corpus.mt_pairs", "a-b,b-a");
  mt = cfg.mt_pairs();
  REQUIRE(mt.size() == 2);
  CHECK(mt[0].str() == "mt:a-b");

  ModelConfig mc = cfg.model_config();
  CHECK(mc.d_model == 64);
  TrainConfig tc = cfg.train_config();
  CHECK(tc.patience == 5);
  CHECK(tc.early_stop_pairs == std::vector<std::string>{"st:a-x"});
  TrainConfig pc = cfg.pretrain_config();
  CHECK(pc.max_updates == 4000);
  CHECK(pc.early_stop_pairs.empty());
  FreezePlan plan = cfg.freeze_plan();
  CHECK(plan.mode == FreezePlan::Mode::kFineTuneBottom);
  CHECK(plan.bottom_layers == 3);
  cfg.set("train.plan", "nonsense");
  CHECK_THROWS_AS(cfg.freeze_plan(), Error);
}
