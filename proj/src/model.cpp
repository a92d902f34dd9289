#include "pmst/model.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "pmst/container.hpp"

namespace pmst {

void ModelConfig::validate() const {
  PMST_CHECK(d_model >= 1 && heads >= 1 && d_model % heads == 0,
             "config error: d_model must be divisible by heads");
  PMST_CHECK(enc_layers >= 1 && dec_layers >= 1, "config error: need at least one layer");
  PMST_CHECK(conv_layers >= 0 && conv_layers <= 3, "config error: conv_layers must be 0..3");
  PMST_CHECK(ffn_dim >= 1 && feature_dim >= 1 && conv_channels >= 1,
             "config error: dims must be positive");
  PMST_CHECK(kernel >= 1 && stride >= 1, "config error: bad conv kernel/stride");
  PMST_CHECK(stacked_layers >= 0, "config error: stacked_layers must be >= 0");
  PMST_CHECK(dropout >= 0.0 && dropout < 1.0 && attention_dropout >= 0.0 &&
                 attention_dropout < 1.0,
             "config error: dropout out of range");
}

FreezePlan FreezePlan::fine_tune_bottom(int k) {
  FreezePlan p;
  p.mode = Mode::kFineTuneBottom;
  p.bottom_layers = k;
  return p;
}
FreezePlan FreezePlan::stacked() {
  FreezePlan p;
  p.mode = Mode::kStacked;
  return p;
}
FreezePlan FreezePlan::adapters_only(bool base, std::vector<std::string> groups, bool conv) {
  FreezePlan p;
  p.mode = Mode::kAdaptersOnly;
  p.base_adapters = base;
  p.adapter_groups = std::move(groups);
  p.include_conv = conv;
  return p;
}
FreezePlan FreezePlan::full() { return FreezePlan{}; }

Tensor sinusoidal_positions(int64_t len, int d_model) {
  Tensor pe(len, d_model);
  for (int64_t pos = 0; pos < len; ++pos) {
    for (int i = 0; i < d_model / 2; ++i) {
      double angle = static_cast<double>(pos) /
                     std::pow(10000.0, 2.0 * i / static_cast<double>(d_model));
      pe.at(pos, 2 * i) = std::sin(angle);
      if (2 * i + 1 < d_model) pe.at(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

// --- construction -------------------------------------------------------------

namespace {

constexpr double kMaskNegInf = -1e9;

void init_param(const std::string& name, Parameter& p, uint64_t seed, int d_model) {
  Rng rng(fnv1a(name, seed ^ 0xa5a5a5a55a5a5a5aull));
  const auto& shape = p.value.shape;
  bool is_bias = shape.size() == 1;
  if (name.find("_ln.") != std::string::npos || name.find("final_ln") != std::string::npos) {
    p.value.fill(name.back() == 'g' ? 1.0 : 0.0);
    return;
  }
  if (name.find(".up.w") != std::string::npos) return;  // zero: adapter identity at init
  if (is_bias) return;                                  // biases start at zero
  if (name == "embed.tokens") {
    double s = 1.0 / std::sqrt(static_cast<double>(d_model));
    for (auto& v : p.value.data) v = s * rng.normal();
    return;
  }
  int64_t fan_in, fan_out;
  if (shape.size() == 3) {  // conv kernels (out, in, k)
    fan_in = shape[1] * shape[2];
    fan_out = shape[0] * shape[2];
  } else {
    fan_in = shape[0];
    fan_out = shape[1];
  }
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : p.value.data) v = rng.uniform(-a, a);
}

}  // namespace

Model Model::build(const ModelConfig& cfg, const AdapterSpec& spec, const Vocab& vocab,
                   uint64_t seed) {
  cfg.validate();
  PMST_CHECK(spec.bottleneck_dim >= 1, "config error: adapter bottleneck must be >= 1");
  for (int skip : spec.encoder_skip)
    PMST_CHECK(skip >= 0 && skip < cfg.enc_layers, "config error: adapter skip layer out of range");

  Model m;
  m.config = cfg;
  m.adapters = spec;
  m.vocab = vocab;

  auto add = [&](const std::string& name, std::vector<int64_t> shape) {
    Parameter p;
    p.value = Tensor(std::move(shape));
    m.params.emplace(name, std::move(p));
  };

  int64_t d = cfg.d_model, f = cfg.ffn_dim, v = vocab.size();
  add("embed.tokens", {v, d});

  auto add_attention = [&](const std::string& prefix) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) add(prefix + w, {d, d});
    for (const char* b : {"bq", "bk", "bv", "bo"}) add(prefix + b, {d});
  };
  auto add_layer_core = [&](const std::string& prefix, bool cross) {
    add_attention(prefix + "sa.");
    add(prefix + "sa_ln.g", {d});
    add(prefix + "sa_ln.b", {d});
    if (cross) {
      add_attention(prefix + "ca.");
      add(prefix + "ca_ln.g", {d});
      add(prefix + "ca_ln.b", {d});
    }
    add(prefix + "ffn.w1", {d, f});
    add(prefix + "ffn.b1", {f});
    add(prefix + "ffn.w2", {f, d});
    add(prefix + "ffn.b2", {d});
    add(prefix + "ffn_ln.g", {d});
    add(prefix + "ffn_ln.b", {d});
  };
  auto add_adapter = [&](const std::string& prefix, int64_t bott) {
    add(prefix + "down.w", {d, bott});
    add(prefix + "down.b", {bott});
    add(prefix + "up.w", {bott, d});
    add(prefix + "up.b", {d});
  };

  for (int i = 0; i < cfg.enc_layers; ++i)
    add_layer_core("enc." + std::to_string(i) + ".", false);
  for (int i = 0; i < cfg.dec_layers; ++i)
    add_layer_core("dec." + std::to_string(i) + ".", true);
  for (int i = 0; i < cfg.stacked_layers; ++i)
    add_layer_core("stk." + std::to_string(i) + ".", false);
  if (cfg.pre_norm) {
    add("enc.final_ln.g", {d});
    add("enc.final_ln.b", {d});
    add("dec.final_ln.g", {d});
    add("dec.final_ln.b", {d});
  }

  if (spec.encoder) {
    for (int i = 0; i < cfg.enc_layers; ++i) {
      bool skipped = std::find(spec.encoder_skip.begin(), spec.encoder_skip.end(), i) !=
                     spec.encoder_skip.end();
      if (!skipped) add_adapter("ad.enc." + std::to_string(i) + ".", spec.bottleneck_dim);
    }
  }
  if (spec.decoder)
    for (int i = 0; i < cfg.dec_layers; ++i)
      add_adapter("ad.dec." + std::to_string(i) + ".", spec.bottleneck_dim);

  // speech frontend: feature projection, conv stack, projection into d_model
  add("sp.pre.w", {cfg.feature_dim, cfg.conv_channels});
  add("sp.pre.b", {cfg.conv_channels});
  for (int i = 0; i < cfg.conv_layers; ++i) {
    add("sp.conv." + std::to_string(i) + ".w",
        {cfg.conv_channels, cfg.conv_channels, cfg.kernel});
    add("sp.conv." + std::to_string(i) + ".b", {cfg.conv_channels});
  }
  add("sp.post.w", {cfg.conv_channels, d});
  add("sp.post.b", {d});

  for (auto& [name, p] : m.params) init_param(name, p, seed, cfg.d_model);
  return m;
}

void Model::add_incremental_group(const std::string& src_lang, int dim,
                                  const std::vector<int>& enc_layers, uint64_t seed) {
  PMST_CHECK(vocab.has_language(src_lang), "unknown language tag: " + src_lang);
  PMST_CHECK(dim >= 1, "adapter dim must be >= 1");
  PMST_CHECK(!enc_layers.empty(), "incremental group needs at least one layer");
  for (const auto& g : inc_groups)
    PMST_CHECK(g.src_lang != src_lang, "incremental group already exists for " + src_lang);
  for (int i : enc_layers)
    PMST_CHECK(i >= 0 && i < config.enc_layers, "incremental layer out of range");

  IncrementalGroup g{src_lang, dim, enc_layers};
  int64_t d = config.d_model;
  for (int i : enc_layers) {
    std::string prefix = "ad.inc." + src_lang + ".enc." + std::to_string(i) + ".";
    Parameter down_w, down_b, up_w, up_b;
    down_w.value = Tensor(std::vector<int64_t>{d, dim});
    down_b.value = Tensor(std::vector<int64_t>{dim});
    up_w.value = Tensor(std::vector<int64_t>{dim, d});
    up_b.value = Tensor(std::vector<int64_t>{d});
    params.emplace(prefix + "down.w", std::move(down_w));
    params.emplace(prefix + "down.b", std::move(down_b));
    params.emplace(prefix + "up.w", std::move(up_w));
    params.emplace(prefix + "up.b", std::move(up_b));
    for (const char* n : {"down.w", "down.b", "up.w", "up.b"})
      init_param(prefix + n, params.at(prefix + n), seed, config.d_model);
  }
  inc_groups.push_back(std::move(g));
}

Parameter& Model::p(const std::string& name) {
  auto it = params.find(name);
  PMST_CHECK(it != params.end(), "missing parameter: " + name);
  return it->second;
}
const Parameter& Model::p(const std::string& name) const {
  auto it = params.find(name);
  PMST_CHECK(it != params.end(), "missing parameter: " + name);
  return it->second;
}

NodeId Model::pnode(GraphCtx& ctx, const std::string& name) {
  Parameter& par = p(name);
  auto it = ctx.param_nodes.find(&par);
  if (it != ctx.param_nodes.end()) return it->second;
  NodeId id = ctx.g.param(par);
  ctx.param_nodes.emplace(&par, id);
  return id;
}

// --- forward pieces -----------------------------------------------------------

NodeId Model::maybe_dropout(GraphCtx& ctx, NodeId x, double rate) {
  if (!ctx.dropout || !ctx.dropout->rng || rate <= 0.0) return x;
  const Tensor& v = ctx.g.value(x);
  Tensor mask(v.shape);
  double keep = 1.0 - rate;
  for (auto& e : mask.data) e = ctx.dropout->rng->uniform() < rate ? 0.0 : 1.0 / keep;
  return ctx.g.mul_const(x, std::move(mask));
}

NodeId Model::embed_positions(GraphCtx& ctx, NodeId x) {
  const Tensor& v = ctx.g.value(x);
  PMST_CHECK(v.rows() <= config.max_positions, "sequence exceeds max positions");
  return ctx.g.add_const(x, sinusoidal_positions(v.rows(), config.d_model));
}

NodeId Model::attention(GraphCtx& ctx, const std::string& prefix, NodeId q_in, NodeId kv_in,
                        bool causal) {
  Graph& g = ctx.g;
  int heads = config.heads;
  int dh = config.d_model / heads;
  NodeId q = g.add_row_broadcast(g.matmul(q_in, pnode(ctx, prefix + "wq")),
                                 pnode(ctx, prefix + "bq"));
  NodeId k = g.add_row_broadcast(g.matmul(kv_in, pnode(ctx, prefix + "wk")),
                                 pnode(ctx, prefix + "bk"));
  NodeId v = g.add_row_broadcast(g.matmul(kv_in, pnode(ctx, prefix + "wv")),
                                 pnode(ctx, prefix + "bv"));
  int64_t lq = g.value(q).rows(), lk = g.value(k).rows();

  Tensor causal_mask;
  if (causal) {
    causal_mask = Tensor(lq, lk);
    for (int64_t i = 0; i < lq; ++i)
      for (int64_t j = i + 1; j < lk; ++j) causal_mask.at(i, j) = kMaskNegInf;
  }

  std::vector<NodeId> head_outs;
  for (int h = 0; h < heads; ++h) {
    NodeId qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    NodeId kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    NodeId vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    NodeId scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    if (causal) scores = g.add_const(scores, causal_mask);
    NodeId probs = g.softmax_rows(scores);
    if (ctx.dropout) probs = maybe_dropout(ctx, probs, ctx.dropout->p_attn);
    head_outs.push_back(g.matmul(probs, vh));
  }
  NodeId concat = g.concat_cols(head_outs);
  return g.add_row_broadcast(g.matmul(concat, pnode(ctx, prefix + "wo")),
                             pnode(ctx, prefix + "bo"));
}

NodeId Model::ffn_block(GraphCtx& ctx, const std::string& prefix, NodeId x) {
  Graph& g = ctx.g;
  NodeId h = g.relu(g.add_row_broadcast(g.matmul(x, pnode(ctx, prefix + "ffn.w1")),
                                        pnode(ctx, prefix + "ffn.b1")));
  if (ctx.dropout) h = maybe_dropout(ctx, h, ctx.dropout->p);
  return g.add_row_broadcast(g.matmul(h, pnode(ctx, prefix + "ffn.w2")),
                             pnode(ctx, prefix + "ffn.b2"));
}

// parameter-free layer norm + bottleneck, residual; exact identity while the
// up-projection is zero
NodeId Model::adapter(GraphCtx& ctx, const std::string& prefix, NodeId x) {
  Graph& g = ctx.g;
  int64_t d = config.d_model;
  Tensor ones({d}), zeros({d});
  ones.fill(1.0);
  NodeId z = g.layer_norm(x, g.constant(std::move(ones)), g.constant(std::move(zeros)),
                          config.ln_eps);
  z = g.relu(g.add_row_broadcast(g.matmul(z, pnode(ctx, prefix + "down.w")),
                                 pnode(ctx, prefix + "down.b")));
  z = g.add_row_broadcast(g.matmul(z, pnode(ctx, prefix + "up.w")),
                          pnode(ctx, prefix + "up.b"));
  return g.add(x, z);
}

// pre-norm: x + drop(f(ln(x)));  post-norm: ln(x + drop(f(x)))
NodeId Model::encoder_layer(GraphCtx& ctx, const std::string& prefix, NodeId x) {
  Graph& g = ctx.g;
  auto ln = [&](NodeId in, const std::string& lnp) {
    return g.layer_norm(in, pnode(ctx, lnp + ".g"), pnode(ctx, lnp + ".b"), config.ln_eps);
  };
  auto drop = [&](NodeId in) {
    return ctx.dropout ? maybe_dropout(ctx, in, ctx.dropout->p) : in;
  };
  if (config.pre_norm) {
    NodeId n = ln(x, prefix + "sa_ln");
    x = g.add(x, drop(attention(ctx, prefix + "sa.", n, n, false)));
    x = g.add(x, drop(ffn_block(ctx, prefix, ln(x, prefix + "ffn_ln"))));
  } else {
    x = ln(g.add(x, drop(attention(ctx, prefix + "sa.", x, x, false))), prefix + "sa_ln");
    x = ln(g.add(x, drop(ffn_block(ctx, prefix, x))), prefix + "ffn_ln");
  }
  return x;
}

NodeId Model::decoder_layer(GraphCtx& ctx, const std::string& prefix, NodeId x, NodeId enc_out) {
  Graph& g = ctx.g;
  auto ln = [&](NodeId in, const std::string& lnp) {
    return g.layer_norm(in, pnode(ctx, lnp + ".g"), pnode(ctx, lnp + ".b"), config.ln_eps);
  };
  auto drop = [&](NodeId in) {
    return ctx.dropout ? maybe_dropout(ctx, in, ctx.dropout->p) : in;
  };
  if (config.pre_norm) {
    NodeId n = ln(x, prefix + "sa_ln");
    x = g.add(x, drop(attention(ctx, prefix + "sa.", n, n, true)));
    x = g.add(x, drop(attention(ctx, prefix + "ca.", ln(x, prefix + "ca_ln"), enc_out, false)));
    x = g.add(x, drop(ffn_block(ctx, prefix, ln(x, prefix + "ffn_ln"))));
  } else {
    x = ln(g.add(x, drop(attention(ctx, prefix + "sa.", x, x, true))), prefix + "sa_ln");
    x = ln(g.add(x, drop(attention(ctx, prefix + "ca.", x, enc_out, false))), prefix + "ca_ln");
    x = ln(g.add(x, drop(ffn_block(ctx, prefix, x))), prefix + "ffn_ln");
  }
  return x;
}

NodeId Model::speech_frontend(GraphCtx& ctx, const Tensor& features) {
  Graph& g = ctx.g;
  PMST_CHECK(features.rows() >= 1, "empty sequence");
  PMST_CHECK(features.cols() == config.feature_dim, "feature width mismatch");
  NodeId h = g.constant(features);
  h = g.relu(g.add_row_broadcast(g.matmul(h, pnode(ctx, "sp.pre.w")), pnode(ctx, "sp.pre.b")));
  for (int i = 0; i < config.conv_layers; ++i) {
    std::string prefix = "sp.conv." + std::to_string(i) + ".";
    h = g.relu(g.conv1d(h, pnode(ctx, prefix + "w"), pnode(ctx, prefix + "b"), config.stride));
  }
  h = g.add_row_broadcast(g.matmul(h, pnode(ctx, "sp.post.w")), pnode(ctx, "sp.post.b"));
  h = g.scale(h, std::sqrt(static_cast<double>(config.d_model)));
  h = embed_positions(ctx, h);
  if (ctx.dropout) h = maybe_dropout(ctx, h, ctx.dropout->p);
  return h;
}

std::vector<int> Model::encoder_ids(const SourceInput& input) const {
  std::vector<int> ids;
  ids.push_back(vocab.lang_tag(input.src_lang));
  ids.insert(ids.end(), input.tokens.begin(), input.tokens.end());
  ids.push_back(Vocab::kEos);
  return ids;
}

std::vector<int> Model::decoder_input(const std::string& tgt_lang,
                                      std::span<const int> target) const {
  std::vector<int> ids;
  ids.push_back(vocab.lang_tag(tgt_lang));
  ids.insert(ids.end(), target.begin(), target.end());
  return ids;
}

NodeId Model::encode(GraphCtx& ctx, const SourceInput& input, const AdapterToggles& t) {
  Graph& g = ctx.g;
  PMST_CHECK(vocab.has_language(input.src_lang), "unknown language tag: " + input.src_lang);
  PMST_CHECK(vocab.has_language(input.tgt_lang), "unknown language tag: " + input.tgt_lang);

  NodeId h;
  if (input.route == Route::kSpeech) {
    PMST_CHECK(input.features != nullptr, "speech route needs a feature matrix");
    h = speech_frontend(ctx, *input.features);
    // stacked layers live below the frozen encoder, speech route only
    for (int i = 0; i < config.stacked_layers; ++i)
      h = encoder_layer(ctx, "stk." + std::to_string(i) + ".", h);
  } else {
    PMST_CHECK(input.features == nullptr, "text route got a feature matrix");
    std::vector<int> ids = encoder_ids(input);
    h = g.rows_lookup(pnode(ctx, "embed.tokens"), ids);
    h = g.scale(h, std::sqrt(static_cast<double>(config.d_model)));
    h = embed_positions(ctx, h);
    if (ctx.dropout) h = maybe_dropout(ctx, h, ctx.dropout->p);
  }

  const IncrementalGroup* inc = nullptr;
  for (const auto& grp : inc_groups)
    if (grp.src_lang == input.src_lang) inc = &grp;

  for (int i = 0; i < config.enc_layers; ++i) {
    h = encoder_layer(ctx, "enc." + std::to_string(i) + ".", h);
    if (t.encoder) {
      std::string base = "ad.enc." + std::to_string(i) + ".";
      if (params.count(base + "up.w")) h = adapter(ctx, base, h);
      if (inc && std::find(inc->enc_layers.begin(), inc->enc_layers.end(), i) !=
                     inc->enc_layers.end())
        h = adapter(ctx, "ad.inc." + inc->src_lang + ".enc." + std::to_string(i) + ".", h);
    }
  }
  if (config.pre_norm)
    h = g.layer_norm(h, pnode(ctx, "enc.final_ln.g"), pnode(ctx, "enc.final_ln.b"),
                     config.ln_eps);
  return h;
}

NodeId Model::decode(GraphCtx& ctx, NodeId encoder_out, std::span<const int> decoder_prefix,
                     const AdapterToggles& t) {
  Graph& g = ctx.g;
  PMST_CHECK(!decoder_prefix.empty(), "decoder prefix must start with the target tag");
  std::vector<int> ids(decoder_prefix.begin(), decoder_prefix.end());
  NodeId h = g.rows_lookup(pnode(ctx, "embed.tokens"), ids);
  h = g.scale(h, std::sqrt(static_cast<double>(config.d_model)));
  h = embed_positions(ctx, h);
  if (ctx.dropout) h = maybe_dropout(ctx, h, ctx.dropout->p);

  for (int i = 0; i < config.dec_layers; ++i) {
    h = decoder_layer(ctx, "dec." + std::to_string(i) + ".", h, encoder_out);
    if (t.decoder) {
      std::string base = "ad.dec." + std::to_string(i) + ".";
      if (params.count(base + "up.w")) h = adapter(ctx, base, h);
    }
  }
  if (config.pre_norm)
    h = g.layer_norm(h, pnode(ctx, "dec.final_ln.g"), pnode(ctx, "dec.final_ln.b"),
                     config.ln_eps);
  // tied output projection
  return g.matmul(h, g.transpose(pnode(ctx, "embed.tokens")));
}

NodeId Model::forward(GraphCtx& ctx, const SourceInput& input,
                      std::span<const int> decoder_prefix, const AdapterToggles& t) {
  NodeId enc = encode(ctx, input, t);
  return decode(ctx, enc, decoder_prefix, t);
}

// --- bookkeeping ----------------------------------------------------------------

int64_t Model::total_params() const {
  int64_t n = 0;
  for (const auto& [name, par] : params) n += par.value.numel();
  return n;
}

int64_t Model::param_count(const std::set<std::string>& names) const {
  int64_t n = 0;
  for (const auto& name : names) n += p(name).value.numel();
  return n;
}

std::map<std::string, Tensor> Model::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, par] : params) out.emplace(name, par.value);
  return out;
}

void Model::restore(const std::map<std::string, Tensor>& snap) {
  PMST_CHECK(snap.size() == params.size(), "restore: parameter set mismatch");
  for (auto& [name, par] : params) {
    auto it = snap.find(name);
    PMST_CHECK(it != snap.end(), "restore: missing " + name);
    PMST_CHECK(it->second.shape == par.value.shape, "restore: shape mismatch for " + name);
    par.value = it->second;
  }
}

void Model::apply_vocab_filter(const Vocab& filtered) {
  PMST_CHECK(!vocab.is_filtered(), "model vocabulary already filtered");
  PMST_CHECK(filtered.is_filtered(), "apply_vocab_filter expects a filtered vocab");
  Parameter& embed = p("embed.tokens");
  Tensor next(filtered.size(), config.d_model);
  for (int row = 0; row < filtered.size(); ++row) {
    int src = filtered.to_base(row);
    std::copy_n(embed.value.data.begin() + static_cast<int64_t>(src) * config.d_model,
                config.d_model, next.data.begin() + static_cast<int64_t>(row) * config.d_model);
  }
  embed.value = std::move(next);
  vocab = filtered;
}

Model swap_bottom_layers(const Model& st_model, const Model& pretrained_mt) {
  const ModelConfig& a = st_model.config;
  const ModelConfig& b = pretrained_mt.config;
  PMST_CHECK(a.enc_layers == b.enc_layers && a.dec_layers == b.dec_layers &&
                 a.d_model == b.d_model && a.ffn_dim == b.ffn_dim && a.heads == b.heads &&
                 a.pre_norm == b.pre_norm,
             "swap_bottom_layers: shape mismatch between models");
  PMST_CHECK(st_model.vocab == pretrained_mt.vocab,
             "swap_bottom_layers: vocabulary mismatch");
  Model out = st_model;
  for (int i = 0; i < st_model.ft_bottom_k; ++i) {
    std::string prefix = "enc." + std::to_string(i) + ".";
    for (auto& [name, par] : out.params) {
      if (name.rfind(prefix, 0) != 0) continue;
      const Parameter& src = pretrained_mt.p(name);
      PMST_CHECK(src.value.shape == par.value.shape,
                 "swap_bottom_layers: shape mismatch for " + name);
      par.value = src.value;
    }
  }
  out.ft_bottom_k = 0;
  return out;
}

std::set<std::string> apply_freeze_plan(Model& model, const FreezePlan& plan) {
  std::set<std::string> trainable;
  auto add_prefix = [&](const std::string& prefix) {
    for (const auto& [name, par] : model.params)
      if (name.rfind(prefix, 0) == 0) trainable.insert(name);
  };
  auto add_base_adapters = [&]() {
    add_prefix("ad.enc.");
    add_prefix("ad.dec.");
  };

  switch (plan.mode) {
    case FreezePlan::Mode::kFull:
      for (const auto& [name, par] : model.params) trainable.insert(name);
      model.ft_bottom_k = 0;
      break;
    case FreezePlan::Mode::kFineTuneBottom:
      PMST_CHECK(plan.bottom_layers >= 1 && plan.bottom_layers <= model.config.enc_layers,
                 "freeze plan: bottom layer count exceeds encoder depth");
      for (int i = 0; i < plan.bottom_layers; ++i)
        add_prefix("enc." + std::to_string(i) + ".");
      add_prefix("sp.");
      add_base_adapters();
      model.ft_bottom_k = plan.bottom_layers;
      break;
    case FreezePlan::Mode::kStacked:
      PMST_CHECK(model.config.stacked_layers >= 1,
                 "freeze plan: stacked mode needs stacked layers in the model");
      add_prefix("stk.");
      add_prefix("sp.");
      add_base_adapters();
      model.ft_bottom_k = 0;
      break;
    case FreezePlan::Mode::kAdaptersOnly: {
      if (plan.base_adapters) {
        bool any = false;
        for (const auto& [name, par] : model.params)
          if (name.rfind("ad.enc.", 0) == 0 || name.rfind("ad.dec.", 0) == 0) any = true;
        PMST_CHECK(any, "freeze plan: model has no adapters");
        add_base_adapters();
      }
      for (const auto& grp : plan.adapter_groups) {
        bool found = false;
        for (const auto& g : model.inc_groups)
          if (g.src_lang == grp) found = true;
        PMST_CHECK(found, "freeze plan: no adapter group for " + grp);
        add_prefix("ad.inc." + grp + ".");
      }
      if (plan.include_conv) add_prefix("sp.conv.");
      PMST_CHECK(!trainable.empty(), "freeze plan: empty trainable set");
      break;
    }
  }

  for (auto& [name, par] : model.params) par.requires_grad = trainable.count(name) > 0;
  return trainable;
}

// --- serialization -----------------------------------------------------------

void save_model(const Model& m, const std::string& path, const std::string& metric_digest) {
  nlohmann::json h;
  h["format"] = "pmst-model";
  h["config"] = {{"enc_layers", m.config.enc_layers},
                 {"dec_layers", m.config.dec_layers},
                 {"d_model", m.config.d_model},
                 {"ffn_dim", m.config.ffn_dim},
                 {"heads", m.config.heads},
                 {"pre_norm", m.config.pre_norm},
                 {"conv_layers", m.config.conv_layers},
                 {"conv_channels", m.config.conv_channels},
                 {"kernel", m.config.kernel},
                 {"stride", m.config.stride},
                 {"feature_dim", m.config.feature_dim},
                 {"dropout", m.config.dropout},
                 {"attention_dropout", m.config.attention_dropout},
                 {"stacked_layers", m.config.stacked_layers},
                 {"max_positions", m.config.max_positions},
                 {"ln_eps", m.config.ln_eps}};
  h["adapters"] = {{"bottleneck_dim", m.adapters.bottleneck_dim},
                   {"encoder", m.adapters.encoder},
                   {"decoder", m.adapters.decoder},
                   {"encoder_skip", m.adapters.encoder_skip}};
  std::vector<std::vector<int>> ranges;
  for (auto& [b, e] : m.vocab.ranges()) ranges.push_back({b, e});
  std::vector<int> to_base;
  if (m.vocab.is_filtered())
    for (int i = 0; i < m.vocab.size(); ++i) to_base.push_back(m.vocab.to_base(i));
  h["vocab"] = {{"languages", m.vocab.languages()},
                {"tokens_per_lang", m.vocab.tokens_per_lang()},
                {"ranges", ranges},
                {"total", m.vocab.size()},
                {"filtered", m.vocab.is_filtered()},
                {"to_base", to_base}};
  h["inc_groups"] = nlohmann::json::array();
  for (const auto& g : m.inc_groups)
    h["inc_groups"].push_back(
        {{"src_lang", g.src_lang}, {"dim", g.dim}, {"enc_layers", g.enc_layers}});
  h["ft_bottom_k"] = m.ft_bottom_k;
  h["step"] = m.step;
  h["metric_digest"] = metric_digest;

  container::save(path, h.dump(), m.snapshot());
}

Model load_model(const std::string& path) {
  container::File file = container::load(path);
  nlohmann::json h = nlohmann::json::parse(file.header);
  PMST_CHECK(h.value("format", "") == "pmst-model",
             "not a model checkpoint: " + path);

  Model m;
  const auto& c = h.at("config");
  m.config.enc_layers = c.at("enc_layers");
  m.config.dec_layers = c.at("dec_layers");
  m.config.d_model = c.at("d_model");
  m.config.ffn_dim = c.at("ffn_dim");
  m.config.heads = c.at("heads");
  m.config.pre_norm = c.at("pre_norm");
  m.config.conv_layers = c.at("conv_layers");
  m.config.conv_channels = c.at("conv_channels");
  m.config.kernel = c.at("kernel");
  m.config.stride = c.at("stride");
  m.config.feature_dim = c.at("feature_dim");
  m.config.dropout = c.at("dropout");
  m.config.attention_dropout = c.at("attention_dropout");
  m.config.stacked_layers = c.at("stacked_layers");
  m.config.max_positions = c.at("max_positions");
  m.config.ln_eps = c.at("ln_eps");

  const auto& a = h.at("adapters");
  m.adapters.bottleneck_dim = a.at("bottleneck_dim");
  m.adapters.encoder = a.at("encoder");
  m.adapters.decoder = a.at("decoder");
  m.adapters.encoder_skip = a.at("encoder_skip").get<std::vector<int>>();

  const auto& v = h.at("vocab");
  std::vector<std::pair<int, int>> ranges;
  for (const auto& r : v.at("ranges")) ranges.emplace_back(r[0], r[1]);
  m.vocab = Vocab::from_parts(v.at("languages").get<std::vector<std::string>>(),
                              v.at("tokens_per_lang"), std::move(ranges),
                              v.at("to_base").get<std::vector<int>>(), v.at("total"),
                              v.at("filtered"));

  for (const auto& g : h.at("inc_groups"))
    m.inc_groups.push_back({g.at("src_lang"), g.at("dim"),
                            g.at("enc_layers").get<std::vector<int>>()});
  m.ft_bottom_k = h.at("ft_bottom_k");
  m.step = h.at("step");

  for (auto& [name, tensor] : file.tensors) {
    Parameter par;
    par.value = std::move(tensor);
    m.params.emplace(name, std::move(par));
  }
  return m;
}

}  // namespace pmst
