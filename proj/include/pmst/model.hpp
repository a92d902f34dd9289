#ifndef PMST_MODEL_HPP
#define PMST_MODEL_HPP

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pmst/autograd.hpp"
#include "pmst/rng.hpp"
#include "pmst/tensor.hpp"
#include "pmst/vocab.hpp"

namespace pmst {

struct ModelConfig {
  int enc_layers = 4;
  int dec_layers = 4;
  int d_model = 64;
  int ffn_dim = 256;
  int heads = 4;
  bool pre_norm = true;
  int conv_layers = 1;  // 0..3
  int conv_channels = 16;
  int kernel = 5;
  int stride = 2;
  int feature_dim = 16;
  double dropout = 0.3;
  double attention_dropout = 0.1;
  int stacked_layers = 0;  // new bottom layers on the speech route
  int max_positions = 4096;
  double ln_eps = 1e-5;

  void validate() const;
};

// Bottleneck adapters after each encoder/decoder layer. Layers listed in
// `encoder_skip` (the fine-tuned bottom layers) get none. A disabled or
// freshly initialized adapter is an exact identity on the residual stream.
struct AdapterSpec {
  int bottleneck_dim = 64;
  bool encoder = true;
  bool decoder = true;
  std::vector<int> encoder_skip;
};

struct AdapterToggles {
  bool encoder = true;
  bool decoder = true;
};

enum class Route { kSpeech, kText };

struct SourceInput {
  Route route = Route::kText;
  const Tensor* features = nullptr;  // speech
  std::vector<int> tokens;           // text (content ids in the model's vocab)
  std::string src_lang;
  std::string tgt_lang;
};

struct FreezePlan {
  enum class Mode { kFineTuneBottom, kStacked, kAdaptersOnly, kFull };
  Mode mode = Mode::kFull;
  int bottom_layers = 0;  // kFineTuneBottom: encoder layers 0..k-1
  // kAdaptersOnly scope:
  bool base_adapters = true;                  // train the existing adapter set
  std::vector<std::string> adapter_groups;    // incremental groups (by source language)
  bool include_conv = false;

  static FreezePlan fine_tune_bottom(int k);
  static FreezePlan stacked();
  static FreezePlan adapters_only(bool base, std::vector<std::string> groups, bool conv);
  static FreezePlan full();
};

struct DropoutCtx {
  Rng* rng = nullptr;
  double p = 0.0;       // embeddings, residual branches, FFN activations
  double p_attn = 0.0;  // attention probabilities
};

// Caches parameter nodes per graph so shared tensors (the tied embedding in
// particular) enter the tape once per forward pass.
struct GraphCtx {
  Graph& g;
  DropoutCtx* dropout = nullptr;  // null during inference
  std::map<const Parameter*, NodeId> param_nodes;
};

class Model {
 public:
  ModelConfig config;
  AdapterSpec adapters;
  Vocab vocab;
  std::map<std::string, Parameter> params;

  // language-scoped adapter groups added by incremental learning; active in
  // the listed encoder layers when the input's source language matches
  struct IncrementalGroup {
    std::string src_lang;
    int dim = 0;
    std::vector<int> enc_layers;
  };
  std::vector<IncrementalGroup> inc_groups;

  // bookkeeping for swap_bottom_layers: how many bottom encoder layers the
  // training plan fine-tuned
  int ft_bottom_k = 0;
  int64_t step = 0;

  static Model build(const ModelConfig& cfg, const AdapterSpec& spec, const Vocab& vocab,
                     uint64_t seed);

  // encoder input ids on the text route: [src tag] + tokens + [eos]
  std::vector<int> encoder_ids(const SourceInput& input) const;
  // decoder input: [tgt tag] + target tokens (the tag is the forced first token)
  std::vector<int> decoder_input(const std::string& tgt_lang,
                                 std::span<const int> target) const;

  NodeId encode(GraphCtx& ctx, const SourceInput& input, const AdapterToggles& t);
  // returns (prefix_len x vocab) logits; decoder_prefix includes the target tag
  NodeId decode(GraphCtx& ctx, NodeId encoder_out, std::span<const int> decoder_prefix,
                const AdapterToggles& t);
  NodeId forward(GraphCtx& ctx, const SourceInput& input,
                 std::span<const int> decoder_prefix, const AdapterToggles& t);

  void add_incremental_group(const std::string& src_lang, int dim,
                             const std::vector<int>& enc_layers, uint64_t seed);

  int64_t total_params() const;
  int64_t param_count(const std::set<std::string>& names) const;

  std::map<std::string, Tensor> snapshot() const;
  void restore(const std::map<std::string, Tensor>& snap);

  // re-index embedding rows after vocabulary filtering
  void apply_vocab_filter(const Vocab& filtered);

 private:
  Parameter& p(const std::string& name);
  const Parameter& p(const std::string& name) const;
  NodeId pnode(GraphCtx& ctx, const std::string& name);
  NodeId embed_positions(GraphCtx& ctx, NodeId x);
  NodeId maybe_dropout(GraphCtx& ctx, NodeId x, double rate);
  NodeId attention(GraphCtx& ctx, const std::string& prefix, NodeId q_in, NodeId kv_in,
                   bool causal);
  NodeId ffn_block(GraphCtx& ctx, const std::string& prefix, NodeId x);
  NodeId adapter(GraphCtx& ctx, const std::string& prefix, NodeId x);
  NodeId encoder_layer(GraphCtx& ctx, const std::string& prefix, NodeId x);
  NodeId decoder_layer(GraphCtx& ctx, const std::string& prefix, NodeId x, NodeId enc_out);
  NodeId speech_frontend(GraphCtx& ctx, const Tensor& features);

  friend Model swap_bottom_layers(const Model& st_model, const Model& pretrained_mt);
};

// Returns a copy of `st_model` whose fine-tuned bottom encoder layers are
// replaced by the pre-trained model's; its text route is then
// parameter-identical to `pretrained_mt` except for retained adapters.
Model swap_bottom_layers(const Model& st_model, const Model& pretrained_mt);

// Marks requires_grad per plan and returns the trainable-name set.
std::set<std::string> apply_freeze_plan(Model& model, const FreezePlan& plan);

// sinusoidal table; depends only on (len, d_model)
Tensor sinusoidal_positions(int64_t len, int d_model);

void save_model(const Model& m, const std::string& path,
                const std::string& metric_digest = "");
Model load_model(const std::string& path);

}  // namespace pmst

#endif
