// Spatially-guided transformer over heterogeneous electrode layouts:
// temporal patch encoder, coordinate-based spatial embedding, learnable
// temporal embedding, per-slice channel attention, pairwise-difference
// attention bias, and a pre-norm transformer stack that adds the bias
// to every layer's attention logits. One parameter set serves any
// channel count and any patch count up to max_time_patches.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hear/autodiff.hpp"
#include "hear/errors.hpp"
#include "hear/io.hpp"
#include "hear/rng.hpp"
#include "hear/tensor.hpp"

namespace hear {

enum class ModelVariant : std::uint8_t { tiny = 0, base = 1 };

inline const char* to_string(ModelVariant v) {
  return v == ModelVariant::tiny ? "tiny" : "base";
}

struct ModelConfig {
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 6;
  std::size_t num_heads = 4;
  std::size_t window_len = 200;
  std::size_t max_time_patches = 16;
  std::size_t codebook_size = 2048;
  ModelVariant variant = ModelVariant::tiny;
};

// Hidden width of the pairwise-coordinate bias MLP.
inline constexpr std::size_t kBiasHiddenDim = 32;
// Feed-forward expansion factor inside transformer blocks.
inline constexpr std::size_t kFfnMult = 4;

inline void validate(const ModelConfig& cfg) {
  if (cfg.hidden_dim == 0 || cfg.num_layers == 0 || cfg.num_heads == 0 ||
      cfg.window_len == 0 || cfg.max_time_patches == 0 ||
      cfg.codebook_size == 0) {
    throw ConfigError("model config fields must be positive");
  }
  if (cfg.hidden_dim % cfg.num_heads != 0) {
    throw ConfigError("hidden_dim " + std::to_string(cfg.hidden_dim) +
                      " not divisible by num_heads " +
                      std::to_string(cfg.num_heads));
  }
  const std::size_t want_layers = cfg.variant == ModelVariant::tiny ? 6 : 12;
  const std::size_t want_heads = cfg.variant == ModelVariant::tiny ? 4 : 8;
  if (cfg.num_layers != want_layers || cfg.num_heads != want_heads) {
    throw ConfigError(std::string("variant ") + to_string(cfg.variant) +
                      " requires " + std::to_string(want_layers) +
                      " layers and " + std::to_string(want_heads) + " heads");
  }
}

inline ModelConfig make_config(ModelVariant variant, std::size_t hidden_dim,
                               std::size_t window_len = 200,
                               std::size_t max_time_patches = 16,
                               std::size_t codebook_size = 2048) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.hidden_dim = hidden_dim;
  cfg.num_layers = variant == ModelVariant::tiny ? 6 : 12;
  cfg.num_heads = variant == ModelVariant::tiny ? 4 : 8;
  cfg.window_len = window_len;
  cfg.max_time_patches = max_time_patches;
  cfg.codebook_size = codebook_size;
  validate(cfg);
  return cfg;
}

// Named parameter registry with one gradient buffer per tensor.
// Iteration follows insertion order, which fixes both initialization
// draws and the checkpoint layout.
template <typename T>
class ParamStore {
 public:
  std::size_t add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) {
      throw ConfigError("duplicate parameter name: " + name);
    }
    index_.emplace(name, entries_.size());
    Entry e;
    e.name = name;
    e.grad = Tensor<T>(init.shape());
    e.value = std::move(init);
    entries_.push_back(std::move(e));
    return entries_.size() - 1;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  std::size_t count() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].name; }

  Tensor<T>& value(std::size_t i) { return entries_[i].value; }
  const Tensor<T>& value(std::size_t i) const { return entries_[i].value; }
  Tensor<T>& value(const std::string& name) { return value(index_of(name)); }
  const Tensor<T>& value(const std::string& name) const {
    return value(index_of(name));
  }

  Tensor<T>& grad(std::size_t i) { return entries_[i].grad; }
  const Tensor<T>& grad(std::size_t i) const { return entries_[i].grad; }
  Tensor<T>& grad(const std::string& name) { return grad(index_of(name)); }

  void zero_grads() {
    for (Entry& e : entries_) e.grad.fill(T(0));
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.value.size();
    return n;
  }

 private:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;
};

namespace detail {

template <typename T>
void add_weight(ParamStore<T>& ps, const std::string& name, Shape shape,
                Rng& rng) {
  ps.add(name, Tensor<T>::randn(std::move(shape), rng, T(0.02)));
}

template <typename T>
void add_zeros(ParamStore<T>& ps, const std::string& name, Shape shape) {
  ps.add(name, Tensor<T>(std::move(shape)));
}

template <typename T>
void add_ones(ParamStore<T>& ps, const std::string& name, Shape shape) {
  ps.add(name, Tensor<T>::full(std::move(shape), T(1)));
}

}  // namespace detail

// Fresh model: weights ~ normal(0, 0.02), biases zero, layernorm at
// identity. The draw order is fixed by the insertion sequence below.
template <typename T>
Model<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Model<T> m;
  m.config = cfg;
  Rng rng(mix64(seed, 0x6d6f64656c, 0));
  ParamStore<T>& ps = m.params;
  const std::size_t d = cfg.hidden_dim;
  const std::size_t h = cfg.num_heads;

  detail::add_weight(ps, "temporal.w1", {cfg.window_len, d}, rng);
  detail::add_zeros(ps, "temporal.b1", {d});
  detail::add_ones(ps, "temporal.ln_gamma", {d});
  detail::add_zeros(ps, "temporal.ln_beta", {d});
  detail::add_weight(ps, "temporal.w2", {d, d}, rng);
  detail::add_zeros(ps, "temporal.b2", {d});

  detail::add_weight(ps, "spatial.w1", {3, 2 * d}, rng);
  detail::add_zeros(ps, "spatial.b1", {2 * d});
  detail::add_weight(ps, "spatial.w2", {2 * d, d}, rng);
  detail::add_zeros(ps, "spatial.b2", {d});

  detail::add_weight(ps, "temporal_table", {cfg.max_time_patches, d}, rng);
  detail::add_weight(ps, "cls", {d}, rng);

  for (const char* nm : {"wq", "wk", "wv", "wo"}) {
    detail::add_weight(ps, std::string("chan_attn.") + nm, {d, d}, rng);
  }
  for (const char* nm : {"bq", "bk", "bv", "bo"}) {
    detail::add_zeros(ps, std::string("chan_attn.") + nm, {d});
  }

  detail::add_weight(ps, "bias_mlp.w1", {3, kBiasHiddenDim}, rng);
  detail::add_zeros(ps, "bias_mlp.b1", {kBiasHiddenDim});
  detail::add_weight(ps, "bias_mlp.w2", {kBiasHiddenDim, h}, rng);
  detail::add_zeros(ps, "bias_mlp.b2", {h});

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    detail::add_ones(ps, pre + "ln1.gamma", {d});
    detail::add_zeros(ps, pre + "ln1.beta", {d});
    for (const char* nm : {"wq", "wk", "wv", "wo"}) {
      detail::add_weight(ps, pre + "attn." + nm, {d, d}, rng);
    }
    for (const char* nm : {"bq", "bk", "bv", "bo"}) {
      detail::add_zeros(ps, pre + "attn." + nm, {d});
    }
    detail::add_ones(ps, pre + "ln2.gamma", {d});
    detail::add_zeros(ps, pre + "ln2.beta", {d});
    detail::add_weight(ps, pre + "ffn.w1", {d, kFfnMult * d}, rng);
    detail::add_zeros(ps, pre + "ffn.b1", {kFfnMult * d});
    detail::add_weight(ps, pre + "ffn.w2", {kFfnMult * d, d}, rng);
    detail::add_zeros(ps, pre + "ffn.b2", {d});
  }

  detail::add_ones(ps, "final_ln.gamma", {d});
  detail::add_zeros(ps, "final_ln.beta", {d});
  return m;
}

// Binds a tape to a model's parameters; each parameter becomes at most
// one tape node per graph.
template <typename T>
class GraphBuilder {
 public:
  GraphBuilder(Tape<T>& tape, Model<T>& model) : tape_(&tape), model_(&model) {}

  Tape<T>& tape() { return *tape_; }
  Model<T>& model() { return *model_; }
  const ModelConfig& config() const { return model_->config; }

  Var p(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    const std::size_t i = model_->params.index_of(name);
    Var v = tape_->param(model_->params.value(i), &model_->params.grad(i));
    cache_.emplace(name, v);
    return v;
  }

  // x[..., in] * W[in, out] + b[out]
  Var affine(Var x, const std::string& w, const std::string& b) {
    return tape_->add(tape_->matmul(x, p(w)), p(b));
  }

 private:
  Tape<T>* tape_;
  Model<T>* model_;
  std::unordered_map<std::string, Var> cache_;
};

// Per-patch encoder: linear projection to the hidden width, layer
// normalization, then one nonlinear layer. Position-independent by
// construction.
template <typename T>
Var temporal_encode(GraphBuilder<T>& gb, Var patches) {
  Tape<T>& tp = gb.tape();
  const Shape s = tp.value(patches).shape();
  if (s.size() != 4) {
    throw ShapeMismatch("temporal_encode: expected [B,C,N_t,w], got " +
                        shape_str(s));
  }
  if (s[3] != gb.config().window_len) {
    throw ShapeMismatch("temporal_encode: patch window " +
                        std::to_string(s[3]) + " != config window " +
                        std::to_string(gb.config().window_len));
  }
  const std::size_t d = gb.config().hidden_dim;
  Var x = tp.reshape(patches, {s[0] * s[1] * s[2], s[3]});
  x = gb.affine(x, "temporal.w1", "temporal.b1");
  x = tp.layernorm(x, gb.p("temporal.ln_gamma"), gb.p("temporal.ln_beta"));
  x = tp.gelu(x);
  x = gb.affine(x, "temporal.w2", "temporal.b2");
  return tp.reshape(x, {s[0], s[1], s[2], d});
}

// 3D electrode coordinates to embedding rows; row e depends only on
// coords[e]. Coordinates are in meters, pre-scaled to decimeters so
// typical head positions land near unit range.
template <typename T>
Var spatial_embed(GraphBuilder<T>& gb, Var coords) {
  Tape<T>& tp = gb.tape();
  const Tensor<T>& cv = tp.value(coords);
  if (cv.rank() != 2 || cv.dim(1) != 3) {
    throw ShapeMismatch("spatial_embed: expected [C,3], got " +
                        shape_str(cv.shape()));
  }
  if (!cv.all_finite()) {
    throw NonFiniteInput("spatial_embed: non-finite coordinates");
  }
  Var x = tp.scale(coords, T(10));
  x = gb.affine(x, "spatial.w1", "spatial.b1");
  x = tp.gelu(x);
  return gb.affine(x, "spatial.w2", "spatial.b2");
}

// patch_emb + spatial[e] + temporal_table[t] for the non-CLS block.
template <typename T>
Var embed_tokens(GraphBuilder<T>& gb, Var patch_emb, Var spatial) {
  Tape<T>& tp = gb.tape();
  const Shape s = tp.value(patch_emb).shape();
  if (s.size() != 4) {
    throw ShapeMismatch("embed_tokens: expected [B,C,N_t,D], got " +
                        shape_str(s));
  }
  const std::size_t c = s[1];
  const std::size_t nt = s[2];
  const std::size_t d = s[3];
  if (tp.value(spatial).shape() != Shape{c, d}) {
    throw ShapeMismatch("embed_tokens: spatial shape " +
                        shape_str(tp.value(spatial).shape()));
  }
  if (nt > gb.config().max_time_patches) {
    throw TimeOverflow("embed_tokens: " + std::to_string(nt) +
                       " patches exceed max " +
                       std::to_string(gb.config().max_time_patches));
  }
  Var x = tp.add(patch_emb, tp.reshape(spatial, {c, 1, d}));
  Var rows = tp.slice(gb.p("temporal_table"), 0, 0, nt);
  return tp.add(x, rows);
}

template <typename T>
struct TokenAssembly {
  Var tokens;  // [B, 1 + C*N_t, D]
  std::size_t channels = 0;
  std::size_t time_patches = 0;
  bool has_cls = true;
};

// Flattens channel-major and prepends the CLS token, which receives
// neither spatial nor temporal additions.
template <typename T>
TokenAssembly<T> prepend_cls(GraphBuilder<T>& gb, Var embedded) {
  Tape<T>& tp = gb.tape();
  const Shape s = tp.value(embedded).shape();
  const std::size_t b = s[0];
  const std::size_t d = s[3];
  Var flat = tp.reshape(embedded, {b, s[1] * s[2], d});
  Var cls = tp.broadcast_to(tp.reshape(gb.p("cls"), {1, 1, d}), {b, 1, d});
  TokenAssembly<T> out;
  out.tokens = tp.concat(cls, flat, 1);
  out.channels = s[1];
  out.time_patches = s[2];
  return out;
}

template <typename T>
TokenAssembly<T> assemble_tokens(GraphBuilder<T>& gb, Var patch_emb,
                                 Var spatial) {
  return prepend_cls(gb, embed_tokens(gb, patch_emb, spatial));
}

template <typename T>
struct ChannelAttention {
  Var output;  // [B, C, N_t, D], residual included
  Var probs;   // [B*N_t, H, C, C]
};

// Multi-head self-attention across channels, independently per
// (batch, time-slice), with a residual connection and no normalization.
template <typename T>
ChannelAttention<T> channel_slice_attention(GraphBuilder<T>& gb, Var x) {
  Tape<T>& tp = gb.tape();
  const Shape s = tp.value(x).shape();
  if (s.size() != 4) {
    throw ShapeMismatch("channel_slice_attention: expected [B,C,N_t,D], got " +
                        shape_str(s));
  }
  const std::size_t b = s[0];
  const std::size_t c = s[1];
  const std::size_t nt = s[2];
  const std::size_t d = s[3];
  const std::size_t h = gb.config().num_heads;
  const std::size_t dh = d / h;
  if (c < 1) throw ShapeMismatch("channel_slice_attention: C must be >= 1");

  Var slices = tp.reshape(tp.transpose(x, {0, 2, 1, 3}), {b * nt, c, d});
  auto split_heads = [&](Var t) {
    return tp.transpose(tp.reshape(t, {b * nt, c, h, dh}), {0, 2, 1, 3});
  };
  Var q = split_heads(gb.affine(slices, "chan_attn.wq", "chan_attn.bq"));
  Var k = split_heads(gb.affine(slices, "chan_attn.wk", "chan_attn.bk"));
  Var v = split_heads(gb.affine(slices, "chan_attn.wv", "chan_attn.bv"));
  Var logits = tp.scale(tp.matmul(q, tp.transpose(k, {0, 1, 3, 2})),
                        T(1) / std::sqrt(static_cast<T>(dh)));
  Var probs = tp.softmax_lastdim(logits);
  Var ctx = tp.reshape(tp.transpose(tp.matmul(probs, v), {0, 2, 1, 3}),
                       {b * nt, c, d});
  Var proj = gb.affine(ctx, "chan_attn.wo", "chan_attn.bo");
  Var merged = tp.transpose(tp.reshape(proj, {b, nt, c, d}), {0, 2, 1, 3});
  ChannelAttention<T> out;
  out.output = tp.add(x, merged);
  out.probs = probs;
  return out;
}

// per_head[h,e1,e2] = MLP(coords[e1] - coords[e2])[h]; shared across
// all pairs and all transformer layers.
template <typename T>
Var compute_spatial_bias(GraphBuilder<T>& gb, Var coords) {
  Tape<T>& tp = gb.tape();
  const Tensor<T>& cv = tp.value(coords);
  if (cv.rank() != 2 || cv.dim(1) != 3) {
    throw ShapeMismatch("compute_spatial_bias: expected [C,3], got " +
                        shape_str(cv.shape()));
  }
  if (!cv.all_finite()) {
    throw NonFiniteInput("compute_spatial_bias: non-finite coordinates");
  }
  const std::size_t c = cv.dim(0);
  const std::size_t h = gb.config().num_heads;
  Var delta = tp.sub(tp.broadcast_to(tp.reshape(coords, {c, 1, 3}), {c, c, 3}),
                     tp.broadcast_to(tp.reshape(coords, {1, c, 3}), {c, c, 3}));
  Var x = tp.reshape(delta, {c * c, 3});
  x = tp.gelu(gb.affine(x, "bias_mlp.w1", "bias_mlp.b1"));
  x = gb.affine(x, "bias_mlp.w2", "bias_mlp.b2");
  return tp.transpose(tp.reshape(x, {c, c, h}), {2, 0, 1});
}

template <typename T>
struct TransformerResult {
  Var hidden;                  // [B, N, D] after the final layernorm
  std::vector<Var> attention;  // per-layer probs when captured
};

// Pre-norm stack; when a bias is given, its expanded form is added to
// the attention logits of every layer.
template <typename T>
TransformerResult<T> transformer_forward(GraphBuilder<T>& gb, Var tokens,
                                         std::optional<Var> expanded_bias,
                                         bool capture_attention = false) {
  Tape<T>& tp = gb.tape();
  const Shape s = tp.value(tokens).shape();
  if (s.size() != 3) {
    throw ShapeMismatch("transformer_forward: expected [B,N,D], got " +
                        shape_str(s));
  }
  const std::size_t b = s[0];
  const std::size_t n = s[1];
  const std::size_t d = s[2];
  const std::size_t h = gb.config().num_heads;
  const std::size_t dh = d / h;
  if (expanded_bias) {
    const Shape& bs = tp.value(*expanded_bias).shape();
    if (bs != Shape{h, n, n}) {
      throw ShapeMismatch("transformer_forward: bias " + shape_str(bs) +
                          " does not match " + std::to_string(n) + " tokens");
    }
  }

  TransformerResult<T> result;
  Var x = tokens;
  for (std::size_t l = 0; l < gb.config().num_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Var nrm = tp.layernorm(x, gb.p(pre + "ln1.gamma"), gb.p(pre + "ln1.beta"));
    auto split_heads = [&](Var t) {
      return tp.transpose(tp.reshape(t, {b, n, h, dh}), {0, 2, 1, 3});
    };
    Var q = split_heads(gb.affine(nrm, pre + "attn.wq", pre + "attn.bq"));
    Var k = split_heads(gb.affine(nrm, pre + "attn.wk", pre + "attn.bk"));
    Var v = split_heads(gb.affine(nrm, pre + "attn.wv", pre + "attn.bv"));
    Var logits = tp.scale(tp.matmul(q, tp.transpose(k, {0, 1, 3, 2})),
                          T(1) / std::sqrt(static_cast<T>(dh)));
    if (expanded_bias) logits = tp.add(logits, *expanded_bias);
    Var probs = tp.softmax_lastdim(logits);
    if (capture_attention) result.attention.push_back(probs);
    Var ctx = tp.reshape(tp.transpose(tp.matmul(probs, v), {0, 2, 1, 3}),
                         {b, n, d});
    x = tp.add(x, gb.affine(ctx, pre + "attn.wo", pre + "attn.bo"));

    Var nrm2 = tp.layernorm(x, gb.p(pre + "ln2.gamma"), gb.p(pre + "ln2.beta"));
    Var ff = tp.gelu(gb.affine(nrm2, pre + "ffn.w1", pre + "ffn.b1"));
    ff = gb.affine(ff, pre + "ffn.w2", pre + "ffn.b2");
    x = tp.add(x, ff);
  }
  result.hidden = tp.layernorm(x, gb.p("final_ln.gamma"), gb.p("final_ln.beta"));
  return result;
}

template <typename T>
struct ForwardOptions {
  // Rows of the flattened [B*C*N_t, D] patch embedding to replace with
  // the mask token, before spatial/temporal additions.
  const std::vector<std::uint8_t>* mask_rows = nullptr;
  bool capture_channel_attention = false;
  bool capture_layer_attention = false;
  bool use_spatial_bias = true;
};

template <typename T>
struct ForwardResult {
  Var hidden;        // [B, 1 + C*N_t, D]
  Var cls;           // [B, D]
  Var patch_hidden;  // [B, C*N_t, D]
  Var channel_probs{0};
  std::vector<Var> layer_attention;
  std::size_t channels = 0;
  std::size_t time_patches = 0;
};

// Full encoder pass: temporal encode (with optional masking), spatial
// and temporal additions, channel attention per slice, CLS concat,
// then the biased transformer stack.
template <typename T>
ForwardResult<T> full_forward(GraphBuilder<T>& gb, Var patches, Var coords,
                              const ForwardOptions<T>& opt = {}) {
  Tape<T>& tp = gb.tape();
  const Shape s = tp.value(patches).shape();
  if (s.size() != 4) {
    throw ShapeMismatch("full_forward: expected [B,C,N_t,w], got " +
                        shape_str(s));
  }
  const std::size_t b = s[0];
  const std::size_t c = s[1];
  const std::size_t nt = s[2];
  const std::size_t d = gb.config().hidden_dim;

  Var pe = temporal_encode(gb, patches);
  if (opt.mask_rows) {
    Var flat = tp.reshape(pe, {b * c * nt, d});
    flat = tp.replace_rows(flat, *opt.mask_rows, gb.p("mask_token"));
    pe = tp.reshape(flat, {b, c, nt, d});
  }
  Var spatial = spatial_embed(gb, coords);
  Var embedded = embed_tokens(gb, pe, spatial);
  ChannelAttention<T> ca = channel_slice_attention(gb, embedded);
  TokenAssembly<T> tokens = prepend_cls(gb, ca.output);

  std::optional<Var> bias;
  if (opt.use_spatial_bias) {
    Var per_head = compute_spatial_bias(gb, coords);
    bias = tp.expand_bias(per_head, nt, true);
  }
  TransformerResult<T> tr =
      transformer_forward(gb, tokens.tokens, bias, opt.capture_layer_attention);

  ForwardResult<T> out;
  out.hidden = tr.hidden;
  out.cls = tp.reshape(tp.slice(tr.hidden, 1, 0, 1), {b, d});
  out.patch_hidden = tp.slice(tr.hidden, 1, 1, c * nt);
  if (opt.capture_channel_attention) out.channel_probs = ca.probs;
  out.layer_attention = std::move(tr.attention);
  out.channels = c;
  out.time_patches = nt;
  return out;
}

// Mean attention mass received by each channel inside the channel
// attention module, min-max normalized over channels; a spread of zero
// (including C = 1) maps every channel to 1.
template <typename T>
std::vector<double> export_channel_activation(Model<T>& model,
                                              const Tensor<T>& patches,
                                              const Tensor<T>& coords) {
  if (patches.rank() != 4 || patches.dim(0) == 0) {
    throw EmptyBatch("export_channel_activation: empty batch");
  }
  Tape<T> tape;
  GraphBuilder<T> gb(tape, model);
  ForwardOptions<T> opt;
  opt.capture_channel_attention = true;
  ForwardResult<T> fr =
      full_forward(gb, tape.constant(patches), tape.constant(coords), opt);
  const Tensor<T>& probs = tape.value(fr.channel_probs);
  const std::size_t slices = probs.dim(0);
  const std::size_t heads = probs.dim(1);
  const std::size_t c = probs.dim(2);
  std::vector<double> mass(c, 0.0);
  for (std::size_t s = 0; s < slices; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t q = 0; q < c; ++q) {
        const std::size_t base = ((s * heads + h) * c + q) * c;
        for (std::size_t e = 0; e < c; ++e) {
          mass[e] += static_cast<double>(probs[base + e]);
        }
      }
    }
  }
  const double denom = static_cast<double>(slices * heads * c);
  for (double& v : mass) v /= denom;
  const auto [lo_it, hi_it] = std::minmax_element(mass.begin(), mass.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<double> scores(c, 1.0);
  if (hi > lo) {
    for (std::size_t e = 0; e < c; ++e) scores[e] = (mass[e] - lo) / (hi - lo);
  }
  return scores;
}

// --- checkpoint io ------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open checkpoint for writing: " + path);
  os.write("HEAR", 4);
  detail::put_u32(os, kCheckpointVersion);
  const ModelConfig& c = model.config;
  detail::put_u32(os, static_cast<std::uint32_t>(c.hidden_dim));
  detail::put_u32(os, static_cast<std::uint32_t>(c.num_layers));
  detail::put_u32(os, static_cast<std::uint32_t>(c.num_heads));
  detail::put_u32(os, static_cast<std::uint32_t>(c.window_len));
  detail::put_u32(os, static_cast<std::uint32_t>(c.max_time_patches));
  detail::put_u32(os, static_cast<std::uint32_t>(c.codebook_size));
  os.put(static_cast<char>(c.variant));
  detail::put_u32(os, static_cast<std::uint32_t>(model.params.count()));
  for (std::size_t i = 0; i < model.params.count(); ++i) {
    const std::string& name = model.params.name(i);
    const Tensor<T>& t = model.params.value(i);
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t k = 0; k < t.rank(); ++k) {
      detail::put_u32(os, static_cast<std::uint32_t>(t.dim(k)));
    }
    for (std::size_t k = 0; k < t.size(); ++k) {
      detail::put_f32(os, static_cast<float>(t[k]));
    }
  }
  if (!os) throw ParseError("checkpoint write failed: " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "HEAR") {
    throw ParseError("bad checkpoint magic");
  }
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " +
                     std::to_string(version));
  }
  Model<T> m;
  m.config.hidden_dim = detail::get_u32(is);
  m.config.num_layers = detail::get_u32(is);
  m.config.num_heads = detail::get_u32(is);
  m.config.window_len = detail::get_u32(is);
  m.config.max_time_patches = detail::get_u32(is);
  m.config.codebook_size = detail::get_u32(is);
  const int variant = is.get();
  if (variant != 0 && variant != 1) {
    throw ParseError("bad checkpoint variant tag");
  }
  m.config.variant = static_cast<ModelVariant>(variant);
  validate(m.config);
  const std::uint32_t count = detail::get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw ParseError("checkpoint truncated");
    }
    const std::uint32_t rank = detail::get_u32(is);
    Shape shape(rank);
    for (std::uint32_t k = 0; k < rank; ++k) shape[k] = detail::get_u32(is);
    Tensor<T> t(shape);
    for (std::size_t k = 0; k < t.size(); ++k) {
      t[k] = static_cast<T>(detail::get_f32(is));
    }
    m.params.add(name, std::move(t));
  }
  return m;
}

}  // namespace hear
