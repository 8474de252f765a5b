#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "multivae/graph.hpp"
#include "multivae/rng.hpp"

namespace multivae::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
};

/// Named parameter registry. Creation order is fixed by construction order,
/// which keeps initialization and optimizer sweeps deterministic.
class ParamStore {
 public:
  Index add(std::string name, Tensor init) {
    if (by_name_.count(name)) throw std::logic_error("param already registered: " + name);
    Param p;
    p.name = name;
    p.grad = Tensor(init.shape());
    p.adam_m = Tensor(init.shape());
    p.adam_v = Tensor(init.shape());
    p.value = std::move(init);
    by_name_[p.name] = params_.size();
    params_.push_back(std::move(p));
    return static_cast<Index>(params_.size()) - 1;
  }

  Param& at(Index i) { return params_[static_cast<std::size_t>(i)]; }
  const Param& at(Index i) const { return params_[static_cast<std::size_t>(i)]; }
  Index find(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) return -1;
    return static_cast<Index>(it->second);
  }
  std::size_t size() const { return params_.size(); }

  Index total_scalars() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

/// Bridges a ParamStore into one Graph: hands out leaf Vars for parameters and
/// harvests their gradients back after backward().
class ParamContext {
 public:
  ParamContext(ad::Graph& g, ParamStore& store, bool trainable)
      : g_(g), store_(store), trainable_(trainable) {}

  ad::Graph& graph() { return g_; }
  ParamStore& store() { return store_; }

  ad::Var operator[](Index handle) {
    auto it = cache_.find(handle);
    if (it != cache_.end()) return it->second;
    ad::Var v = g_.input(store_.at(handle).value, trainable_);
    cache_.emplace(handle, v);
    return v;
  }

  /// Adds node gradients into the store's gradient buffers.
  void harvest() {
    for (const auto& [handle, var] : cache_) {
      const Tensor& ng = g_.node(var.id()).grad;
      if (ng.numel() == 0) continue;
      store_.at(handle).grad.arr() += ng.arr();
    }
  }

 private:
  ad::Graph& g_;
  ParamStore& store_;
  bool trainable_;
  std::unordered_map<Index, ad::Var> cache_;
};

inline Tensor xavier_uniform(Rng& rng, Index fan_in, Index fan_out, std::vector<Index> shape) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

inline Tensor normal_init(Rng& rng, std::vector<Index> shape, double std) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = std * rng.normal();
  return t;
}

struct Linear {
  Index w = -1, b = -1;

  static Linear create(ParamStore& s, const std::string& prefix, Index in, Index out, Rng& rng) {
    Linear l;
    l.w = s.add(prefix + ".w", xavier_uniform(rng, in, out, {in, out}));
    l.b = s.add(prefix + ".b", Tensor({out}));
    return l;
  }

  ad::Var apply(ParamContext& pc, ad::Var x) const {
    ad::Graph& g = pc.graph();
    return g.add_row(g.matmul(x, pc[w]), pc[b]);
  }
};

struct LayerNorm {
  Index gamma = -1, beta = -1;

  static LayerNorm create(ParamStore& s, const std::string& prefix, Index width) {
    LayerNorm ln;
    ln.gamma = s.add(prefix + ".gamma", Tensor::full({width}, 1.0));
    ln.beta = s.add(prefix + ".beta", Tensor({width}));
    return ln;
  }

  ad::Var apply(ParamContext& pc, ad::Var x) const {
    return pc.graph().layer_norm(x, pc[gamma], pc[beta]);
  }
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  Index heads = 1;
  Index d_model = 0;

  static MultiHeadAttention create(ParamStore& s, const std::string& prefix, Index d_model,
                                   Index heads, Rng& rng) {
    if (d_model % heads != 0) throw std::invalid_argument("mha: d_model must divide by heads");
    MultiHeadAttention m;
    m.heads = heads;
    m.d_model = d_model;
    m.wq = Linear::create(s, prefix + ".q", d_model, d_model, rng);
    m.wk = Linear::create(s, prefix + ".k", d_model, d_model, rng);
    m.wv = Linear::create(s, prefix + ".v", d_model, d_model, rng);
    m.wo = Linear::create(s, prefix + ".o", d_model, d_model, rng);
    return m;
  }

  /// queries: [R,d], keys_values: [S,d]; key_mask (length S) disables keys.
  ad::Var apply(ParamContext& pc, ad::Var queries, ad::Var keys_values,
                const std::vector<bool>* key_mask = nullptr) const {
    ad::Graph& g = pc.graph();
    ad::Var q = wq.apply(pc, queries);
    ad::Var k = wk.apply(pc, keys_values);
    ad::Var v = wv.apply(pc, keys_values);
    const Index dk = d_model / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    ad::Var mask_row;
    if (key_mask) {
      Tensor m({static_cast<Index>(key_mask->size())});
      for (std::size_t i = 0; i < key_mask->size(); ++i)
        m[static_cast<Index>(i)] = (*key_mask)[i] ? 0.0 : -1e30;
      mask_row = g.constant(std::move(m));
    }
    std::vector<ad::Var> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    for (Index h = 0; h < heads; ++h) {
      ad::Var qh = g.slice_cols(q, h * dk, dk);
      ad::Var kh = g.slice_cols(k, h * dk, dk);
      ad::Var vh = g.slice_cols(v, h * dk, dk);
      ad::Var scores = g.scale(g.matmul_nt(qh, kh), scale);
      if (key_mask) scores = g.add_row(scores, mask_row);
      head_outs.push_back(g.matmul(g.softmax_rows(scores), vh));
    }
    return wo.apply(pc, g.concat_cols(head_outs));
  }
};

/// Pre-LN transformer encoder layer: x += MHA(LN(x)); x += FFN(LN(x)).
struct EncoderLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear ff1, ff2;

  static EncoderLayer create(ParamStore& s, const std::string& prefix, Index d_model, Index ffn,
                             Index heads, Rng& rng) {
    EncoderLayer e;
    e.ln1 = LayerNorm::create(s, prefix + ".ln1", d_model);
    e.attn = MultiHeadAttention::create(s, prefix + ".attn", d_model, heads, rng);
    e.ln2 = LayerNorm::create(s, prefix + ".ln2", d_model);
    e.ff1 = Linear::create(s, prefix + ".ff1", d_model, ffn, rng);
    e.ff2 = Linear::create(s, prefix + ".ff2", ffn, d_model, rng);
    return e;
  }

  ad::Var apply(ParamContext& pc, ad::Var x, const std::vector<bool>* key_mask = nullptr) const {
    ad::Graph& g = pc.graph();
    ad::Var h = ln1.apply(pc, x);
    x = g.add(x, attn.apply(pc, h, h, key_mask));
    ad::Var f = ff2.apply(pc, g.relu(ff1.apply(pc, ln2.apply(pc, x))));
    return g.add(x, f);
  }
};

/// Pre-LN transformer decoder layer with self-attention over the queries and
/// cross-attention into a memory sequence.
struct DecoderLayer {
  LayerNorm ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  Linear ff1, ff2;

  static DecoderLayer create(ParamStore& s, const std::string& prefix, Index d_model, Index ffn,
                             Index heads, Rng& rng) {
    DecoderLayer d;
    d.ln1 = LayerNorm::create(s, prefix + ".ln1", d_model);
    d.self_attn = MultiHeadAttention::create(s, prefix + ".self", d_model, heads, rng);
    d.ln2 = LayerNorm::create(s, prefix + ".ln2", d_model);
    d.cross_attn = MultiHeadAttention::create(s, prefix + ".cross", d_model, heads, rng);
    d.ln3 = LayerNorm::create(s, prefix + ".ln3", d_model);
    d.ff1 = Linear::create(s, prefix + ".ff1", d_model, ffn, rng);
    d.ff2 = Linear::create(s, prefix + ".ff2", ffn, d_model, rng);
    return d;
  }

  ad::Var apply(ParamContext& pc, ad::Var x, ad::Var memory) const {
    ad::Graph& g = pc.graph();
    ad::Var h = ln1.apply(pc, x);
    x = g.add(x, self_attn.apply(pc, h, h));
    x = g.add(x, cross_attn.apply(pc, ln2.apply(pc, x), memory));
    ad::Var f = ff2.apply(pc, g.relu(ff1.apply(pc, ln3.apply(pc, x))));
    return g.add(x, f);
  }
};

}  // namespace multivae::nn
