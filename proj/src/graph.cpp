#include "multivae/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace multivae::ad {

const Tensor& Var::value() const { return g_->node(id_).value; }
const Tensor& Var::grad() const { return g_->node(id_).grad; }

Tensor& Graph::grad_buffer(Index id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.numel() != n.value.numel()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var Graph::emplace(Tensor value, bool requires_grad, std::function<void(Graph&, Node&)> bw) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<Index>(nodes_.size()) - 1);
}

bool Graph::any_grad(std::span<const Var> xs) const {
  for (const Var& v : xs)
    if (node(v.id()).requires_grad) return true;
  return false;
}

void Graph::clear() { nodes_.clear(); }

void Graph::backward(Var root) {
  Node& r = node(root.id());
  if (r.value.numel() != 1) throw std::logic_error("backward: root must be scalar");
  if (!r.requires_grad) return;
  grad_buffer(root.id()).fill(0.0);
  r.grad[0] = 1.0;
  for (Index i = static_cast<Index>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.backward) continue;
    if (n.grad.numel() != n.value.numel()) continue;  // never touched by any consumer
    n.backward(*this, n);
  }
}

Var Graph::input(Tensor value, bool requires_grad) {
  return emplace(std::move(value), requires_grad, {});
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

}  // namespace

Var Graph::add(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.arr() += b.value().arr();
  Index ia = a.id(), ib = b.id();
  return emplace(std::move(out), any_grad(a, b), [ia, ib](Graph& g, Node& n) {
    if (g.node(ia).requires_grad) g.grad_buffer(ia).arr() += n.grad.arr();
    if (g.node(ib).requires_grad) g.grad_buffer(ib).arr() += n.grad.arr();
  });
}

Var Graph::sub(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out.arr() -= b.value().arr();
  Index ia = a.id(), ib = b.id();
  return emplace(std::move(out), any_grad(a, b), [ia, ib](Graph& g, Node& n) {
    if (g.node(ia).requires_grad) g.grad_buffer(ia).arr() += n.grad.arr();
    if (g.node(ib).requires_grad) g.grad_buffer(ib).arr() -= n.grad.arr();
  });
}

Var Graph::mul(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  out.arr() *= b.value().arr();
  Index ia = a.id(), ib = b.id();
  return emplace(std::move(out), any_grad(a, b), [ia, ib](Graph& g, Node& n) {
    if (g.node(ia).requires_grad) g.grad_buffer(ia).arr() += n.grad.arr() * g.node(ib).value.arr();
    if (g.node(ib).requires_grad) g.grad_buffer(ib).arr() += n.grad.arr() * g.node(ia).value.arr();
  });
}

Var Graph::div(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "div");
  Tensor out = a.value();
  out.arr() /= b.value().arr();
  Index ia = a.id(), ib = b.id();
  return emplace(std::move(out), any_grad(a, b), [ia, ib](Graph& g, Node& n) {
    const auto bv = g.node(ib).value.arr();
    if (g.node(ia).requires_grad) g.grad_buffer(ia).arr() += n.grad.arr() / bv;
    if (g.node(ib).requires_grad)
      g.grad_buffer(ib).arr() -= n.grad.arr() * g.node(ia).value.arr() / (bv * bv);
  });
}

Var Graph::add_scalar(Var a, double c) {
  Tensor out = a.value();
  out.arr() += c;
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia](Graph& g, Node& n) {
    g.grad_buffer(ia).arr() += n.grad.arr();
  });
}

Var Graph::scale(Var a, double c) {
  Tensor out = a.value();
  out.arr() *= c;
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia, c](Graph& g, Node& n) {
    g.grad_buffer(ia).arr() += c * n.grad.arr();
  });
}

Var Graph::exp(Var a) {
  Tensor out = a.value();
  out.arr() = out.arr().exp();
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia](Graph& g, Node& n) {
    g.grad_buffer(ia).arr() += n.grad.arr() * n.value.arr();
  });
}

Var Graph::log(Var a) {
  Tensor out = a.value();
  out.arr() = out.arr().log();
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia](Graph& g, Node& n) {
    g.grad_buffer(ia).arr() += n.grad.arr() / g.node(ia).value.arr();
  });
}

Var Graph::tanh(Var a) {
  Tensor out = a.value();
  out.arr() = out.arr().tanh();
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia](Graph& g, Node& n) {
    g.grad_buffer(ia).arr() += n.grad.arr() * (1.0 - n.value.arr().square());
  });
}

Var Graph::sigmoid(Var a) {
  Tensor out = a.value();
  out.arr() = 1.0 / (1.0 + (-out.arr()).exp());
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia](Graph& g, Node& n) {
    g.grad_buffer(ia).arr() += n.grad.arr() * n.value.arr() * (1.0 - n.value.arr());
  });
}

Var Graph::relu(Var a) {
  Tensor out = a.value();
  out.arr() = out.arr().max(0.0);
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia](Graph& g, Node& n) {
    const auto x = g.node(ia).value.arr();
    g.grad_buffer(ia).arr() += n.grad.arr() * (x > 0.0).cast<double>();
  });
}

Var Graph::clamp(Var a, double lo, double hi) {
  Tensor out = a.value();
  out.arr() = out.arr().max(lo).min(hi);
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia, lo, hi](Graph& g, Node& n) {
    const auto x = g.node(ia).value.arr();
    g.grad_buffer(ia).arr() += n.grad.arr() * ((x > lo) && (x < hi)).cast<double>();
  });
}

Var Graph::stop_gradient(Var a) { return emplace(a.value(), false, {}); }

Var Graph::scale_gradient(Var a, Tensor factor) {
  if (factor.numel() != 1 && !factor.same_shape(a.value()))
    throw std::invalid_argument("scale_gradient: factor shape mismatch");
  Index ia = a.id();
  return emplace(a.value(), node(ia).requires_grad,
                 [ia, f = std::move(factor)](Graph& g, Node& n) {
                   if (f.numel() == 1)
                     g.grad_buffer(ia).arr() += f[0] * n.grad.arr();
                   else
                     g.grad_buffer(ia).arr() += f.arr() * n.grad.arr();
                 });
}

Var Graph::scale_gradient_deferred(Var a, std::shared_ptr<Tensor> factor) {
  Index ia = a.id();
  return emplace(a.value(), node(ia).requires_grad, [ia, factor](Graph& g, Node& n) {
    if (factor->numel() == 1)
      g.grad_buffer(ia).arr() += (*factor)[0] * n.grad.arr();
    else
      g.grad_buffer(ia).arr() += factor->arr() * n.grad.arr();
  });
}

Var Graph::sum(Var a) {
  Tensor out = Tensor::scalar(a.value().arr().sum());
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia](Graph& g, Node& n) {
    g.grad_buffer(ia).arr() += n.grad[0];
  });
}

Var Graph::mean(Var a) {
  const double inv = 1.0 / static_cast<double>(a.value().numel());
  Tensor out = Tensor::scalar(a.value().arr().sum() * inv);
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia, inv](Graph& g, Node& n) {
    g.grad_buffer(ia).arr() += n.grad[0] * inv;
  });
}

Var Graph::add_n(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: empty");
  Tensor out = xs[0].value();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    check_same_shape(out, xs[i].value(), "add_n");
    out.arr() += xs[i].value().arr();
  }
  std::vector<Index> ids;
  ids.reserve(xs.size());
  for (const Var& v : xs) ids.push_back(v.id());
  return emplace(std::move(out), any_grad(xs), [ids = std::move(ids)](Graph& g, Node& n) {
    for (Index id : ids)
      if (g.node(id).requires_grad) g.grad_buffer(id).arr() += n.grad.arr();
  });
}

Var Graph::weighted_sum(Var a, Tensor weights) {
  check_same_shape(a.value(), weights, "weighted_sum");
  Tensor out = Tensor::scalar((a.value().arr() * weights.arr()).sum());
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad,
                 [ia, w = std::move(weights)](Graph& g, Node& n) {
                   g.grad_buffer(ia).arr() += n.grad[0] * w.arr();
                 });
}

Var Graph::stack_scalars(std::span<const Var> xs) {
  Tensor out({static_cast<Index>(xs.size())});
  std::vector<Index> ids;
  ids.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[static_cast<Index>(i)] = xs[i].value().item();
    ids.push_back(xs[i].id());
  }
  return emplace(std::move(out), any_grad(xs), [ids = std::move(ids)](Graph& g, Node& n) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (g.node(ids[i]).requires_grad)
        g.grad_buffer(ids[i])[0] += n.grad[static_cast<Index>(i)];
  });
}

Var Graph::logsumexp_vec(Var a) {
  const auto x = a.value().arr();
  const double m = x.maxCoeff();
  const double lse = m + std::log((x - m).exp().sum());
  Index ia = a.id();
  return emplace(Tensor::scalar(lse), node(ia).requires_grad, [ia, lse](Graph& g, Node& n) {
    const auto x = g.node(ia).value.arr();
    g.grad_buffer(ia).arr() += n.grad[0] * (x - lse).exp();
  });
}

Var Graph::reshape(Var a, std::vector<Index> shape) {
  Tensor out = a.value();
  out.reshape(shape);
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia](Graph& g, Node& n) {
    g.grad_buffer(ia).arr() += n.grad.arr();
  });
}

Var Graph::slice_rows(Var a, Index r0, Index nrows) {
  auto m = a.value().mat();
  if (r0 < 0 || r0 + nrows > m.rows()) throw std::out_of_range("slice_rows: out of range");
  Tensor out({nrows, m.cols()});
  out.mat() = m.middleRows(r0, nrows);
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia, r0, nrows](Graph& g, Node& n) {
    g.grad_buffer(ia).mat().middleRows(r0, nrows) += n.grad.mat();
  });
}

Var Graph::slice_cols(Var a, Index c0, Index ncols) {
  auto m = a.value().mat();
  if (c0 < 0 || c0 + ncols > m.cols()) throw std::out_of_range("slice_cols: out of range");
  Tensor out({m.rows(), ncols});
  out.mat() = m.middleCols(c0, ncols);
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia, c0, ncols](Graph& g, Node& n) {
    g.grad_buffer(ia).mat().middleCols(c0, ncols) += n.grad.mat();
  });
}

Var Graph::concat_rows(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty");
  const Index cols = xs[0].value().mat().cols();
  Index rows = 0;
  for (const Var& v : xs) {
    if (v.value().mat().cols() != cols) throw std::invalid_argument("concat_rows: cols mismatch");
    rows += v.value().mat().rows();
  }
  Tensor out({rows, cols});
  std::vector<Index> ids, offs;
  Index r = 0;
  for (const Var& v : xs) {
    const Index nr = v.value().mat().rows();
    out.mat().middleRows(r, nr) = v.value().mat();
    ids.push_back(v.id());
    offs.push_back(r);
    r += nr;
  }
  return emplace(std::move(out), any_grad(xs),
                 [ids = std::move(ids), offs = std::move(offs)](Graph& g, Node& n) {
                   for (std::size_t i = 0; i < ids.size(); ++i) {
                     if (!g.node(ids[i]).requires_grad) continue;
                     const Index nr = g.node(ids[i]).value.mat().rows();
                     g.grad_buffer(ids[i]).mat() += n.grad.mat().middleRows(offs[i], nr);
                   }
                 });
}

Var Graph::concat_cols(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty");
  const Index rows = xs[0].value().mat().rows();
  Index cols = 0;
  for (const Var& v : xs) {
    if (v.value().mat().rows() != rows) throw std::invalid_argument("concat_cols: rows mismatch");
    cols += v.value().mat().cols();
  }
  Tensor out({rows, cols});
  std::vector<Index> ids, offs;
  Index c = 0;
  for (const Var& v : xs) {
    const Index nc = v.value().mat().cols();
    out.mat().middleCols(c, nc) = v.value().mat();
    ids.push_back(v.id());
    offs.push_back(c);
    c += nc;
  }
  return emplace(std::move(out), any_grad(xs),
                 [ids = std::move(ids), offs = std::move(offs)](Graph& g, Node& n) {
                   for (std::size_t i = 0; i < ids.size(); ++i) {
                     if (!g.node(ids[i]).requires_grad) continue;
                     const Index nc = g.node(ids[i]).value.mat().cols();
                     g.grad_buffer(ids[i]).mat() += n.grad.mat().middleCols(offs[i], nc);
                   }
                 });
}

Var Graph::matmul(Var a, Var b) {
  auto ma = a.value().mat();
  auto mb = b.value().mat();
  if (ma.cols() != mb.rows()) throw std::invalid_argument("matmul: inner dim mismatch");
  Tensor out({ma.rows(), mb.cols()});
  out.mat().noalias() = ma * mb;
  Index ia = a.id(), ib = b.id();
  return emplace(std::move(out), any_grad(a, b), [ia, ib](Graph& g, Node& n) {
    auto gm = n.grad.mat();
    if (g.node(ia).requires_grad)
      g.grad_buffer(ia).mat().noalias() += gm * g.node(ib).value.mat().transpose();
    if (g.node(ib).requires_grad)
      g.grad_buffer(ib).mat().noalias() += g.node(ia).value.mat().transpose() * gm;
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  auto ma = a.value().mat();
  auto mb = b.value().mat();
  if (ma.cols() != mb.cols()) throw std::invalid_argument("matmul_nt: inner dim mismatch");
  Tensor out({ma.rows(), mb.rows()});
  out.mat().noalias() = ma * mb.transpose();
  Index ia = a.id(), ib = b.id();
  return emplace(std::move(out), any_grad(a, b), [ia, ib](Graph& g, Node& n) {
    auto gm = n.grad.mat();
    if (g.node(ia).requires_grad)
      g.grad_buffer(ia).mat().noalias() += gm * g.node(ib).value.mat();
    if (g.node(ib).requires_grad)
      g.grad_buffer(ib).mat().noalias() += gm.transpose() * g.node(ia).value.mat();
  });
}

Var Graph::add_row(Var a, Var row) {
  auto ma = a.value().mat_lastdim();
  const Tensor& r = row.value();
  if (r.numel() != ma.cols()) throw std::invalid_argument("add_row: width mismatch");
  Tensor out = a.value();
  out.mat_lastdim().rowwise() += ConstMatMap(r.data(), 1, r.numel()).row(0);
  Index ia = a.id(), ir = row.id();
  return emplace(std::move(out), any_grad(a, row), [ia, ir](Graph& g, Node& n) {
    if (g.node(ia).requires_grad) g.grad_buffer(ia).arr() += n.grad.arr();
    if (g.node(ir).requires_grad) {
      Tensor& rg = g.grad_buffer(ir);
      MatMap(rg.data(), 1, rg.numel()).row(0) += n.grad.mat_lastdim().colwise().sum();
    }
  });
}

Var Graph::softmax_rows(Var a) {
  Tensor out = a.value();
  auto m = out.mat();
  for (Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
  Index ia = a.id();
  return emplace(std::move(out), node(ia).requires_grad, [ia](Graph& g, Node& n) {
    auto s = n.value.mat();
    auto gm = n.grad.mat();
    auto out_grad = g.grad_buffer(ia).mat();
    for (Index r = 0; r < s.rows(); ++r) {
      const double dot = (gm.row(r).array() * s.row(r).array()).sum();
      out_grad.row(r).array() += s.row(r).array() * (gm.row(r).array() - dot);
    }
  });
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  auto mx = x.value().mat_lastdim();
  const Index rows = mx.rows(), cols = mx.cols();
  if (gamma.value().numel() != cols || beta.value().numel() != cols)
    throw std::invalid_argument("layer_norm: gamma/beta width mismatch");
  Tensor out(x.value().shape());
  Tensor xhat(x.value().shape());
  Tensor inv_std({rows});
  auto mo = out.mat_lastdim();
  auto mh = xhat.mat_lastdim();
  ConstMatMap gmap(gamma.value().data(), 1, cols);
  ConstMatMap bmap(beta.value().data(), 1, cols);
  for (Index r = 0; r < rows; ++r) {
    const double mu = mx.row(r).mean();
    const double var = (mx.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    mh.row(r) = (mx.row(r).array() - mu) * is;
    mo.row(r) = mh.row(r).array() * gmap.row(0).array() + bmap.row(0).array();
  }
  Index ix = x.id(), ig = gamma.id(), ib = beta.id();
  return emplace(std::move(out), any_grad(x, gamma, beta),
                 [ix, ig, ib, xh = std::move(xhat), is = std::move(inv_std)](Graph& g, Node& n) {
                   auto gm = n.grad.mat_lastdim();
                   auto mh = xh.mat_lastdim();
                   const Index rows = gm.rows(), cols = gm.cols();
                   ConstMatMap gamma_v(g.node(ig).value.data(), 1, cols);
                   if (g.node(ig).requires_grad) {
                     MatMap gg(g.grad_buffer(ig).data(), 1, cols);
                     for (Index r = 0; r < rows; ++r)
                       gg.row(0).array() += gm.row(r).array() * mh.row(r).array();
                   }
                   if (g.node(ib).requires_grad) {
                     MatMap gb(g.grad_buffer(ib).data(), 1, cols);
                     gb.row(0) += gm.colwise().sum();
                   }
                   if (g.node(ix).requires_grad) {
                     auto gx = g.grad_buffer(ix).mat_lastdim();
                     using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;
                     for (Index r = 0; r < rows; ++r) {
                       RowArr gy = gm.row(r).array() * gamma_v.row(0).array();
                       const double m1 = gy.mean();
                       const double m2 = (gy * mh.row(r).array()).mean();
                       gx.row(r).array() += is[r] * (gy - m1 - mh.row(r).array() * m2);
                     }
                   }
                 });
}

namespace {

struct ConvDims {
  Index B, H, W, C, KH, KW, OC, OH, OW;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, Index stride, Index pad) {
  if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument("conv2d: rank must be 4");
  ConvDims d;
  d.B = x.dim(0);
  d.H = x.dim(1);
  d.W = x.dim(2);
  d.C = x.dim(3);
  d.KH = w.dim(0);
  d.KW = w.dim(1);
  if (w.dim(2) != d.C) throw std::invalid_argument("conv2d: channel mismatch");
  d.OC = w.dim(3);
  d.OH = (d.H + 2 * pad - d.KH) / stride + 1;
  d.OW = (d.W + 2 * pad - d.KW) / stride + 1;
  return d;
}

// Gathers padded patches into rows of [B*OH*OW, KH*KW*C].
Tensor im2col(const Tensor& x, const ConvDims& d, Index stride, Index pad) {
  Tensor cols({d.B * d.OH * d.OW, d.KH * d.KW * d.C});
  const double* xp = x.data();
  double* cp = cols.data();
  const Index xrow = d.W * d.C;
  for (Index b = 0; b < d.B; ++b) {
    const double* xb = xp + b * d.H * xrow;
    for (Index oy = 0; oy < d.OH; ++oy) {
      for (Index ox = 0; ox < d.OW; ++ox) {
        for (Index ky = 0; ky < d.KH; ++ky) {
          const Index iy = oy * stride - pad + ky;
          for (Index kx = 0; kx < d.KW; ++kx) {
            const Index ix = ox * stride - pad + kx;
            if (iy >= 0 && iy < d.H && ix >= 0 && ix < d.W) {
              const double* src = xb + iy * xrow + ix * d.C;
              std::copy(src, src + d.C, cp);
            } else {
              std::fill(cp, cp + d.C, 0.0);
            }
            cp += d.C;
          }
        }
      }
    }
  }
  return cols;
}

// Scatter-adds patch-gradient rows back into the input layout.
void col2im_add(const Tensor& cols, Tensor& dx, const ConvDims& d, Index stride, Index pad) {
  const double* cp = cols.data();
  double* xp = dx.data();
  const Index xrow = d.W * d.C;
  for (Index b = 0; b < d.B; ++b) {
    double* xb = xp + b * d.H * xrow;
    for (Index oy = 0; oy < d.OH; ++oy) {
      for (Index ox = 0; ox < d.OW; ++ox) {
        for (Index ky = 0; ky < d.KH; ++ky) {
          const Index iy = oy * stride - pad + ky;
          for (Index kx = 0; kx < d.KW; ++kx) {
            const Index ix = ox * stride - pad + kx;
            if (iy >= 0 && iy < d.H && ix >= 0 && ix < d.W) {
              double* dst = xb + iy * xrow + ix * d.C;
              for (Index c = 0; c < d.C; ++c) dst[c] += cp[c];
            }
            cp += d.C;
          }
        }
      }
    }
  }
}

}  // namespace

Var Graph::conv2d(Var x, Var w, Var b, Index stride, Index pad) {
  const ConvDims d = conv_dims(x.value(), w.value(), stride, pad);
  if (b.value().numel() != d.OC) throw std::invalid_argument("conv2d: bias width mismatch");
  Tensor cols = im2col(x.value(), d, stride, pad);
  Tensor out({d.B, d.OH, d.OW, d.OC});
  {
    MatMap om(out.data(), d.B * d.OH * d.OW, d.OC);
    ConstMatMap wm(w.value().data(), d.KH * d.KW * d.C, d.OC);
    om.noalias() = cols.mat() * wm;
    om.rowwise() += ConstMatMap(b.value().data(), 1, d.OC).row(0);
  }
  Index ix = x.id(), iw = w.id(), ib = b.id();
  const bool need_dx = node(ix).requires_grad;
  return emplace(std::move(out), any_grad(x, w, b),
                 [ix, iw, ib, d, stride, pad, need_dx, cols = std::move(cols)](Graph& g, Node& n) {
                   ConstMatMap gm(n.grad.data(), d.B * d.OH * d.OW, d.OC);
                   if (g.node(iw).requires_grad) {
                     MatMap wg(g.grad_buffer(iw).data(), d.KH * d.KW * d.C, d.OC);
                     wg.noalias() += cols.mat().transpose() * gm;
                   }
                   if (g.node(ib).requires_grad) {
                     MatMap bg(g.grad_buffer(ib).data(), 1, d.OC);
                     bg.row(0) += gm.colwise().sum();
                   }
                   if (need_dx) {
                     Tensor dcols({d.B * d.OH * d.OW, d.KH * d.KW * d.C});
                     ConstMatMap wm(g.node(iw).value.data(), d.KH * d.KW * d.C, d.OC);
                     dcols.mat().noalias() = gm * wm.transpose();
                     col2im_add(dcols, g.grad_buffer(ix), d, stride, pad);
                   }
                 });
}

Var Graph::upsample2x(Var x) {
  const Tensor& v = x.value();
  if (v.rank() != 4) throw std::invalid_argument("upsample2x: rank must be 4");
  const Index B = v.dim(0), H = v.dim(1), W = v.dim(2), C = v.dim(3);
  Tensor out({B, 2 * H, 2 * W, C});
  const double* src = v.data();
  double* dst = out.data();
  for (Index b = 0; b < B; ++b)
    for (Index y = 0; y < 2 * H; ++y)
      for (Index xcol = 0; xcol < 2 * W; ++xcol) {
        const double* s = src + ((b * H + y / 2) * W + xcol / 2) * C;
        std::copy(s, s + C, dst);
        dst += C;
      }
  Index ix = x.id();
  return emplace(std::move(out), node(ix).requires_grad, [ix, B, H, W, C](Graph& g, Node& n) {
    double* gx = g.grad_buffer(ix).data();
    const double* gy = n.grad.data();
    for (Index b = 0; b < B; ++b)
      for (Index y = 0; y < 2 * H; ++y)
        for (Index xcol = 0; xcol < 2 * W; ++xcol) {
          double* d = gx + ((b * H + y / 2) * W + xcol / 2) * C;
          for (Index c = 0; c < C; ++c) d[c] += gy[c];
          gy += C;
        }
  });
}

Var Graph::embedding(Var table, const std::vector<Index>& indices) {
  const Tensor& t = table.value();
  if (t.rank() != 2) throw std::invalid_argument("embedding: table rank must be 2");
  const Index V = t.dim(0), D = t.dim(1);
  Tensor out({static_cast<Index>(indices.size()), D});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= V) throw std::out_of_range("embedding: index out of range");
    out.mat().row(static_cast<Index>(i)) = t.mat().row(indices[i]);
  }
  Index it = table.id();
  return emplace(std::move(out), node(it).requires_grad, [it, indices](Graph& g, Node& n) {
    auto tg = g.grad_buffer(it).mat();
    for (std::size_t i = 0; i < indices.size(); ++i)
      tg.row(indices[i]) += n.grad.mat().row(static_cast<Index>(i));
  });
}

Var Graph::cross_entropy_rows(Var logits, const std::vector<Index>& targets,
                              const std::vector<bool>& mask, bool mean_reduce) {
  auto m = logits.value().mat();
  const Index L = m.rows(), V = m.cols();
  if (static_cast<Index>(targets.size()) != L || static_cast<Index>(mask.size()) != L)
    throw std::invalid_argument("cross_entropy_rows: target/mask length mismatch");
  Index active = 0;
  for (bool b : mask) active += b ? 1 : 0;
  if (active == 0) throw std::invalid_argument("cross_entropy_rows: all positions masked");
  double total = 0.0;
  for (Index r = 0; r < L; ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    if (targets[static_cast<std::size_t>(r)] < 0 || targets[static_cast<std::size_t>(r)] >= V)
      throw std::out_of_range("cross_entropy_rows: target out of range");
    const double mx = m.row(r).maxCoeff();
    const double lse = mx + std::log((m.row(r).array() - mx).exp().sum());
    total += lse - m(r, targets[static_cast<std::size_t>(r)]);
  }
  const double norm = mean_reduce ? static_cast<double>(active) : 1.0;
  Index il = logits.id();
  return emplace(Tensor::scalar(total / norm), node(il).requires_grad,
                 [il, targets, mask, norm](Graph& g, Node& n) {
                   auto lm = g.node(il).value.mat();
                   auto gm = g.grad_buffer(il).mat();
                   const double go = n.grad[0] / norm;
                   for (Index r = 0; r < lm.rows(); ++r) {
                     if (!mask[static_cast<std::size_t>(r)]) continue;
                     const double mx = lm.row(r).maxCoeff();
                     Eigen::ArrayXd p = (lm.row(r).array() - mx).exp();
                     p /= p.sum();
                     gm.row(r).array() += go * p.transpose();
                     gm(r, targets[static_cast<std::size_t>(r)]) -= go;
                   }
                 });
}

}  // namespace multivae::ad
