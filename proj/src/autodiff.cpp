#include "p2c/autodiff.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "p2c/errors.hpp"
#include "p2c/kernels.hpp"

namespace p2c::ad {

Tape::Tape(std::span<const Matrix> params, std::vector<Matrix>* grads) : params_(params), grads_(grads) {
  if (grads_ && grads_->size() != params_.size()) throw ShapeMismatch("gradient set does not match parameters");
}

NodeId Tape::param(std::size_t index) {
  Node n;
  n.ref = &params_[index];
  n.param_index = static_cast<std::ptrdiff_t>(index);
  n.needs_grad = recording();
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Tape::constant(Matrix value) { return push(std::move(value)); }

NodeId Tape::push(Matrix value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

void Tape::on_backward(NodeId id, std::function<void(Tape&)> fn) {
  nodes_[id].back = std::move(fn);
  nodes_[id].needs_grad = true;
}

const Matrix& Tape::value(NodeId id) const { return nodes_[id].value(); }

Matrix& Tape::grad(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    const Matrix& v = n.value();
    n.grad = Matrix(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::backward(NodeId root) {
  if (!recording()) throw Error("backward on a tape without a gradient set");
  const Matrix& r = value(root);
  if (r.rows() != 1 || r.cols() != 1) throw ShapeMismatch("backward root must be 1x1");
  grad(root)(0, 0) = 1.0;
  for (NodeId id = root + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.back) n.back(*this);
    if (n.param_index >= 0) {
      auto& g = (*grads_)[static_cast<std::size_t>(n.param_index)];
      auto src = n.grad.values();
      auto dst = g.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

void masked_softmax(Matrix& scores, const MaskMatrix* mask) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    auto row = scores.row(r);
    double peak = kNegInf;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (mask && (*mask)(r, c)) continue;
      peak = std::max(peak, row[c]);
    }
    if (peak == kNegInf) {
      std::fill(row.begin(), row.end(), 0.0);
      continue;
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (mask && (*mask)(r, c)) {
        row[c] = 0.0;
      } else {
        row[c] = std::exp(row[c] - peak);
        sum += row[c];
      }
    }
    for (double& x : row) x /= sum;
  }
}

namespace {

void add_into(Matrix& dst, const Matrix& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

bool any_requires(const Tape& t, std::initializer_list<NodeId> ids) {
  if (!t.recording()) return false;
  for (auto id : ids) {
    if (t.requires_grad(id)) return true;
  }
  return false;
}

Matrix column_block(const Matrix& m, std::size_t start, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < width; ++c) out(r, c) = m(r, start + c);
  }
  return out;
}

void add_column_block(Matrix& dst, const Matrix& block, std::size_t start) {
  for (std::size_t r = 0; r < block.rows(); ++r) {
    for (std::size_t c = 0; c < block.cols(); ++c) dst(r, start + c) += block(r, c);
  }
}

}  // namespace

NodeId embed(Tape& t, NodeId table, std::span<const std::int32_t> ids, double scale) {
  const Matrix& w = t.value(table);
  Matrix out(ids.size(), w.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= w.rows()) {
      throw UnknownId("embedding id " + std::to_string(id) + " outside table of " + std::to_string(w.rows()));
    }
    auto src = w.row(static_cast<std::size_t>(id));
    auto dst = out.row(r);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] = src[c] * scale;
  }
  const NodeId y = t.push(std::move(out));
  if (any_requires(t, {table})) {
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    t.on_backward(y, [y, table, saved = std::move(saved), scale](Tape& tp) {
      const Matrix& g = tp.grad(y);
      Matrix& gw = tp.grad(table);
      for (std::size_t r = 0; r < saved.size(); ++r) {
        auto src = g.row(r);
        auto dst = gw.row(static_cast<std::size_t>(saved[r]));
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c] * scale;
      }
    });
  }
  return y;
}

NodeId linear(Tape& t, NodeId x, NodeId w, NodeId b) {
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(w);
  const Matrix& bv = t.value(b);
  if (bv.rows() != 1 || bv.cols() != wv.cols()) throw ShapeMismatch("linear bias shape");
  Matrix out;
  kernels::matmul(xv, wv, out);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv(0, c);
  }
  const NodeId y = t.push(std::move(out));
  if (any_requires(t, {x, w, b})) {
    t.on_backward(y, [y, x, w, b](Tape& tp) {
      const Matrix& g = tp.grad(y);
      if (tp.requires_grad(x)) kernels::matmul_a_bt(g, tp.value(w), tp.grad(x), kernels::Accumulate::Yes);
      if (tp.requires_grad(w)) kernels::matmul_at_b(tp.value(x), g, tp.grad(w), kernels::Accumulate::Yes);
      if (tp.requires_grad(b)) {
        Matrix& gb = tp.grad(b);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
        }
      }
    });
  }
  return y;
}

NodeId add(Tape& t, NodeId a, NodeId b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (!av.same_shape(bv)) throw ShapeMismatch("add");
  Matrix out = av;
  add_into(out, bv);
  const NodeId y = t.push(std::move(out));
  if (any_requires(t, {a, b})) {
    t.on_backward(y, [y, a, b](Tape& tp) {
      const Matrix& g = tp.grad(y);
      if (tp.requires_grad(a)) add_into(tp.grad(a), g);
      if (tp.requires_grad(b)) add_into(tp.grad(b), g);
    });
  }
  return y;
}

NodeId add_constant(Tape& t, NodeId x, const Matrix& c) {
  const Matrix& xv = t.value(x);
  if (c.cols() != xv.cols() || c.rows() < xv.rows()) throw ShapeMismatch("add_constant");
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    auto add = c.row(r);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] += add[k];
  }
  const NodeId y = t.push(std::move(out));
  if (any_requires(t, {x})) {
    t.on_backward(y, [y, x](Tape& tp) { add_into(tp.grad(x), tp.grad(y)); });
  }
  return y;
}

NodeId relu(Tape& t, NodeId x) {
  Matrix out = t.value(x);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const NodeId y = t.push(std::move(out));
  if (any_requires(t, {x})) {
    t.on_backward(y, [y, x](Tape& tp) {
      auto g = tp.grad(y).values();
      auto in = tp.value(x).values();
      auto gx = tp.grad(x).values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] > 0.0) gx[i] += g[i];
      }
    });
  }
  return y;
}

NodeId layer_norm(Tape& t, NodeId x, NodeId gamma, NodeId beta, double eps) {
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gamma);
  const Matrix& bv = t.value(beta);
  const std::size_t n = xv.cols();
  if (gv.rows() != 1 || gv.cols() != n || !gv.same_shape(bv)) throw ShapeMismatch("layer_norm");

  auto normalized = std::make_shared<Matrix>(xv.rows(), n);
  auto inv_std = std::make_shared<std::vector<double>>(xv.rows());
  Matrix out(xv.rows(), n);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = s;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mean) * s;
      (*normalized)(r, c) = h;
      out(r, c) = h * gv(0, c) + bv(0, c);
    }
  }
  const NodeId y = t.push(std::move(out));
  if (any_requires(t, {x, gamma, beta})) {
    t.on_backward(y, [y, x, gamma, beta, normalized, inv_std](Tape& tp) {
      const Matrix& g = tp.grad(y);
      const Matrix& gv = tp.value(gamma);
      const std::size_t n = g.cols();
      if (tp.requires_grad(gamma) || tp.requires_grad(beta)) {
        Matrix& gg = tp.grad(gamma);
        Matrix& gb = tp.grad(beta);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < n; ++c) {
            gg(0, c) += g(r, c) * (*normalized)(r, c);
            gb(0, c) += g(r, c);
          }
        }
      }
      if (tp.requires_grad(x)) {
        Matrix& gx = tp.grad(x);
        std::vector<double> dh(n);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            dh[c] = g(r, c) * gv(0, c);
            mean_dh += dh[c];
            mean_dh_h += dh[c] * (*normalized)(r, c);
          }
          mean_dh /= static_cast<double>(n);
          mean_dh_h /= static_cast<double>(n);
          const double s = (*inv_std)[r];
          for (std::size_t c = 0; c < n; ++c) {
            gx(r, c) += s * (dh[c] - mean_dh - (*normalized)(r, c) * mean_dh_h);
          }
        }
      }
    });
  }
  return y;
}

NodeId dropout(Tape& t, NodeId x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  const Matrix& xv = t.value(x);
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  Matrix out(xv.rows(), xv.cols());
  auto in = xv.values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    (*mask)[i] = rng.uniform01() < rate ? 0.0 : keep_scale;
    o[i] = in[i] * (*mask)[i];
  }
  const NodeId y = t.push(std::move(out));
  if (any_requires(t, {x})) {
    t.on_backward(y, [y, x, mask](Tape& tp) {
      auto g = tp.grad(y).values();
      auto gx = tp.grad(x).values();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
    });
  }
  return y;
}

NodeId multi_head_attention(Tape& t, NodeId q, NodeId k, NodeId v, std::size_t heads, const MaskMatrix& mask) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  const std::size_t d = qv.cols();
  if (heads == 0 || d % heads != 0 || kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows()) {
    throw ShapeMismatch("multi_head_attention inputs");
  }
  if (mask.rows != qv.rows() || mask.cols != kv.rows()) throw ShapeMismatch("multi_head_attention mask");
  const std::size_t dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  auto weights = std::make_shared<std::vector<Matrix>>(heads);
  Matrix out(qv.rows(), d);
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix qh = column_block(qv, h * dk, dk);
    const Matrix kh = column_block(kv, h * dk, dk);
    const Matrix vh = column_block(vv, h * dk, dk);
    Matrix scores;
    kernels::matmul_a_bt(qh, kh, scores);
    for (double& s : scores.values()) s *= scale;
    masked_softmax(scores, &mask);
    Matrix oh;
    kernels::matmul(scores, vh, oh);
    add_column_block(out, oh, h * dk);
    (*weights)[h] = std::move(scores);
  }
  const NodeId y = t.push(std::move(out));
  if (any_requires(t, {q, k, v})) {
    t.on_backward(y, [y, q, k, v, heads, dk, scale, weights](Tape& tp) {
      const Matrix& g = tp.grad(y);
      const Matrix& qv = tp.value(q);
      const Matrix& kv = tp.value(k);
      const Matrix& vv = tp.value(v);
      for (std::size_t h = 0; h < heads; ++h) {
        const Matrix& p = (*weights)[h];
        const Matrix gh = column_block(g, h * dk, dk);
        if (tp.requires_grad(v)) {
          Matrix gvh;
          kernels::matmul_at_b(p, gh, gvh);
          add_column_block(tp.grad(v), gvh, h * dk);
        }
        if (!tp.requires_grad(q) && !tp.requires_grad(k)) continue;
        Matrix dp;
        kernels::matmul_a_bt(gh, column_block(vv, h * dk, dk), dp);
        // softmax backward: ds = p * (dp - rowsum(dp * p)), then the 1/sqrt(dk) scale
        for (std::size_t r = 0; r < dp.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dp.cols(); ++c) dot += dp(r, c) * p(r, c);
          for (std::size_t c = 0; c < dp.cols(); ++c) dp(r, c) = p(r, c) * (dp(r, c) - dot) * scale;
        }
        if (tp.requires_grad(q)) {
          Matrix gqh;
          kernels::matmul(dp, column_block(kv, h * dk, dk), gqh);
          add_column_block(tp.grad(q), gqh, h * dk);
        }
        if (tp.requires_grad(k)) {
          Matrix gkh;
          kernels::matmul_at_b(dp, column_block(qv, h * dk, dk), gkh);
          add_column_block(tp.grad(k), gkh, h * dk);
        }
      }
    });
  }
  return y;
}

NodeId cross_entropy(Tape& t, NodeId logits, std::span<const std::int32_t> targets, double normalizer,
                     std::int32_t ignore) {
  const Matrix& lv = t.value(logits);
  if (targets.size() != lv.rows()) throw ShapeMismatch("cross_entropy targets");
  auto probs = std::make_shared<Matrix>(lv);
  masked_softmax(*probs, nullptr);
  double total = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    const auto target = targets[r];
    if (target == ignore) continue;
    if (target < 0 || static_cast<std::size_t>(target) >= lv.cols()) throw UnknownId("target id out of range");
    auto row = lv.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double x : row) sum += std::exp(x - peak);
    total += peak + std::log(sum) - row[static_cast<std::size_t>(target)];
  }
  Matrix out(1, 1, total / normalizer);
  const NodeId y = t.push(std::move(out));
  if (any_requires(t, {logits})) {
    std::vector<std::int32_t> saved(targets.begin(), targets.end());
    t.on_backward(y, [y, logits, probs, saved = std::move(saved), normalizer, ignore](Tape& tp) {
      const double g = tp.grad(y)(0, 0) / normalizer;
      Matrix& gl = tp.grad(logits);
      for (std::size_t r = 0; r < saved.size(); ++r) {
        if (saved[r] == ignore) continue;
        for (std::size_t c = 0; c < gl.cols(); ++c) gl(r, c) += g * (*probs)(r, c);
        gl(r, static_cast<std::size_t>(saved[r])) -= g;
      }
    });
  }
  return y;
}

}  // namespace p2c::ad
