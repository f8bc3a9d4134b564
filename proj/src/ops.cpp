#include "deconf/ops.hpp"

#include <cmath>
#include <random>

namespace deconf {

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
}

void require_row(Var row, Index cols, const char* op) {
  if (row.rows() != 1 || row.cols() != cols) {
    throw DimensionError(std::string(op) + ": expected a 1x" + std::to_string(cols) + " row");
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + " differ");
  }
  Tape& t = *a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  Tensor out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.requires_grad(ib)) tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var add_row(Var a, Var row) {
  require_row(row, a.cols(), "add_row");
  const std::size_t ia = a.id(), ir = row.id();
  Tensor out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [ia, ir](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    tp.accumulate(ia, g);
    if (tp.requires_grad(ir)) tp.grad(ir) += g.colwise().sum();
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  Tensor out = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.requires_grad(ib)) tp.grad(ib) += g.cwiseProduct(tp.value(ia));
  });
}

Var scale(Var a, double factor) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value() * factor, {a}, [ia, factor](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self) * factor);
  });
}

Var gelu(Var x) {
  const std::size_t ix = x.id();
  Tensor out = x.value().unaryExpr([](double v) { return deconf::gelu(v); });
  return x.tape()->record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const Tensor d = tp.value(ix).unaryExpr([](double v) { return gelu_derivative(v); });
    tp.accumulate(ix, tp.grad(self).cwiseProduct(d));
  });
}

Var softmax_rows(Var x) {
  const std::size_t ix = x.id();
  Tensor out = deconf::softmax_rows(x.value());
  return x.tape()->record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const Tensor& p = tp.value(self);
    const Tensor& g = tp.grad(self);
    const Eigen::VectorXd dots = g.cwiseProduct(p).rowwise().sum();
    Tensor dx = p.cwiseProduct(g.colwise() - dots);
    tp.accumulate(ix, dx);
  });
}

Var sum(Var x) {
  const std::size_t ix = x.id();
  Tensor out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape()->record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)(0, 0);
    if (tp.requires_grad(ix)) tp.grad(ix).array() += g;
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  if (!(eps > 0)) throw ValidationError("layer_norm: eps must be positive");
  const Index d = x.cols();
  require_row(gain, d, "layer_norm gain");
  require_row(bias, d, "layer_norm bias");
  const Tensor& xv = x.value();
  Tensor xhat(xv.rows(), d);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Tensor out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix().rowwise() +
               bias.value().row(0);
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp,
                                                                         std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(ig)) tp.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
        if (tp.requires_grad(ib)) tp.grad(ib) += g.colwise().sum();
        if (!tp.requires_grad(ix)) return;
        const Tensor dxhat = g.array().rowwise() * tp.value(ig).row(0).array();
        const Eigen::VectorXd mean_dxhat = dxhat.rowwise().mean();
        const Eigen::VectorXd mean_dxhat_xhat = dxhat.cwiseProduct(xhat).rowwise().mean();
        Tensor dx = dxhat;
        dx.colwise() -= mean_dxhat;
        dx -= (xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
        dx = dx.array().colwise() * inv_std.array();
        tp.grad(ix) += dx;
      });
}

Var cross_entropy_logits(Var logits, std::span<const int> labels) {
  if (logits.cols() != 2) throw DimensionError("cross_entropy_logits: logits must have 2 columns");
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw DimensionError("cross_entropy_logits: label count differs from logit rows");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("cross_entropy_logits: label out of range");
  }
  const Index m = logits.rows();
  Tensor probs = deconf::softmax_rows(logits.value());
  double loss = 0;
  for (Index r = 0; r < m; ++r) {
    const auto row = logits.value().row(r);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    loss += lse - row(labels[r]);
  }
  Tensor out(1, 1);
  out(0, 0) = loss / static_cast<double>(m);
  std::vector<int> ys(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  return logits.tape()->record(
      std::move(out), {logits},
      [il, probs = std::move(probs), ys = std::move(ys)](Tape& tp, std::size_t self) {
        const double g = tp.grad(self)(0, 0);
        Tensor d = probs;
        for (std::size_t r = 0; r < ys.size(); ++r) d(static_cast<Index>(r), ys[r]) -= 1.0;
        tp.accumulate(il, d * (g / static_cast<double>(ys.size())));
      });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  Tensor out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw ValidationError("embedding: id " + std::to_string(ids[i]) + " out of range [0, " +
                            std::to_string(tv.rows()) + ")");
    }
    out.row(static_cast<Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  const std::size_t it = table.id();
  return table.tape()->record(std::move(out), {table},
                              [it, idv = std::move(idv)](Tape& tp, std::size_t self) {
                                const Tensor& g = tp.grad(self);
                                Tensor& gt = tp.grad(it);
                                for (std::size_t i = 0; i < idv.size(); ++i) {
                                  gt.row(idv[i]) += g.row(static_cast<Index>(i));
                                }
                              });
}

Var mean_pool(Var x, const Segments& segments) {
  if (segments.total_rows() != x.rows()) {
    throw DimensionError("mean_pool: segments do not cover the input rows");
  }
  const Index n = segments.count();
  Tensor out(n, x.cols());
  for (Index s = 0; s < n; ++s) {
    if (segments.length(s) <= 0) throw DimensionError("mean_pool: empty segment");
    out.row(s) = x.value().middleRows(segments.begin(s), segments.length(s)).colwise().mean();
  }
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, segments](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(ix);
    for (Index s = 0; s < segments.count(); ++s) {
      const double inv = 1.0 / static_cast<double>(segments.length(s));
      gx.middleRows(segments.begin(s), segments.length(s)).rowwise() += g.row(s) * inv;
    }
  });
}

Var dropout(Var x, double rate, std::uint64_t seed) {
  if (rate < 0 || rate >= 1) throw ValidationError("dropout: rate must lie in [0, 1)");
  if (rate == 0) return x;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  Tensor mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? inv : 0.0;
  Tensor out = x.value().cwiseProduct(mask);
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x},
                          [ix, mask = std::move(mask)](Tape& tp, std::size_t self) {
                            tp.accumulate(ix, tp.grad(self).cwiseProduct(mask));
                          });
}

Var attention(Var q, Var k, Var v, const Segments& segments, int n_heads) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  if (n_heads <= 0 || q.cols() % n_heads != 0) {
    throw DimensionError("attention: model width not divisible by head count");
  }
  if (segments.total_rows() != q.rows()) {
    throw DimensionError("attention: segments do not cover the input rows");
  }
  const Index dh = q.cols() / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  Tensor out(q.rows(), q.cols());
  // probs[s * n_heads + h] holds the attention weights of segment s, head h
  std::vector<Tensor> probs(static_cast<std::size_t>(segments.count() * n_heads));
  for (Index s = 0; s < segments.count(); ++s) {
    const Index r0 = segments.begin(s), len = segments.length(s);
    for (int h = 0; h < n_heads; ++h) {
      const Index c0 = h * dh;
      Tensor scores = qv.block(r0, c0, len, dh) * kv.block(r0, c0, len, dh).transpose() * inv_sqrt;
      Tensor& p = probs[static_cast<std::size_t>(s * n_heads + h)];
      p = deconf::softmax_rows(scores);
      out.block(r0, c0, len, dh).noalias() = p * vv.block(r0, c0, len, dh);
    }
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->record(
      std::move(out), {q, k, v},
      [iq, ik, iv, segments, n_heads, dh, inv_sqrt, probs = std::move(probs)](Tape& tp,
                                                                              std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& qv = tp.value(iq);
        const Tensor& kv = tp.value(ik);
        const Tensor& vv = tp.value(iv);
        Tensor dq = Tensor::Zero(qv.rows(), qv.cols());
        Tensor dk = Tensor::Zero(qv.rows(), qv.cols());
        Tensor dv = Tensor::Zero(qv.rows(), qv.cols());
        for (Index s = 0; s < segments.count(); ++s) {
          const Index r0 = segments.begin(s), len = segments.length(s);
          for (int h = 0; h < n_heads; ++h) {
            const Index c0 = h * dh;
            const Tensor& p = probs[static_cast<std::size_t>(s * n_heads + h)];
            const auto go = g.block(r0, c0, len, dh);
            dv.block(r0, c0, len, dh).noalias() = p.transpose() * go;
            const Tensor dp = go * vv.block(r0, c0, len, dh).transpose();
            const Eigen::VectorXd dots = dp.cwiseProduct(p).rowwise().sum();
            const Tensor ds = p.cwiseProduct(dp.colwise() - dots) * inv_sqrt;
            dq.block(r0, c0, len, dh).noalias() = ds * kv.block(r0, c0, len, dh);
            dk.block(r0, c0, len, dh).noalias() = ds.transpose() * qv.block(r0, c0, len, dh);
          }
        }
        tp.accumulate(iq, dq);
        tp.accumulate(ik, dk);
        tp.accumulate(iv, dv);
      });
}

}  // namespace deconf
