#include "hypevents/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "hypevents/core/error.hpp"

namespace hypevents::ops {

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error(ErrorCode::contract, "op applied to an unbound Var");
  return *a.tape();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::dimension, std::string(op) + ": shapes " + to_string(a.shape()) +
                                          " and " + to_string(b.shape()) + " differ");
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw Error(ErrorCode::dimension,
                std::string(op) + ": expected a matrix, got shape " + to_string(a.shape()));
  }
}

void add_into(Tensor& dst, std::span<const double> src, double factor = 1.0) {
  auto d = dst.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * src[i];
}

struct AxisLayout {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisLayout axis_layout(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  const int a = axis < 0 ? rank + axis : axis;
  if (rank == 0 || a < 0 || a >= rank) {
    throw Error(ErrorCode::dimension,
                "softmax: axis " + std::to_string(axis) + " invalid for shape " + to_string(shape));
  }
  AxisLayout layout;
  for (int i = 0; i < a; ++i) layout.outer *= shape[i];
  layout.n = shape[a];
  for (int i = a + 1; i < rank; ++i) layout.inner *= shape[i];
  if (layout.n == 0) throw Error(ErrorCode::dimension, "softmax over an empty axis");
  return layout;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw Error(ErrorCode::dimension, "matmul: shape " + to_string(a.shape()) +
                                          " incompatible with " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisLayout l = axis_layout(x.shape(), axis);
  Tensor y(x.shape());
  const auto in = x.data();
  auto out = y.data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.n * l.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < l.n; ++j) mx = std::max(mx, in[base + j * l.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < l.n; ++j) {
        const double e = std::exp(in[base + j * l.inner] - mx);
        out[base + j * l.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < l.n; ++j) out[base + j * l.inner] /= total;
    }
  }
  return y;
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  add_into(out, b.value().data());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).data();
    if (tp.requires_grad(ia)) add_into(tp.grad(ia), g);
    if (tp.requires_grad(ib)) add_into(tp.grad(ib), g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  add_into(out, b.value().data(), -1.0);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).data();
    if (tp.requires_grad(ia)) add_into(tp.grad(ia), g);
    if (tp.requires_grad(ib)) add_into(tp.grad(ib), g, -1.0);
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  {
    auto o = out.data();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).data();
    const auto av = tp.value(ia).data();
    const auto bv = tp.value(ib).data();
    if (tp.requires_grad(ia)) {
      auto ga = tp.grad(ia).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.grad(ib).data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, factor](Tape& tp, std::size_t self) {
    add_into(tp.grad(ia), tp.grad(self).data(), factor);
  });
}

Var add_bias(Var x, Var bias) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rank() != 1 || xv.rank() == 0 || xv.shape().back() != bv.dim(0)) {
    throw Error(ErrorCode::dimension, "add_bias: bias " + to_string(bv.shape()) +
                                          " does not match trailing dim of " +
                                          to_string(xv.shape()));
  }
  const std::size_t n = bv.dim(0);
  Tensor out = xv;
  {
    auto o = out.data();
    const auto b = bv.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i % n];
  }
  const std::size_t ix = x.id(), ib = bias.id();
  return t.record(std::move(out), {x, bias}, [ix, ib, n](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).data();
    if (tp.requires_grad(ix)) add_into(tp.grad(ix), g);
    if (tp.requires_grad(ib)) {
      auto gb = tp.grad(ib).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  Tensor out = matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    const double* g = tp.grad(self).data().data();
    const double* pa = av.data().data();
    const double* pb = bv.data().data();
    if (tp.requires_grad(ia)) {
      double* ga = tp.grad(ia).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (tp.requires_grad(ib)) {
      double* gb = tp.grad(ib).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av_ip = pa[i * k + p];
          if (av_ip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av_ip * g[i * n + j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require_matrix("transpose", av);
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var x) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) {
    const double u = kGeluC * (v + kGeluA * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).data();
    const auto xv = tp.value(ix).data();
    auto gx = tp.grad(ix).data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xv[i];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      gx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  });
}

Var softmax(Var x, int axis) {
  Tape& t = tape_of(x);
  Tensor out = softmax(x.value(), axis);
  const AxisLayout l = axis_layout(x.value().shape(), axis);
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix, l](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).data();
    const auto y = tp.value(self).data();
    auto gx = tp.grad(ix).data();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        const std::size_t base = o * l.n * l.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < l.n; ++j) {
          const std::size_t k = base + j * l.inner;
          dot += g[k] * y[k];
        }
        for (std::size_t j = 0; j < l.n; ++j) {
          const std::size_t k = base + j * l.inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  Tape& t = tape_of(logits);
  const Tensor& lv = logits.value();
  std::size_t b = 0, n = 0;
  if (lv.rank() == 1) {
    b = 1;
    n = lv.dim(0);
  } else if (lv.rank() == 2) {
    b = lv.dim(0);
    n = lv.dim(1);
  } else {
    throw Error(ErrorCode::dimension, "cross_entropy: logits must be [b, n], got " +
                                          to_string(lv.shape()));
  }
  if (targets.size() != b) {
    throw Error(ErrorCode::dimension, "cross_entropy: " + std::to_string(targets.size()) +
                                          " targets for " + std::to_string(b) + " rows");
  }
  if (!mask.empty() && mask.size() != b) {
    throw Error(ErrorCode::dimension, "cross_entropy: mask length " + std::to_string(mask.size()) +
                                          " for " + std::to_string(b) + " rows");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> keep(b, 1);
  if (!mask.empty()) std::copy(mask.begin(), mask.end(), keep.begin());
  std::size_t active = 0;
  for (std::size_t r = 0; r < b; ++r) {
    if (!keep[r]) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= n) {
      throw Error(ErrorCode::contract, "cross_entropy: target " + std::to_string(tgt[r]) +
                                           " out of range for " + std::to_string(n) + " classes");
    }
    ++active;
  }
  if (active == 0) throw Error(ErrorCode::degenerate, "cross_entropy: every position is masked");

  const auto z = lv.data();
  Tensor probs({b, n});
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (!keep[r]) continue;
    const double* zr = z.data() + r * n;
    const double mx = *std::max_element(zr, zr + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(zr[j] - mx);
      probs.at(r, j) = e;
      s += e;
    }
    for (std::size_t j = 0; j < n; ++j) probs.at(r, j) /= s;
    total += (mx + std::log(s)) - zr[tgt[r]];
  }
  const double inv = 1.0 / static_cast<double>(active);
  const std::size_t il = logits.id();
  return t.record(Tensor::scalar(total * inv), {logits},
                  [il, b, n, inv, tgt = std::move(tgt), keep = std::move(keep),
                   probs = std::move(probs)](Tape& tp, std::size_t self) {
                    const double g = tp.grad(self).item() * inv;
                    auto gl = tp.grad(il).data();
                    for (std::size_t r = 0; r < b; ++r) {
                      if (!keep[r]) continue;
                      for (std::size_t j = 0; j < n; ++j) gl[r * n + j] += g * probs.at(r, j);
                      gl[r * n + tgt[r]] -= g;
                    }
                  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_matrix("layer_norm", xv);
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (gamma.value().shape() != Shape{n} || beta.value().shape() != Shape{n}) {
    throw Error(ErrorCode::dimension, "layer_norm: gamma/beta must have shape [" +
                                          std::to_string(n) + "]");
  }
  Tensor xhat({m, n});
  std::vector<double> rstd(m);
  Tensor out({m, n});
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv.at(r, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv.at(r, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat.at(r, j) = (xv.at(r, j) - mu) * rstd[r];
      out.at(r, j) = xhat.at(r, j) * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return t.record(std::move(out), {x, gamma, beta},
                  [ix, ig, ib, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](
                      Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const auto gv = tp.value(ig).data();
                    if (tp.requires_grad(ig) || tp.requires_grad(ib)) {
                      Tensor* gg = tp.requires_grad(ig) ? &tp.grad(ig) : nullptr;
                      Tensor* gb = tp.requires_grad(ib) ? &tp.grad(ib) : nullptr;
                      for (std::size_t r = 0; r < m; ++r) {
                        for (std::size_t j = 0; j < n; ++j) {
                          if (gg) (*gg)[j] += g.at(r, j) * xhat.at(r, j);
                          if (gb) (*gb)[j] += g.at(r, j);
                        }
                      }
                    }
                    if (tp.requires_grad(ix)) {
                      Tensor& gx = tp.grad(ix);
                      const double inv_n = 1.0 / static_cast<double>(n);
                      for (std::size_t r = 0; r < m; ++r) {
                        double mean_d = 0.0, mean_dx = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double d = g.at(r, j) * gv[j];
                          mean_d += d;
                          mean_dx += d * xhat.at(r, j);
                        }
                        mean_d *= inv_n;
                        mean_dx *= inv_n;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double d = g.at(r, j) * gv[j];
                          gx.at(r, j) += rstd[r] * (d - mean_d - xhat.at(r, j) * mean_dx);
                        }
                      }
                    }
                  });
}

Var embedding(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Tensor& tv = table.value();
  require_matrix("embedding", tv);
  const std::size_t v = tv.dim(0), d = tv.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= v) {
      throw Error(ErrorCode::contract, "embedding: id " + std::to_string(rows[i]) +
                                           " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(tv.data().data() + rows[i] * d, d, out.data().data() + i * d);
  }
  const std::size_t it = table.id();
  return t.record(std::move(out), {table}, [it, d, rows = std::move(rows)](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).data();
    auto gt = tp.grad(it).data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t base = static_cast<std::size_t>(rows[i]) * d;
      for (std::size_t j = 0; j < d; ++j) gt[base + j] += g[i * d + j];
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_matrix("slice_cols", xv);
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (begin + count > n) {
    throw Error(ErrorCode::dimension, "slice_cols: [" + std::to_string(begin) + ", " +
                                          std::to_string(begin + count) + ") outside " +
                                          to_string(xv.shape()));
  }
  Tensor out({m, count});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < count; ++j) out.at(r, j) = xv.at(r, begin + j);
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix, m, begin, count](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(ix);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < count; ++j) gx.at(r, begin + j) += g.at(r, j);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::contract, "concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const std::size_t m = parts.front().value().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix("concat_cols", p.value());
    if (p.value().dim(0) != m) {
      throw Error(ErrorCode::dimension, "concat_cols: row counts differ (" + std::to_string(m) +
                                            " vs " + std::to_string(p.value().dim(0)) + ")");
    }
    offsets.push_back(total);
    total += p.value().dim(1);
  }
  Tensor out({m, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < pv.dim(1); ++j) out.at(r, offsets[k] + j) = pv.at(r, j);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return t.record(std::move(out), inputs,
                  [m, ids = std::move(ids), offsets = std::move(offsets)](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!tp.requires_grad(ids[k])) continue;
                      Tensor& gp = tp.grad(ids[k]);
                      const std::size_t w = gp.dim(1);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t j = 0; j < w; ++j) gp.at(r, j) += g.at(r, offsets[k] + j);
                    }
                  });
}

Var row(Var x, std::size_t r) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_matrix("row", xv);
  if (r >= xv.dim(0)) {
    throw Error(ErrorCode::dimension, "row " + std::to_string(r) + " outside " + to_string(xv.shape()));
  }
  const std::size_t n = xv.dim(1);
  Tensor out({1, n});
  std::copy_n(xv.data().data() + r * n, n, out.data().data());
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix, r, n](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).data();
    auto gx = tp.grad(ix).data();
    for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[j];
  });
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return t.record(Tensor::scalar(s), {x}, [ix](Tape& tp, std::size_t self) {
    const double g = tp.grad(self).item();
    for (double& v : tp.grad(ix).data()) v += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().numel();
  if (n == 0) throw Error(ErrorCode::degenerate, "mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var dropout(Var x, double rate, RngStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw Error(ErrorCode::contract, "dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;
  Tape& t = tape_of(x);
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(x.value().shape());
  for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out = x.value();
  {
    auto o = out.data();
    const auto mk = mask.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mk[i];
  }
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix, mask = std::move(mask)](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).data();
    const auto mk = mask.data();
    auto gx = tp.grad(ix).data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * mk[i];
  });
}

}  // namespace hypevents::ops
