#include "fke/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace fke::ad {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor::Tensor(std::vector<std::size_t> extents, double fill) : shape(std::move(extents)) {
  data.assign(std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>()), fill);
}

Parameter::Parameter(std::string n, std::vector<std::size_t> extents)
    : name(std::move(n)), value(std::move(extents)) {
  zero_grad();
}

Var Tape::constant(std::vector<double> value) { return push(std::move(value), nullptr); }

Var Tape::push(std::vector<double> value, Backward backward, std::vector<double> aux) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    n.backward = std::move(backward);
    n.aux = std::move(aux);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

std::vector<double>& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad.assign(n.value.size(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  require(record_, "backward on a non-recording tape");
  require(dim(root) == 1, "backward root must be scalar");
  grad(root)[0] += 1.0;
  for (std::uint32_t i = root.id + 1; i-- > 0;) {
    if (nodes_[i].has_grad && nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

Var affine(Tape& t, const Parameter& w, const Parameter* b, Var x) {
  const std::size_t out = w.value.rows(), in = w.value.cols();
  require(t.dim(x) == in, "affine: input dimension mismatch");
  require(!b || b->value.size() == out, "affine: bias dimension mismatch");
  const double* W = w.value.data.data();
  const double* xv = t.value(x).data();
  std::vector<double> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = W + o * in;
    double s = b ? b->value.data[o] : 0.0;
    for (std::size_t i = 0; i < in; ++i) s += row[i] * xv[i];
    y[o] = s;
  }
  return t.push(std::move(y), [&w, b, x, out, in](Tape& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    const auto& xv = t.value(x);
    auto& dx = t.grad(x);
    const double* W = w.value.data.data();
    double* dW = w.grad.data();
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dy[o];
      if (g == 0.0) continue;
      const double* row = W + o * in;
      double* drow = dW + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        drow[i] += g * xv[i];
        dx[i] += g * row[i];
      }
    }
    if (b)
      for (std::size_t o = 0; o < out; ++o) b->grad[o] += dy[o];
  });
}

Var affine_cols(Tape& t, const Parameter& w, std::size_t col0, Var x, const Parameter* b) {
  const std::size_t out = w.value.rows(), stride = w.value.cols(), in = t.dim(x);
  require(col0 + in <= stride, "affine_cols: column range out of bounds");
  require(!b || b->value.size() == out, "affine_cols: bias dimension mismatch");
  const double* W = w.value.data.data();
  const double* xv = t.value(x).data();
  std::vector<double> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = W + o * stride + col0;
    double s = b ? b->value.data[o] : 0.0;
    for (std::size_t i = 0; i < in; ++i) s += row[i] * xv[i];
    y[o] = s;
  }
  return t.push(std::move(y), [&w, b, x, out, stride, in, col0](Tape& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    const auto& xv = t.value(x);
    auto& dx = t.grad(x);
    const double* W = w.value.data.data();
    double* dW = w.grad.data();
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dy[o];
      if (g == 0.0) continue;
      const double* row = W + o * stride + col0;
      double* drow = dW + o * stride + col0;
      for (std::size_t i = 0; i < in; ++i) {
        drow[i] += g * xv[i];
        dx[i] += g * row[i];
      }
    }
    if (b)
      for (std::size_t o = 0; o < out; ++o) b->grad[o] += dy[o];
  });
}

Var param_row(Tape& t, const Parameter& p, std::size_t r) {
  require(r < p.value.rows(), "param_row: row out of range");
  const std::size_t c = p.value.cols();
  std::vector<double> y(p.value.data.begin() + static_cast<std::ptrdiff_t>(r * c),
                        p.value.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
  return t.push(std::move(y), [&p, r, c](Tape& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    for (std::size_t i = 0; i < c; ++i) p.grad[r * c + i] += dy[i];
  });
}

Var add(Tape& t, Var a, Var b) {
  require(t.dim(a) == t.dim(b), "add: dimension mismatch");
  std::vector<double> y = t.value(a);
  const auto& bv = t.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return t.push(std::move(y), [a, b](Tape& t, std::uint32_t self) {
    const auto dy = t.grad(self);
    auto& da = t.grad(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    auto& db = t.grad(b);
    for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
  });
}

Var scale(Tape& t, Var x, double c) {
  std::vector<double> y = t.value(x);
  for (auto& v : y) v *= c;
  return t.push(std::move(y), [x, c](Tape& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    auto& dx = t.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += c * dy[i];
  });
}

Var concat(Tape& t, std::span<const Var> parts) {
  std::vector<double> y;
  for (Var p : parts) {
    const auto& v = t.value(p);
    y.insert(y.end(), v.begin(), v.end());
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(y), [ps = std::move(ps)](Tape& t, std::uint32_t self) {
    std::size_t off = 0;
    for (Var p : ps) {
      const std::size_t n = t.dim(p);
      const auto& dy = t.grad(self);
      auto& dp = t.grad(p);
      for (std::size_t i = 0; i < n; ++i) dp[i] += dy[off + i];
      off += n;
    }
  });
}

Var mean(Tape& t, std::span<const Var> xs) {
  require(!xs.empty(), "mean of an empty sequence");
  const std::size_t n = t.dim(xs.front());
  std::vector<double> y(n, 0.0);
  for (Var x : xs) {
    require(t.dim(x) == n, "mean: dimension mismatch");
    const auto& v = t.value(x);
    for (std::size_t i = 0; i < n; ++i) y[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  for (auto& v : y) v *= inv;
  std::vector<Var> ps(xs.begin(), xs.end());
  return t.push(std::move(y), [ps = std::move(ps), inv](Tape& t, std::uint32_t self) {
    for (Var x : ps) {
      const auto& dy = t.grad(self);
      auto& dx = t.grad(x);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += inv * dy[i];
    }
  });
}

Var sum(Tape& t, std::span<const Var> scalars) {
  double s = 0.0;
  for (Var x : scalars) {
    require(t.dim(x) == 1, "sum: non-scalar input");
    s += t.scalar(x);
  }
  std::vector<Var> ps(scalars.begin(), scalars.end());
  return t.push({s}, [ps = std::move(ps)](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    for (Var x : ps) t.grad(x)[0] += g;
  });
}

Var gru_step(Tape& t, Var xproj, Var h, const Parameter& u, const Parameter& bh) {
  const std::size_t H = t.dim(h);
  require(u.value.rows() == 3 * H && u.value.cols() == H, "gru_step: recurrent weight shape");
  require(bh.value.size() == 3 * H, "gru_step: recurrent bias shape");
  require(t.dim(xproj) == 3 * H, "gru_step: input projection size");
  const auto& xp = t.value(xproj);
  const auto& hv = t.value(h);
  const double* U = u.value.data.data();

  // aux layout: [z(H), r(H), n(H), hproj(3H)]
  std::vector<double> aux(6 * H);
  double* z = aux.data();
  double* r = z + H;
  double* n = r + H;
  double* hp = n + H;
  for (std::size_t o = 0; o < 3 * H; ++o) {
    const double* row = U + o * H;
    double s = bh.value.data[o];
    for (std::size_t i = 0; i < H; ++i) s += row[i] * hv[i];
    hp[o] = s;
  }
  std::vector<double> y(H);
  for (std::size_t i = 0; i < H; ++i) {
    z[i] = sigmoid(xp[i] + hp[i]);
    r[i] = sigmoid(xp[H + i] + hp[H + i]);
    n[i] = std::tanh(xp[2 * H + i] + r[i] * hp[2 * H + i]);
    y[i] = (1.0 - z[i]) * n[i] + z[i] * hv[i];
  }
  return t.push(
      std::move(y),
      [xproj, h, &u, &bh, H](Tape& t, std::uint32_t self) {
        const auto& dy = t.grad(self);
        const auto& aux = t.aux(self);
        const double* z = aux.data();
        const double* r = z + H;
        const double* n = r + H;
        const double* hp = n + H;
        const auto& hv = t.value(h);
        std::vector<double> dxp(3 * H), dhp(3 * H);
        std::vector<double> dh_direct(H);
        for (std::size_t i = 0; i < H; ++i) {
          const double dz = dy[i] * (hv[i] - n[i]);
          const double dn = dy[i] * (1.0 - z[i]);
          dh_direct[i] = dy[i] * z[i];
          const double dan = dn * (1.0 - n[i] * n[i]);
          const double dr = dan * hp[2 * H + i];
          const double daz = dz * z[i] * (1.0 - z[i]);
          const double dar = dr * r[i] * (1.0 - r[i]);
          dxp[i] = daz;
          dxp[H + i] = dar;
          dxp[2 * H + i] = dan;
          dhp[i] = daz;
          dhp[H + i] = dar;
          dhp[2 * H + i] = dan * r[i];
        }
        auto& gx = t.grad(xproj);
        for (std::size_t o = 0; o < 3 * H; ++o) gx[o] += dxp[o];
        auto& gh = t.grad(h);
        const double* U = u.value.data.data();
        double* dU = u.grad.data();
        for (std::size_t i = 0; i < H; ++i) gh[i] += dh_direct[i];
        for (std::size_t o = 0; o < 3 * H; ++o) {
          const double g = dhp[o];
          bh.grad[o] += g;
          if (g == 0.0) continue;
          const double* row = U + o * H;
          double* drow = dU + o * H;
          for (std::size_t i = 0; i < H; ++i) {
            drow[i] += g * hv[i];
            gh[i] += g * row[i];
          }
        }
      },
      std::move(aux));
}

Var softmax(Tape& t, Var logits) {
  const auto& z = t.value(logits);
  require(!z.empty(), "softmax of an empty vector");
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> y(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (y[i] = std::exp(z[i] - m));
  for (auto& v : y) v /= s;
  return t.push(std::move(y), [logits](Tape& t, std::uint32_t self) {
    const auto& y = t.value(Var{self});
    const auto& dy = t.grad(self);
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += dy[i] * y[i];
    auto& dz = t.grad(logits);
    for (std::size_t i = 0; i < y.size(); ++i) dz[i] += y[i] * (dy[i] - dot);
  });
}

Var row_softmax(Tape& t, const Parameter& scores) {
  const std::size_t c = scores.value.rows();
  require(scores.value.cols() == c, "row_softmax: scores must be square");
  std::vector<double> y(c * c);
  for (std::size_t i = 0; i < c; ++i) {
    const double* s = scores.value.data.data() + i * c;
    const double m = *std::max_element(s, s + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += (y[i * c + j] = std::exp(s[j] - m));
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] /= sum;
  }
  return t.push(std::move(y), [&scores, c](Tape& t, std::uint32_t self) {
    const auto& y = t.value(Var{self});
    const auto& dy = t.grad(self);
    for (std::size_t i = 0; i < c; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += dy[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) scores.grad[i * c + j] += y[i * c + j] * (dy[i * c + j] - dot);
    }
  });
}

Var vecmat(Tape& t, Var p, Var m) {
  const std::size_t c = t.dim(p);
  require(t.dim(m) == c * c, "vecmat: matrix must be [C, C] for a C-vector");
  const auto& pv = t.value(p);
  const auto& mv = t.value(m);
  std::vector<double> q(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    const double pi = pv[i];
    const double* row = mv.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) q[j] += pi * row[j];
  }
  return t.push(std::move(q), [p, m, c](Tape& t, std::uint32_t self) {
    const auto dq = t.grad(self);
    const auto& pv = t.value(p);
    const auto& mv = t.value(m);
    auto& dp = t.grad(p);
    for (std::size_t i = 0; i < c; ++i) {
      const double* row = mv.data() + i * c;
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += row[j] * dq[j];
      dp[i] += s;
    }
    auto& dm = t.grad(m);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) dm[i * c + j] += pv[i] * dq[j];
  });
}

Var nll(Tape& t, Var p, std::size_t label) {
  require(label < t.dim(p), "nll: label out of range");
  const double pl = t.value(p)[label];
  return t.push({-std::log(pl)}, [p, label](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    const double pl = t.value(p)[label];
    t.grad(p)[label] -= g / pl;
  });
}

Var trace_mean(Tape& t, Var m, std::size_t n) {
  require(t.dim(m) == n * n, "trace_mean: matrix must be [n, n]");
  const auto& mv = t.value(m);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += mv[i * n + i];
  return t.push({s / static_cast<double>(n)}, [m, n](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0] / static_cast<double>(n);
    auto& dm = t.grad(m);
    for (std::size_t i = 0; i < n; ++i) dm[i * n + i] += g;
  });
}

}  // namespace fke::ad
