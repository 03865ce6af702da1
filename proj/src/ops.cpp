#include "cehr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#ifdef CEHR_USE_OPENBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

namespace cehr {

using detail::grad_of;
using detail::make_result;
using detail::Node;

namespace {

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
    throw std::invalid_argument(op + ": " + what);
}

void require_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::size_t last_dim(const std::string& op, const Tensor& x) {
    if (x.rank() == 0) shape_error(op, "needs at least one axis");
    return x.shape().back();
}

Tensor finish(Tensor t, [[maybe_unused]] const char* op) {
    CEHR_DEBUG_FINITE(t, op);
    return t;
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
#ifdef CEHR_USE_OPENBLAS
    // One thread keeps summation order, and so results, reproducible.
    static const bool single_threaded = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)single_threaded;
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (!accumulate) std::fill(c, c + m * n, 0.0);
        return;
    }
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a, trans_a ? static_cast<int>(m) : static_cast<int>(k),
                b, trans_b ? static_cast<int>(k) : static_cast<int>(n), accumulate ? 1.0 : 0.0, c, static_cast<int>(n));
    return;
#endif
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    if (!trans_a && !trans_b) {
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = c + i * n;
            const double* arow = a + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = b + j * k;
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
                crow[j] += s;
            }
        }
    } else if (trans_a && !trans_b) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* acol = a + p * m;
            const double* brow = b + p * n;
            for (std::size_t i = 0; i < m; ++i) {
                const double av = acol[i];
                double* crow = c + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
                c[i * n + j] += s;
            }
        }
    }
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        shape_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n);
    gemm(false, false, m, n, k, a.values().data(), b.values().data(), out.data(), false);
    return finish(make_result({m, n}, std::move(out), {a, b},
                              [m, n, k](Node& self) {
                                  const Node& A = *self.inputs[0];
                                  const Node& B = *self.inputs[1];
                                  if (double* ga = grad_of(self, 0))
                                      gemm(false, true, m, k, n, self.grad.data(), B.value.data(), ga, true);
                                  if (double* gb = grad_of(self, 1))
                                      gemm(true, false, k, n, m, A.value.data(), self.grad.data(), gb, true);
                              }),
                  "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        shape_error("matmul_nt", shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<double> out(m * n);
    gemm(false, true, m, n, k, a.values().data(), b.values().data(), out.data(), false);
    return finish(make_result({m, n}, std::move(out), {a, b},
                              [m, n, k](Node& self) {
                                  const Node& A = *self.inputs[0];
                                  const Node& B = *self.inputs[1];
                                  // C = A B^T: dA = dC B, dB = dC^T A
                                  if (double* ga = grad_of(self, 0))
                                      gemm(false, false, m, k, n, self.grad.data(), B.value.data(), ga, true);
                                  if (double* gb = grad_of(self, 1))
                                      gemm(true, false, n, k, m, self.grad.data(), A.value.data(), gb, true);
                              }),
                  "matmul_nt");
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        shape_error("bmm", shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<double> out(batch * m * n);
    for (std::size_t s = 0; s < batch; ++s) {
        gemm(false, false, m, n, k, a.values().data() + s * m * k, b.values().data() + s * k * n,
             out.data() + s * m * n, false);
    }
    return finish(make_result({batch, m, n}, std::move(out), {a, b},
                              [batch, m, n, k](Node& self) {
                                  const Node& A = *self.inputs[0];
                                  const Node& B = *self.inputs[1];
                                  double* ga = grad_of(self, 0);
                                  double* gb = grad_of(self, 1);
                                  for (std::size_t s = 0; s < batch; ++s) {
                                      const double* gc = self.grad.data() + s * m * n;
                                      if (ga)
                                          gemm(false, true, m, k, n, gc, B.value.data() + s * k * n, ga + s * m * k,
                                               true);
                                      if (gb)
                                          gemm(true, false, k, n, m, A.value.data() + s * m * k, gc, gb + s * k * n,
                                               true);
                                  }
                              }),
                  "bmm");
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
        shape_error("bmm_nt", shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    }
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    std::vector<double> out(batch * m * n);
    for (std::size_t s = 0; s < batch; ++s) {
        gemm(false, true, m, n, k, a.values().data() + s * m * k, b.values().data() + s * n * k,
             out.data() + s * m * n, false);
    }
    return finish(make_result({batch, m, n}, std::move(out), {a, b},
                              [batch, m, n, k](Node& self) {
                                  const Node& A = *self.inputs[0];
                                  const Node& B = *self.inputs[1];
                                  double* ga = grad_of(self, 0);
                                  double* gb = grad_of(self, 1);
                                  for (std::size_t s = 0; s < batch; ++s) {
                                      const double* gc = self.grad.data() + s * m * n;
                                      if (ga)
                                          gemm(false, false, m, k, n, gc, B.value.data() + s * n * k, ga + s * m * k,
                                               true);
                                      if (gb)
                                          gemm(true, false, n, k, m, gc, A.value.data() + s * m * k, gb + s * n * k,
                                               true);
                                  }
                              }),
                  "bmm_nt");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    const std::size_t in = last_dim("linear", x);
    if (w.rank() != 2 || w.dim(0) != in) shape_error("linear", shape_str(x.shape()) + " by " + shape_str(w.shape()));
    const std::size_t out_dim = w.dim(1);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) shape_error("linear", "bias extent");
    const std::size_t rows = x.numel() / in;
    std::vector<double> out(rows * out_dim);
    if (bias.defined()) {
        for (std::size_t r = 0; r < rows; ++r) std::copy(bias.values().begin(), bias.values().end(), out.begin() + r * out_dim);
    }
    gemm(false, false, rows, out_dim, in, x.values().data(), w.values().data(), out.data(), bias.defined());
    Shape shape = x.shape();
    shape.back() = out_dim;
    auto backward = [rows, in, out_dim](Node& self) {
        const Node& X = *self.inputs[0];
        const Node& W = *self.inputs[1];
        if (double* gx = grad_of(self, 0)) gemm(false, true, rows, in, out_dim, self.grad.data(), W.value.data(), gx, true);
        if (double* gw = grad_of(self, 1)) gemm(true, false, in, out_dim, rows, X.value.data(), self.grad.data(), gw, true);
        if (self.inputs.size() > 2) {
            if (double* gb = grad_of(self, 2)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* g = self.grad.data() + r * out_dim;
                    for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[j];
                }
            }
        }
    };
    if (bias.defined()) return finish(make_result(std::move(shape), std::move(out), {x, w, bias}, backward), "linear");
    return finish(make_result(std::move(shape), std::move(out), {x, w}, backward), "linear");
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return finish(make_result(a.shape(), std::move(out), {a, b},
                              [](Node& self) {
                                  for (std::size_t in = 0; in < 2; ++in) {
                                      if (double* g = grad_of(self, in))
                                          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                                  }
                              }),
                  "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return finish(make_result(a.shape(), std::move(out), {a, b},
                              [](Node& self) {
                                  if (double* g = grad_of(self, 0))
                                      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                                  if (double* g = grad_of(self, 1))
                                      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
                              }),
                  "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return finish(make_result(a.shape(), std::move(out), {a, b},
                              [](Node& self) {
                                  const auto& av = self.inputs[0]->value;
                                  const auto& bv = self.inputs[1]->value;
                                  if (double* g = grad_of(self, 0))
                                      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
                                  if (double* g = grad_of(self, 1))
                                      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
                              }),
                  "mul");
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
    return finish(make_result(a.shape(), std::move(out), {a},
                              [s](Node& self) {
                                  if (double* g = grad_of(self, 0))
                                      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
                              }),
                  "scale");
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    const std::size_t n = last_dim("add_bias", x);
    if (bias.rank() != 1 || bias.dim(0) != n) shape_error("add_bias", "bias extent");
    std::vector<double> out(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.values()[i % n];
    return finish(make_result(x.shape(), std::move(out), {x, bias},
                              [n](Node& self) {
                                  if (double* g = grad_of(self, 0))
                                      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                                  if (double* g = grad_of(self, 1))
                                      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
                              }),
                  "add_bias");
}

namespace {

template <typename F, typename D>
Tensor unary(const Tensor& x, const char* name, F f, D dfdx) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.values()[i]);
    return finish(make_result(x.shape(), std::move(out), {x},
                              [dfdx](Node& self) {
                                  const auto& xv = self.inputs[0]->value;
                                  if (double* g = grad_of(self, 0))
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          g[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
                              }),
                  name);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor gelu(const Tensor& x) {
    return unary(
        x, "gelu",
        [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
        [](double v, double) {
            const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        });
}

Tensor tanh(const Tensor& x) {
    return unary(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, "sigmoid",
        [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor sin(const Tensor& x) {
    return unary(
        x, "sin", [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return make_result({}, {s}, {x}, [](Node& self) {
        if (double* g = grad_of(self, 0)) {
            const std::size_t n = self.inputs[0]->value.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) shape_error("mean", "empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------

namespace {

void softmax_backward_rows(const double* y, const double* gy, double* gx, std::size_t rows, std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = y + r * n;
        const double* gr = gy + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
        double* out = gx + r * n;
        for (std::size_t j = 0; j < n; ++j) out[j] += yr[j] * (gr[j] - dot);
    }
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
    const std::size_t n = last_dim("softmax_rows", x);
    if (n == 0) shape_error("softmax_rows", "empty last axis");
    const std::size_t rows = x.numel() / n;
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.values().data() + r * n;
        double* yr = out.data() + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
    }
    return finish(make_result(x.shape(), std::move(out), {x},
                              [rows, n](Node& self) {
                                  if (double* g = grad_of(self, 0))
                                      softmax_backward_rows(self.value.data(), self.grad.data(), g, rows, n);
                              }),
                  "softmax_rows");
}

Tensor masked_softmax(const Tensor& scores, std::span<const std::uint8_t> key_mask, std::size_t heads) {
    if (scores.rank() != 3 || heads == 0 || scores.dim(0) % heads != 0) {
        shape_error("masked_softmax", "scores " + shape_str(scores.shape()));
    }
    const std::size_t bh = scores.dim(0), lq = scores.dim(1), lk = scores.dim(2);
    const std::size_t batch = bh / heads;
    if (key_mask.size() != batch * lk) shape_error("masked_softmax", "mask size");
    std::vector<double> out(scores.numel(), 0.0);
    for (std::size_t s = 0; s < bh; ++s) {
        const std::uint8_t* mask = key_mask.data() + (s / heads) * lk;
        for (std::size_t q = 0; q < lq; ++q) {
            const double* xr = scores.values().data() + (s * lq + q) * lk;
            double* yr = out.data() + (s * lq + q) * lk;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < lk; ++j)
                if (mask[j]) mx = std::max(mx, xr[j]);
            if (!std::isfinite(mx)) shape_error("masked_softmax", "row with every key masked");
            double z = 0.0;
            for (std::size_t j = 0; j < lk; ++j)
                if (mask[j]) z += (yr[j] = std::exp(xr[j] - mx));
            for (std::size_t j = 0; j < lk; ++j) yr[j] /= z;
        }
    }
    return finish(make_result(scores.shape(), std::move(out), {scores},
                              [bh, lq, lk](Node& self) {
                                  // Masked entries have y == 0, so the shared formula
                                  // already gives them zero gradient.
                                  if (double* g = grad_of(self, 0))
                                      softmax_backward_rows(self.value.data(), self.grad.data(), g, bh * lq, lk);
                              }),
                  "masked_softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = last_dim("layer_norm", x);
    if (d == 0) shape_error("layer_norm", "empty last axis");
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
        shape_error("layer_norm", "gain/bias must be [" + std::to_string(d) + "]");
    }
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    const auto xv = x.values();
    const auto gv = gain.values();
    const auto bv = bias.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mu) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return finish(
        make_result(x.shape(), std::move(out), {x, gain, bias},
                    [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                        const auto& g_in = self.inputs[1]->value;
                        double* gx = grad_of(self, 0);
                        double* gg = grad_of(self, 1);
                        double* gb = grad_of(self, 2);
                        std::vector<double> dh(d);
                        for (std::size_t r = 0; r < rows; ++r) {
                            const double* gy = self.grad.data() + r * d;
                            const double* h = xhat.data() + r * d;
                            if (gg)
                                for (std::size_t j = 0; j < d; ++j) gg[j] += gy[j] * h[j];
                            if (gb)
                                for (std::size_t j = 0; j < d; ++j) gb[j] += gy[j];
                            if (!gx) continue;
                            double mean_dh = 0.0, mean_dh_h = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                                dh[j] = gy[j] * g_in[j];
                                mean_dh += dh[j];
                                mean_dh_h += dh[j] * h[j];
                            }
                            mean_dh /= static_cast<double>(d);
                            mean_dh_h /= static_cast<double>(d);
                            for (std::size_t j = 0; j < d; ++j)
                                gx[r * d + j] += inv_std[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
                        }
                    }),
        "layer_norm");
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (!training || rate == 0.0) return x;
    // Two 32-bit uniforms per engine draw; an element is dropped when its
    // uniform falls below rate * 2^32.
    const auto threshold = static_cast<std::uint64_t>(std::ldexp(rate, 32));
    const double s = 1.0 / (1.0 - rate);
    const std::size_t n = x.numel();
    std::vector<std::uint8_t> kept(n);
    for (std::size_t i = 0; i < n; i += 2) {
        const std::uint64_t r = rng();
        kept[i] = (r & 0xFFFFFFFFu) >= threshold;
        if (i + 1 < n) kept[i + 1] = (r >> 32) >= threshold;
    }
    std::vector<double> out(n);
    const auto xv = x.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = kept[i] ? xv[i] * s : 0.0;
    return make_result(x.shape(), std::move(out), {x}, [kept = std::move(kept), s](Node& self) {
        if (double* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (kept[i]) g[i] += self.grad[i] * s;
    });
}

// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) shape_error("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
        if (double* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids, Shape prefix) {
    if (table.rank() != 2) shape_error("embedding_lookup", "table must be 2-d");
    if (shape_numel(prefix) != ids.size()) shape_error("embedding_lookup", "prefix does not match id count");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                                    std::to_string(vocab));
        }
        const double* row = table.values().data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(row, row + d, out.begin() + i * d);
    }
    prefix.push_back(d);
    std::vector<std::int32_t> id_copy(ids.begin(), ids.end());
    return make_result(std::move(prefix), std::move(out), {table}, [d, ids = std::move(id_copy)](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < ids.size(); ++i) {
                double* row = g + static_cast<std::size_t>(ids[i]) * d;
                const double* gi = self.grad.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) row[j] += gi[j];
            }
        }
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    const std::size_t d = last_dim("gather_rows", x);
    const std::size_t n = x.numel() / d;
    std::vector<double> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) throw std::out_of_range("gather_rows: row out of range");
        std::copy_n(x.values().data() + rows[i] * d, d, out.begin() + i * d);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result({rows.size(), d}, std::move(out), {x}, [d, idx = std::move(idx)](Node& self) {
        if (double* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
        }
    });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
    if (parts.empty()) shape_error("concat_last", "no inputs");
    Shape prefix = parts[0].shape();
    prefix.pop_back();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape pp = p.shape();
        const std::size_t w = last_dim("concat_last", p);
        pp.pop_back();
        if (pp != prefix) shape_error("concat_last", "leading extents differ");
        widths.push_back(w);
        total += w;
    }
    const std::size_t rows = shape_numel(prefix);
    std::vector<double> out(rows * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const double* src = parts[k].values().data();
        for (std::size_t r = 0; r < rows; ++r) std::copy_n(src + r * widths[k], widths[k], out.begin() + r * total + offset);
        offset += widths[k];
    }
    Shape shape = prefix;
    shape.push_back(total);
    return make_result(std::move(shape), std::move(out), parts, [rows, total, widths](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (double* g = grad_of(self, k)) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < widths[k]; ++j) g[r * widths[k] + j] += self.grad[r * total + off + j];
            }
            off += widths[k];
        }
    });
}

Tensor slice_step(const Tensor& x, std::size_t t) {
    if (x.rank() != 3 || t >= x.dim(1)) shape_error("slice_step", shape_str(x.shape()) + " at " + std::to_string(t));
    const std::size_t b = x.dim(0), l = x.dim(1), f = x.dim(2);
    std::vector<double> out(b * f);
    for (std::size_t i = 0; i < b; ++i) std::copy_n(x.values().data() + (i * l + t) * f, f, out.begin() + i * f);
    return make_result({b, f}, std::move(out), {x}, [b, l, f, t](Node& self) {
        if (double* g = grad_of(self, 0))
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < f; ++j) g[(i * l + t) * f + j] += self.grad[i * f + j];
    });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
    if (x.rank() != 2 || start + len > x.dim(1)) shape_error("slice_cols", "range outside " + shape_str(x.shape()));
    const std::size_t r = x.dim(0), f = x.dim(1);
    std::vector<double> out(r * len);
    for (std::size_t i = 0; i < r; ++i) std::copy_n(x.values().data() + i * f + start, len, out.begin() + i * len);
    return make_result({r, len}, std::move(out), {x}, [r, f, start, len](Node& self) {
        if (double* g = grad_of(self, 0))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < len; ++j) g[i * f + start + j] += self.grad[i * len + j];
    });
}

Tensor select_rows(std::span<const std::uint8_t> mask, const Tensor& a, const Tensor& b) {
    require_same_shape("select_rows", a, b);
    if (a.rank() != 2 || mask.size() != a.dim(0)) shape_error("select_rows", "mask/rows mismatch");
    const std::size_t r = a.dim(0), f = a.dim(1);
    std::vector<double> out(r * f);
    for (std::size_t i = 0; i < r; ++i) {
        const double* src = (mask[i] ? a : b).values().data() + i * f;
        std::copy_n(src, f, out.begin() + i * f);
    }
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    return make_result({r, f}, std::move(out), {a, b}, [r, f, m = std::move(m)](Node& self) {
        double* ga = grad_of(self, 0);
        double* gb = grad_of(self, 1);
        for (std::size_t i = 0; i < r; ++i) {
            double* g = m[i] ? ga : gb;
            if (!g) continue;
            for (std::size_t j = 0; j < f; ++j) g[i * f + j] += self.grad[i * f + j];
        }
    });
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
    if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) shape_error("split_heads", shape_str(x.shape()));
    const std::size_t b = x.dim(0), l = x.dim(1), dh = x.dim(2) / heads;
    std::vector<double> out(x.numel());
    const double* src = x.values().data();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t t = 0; t < l; ++t)
            for (std::size_t h = 0; h < heads; ++h)
                std::copy_n(src + (i * l + t) * heads * dh + h * dh, dh, out.begin() + ((i * heads + h) * l + t) * dh);
    return make_result({b * heads, l, dh}, std::move(out), {x}, [b, l, dh, heads](Node& self) {
        if (double* g = grad_of(self, 0))
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t t = 0; t < l; ++t)
                    for (std::size_t h = 0; h < heads; ++h) {
                        double* dst = g + (i * l + t) * heads * dh + h * dh;
                        const double* gs = self.grad.data() + ((i * heads + h) * l + t) * dh;
                        for (std::size_t j = 0; j < dh; ++j) dst[j] += gs[j];
                    }
    });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
    if (x.rank() != 3 || heads == 0 || x.dim(0) % heads != 0) shape_error("merge_heads", shape_str(x.shape()));
    const std::size_t b = x.dim(0) / heads, l = x.dim(1), dh = x.dim(2);
    std::vector<double> out(x.numel());
    const double* src = x.values().data();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < l; ++t)
                std::copy_n(src + ((i * heads + h) * l + t) * dh, dh, out.begin() + (i * l + t) * heads * dh + h * dh);
    return make_result({b, l, heads * dh}, std::move(out), {x}, [b, l, dh, heads](Node& self) {
        if (double* g = grad_of(self, 0))
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t t = 0; t < l; ++t) {
                        double* dst = g + ((i * heads + h) * l + t) * dh;
                        const double* gs = self.grad.data() + (i * l + t) * heads * dh + h * dh;
                        for (std::size_t j = 0; j < dh; ++j) dst[j] += gs[j];
                    }
    });
}

// ---------------------------------------------------------------------------

Tensor time2vec(const Tensor& tau, const Tensor& omega, const Tensor& phi) {
    if (omega.rank() != 1 || phi.rank() != 1 || omega.dim(0) != phi.dim(0) || omega.dim(0) == 0) {
        shape_error("time2vec", "omega/phi must be matching non-empty vectors");
    }
    const std::size_t k = omega.dim(0), n = tau.numel();
    const auto tv = tau.values();
    const auto wv = omega.values();
    const auto pv = phi.values();
    std::vector<double> out(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        out[i * k] = wv[0] * tv[i] + pv[0];
        for (std::size_t j = 1; j < k; ++j) out[i * k + j] = std::sin(wv[j] * tv[i] + pv[j]);
    }
    Shape shape = tau.shape();
    shape.push_back(k);
    return finish(make_result(std::move(shape), std::move(out), {tau, omega, phi},
                              [n, k](Node& self) {
                                  const auto& t = self.inputs[0]->value;
                                  const auto& w = self.inputs[1]->value;
                                  const auto& p = self.inputs[2]->value;
                                  double* gt = grad_of(self, 0);
                                  double* gw = grad_of(self, 1);
                                  double* gp = grad_of(self, 2);
                                  for (std::size_t i = 0; i < n; ++i) {
                                      const double* gy = self.grad.data() + i * k;
                                      if (gt) gt[i] += gy[0] * w[0];
                                      if (gw) gw[0] += gy[0] * t[i];
                                      if (gp) gp[0] += gy[0];
                                      for (std::size_t j = 1; j < k; ++j) {
                                          const double c = gy[j] * std::cos(w[j] * t[i] + p[j]);
                                          if (gt) gt[i] += c * w[j];
                                          if (gw) gw[j] += c * t[i];
                                          if (gp) gp[j] += c;
                                      }
                                  }
                              }),
                  "time2vec");
}

Tensor masked_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels,
                            std::span<const double> weights) {
    const std::size_t c = last_dim("masked_cross_entropy", logits);
    const std::size_t rows = c ? logits.numel() / c : 0;
    if (labels.size() != rows || weights.size() != rows) shape_error("masked_cross_entropy", "labels/weights size");
    double total_w = 0.0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("masked_cross_entropy: negative weight");
        total_w += w;
    }
    if (total_w <= 0.0) throw std::invalid_argument("masked_cross_entropy: all weights are zero");
    std::vector<double> probs(logits.numel(), 0.0);
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (weights[r] == 0.0) continue;
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c)
            throw std::out_of_range("masked_cross_entropy: label out of range");
        const double* x = logits.values().data() + r * c;
        double* p = probs.data() + r * c;
        const double mx = *std::max_element(x, x + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (p[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < c; ++j) p[j] /= z;
        loss += weights[r] * (std::log(z) + mx - x[labels[r]]);
    }
    loss /= total_w;
    std::vector<std::int32_t> lab(labels.begin(), labels.end());
    std::vector<double> w(weights.begin(), weights.end());
    return finish(make_result({}, {loss}, {logits},
                              [rows, c, total_w, probs = std::move(probs), lab = std::move(lab),
                               w = std::move(w)](Node& self) {
                                  double* g = grad_of(self, 0);
                                  if (!g) return;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      if (w[r] == 0.0) continue;
                                      const double s = self.grad[0] * w[r] / total_w;
                                      for (std::size_t j = 0; j < c; ++j) g[r * c + j] += s * probs[r * c + j];
                                      g[r * c + static_cast<std::size_t>(lab[r])] -= s;
                                  }
                              }),
                  "masked_cross_entropy");
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels) {
    const std::size_t n = logits.numel();
    if (labels.size() != n || n == 0) shape_error("bce_with_logits", "labels size");
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = logits.values()[i];
        // log(1 + exp(-|x|)) + max(x, 0) - x*y
        loss += std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * labels[i];
    }
    loss /= static_cast<double>(n);
    std::vector<double> y(labels.begin(), labels.end());
    return finish(make_result({}, {loss}, {logits},
                              [n, y = std::move(y)](Node& self) {
                                  double* g = grad_of(self, 0);
                                  if (!g) return;
                                  const auto& x = self.inputs[0]->value;
                                  for (std::size_t i = 0; i < n; ++i) {
                                      const double p = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                                                 : std::exp(x[i]) / (1.0 + std::exp(x[i]));
                                      g[i] += self.grad[0] * (p - y[i]) / static_cast<double>(n);
                                  }
                              }),
                  "bce_with_logits");
}

// ---------------------------------------------------------------------------

namespace {

Tensor lstm_direction(const Tensor& x, const LstmDirection& w, std::span<const std::size_t> lengths, bool reverse) {
    const std::size_t b = x.dim(0), l = x.dim(1);
    const std::size_t h = w.w_hidden.dim(0);
    if (w.w_input.dim(1) != 4 * h || w.w_hidden.dim(1) != 4 * h || w.bias.dim(0) != 4 * h) {
        shape_error("bilstm_forward", "gate weights must have 4*hidden columns");
    }
    const Tensor projected = linear(x, w.w_input, w.bias);  // [B x L x 4h]
    Tensor hidden = Tensor::zeros({b, h});
    Tensor cell = Tensor::zeros({b, h});
    std::vector<std::uint8_t> active(b);
    for (std::size_t step = 0; step < l; ++step) {
        const std::size_t t = reverse ? l - 1 - step : step;
        bool any = false;
        for (std::size_t i = 0; i < b; ++i) {
            active[i] = t < lengths[i] ? 1 : 0;
            any = any || active[i];
        }
        if (!any) continue;
        const Tensor gates = add(slice_step(projected, t), matmul(hidden, w.w_hidden));
        const Tensor in_gate = sigmoid(slice_cols(gates, 0, h));
        const Tensor forget_gate = sigmoid(slice_cols(gates, h, h));
        const Tensor candidate = tanh(slice_cols(gates, 2 * h, h));
        const Tensor out_gate = sigmoid(slice_cols(gates, 3 * h, h));
        const Tensor new_cell = add(mul(forget_gate, cell), mul(in_gate, candidate));
        const Tensor new_hidden = mul(out_gate, tanh(new_cell));
        cell = select_rows(active, new_cell, cell);
        hidden = select_rows(active, new_hidden, hidden);
    }
    return hidden;
}

}  // namespace

Tensor bilstm_forward(const Tensor& x, const BiLstmWeights& weights, std::span<const std::size_t> lengths) {
    if (x.rank() != 3) shape_error("bilstm_forward", "input must be [B x L x d]");
    if (lengths.size() != x.dim(0)) shape_error("bilstm_forward", "one length per batch row");
    for (auto len : lengths) {
        if (len == 0) throw std::invalid_argument("bilstm_forward: zero length");
        if (len > x.dim(1)) throw std::invalid_argument("bilstm_forward: length exceeds sequence");
    }
    const Tensor fwd = lstm_direction(x, weights.forward, lengths, false);
    const Tensor bwd = lstm_direction(x, weights.backward, lengths, true);
    return concat_last({fwd, bwd});
}

}  // namespace cehr
