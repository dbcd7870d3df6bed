#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pocvit/tensor.hpp"

namespace pocvit {

namespace detail {

struct AxisView {
  size_t outer, ext, inner;
};

inline AxisView axis_view(const Shape& shape, int axis) {
  int rank = static_cast<int>(shape.size());
  if (axis < 0 || axis >= rank) throw std::invalid_argument("bad axis");
  AxisView v{1, static_cast<size_t>(shape[axis]), 1};
  for (int a = 0; a < axis; ++a) v.outer *= static_cast<size_t>(shape[a]);
  for (int a = axis + 1; a < rank; ++a) v.inner *= static_cast<size_t>(shape[a]);
  return v;
}

// In-place iterative radix-2 FFT. Forward is unnormalized; inverse carries
// the 1/N factor.
inline void fft_core(std::vector<double>& re, std::vector<double>& im, bool inverse) {
  size_t n = re.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft: length must be a power of two");
  // bit reversal
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  const double pi = 3.14159265358979323846;
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    double wr = std::cos(ang), wi = std::sin(ang);
    for (size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (size_t j = 0; j < len / 2; ++j) {
        size_t u = i + j, v = i + j + len / 2;
        double tr = re[v] * cr - im[v] * ci;
        double ti = re[v] * ci + im[v] * cr;
        re[v] = re[u] - tr;
        im[v] = im[u] - ti;
        re[u] += tr;
        im[u] += ti;
        double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
  if (inverse) {
    double inv = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
      re[i] *= inv;
      im[i] *= inv;
    }
  }
}

}  // namespace detail

// Forward DFT of a real tensor along `axis`; output gains a trailing axis of
// extent 2 holding (real, imag). Unnormalized convention.
inline Tensor fft_axis(const Tensor& x, int axis) {
  auto av = detail::axis_view(x.shape(), axis);
  size_t n = av.ext;
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_axis: extent along axis must be a power of two");
  Shape out_shape = x.shape();
  out_shape.push_back(2);
  std::vector<double> out(numel(out_shape));
  std::vector<double> re(n), im(n);
  for (size_t o = 0; o < av.outer; ++o)
    for (size_t i = 0; i < av.inner; ++i) {
      for (size_t e = 0; e < n; ++e) {
        re[e] = x.data()[(o * n + e) * av.inner + i];
        im[e] = 0.0;
      }
      detail::fft_core(re, im, false);
      for (size_t e = 0; e < n; ++e) {
        size_t base = ((o * n + e) * av.inner + i) * 2;
        out[base] = re[e];
        out[base + 1] = im[e];
      }
    }
  auto xn = x.node();
  return Tensor::make_op(out_shape, std::move(out), {x}, [xn, av, n](TensorNode& o) {
    // adjoint of the unnormalized DFT on a real input: Re(N * IDFT(cotangent))
    xn->ensure_grad();
    std::vector<double> re(n), im(n);
    for (size_t ot = 0; ot < av.outer; ++ot)
      for (size_t i = 0; i < av.inner; ++i) {
        for (size_t e = 0; e < n; ++e) {
          size_t base = ((ot * n + e) * av.inner + i) * 2;
          re[e] = o.grad[base];
          im[e] = o.grad[base + 1];
        }
        detail::fft_core(re, im, true);
        for (size_t e = 0; e < n; ++e)
          xn->grad[(ot * n + e) * av.inner + i] += re[e] * static_cast<double>(n);
      }
  });
}

// Inverse DFT (1/N normalization) of a complex tensor along `axis`; the
// trailing axis of extent 2 holds (real, imag) and is preserved.
inline Tensor ifft_axis(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  if (s.empty() || s.back() != 2)
    throw std::invalid_argument("ifft_axis: expected a trailing (real,imag) axis");
  if (axis < 0 || axis >= static_cast<int>(s.size()) - 1)
    throw std::invalid_argument("ifft_axis: bad axis");
  Shape view(s.begin(), s.end() - 1);
  auto av = detail::axis_view(view, axis);
  size_t n = av.ext;
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("ifft_axis: extent along axis must be a power of two");
  std::vector<double> out(x.size());
  std::vector<double> re(n), im(n);
  for (size_t o = 0; o < av.outer; ++o)
    for (size_t i = 0; i < av.inner; ++i) {
      for (size_t e = 0; e < n; ++e) {
        size_t base = ((o * n + e) * av.inner + i) * 2;
        re[e] = x.data()[base];
        im[e] = x.data()[base + 1];
      }
      detail::fft_core(re, im, true);
      for (size_t e = 0; e < n; ++e) {
        size_t base = ((o * n + e) * av.inner + i) * 2;
        out[base] = re[e];
        out[base + 1] = im[e];
      }
    }
  auto xn = x.node();
  return Tensor::make_op(s, std::move(out), {x}, [xn, av, n](TensorNode& o) {
    // adjoint of F^{-1} is F/N
    xn->ensure_grad();
    std::vector<double> re(n), im(n);
    double inv = 1.0 / static_cast<double>(n);
    for (size_t ot = 0; ot < av.outer; ++ot)
      for (size_t i = 0; i < av.inner; ++i) {
        for (size_t e = 0; e < n; ++e) {
          size_t base = ((ot * n + e) * av.inner + i) * 2;
          re[e] = o.grad[base];
          im[e] = o.grad[base + 1];
        }
        detail::fft_core(re, im, false);
        for (size_t e = 0; e < n; ++e) {
          size_t base = ((ot * n + e) * av.inner + i) * 2;
          xn->grad[base] += re[e] * inv;
          xn->grad[base + 1] += im[e] * inv;
        }
      }
  });
}

// 1D convolution over the sequence axis with circular (wrap-around) padding.
// x: [seq, ch_in], w: [ch_out, ch_in, h], b: [ch_out] -> [seq, ch_out].
inline Tensor conv1d_circular(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 2 || w.shape().size() != 3 || b.shape().size() != 1)
    throw std::invalid_argument("conv1d_circular: bad ranks");
  int S = x.shape()[0], cin = x.shape()[1];
  int cout = w.shape()[0], h = w.shape()[2];
  if (w.shape()[1] != cin)
    throw std::invalid_argument("conv1d_circular: channel mismatch, x has " +
                                std::to_string(cin) + " but w expects " +
                                std::to_string(w.shape()[1]));
  if (b.shape()[0] != cout) throw std::invalid_argument("conv1d_circular: bias mismatch");
  if (h > S) throw std::invalid_argument("conv1d_circular: kernel longer than sequence");
  int K = cin * h;
  int offset = h / 2;

  // im2col: cols[s, ci*h + t] = x[(s + t - offset) mod S, ci]
  std::vector<double> cols(static_cast<size_t>(S) * K);
  for (int s = 0; s < S; ++s)
    for (int ci = 0; ci < cin; ++ci)
      for (int t = 0; t < h; ++t) {
        int src = ((s + t - offset) % S + S) % S;
        cols[static_cast<size_t>(s) * K + ci * h + t] =
            x.data()[static_cast<size_t>(src) * cin + ci];
      }
  std::vector<double> out(static_cast<size_t>(S) * cout);
  for (int s = 0; s < S; ++s)
    for (int co = 0; co < cout; ++co) out[static_cast<size_t>(s) * cout + co] = b.data()[co];
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, S, cout, K, 1.0, cols.data(), K,
              w.data().data(), K, 1.0, out.data(), cout);

  auto xn = x.node(), wn = w.node(), bn = b.node();
  return Tensor::make_op(
      {S, cout}, std::move(out), {x, w, b},
      [xn, wn, bn, cols = std::move(cols), S, cin, cout, h, K, offset](TensorNode& o) {
        if (wn->requires_grad) {
          wn->ensure_grad();
          cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, cout, K, S, 1.0,
                      o.grad.data(), cout, cols.data(), K, 1.0, wn->grad.data(), K);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int s = 0; s < S; ++s)
            for (int co = 0; co < cout; ++co)
              bn->grad[co] += o.grad[static_cast<size_t>(s) * cout + co];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          std::vector<double> dcols(static_cast<size_t>(S) * K, 0.0);
          cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, S, K, cout, 1.0,
                      o.grad.data(), cout, wn->value.data(), K, 0.0, dcols.data(), K);
          for (int s = 0; s < S; ++s)
            for (int ci = 0; ci < cin; ++ci)
              for (int t = 0; t < h; ++t) {
                int src = ((s + t - offset) % S + S) % S;
                xn->grad[static_cast<size_t>(src) * cin + ci] +=
                    dcols[static_cast<size_t>(s) * K + ci * h + t];
              }
        }
      });
}

// Per-slice standardization along `axis` (eps = 1e-5) followed by an affine
// gain/bias of extent shape[axis].
inline Tensor layer_norm(const Tensor& x, int axis, const Tensor& gain, const Tensor& bias) {
  constexpr double eps = 1e-5;
  auto av = detail::axis_view(x.shape(), axis);
  size_t n = av.ext;
  if (n < 2) throw std::invalid_argument("layer_norm: extent along axis must be >= 2");
  if (gain.size() != n || bias.size() != n)
    throw std::invalid_argument("layer_norm: gain/bias extent mismatch");
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_sd(av.outer * av.inner);
  for (size_t o = 0; o < av.outer; ++o)
    for (size_t i = 0; i < av.inner; ++i) {
      double mu = 0.0;
      for (size_t e = 0; e < n; ++e) mu += x.data()[(o * n + e) * av.inner + i];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (size_t e = 0; e < n; ++e) {
        double d = x.data()[(o * n + e) * av.inner + i] - mu;
        var += d * d;
      }
      var /= static_cast<double>(n);
      double isd = 1.0 / std::sqrt(var + eps);
      inv_sd[o * av.inner + i] = isd;
      for (size_t e = 0; e < n; ++e) {
        size_t idx = (o * n + e) * av.inner + i;
        xhat[idx] = (x.data()[idx] - mu) * isd;
        out[idx] = gain.data()[e] * xhat[idx] + bias.data()[e];
      }
    }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return Tensor::make_op(
      x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, av, n, xhat = std::move(xhat),
       inv_sd = std::move(inv_sd)](TensorNode& o) {
        for (size_t ot = 0; ot < av.outer; ++ot)
          for (size_t i = 0; i < av.inner; ++i) {
            double isd = inv_sd[ot * av.inner + i];
            double m_dxh = 0.0, m_dxh_xh = 0.0;
            for (size_t e = 0; e < n; ++e) {
              size_t idx = (ot * n + e) * av.inner + i;
              double dxh = o.grad[idx] * gn->value[e];
              m_dxh += dxh;
              m_dxh_xh += dxh * xhat[idx];
            }
            m_dxh /= static_cast<double>(n);
            m_dxh_xh /= static_cast<double>(n);
            if (xn->requires_grad) {
              xn->ensure_grad();
              for (size_t e = 0; e < n; ++e) {
                size_t idx = (ot * n + e) * av.inner + i;
                double dxh = o.grad[idx] * gn->value[e];
                xn->grad[idx] += isd * (dxh - m_dxh - xhat[idx] * m_dxh_xh);
              }
            }
            if (gn->requires_grad) {
              gn->ensure_grad();
              for (size_t e = 0; e < n; ++e) {
                size_t idx = (ot * n + e) * av.inner + i;
                gn->grad[e] += o.grad[idx] * xhat[idx];
              }
            }
            if (bn->requires_grad) {
              bn->ensure_grad();
              for (size_t e = 0; e < n; ++e)
                bn->grad[e] += o.grad[(ot * n + e) * av.inner + i];
            }
          }
      });
}

// Max-subtracted softmax along `axis`.
inline Tensor softmax_axis(const Tensor& x, int axis) {
  auto av = detail::axis_view(x.shape(), axis);
  size_t n = av.ext;
  std::vector<double> out(x.size());
  for (size_t o = 0; o < av.outer; ++o)
    for (size_t i = 0; i < av.inner; ++i) {
      double mx = -1e300;
      for (size_t e = 0; e < n; ++e)
        mx = std::max(mx, x.data()[(o * n + e) * av.inner + i]);
      double sum = 0.0;
      for (size_t e = 0; e < n; ++e) {
        size_t idx = (o * n + e) * av.inner + i;
        out[idx] = std::exp(x.data()[idx] - mx);
        sum += out[idx];
      }
      for (size_t e = 0; e < n; ++e) out[(o * n + e) * av.inner + i] /= sum;
    }
  auto xn = x.node();
  return Tensor::make_op(x.shape(), std::move(out), {x}, [xn, av, n](TensorNode& o) {
    xn->ensure_grad();
    for (size_t ot = 0; ot < av.outer; ++ot)
      for (size_t i = 0; i < av.inner; ++i) {
        double dot = 0.0;
        for (size_t e = 0; e < n; ++e) {
          size_t idx = (ot * n + e) * av.inner + i;
          dot += o.grad[idx] * o.value[idx];
        }
        for (size_t e = 0; e < n; ++e) {
          size_t idx = (ot * n + e) * av.inner + i;
          xn->grad[idx] += o.value[idx] * (o.grad[idx] - dot);
        }
      }
  });
}

// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& x) {
  const double inv_sqrt2 = 0.7071067811865475244;
  const double inv_sqrt2pi = 0.3989422804014326779;
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  auto xn = x.node();
  return Tensor::make_op(x.shape(), std::move(out), {x},
                         [xn, inv_sqrt2, inv_sqrt2pi](TensorNode& o) {
                           xn->ensure_grad();
                           for (size_t i = 0; i < o.grad.size(); ++i) {
                             double v = xn->value[i];
                             double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                             double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                             xn->grad[i] += o.grad[i] * (cdf + v * pdf);
                           }
                         });
}

// PReLU with a single learnable slope (scalar tensor).
inline Tensor prelu(const Tensor& x, const Tensor& slope) {
  if (slope.size() != 1) throw std::invalid_argument("prelu: slope must be scalar");
  double a = slope.data()[0];
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double v = x.data()[i];
    out[i] = v > 0.0 ? v : a * v;
  }
  auto xn = x.node(), sn = slope.node();
  return Tensor::make_op(x.shape(), std::move(out), {x, slope}, [xn, sn, a](TensorNode& o) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i)
        xn->grad[i] += o.grad[i] * (xn->value[i] > 0.0 ? 1.0 : a);
    }
    if (sn->requires_grad) {
      sn->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i)
        if (xn->value[i] <= 0.0) sn->grad[0] += o.grad[i] * xn->value[i];
    }
  });
}

// Mean negative log-softmax probability of the true labels, log-sum-exp
// stabilized. logits: [batch, n_classes].
inline Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2) throw std::invalid_argument("cross_entropy: rank != 2");
  int B = logits.shape()[0], C = logits.shape()[1];
  if (static_cast<int>(labels.size()) != B)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= C)
      throw std::invalid_argument("cross_entropy: label out of range: " + std::to_string(y));
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  for (int r = 0; r < B; ++r) {
    const double* row = logits.data().data() + static_cast<size_t>(r) * C;
    double mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
    double lse = mx + std::log(sum);
    loss += lse - row[labels[r]];
    for (int c = 0; c < C; ++c)
      probs[static_cast<size_t>(r) * C + c] = std::exp(row[c] - lse);
  }
  loss /= static_cast<double>(B);
  auto ln = logits.node();
  return Tensor::make_op({1}, {loss}, {logits},
                         [ln, probs = std::move(probs), labels, B, C](TensorNode& o) {
                           ln->ensure_grad();
                           double g = o.grad[0] / static_cast<double>(B);
                           for (int r = 0; r < B; ++r)
                             for (int c = 0; c < C; ++c) {
                               double p = probs[static_cast<size_t>(r) * C + c];
                               ln->grad[static_cast<size_t>(r) * C + c] +=
                                   g * (p - (labels[r] == c ? 1.0 : 0.0));
                             }
                         });
}

}  // namespace pocvit
