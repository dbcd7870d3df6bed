#pragma once

#include <stdexcept>
#include <vector>

#include "pocvit/ops.hpp"
#include "pocvit/tensor.hpp"

namespace pocvit {

// One attention head's learned convolutions for the V, Q, K paths.
// Each conv maps the full embedding (ch_in = d) to the head width d/n with
// kernel size h; share_vq aliases the Q conv to the V conv.
struct PocHeadWeights {
  Tensor wv, bv;
  Tensor wq, bq;
  Tensor wk, bk;
  bool share_vq = false;
};

// Elementwise phase-only cross-power spectrum:
//   M_p = conj(Q) . K / (|conj(Q) . K| + eps_rel)
// Q, K are complex tensors (trailing axis of extent 2). The division guard is
// relative to the mean cross-power magnitude, which keeps the result exactly
// invariant under positive rescaling of Q or K; an absolute floor handles the
// all-zero case.
inline Tensor phase_only_cross_power(const Tensor& q, const Tensor& k, double eps = 1e-8) {
  if (q.shape() != k.shape())
    throw std::invalid_argument("phase_only_cross_power: shape mismatch " +
                                shape_str(q.shape()) + " vs " + shape_str(k.shape()));
  if (q.shape().empty() || q.shape().back() != 2)
    throw std::invalid_argument("phase_only_cross_power: inputs must be complex");
  int last = static_cast<int>(q.shape().size()) - 1;
  Tensor qr = slice(q, last, 0, 1), qi = slice(q, last, 1, 1);
  Tensor kr = slice(k, last, 0, 1), ki = slice(k, last, 1, 1);
  // conj(Q) * K
  Tensor cr = add(mul(qr, kr), mul(qi, ki));
  Tensor ci = sub(mul(qr, ki), mul(qi, kr));
  Tensor mag = sqrt_t(add(square(cr), square(ci)));
  Tensor denom = add_scalar(add_bcast(mag, scale(mean_all(mag), eps)), 1e-300);
  return concat({ediv(cr, denom), ediv(ci, denom)}, last);
}

// Single POC cross-attention head. x1 drives V and Q, x2 drives K; the
// attention score is the softmax (over the sequence axis) of the real part of
// the inverse FFT of the phase-only cross-power spectrum, and it gates V
// elementwise.
//   x1, x2: [N_e, d] -> [N_e, d/n]
// poc_surface, when requested, receives the pre-softmax correlation surface.
inline Tensor poc_attention_head(const Tensor& x1, const Tensor& x2,
                                 const PocHeadWeights& w, Tensor* poc_surface = nullptr) {
  Tensor v = conv1d_circular(x1, w.wv, w.bv);
  Tensor q = fft_axis(w.share_vq ? v : conv1d_circular(x1, w.wq, w.bq), 0);
  Tensor k = fft_axis(conv1d_circular(x2, w.wk, w.bk), 0);
  Tensor mp = phase_only_cross_power(q, k);
  Tensor poc = ifft_axis(mp, 0);
  Tensor surface = reshape(slice(poc, 2, 0, 1), v.shape());  // real part
  if (poc_surface) *poc_surface = surface;
  Tensor score = softmax_axis(surface, 0);
  return mul(v, score);
}

// Multi-head POC cross-attention: head outputs are concatenated along the
// embedding axis, restoring the input width; no output projection.
inline Tensor multi_head_poc_ca(const Tensor& x1, const Tensor& x2,
                                const std::vector<PocHeadWeights>& heads) {
  if (heads.empty()) throw std::invalid_argument("multi_head_poc_ca: no heads");
  int d = x1.shape()[1];
  int head_dim = heads[0].wv.shape()[0];
  if (static_cast<int>(heads.size()) * head_dim != d)
    throw std::invalid_argument("multi_head_poc_ca: heads * head_dim != embed dim");
  std::vector<Tensor> outs;
  outs.reserve(heads.size());
  for (const auto& h : heads) outs.push_back(poc_attention_head(x1, x2, h));
  return concat(outs, 1);
}

}  // namespace pocvit
