#pragma once

// Brute-force reference implementations used as independent test oracles.

#include "difattack/tensor.hpp"

namespace difattack::testing {

/// Direct sliding-window convolution, NCHW, zero padding.
inline Tensor conv2d_reference(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), K = w.dim(2), L = w.dim(3);
  const int OH = (H + 2 * pad - K) / stride + 1;
  const int OW = (W + 2 * pad - L) / stride + 1;
  Tensor out(Shape{B, O, OH, OW});
  for (int n = 0; n < B; ++n)
    for (int o = 0; o < O; ++o)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = b[o];
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < K; ++i)
              for (int j = 0; j < L; ++j) {
                const int ih = oh * stride - pad + i;
                const int iw = ow * stride - pad + j;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += static_cast<double>(x[((n * C + c) * H + ih) * W + iw]) * w[((o * C + c) * K + i) * L + j];
              }
          out[((n * O + o) * OH + oh) * OW + ow] = static_cast<float>(acc);
        }
  return out;
}

}  // namespace difattack::testing
