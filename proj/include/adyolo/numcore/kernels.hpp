#pragma once

// Dense conv kernels in two flavours: the OpenMP versions used by the tape and
// the serial nested-loop references kept for testing and benchmarking.
//
// Layouts: activations are HWC, kernels are [K, K, Cin, Cout].
//
// Every output element of the parallel kernels is produced by exactly one
// thread with a fixed accumulation order, so results do not depend on the
// thread count.

#include "adyolo/numcore/tensor.hpp"

namespace adyolo::kernels {

struct ConvGeometry {
  int in_h = 0, in_w = 0, in_c = 0;
  int k = 0, out_c = 0;
  int stride = 1, pad = 0;
  int out_h = 0, out_w = 0;
};

// Validates shapes and computes out extent floor((H + 2*pad - K)/stride) + 1.
// Throws ShapeError with both shapes on mismatch.
ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, int stride, int pad);

void conv2d_forward(const ConvGeometry& g, const Real* in, const Real* w, Real* out);
// out += d(loss)/d(in)
void conv2d_backward_input(const ConvGeometry& g, const Real* grad_out, const Real* w, Real* grad_in);
// out += d(loss)/d(kernel)
void conv2d_backward_kernel(const ConvGeometry& g, const Real* in, const Real* grad_out, Real* grad_w);

namespace reference {

void conv2d_forward(const ConvGeometry& g, const Real* in, const Real* w, Real* out);
void conv2d_backward_input(const ConvGeometry& g, const Real* grad_out, const Real* w, Real* grad_in);
void conv2d_backward_kernel(const ConvGeometry& g, const Real* in, const Real* grad_out, Real* grad_w);

}  // namespace reference

}  // namespace adyolo::kernels
