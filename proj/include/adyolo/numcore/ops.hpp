#pragma once

// Differentiable operations recorded on a Tape. Binary elementwise ops need
// identical shapes; the only broadcasts are the ones the detector uses
// (add_bias over the channel axis, sq_dist_rows against a constant table).

#include "adyolo/numcore/tape.hpp"

namespace adyolo::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real factor);
Var add_scalar(const Var& a, Real offset);

Var square(const Var& a);
// Subgradient 0 at exactly 0 so an in-gamut pixel does not blow up.
Var sqrt(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var leaky_relu(const Var& a, Real slope);

// Sequential left-to-right reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var max_all(const Var& a);  // ties resolve to the lowest flat index
Var min_last(const Var& a);  // keeps the last axis with extent 1

Var softmax(const Var& a);  // over the last axis
Var log_softmax(const Var& a);

Var reshape(const Var& a, Shape shape);
Var slice_last(const Var& a, int begin, int end);

// Forward difference along `axis`; the last position along that axis is 0.
Var diff(const Var& a, int axis);

// Rows of x [N, C] against constant rows of centers [K, C]: out[n, k] = |x_n - c_k|^2.
Var sq_dist_rows(const Var& x, const Tensor& centers);

Var conv2d(const Var& input, const Var& kernel, int stride, int pad);
Var add_bias(const Var& a, const Var& bias);

}  // namespace adyolo::ops
