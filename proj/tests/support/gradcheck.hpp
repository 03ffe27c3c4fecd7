#pragma once

// Central finite differences against tape gradients. The difference quotient
// is the fourth-order central stencil at step h,
//   (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h,
// whose O(h^4) truncation error stays below the tolerance on elements where a
// few O(1) terms cancel to a small gradient.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "adyolo/detector/detector.hpp"
#include "adyolo/numcore/random.hpp"
#include "adyolo/numcore/tape.hpp"

namespace testsupport {

using adyolo::Real;
using adyolo::Shape;
using adyolo::Tape;
using adyolo::Tensor;
using adyolo::Var;

struct GradCheck {
  int checked = 0;
  int skipped = 0;  // stencil straddles a kink, so the difference quotient is not a derivative
  int failed = 0;
  double worst = 0;  // largest relative error among checked elements
  std::string first_failure;
  bool ok() const { return failed == 0 && checked > 0; }
};

using ScalarFn = std::function<Var(Tape&, const Var&)>;

// Which side of every kink the evaluation sits on: the sign of each
// leaky_relu input and the selected index of each max/min reduction.
inline std::vector<int> kink_signature(const Tape& tape) {
  std::vector<int> sig;
  for (const Tensor* t : tape.operands_of("leaky_relu"))
    for (Real v : t->values()) sig.push_back(v > 0);
  for (const Tensor* t : tape.operands_of("max_all"))
    sig.push_back(static_cast<int>(std::max_element(t->values().begin(), t->values().end()) - t->values().begin()));
  for (const Tensor* t : tape.operands_of("min_last")) {
    const int k = t->dim(t->rank() - 1);
    for (std::size_t r = 0; r < t->size(); r += static_cast<std::size_t>(k))
      sig.push_back(static_cast<int>(std::min_element(t->data() + r, t->data() + r + k) - (t->data() + r)));
  }
  return sig;
}

// Elements where either gradient exceeds `floor` in magnitude must agree to
// relative tolerance `rtol`. `stride` > 1 checks every stride-th element.
inline GradCheck check_gradient(const ScalarFn& f, const Tensor& x, double h = 1e-3, double rtol = 1e-3,
                                double floor = 1e-6, std::size_t stride = 1) {
  Tensor g;
  std::vector<int> base_sig;
  {
    Tape tape;
    const Var leaf = tape.leaf(x);
    const Var loss = f(tape, leaf);
    g = tape.grad(loss, std::span<const Var>(&leaf, 1))[0];
    base_sig = kink_signature(tape);
  }
  GradCheck out;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); i += stride) {
    bool smooth = true;
    auto at = [&](double offset) {
      probe[i] = x[i] + offset;
      Tape tape;
      const double v = f(tape, tape.constant(probe)).value().item();
      smooth = smooth && kink_signature(tape) == base_sig;
      return v;
    };
    const double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    probe[i] = x[i];
    const double scale = std::max(std::abs(fd), std::abs(g[i]));
    if (scale <= floor) continue;
    if (!smooth) {
      ++out.skipped;
      continue;
    }
    ++out.checked;
    const double rel = std::abs(fd - g[i]) / scale;
    out.worst = std::max(out.worst, rel);
    if (rel > rtol) {
      if (out.failed++ == 0) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "element %zu: tape %.9g, finite difference %.9g (rel %.3g)", i, g[i], fd, rel);
        out.first_failure = buf;
      }
    }
  }
  return out;
}

inline Tensor random_tensor(const Shape& shape, adyolo::Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(shape);
  for (Real& v : t.values()) v = adyolo::uniform(rng, lo, hi);
  return t;
}

// Values at least `gap` away from zero, for ops with a kink there.
inline Tensor random_away_from_zero(const Shape& shape, adyolo::Rng& rng, double gap = 0.01) {
  Tensor t(shape);
  for (Real& v : t.values()) {
    const double m = adyolo::uniform(rng, gap, 1);
    v = (rng() & 1) ? m : -m;
  }
  return t;
}

// 32x32 input, 4x4 grid: small enough for exhaustive finite differences.
inline adyolo::detector::DetectorConfig toy_config() {
  adyolo::detector::DetectorConfig c;
  c.input_side = 32;
  c.grid = 4;
  c.blocks = {{4, 2}, {6, 2}, {8, 2}};
  return c;
}

}  // namespace testsupport
