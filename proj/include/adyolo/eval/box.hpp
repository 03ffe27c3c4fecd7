#pragma once

#include "adyolo/numcore/tensor.hpp"

namespace adyolo {

// Axis-aligned box in normalized image coordinates, center form.
struct Box {
  Real cx = 0, cy = 0, w = 0, h = 0;

  Real left() const { return cx - w / 2; }
  Real right() const { return cx + w / 2; }
  Real top() const { return cy - h / 2; }
  Real bottom() const { return cy + h / 2; }
  Real area() const { return w * h; }

  static Box from_corners(Real x0, Real y0, Real x1, Real y1) {
    return Box{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

// Zero or negative extent.
bool is_degenerate(const Box& b);

// Intersection over union; 0 for disjoint boxes and for degenerate boxes
// (callers that need to know use is_degenerate).
Real iou(const Box& a, const Box& b);

}  // namespace adyolo
