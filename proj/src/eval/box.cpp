#include "adyolo/eval/box.hpp"

#include <algorithm>

namespace adyolo {

bool is_degenerate(const Box& b) { return !(b.w > 0) || !(b.h > 0); }

Real iou(const Box& a, const Box& b) {
  if (is_degenerate(a) || is_degenerate(b)) return 0;
  const Real iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const Real ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0 || ih <= 0) return 0;
  const Real inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

}  // namespace adyolo
