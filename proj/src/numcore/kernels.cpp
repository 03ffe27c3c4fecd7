#include "adyolo/numcore/kernels.hpp"

#include <algorithm>
#include <vector>

namespace adyolo::kernels {

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, int stride, int pad) {
  auto fail = [&](const std::string& why) {
    throw ShapeError("conv2d: " + why + " (input " + shape_string(input) + ", kernel " + shape_string(kernel) +
                     ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad) + ")");
  };
  if (input.size() != 3) fail("input must be HxWxC");
  if (kernel.size() != 4) fail("kernel must be KxKxCinxCout");
  if (kernel[0] != kernel[1]) fail("kernel must be square");
  if (kernel[2] != input[2]) fail("kernel Cin does not match input channels");
  if (stride < 1 || pad < 0) fail("invalid stride/pad");
  ConvGeometry g;
  g.in_h = input[0];
  g.in_w = input[1];
  g.in_c = input[2];
  g.k = kernel[0];
  g.out_c = kernel[3];
  g.stride = stride;
  g.pad = pad;
  const int span_h = g.in_h + 2 * pad - g.k;
  const int span_w = g.in_w + 2 * pad - g.k;
  if (span_h < 0 || span_w < 0) fail("kernel larger than padded input");
  g.out_h = span_h / stride + 1;
  g.out_w = span_w / stride + 1;
  return g;
}

void conv2d_forward(const ConvGeometry& g, const Real* in, const Real* w, Real* out) {
  const int cin = g.in_c, cout = g.out_c;
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < g.out_h; ++oy) {
    std::vector<Real> acc(static_cast<std::size_t>(cout));
    for (int ox = 0; ox < g.out_w; ++ox) {
      std::fill(acc.begin(), acc.end(), Real{0});
      for (int ky = 0; ky < g.k; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.in_h) continue;
        for (int kx = 0; kx < g.k; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.in_w) continue;
          const Real* src = in + (static_cast<std::size_t>(iy) * g.in_w + ix) * cin;
          const Real* wk = w + (static_cast<std::size_t>(ky) * g.k + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const Real a = src[ci];
            const Real* wrow = wk + static_cast<std::size_t>(ci) * cout;
            Real* accp = acc.data();
#pragma omp simd
            for (int co = 0; co < cout; ++co) accp[co] += a * wrow[co];
          }
        }
      }
      std::copy(acc.begin(), acc.end(), out + (static_cast<std::size_t>(oy) * g.out_w + ox) * cout);
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, const Real* grad_out, const Real* w, Real* grad_in) {
  const int cin = g.in_c, cout = g.out_c;
  // Gather form: each input pixel collects from the outputs whose window
  // covers it, so no two threads write the same element.
#pragma omp parallel for schedule(static)
  for (int iy = 0; iy < g.in_h; ++iy) {
    for (int ix = 0; ix < g.in_w; ++ix) {
      Real* dst = grad_in + (static_cast<std::size_t>(iy) * g.in_w + ix) * cin;
      for (int ky = 0; ky < g.k; ++ky) {
        const int ny = iy + g.pad - ky;
        if (ny < 0 || ny % g.stride) continue;
        const int oy = ny / g.stride;
        if (oy >= g.out_h) continue;
        for (int kx = 0; kx < g.k; ++kx) {
          const int nx = ix + g.pad - kx;
          if (nx < 0 || nx % g.stride) continue;
          const int ox = nx / g.stride;
          if (ox >= g.out_w) continue;
          const Real* go = grad_out + (static_cast<std::size_t>(oy) * g.out_w + ox) * cout;
          const Real* wk = w + (static_cast<std::size_t>(ky) * g.k + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const Real* wrow = wk + static_cast<std::size_t>(ci) * cout;
            Real s = 0;
#pragma omp simd reduction(+ : s)
            for (int co = 0; co < cout; ++co) s += go[co] * wrow[co];
            dst[ci] += s;
          }
        }
      }
    }
  }
}

void conv2d_backward_kernel(const ConvGeometry& g, const Real* in, const Real* grad_out, Real* grad_w) {
  const int cin = g.in_c, cout = g.out_c;
  const int taps = g.k * g.k;
  // One thread owns one (ky, kx) tap row block; accumulation over output
  // pixels is sequential in raster order.
#pragma omp parallel for schedule(static)
  for (int tap = 0; tap < taps; ++tap) {
    const int ky = tap / g.k, kx = tap % g.k;
    Real* gw = grad_w + static_cast<std::size_t>(tap) * cin * cout;
    for (int oy = 0; oy < g.out_h; ++oy) {
      const int iy = oy * g.stride - g.pad + ky;
      if (iy < 0 || iy >= g.in_h) continue;
      for (int ox = 0; ox < g.out_w; ++ox) {
        const int ix = ox * g.stride - g.pad + kx;
        if (ix < 0 || ix >= g.in_w) continue;
        const Real* src = in + (static_cast<std::size_t>(iy) * g.in_w + ix) * cin;
        const Real* go = grad_out + (static_cast<std::size_t>(oy) * g.out_w + ox) * cout;
        for (int ci = 0; ci < cin; ++ci) {
          const Real a = src[ci];
          Real* row = gw + static_cast<std::size_t>(ci) * cout;
#pragma omp simd
          for (int co = 0; co < cout; ++co) row[co] += a * go[co];
        }
      }
    }
  }
}

namespace reference {

namespace {
std::size_t at3(int y, int x, int c, int w, int ch) {
  return (static_cast<std::size_t>(y) * w + x) * ch + c;
}
std::size_t at4(int ky, int kx, int ci, int co, int k, int cin, int cout) {
  return ((static_cast<std::size_t>(ky) * k + kx) * cin + ci) * cout + co;
}
}  // namespace

void conv2d_forward(const ConvGeometry& g, const Real* in, const Real* w, Real* out) {
  for (int oy = 0; oy < g.out_h; ++oy)
    for (int ox = 0; ox < g.out_w; ++ox)
      for (int co = 0; co < g.out_c; ++co) {
        Real s = 0;
        for (int ky = 0; ky < g.k; ++ky)
          for (int kx = 0; kx < g.k; ++kx)
            for (int ci = 0; ci < g.in_c; ++ci) {
              const int iy = oy * g.stride - g.pad + ky;
              const int ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              s += in[at3(iy, ix, ci, g.in_w, g.in_c)] * w[at4(ky, kx, ci, co, g.k, g.in_c, g.out_c)];
            }
        out[at3(oy, ox, co, g.out_w, g.out_c)] = s;
      }
}

void conv2d_backward_input(const ConvGeometry& g, const Real* grad_out, const Real* w, Real* grad_in) {
  for (int oy = 0; oy < g.out_h; ++oy)
    for (int ox = 0; ox < g.out_w; ++ox)
      for (int co = 0; co < g.out_c; ++co) {
        const Real go = grad_out[at3(oy, ox, co, g.out_w, g.out_c)];
        for (int ky = 0; ky < g.k; ++ky)
          for (int kx = 0; kx < g.k; ++kx)
            for (int ci = 0; ci < g.in_c; ++ci) {
              const int iy = oy * g.stride - g.pad + ky;
              const int ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              grad_in[at3(iy, ix, ci, g.in_w, g.in_c)] += go * w[at4(ky, kx, ci, co, g.k, g.in_c, g.out_c)];
            }
      }
}

void conv2d_backward_kernel(const ConvGeometry& g, const Real* in, const Real* grad_out, Real* grad_w) {
  for (int oy = 0; oy < g.out_h; ++oy)
    for (int ox = 0; ox < g.out_w; ++ox)
      for (int co = 0; co < g.out_c; ++co) {
        const Real go = grad_out[at3(oy, ox, co, g.out_w, g.out_c)];
        for (int ky = 0; ky < g.k; ++ky)
          for (int kx = 0; kx < g.k; ++kx)
            for (int ci = 0; ci < g.in_c; ++ci) {
              const int iy = oy * g.stride - g.pad + ky;
              const int ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              grad_w[at4(ky, kx, ci, co, g.k, g.in_c, g.out_c)] += in[at3(iy, ix, ci, g.in_w, g.in_c)] * go;
            }
      }
}

}  // namespace reference

}  // namespace adyolo::kernels
