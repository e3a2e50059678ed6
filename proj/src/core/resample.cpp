#include "resample.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace medssl {
namespace {

int extent(const Shape4& s, Axis a) {
  switch (a) {
    case Axis::C: return s.c;
    case Axis::H: return s.h;
    case Axis::W: return s.w;
    case Axis::S: return s.s;
  }
  return 0;
}

void set_extent(Shape4& s, Axis a, int v) {
  switch (a) {
    case Axis::C: s.c = v; break;
    case Axis::H: s.h = v; break;
    case Axis::W: s.w = v; break;
    case Axis::S: s.s = v; break;
  }
}

}  // namespace

Tensor4 resample_linear(const Tensor4& x, Axis axis, int out_len) {
  const Shape4 in = x.shape();
  const int in_len = extent(in, axis);
  if (out_len <= 0 || in_len <= 0) throw ShapeError("resample to non-positive length");
  if (out_len == in_len) return x;

  Shape4 out_shape = in;
  set_extent(out_shape, axis, out_len);
  Tensor4 out(out_shape);

  // outer x axis x inner decomposition of the flat index.
  std::size_t inner = 1;
  for (int a = static_cast<int>(axis) + 1; a < 4; ++a) inner *= static_cast<std::size_t>(extent(in, static_cast<Axis>(a)));
  std::size_t outer = 1;
  for (int a = 0; a < static_cast<int>(axis); ++a) outer *= static_cast<std::size_t>(extent(in, static_cast<Axis>(a)));

  std::vector<int> lo(static_cast<std::size_t>(out_len));
  std::vector<int> hi(static_cast<std::size_t>(out_len));
  std::vector<double> frac(static_cast<std::size_t>(out_len));
  const double scale = static_cast<double>(in_len) / out_len;
  for (int i = 0; i < out_len; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_len - 1));
    const int i0 = static_cast<int>(std::floor(src));
    lo[i] = i0;
    hi[i] = std::min(i0 + 1, in_len - 1);
    frac[i] = src - i0;
  }

  const auto& src = x.data();
  auto& dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t in_base = o * in_len * inner;
    const std::size_t out_base = o * out_len * inner;
    for (int i = 0; i < out_len; ++i) {
      const double t = frac[i];
      const double* a = &src[in_base + lo[i] * inner];
      const double* b = &src[in_base + hi[i] * inner];
      double* d = &dst[out_base + i * inner];
      if (t == 0.0) {
        std::copy(a, a + inner, d);
      } else {
        for (std::size_t k = 0; k < inner; ++k) d[k] = (1.0 - t) * a[k] + t * b[k];
      }
    }
  }
  return out;
}

Tensor4 resize(const Tensor4& x, int h, int w, int s) {
  Tensor4 out = resample_linear(x, Axis::H, h);
  out = resample_linear(out, Axis::W, w);
  return resample_linear(out, Axis::S, s);
}

Tensor4 take_slices(const Tensor4& x, std::span<const int> indices) {
  const Shape4 in = x.shape();
  Tensor4 out({in.c, in.h, in.w, static_cast<int>(indices.size())});
  for (int c = 0; c < in.c; ++c)
    for (int h = 0; h < in.h; ++h)
      for (int w = 0; w < in.w; ++w)
        for (std::size_t j = 0; j < indices.size(); ++j) {
          const int k = indices[j];
          if (k < 0 || k >= in.s) throw ShapeError("slice index out of range");
          out(c, h, w, static_cast<int>(j)) = x(c, h, w, k);
        }
  return out;
}

Tensor4 pad_center(const Tensor4& x, int h, int w) {
  const Shape4 in = x.shape();
  if (in.h > h || in.w > w) throw ShapeError("cannot pad " + in.str() + " into " + std::to_string(h) + "x" + std::to_string(w));
  const int top = (h - in.h) / 2;
  const int left = (w - in.w) / 2;
  Tensor4 out({in.c, h, w, in.s});
  for (int c = 0; c < in.c; ++c)
    for (int i = 0; i < in.h; ++i)
      for (int j = 0; j < in.w; ++j)
        for (int k = 0; k < in.s; ++k) out(c, top + i, left + j, k) = x(c, i, j, k);
  return out;
}

Tensor4 fit_square(const Tensor4& x, int target) {
  const Shape4 in = x.shape();
  if (in.h <= 0 || in.w <= 0) throw InvalidInput("empty image");
  int h = target;
  int w = target;
  if (in.h > in.w) {
    w = std::max(1, static_cast<int>(std::lround(static_cast<double>(in.w) * target / in.h)));
  } else if (in.w > in.h) {
    h = std::max(1, static_cast<int>(std::lround(static_cast<double>(in.h) * target / in.w)));
  }
  Tensor4 resized = resample_linear(resample_linear(x, Axis::H, h), Axis::W, w);
  return pad_center(resized, target, target);
}

Tensor4 expand_channels(const Tensor4& x, int channels) {
  const Shape4 in = x.shape();
  Tensor4 out({channels, in.h, in.w, in.s});
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w * in.s;
  for (int c = 0; c < channels; ++c)
    std::copy(x.data().begin(), x.data().begin() + static_cast<std::ptrdiff_t>(plane),
              out.data().begin() + static_cast<std::ptrdiff_t>(c * plane));
  return out;
}

Tensor4 replicate_slices(const Tensor4& x, int slices) {
  const Shape4 in = x.shape();
  Tensor4 out({in.c, in.h, in.w, in.s * slices});
  for (int c = 0; c < in.c; ++c)
    for (int h = 0; h < in.h; ++h)
      for (int w = 0; w < in.w; ++w)
        for (int r = 0; r < slices; ++r)
          for (int s = 0; s < in.s; ++s) out(c, h, w, r * in.s + s) = x(c, h, w, s);
  return out;
}

Tensor4 crop(const Tensor4& x, int h0, int w0, int s0, int h, int w, int s) {
  const Shape4 in = x.shape();
  if (h0 < 0 || w0 < 0 || s0 < 0 || h0 + h > in.h || w0 + w > in.w || s0 + s > in.s || h <= 0 || w <= 0 || s <= 0) {
    throw ShapeError("crop window exceeds input " + in.str());
  }
  Tensor4 out({in.c, h, w, s});
  for (int c = 0; c < in.c; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int k = 0; k < s; ++k) out(c, i, j, k) = x(c, h0 + i, w0 + j, s0 + k);
  return out;
}

}  // namespace medssl
