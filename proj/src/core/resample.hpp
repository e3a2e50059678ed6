#pragma once

#include <span>
#include <vector>

#include "tensor.hpp"

namespace medssl {

enum class Axis { C = 0, H = 1, W = 2, S = 3 };

/// Linear resampling along one axis with half-pixel centres (the
/// align_corners=false convention). Same-length axes are copied exactly.
Tensor4 resample_linear(const Tensor4& x, Axis axis, int out_len);

/// Separable bilinear (or trilinear when s changes) resize.
Tensor4 resize(const Tensor4& x, int h, int w, int s);

/// Gathers slices along S.
Tensor4 take_slices(const Tensor4& x, std::span<const int> indices);

/// Places `x` centred on a zero canvas of h x w.
Tensor4 pad_center(const Tensor4& x, int h, int w);

/// Resizes so the longer of H/W equals `target` (aspect preserved, shorter
/// side rounded) and zero-pads the shorter side to `target`, centred.
Tensor4 fit_square(const Tensor4& x, int target);

/// Replicates channel 0 `channels` times.
Tensor4 expand_channels(const Tensor4& x, int channels);

/// Replicates the S axis so a single-slice tensor gets `slices` slices.
Tensor4 replicate_slices(const Tensor4& x, int slices);

Tensor4 crop(const Tensor4& x, int h0, int w0, int s0, int h, int w, int s);

}  // namespace medssl
