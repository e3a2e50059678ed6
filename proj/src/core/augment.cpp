#include "augment.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "resample.hpp"

namespace medssl {

AugmentConfig AugmentConfig::defaults_for(Modality m) {
  AugmentConfig cfg;
  if (is_2d(m)) {
    cfg.n_local = 10;
  } else {
    cfg.n_local = 4;
  }
  return cfg;
}

void AugmentConfig::validate() const {
  auto check_range = [](const ScaleRange& r, const char* name) {
    if (!(r.lo > 0.0) || !(r.hi <= 1.0) || r.lo > r.hi)
      throw ConfigError(std::string(name) + " scale range must satisfy 0 < lo <= hi <= 1");
  };
  check_range(global_scale, "global");
  check_range(local_scale, "local");
  if (local_scale.hi > global_scale.lo)
    throw ConfigError("local crop scales must not exceed global crop scales");
  if (local_scale.hi == global_scale.hi && local_scale.lo == global_scale.lo)
    throw ConfigError("local and global crop scales must differ");
  if (n_local < 0) throw ConfigError("n_local must be non-negative");
  for (double p : {p_flip, p_shift, p_blur, p_contrast})
    if (p < 0.0 || p > 1.0) throw ConfigError("augmentation probabilities must lie in [0,1]");
  if (blur_sigma_min <= 0.0 || blur_sigma_max < blur_sigma_min) throw ConfigError("invalid blur sigma range");
  if (gamma_min <= 0.0 || gamma_max < gamma_min) throw ConfigError("invalid contrast gamma range");
  if (local_out.h < 0 || local_out.w < 0 || local_out.s < 0 || global_out.h < 0 || global_out.w < 0 ||
      global_out.s < 0)
    throw ConfigError("view extents must be non-negative");
}

int crop_extent(double scale, int extent) {
  return std::clamp(static_cast<int>(std::lround(scale * extent)), 1, std::max(extent, 1));
}

void clamp_unit(Tensor4& x) {
  for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// 1D convolution along an axis with edge clamping.
Tensor4 convolve_axis(const Tensor4& x, Axis axis, const std::vector<double>& kernel) {
  const Shape4 sh = x.shape();
  const int len = axis == Axis::H ? sh.h : axis == Axis::W ? sh.w : sh.s;
  if (len <= 1) return x;
  const int radius = static_cast<int>(kernel.size() / 2);
  Tensor4 out(sh);
  for (int c = 0; c < sh.c; ++c)
    for (int h = 0; h < sh.h; ++h)
      for (int w = 0; w < sh.w; ++w)
        for (int s = 0; s < sh.s; ++s) {
          double acc = 0.0;
          for (int k = -radius; k <= radius; ++k) {
            int hh = h, ww = w, ss = s;
            if (axis == Axis::H) hh = std::clamp(h + k, 0, sh.h - 1);
            else if (axis == Axis::W) ww = std::clamp(w + k, 0, sh.w - 1);
            else ss = std::clamp(s + k, 0, sh.s - 1);
            acc += kernel[k + radius] * x(c, hh, ww, ss);
          }
          out(c, h, w, s) = acc;
        }
  return out;
}

Tensor4 flip_w(const Tensor4& x) {
  const Shape4 sh = x.shape();
  Tensor4 out(sh);
  for (int c = 0; c < sh.c; ++c)
    for (int h = 0; h < sh.h; ++h)
      for (int w = 0; w < sh.w; ++w)
        for (int s = 0; s < sh.s; ++s) out(c, h, w, s) = x(c, h, sh.w - 1 - w, s);
  return out;
}

enum class Pipeline { Global1, Global2, Local };

struct Geometry {
  bool crop_slices = false;  // 3D volumes crop S; video and 2D keep it
  bool blur_slices = false;
};

// One view: RandCrop -> Resize -> [RandFlip -> RandShiftIntensity ->
// Blur | Contrast] -> Normalize.
Tensor4 make_view(const Tensor4& x, Pipeline kind, const AugmentConfig& cfg, const Geometry& geo, Rng& rng) {
  const Shape4 in = x.shape();
  const ScaleRange range = kind == Pipeline::Local ? cfg.local_scale : cfg.global_scale;
  const double scale = rng.uniform(range.lo, range.hi);
  const int ch = crop_extent(scale, in.h);
  const int cw = crop_extent(scale, in.w);
  const int cs = geo.crop_slices ? crop_extent(scale, in.s) : in.s;
  if (ch > in.h || cw > in.w || cs > in.s) throw ShapeError("crop larger than input " + in.str());
  const int h0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(in.h - ch + 1)));
  const int w0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(in.w - cw + 1)));
  const int s0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(in.s - cs + 1)));
  Tensor4 v = crop(x, h0, w0, s0, ch, cw, cs);

  const ViewExtent target = kind == Pipeline::Local ? cfg.local_out : cfg.global_out;
  const int oh = target.h > 0 ? target.h : in.h;
  const int ow = target.w > 0 ? target.w : in.w;
  const int os = geo.crop_slices ? (target.s > 0 ? target.s : in.s) : in.s;
  v = resize(v, oh, ow, os);

  if (kind != Pipeline::Local) {
    if (rng.bernoulli(cfg.p_flip)) v = flip_w(v);
    if (rng.bernoulli(cfg.p_shift)) {
      const double offset = rng.uniform(-cfg.shift_max, cfg.shift_max);
      for (double& p : v.data()) p += offset;
    }
    if (kind == Pipeline::Global1) {
      if (rng.bernoulli(cfg.p_blur)) {
        v = gaussian_blur(v, rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max), geo.blur_slices);
      }
    } else if (rng.bernoulli(cfg.p_contrast)) {
      const double gamma = rng.uniform(cfg.gamma_min, cfg.gamma_max);
      for (double& p : v.data()) p = std::pow(std::clamp(p, 0.0, 1.0), gamma);
    }
  }
  clamp_unit(v);
  return v;
}

AugmentedViews run_pipelines(const Tensor4& x, const AugmentConfig& cfg, const Geometry& geo, Rng& rng,
                             int out_channels, int replicate_s) {
  cfg.validate();
  auto finish = [&](Tensor4 v) {
    if (v.shape().c != out_channels) v = expand_channels(v, out_channels);
    if (replicate_s > 1) v = replicate_slices(v, replicate_s);
    return v;
  };
  AugmentedViews views;
  views.globals.push_back(finish(make_view(x, Pipeline::Global1, cfg, geo, rng)));
  views.globals.push_back(finish(make_view(x, Pipeline::Global2, cfg, geo, rng)));
  for (int i = 0; i < cfg.n_local; ++i) views.locals.push_back(finish(make_view(x, Pipeline::Local, cfg, geo, rng)));
  return views;
}

}  // namespace

Tensor4 gaussian_blur(const Tensor4& x, double sigma, bool blur_slices) {
  const auto k = gaussian_kernel(sigma);
  Tensor4 out = convolve_axis(x, Axis::H, k);
  out = convolve_axis(out, Axis::W, k);
  if (blur_slices) out = convolve_axis(out, Axis::S, k);
  return out;
}

AugmentedViews augment_2d(const Matrix& image, const AugmentConfig& cfg, Rng& rng) {
  if (image.rows() == 0 || image.cols() == 0) throw ShapeError("empty image");
  Tensor4 x({1, static_cast<int>(image.rows()), static_cast<int>(image.cols()), 1},
            std::vector<double>(image.data(), image.data() + image.size()));
  return run_pipelines(x, cfg, Geometry{false, false}, rng, kChannels, k2dSlices);
}

AugmentedViews augment_video(const Tensor4& clip, const AugmentConfig& cfg, Rng& rng) {
  const Shape4 sh = clip.shape();
  if (sh.h == 0 || sh.w == 0 || sh.s == 0) throw ShapeError("empty clip");
  Tensor4 x = clip;
  if (sh.s > kVideoFrames) {
    const auto idx = rng.sample_sorted(sh.s, kVideoFrames);
    x = take_slices(clip, idx);
  }
  return run_pipelines(x, cfg, Geometry{false, false}, rng, kChannels, 1);
}

AugmentedViews augment_3d(const Tensor4& volume, const AugmentConfig& cfg, Rng& rng) {
  const Shape4 sh = volume.shape();
  if (sh.h == 0 || sh.w == 0 || sh.s == 0 || sh.c == 0) throw ShapeError("empty volume");
  Tensor4 x = volume;
  if (sh.c != 1) {
    Tensor4 mono({1, sh.h, sh.w, sh.s});
    std::copy(volume.data().begin(), volume.data().begin() + static_cast<std::ptrdiff_t>(mono.size()),
              mono.data().begin());
    x = std::move(mono);
  }
  return run_pipelines(x, cfg, Geometry{true, true}, rng, kChannels, 1);
}

AugmentedViews augment_sample(const Sample4D& sample, const AugmentConfig& cfg, Rng& rng) {
  const Shape4 sh = sample.data.shape();
  if (is_2d(sample.modality)) {
    Matrix image(sh.h, sh.w);
    for (int h = 0; h < sh.h; ++h)
      for (int w = 0; w < sh.w; ++w) image(h, w) = sample.data(0, h, w, 0);
    return augment_2d(image, cfg, rng);
  }
  if (sample.modality == Modality::Endoscopy) return augment_video(sample.data, cfg, rng);
  return augment_3d(sample.data, cfg, rng);
}

}  // namespace medssl
