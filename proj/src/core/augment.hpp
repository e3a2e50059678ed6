#pragma once

#include <vector>

#include "datamodel.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace medssl {

/// Closed interval a crop scale is drawn from. Scales are per-axis fractions.
struct ScaleRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Output extent of a view. Zero means "keep the input extent".
struct ViewExtent {
  int h = 0;
  int w = 0;
  int s = 0;
};

struct AugmentConfig {
  ScaleRange global_scale{0.4, 1.0};
  ScaleRange local_scale{0.05, 0.4};
  int n_local = 10;
  ViewExtent global_out{};
  ViewExtent local_out{96, 96, 32};

  double p_flip = 0.5;
  double p_shift = 0.5;
  double shift_max = 0.1;
  double p_blur = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double p_contrast = 0.5;
  double gamma_min = 0.7;
  double gamma_max = 1.3;

  /// Defaults for a modality: 10 locals for 2D, 4 for video and volumes.
  static AugmentConfig defaults_for(Modality m);
  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

struct AugmentedViews {
  std::vector<Tensor4> globals;  // always 2
  std::vector<Tensor4> locals;
};

/// Grayscale H x W image. Views come back as 3 x h x w x 4.
AugmentedViews augment_2d(const Matrix& image, const AugmentConfig& cfg, Rng& rng);
/// 3 x H x W x S clip. Clips longer than 16 frames are subsampled first;
/// crops are spatial only and shared by every frame of a view.
AugmentedViews augment_video(const Tensor4& clip, const AugmentConfig& cfg, Rng& rng);
/// C x H x W x S volume (channel 0 is used). Crops scale H, W and S.
AugmentedViews augment_3d(const Tensor4& volume, const AugmentConfig& cfg, Rng& rng);

/// Dispatches on the sample's modality.
AugmentedViews augment_sample(const Sample4D& sample, const AugmentConfig& cfg, Rng& rng);

/// Crop side for `scale` of `extent`: round(scale * extent), at least 1.
int crop_extent(double scale, int extent);

// Photometric stages, exposed for testing.
Tensor4 gaussian_blur(const Tensor4& x, double sigma, bool blur_slices);
void clamp_unit(Tensor4& x);

}  // namespace medssl
