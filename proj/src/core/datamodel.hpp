#pragma once

#include <compare>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace medssl {

enum class Modality { XRay, Ultrasound, Endoscopy, CT, MRI };

inline constexpr std::array<Modality, 5> kAllModalities = {
    Modality::XRay, Modality::Ultrasound, Modality::Endoscopy, Modality::CT, Modality::MRI};

/// Lower-case tag used in manifests and on the command line.
std::string_view to_tag(Modality m);
/// Case-insensitive; throws InvalidInput naming the tag when unknown.
Modality parse_modality(std::string_view tag);
bool is_2d(Modality m);
bool is_volumetric(Modality m);
/// Slice count after preprocessing: 4 (2D), 16 (video), 64 (CT/MRI).
int standard_slices(Modality m);

inline constexpr int kStandardSize = 256;
inline constexpr int kVideoFrames = 16;
inline constexpr int kVolumeSlices = 64;
inline constexpr int k2dSlices = 4;
inline constexpr int kChannels = 3;
inline constexpr double kHuMin = -1000.0;
inline constexpr double kHuMax = 1000.0;

enum class RegionStatus { Normal, Abnormal };

struct Lesion {
  std::string region;
  int size_mm = 0;
  std::string descriptor;
  auto operator<=>(const Lesion&) const = default;
};

struct LabelSet {
  std::set<std::string> categories;
  std::optional<std::string> body_part;
  std::optional<std::map<std::string, RegionStatus>> region_status;
  std::optional<std::set<Lesion>> lesions;
  bool operator==(const LabelSet&) const = default;
};

struct Sample4D {
  Tensor4 data;
  Modality modality = Modality::XRay;
  std::string sample_id;
  LabelSet labels;
};

struct PatchConfig {
  int c_p = kChannels;
  int h_p = 16;
  int w_p = 16;
  int s_p = 4;

  int raw_dim() const { return c_p * h_p * w_p * s_p; }
  bool divides(const Shape4& shape) const;
  /// Tokens produced for `shape`; throws ShapeError when not divisible.
  int token_count(const Shape4& shape) const;
  bool operator==(const PatchConfig&) const = default;
};

struct PatchGrid {
  int n_h = 0;
  int n_w = 0;
  int n_s = 0;
  int count() const { return n_h * n_w * n_s; }
  bool operator==(const PatchGrid&) const = default;
};

struct TokenSequence {
  Matrix tokens;  // N x (c_p h_p w_p s_p)
  PatchGrid grid;
  Shape4 source_shape;
};

/// Rank-3 array, first index slowest. Video frames are 3 x H x W, CT
/// volumes are H x W x S.
struct Array3 {
  int d0 = 0;
  int d1 = 0;
  int d2 = 0;
  std::vector<double> data;

  Array3() = default;
  Array3(int a, int b, int c, double fill = 0.0)
      : d0(a), d1(b), d2(c), data(static_cast<std::size_t>(a) * b * c, fill) {}
  double& operator()(int i, int j, int k) { return data[(static_cast<std::size_t>(i) * d1 + j) * d2 + k]; }
  double operator()(int i, int j, int k) const { return data[(static_cast<std::size_t>(i) * d1 + j) * d2 + k]; }
};

// Preprocessing. `target` is the square spatial size (256 in production).
Sample4D preprocess_2d(const Matrix& image, Modality modality, int target = kStandardSize);
Sample4D preprocess_video(const std::vector<Array3>& frames, Rng& rng, int target = kStandardSize);
Sample4D preprocess_ct(const Array3& volume, int target = kStandardSize);
/// MRI volumes use per-sample min-max instead of the HU window.
Sample4D preprocess_mri(const Array3& volume, int target = kStandardSize);

/// Frame indices kept for a clip of `frame_count` frames: 16 sorted random
/// indices for long clips, cyclic repetition for short ones.
std::vector<int> select_video_frames(int frame_count, Rng& rng);
/// Nearest-neighbour source index for each of `out_len` output slices.
std::vector<int> nearest_slice_map(int in_len, int out_len);

TokenSequence patchify(const Tensor4& x, const PatchConfig& cfg);
Tensor4 unpatchify(const TokenSequence& t);

// Manifest files.
struct ManifestRecord {
  std::string sample_id;
  std::filesystem::path path;
  Modality modality = Modality::XRay;
  LabelSet labels;
};

struct Manifest {
  std::vector<std::string> regions;
  std::vector<int> ks;
  std::vector<ManifestRecord> records;
};

Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
Manifest load_manifest(const std::filesystem::path& path);
/// Paths are written relative to `base_dir` when they live under it.
void write_manifest(std::ostream& out, const Manifest& m, const std::filesystem::path& base_dir = {});
void save_manifest(const std::filesystem::path& path, const Manifest& m);

std::string format_labels_categories(const LabelSet& l);
std::string format_region_status(const LabelSet& l);
std::string format_lesions(const LabelSet& l);

// Raw sample files: 4 x int32 shape header then float64 values, little endian.
Tensor4 read_sample_file(const std::filesystem::path& path);
Shape4 read_sample_shape(const std::filesystem::path& path);
void write_sample_file(const std::filesystem::path& path, const Tensor4& x);

Sample4D load_sample(const ManifestRecord& record);

}  // namespace medssl
