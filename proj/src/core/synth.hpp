#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "datamodel.hpp"
#include "tensor.hpp"

namespace medssl {

/// Canonical body-part keys the generator can lay out, in layout order.
const std::vector<std::string>& synth_body_part_keys();
/// Region vocabulary used for the synthetic CT/MRI annotations.
const std::vector<std::string>& synth_regions();

struct SynthSpec {
  std::vector<Modality> modalities{Modality::XRay, Modality::CT};
  int categories = 4;
  /// Samples per (modality, category); body parts are assigned round-robin.
  int samples_per_cell = 8;
  std::vector<std::string> body_parts{"chest", "abdomen", "head", "pelvis"};
  double noise_level = 0.05;
  std::uint64_t seed = 0;
  /// Spatial side of every sample; slice counts keep their standard values.
  int image_size = kStandardSize;

  /// Throws ConfigError on violations.
  void validate() const;
};

/// Parameters that identify a synthetic cell.
struct SynthCell {
  Modality modality = Modality::XRay;
  int body_part = 0;  // index into synth_body_part_keys()
  int category = 0;
  int index = 0;      // running sample number within (modality, category)
};

std::string synth_sample_id(const SynthCell& c);
/// Throws InvalidInput for ids not produced by the generator.
SynthCell parse_synth_id(const std::string& sample_id);

/// Modality-specific body-part tag written to the manifest.
std::string synth_body_part_tag(Modality m, int body_part);
/// Spatial frequency (cycles per image) of category k.
double synth_frequency(int category);

/// Noise-free rendering of one cell, C x H x W x S in [0, 1].
Tensor4 render_cell(const SynthCell& c, int image_size);
/// Rendering plus uniform noise, clamped to [0, 1].
Tensor4 render_sample(const SynthCell& c, int image_size, double noise_level, Rng& rng);
LabelSet synth_labels(const SynthCell& c);

struct SynthResult {
  Manifest manifest;
  std::filesystem::path manifest_path;
  std::filesystem::path body_part_map_path;
};

/// Writes samples/<id>.bin, manifest.tsv and body_part_map.tsv under `out_dir`.
SynthResult generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

/// Weighted one-hot codes of category, body part and modality.
Vector oracle_embedding(const std::string& sample_id);

}  // namespace medssl
