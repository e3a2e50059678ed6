#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "error.hpp"
#include "retrieval.hpp"
#include "strings.hpp"

namespace medssl {

namespace {

constexpr int kMaxLayouts = 8;

double layout_angle(int body_part) { return 2.0 * M_PI * body_part / kMaxLayouts; }

int body_part_index(const std::string& key) {
  const auto& keys = synth_body_part_keys();
  const auto it = std::find(keys.begin(), keys.end(), key);
  if (it == keys.end()) throw ConfigError("unknown synthetic body part '" + key + "'");
  return static_cast<int>(it - keys.begin());
}

}  // namespace

const std::vector<std::string>& synth_body_part_keys() {
  static const std::vector<std::string> keys = {"chest", "abdomen", "head", "pelvis", "limb", "neck", "spine", "heart"};
  return keys;
}

const std::vector<std::string>& synth_regions() {
  static const std::vector<std::string> regions = {"liver", "lung", "kidney", "spleen"};
  return regions;
}

void SynthSpec::validate() const {
  if (modalities.empty()) throw ConfigError("synth: no modalities");
  for (std::size_t i = 0; i < modalities.size(); ++i)
    for (std::size_t j = i + 1; j < modalities.size(); ++j)
      if (modalities[i] == modalities[j]) throw ConfigError("synth: duplicate modality " + std::string(to_tag(modalities[i])));
  if (categories < 2 || categories > 16) throw ConfigError("synth: categories must lie in [2, 16]");
  if (samples_per_cell < 1) throw ConfigError("synth: samples per cell must be positive");
  if (body_parts.empty()) throw ConfigError("synth: no body parts");
  for (std::size_t i = 0; i < body_parts.size(); ++i) {
    body_part_index(body_parts[i]);
    for (std::size_t j = i + 1; j < body_parts.size(); ++j)
      if (body_parts[i] == body_parts[j]) throw ConfigError("synth: duplicate body part " + body_parts[i]);
  }
  // Layout blobs and gratings differ by at least ~0.2 in amplitude; noise
  // must stay below that margin.
  if (!(noise_level >= 0.0 && noise_level < 0.2)) throw ConfigError("synth: noise level must lie in [0, 0.2)");
  if (image_size < 8) throw ConfigError("synth: image size must be at least 8");
}

std::string synth_sample_id(const SynthCell& c) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "syn-%s-b%d-c%d-s%03d", std::string(to_tag(c.modality)).c_str(), c.body_part,
                c.category, c.index);
  return buf;
}

SynthCell parse_synth_id(const std::string& sample_id) {
  const auto parts = split(sample_id, '-');
  auto bad = [&] { return InvalidInput("'" + sample_id + "' is not a synthetic sample id"); };
  if (parts.size() != 5 || parts[0] != "syn") throw bad();
  SynthCell c;
  try {
    c.modality = parse_modality(parts[1]);
  } catch (const Error&) {
    throw bad();
  }
  auto number = [&](std::string_view field, char prefix) {
    if (field.size() < 2 || field[0] != prefix) throw bad();
    int v = 0;
    for (char ch : field.substr(1)) {
      if (ch < '0' || ch > '9') throw bad();
      v = v * 10 + (ch - '0');
    }
    return v;
  };
  c.body_part = number(parts[2], 'b');
  c.category = number(parts[3], 'c');
  c.index = number(parts[4], 's');
  if (c.body_part >= kMaxLayouts) throw bad();
  return c;
}

std::string synth_body_part_tag(Modality m, int body_part) {
  static const char* xray[] = {"CHEST", "ABDOMEN", "SKULL", "PELVIS", "EXTREMITY", "NECK", "SPINE", "CARDIAC"};
  static const char* volume[] = {"thorax", "abdomen", "brain", "pelvis", "extremity", "cervical", "spine", "cardiac"};
  switch (m) {
    case Modality::XRay: return xray[body_part];
    case Modality::CT:
    case Modality::MRI: return volume[body_part];
    default: return synth_body_part_keys()[static_cast<std::size_t>(body_part)];
  }
}

double synth_frequency(int category) { return 1.0 + category; }

Tensor4 render_cell(const SynthCell& c, int n) {
  const int slices = standard_slices(c.modality);
  Tensor4 out(Shape4{kChannels, n, n, slices});
  // Layout: an elongated blob placed on a circle and oriented along the
  // layout angle, so both position and local edge direction identify it.
  const double theta = layout_angle(c.body_part);
  const double cy = 0.5 + 0.25 * std::sin(theta), cx = 0.5 + 0.25 * std::cos(theta);
  const double ux = std::cos(theta / 2), uy = std::sin(theta / 2);
  // Category: concentric rings, isotropic so they never mimic a layout.
  const double freq = synth_frequency(c.category);
  for (int s = 0; s < slices; ++s) {
    const double z = (s + 0.5) / slices;
    for (int h = 0; h < n; ++h) {
      const double y = (h + 0.5) / n;
      for (int w = 0; w < n; ++w) {
        const double x = (w + 0.5) / n;
        const double along = (x - cx) * ux + (y - cy) * uy;
        const double across = -(x - cx) * uy + (y - cy) * ux;
        const double blob = std::exp(-0.5 * (along * along / (0.3 * 0.3) + across * across / (0.07 * 0.07)));
        const double r = std::hypot(x - 0.5, y - 0.5);
        double phase = 0.0;
        if (c.modality == Modality::Endoscopy) phase = 0.15 * s;
        const double rings = std::cos(2 * M_PI * freq * r + phase);
        double v = 0.1 + 0.45 * blob + 0.2 * (1.0 + rings);
        // Mild per-modality style.
        if (c.modality == Modality::Ultrasound) v *= 1.0 - 0.15 * y;
        if (is_volumetric(c.modality)) v *= 0.85 + 0.15 * std::sin(M_PI * z);
        for (int ch = 0; ch < kChannels; ++ch) {
          double vc = v;
          if (c.modality == Modality::Endoscopy) vc *= 1.0 - 0.08 * ch;
          if (c.modality == Modality::MRI) vc = 1.0 - 0.9 * vc;
          out(ch, h, w, s) = std::clamp(vc, 0.0, 1.0);
        }
      }
    }
  }
  return out;
}

Tensor4 render_sample(const SynthCell& c, int n, double noise_level, Rng& rng) {
  Tensor4 x = render_cell(c, n);
  if (noise_level <= 0.0) return x;
  const auto& sh = x.shape();
  // Grayscale modalities share the noise field across channels, 2D ones
  // across their replicated slices as well.
  const bool colour = c.modality == Modality::Endoscopy;
  const int noise_slices = is_2d(c.modality) ? 1 : sh.s;
  const int noise_channels = colour ? sh.c : 1;
  std::vector<double> noise(static_cast<std::size_t>(noise_channels) * sh.h * sh.w * noise_slices);
  for (auto& e : noise) e = rng.uniform(-noise_level, noise_level);
  for (int ch = 0; ch < sh.c; ++ch)
    for (int h = 0; h < sh.h; ++h)
      for (int w = 0; w < sh.w; ++w)
        for (int s = 0; s < sh.s; ++s) {
          const int nc = colour ? ch : 0, ns = noise_slices == 1 ? 0 : s;
          const double e = noise[((static_cast<std::size_t>(nc) * sh.h + h) * sh.w + w) * noise_slices + ns];
          auto& v = x(ch, h, w, s);
          v = std::clamp(v + e, 0.0, 1.0);
        }
  return x;
}

LabelSet synth_labels(const SynthCell& c) {
  LabelSet l;
  l.categories.insert("c" + std::to_string(c.category));
  l.body_part = synth_body_part_tag(c.modality, c.body_part);
  if (is_volumetric(c.modality)) {
    const auto& regions = synth_regions();
    std::map<std::string, RegionStatus> status;
    std::set<Lesion> lesions;
    for (std::size_t r = 0; r < regions.size(); ++r) {
      const bool abnormal = ((c.category + c.body_part + static_cast<int>(r)) % 3) == 0;
      status[regions[r]] = abnormal ? RegionStatus::Abnormal : RegionStatus::Normal;
      if (abnormal) lesions.insert({regions[r], 10 + 5 * c.category, "hypodense"});
    }
    l.region_status = std::move(status);
    l.lesions = std::move(lesions);
  }
  return l;
}

SynthResult generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir / "samples");
  std::vector<int> parts;
  for (const auto& b : spec.body_parts) parts.push_back(body_part_index(b));

  SynthResult result;
  result.manifest.regions = synth_regions();
  result.manifest.ks = {1, 5, 10};
  Rng rng(spec.seed);
  for (Modality m : spec.modalities) {
    for (int k = 0; k < spec.categories; ++k) {
      for (int i = 0; i < spec.samples_per_cell; ++i) {
        SynthCell cell{m, parts[static_cast<std::size_t>(i) % parts.size()], k, i};
        const auto id = synth_sample_id(cell);
        const auto path = out_dir / "samples" / (id + ".bin");
        write_sample_file(path, render_sample(cell, spec.image_size, spec.noise_level, rng));
        result.manifest.records.push_back({id, path, m, synth_labels(cell)});
      }
    }
  }
  result.manifest_path = out_dir / "manifest.tsv";
  save_manifest(result.manifest_path, result.manifest);
  result.body_part_map_path = out_dir / "body_part_map.tsv";
  std::ofstream map_out(result.body_part_map_path, std::ios::binary);
  if (!map_out) throw IoError("cannot write " + result.body_part_map_path.string());
  map_out << BodyPartMap::default_text();
  return result;
}

Vector oracle_embedding(const std::string& sample_id) {
  const auto c = parse_synth_id(sample_id);
  // One-hot blocks weighted so that category outranks body part, which
  // outranks modality: the nearest item always shares the category, and the
  // nearest item of another modality also shares the body part.
  constexpr int kMaxCategories = 16;
  const int parts = static_cast<int>(synth_body_part_keys().size());
  Vector v = Vector::Zero(kMaxCategories + parts + static_cast<int>(kAllModalities.size()));
  v[c.category] = 1.0;
  v[kMaxCategories + c.body_part] = 0.5;
  v[kMaxCategories + parts + static_cast<int>(c.modality)] = 0.1;
  return v;
}

}  // namespace medssl
