#include "datamodel.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "error.hpp"
#include "resample.hpp"
#include "strings.hpp"

namespace medssl {

std::string_view to_tag(Modality m) {
  switch (m) {
    case Modality::XRay: return "xray";
    case Modality::Ultrasound: return "ultrasound";
    case Modality::Endoscopy: return "endoscopy";
    case Modality::CT: return "ct";
    case Modality::MRI: return "mri";
  }
  return "?";
}

Modality parse_modality(std::string_view tag) {
  const std::string t = to_lower(trim(tag));
  if (t == "xray" || t == "x-ray") return Modality::XRay;
  if (t == "ultrasound" || t == "us") return Modality::Ultrasound;
  if (t == "endoscopy") return Modality::Endoscopy;
  if (t == "ct") return Modality::CT;
  if (t == "mri" || t == "mr") return Modality::MRI;
  throw InvalidInput("unknown modality '" + std::string(tag) + "'");
}

bool is_2d(Modality m) { return m == Modality::XRay || m == Modality::Ultrasound; }
bool is_volumetric(Modality m) { return m == Modality::CT || m == Modality::MRI; }

int standard_slices(Modality m) {
  if (is_2d(m)) return k2dSlices;
  if (m == Modality::Endoscopy) return kVideoFrames;
  return kVolumeSlices;
}

bool PatchConfig::divides(const Shape4& shape) const {
  return c_p > 0 && h_p > 0 && w_p > 0 && s_p > 0 && shape.c == c_p && shape.h % h_p == 0 &&
         shape.w % w_p == 0 && shape.s % s_p == 0;
}

int PatchConfig::token_count(const Shape4& shape) const {
  if (!divides(shape)) {
    throw ShapeError("patch " + std::to_string(c_p) + "x" + std::to_string(h_p) + "x" +
                     std::to_string(w_p) + "x" + std::to_string(s_p) + " does not tile " + shape.str());
  }
  return (shape.h / h_p) * (shape.w / w_p) * (shape.s / s_p);
}

namespace {

void min_max_normalize(std::vector<double>& v) {
  if (v.empty()) return;
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (!(range > 0.0) || !std::isfinite(range)) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (double& x : v) x = (x - lo) / range;
}

void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw InvalidInput(std::string(what) + " contains non-finite values");
}

// H x W x S volume (already mapped to [0,1]) -> 3 x target x target x 64.
Sample4D finish_volume(const Array3& vol, Modality m, int target) {
  Tensor4 x({1, vol.d0, vol.d1, vol.d2}, vol.data);
  const auto map = nearest_slice_map(vol.d2, kVolumeSlices);
  x = take_slices(x, map);
  x = fit_square(x, target);
  Sample4D out;
  out.data = expand_channels(x, kChannels);
  out.modality = m;
  return out;
}

}  // namespace

Sample4D preprocess_2d(const Matrix& image, Modality modality, int target) {
  if (!is_2d(modality)) throw InvalidInput("preprocess_2d expects xray or ultrasound");
  if (image.rows() == 0 || image.cols() == 0) throw InvalidInput("empty image");
  if (target <= 0) throw InvalidInput("target size must be positive");
  std::vector<double> v(image.data(), image.data() + image.size());
  check_finite(v, "image");
  min_max_normalize(v);
  Tensor4 x({1, static_cast<int>(image.rows()), static_cast<int>(image.cols()), 1}, std::move(v));
  x = fit_square(x, target);
  Sample4D out;
  out.data = replicate_slices(expand_channels(x, kChannels), k2dSlices);
  out.modality = modality;
  return out;
}

std::vector<int> select_video_frames(int frame_count, Rng& rng) {
  if (frame_count <= 0) throw InvalidInput("video has no frames");
  if (frame_count > kVideoFrames) return rng.sample_sorted(frame_count, kVideoFrames);
  std::vector<int> idx(kVideoFrames);
  for (int i = 0; i < kVideoFrames; ++i) idx[i] = i % frame_count;
  return idx;
}

Sample4D preprocess_video(const std::vector<Array3>& frames, Rng& rng, int target) {
  if (frames.empty()) throw InvalidInput("video has no frames");
  const int h = frames.front().d1;
  const int w = frames.front().d2;
  for (const auto& f : frames) {
    if (f.d0 != kChannels || f.d1 != h || f.d2 != w || h <= 0 || w <= 0)
      throw InvalidInput("video frames must all be 3 x H x W with equal H, W");
    check_finite(f.data, "frame");
  }
  const auto idx = select_video_frames(static_cast<int>(frames.size()), rng);
  Tensor4 x({kChannels, h, w, kVideoFrames});
  for (int s = 0; s < kVideoFrames; ++s) {
    const Array3& f = frames[static_cast<std::size_t>(idx[s])];
    for (int c = 0; c < kChannels; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) x(c, i, j, s) = f(c, i, j);
  }
  min_max_normalize(x.data());
  Sample4D out;
  out.data = fit_square(x, target);
  out.modality = Modality::Endoscopy;
  return out;
}

std::vector<int> nearest_slice_map(int in_len, int out_len) {
  if (in_len <= 0 || out_len <= 0) throw InvalidInput("slice counts must be positive");
  std::vector<int> map(static_cast<std::size_t>(out_len));
  for (int j = 0; j < out_len; ++j) {
    map[j] = static_cast<int>(static_cast<std::int64_t>(j) * in_len / out_len);
  }
  return map;
}

Sample4D preprocess_ct(const Array3& volume, int target) {
  if (volume.d0 <= 0 || volume.d1 <= 0 || volume.d2 <= 0) throw InvalidInput("empty CT volume");
  check_finite(volume.data, "CT volume");
  Array3 v = volume;
  for (double& hu : v.data) hu = (std::clamp(hu, kHuMin, kHuMax) - kHuMin) / (kHuMax - kHuMin);
  return finish_volume(v, Modality::CT, target);
}

Sample4D preprocess_mri(const Array3& volume, int target) {
  if (volume.d0 <= 0 || volume.d1 <= 0 || volume.d2 <= 0) throw InvalidInput("empty MRI volume");
  check_finite(volume.data, "MRI volume");
  Array3 v = volume;
  min_max_normalize(v.data);
  return finish_volume(v, Modality::MRI, target);
}

TokenSequence patchify(const Tensor4& x, const PatchConfig& cfg) {
  const Shape4 sh = x.shape();
  const int n = cfg.token_count(sh);
  TokenSequence t;
  t.grid = {sh.h / cfg.h_p, sh.w / cfg.w_p, sh.s / cfg.s_p};
  t.source_shape = sh;
  t.tokens.resize(n, cfg.raw_dim());
  int row = 0;
  for (int gh = 0; gh < t.grid.n_h; ++gh)
    for (int gw = 0; gw < t.grid.n_w; ++gw)
      for (int gs = 0; gs < t.grid.n_s; ++gs, ++row) {
        double* dst = t.tokens.row(row).data();
        int k = 0;
        for (int c = 0; c < cfg.c_p; ++c)
          for (int dh = 0; dh < cfg.h_p; ++dh)
            for (int dw = 0; dw < cfg.w_p; ++dw) {
              const double* src = &x.data()[x.index(c, gh * cfg.h_p + dh, gw * cfg.w_p + dw, gs * cfg.s_p)];
              for (int ds = 0; ds < cfg.s_p; ++ds) dst[k++] = src[ds];
            }
      }
  return t;
}

Tensor4 unpatchify(const TokenSequence& t) {
  const Shape4 sh = t.source_shape;
  const PatchGrid g = t.grid;
  if (g.n_h <= 0 || g.n_w <= 0 || g.n_s <= 0 || sh.h % g.n_h != 0 || sh.w % g.n_w != 0 ||
      sh.s % g.n_s != 0 || t.tokens.rows() != g.count()) {
    throw ShapeError("token grid inconsistent with source shape " + sh.str());
  }
  const int hp = sh.h / g.n_h;
  const int wp = sh.w / g.n_w;
  const int sp = sh.s / g.n_s;
  if (t.tokens.cols() != static_cast<Eigen::Index>(sh.c) * hp * wp * sp) {
    throw ShapeError("token width does not match patch volume");
  }
  Tensor4 x(sh);
  int row = 0;
  for (int gh = 0; gh < g.n_h; ++gh)
    for (int gw = 0; gw < g.n_w; ++gw)
      for (int gs = 0; gs < g.n_s; ++gs, ++row) {
        const double* src = t.tokens.row(row).data();
        int k = 0;
        for (int c = 0; c < sh.c; ++c)
          for (int dh = 0; dh < hp; ++dh)
            for (int dw = 0; dw < wp; ++dw) {
              double* dst = &x.data()[x.index(c, gh * hp + dh, gw * wp + dw, gs * sp)];
              for (int ds = 0; ds < sp; ++ds) dst[ds] = src[k++];
            }
      }
  return x;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

bool is_absent(std::string_view field) {
  const auto t = trim(field);
  return t.empty() || t == "-";
}

int parse_positive_int(std::string_view s, int line, const char* what) {
  const std::string t(trim(s));
  try {
    std::size_t used = 0;
    const long v = std::stol(t, &used);
    if (used != t.size() || v <= 0 || v > std::numeric_limits<int>::max()) throw std::invalid_argument(t);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ManifestError(line, std::string("invalid ") + what + " '" + t + "'");
  }
}

void require_region(const std::vector<std::string>& vocab, const std::string& region, int line) {
  if (std::find(vocab.begin(), vocab.end(), region) == vocab.end())
    throw ManifestError(line, "region '" + region + "' not in the declared region vocabulary");
}

}  // namespace

Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  Manifest m;
  std::unordered_set<std::string> ids;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string_view line = raw;
    if (trim(line).empty()) continue;
    if (line.front() == '#') {
      const auto body = trim(line.substr(1));
      const auto colon = body.find(':');
      if (colon == std::string_view::npos) continue;
      const std::string key = to_lower(trim(body.substr(0, colon)));
      const auto value = trim(body.substr(colon + 1));
      if (key == "regions") {
        m.regions.clear();
        for (const auto& r : split(value, ','))
          if (!trim(r).empty()) m.regions.emplace_back(trim(r));
      } else if (key == "ks") {
        m.ks.clear();
        for (const auto& k : split(value, ','))
          if (!trim(k).empty()) m.ks.push_back(parse_positive_int(k, line_no, "K value"));
      }
      continue;
    }

    const auto fields = split(line, '\t');
    if (fields.size() < 3 || fields.size() > 7)
      throw ManifestError(line_no, "expected 3 to 7 tab-separated fields, got " + std::to_string(fields.size()));
    ManifestRecord rec;
    rec.sample_id = std::string(trim(fields[0]));
    if (rec.sample_id.empty()) throw ManifestError(line_no, "empty sample_id");
    if (!ids.insert(rec.sample_id).second) throw ManifestError(line_no, "duplicate sample_id '" + rec.sample_id + "'");
    const std::string path(trim(fields[1]));
    if (path != "-" && !path.empty()) {
      rec.path = path;
      if (rec.path.is_relative() && !base_dir.empty()) rec.path = base_dir / rec.path;
    }
    try {
      rec.modality = parse_modality(fields[2]);
    } catch (const InvalidInput& e) {
      throw ManifestError(line_no, e.what());
    }
    if (fields.size() > 3 && !is_absent(fields[3])) {
      for (const auto& c : split(fields[3], ','))
        if (!trim(c).empty()) rec.labels.categories.emplace(trim(c));
    }
    if (fields.size() > 4 && !is_absent(fields[4])) rec.labels.body_part = std::string(trim(fields[4]));
    if (fields.size() > 5 && !is_absent(fields[5])) {
      std::map<std::string, RegionStatus> status;
      for (const auto& item : split(fields[5], ';')) {
        if (trim(item).empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) throw ManifestError(line_no, "region status entry '" + std::string(item) + "' lacks '='");
        const std::string region(trim(item.substr(0, eq)));
        const std::string value = to_lower(trim(item.substr(eq + 1)));
        require_region(m.regions, region, line_no);
        if (value == "normal") status[region] = RegionStatus::Normal;
        else if (value == "abnormal") status[region] = RegionStatus::Abnormal;
        else throw ManifestError(line_no, "region status must be normal|abnormal, got '" + value + "'");
      }
      rec.labels.region_status = std::move(status);
    }
    if (fields.size() > 6 && !is_absent(fields[6])) {
      std::set<Lesion> lesions;
      if (trim(fields[6]) != "none") {
        for (const auto& item : split(fields[6], ';')) {
          if (trim(item).empty()) continue;
          const auto parts = split(item, ':');
          if (parts.size() != 3) throw ManifestError(line_no, "lesion entry '" + std::string(item) + "' must be region:size_mm:descriptor");
          Lesion l{std::string(trim(parts[0])), parse_positive_int(parts[1], line_no, "lesion size"),
                   std::string(trim(parts[2]))};
          require_region(m.regions, l.region, line_no);
          lesions.insert(std::move(l));
        }
      }
      rec.labels.lesions = std::move(lesions);
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError(0, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

std::string format_labels_categories(const LabelSet& l) {
  if (l.categories.empty()) return "-";
  return join(std::vector<std::string>(l.categories.begin(), l.categories.end()), ",");
}

std::string format_region_status(const LabelSet& l) {
  if (!l.region_status) return "-";
  std::vector<std::string> items;
  for (const auto& [region, st] : *l.region_status)
    items.push_back(region + "=" + (st == RegionStatus::Normal ? "normal" : "abnormal"));
  return items.empty() ? "-" : join(items, ";");
}

std::string format_lesions(const LabelSet& l) {
  if (!l.lesions) return "-";
  if (l.lesions->empty()) return "none";
  std::vector<std::string> items;
  for (const auto& les : *l.lesions)
    items.push_back(les.region + ":" + std::to_string(les.size_mm) + ":" + les.descriptor);
  return join(items, ";");
}

void write_manifest(std::ostream& out, const Manifest& m, const std::filesystem::path& base_dir) {
  out << "# regions: " << join(m.regions, ",") << "\n";
  if (!m.ks.empty()) {
    std::vector<std::string> ks;
    for (int k : m.ks) ks.push_back(std::to_string(k));
    out << "# ks: " << join(ks, ",") << "\n";
  }
  for (const auto& r : m.records) {
    std::string path = "-";
    if (!r.path.empty()) {
      path = (!base_dir.empty() && r.path.is_absolute() == base_dir.is_absolute())
                 ? r.path.lexically_relative(base_dir).generic_string()
                 : r.path.generic_string();
      if (path.empty() || path.starts_with("..")) path = r.path.generic_string();
    }
    out << r.sample_id << '\t' << path << '\t' << to_tag(r.modality) << '\t'
        << format_labels_categories(r.labels) << '\t' << r.labels.body_part.value_or("-") << '\t'
        << format_region_status(r.labels) << '\t' << format_lesions(r.labels) << '\n';
  }
}

void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  write_manifest(out, m, path.parent_path());
  if (!out) throw IoError("failed writing manifest " + path.string());
}

// ---------------------------------------------------------------------------
// Sample files

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

Shape4 read_shape_header(std::istream& in, const std::filesystem::path& path) {
  std::int32_t hdr[4];
  in.read(reinterpret_cast<char*>(hdr), sizeof hdr);
  if (!in) throw IoError("truncated sample header in " + path.string());
  for (auto d : hdr)
    if (d <= 0) throw IoError("invalid sample shape in " + path.string());
  return Shape4{hdr[0], hdr[1], hdr[2], hdr[3]};
}

}  // namespace

Shape4 read_sample_shape(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open sample " + path.string());
  return read_shape_header(in, path);
}

Tensor4 read_sample_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open sample " + path.string());
  const Shape4 shape = read_shape_header(in, path);
  std::vector<double> data(shape.size());
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw IoError("truncated sample data in " + path.string());
  return Tensor4(shape, std::move(data));
}

void write_sample_file(const std::filesystem::path& path, const Tensor4& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write sample " + path.string());
  const Shape4 s = x.shape();
  const std::int32_t hdr[4] = {s.c, s.h, s.w, s.s};
  out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
  out.write(reinterpret_cast<const char*>(x.data().data()), static_cast<std::streamsize>(x.size() * sizeof(double)));
  if (!out) throw IoError("failed writing sample " + path.string());
}

Sample4D load_sample(const ManifestRecord& record) {
  if (record.path.empty()) throw IoError("record '" + record.sample_id + "' has no sample path");
  Sample4D s;
  s.data = read_sample_file(record.path);
  s.modality = record.modality;
  s.sample_id = record.sample_id;
  s.labels = record.labels;
  return s;
}

}  // namespace medssl
