#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "datamodel.hpp"
#include "error.hpp"
#include "test_support.hpp"

using namespace medssl;

TEST_CASE("modality tags parse case-insensitively and reject unknown tags") {
  for (auto m : kAllModalities) CHECK(parse_modality(to_tag(m)) == m);
  CHECK(parse_modality("XRay") == Modality::XRay);
  CHECK(parse_modality("CT") == Modality::CT);
  try {
    parse_modality("pet");
    FAIL("expected InvalidInput");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("pet") != std::string::npos);
  }
}

TEST_CASE("standard slice counts") {
  CHECK(standard_slices(Modality::XRay) == 4);
  CHECK(standard_slices(Modality::Ultrasound) == 4);
  CHECK(standard_slices(Modality::Endoscopy) == 16);
  CHECK(standard_slices(Modality::CT) == 64);
  CHECK(standard_slices(Modality::MRI) == 64);
}

TEST_CASE("preprocess_2d: tall image is resized along the long axis and padded") {
  Rng rng(1);
  const Matrix img = testing::random_matrix(512, 384, rng, 10.0, 20.0);
  const auto s = preprocess_2d(img, Modality::XRay);
  CHECK(s.data.shape() == Shape4{3, 256, 256, 4});
  // Content occupies 256 x 192 centred in W; columns [32, 224).
  for (int h = 0; h < 256; h += 17) {
    for (int w = 0; w < 32; ++w) CHECK(s.data(0, h, w, 0) == 0.0);
    for (int w = 224; w < 256; ++w) CHECK(s.data(0, h, w, 0) == 0.0);
  }
  double content_max = 0.0;
  for (int h = 0; h < 256; ++h)
    for (int w = 32; w < 224; ++w) content_max = std::max(content_max, s.data(0, h, w, 0));
  CHECK(content_max > 0.5);
  for (double v : s.data.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("preprocess_2d: constant image is replicated uniformly") {
  const Matrix img = Matrix::Constant(100, 60, 5.0);
  const auto s = preprocess_2d(img, Modality::Ultrasound);
  const double ref = s.data(0, 128, 128, 0);
  for (int c = 0; c < 3; ++c)
    for (int sl = 0; sl < 4; ++sl)
      for (int h = 0; h < 256; h += 5) CHECK(s.data(c, h, 128, sl) == ref);
}

TEST_CASE("preprocess_2d: image already at target size is only normalized and replicated") {
  Rng rng(2);
  const Matrix img = testing::random_matrix(256, 256, rng, -3.0, 7.0);
  const double lo = img.minCoeff(), hi = img.maxCoeff();
  const auto s = preprocess_2d(img, Modality::XRay);
  for (int h = 0; h < 256; h += 3)
    for (int w = 0; w < 256; w += 7) {
      const double expected = (img(h, w) - lo) / (hi - lo);
      for (int c = 0; c < 3; ++c)
        for (int sl = 0; sl < 4; ++sl) CHECK(s.data(c, h, w, sl) == doctest::Approx(expected).epsilon(1e-15));
    }
}

TEST_CASE("preprocess_2d rejects empty images and non-2D modalities") {
  CHECK_THROWS_AS(preprocess_2d(Matrix(0, 4), Modality::XRay), InvalidInput);
  CHECK_THROWS_AS(preprocess_2d(Matrix::Ones(4, 4), Modality::CT), InvalidInput);
}

TEST_CASE("video frame selection") {
  Rng rng(4);
  SUBCASE("long clips keep 16 increasing indices") {
    const auto idx = select_video_frames(40, rng);
    REQUIRE(idx.size() == 16);
    for (std::size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] > idx[i - 1]);
    CHECK(idx.front() >= 0);
    CHECK(idx.back() < 40);
  }
  SUBCASE("16 frames are kept in order") {
    const auto idx = select_video_frames(16, rng);
    for (int i = 0; i < 16; ++i) CHECK(idx[i] == i);
  }
  SUBCASE("short clips repeat cyclically") {
    // Enumerate the cyclic rule directly: three full passes then one frame.
    std::vector<int> expected;
    for (int pass : {5, 5, 5, 1})
      for (int f = 0; f < pass; ++f) expected.push_back(f);
    CHECK(select_video_frames(5, rng) == expected);
  }
  SUBCASE("short clips do not depend on the seed") {
    Rng a(1), b(999);
    CHECK(select_video_frames(7, a) == select_video_frames(7, b));
  }
  CHECK_THROWS_AS(select_video_frames(0, rng), InvalidInput);
}

TEST_CASE("preprocess_video output shape and determinism") {
  std::vector<Array3> frames;
  Rng gen(5);
  for (int f = 0; f < 20; ++f) {
    Array3 a(3, 24, 32);
    for (auto& v : a.data) v = gen.uniform(0, 255);
    frames.push_back(a);
  }
  Rng r1(7), r2(7);
  const auto s1 = preprocess_video(frames, r1, 64);
  const auto s2 = preprocess_video(frames, r2, 64);
  CHECK(s1.data.shape() == Shape4{3, 64, 64, 16});
  CHECK(s1.data == s2.data);
  CHECK(s1.modality == Modality::Endoscopy);
  Rng r3(0);
  CHECK_THROWS_AS(preprocess_video({}, r3), InvalidInput);
}

TEST_CASE("CT intensities are clipped and mapped affinely") {
  Array3 vol(4, 4, 3);
  vol(0, 0, 0) = 1500;
  vol(1, 1, 1) = -1000;
  vol(2, 2, 2) = 0;
  vol(3, 3, 0) = -4000;
  const auto s = preprocess_ct(vol, 4);
  CHECK(s.data.shape() == Shape4{3, 4, 4, 64});
  const auto map = nearest_slice_map(3, 64);
  auto slice_of = [&](int src) { return static_cast<int>(std::find(map.begin(), map.end(), src) - map.begin()); };
  CHECK(s.data(0, 0, 0, slice_of(0)) == 1.0);
  CHECK(s.data(1, 1, 1, slice_of(1)) == 0.0);
  CHECK(s.data(2, 2, 2, slice_of(2)) == 0.5);
  CHECK(s.data(0, 3, 3, slice_of(0)) == 0.0);
}

TEST_CASE("CT mapping is monotone inside the window") {
  Array3 vol(1, 1, 1);
  double prev = -1.0;
  for (double hu = -1200; hu <= 1200; hu += 50) {
    vol(0, 0, 0) = hu;
    const double v = preprocess_ct(vol, 1).data(0, 0, 0, 0);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("nearest slice map for 128 to 64 takes every second slice") {
  const auto map = nearest_slice_map(128, 64);
  REQUIRE(map.size() == 64);
  for (int j = 0; j < 64; ++j) CHECK(map[j] == 2 * j);
  CHECK(nearest_slice_map(64, 64) == [] {
    std::vector<int> v(64);
    for (int i = 0; i < 64; ++i) v[i] = i;
    return v;
  }());
}

TEST_CASE("MRI uses per-sample min-max") {
  Array3 vol(2, 2, 2);
  for (std::size_t i = 0; i < vol.data.size(); ++i) vol.data[i] = 100.0 + 10.0 * i;
  const auto s = preprocess_mri(vol, 2);
  CHECK(s.modality == Modality::MRI);
  const auto [lo, hi] = std::minmax_element(s.data.data().begin(), s.data.data().end());
  CHECK(*lo == 0.0);
  CHECK(*hi == 1.0);
}

TEST_CASE("token counts") {
  const PatchConfig p16{3, 16, 16, 4};
  CHECK(p16.token_count({3, 256, 256, 4}) == 256);
  CHECK(p16.token_count({3, 256, 256, 16}) == 1024);
  CHECK(p16.token_count({3, 256, 256, 64}) == 4096);
  CHECK(p16.raw_dim() == 3072);
  const PatchConfig p8{3, 8, 8, 4};
  CHECK(p8.token_count({3, 256, 256, 4}) == 1024);
  CHECK_THROWS_AS(p16.token_count({3, 250, 256, 4}), ShapeError);
}

TEST_CASE("patchify layout matches the declared flattening order") {
  Rng rng(8);
  const Shape4 sh{3, 8, 12, 8};
  const PatchConfig p{3, 4, 4, 2};
  const auto x = testing::random_tensor(sh, rng);
  const auto t = patchify(x, p);
  const int nh = 2, nw = 3, ns = 4;
  CHECK(t.grid == PatchGrid{nh, nw, ns});
  REQUIRE(t.tokens.rows() == nh * nw * ns);
  REQUIRE(t.tokens.cols() == p.raw_dim());
  for (int gh = 0; gh < nh; ++gh)
    for (int gw = 0; gw < nw; ++gw)
      for (int gs = 0; gs < ns; ++gs) {
        const int row = (gh * nw + gw) * ns + gs;
        int col = 0;
        for (int c = 0; c < 3; ++c)
          for (int dh = 0; dh < 4; ++dh)
            for (int dw = 0; dw < 4; ++dw)
              for (int ds = 0; ds < 2; ++ds)
                CHECK(t.tokens(row, col++) == x(c, gh * 4 + dh, gw * 4 + dw, gs * 2 + ds));
      }
}

TEST_CASE("patchify round trip is bit exact for every modality shape") {
  Rng rng(12);
  const PatchConfig p{3, 8, 8, 4};
  for (auto m : {Modality::XRay, Modality::Ultrasound, Modality::Endoscopy, Modality::CT, Modality::MRI}) {
    const Shape4 sh{3, 16, 24, standard_slices(m)};
    for (int i = 0; i < 10; ++i) {
      const auto x = testing::random_tensor(sh, rng);
      CHECK(unpatchify(patchify(x, p)) == x);
    }
  }
}

TEST_CASE("single-patch input flattens to one token") {
  Rng rng(13);
  const Shape4 sh{3, 4, 4, 2};
  const auto x = testing::random_tensor(sh, rng);
  const auto t = patchify(x, PatchConfig{3, 4, 4, 2});
  REQUIRE(t.tokens.rows() == 1);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(t.tokens(0, static_cast<Eigen::Index>(i)) == x.data()[i]);
}

TEST_CASE("swapping two distinct tokens changes the reconstruction") {
  Rng rng(14);
  const auto x = testing::random_tensor({3, 4, 8, 2}, rng);
  const auto t = patchify(x, PatchConfig{3, 4, 4, 2});
  REQUIRE(t.tokens.rows() == 2);
  // All permutations of two rows: identity reproduces x, the swap does not.
  for (int first : {0, 1}) {
    TokenSequence p = t;
    p.tokens.row(0) = t.tokens.row(first);
    p.tokens.row(1) = t.tokens.row(1 - first);
    CHECK((unpatchify(p) == x) == (first == 0));
  }
}

TEST_CASE("unpatchify rejects inconsistent grids") {
  Rng rng(15);
  auto t = patchify(testing::random_tensor({3, 8, 8, 4}, rng), PatchConfig{3, 4, 4, 4});
  t.grid.n_h = 3;
  CHECK_THROWS_AS(unpatchify(t), ShapeError);
}

namespace {

const char* kManifest =
    "# regions: liver,lung\n"
    "# ks: 1,5\n"
    "a\tsamples/a.bin\tct\tc0,c1\tthorax\tliver=abnormal;lung=normal\tliver:20:hypodense\n"
    "b\t-\txray\tc1\tCHEST\n"
    "c\t/abs/c.bin\tmri\t-\t-\t-\tnone\n";

Manifest parse(const std::string& text, const std::filesystem::path& base = {}) {
  std::istringstream in(text);
  return parse_manifest(in, base);
}

int manifest_error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const ManifestError& e) {
    return e.line();
  }
  return -1;
}

}  // namespace

TEST_CASE("manifest parses records in file order") {
  const auto m = parse(kManifest, "/base");
  CHECK(m.regions == std::vector<std::string>{"liver", "lung"});
  CHECK(m.ks == std::vector<int>{1, 5});
  REQUIRE(m.records.size() == 3);
  CHECK(m.records[0].sample_id == "a");
  CHECK(m.records[1].sample_id == "b");
  CHECK(m.records[2].sample_id == "c");
  CHECK(m.records[0].path == std::filesystem::path("/base/samples/a.bin"));
  CHECK(m.records[1].path.empty());
  CHECK(m.records[2].path == std::filesystem::path("/abs/c.bin"));
  CHECK(m.records[0].modality == Modality::CT);
  CHECK(m.records[0].labels.categories == std::set<std::string>{"c0", "c1"});
  CHECK(m.records[0].labels.body_part == "thorax");
  REQUIRE(m.records[0].labels.region_status.has_value());
  CHECK(m.records[0].labels.region_status->at("liver") == RegionStatus::Abnormal);
  REQUIRE(m.records[0].labels.lesions.has_value());
  CHECK(*m.records[0].labels.lesions == std::set<Lesion>{{"liver", 20, "hypodense"}});
  CHECK_FALSE(m.records[1].labels.region_status.has_value());
  CHECK(m.records[2].labels.categories.empty());
  REQUIRE(m.records[2].labels.lesions.has_value());
  CHECK(m.records[2].labels.lesions->empty());
}

TEST_CASE("manifest errors carry line numbers") {
  CHECK(manifest_error_line("a\tp\tpet\n") == 1);
  CHECK(manifest_error_line("a\tp\tct\nb\tp\txray\na\tp\tct\n") == 3);
  CHECK(manifest_error_line("# regions: liver\na\tp\tct\t-\t-\tkidney=normal\n") == 2);
  CHECK(manifest_error_line("# regions: liver\na\tp\tct\t-\t-\tliver=sick\n") == 2);
  CHECK(manifest_error_line("# regions: liver\na\tp\tct\t-\t-\t-\tliver:0:x\n") == 2);
  CHECK(manifest_error_line("a\tp\n") == 1);
  CHECK(manifest_error_line("# ks: 1,zero\n") == 1);
}

TEST_CASE("manifest write then parse is lossless") {
  testing::TempDir dir("manifest");
  const auto m = parse(kManifest, dir.path());
  save_manifest(dir / "m.tsv", m);
  const auto back = load_manifest(dir / "m.tsv");
  CHECK(back.regions == m.regions);
  CHECK(back.ks == m.ks);
  REQUIRE(back.records.size() == m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    CHECK(back.records[i].sample_id == m.records[i].sample_id);
    CHECK(back.records[i].path == m.records[i].path);
    CHECK(back.records[i].modality == m.records[i].modality);
    CHECK(back.records[i].labels == m.records[i].labels);
  }
  CHECK_THROWS_AS(load_manifest(dir / "missing.tsv"), ManifestError);
}

TEST_CASE("sample files round trip and reject truncation") {
  testing::TempDir dir("sample");
  Rng rng(16);
  const auto x = testing::random_tensor({3, 5, 6, 4}, rng);
  write_sample_file(dir / "x.bin", x);
  CHECK(read_sample_file(dir / "x.bin") == x);
  CHECK(read_sample_shape(dir / "x.bin") == x.shape());
  {
    std::ofstream out(dir / "short.bin", std::ios::binary);
    const std::int32_t hdr[4] = {3, 5, 6, 4};
    out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
  }
  CHECK_THROWS_AS(read_sample_file(dir / "short.bin"), IoError);
  CHECK_THROWS_AS(read_sample_file(dir / "absent.bin"), IoError);
}
