#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "augment.hpp"
#include "error.hpp"
#include "numerics.hpp"
#include "optim.hpp"
#include "simdino.hpp"
#include "test_support.hpp"

using namespace medssl;

namespace {

std::vector<ViewEmbedding> globals_from(const std::vector<Vector>& per_sample) {
  std::vector<ViewEmbedding> v;
  for (std::size_t i = 0; i < per_sample.size(); ++i)
    for (int g = 0; g < 2; ++g) v.push_back({per_sample[i], ViewOrigin::Global, g, static_cast<int>(i)});
  return v;
}

// Independent reference: explicit pair enumeration, eigenvalue log-det.
double naive_loss(const std::vector<ViewEmbedding>& s, const std::vector<ViewEmbedding>& t, const SimdinoConfig& cfg) {
  auto prep = [&](const Vector& z) { return cfg.normalize ? Vector(z / z.norm()) : z; };
  double align = 0.0;
  int pairs = 0;
  for (const auto& a : s)
    for (const auto& b : t) {
      if (a.sample_index != b.sample_index) continue;
      if (a.origin == ViewOrigin::Global && a.view_index == b.view_index) continue;
      const Vector d = prep(a.z) - prep(b.z);
      double sq = 0.0;
      for (Eigen::Index k = 0; k < d.size(); ++k) sq += d(k) * d(k);
      align += 0.5 * sq;
      ++pairs;
    }
  align /= pairs;
  std::vector<Vector> rows;
  for (const auto& a : s)
    if (cfg.covariance_views == CovarianceViews::All || a.origin == ViewOrigin::Global) rows.push_back(prep(a.z));
  const Eigen::Index d = rows.front().size();
  Vector mean = Vector::Zero(d);
  for (const auto& r : rows) mean += r;
  mean /= static_cast<double>(rows.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& r : rows) cov += (r - mean) * (r - mean).transpose();
  cov /= static_cast<double>(rows.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  const double scale = static_cast<double>(d) / (cfg.epsilon * cfg.epsilon);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) logdet += std::log1p(scale * es.eigenvalues()(i));
  return align - 0.5 * logdet;
}

void random_views(Rng& rng, int samples, int locals, int d, std::vector<ViewEmbedding>& s,
                  std::vector<ViewEmbedding>& t) {
  s.clear();
  t.clear();
  auto rv = [&] {
    Vector v(d);
    for (int k = 0; k < d; ++k) v(k) = rng.uniform(-1, 1);
    return v;
  };
  for (int i = 0; i < samples; ++i) {
    for (int g = 0; g < 2; ++g) s.push_back({rv(), ViewOrigin::Global, g, i});
    for (int l = 0; l < locals; ++l) s.push_back({rv(), ViewOrigin::Local, l, i});
    for (int g = 0; g < 2; ++g) t.push_back({rv(), ViewOrigin::Global, g, i});
  }
}

ModelConfig tiny_student() {
  ModelConfig c;
  c.objective = Objective::SimDINO;
  c.encoder.patch = {3, 2, 2, 2};
  c.encoder.embed_dim = 8;
  c.encoder.depth = 1;
  c.encoder.heads = 2;
  c.encoder.mlp_ratio = 2.0;
  c.encoder.use_cls_token = true;
  c.encoder.max_tokens = 8;
  c.head.hidden = 8;
  c.head.out = 4;
  return c;
}

}  // namespace

TEST_CASE("aligned constant batch has zero loss") {
  Vector z(3);
  z << 0.2, -1.0, 0.5;
  const auto s = globals_from({z, z, z});
  const auto l = simdino_loss(s, s, SimdinoConfig{});
  CHECK(l.alignment == 0.0);
  CHECK(l.coding_rate == 0.0);
  CHECK(l.total == 0.0);
}

TEST_CASE("coding-rate term on a quarter identity covariance") {
  std::vector<Vector> zs;
  for (int i = 0; i < 4; ++i)
    for (double sign : {1.0, -1.0}) zs.push_back(sign * Vector::Unit(4, i));
  const auto s = globals_from(zs);
  const Matrix gamma = [&] {
    Matrix b(static_cast<Eigen::Index>(s.size()), 4);
    for (std::size_t i = 0; i < s.size(); ++i) b.row(static_cast<Eigen::Index>(i)) = s[i].z.transpose();
    return covariance(b);
  }();
  CHECK(gamma.isApprox(0.25 * Matrix::Identity(4, 4), 1e-15));
  const auto l = simdino_loss(s, s, SimdinoConfig{});
  CHECK(l.alignment == 0.0);
  CHECK(std::abs(l.coding_rate + 2.0 * std::log(5.0)) <= 1e-9);
  CHECK(std::abs(l.total + 2.0 * std::log(5.0)) <= 1e-9);
}

TEST_CASE("loss matches the naive reference") {
  Rng rng(1);
  std::vector<ViewEmbedding> s, t;
  for (int trial = 0; trial < 20; ++trial) {
    SimdinoConfig cfg;
    cfg.normalize = trial % 2 == 1;
    cfg.covariance_views = trial % 4 >= 2 ? CovarianceViews::All : CovarianceViews::Globals;
    cfg.epsilon = rng.uniform(0.3, 1.0);
    random_views(rng, 2 + trial % 3, trial % 5, 3 + trial % 4, s, t);
    const auto l = simdino_loss(s, t, cfg);
    CHECK(std::abs(l.total - naive_loss(s, t, cfg)) <= 1e-10);
    CHECK(l.coding_rate <= 0.0);
  }
}

TEST_CASE("pair count excludes same-crop global pairs") {
  Rng rng(2);
  std::vector<ViewEmbedding> s, t;
  random_views(rng, 3, 4, 5, s, t);
  // Per sample: 2 globals x 1 other teacher global + 4 locals x 2.
  CHECK(simdino_loss(s, t, SimdinoConfig{}).pairs == 3 * (2 + 8));
}

TEST_CASE("loss gradient with respect to embeddings matches finite differences") {
  Rng rng(3);
  std::vector<ViewEmbedding> s, t;
  for (bool normalize : {false, true}) {
    for (auto views : {CovarianceViews::Globals, CovarianceViews::All}) {
      random_views(rng, 3, 2, 4, s, t);
      SimdinoConfig cfg;
      cfg.normalize = normalize;
      cfg.covariance_views = views;
      std::vector<Vector> grad;
      simdino_loss(s, t, cfg, &grad);
      std::vector<double> flat, analytic;
      for (std::size_t i = 0; i < s.size(); ++i)
        for (Eigen::Index k = 0; k < s[i].z.size(); ++k) {
          flat.push_back(s[i].z(k));
          analytic.push_back(grad[i](k));
        }
      auto f = [&](std::span<const double> v) {
        auto copy = s;
        std::size_t at = 0;
        for (auto& e : copy)
          for (Eigen::Index k = 0; k < e.z.size(); ++k) e.z(k) = v[at++];
        return simdino_loss(copy, t, cfg).total;
      };
      CHECK(grad_check(f, flat, analytic) <= 1e-7);
    }
  }
}

TEST_CASE("coding-rate term decreases as the batch spreads") {
  Rng rng(4);
  std::vector<ViewEmbedding> s, t;
  random_views(rng, 4, 0, 3, s, t);
  double prev = 1.0;
  for (double k : {0.01, 0.1, 0.5, 1.0, 3.0}) {
    auto scaled = s;
    for (auto& e : scaled) e.z *= k;
    const double cr = simdino_loss(scaled, t, SimdinoConfig{}).coding_rate;
    CHECK(cr <= 0.0);
    CHECK(cr < prev);
    prev = cr;
  }
}

TEST_CASE("loss input validation") {
  Rng rng(5);
  std::vector<ViewEmbedding> s, t;
  random_views(rng, 2, 1, 3, s, t);
  t[0].z = Vector::Zero(4);
  CHECK_THROWS_AS(simdino_loss(s, t, SimdinoConfig{}), ShapeError);
  CHECK_THROWS_AS(simdino_loss({}, t, SimdinoConfig{}), InvalidInput);
  SimdinoConfig bad;
  bad.momentum_start = 0.9999;
  bad.momentum_end = 0.99;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("momentum schedule") {
  CHECK(momentum_schedule(0, 100) == 0.996);
  CHECK(momentum_schedule(100, 100) == 1.0);
  CHECK(momentum_schedule(50, 100) == doctest::Approx(0.998).epsilon(1e-15));
  double prev = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double m = momentum_schedule(i, 1000);
    CHECK(m >= prev);
    CHECK(m >= 0.996);
    CHECK(m <= 1.0);
    prev = m;
  }
  CHECK_THROWS_AS(momentum_schedule(0, 0), ConfigError);
}

TEST_CASE("EMA update arithmetic") {
  auto cfg = tiny_student();
  auto teacher = build_model(cfg), student = build_model(cfg);
  std::fill(teacher.params.values().begin(), teacher.params.values().end(), 2.0);
  std::fill(student.params.values().begin(), student.params.values().end(), 4.0);
  auto t = teacher;
  ema_update(t, student, 1.0);
  CHECK(t.params.values() == teacher.params.values());
  t = teacher;
  ema_update(t, student, 0.0);
  CHECK(t.params.values() == student.params.values());
  t = teacher;
  ema_update(t, student, 0.5);
  for (double v : t.params.values()) CHECK(v == 3.0);
  Rng rng(6);
  auto a = init_model(cfg, 1), b = init_model(cfg, 2);
  auto c = a;
  ema_update(c, b, 0.3);
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    CHECK(c.params.values()[i] >= std::min(a.params.values()[i], b.params.values()[i]));
    CHECK(c.params.values()[i] <= std::max(a.params.values()[i], b.params.values()[i]));
  }
  auto other = cfg;
  other.head.out = 6;
  auto mismatch = build_model(other);
  CHECK_THROWS_AS(ema_update(mismatch, student, 0.5), ShapeError);
}

TEST_CASE("objective gradient through head and encoder matches finite differences") {
  Rng rng(7);
  const auto cfg = tiny_student();
  auto student = init_model(cfg, 1);
  for (auto& v : student.params.values()) v += rng.uniform(-0.2, 0.2);
  auto teacher = init_model(cfg, 2);
  std::vector<SampleViews> batch;
  for (int i = 0; i < 3; ++i) {
    SampleViews v;
    for (int g = 0; g < 2; ++g) v.globals.push_back(patchify(testing::random_tensor({3, 4, 4, 4}, rng), cfg.encoder.patch));
    v.locals.push_back(patchify(testing::random_tensor({3, 2, 2, 2}, rng), cfg.encoder.patch));
    batch.push_back(std::move(v));
  }
  for (bool normalize : {false, true}) {
    SimdinoConfig sc;
    sc.normalize = normalize;
    Gradients g(student.params);
    simdino_objective(student, teacher, batch, sc, &g);
    std::vector<double> params = student.params.values();
    auto f = [&](std::span<const double> v) {
      Model copy = student;
      std::copy(v.begin(), v.end(), copy.params.values().begin());
      return simdino_objective(copy, teacher, batch, sc, nullptr).total;
    };
    CHECK(grad_check(f, params, g.values()) <= 1e-6);
  }
}

TEST_CASE("train step: first step is a fixed point and the teacher only moves by EMA") {
  Rng data(8);
  auto cfg = tiny_student();
  cfg.encoder.patch = {3, 4, 4, 4};
  std::vector<Sample4D> batch;
  for (int i = 0; i < 3; ++i) {
    Sample4D s;
    s.data = testing::random_tensor({3, 8, 8, 4}, data);
    s.modality = Modality::XRay;
    batch.push_back(s);
  }
  AugmentConfig aug = AugmentConfig::defaults_for(Modality::XRay);
  aug.n_local = 2;
  aug.local_out = {4, 4, 0};
  const auto sched = LrSchedule::with_warmup_fraction(20, 1e-3, 0.1);

  auto student = init_model(cfg, 3);
  auto teacher = student;
  OptimizerState opt;
  Rng rng(9);
  const auto init = student.params.values();
  const auto st0 = simdino_train_step(student, teacher, batch, aug, SimdinoConfig{}, opt, AdamWConfig{}, sched, 0, rng);
  CHECK(st0.lr == 0.0);
  CHECK(st0.momentum == 0.996);
  CHECK(student.params.values() == init);
  CHECK(teacher.params.values() == init);

  const auto teacher_before = teacher.params.values();
  const auto st1 = simdino_train_step(student, teacher, batch, aug, SimdinoConfig{}, opt, AdamWConfig{}, sched, 1, rng);
  CHECK(student.params.values() != init);
  for (std::size_t i = 0; i < teacher_before.size(); ++i) {
    const double expected = teacher_before[i] + (1.0 - st1.momentum) * (student.params.values()[i] - teacher_before[i]);
    CHECK(teacher.params.values()[i] == expected);
  }

  auto mixed = batch;
  mixed[1].modality = Modality::Ultrasound;
  CHECK_THROWS_AS(simdino_train_step(student, teacher, mixed, aug, SimdinoConfig{}, opt, AdamWConfig{}, sched, 2, rng),
                  InvalidInput);
}

TEST_CASE("train step replay is deterministic") {
  Rng data(10);
  auto cfg = tiny_student();
  cfg.encoder.patch = {3, 4, 4, 4};
  std::vector<Sample4D> batch;
  for (int i = 0; i < 2; ++i) {
    Sample4D s;
    s.data = testing::random_tensor({3, 8, 8, 8}, data);
    s.modality = Modality::CT;
    batch.push_back(s);
  }
  AugmentConfig aug = AugmentConfig::defaults_for(Modality::CT);
  aug.local_out = {4, 4, 4};
  auto run = [&] {
    auto student = init_model(cfg, 4);
    auto teacher = student;
    OptimizerState opt;
    Rng rng(11);
    const auto sched = LrSchedule::with_warmup_fraction(5, 1e-3, 0.2);
    for (int s = 0; s < 5; ++s)
      simdino_train_step(student, teacher, batch, aug, SimdinoConfig{}, opt, AdamWConfig{}, sched, s, rng);
    return std::make_pair(student.params.values(), teacher.params.values());
  };
  CHECK(run() == run());
}

TEST_CASE("retrieval embeddings") {
  Rng data(12);
  Sample4D x;
  x.data = testing::random_tensor({3, 4, 4, 4}, data);
  const auto sd = init_model(tiny_student(), 5);
  const Vector e1 = retrieval_embedding(sd, x, sd.config.encoder.patch, Objective::SimDINO);
  CHECK(e1.size() == 16);
  CHECK(e1 == retrieval_embedding(sd, x, sd.config.encoder.patch, Objective::SimDINO));
  auto mcfg = tiny_student();
  mcfg.objective = Objective::MAE;
  mcfg.encoder.use_cls_token = false;
  const auto mae = init_model(mcfg, 6);
  CHECK(retrieval_embedding(mae, x, mae.config.encoder.patch, Objective::MAE).size() == 8);
}
