#include "simdino.hpp"

#include <cmath>

#include "error.hpp"
#include "numerics.hpp"

namespace medssl {

void SimdinoConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(momentum_start > 0.0 && momentum_start <= momentum_end && momentum_end <= 1.0))
    throw ConfigError("momentum must satisfy 0 < start <= end <= 1");
}

SimdinoLoss simdino_loss(const std::vector<ViewEmbedding>& student, const std::vector<ViewEmbedding>& teacher,
                         const SimdinoConfig& cfg, std::vector<Vector>* grad) {
  cfg.validate();
  if (student.empty() || teacher.empty()) throw InvalidInput("simdino loss needs student and teacher views");
  const Eigen::Index d = student.front().z.size();
  for (const auto& v : student)
    if (v.z.size() != d) throw ShapeError("student embedding dimensions differ");
  for (const auto& v : teacher)
    if (v.z.size() != d) throw ShapeError("teacher embedding dimension differs from the student's");

  auto prep = [&](const Vector& z) -> Vector {
    if (!cfg.normalize) return z;
    const double n = z.norm();
    if (n == 0.0) throw NumericalError("cannot normalize a zero embedding");
    return z / n;
  };
  std::vector<Vector> zs;
  zs.reserve(student.size());
  for (const auto& v : student) zs.push_back(prep(v.z));
  std::vector<Vector> zt;
  zt.reserve(teacher.size());
  for (const auto& v : teacher) zt.push_back(prep(v.z));

  std::vector<Vector> dz(student.size(), Vector::Zero(d));
  SimdinoLoss out;
  for (std::size_t i = 0; i < student.size(); ++i) {
    for (std::size_t j = 0; j < teacher.size(); ++j) {
      if (teacher[j].sample_index != student[i].sample_index) continue;
      if (student[i].origin == ViewOrigin::Global && student[i].view_index == teacher[j].view_index) continue;
      out.alignment += 0.5 * (zs[i] - zt[j]).squaredNorm();
      ++out.pairs;
    }
  }
  if (out.pairs == 0) throw InvalidInput("no student/teacher pairs to align");
  const double inv_pairs = 1.0 / out.pairs;
  out.alignment *= inv_pairs;
  if (grad) {
    for (std::size_t i = 0; i < student.size(); ++i)
      for (std::size_t j = 0; j < teacher.size(); ++j) {
        if (teacher[j].sample_index != student[i].sample_index) continue;
        if (student[i].origin == ViewOrigin::Global && student[i].view_index == teacher[j].view_index) continue;
        dz[i] += (zs[i] - zt[j]) * inv_pairs;
      }
  }

  std::vector<std::size_t> cov_rows;
  for (std::size_t i = 0; i < student.size(); ++i)
    if (cfg.covariance_views == CovarianceViews::All || student[i].origin == ViewOrigin::Global) cov_rows.push_back(i);
  if (!cov_rows.empty()) {
    Matrix batch(static_cast<Eigen::Index>(cov_rows.size()), d);
    for (std::size_t r = 0; r < cov_rows.size(); ++r) batch.row(static_cast<Eigen::Index>(r)) = zs[cov_rows[r]].transpose();
    const Matrix gamma = covariance(batch);
    const double scale = static_cast<double>(d) / (cfg.epsilon * cfg.epsilon);
    out.coding_rate = -0.5 * logdet_psd(gamma, scale);
    out.covariance_trace = gamma.trace();
    if (grad) {
      // d/dz_r of -1/2 logdet(I + s Gamma) = -(s/B) (I + s Gamma)^{-1} (z_r - mean)
      const Matrix inv = shifted_inverse(gamma, scale);
      const RowVector mean = batch.colwise().mean();
      const double coef = -scale / static_cast<double>(cov_rows.size());
      for (std::size_t r = 0; r < cov_rows.size(); ++r)
        dz[cov_rows[r]] += coef * inv * (batch.row(static_cast<Eigen::Index>(r)) - mean).transpose();
    }
  }
  out.total = out.alignment + out.coding_rate;

  if (grad) {
    if (cfg.normalize) {
      for (std::size_t i = 0; i < student.size(); ++i) {
        const double n = student[i].z.norm();
        dz[i] = (dz[i] - zs[i] * zs[i].dot(dz[i])) / n;
      }
    }
    *grad = std::move(dz);
  }
  return out;
}

double momentum_schedule(int step, int total, double start, double end) {
  if (total <= 0) throw ConfigError("momentum schedule needs total > 0");
  if (step < 0 || step > total) throw ConfigError("momentum schedule step out of range");
  if (step == 0) return start;
  if (step == total) return end;
  return end - (end - start) * (std::cos(M_PI * step / total) + 1.0) / 2.0;
}

void ema_update(Model& teacher, const Model& student, double m) {
  if (!teacher.params.same_layout(student.params)) throw ShapeError("teacher and student architectures differ");
  if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("EMA momentum must lie in [0,1]");
  auto& t = teacher.params.values();
  const auto& s = student.params.values();
  if (m == 1.0) return;
  if (m == 0.0) {
    t = s;
    return;
  }
  // Written as a correction so identical parameters stay bit-identical.
  const double k = 1.0 - m;
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += k * (s[i] - t[i]);
}

SampleViews prepare_views(const AugmentedViews& views, const PatchConfig& patch) {
  SampleViews out;
  for (const auto& v : views.globals) out.globals.push_back(patchify(v, patch));
  for (const auto& v : views.locals) out.locals.push_back(patchify(v, patch));
  return out;
}

namespace {

std::vector<int> iota_positions(Eigen::Index n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<int>(i);
  return p;
}

struct StudentPass {
  EncoderCache encoder;
  HeadCache head;
  Eigen::Index rows = 0;
};

Vector cls_embedding(const Model& m, const TokenSequence& t, StudentPass* pass) {
  const auto positions = iota_positions(t.tokens.rows());
  const Matrix reps = encoder_forward(m, t.tokens, positions, pass ? &pass->encoder : nullptr);
  if (pass) pass->rows = reps.rows();
  const Matrix z = head_forward(m, reps.topRows(1), pass ? &pass->head : nullptr);
  return z.row(0).transpose();
}

}  // namespace

SimdinoLoss simdino_objective(const Model& student, const Model& teacher, const std::vector<SampleViews>& batch,
                              const SimdinoConfig& cfg, Gradients* g) {
  if (!student.config.encoder.use_cls_token) throw ConfigError("student has no cls token");
  if (!teacher.params.same_layout(student.params)) throw ShapeError("teacher and student architectures differ");
  std::vector<ViewEmbedding> s_views;
  std::vector<ViewEmbedding> t_views;
  std::vector<StudentPass> passes;
  const bool need_cache = g != nullptr;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int sample = static_cast<int>(i);
    const auto& views = batch[i];
    if (views.globals.size() != 2) throw InvalidInput("each sample needs exactly two global views");
    auto add_student = [&](const TokenSequence& t, ViewOrigin origin, int idx) {
      StudentPass pass;
      Vector z = cls_embedding(student, t, need_cache ? &pass : nullptr);
      s_views.push_back({std::move(z), origin, idx, sample});
      if (need_cache) passes.push_back(std::move(pass));
    };
    for (int v = 0; v < 2; ++v) add_student(views.globals[static_cast<std::size_t>(v)], ViewOrigin::Global, v);
    for (std::size_t v = 0; v < views.locals.size(); ++v) add_student(views.locals[v], ViewOrigin::Local, static_cast<int>(v));
    for (int v = 0; v < 2; ++v)
      t_views.push_back({cls_embedding(teacher, views.globals[static_cast<std::size_t>(v)], nullptr), ViewOrigin::Global, v, sample});
  }

  std::vector<Vector> dz;
  SimdinoLoss loss = simdino_loss(s_views, t_views, cfg, g ? &dz : nullptr);
  if (g) {
    for (std::size_t i = 0; i < passes.size(); ++i) {
      const Matrix d_cls = head_backward(student, passes[i].head, dz[i].transpose(), *g);
      Matrix d_out = Matrix::Zero(passes[i].rows, student.config.encoder.embed_dim);
      d_out.row(0) = d_cls.row(0);
      encoder_backward(student, passes[i].encoder, d_out, *g);
    }
  }
  return loss;
}

SimdinoStepStats simdino_train_step(Model& student, Model& teacher, const std::vector<Sample4D>& batch,
                                    const AugmentConfig& aug, const SimdinoConfig& cfg, OptimizerState& opt,
                                    const AdamWConfig& adamw, const LrSchedule& schedule, int step, Rng& rng) {
  if (batch.empty()) throw InvalidInput("empty batch");
  const Modality modality = batch.front().modality;
  for (const auto& s : batch)
    if (s.modality != modality) throw InvalidInput("a training batch must hold a single modality");
  std::vector<SampleViews> views;
  views.reserve(batch.size());
  for (const auto& s : batch) views.push_back(prepare_views(augment_sample(s, aug, rng), student.config.encoder.patch));

  Gradients g(student.params);
  SimdinoStepStats stats;
  stats.loss = simdino_objective(student, teacher, views, cfg, &g);
  if (!std::isfinite(stats.loss.total)) throw NumericalError("non-finite self-distillation loss at step " + std::to_string(step));
  stats.lr = lr_at(schedule, step);
  stats.momentum = momentum_schedule(step, schedule.total_steps, cfg.momentum_start, cfg.momentum_end);
  adamw_step(student.params, g, opt, stats.lr, adamw);
  ema_update(teacher, student, stats.momentum);
  return stats;
}

Vector embed_sample(const Model& m, const Sample4D& x, PoolStrategy strategy) {
  const TokenSequence t = patchify(x.data, m.config.encoder.patch);
  return pool(forward(m, t), strategy, m.config.encoder.use_cls_token);
}

Vector retrieval_embedding(const Model& m, const Sample4D& x, const PatchConfig& patch, Objective objective) {
  if (!(patch == m.config.encoder.patch)) throw ShapeError("patch configuration differs from the model's");
  switch (objective) {
    case Objective::MAE:
    case Objective::Backbone:
      return embed_sample(m, x, PoolStrategy::Avg);
    case Objective::SimDINO:
      return embed_sample(m, x, PoolStrategy::Mix);
  }
  return {};
}

}  // namespace medssl
