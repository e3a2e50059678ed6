#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <numeric>
#include <sstream>

#include "error.hpp"
#include "strings.hpp"

namespace medssl {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// pretrain

std::vector<Modality> training_modalities(const Manifest& m, const std::vector<Modality>& holdout) {
  std::vector<Modality> out;
  for (Modality mod : kAllModalities) {
    if (mod == Modality::MRI) continue;
    if (std::find(holdout.begin(), holdout.end(), mod) != holdout.end()) continue;
    const bool present = std::any_of(m.records.begin(), m.records.end(), [&](const auto& r) { return r.modality == mod; });
    if (present) out.push_back(mod);
  }
  return out;
}

std::vector<std::vector<int>> training_pools(const Manifest& m, const std::vector<Modality>& modalities,
                                             double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("data fraction must lie in (0, 1]");
  std::vector<std::vector<int>> pools;
  for (std::size_t k = 0; k < modalities.size(); ++k) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < m.records.size(); ++i)
      if (m.records[i].modality == modalities[k]) idx.push_back(static_cast<int>(i));
    // Fisher-Yates with the library generator; one stream per modality.
    Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(modalities[k]) + 1)));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * idx.size())));
    idx.resize(std::min(keep, idx.size()));
    std::sort(idx.begin(), idx.end());
    pools.push_back(std::move(idx));
  }
  return pools;
}

ViewExtent default_local_extent(const Shape4& shape, const PatchConfig& p, Modality m) {
  auto fit = [](int extent, double frac, int patch) {
    const int n = static_cast<int>(std::floor(frac * extent / patch));
    return std::max(1, n) * patch;
  };
  ViewExtent v{fit(shape.h, 0.375, p.h_p), fit(shape.w, 0.375, p.w_p), 0};
  if (is_volumetric(m)) v.s = fit(shape.s, 0.5, p.s_p);
  return v;
}

int max_token_count(const Manifest& m, const PatchConfig& patch) {
  int best = 0;
  for (const auto& r : m.records) {
    if (r.path.empty()) continue;
    best = std::max(best, patch.token_count(read_sample_shape(r.path)));
  }
  if (best == 0) throw InvalidInput("manifest has no sample files");
  return best;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

class SampleSource {
 public:
  SampleSource(const Manifest& m, const std::vector<std::vector<int>>& pools) : manifest_(m) {
    std::size_t bytes = 0;
    for (const auto& pool : pools)
      for (int i : pool) bytes += read_sample_shape(m.records[static_cast<std::size_t>(i)].path).size() * sizeof(double);
    cache_all_ = bytes <= (std::size_t{512} << 20);
  }

  Sample4D get(int index) {
    if (!cache_all_) return load_sample(manifest_.records[static_cast<std::size_t>(index)]);
    auto it = cache_.find(index);
    if (it == cache_.end()) it = cache_.emplace(index, load_sample(manifest_.records[static_cast<std::size_t>(index)])).first;
    return it->second;
  }

 private:
  const Manifest& manifest_;
  bool cache_all_ = false;
  std::map<int, Sample4D> cache_;
};

void write_diagnostic(const fs::path& path, int step, Modality mod, const std::string& what, const Model& model,
                      const std::deque<double>& recent) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["modality"] = std::string(to_tag(mod));
  j["error"] = what;
  j["recent_losses"] = std::vector<double>(recent.begin(), recent.end());
  nlohmann::ordered_json norms = nlohmann::ordered_json::object();
  for (std::size_t b = 0; b < model.params.blocks().size(); ++b) {
    const auto block = model.params.matrix(static_cast<int>(b));
    const double n = block.norm();
    norms[model.params.block(static_cast<int>(b)).name] = std::isfinite(n) ? nlohmann::ordered_json(n) : nlohmann::ordered_json("non-finite");
  }
  j["parameter_norms"] = norms;
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

}  // namespace

PretrainResult pretrain(const PretrainOptions& opt) {
  if (opt.objective == Objective::Backbone) throw ConfigError("pretraining needs the mae or simdino objective");
  if (opt.steps < 0) throw ConfigError("steps must be non-negative");
  if (opt.batch_size < 1) throw ConfigError("batch size must be positive");
  if (opt.checkpoint_every < 0) throw ConfigError("checkpoint interval must be non-negative");

  const Manifest manifest = load_manifest(opt.manifest);
  const auto modalities = training_modalities(manifest, opt.holdout);
  if (modalities.empty()) throw ConfigError("no trainable modality in the manifest (MRI is never used for pretraining)");
  const auto pools = training_pools(manifest, modalities, opt.data_fraction, opt.seed);

  ModelConfig cfg;
  cfg.objective = opt.objective;
  cfg.encoder = opt.encoder;
  cfg.encoder.use_cls_token = opt.objective == Objective::SimDINO;
  if (cfg.encoder.max_tokens <= 0) cfg.encoder.max_tokens = max_token_count(manifest, cfg.encoder.patch);
  cfg.decoder = opt.decoder;
  cfg.head = opt.head;
  cfg.projection_head = opt.projection_head;
  cfg.validate();
  opt.simdino.validate();

  fs::create_directories(opt.out_dir);
  Model model = init_model(cfg, opt.seed);
  std::optional<Model> teacher;
  if (opt.objective == Objective::SimDINO) teacher = model;

  PretrainResult result;
  result.modalities = modalities;
  result.parameters = model.parameter_count();
  result.log = opt.out_dir / "train_log.csv";
  result.checkpoint = opt.out_dir / "model.ckpt";

  std::ofstream log(result.log, std::ios::binary);
  if (!log) throw IoError("cannot write " + result.log.string());
  if (opt.objective == Objective::MAE)
    log << "step,modality,loss,lr,masked,tokens\n";
  else
    log << "step,modality,loss,lr,momentum,coding_rate_term,alignment_term,covariance_trace\n";
  log.flush();

  const LrSchedule schedule = LrSchedule::with_warmup_fraction(std::max(opt.steps, 1), opt.lr, opt.warmup_fraction);
  OptimizerState state;
  Rng rng(opt.seed + 1);
  SampleSource source(manifest, pools);
  std::deque<double> recent;

  for (int step = 0; step < opt.steps; ++step) {
    const std::size_t slot = static_cast<std::size_t>(step) % modalities.size();
    const Modality mod = modalities[slot];
    const auto& pool = pools[slot];
    const int take = std::min<int>(opt.batch_size, static_cast<int>(pool.size()));
    std::vector<Sample4D> batch;
    for (int i : rng.sample_sorted(static_cast<int>(pool.size()), take)) batch.push_back(source.get(pool[static_cast<std::size_t>(i)]));

    try {
      double loss = 0.0;
      if (opt.objective == Objective::MAE) {
        std::vector<TokenSequence> tokens;
        for (const auto& s : batch) tokens.push_back(patchify(s.data, cfg.encoder.patch));
        const auto st = mae_train_step(model, tokens, state, opt.adamw, schedule, step, opt.mask, rng);
        loss = st.loss;
        log << step << ',' << to_tag(mod) << ',' << fmt(st.loss) << ',' << fmt(st.lr) << ',' << st.masked << ','
            << st.tokens << '\n';
      } else {
        AugmentConfig aug = AugmentConfig::defaults_for(mod);
        if (opt.n_local >= 0) aug.n_local = opt.n_local;
        aug.global_scale = opt.global_scale;
        aug.local_scale = opt.local_scale;
        aug.local_out = opt.local_out;
        const auto derived = default_local_extent(batch.front().data.shape(), cfg.encoder.patch, mod);
        if (aug.local_out.h <= 0) aug.local_out.h = derived.h;
        if (aug.local_out.w <= 0) aug.local_out.w = derived.w;
        if (aug.local_out.s <= 0) aug.local_out.s = derived.s;
        const auto st = simdino_train_step(model, *teacher, batch, aug, opt.simdino, state, opt.adamw, schedule, step, rng);
        loss = st.loss.total;
        log << step << ',' << to_tag(mod) << ',' << fmt(st.loss.total) << ',' << fmt(st.lr) << ',' << fmt(st.momentum)
            << ',' << fmt(st.loss.coding_rate) << ',' << fmt(st.loss.alignment) << ',' << fmt(st.loss.covariance_trace) << '\n';
      }
      log.flush();
      if (step == 0) result.first_loss = loss;
      result.last_loss = loss;
      recent.push_back(loss);
      if (recent.size() > 10) recent.pop_front();
    } catch (const NumericalError& e) {
      write_diagnostic(opt.out_dir / "diagnostic.json", step, mod, e.what(), model, recent);
      throw;
    }
    result.steps = step + 1;
    if (opt.checkpoint_every > 0 && (step + 1) % opt.checkpoint_every == 0 && step + 1 < opt.steps) {
      fs::create_directories(opt.out_dir / "checkpoints");
      char name[64];
      std::snprintf(name, sizeof name, "step_%06d.ckpt", step + 1);
      save_checkpoint(opt.out_dir / "checkpoints" / name, model);
    }
  }
  save_checkpoint(result.checkpoint, model);
  return result;
}

// ---------------------------------------------------------------------------
// embed

PoolStrategy default_strategy(Objective o) { return o == Objective::SimDINO ? PoolStrategy::Mix : PoolStrategy::Avg; }

EmbedResult embed(const EmbedOptions& opt) {
  const Manifest manifest = load_manifest(opt.manifest);
  if (manifest.records.empty()) throw InvalidInput("manifest has no records");
  std::vector<EmbeddingRecord> out;
  out.reserve(manifest.records.size());
  EmbedResult res;
  if (opt.oracle) {
    for (const auto& r : manifest.records) out.push_back({r.sample_id, r.modality, oracle_embedding(r.sample_id), r.labels});
  } else {
    const Model model = load_checkpoint(opt.checkpoint);
    res.strategy = opt.strategy.value_or(default_strategy(model.config.objective));
    pooled_dim(model.config, res.strategy);  // rejects cls pooling without a cls token
    for (const auto& r : manifest.records) {
      const Sample4D s = load_sample(r);
      out.push_back({r.sample_id, r.modality, embed_sample(model, s, res.strategy), r.labels});
    }
  }
  for (const auto& e : out)
    if (!e.vector.allFinite()) throw NumericalError("non-finite embedding for " + e.sample_id);
  save_embeddings(opt.output, out, manifest.regions, manifest.ks);
  res.count = out.size();
  res.dim = static_cast<int>(out.front().vector.size());
  return res;
}

// ---------------------------------------------------------------------------
// eval

MetricsReport run_eval(const EvalOptions& opt) {
  RelevanceRule rule;
  rule.kind = opt.rule;
  rule.regional_any = opt.regional_any;
  rule.lesion_bucket_mm = opt.lesion_bucket_mm;
  if (!opt.body_part_map.empty()) rule.body_part_map = std::make_shared<BodyPartMap>(BodyPartMap::load(opt.body_part_map));
  rule.validate();

  EmbeddingSet set = load_embeddings(opt.embeddings);
  auto selected = [](const std::vector<Modality>& filter, Modality m) {
    return filter.empty() || std::find(filter.begin(), filter.end(), m) != filter.end();
  };
  std::vector<EmbeddingRecord> queries, gallery;
  for (auto& r : set.records) {
    if (opt.labeled_only && !has_required_labels(r.labels, rule)) continue;
    if (selected(opt.query_modalities, r.modality)) queries.push_back(r);
    if (selected(opt.gallery_modalities, r.modality)) gallery.push_back(std::move(r));
  }
  if (gallery.empty()) throw InvalidInput("no gallery records after filtering");
  std::vector<int> ks = opt.ks;
  if (ks.empty()) ks = set.ks;
  if (ks.empty()) ks = {1, 5, 10};
  return evaluate(queries, gallery, rule, ks);
}

// ---------------------------------------------------------------------------
// gradcheck

namespace {

Tensor4 random_tensor(Shape4 shape, Rng& rng) {
  Tensor4 t(shape);
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

}  // namespace

GradcheckReport gradcheck(const GradcheckOptions& opt) {
  if (opt.objective == Objective::Backbone) throw ConfigError("gradcheck needs the mae or simdino objective");
  if (opt.batch < 2) throw ConfigError("gradcheck batch must hold at least 2 samples");
  ModelConfig cfg;
  cfg.objective = opt.objective;
  cfg.encoder.patch = PatchConfig{3, 4, 4, 4};
  cfg.encoder.embed_dim = opt.embed_dim;
  cfg.encoder.depth = opt.depth;
  cfg.encoder.heads = opt.heads;
  cfg.encoder.mlp_ratio = 2.0;
  cfg.encoder.max_tokens = 8;
  cfg.encoder.use_cls_token = opt.objective == Objective::SimDINO;
  cfg.decoder.depth = 1;
  cfg.validate();

  Model model = init_model(cfg, opt.seed);
  if (model.parameter_count() > kGradcheckMaxParams)
    throw ConfigError("gradcheck config has " + std::to_string(model.parameter_count()) + " parameters; the limit is " +
                      std::to_string(kGradcheckMaxParams));

  Rng rng(opt.seed + 17);
  const Shape4 global_shape{3, 8, 8, 8};
  std::function<double(const Model&, Gradients*)> objective;
  std::vector<TokenSequence> tokens;
  std::vector<MaskIndices> masks;
  std::vector<SampleViews> views;
  std::optional<Model> teacher;
  SimdinoConfig scfg;
  if (opt.objective == Objective::MAE) {
    for (int i = 0; i < opt.batch; ++i) {
      tokens.push_back(patchify(random_tensor(global_shape, rng), cfg.encoder.patch));
      masks.push_back(sample_mask(static_cast<int>(tokens.back().tokens.rows()), MaskConfig{}, rng));
    }
    objective = [&](const Model& m, Gradients* g) { return mae_batch_objective(m, tokens, masks, g); };
  } else {
    for (int i = 0; i < opt.batch; ++i) {
      SampleViews v;
      for (int k = 0; k < 2; ++k) v.globals.push_back(patchify(random_tensor(global_shape, rng), cfg.encoder.patch));
      for (int k = 0; k < 2; ++k) v.locals.push_back(patchify(random_tensor({3, 4, 4, 4}, rng), cfg.encoder.patch));
      views.push_back(std::move(v));
    }
    teacher = init_model(cfg, opt.seed + 1);
    objective = [&](const Model& m, Gradients* g) { return simdino_objective(m, *teacher, views, scfg, g).total; };
  }

  Gradients g(model.params);
  objective(model, &g);
  if (opt.corrupt_gradient)
    for (double& v : g.values()) v *= 2.0;

  GradcheckReport report;
  report.objective = opt.objective;
  report.parameters = model.parameter_count();
  for (const auto& block : model.params.blocks()) {
    auto& values = model.params.values();
    std::vector<double> x(values.begin() + static_cast<std::ptrdiff_t>(block.offset),
                          values.begin() + static_cast<std::ptrdiff_t>(block.offset + block.size));
    const std::span<const double> analytic(g.values().data() + block.offset, block.size);
    const auto f = [&](std::span<const double> p) {
      std::copy(p.begin(), p.end(), values.begin() + static_cast<std::ptrdiff_t>(block.offset));
      const double v = objective(model, nullptr);
      if (!std::isfinite(v)) throw NumericalError("non-finite objective while checking " + block.name);
      return v;
    };
    const double err = grad_check(f, x, analytic, opt.h);
    std::copy(x.begin(), x.end(), values.begin() + static_cast<std::ptrdiff_t>(block.offset));
    report.blocks.push_back({block.name, block.size, err});
    report.max_error = std::max(report.max_error, err);
  }
  report.passed = report.max_error <= opt.tolerance;
  return report;
}

std::string gradcheck_to_table(const GradcheckReport& r) {
  std::size_t width = 5;
  for (const auto& b : r.blocks) width = std::max(width, b.name.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width + 2)) << "block" << std::setw(10) << "size" << "max_rel_error\n";
  for (const auto& b : r.blocks) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", b.max_error);
    out << std::left << std::setw(static_cast<int>(width + 2)) << b.name << std::setw(10) << b.size << err << "\n";
  }
  char total[32];
  std::snprintf(total, sizeof total, "%.3e", r.max_error);
  out << "objective " << to_tag(r.objective) << ", " << r.parameters << " parameters, max error " << total << ": "
      << (r.passed ? "PASS" : "FAIL") << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// scaling-fit

std::vector<std::pair<double, double>> read_scaling_points(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::pair<double, double>> pts;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line(trim(raw));
    if (line.empty() || line.front() == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::replace(line.begin(), line.end(), '\t', ' ');
    std::istringstream fields(line);
    double x = 0, y = 0;
    std::string extra;
    if (!(fields >> x >> y) || (fields >> extra))
      throw InvalidInput(path.string() + " line " + std::to_string(line_no) + ": expected two numbers");
    pts.emplace_back(x, y);
  }
  return pts;
}

ScalingReport scaling_fit(std::vector<std::pair<double, double>> points) {
  if (points.size() < 2) throw InvalidInput("a power-law fit needs at least two points");
  std::stable_sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  ScalingReport r;
  r.fit = fit_power_law(points);
  r.points = points;
  r.monotone = true;
  for (std::size_t i = 0; i < points.size(); ++i) {
    r.residuals.push_back(std::log(points[i].second) - std::log(r.fit.a * std::pow(points[i].first, r.fit.b)));
    if (i > 0 && points[i].second < points[i - 1].second) r.monotone = false;
  }
  return r;
}

std::string scaling_to_table(const ScalingReport& r) {
  std::ostringstream out;
  out << std::left << std::setw(14) << "x" << std::setw(14) << "y" << std::setw(14) << "fit" << "log_residual\n";
  char buf[4][32];
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const auto [x, y] = r.points[i];
    std::snprintf(buf[0], 32, "%.6g", x);
    std::snprintf(buf[1], 32, "%.6g", y);
    std::snprintf(buf[2], 32, "%.6g", r.fit.a * std::pow(x, r.fit.b));
    std::snprintf(buf[3], 32, "%+.3e", r.residuals[i]);
    out << std::left << std::setw(14) << buf[0] << std::setw(14) << buf[1] << std::setw(14) << buf[2] << buf[3] << "\n";
  }
  std::snprintf(buf[0], 32, "%.10g", r.fit.a);
  std::snprintf(buf[1], 32, "%.10g", r.fit.b);
  out << "y = a * x^b with a = " << buf[0] << ", b = " << buf[1] << "\n";
  out << "monotone: " << (r.monotone ? "yes" : "no") << "\n";
  return out.str();
}

std::string scaling_to_json(const ScalingReport& r) {
  nlohmann::ordered_json j;
  j["a"] = r.fit.a;
  j["b"] = r.fit.b;
  j["monotone"] = r.monotone;
  auto pts = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.points.size(); ++i)
    pts.push_back({{"x", r.points[i].first}, {"y", r.points[i].second}, {"log_residual", r.residuals[i]}});
  j["points"] = pts;
  return j.dump(2) + "\n";
}

}  // namespace medssl
