#include "medssl/medssl.h"

#include <cmath>
#include <limits>
#include <new>
#include <string>
#include <vector>

#include "error.hpp"
#include "pipeline.hpp"
#include "probe.hpp"
#include "strings.hpp"

using namespace medssl;

struct medssl_model {
  Model model;
  std::string config_json;
};

struct medssl_embeddings {
  EmbeddingSet set;
  std::vector<std::string> modality_tags;
};

struct medssl_report {
  MetricsReport report;
  std::string json;
  std::string table;
};

struct medssl_gradcheck_report {
  GradcheckReport report;
  std::string table;
};

struct medssl_scaling_report {
  ScalingReport report;
  std::string table;
  std::string json;
};

namespace {

thread_local std::string g_last_error;

medssl_status status_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidInput: return MEDSSL_INVALID_INPUT;
    case ErrorKind::Shape: return MEDSSL_SHAPE_ERROR;
    case ErrorKind::Config: return MEDSSL_CONFIG_ERROR;
    case ErrorKind::Numerical: return MEDSSL_NUMERICAL_ERROR;
    case ErrorKind::Manifest: return MEDSSL_MANIFEST_ERROR;
    case ErrorKind::Label: return MEDSSL_LABEL_ERROR;
    case ErrorKind::Io: return MEDSSL_IO_ERROR;
  }
  return MEDSSL_INTERNAL_ERROR;
}

template <class F>
medssl_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return MEDSSL_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_for(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return MEDSSL_INTERNAL_ERROR;
}

void require(const void* p, const char* what) {
  if (!p) throw InvalidInput(std::string(what) + " must not be null");
}

std::string str(const char* s) { return s ? std::string(s) : std::string(); }

std::vector<Modality> parse_modalities(const char* list) {
  std::vector<Modality> out;
  const std::string text = str(list);
  for (auto part : split(text, ',')) {
    if (trim(part).empty()) continue;
    out.push_back(parse_modality(part));
  }
  return out;
}

std::vector<std::string> parse_words(const char* list) {
  std::vector<std::string> out;
  const std::string text = str(list);
  for (auto part : split(text, ','))
    if (!trim(part).empty()) out.emplace_back(trim(part));
  return out;
}

}  // namespace

extern "C" {

const char* medssl_version(void) { return "0.1.0"; }
const char* medssl_last_error(void) { return g_last_error.c_str(); }

const char* medssl_status_name(medssl_status s) {
  switch (s) {
    case MEDSSL_OK: return "ok";
    case MEDSSL_INVALID_INPUT: return "invalid input";
    case MEDSSL_SHAPE_ERROR: return "shape error";
    case MEDSSL_CONFIG_ERROR: return "config error";
    case MEDSSL_NUMERICAL_ERROR: return "numerical error";
    case MEDSSL_MANIFEST_ERROR: return "manifest error";
    case MEDSSL_LABEL_ERROR: return "label error";
    case MEDSSL_IO_ERROR: return "i/o error";
    case MEDSSL_INTERNAL_ERROR: return "internal error";
  }
  return "unknown status";
}

int medssl_exit_code(medssl_status s) {
  if (s == MEDSSL_OK) return 0;
  if (s == MEDSSL_NUMERICAL_ERROR) return 3;
  return 2;
}

// ---- synth

void medssl_synth_options_init(medssl_synth_options* o) {
  if (!o) return;
  const SynthSpec d;
  *o = medssl_synth_options{};
  o->out_dir = ".";
  o->modalities = "xray,ct";
  o->categories = d.categories;
  o->samples_per_cell = d.samples_per_cell;
  o->body_parts = "chest,abdomen,head,pelvis";
  o->noise_level = d.noise_level;
  o->seed = d.seed;
  o->image_size = d.image_size;
}

medssl_status medssl_synth(const medssl_synth_options* o, size_t* count) {
  return guarded([&] {
    require(o, "options");
    SynthSpec spec;
    spec.modalities = parse_modalities(o->modalities);
    spec.categories = o->categories;
    spec.samples_per_cell = o->samples_per_cell;
    spec.body_parts = parse_words(o->body_parts);
    spec.noise_level = o->noise_level;
    spec.seed = o->seed;
    spec.image_size = o->image_size;
    const auto res = generate(spec, str(o->out_dir));
    if (count) *count = res.manifest.records.size();
  });
}

// ---- pretrain

void medssl_pretrain_options_init(medssl_pretrain_options* o) {
  if (!o) return;
  const PretrainOptions d;
  *o = medssl_pretrain_options{};
  o->objective = "simdino";
  o->manifest = "manifest.tsv";
  o->out_dir = ".";
  o->steps = d.steps;
  o->batch_size = d.batch_size;
  o->seed = d.seed;
  o->lr = d.lr;
  o->warmup_fraction = d.warmup_fraction;
  o->weight_decay = d.adamw.weight_decay;
  const EncoderConfig e = EncoderConfig::vit_tiny();
  o->embed_dim = e.embed_dim;
  o->depth = e.depth;
  o->heads = e.heads;
  o->mlp_ratio = e.mlp_ratio;
  o->patch[0] = e.patch.c_p;
  o->patch[1] = e.patch.h_p;
  o->patch[2] = e.patch.w_p;
  o->patch[3] = e.patch.s_p;
  o->max_tokens = 0;
  o->decoder_width = d.decoder.width;
  o->decoder_depth = d.decoder.depth;
  o->decoder_heads = d.decoder.heads;
  o->head_hidden = d.head.hidden;
  o->head_out = d.head.out;
  o->projection_head = d.projection_head ? 1 : 0;
  o->mask_ratio = d.mask.ratio;
  o->epsilon = d.simdino.epsilon;
  o->normalize = d.simdino.normalize ? 1 : 0;
  o->covariance_views = "globals";
  o->n_local = d.n_local;
  o->global_scale[0] = d.global_scale.lo;
  o->global_scale[1] = d.global_scale.hi;
  o->local_scale[0] = d.local_scale.lo;
  o->local_scale[1] = d.local_scale.hi;
  o->holdout = "";
  o->data_fraction = d.data_fraction;
  o->checkpoint_every = d.checkpoint_every;
}

medssl_status medssl_pretrain(const medssl_pretrain_options* o, medssl_pretrain_result* result) {
  return guarded([&] {
    require(o, "options");
    PretrainOptions p;
    p.objective = parse_objective(str(o->objective));
    p.manifest = str(o->manifest);
    p.out_dir = str(o->out_dir);
    p.steps = o->steps;
    p.batch_size = o->batch_size;
    p.seed = o->seed;
    p.lr = o->lr;
    p.warmup_fraction = o->warmup_fraction;
    p.adamw.weight_decay = o->weight_decay;
    p.encoder.embed_dim = o->embed_dim;
    p.encoder.depth = o->depth;
    p.encoder.heads = o->heads;
    p.encoder.mlp_ratio = o->mlp_ratio;
    p.encoder.patch = PatchConfig{o->patch[0], o->patch[1], o->patch[2], o->patch[3]};
    p.encoder.max_tokens = o->max_tokens;
    p.decoder = DecoderConfig{o->decoder_width, o->decoder_depth, o->decoder_heads, p.decoder.mlp_ratio};
    p.head = HeadConfig{o->head_hidden, o->head_out};
    p.projection_head = o->projection_head != 0;
    p.mask.ratio = o->mask_ratio;
    p.simdino.epsilon = o->epsilon;
    p.simdino.normalize = o->normalize != 0;
    const auto cov = to_lower(trim(str(o->covariance_views)));
    if (cov == "globals" || cov.empty())
      p.simdino.covariance_views = CovarianceViews::Globals;
    else if (cov == "all")
      p.simdino.covariance_views = CovarianceViews::All;
    else
      throw ConfigError("covariance views must be 'globals' or 'all'");
    p.n_local = o->n_local;
    p.global_scale = {o->global_scale[0], o->global_scale[1]};
    p.local_scale = {o->local_scale[0], o->local_scale[1]};
    p.local_out = {o->local_out[0], o->local_out[1], o->local_out[2]};
    p.holdout = parse_modalities(o->holdout);
    p.data_fraction = o->data_fraction;
    p.checkpoint_every = o->checkpoint_every;
    const auto r = pretrain(p);
    if (result) {
      result->steps = r.steps;
      result->parameters = r.parameters;
      result->first_loss = r.first_loss;
      result->last_loss = r.last_loss;
    }
  });
}

// ---- models

medssl_status medssl_model_load(const char* path, medssl_model** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    auto* h = new medssl_model{load_checkpoint(str(path)), {}};
    h->config_json = config_to_json(h->model.config);
    *out = h;
  });
}

void medssl_model_free(medssl_model* m) { delete m; }
size_t medssl_model_parameter_count(const medssl_model* m) { return m ? m->model.parameter_count() : 0; }
const char* medssl_model_config_json(const medssl_model* m) { return m ? m->config_json.c_str() : ""; }

medssl_status medssl_model_embed_file(const medssl_model* m, const char* sample_path, const char* strategy, double* out,
                                      size_t capacity, size_t* dim) {
  return guarded([&] {
    require(m, "model");
    const PoolStrategy s = strategy && *strategy ? parse_pool_strategy(strategy) : default_strategy(m->model.config.objective);
    ManifestRecord rec{"sample", str(sample_path), Modality::XRay, {}};
    const Vector v = embed_sample(m->model, load_sample(rec), s);
    if (dim) *dim = static_cast<size_t>(v.size());
    if (out)
      for (size_t i = 0; i < capacity && i < static_cast<size_t>(v.size()); ++i) out[i] = v[static_cast<Eigen::Index>(i)];
  });
}

// ---- embeddings

void medssl_embed_options_init(medssl_embed_options* o) {
  if (!o) return;
  *o = medssl_embed_options{};
  o->checkpoint = "model.ckpt";
  o->manifest = "manifest.tsv";
  o->output = "embeddings.bin";
  o->strategy = "";
  o->oracle = 0;
}

medssl_status medssl_embed(const medssl_embed_options* o, size_t* count, int* dim) {
  return guarded([&] {
    require(o, "options");
    EmbedOptions e;
    e.checkpoint = str(o->checkpoint);
    e.manifest = str(o->manifest);
    e.output = str(o->output);
    if (o->strategy && *o->strategy) e.strategy = parse_pool_strategy(o->strategy);
    e.oracle = o->oracle != 0;
    const auto r = embed(e);
    if (count) *count = r.count;
    if (dim) *dim = r.dim;
  });
}

medssl_status medssl_embeddings_load(const char* path, medssl_embeddings** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    auto* h = new medssl_embeddings{load_embeddings(str(path)), {}};
    for (const auto& r : h->set.records) h->modality_tags.emplace_back(to_tag(r.modality));
    *out = h;
  });
}

void medssl_embeddings_free(medssl_embeddings* e) { delete e; }
size_t medssl_embeddings_count(const medssl_embeddings* e) { return e ? e->set.records.size() : 0; }
int medssl_embeddings_dim(const medssl_embeddings* e) { return e ? e->set.dim : 0; }

const char* medssl_embeddings_id(const medssl_embeddings* e, size_t i) {
  return e && i < e->set.records.size() ? e->set.records[i].sample_id.c_str() : nullptr;
}

const char* medssl_embeddings_modality(const medssl_embeddings* e, size_t i) {
  return e && i < e->modality_tags.size() ? e->modality_tags[i].c_str() : nullptr;
}

medssl_status medssl_embeddings_vector(const medssl_embeddings* e, size_t i, double* out, size_t capacity) {
  return guarded([&] {
    require(e, "embeddings");
    require(out, "out");
    if (i >= e->set.records.size()) throw InvalidInput("embedding index out of range");
    const auto& v = e->set.records[i].vector;
    for (size_t k = 0; k < capacity && k < static_cast<size_t>(v.size()); ++k) out[k] = v[static_cast<Eigen::Index>(k)];
  });
}

// ---- eval

void medssl_eval_options_init(medssl_eval_options* o) {
  if (!o) return;
  *o = medssl_eval_options{};
  o->embeddings = "embeddings.bin";
  o->rule = "category";
  o->body_part_map = "";
  o->lesion_bucket_mm = 5;
  o->query_modalities = "";
  o->gallery_modalities = "";
}

medssl_status medssl_eval(const medssl_eval_options* o, medssl_report** out) {
  return guarded([&] {
    require(o, "options");
    require(out, "out");
    *out = nullptr;
    EvalOptions e;
    e.embeddings = str(o->embeddings);
    e.rule = parse_relevance(str(o->rule));
    if (o->ks) e.ks.assign(o->ks, o->ks + o->k_count);
    e.body_part_map = str(o->body_part_map);
    e.regional_any = o->regional_any != 0;
    e.lesion_bucket_mm = o->lesion_bucket_mm;
    e.labeled_only = o->labeled_only != 0;
    e.query_modalities = parse_modalities(o->query_modalities);
    e.gallery_modalities = parse_modalities(o->gallery_modalities);
    auto* h = new medssl_report{run_eval(e), {}, {}};
    h->json = report_to_json(h->report);
    h->table = report_to_table(h->report);
    *out = h;
  });
}

void medssl_report_free(medssl_report* r) { delete r; }
const char* medssl_report_json(const medssl_report* r) { return r ? r->json.c_str() : ""; }
const char* medssl_report_table(const medssl_report* r) { return r ? r->table.c_str() : ""; }

double medssl_report_recall(const medssl_report* r, int k) {
  if (!r) return std::numeric_limits<double>::quiet_NaN();
  const auto it = r->report.recall_at.find(k);
  return it == r->report.recall_at.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
}

double medssl_report_mnr(const medssl_report* r) { return r ? r->report.mnr : std::nan(""); }
double medssl_report_mdr(const medssl_report* r) { return r ? r->report.mdr : std::nan(""); }
int medssl_report_query_count(const medssl_report* r) { return r ? r->report.query_count : 0; }
int medssl_report_skipped(const medssl_report* r) { return r ? r->report.skipped : 0; }

// ---- gradcheck

void medssl_gradcheck_options_init(medssl_gradcheck_options* o) {
  if (!o) return;
  const GradcheckOptions d;
  *o = medssl_gradcheck_options{};
  o->objective = "mae";
  o->seed = d.seed;
  o->embed_dim = d.embed_dim;
  o->depth = d.depth;
  o->heads = d.heads;
  o->batch = d.batch;
  o->h = d.h;
  o->tolerance = d.tolerance;
  o->corrupt_gradient = 0;
}

medssl_status medssl_gradcheck(const medssl_gradcheck_options* o, medssl_gradcheck_report** out) {
  return guarded([&] {
    require(o, "options");
    require(out, "out");
    *out = nullptr;
    GradcheckOptions g;
    g.objective = parse_objective(str(o->objective));
    g.seed = o->seed;
    g.embed_dim = o->embed_dim;
    g.depth = o->depth;
    g.heads = o->heads;
    g.batch = o->batch;
    g.h = o->h;
    g.tolerance = o->tolerance;
    g.corrupt_gradient = o->corrupt_gradient != 0;
    auto* h = new medssl_gradcheck_report{gradcheck(g), {}};
    h->table = gradcheck_to_table(h->report);
    *out = h;
  });
}

void medssl_gradcheck_report_free(medssl_gradcheck_report* r) { delete r; }
int medssl_gradcheck_passed(const medssl_gradcheck_report* r) { return r && r->report.passed ? 1 : 0; }
double medssl_gradcheck_max_error(const medssl_gradcheck_report* r) { return r ? r->report.max_error : std::nan(""); }
size_t medssl_gradcheck_block_count(const medssl_gradcheck_report* r) { return r ? r->report.blocks.size() : 0; }

const char* medssl_gradcheck_block_name(const medssl_gradcheck_report* r, size_t i) {
  return r && i < r->report.blocks.size() ? r->report.blocks[i].name.c_str() : nullptr;
}

double medssl_gradcheck_block_error(const medssl_gradcheck_report* r, size_t i) {
  return r && i < r->report.blocks.size() ? r->report.blocks[i].max_error : std::nan("");
}

const char* medssl_gradcheck_table(const medssl_gradcheck_report* r) { return r ? r->table.c_str() : ""; }

// ---- scaling, probes

medssl_status medssl_fit_power_law(const double* x, const double* y, size_t n, double* a, double* b) {
  return guarded([&] {
    require(x, "x");
    require(y, "y");
    std::vector<std::pair<double, double>> pts;
    for (size_t i = 0; i < n; ++i) pts.emplace_back(x[i], y[i]);
    const auto fit = fit_power_law(pts);
    if (a) *a = fit.a;
    if (b) *b = fit.b;
  });
}

medssl_status medssl_scaling_fit_file(const char* path, medssl_scaling_report** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    auto* h = new medssl_scaling_report{scaling_fit(read_scaling_points(str(path))), {}, {}};
    h->table = scaling_to_table(h->report);
    h->json = scaling_to_json(h->report);
    *out = h;
  });
}

void medssl_scaling_report_free(medssl_scaling_report* r) { delete r; }
double medssl_scaling_a(const medssl_scaling_report* r) { return r ? r->report.fit.a : std::nan(""); }
double medssl_scaling_b(const medssl_scaling_report* r) { return r ? r->report.fit.b : std::nan(""); }
int medssl_scaling_monotone(const medssl_scaling_report* r) { return r && r->report.monotone ? 1 : 0; }
const char* medssl_scaling_table(const medssl_scaling_report* r) { return r ? r->table.c_str() : ""; }
const char* medssl_scaling_json(const medssl_scaling_report* r) { return r ? r->json.c_str() : ""; }

medssl_status medssl_auroc(const double* scores, const int* labels, size_t n, double* out) {
  return guarded([&] {
    require(scores, "scores");
    require(labels, "labels");
    require(out, "out");
    *out = auroc(std::span<const double>(scores, n), std::span<const int>(labels, n));
  });
}

medssl_status medssl_linear_probe(const double* train_x, const int* train_y, size_t n_train, const double* test_x,
                                  const int* test_y, size_t n_test, size_t dim, size_t n_classes,
                                  medssl_probe_metrics* out) {
  return guarded([&] {
    require(train_x, "train_x");
    require(train_y, "train_y");
    require(test_x, "test_x");
    require(test_y, "test_y");
    require(out, "out");
    std::vector<std::string> classes;
    for (size_t c = 0; c < n_classes; ++c) classes.push_back(std::to_string(c));
    auto pack = [&](const double* x, const int* y, size_t n) {
      std::vector<ProbeExample> v(n);
      for (size_t i = 0; i < n; ++i) {
        v[i].x = Eigen::Map<const Vector>(x + i * dim, static_cast<Eigen::Index>(dim));
        for (size_t c = 0; c < n_classes; ++c)
          if (y[i * n_classes + c]) v[i].labels.insert(classes[c]);
      }
      return v;
    };
    const auto train = pack(train_x, train_y, n_train);
    const auto test = pack(test_x, test_y, n_test);
    const auto m = linear_probe(train, test, classes);
    *out = medssl_probe_metrics{m.f1, m.precision, m.accuracy, m.auroc, m.classes.size(), m.excluded.size()};
  });
}

}  // extern "C"
