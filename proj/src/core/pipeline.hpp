#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "augment.hpp"
#include "mae.hpp"
#include "model.hpp"
#include "numerics.hpp"
#include "optim.hpp"
#include "retrieval.hpp"
#include "simdino.hpp"
#include "synth.hpp"

namespace medssl {

// ---------------------------------------------------------------------------
// pretrain

struct PretrainOptions {
  Objective objective = Objective::SimDINO;
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  int steps = 200;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  double warmup_fraction = 10.0 / 300.0;
  AdamWConfig adamw;

  /// max_tokens 0 means "largest token count in the manifest".
  EncoderConfig encoder{};
  DecoderConfig decoder{};
  HeadConfig head{};
  bool projection_head = true;

  MaskConfig mask{};
  SimdinoConfig simdino{};
  int n_local = -1;  // -1: per-modality default
  ScaleRange global_scale{0.4, 1.0};
  ScaleRange local_scale{0.05, 0.4};
  ViewExtent local_out{};  // zero: derived from the sample shape and patch

  std::vector<Modality> holdout;
  double data_fraction = 1.0;
  int checkpoint_every = 0;  // 0: final checkpoint only
};

struct PretrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::vector<Modality> modalities;  // training order
  std::size_t parameters = 0;
  int steps = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

/// Modalities a pretraining run alternates over: those present in the
/// manifest, minus MRI and the held-out ones, in enumeration order.
std::vector<Modality> training_modalities(const Manifest& m, const std::vector<Modality>& holdout);

/// Per-modality index pools after the data-fraction subset. Subsets are
/// nested prefixes of one seeded permutation, so smaller fractions are
/// contained in larger ones.
std::vector<std::vector<int>> training_pools(const Manifest& m, const std::vector<Modality>& modalities,
                                             double fraction, std::uint64_t seed);

/// Largest multiple of the patch not above 3/8 of H, W (1/2 of S for
/// volumes), and at least one patch.
ViewExtent default_local_extent(const Shape4& shape, const PatchConfig& patch, Modality m);

int max_token_count(const Manifest& m, const PatchConfig& patch);

/// Writes `<out>/train_log.csv`, checkpoints and `<out>/model.ckpt`. On
/// NumericalError, writes `<out>/diagnostic.json` and rethrows.
PretrainResult pretrain(const PretrainOptions& opt);

// ---------------------------------------------------------------------------
// embed

struct EmbedOptions {
  std::filesystem::path checkpoint;  // unused with `oracle`
  std::filesystem::path manifest;
  std::filesystem::path output;
  std::optional<PoolStrategy> strategy;  // default follows the objective
  bool oracle = false;
};

struct EmbedResult {
  std::size_t count = 0;
  int dim = 0;
  PoolStrategy strategy = PoolStrategy::Avg;
};

EmbedResult embed(const EmbedOptions& opt);
PoolStrategy default_strategy(Objective o);

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::filesystem::path embeddings;
  RelevanceKind rule = RelevanceKind::Category;
  std::vector<int> ks;  // empty: from the embedding index, else 1,5,10
  std::filesystem::path body_part_map;
  bool regional_any = false;
  int lesion_bucket_mm = 5;
  bool labeled_only = false;  // drop records lacking the rule's labels
  std::vector<Modality> query_modalities;    // empty: all
  std::vector<Modality> gallery_modalities;  // empty: all
};

MetricsReport run_eval(const EvalOptions& opt);

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOptions {
  Objective objective = Objective::MAE;
  std::uint64_t seed = 0;
  int embed_dim = 16;
  int depth = 2;
  int heads = 2;
  int batch = 4;
  double h = 1e-5;
  double tolerance = 1e-4;
  /// Test hook: doubles the analytic gradient so the check must fail.
  bool corrupt_gradient = false;
};

inline constexpr std::size_t kGradcheckMaxParams = 50000;

struct BlockError {
  std::string name;
  std::size_t size = 0;
  double max_error = 0.0;
};

struct GradcheckReport {
  Objective objective = Objective::MAE;
  std::vector<BlockError> blocks;
  double max_error = 0.0;
  std::size_t parameters = 0;
  bool passed = false;
};

GradcheckReport gradcheck(const GradcheckOptions& opt);
std::string gradcheck_to_table(const GradcheckReport& r);

// ---------------------------------------------------------------------------
// scaling-fit

struct ScalingReport {
  std::vector<std::pair<double, double>> points;
  PowerLaw fit;
  std::vector<double> residuals;  // ln y - ln(a x^b)
  bool monotone = false;          // y non-decreasing in x
};

/// Lines of `x y` (whitespace, comma or tab separated); `#` comments.
std::vector<std::pair<double, double>> read_scaling_points(const std::filesystem::path& path);
ScalingReport scaling_fit(std::vector<std::pair<double, double>> points);
std::string scaling_to_table(const ScalingReport& r);
std::string scaling_to_json(const ScalingReport& r);

}  // namespace medssl
