#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "datamodel.hpp"
#include "layers.hpp"
#include "params.hpp"

namespace medssl {

struct EncoderConfig {
  PatchConfig patch;
  int embed_dim = 192;
  int depth = 12;
  int heads = 3;
  double mlp_ratio = 4.0;
  bool use_cls_token = true;
  int max_tokens = 4096;

  int mlp_hidden() const;
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;

  // Conventional ViT widths; patch and max_tokens keep their defaults.
  static EncoderConfig vit_tiny();
  static EncoderConfig vit_small();
  static EncoderConfig vit_base();
};

/// Lightweight MAE decoder; width 0 means embed_dim / 2.
struct DecoderConfig {
  int width = 0;
  int depth = 2;
  int heads = 2;
  double mlp_ratio = 4.0;
  bool operator==(const DecoderConfig&) const = default;
};

/// Two-layer GELU projection used by the self-distillation loss; 0 means
/// embed_dim.
struct HeadConfig {
  int hidden = 0;
  int out = 0;
  bool operator==(const HeadConfig&) const = default;
};

enum class Objective { Backbone, MAE, SimDINO };
std::string_view to_tag(Objective o);
Objective parse_objective(std::string_view s);

struct ModelConfig {
  Objective objective = Objective::Backbone;
  EncoderConfig encoder;
  DecoderConfig decoder;  // used by MAE
  HeadConfig head;        // used by SimDINO when projection_head is set
  bool projection_head = true;

  bool has_decoder() const { return objective == Objective::MAE; }
  bool has_head() const { return objective == Objective::SimDINO && projection_head; }
  int decoder_width() const;
  int head_hidden() const;
  int head_out() const;
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct EncoderLayout {
  LinearIds proj;
  int pos = -1;
  int cls = -1;
  StackIds stack;
};

struct HeadLayout {
  LinearIds fc1;
  LinearIds fc2;
};

struct DecoderLayout {
  LinearIds embed;
  int mask_token = -1;
  int pos = -1;
  StackIds stack;
  LinearIds head;
};

/// Architecture plus parameters. Student, teacher and MAE encoder all use
/// this type; the head/decoder parts exist only for their objective.
struct Model {
  ModelConfig config;
  ParamStore params;
  EncoderLayout encoder;
  std::optional<HeadLayout> head;
  std::optional<DecoderLayout> decoder;

  std::size_t parameter_count() const { return params.size(); }
};

/// Builds the layout for `cfg` with zeroed values.
Model build_model(const ModelConfig& cfg);
/// Truncated-normal(0.02) weights, zero biases, unit norm scales.
Model init_model(const ModelConfig& cfg, std::uint64_t seed);
Model init_model(const EncoderConfig& cfg, std::uint64_t seed);

struct EncoderCache {
  Matrix tokens;
  std::vector<int> positions;
  StackCache stack;
};

/// Encodes raw patch rows. `positions` holds each row's flattened grid
/// index, so masked subsets keep their original positional rows. Output
/// has a leading cls row when the encoder uses one.
Matrix encoder_forward(const Model& m, const Matrix& tokens, std::span<const int> positions, EncoderCache* cache);
void encoder_backward(const Model& m, const EncoderCache& cache, const Matrix& d_out, Gradients& g);

/// All tokens at their natural positions.
Matrix forward(const Model& m, const TokenSequence& t);

struct HeadCache {
  Matrix x;
  Matrix pre_act;
  Matrix act;
};
Matrix head_forward(const Model& m, const Matrix& x, HeadCache* cache);
Matrix head_backward(const Model& m, const HeadCache& cache, const Matrix& dy, Gradients& g);

enum class PoolStrategy { Avg, Cls, Mix };
std::string_view to_tag(PoolStrategy s);
PoolStrategy parse_pool_strategy(std::string_view s);

/// Avg: mean of patch rows; Cls: cls row; Mix: cls ++ avg.
Vector pool(const Matrix& reps, PoolStrategy strategy, bool has_cls);
int pooled_dim(const ModelConfig& cfg, PoolStrategy strategy);

// Checkpoints: magic, JSON header (config + block table), float64 payload.
void save_checkpoint(const std::filesystem::path& path, const Model& m);
Model load_checkpoint(const std::filesystem::path& path);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

}  // namespace medssl
