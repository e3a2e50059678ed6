#include "model.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "strings.hpp"

namespace medssl {

using nlohmann::json;

int EncoderConfig::mlp_hidden() const {
  return std::max(1, static_cast<int>(std::lround(mlp_ratio * embed_dim)));
}

void EncoderConfig::validate() const {
  if (embed_dim <= 0 || depth < 0 || heads <= 0 || max_tokens <= 0 || !(mlp_ratio > 0.0))
    throw ConfigError("encoder dimensions must be positive");
  if (embed_dim % heads != 0)
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " + std::to_string(heads));
  if (patch.c_p != kChannels) throw ConfigError("patch channel extent must be 3");
  if (patch.h_p <= 0 || patch.w_p <= 0 || patch.s_p <= 0) throw ConfigError("patch extents must be positive");
}

EncoderConfig EncoderConfig::vit_tiny() {
  EncoderConfig c;
  c.embed_dim = 192;
  c.depth = 12;
  c.heads = 3;
  return c;
}

EncoderConfig EncoderConfig::vit_small() {
  EncoderConfig c;
  c.embed_dim = 384;
  c.depth = 12;
  c.heads = 6;
  return c;
}

EncoderConfig EncoderConfig::vit_base() {
  EncoderConfig c;
  c.embed_dim = 768;
  c.depth = 12;
  c.heads = 12;
  return c;
}

std::string_view to_tag(Objective o) {
  switch (o) {
    case Objective::Backbone: return "backbone";
    case Objective::MAE: return "mae";
    case Objective::SimDINO: return "simdino";
  }
  return "?";
}

Objective parse_objective(std::string_view s) {
  const auto t = to_lower(trim(s));
  if (t == "mae") return Objective::MAE;
  if (t == "simdino") return Objective::SimDINO;
  if (t == "backbone") return Objective::Backbone;
  throw ConfigError("unknown objective '" + std::string(s) + "'");
}

int ModelConfig::decoder_width() const { return decoder.width > 0 ? decoder.width : std::max(1, encoder.embed_dim / 2); }
int ModelConfig::head_hidden() const { return head.hidden > 0 ? head.hidden : encoder.embed_dim; }
int ModelConfig::head_out() const { return head.out > 0 ? head.out : encoder.embed_dim; }

void ModelConfig::validate() const {
  encoder.validate();
  if (objective == Objective::MAE) {
    if (encoder.use_cls_token) throw ConfigError("the MAE encoder does not use a cls token");
    if (decoder.depth < 0 || decoder.heads <= 0 || !(decoder.mlp_ratio > 0.0))
      throw ConfigError("invalid decoder configuration");
    if (decoder_width() % decoder.heads != 0) throw ConfigError("decoder width is not divisible by decoder heads");
  }
  if (objective == Objective::SimDINO && !encoder.use_cls_token)
    throw ConfigError("self-distillation needs a cls token");
  if (head.hidden < 0 || head.out < 0) throw ConfigError("head dimensions must be non-negative");
}

Model build_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.config = cfg;
  const EncoderConfig& e = cfg.encoder;
  auto& p = m.params;
  m.encoder.proj = add_linear(p, "encoder.patch_proj", e.patch.raw_dim(), e.embed_dim);
  m.encoder.pos = p.add("encoder.pos_embed", {e.max_tokens + (e.use_cls_token ? 1 : 0), e.embed_dim});
  if (e.use_cls_token) m.encoder.cls = p.add("encoder.cls_token", {1, e.embed_dim});
  m.encoder.stack = add_stack(p, "encoder", e.depth, e.embed_dim, e.heads, e.mlp_hidden());
  if (cfg.has_head()) {
    HeadLayout h;
    h.fc1 = add_linear(p, "head.fc1", e.embed_dim, cfg.head_hidden());
    h.fc2 = add_linear(p, "head.fc2", cfg.head_hidden(), cfg.head_out());
    m.head = h;
  }
  if (cfg.has_decoder()) {
    const int w = cfg.decoder_width();
    DecoderLayout d;
    d.embed = add_linear(p, "decoder.embed", e.embed_dim, w);
    d.mask_token = p.add("decoder.mask_token", {1, w});
    d.pos = p.add("decoder.pos_embed", {e.max_tokens, w});
    const int hidden = std::max(1, static_cast<int>(std::lround(cfg.decoder.mlp_ratio * w)));
    d.stack = add_stack(p, "decoder", cfg.decoder.depth, w, cfg.decoder.heads, hidden);
    d.head = add_linear(p, "decoder.head", w, e.patch.raw_dim());
    m.decoder = d;
  }
  return m;
}

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = build_model(cfg);
  Rng rng(seed);
  auto& values = m.params.values();
  for (const auto& b : m.params.blocks()) {
    double* v = values.data() + b.offset;
    if (b.name.ends_with(".bias") || b.name.ends_with(".beta")) {
      std::fill(v, v + b.size, 0.0);
    } else if (b.name.ends_with(".gamma")) {
      std::fill(v, v + b.size, 1.0);
    } else {
      for (std::size_t i = 0; i < b.size; ++i) v[i] = rng.truncated_normal(0.02);
    }
  }
  return m;
}

Model init_model(const EncoderConfig& cfg, std::uint64_t seed) {
  ModelConfig mc;
  mc.objective = Objective::Backbone;
  mc.encoder = cfg;
  return init_model(mc, seed);
}

Matrix encoder_forward(const Model& m, const Matrix& tokens, std::span<const int> positions, EncoderCache* cache) {
  const EncoderConfig& e = m.config.encoder;
  const auto& p = m.params;
  if (tokens.cols() != e.patch.raw_dim()) throw ShapeError("token width does not match the patch projection");
  if (static_cast<std::size_t>(tokens.rows()) != positions.size()) throw ShapeError("one position per token required");
  if (tokens.rows() == 0) throw ShapeError("encoder needs at least one token");
  if (tokens.rows() > e.max_tokens) {
    throw ShapeError(std::to_string(tokens.rows()) + " tokens exceed max_tokens " + std::to_string(e.max_tokens));
  }
  const int off = e.use_cls_token ? 1 : 0;
  const auto pos = p.matrix(m.encoder.pos);
  const Matrix projected = linear_forward(p, m.encoder.proj, tokens);
  Matrix x(projected.rows() + off, e.embed_dim);
  if (off) x.row(0) = p.matrix(m.encoder.cls).row(0) + pos.row(0);
  for (Eigen::Index i = 0; i < projected.rows(); ++i) {
    const int at = positions[static_cast<std::size_t>(i)];
    if (at < 0 || at >= e.max_tokens) throw ShapeError("token position " + std::to_string(at) + " exceeds max_tokens");
    x.row(i + off) = projected.row(i) + pos.row(at + off);
  }
  if (cache) {
    cache->tokens = tokens;
    cache->positions.assign(positions.begin(), positions.end());
  }
  return stack_forward(p, m.encoder.stack, x, cache ? &cache->stack : nullptr);
}

void encoder_backward(const Model& m, const EncoderCache& cache, const Matrix& d_out, Gradients& g) {
  const EncoderConfig& e = m.config.encoder;
  const int off = e.use_cls_token ? 1 : 0;
  const Matrix dx = stack_backward(m.params, m.encoder.stack, cache.stack, d_out, g);
  auto dpos = g.matrix(m.encoder.pos);
  if (off) {
    g.matrix(m.encoder.cls).row(0) += dx.row(0);
    dpos.row(0) += dx.row(0);
  }
  const Eigen::Index n = cache.tokens.rows();
  for (Eigen::Index i = 0; i < n; ++i) dpos.row(cache.positions[static_cast<std::size_t>(i)] + off) += dx.row(i + off);
  linear_backward(m.params, m.encoder.proj, cache.tokens, dx.bottomRows(n), g);
}

Matrix forward(const Model& m, const TokenSequence& t) {
  std::vector<int> positions(static_cast<std::size_t>(t.tokens.rows()));
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  return encoder_forward(m, t.tokens, positions, nullptr);
}

Matrix head_forward(const Model& m, const Matrix& x, HeadCache* cache) {
  if (!m.head) return x;
  Matrix pre = linear_forward(m.params, m.head->fc1, x);
  Matrix act = gelu(pre);
  Matrix y = linear_forward(m.params, m.head->fc2, act);
  if (cache) {
    cache->x = x;
    cache->pre_act = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

Matrix head_backward(const Model& m, const HeadCache& cache, const Matrix& dy, Gradients& g) {
  if (!m.head) return dy;
  const Matrix dact = linear_backward(m.params, m.head->fc2, cache.act, dy, g);
  const Matrix dpre = gelu_backward(cache.pre_act, dact);
  return linear_backward(m.params, m.head->fc1, cache.x, dpre, g);
}

std::string_view to_tag(PoolStrategy s) {
  switch (s) {
    case PoolStrategy::Avg: return "avg";
    case PoolStrategy::Cls: return "cls";
    case PoolStrategy::Mix: return "mix";
  }
  return "?";
}

PoolStrategy parse_pool_strategy(std::string_view s) {
  const auto t = to_lower(trim(s));
  if (t == "avg") return PoolStrategy::Avg;
  if (t == "cls") return PoolStrategy::Cls;
  if (t == "mix") return PoolStrategy::Mix;
  throw ConfigError("unknown pooling strategy '" + std::string(s) + "'");
}

Vector pool(const Matrix& reps, PoolStrategy strategy, bool has_cls) {
  if (strategy != PoolStrategy::Avg && !has_cls)
    throw ConfigError(std::string(to_tag(strategy)) + " pooling needs a cls token");
  const Eigen::Index off = has_cls ? 1 : 0;
  if (reps.rows() - off <= 0 && strategy != PoolStrategy::Cls) throw InvalidInput("no patch rows to pool");
  if (reps.rows() == 0) throw InvalidInput("empty representation");
  switch (strategy) {
    case PoolStrategy::Avg:
      return reps.bottomRows(reps.rows() - off).colwise().mean().transpose();
    case PoolStrategy::Cls:
      return reps.row(0).transpose();
    case PoolStrategy::Mix: {
      Vector out(2 * reps.cols());
      out.head(reps.cols()) = reps.row(0).transpose();
      out.tail(reps.cols()) = reps.bottomRows(reps.rows() - 1).colwise().mean().transpose();
      return out;
    }
  }
  return {};
}

int pooled_dim(const ModelConfig& cfg, PoolStrategy strategy) {
  if (strategy != PoolStrategy::Avg && !cfg.encoder.use_cls_token)
    throw ConfigError(std::string(to_tag(strategy)) + " pooling needs a cls token");
  return strategy == PoolStrategy::Mix ? 2 * cfg.encoder.embed_dim : cfg.encoder.embed_dim;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'S', 'S', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

json to_json(const ModelConfig& c) {
  const auto& e = c.encoder;
  return json{{"objective", std::string(to_tag(c.objective))},
              {"encoder",
               {{"patch", {e.patch.c_p, e.patch.h_p, e.patch.w_p, e.patch.s_p}},
                {"embed_dim", e.embed_dim},
                {"depth", e.depth},
                {"heads", e.heads},
                {"mlp_ratio", e.mlp_ratio},
                {"use_cls_token", e.use_cls_token},
                {"max_tokens", e.max_tokens}}},
              {"decoder",
               {{"width", c.decoder.width},
                {"depth", c.decoder.depth},
                {"heads", c.decoder.heads},
                {"mlp_ratio", c.decoder.mlp_ratio}}},
              {"head", {{"hidden", c.head.hidden}, {"out", c.head.out}}},
              {"projection_head", c.projection_head}};
}

ModelConfig from_json(const json& j) {
  ModelConfig c;
  c.objective = parse_objective(j.at("objective").get<std::string>());
  const auto& e = j.at("encoder");
  const auto patch = e.at("patch").get<std::vector<int>>();
  if (patch.size() != 4) throw IoError("checkpoint patch entry must have 4 extents");
  c.encoder.patch = {patch[0], patch[1], patch[2], patch[3]};
  c.encoder.embed_dim = e.at("embed_dim").get<int>();
  c.encoder.depth = e.at("depth").get<int>();
  c.encoder.heads = e.at("heads").get<int>();
  c.encoder.mlp_ratio = e.at("mlp_ratio").get<double>();
  c.encoder.use_cls_token = e.at("use_cls_token").get<bool>();
  c.encoder.max_tokens = e.at("max_tokens").get<int>();
  const auto& d = j.at("decoder");
  c.decoder.width = d.at("width").get<int>();
  c.decoder.depth = d.at("depth").get<int>();
  c.decoder.heads = d.at("heads").get<int>();
  c.decoder.mlp_ratio = d.at("mlp_ratio").get<double>();
  c.head.hidden = j.at("head").at("hidden").get<int>();
  c.head.out = j.at("head").at("out").get<int>();
  c.projection_head = j.at("projection_head").get<bool>();
  return c;
}

}  // namespace

std::string config_to_json(const ModelConfig& cfg) { return to_json(cfg).dump(); }

ModelConfig config_from_json(const std::string& text) {
  try {
    return from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed model config: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Model& m) {
  json blocks = json::array();
  for (const auto& b : m.params.blocks())
    blocks.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", b.offset}});
  const std::string header = json{{"config", to_json(m.config)}, {"params", blocks}}.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  const std::uint64_t header_len = header.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const std::uint64_t count = m.params.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(m.params.values().data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw IoError(path.string() + " is not a checkpoint");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || header_len > (1u << 26)) throw IoError("corrupt checkpoint header");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  json j;
  try {
    j = json::parse(header);
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  Model m = build_model(from_json(j.at("config")));
  const auto& entries = j.at("params");
  if (entries.size() != m.params.blocks().size()) throw IoError("checkpoint block table does not match its config");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& b = m.params.blocks()[i];
    if (entries[i].at("name").get<std::string>() != b.name || entries[i].at("shape").get<std::vector<int>>() != b.shape ||
        entries[i].at("offset").get<std::size_t>() != b.offset)
      throw IoError("checkpoint block '" + b.name + "' does not match its config");
  }
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (count != m.params.size()) throw IoError("checkpoint parameter count mismatch");
  in.read(reinterpret_cast<char*>(m.params.values().data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw IoError("truncated checkpoint " + path.string());
  return m;
}

}  // namespace medssl
