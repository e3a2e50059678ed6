#include "retrieval.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "error.hpp"
#include "numerics.hpp"
#include "strings.hpp"

namespace medssl {

// ---------------------------------------------------------------------------
// Body-part map

namespace {

constexpr const char* kDefaultBodyPartMap =
    "# modality\ttag\tkey\n"
    "*\tchest\tchest\n"
    "*\tabdomen\tabdomen\n"
    "*\thead\thead\n"
    "*\tpelvis\tpelvis\n"
    "*\tlimb\tlimb\n"
    "*\tneck\tneck\n"
    "*\tspine\tspine\n"
    "*\theart\theart\n"
    "xray\tCHEST\tchest\n"
    "xray\tABDOMEN\tabdomen\n"
    "xray\tSKULL\thead\n"
    "xray\tPELVIS\tpelvis\n"
    "xray\tEXTREMITY\tlimb\n"
    "xray\tNECK\tneck\n"
    "xray\tSPINE\tspine\n"
    "xray\tCARDIAC\theart\n"
    "ct\tthorax\tchest\n"
    "ct\tbrain\thead\n"
    "ct\textremity\tlimb\n"
    "ct\tcervical\tneck\n"
    "ct\tcardiac\theart\n"
    "mri\tthorax\tchest\n"
    "mri\tbrain\thead\n"
    "mri\textremity\tlimb\n"
    "mri\tcervical\tneck\n"
    "mri\tcardiac\theart\n";

std::string modality_key(std::optional<Modality> m) { return m ? std::string(to_tag(*m)) : std::string("*"); }

}  // namespace

void BodyPartMap::add(std::optional<Modality> modality, const std::string& tag, const std::string& key) {
  if (tag.empty() || key.empty()) throw InvalidInput("body-part map entries need a tag and a key");
  entries_[{modality_key(modality), tag}] = key;
}

bool BodyPartMap::contains(Modality modality, const std::string& tag) const {
  return entries_.count({std::string(to_tag(modality)), tag}) || entries_.count({"*", tag});
}

const std::string& BodyPartMap::canonical(Modality modality, const std::string& tag) const {
  auto it = entries_.find({std::string(to_tag(modality)), tag});
  if (it == entries_.end()) it = entries_.find({"*", tag});
  if (it == entries_.end())
    throw LabelError("body part tag '" + tag + "' (" + std::string(to_tag(modality)) + ") is not in the mapping table");
  return it->second;
}

void BodyPartMap::validate() const {
  for (const auto& [k, key] : entries_) {
    const auto& [mod, tag] = k;
    (void)tag;
    // A canonical key reused as a tag must be a fixed point.
    auto self = entries_.find({mod, key});
    if (self == entries_.end()) self = entries_.find({"*", key});
    if (self != entries_.end() && self->second != key)
      throw InvalidInput("body-part key '" + key + "' is also a tag mapping to '" + self->second + "'");
  }
}

BodyPartMap BodyPartMap::parse(std::istream& in) {
  BodyPartMap map;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 3)
      throw InvalidInput("body-part map line " + std::to_string(line_no) + ": expected modality, tag, key");
    std::optional<Modality> mod;
    if (trim(fields[0]) != "*") mod = parse_modality(fields[0]);
    map.add(mod, std::string(trim(fields[1])), std::string(trim(fields[2])));
  }
  map.validate();
  return map;
}

BodyPartMap BodyPartMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open body-part map " + path.string());
  return parse(in);
}

void BodyPartMap::write(std::ostream& out) const {
  out << "# modality\ttag\tkey\n";
  for (const auto& [k, key] : entries_) out << k.first << '\t' << k.second << '\t' << key << '\n';
}

BodyPartMap BodyPartMap::defaults() {
  std::istringstream in(kDefaultBodyPartMap);
  return parse(in);
}

const char* BodyPartMap::default_text() { return kDefaultBodyPartMap; }

// ---------------------------------------------------------------------------
// Relevance

std::string_view to_tag(RelevanceKind k) {
  switch (k) {
    case RelevanceKind::Category: return "category";
    case RelevanceKind::RegionalAbnormality: return "regional";
    case RelevanceKind::LesionSize: return "lesion";
    case RelevanceKind::CrossModalBodyPart: return "crossmodal";
  }
  return "?";
}

RelevanceKind parse_relevance(std::string_view s) {
  const auto t = to_lower(trim(s));
  if (t == "category") return RelevanceKind::Category;
  if (t == "regional" || t == "regional_abnormality") return RelevanceKind::RegionalAbnormality;
  if (t == "lesion" || t == "lesion_size") return RelevanceKind::LesionSize;
  if (t == "crossmodal" || t == "cross_modal" || t == "crossmodal_body_part") return RelevanceKind::CrossModalBodyPart;
  throw ConfigError("unknown relevance rule '" + std::string(s) + "'");
}

void RelevanceRule::validate() const {
  if (kind == RelevanceKind::CrossModalBodyPart && !body_part_map)
    throw ConfigError("the cross-modal rule needs a body-part mapping table");
  if (lesion_bucket_mm <= 0) throw ConfigError("lesion bucket width must be positive");
}

bool has_required_labels(const LabelSet& l, const RelevanceRule& rule) {
  switch (rule.kind) {
    case RelevanceKind::Category: return !l.categories.empty();
    case RelevanceKind::RegionalAbnormality: return l.region_status && !l.region_status->empty();
    case RelevanceKind::LesionSize: return l.lesions.has_value();
    case RelevanceKind::CrossModalBodyPart: return l.body_part.has_value();
  }
  return false;
}

namespace {

std::set<std::pair<std::string, int>> lesion_buckets(const std::set<Lesion>& lesions, int bucket) {
  std::set<std::pair<std::string, int>> out;
  for (const auto& l : lesions) out.emplace(l.region, l.size_mm / bucket);
  return out;
}

}  // namespace

bool is_relevant(const LabeledItem& q, const LabeledItem& c, const RelevanceRule& rule) {
  for (const auto* item : {&q, &c})
    if (!has_required_labels(*item->labels, rule))
      throw LabelError(std::string("item lacks the labels required by the ") + std::string(to_tag(rule.kind)) + " rule");
  switch (rule.kind) {
    case RelevanceKind::Category: {
      for (const auto& cat : q.labels->categories)
        if (c.labels->categories.count(cat)) return true;
      return false;
    }
    case RelevanceKind::RegionalAbnormality: {
      int shared = 0;
      int agree = 0;
      for (const auto& [region, status] : *q.labels->region_status) {
        const auto it = c.labels->region_status->find(region);
        if (it == c.labels->region_status->end()) continue;
        ++shared;
        if (it->second == status) ++agree;
      }
      if (shared == 0) return false;
      return rule.regional_any ? agree > 0 : agree == shared;
    }
    case RelevanceKind::LesionSize:
      return lesion_buckets(*q.labels->lesions, rule.lesion_bucket_mm) ==
             lesion_buckets(*c.labels->lesions, rule.lesion_bucket_mm);
    case RelevanceKind::CrossModalBodyPart: {
      if (!rule.body_part_map) throw ConfigError("the cross-modal rule needs a body-part mapping table");
      const auto& qk = rule.body_part_map->canonical(q.modality, *q.labels->body_part);
      const auto& ck = rule.body_part_map->canonical(c.modality, *c.labels->body_part);
      return q.modality != c.modality && qk == ck;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Ranking and metrics

std::vector<int> rank(const EmbeddingRecord& query, std::span<const EmbeddingRecord> gallery) {
  if (gallery.empty()) throw InvalidInput("empty gallery");
  std::vector<double> sim(gallery.size());
  const std::span<const double> q(query.vector.data(), static_cast<std::size_t>(query.vector.size()));
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const auto& g = gallery[i].vector;
    sim[i] = cosine_similarity(q, std::span<const double>(g.data(), static_cast<std::size_t>(g.size())));
  }
  std::vector<int> order(gallery.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sim[a] > sim[b]; });
  return order;
}

double lower_median(std::vector<int> values) {
  if (values.empty()) throw InvalidInput("median of an empty set");
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

MetricsReport evaluate(std::span<const EmbeddingRecord> queries, std::span<const EmbeddingRecord> gallery,
                       const RelevanceRule& rule, std::span<const int> ks) {
  if (queries.empty()) throw InvalidInput("empty query set");
  rule.validate();
  std::vector<int> k_values(ks.begin(), ks.end());
  if (k_values.empty()) k_values = {1, 5, 10};
  for (int k : k_values)
    if (k <= 0) throw ConfigError("K values must be positive");

  MetricsReport report;
  report.rule = rule.kind;
  for (const auto& q : queries) {
    std::vector<EmbeddingRecord> pool;
    pool.reserve(gallery.size());
    for (const auto& g : gallery)
      if (g.sample_id != q.sample_id) pool.push_back(g);
    if (pool.empty()) throw InvalidInput("gallery is empty after leave-one-out");
    const auto order = rank(q, pool);
    int first = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      const auto& c = pool[static_cast<std::size_t>(order[r])];
      if (is_relevant({q.modality, &q.labels}, {c.modality, &c.labels}, rule)) {
        first = static_cast<int>(r) + 1;
        break;
      }
    }
    if (first == 0) {
      ++report.skipped;
      continue;
    }
    report.first_ranks.push_back(first);
  }
  report.query_count = static_cast<int>(report.first_ranks.size());
  if (report.query_count == 0) throw InvalidInput("no query has a relevant gallery item under the " + std::string(to_tag(rule.kind)) + " rule");
  for (int k : k_values) {
    const auto hits = std::count_if(report.first_ranks.begin(), report.first_ranks.end(), [k](int r) { return r <= k; });
    report.recall_at[k] = static_cast<double>(hits) / report.query_count;
  }
  double sum = 0.0;
  for (int r : report.first_ranks) sum += r;
  report.mnr = sum / report.query_count;
  report.mdr = lower_median(report.first_ranks);
  return report;
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["rule"] = std::string(to_tag(r.rule));
  j["query_count"] = r.query_count;
  j["skipped"] = r.skipped;
  nlohmann::ordered_json recall = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.recall_at) recall["R@" + std::to_string(k)] = v;
  j["recall_at"] = recall;
  j["mdr"] = r.mdr;
  j["mnr"] = r.mnr;
  return j.dump(2) + "\n";
}

std::string report_to_table(const MetricsReport& r) {
  std::vector<std::string> head = {"rule", "queries", "skipped"};
  std::vector<std::string> row = {std::string(to_tag(r.rule)), std::to_string(r.query_count), std::to_string(r.skipped)};
  auto fmt = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
  };
  for (const auto& [k, v] : r.recall_at) {
    head.push_back("R@" + std::to_string(k));
    row.push_back(fmt(v));
  }
  head.push_back("MdR");
  row.push_back(fmt(r.mdr));
  head.push_back("MnR");
  row.push_back(fmt(r.mnr));
  std::ostringstream out;
  for (int pass = 0; pass < 2; ++pass) {
    const auto& cells = pass == 0 ? head : row;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::size_t width = std::max(head[i].size(), row[i].size()) + 2;
      out << std::left << std::setw(static_cast<int>(width)) << cells[i];
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Embedding files

namespace {
constexpr char kEmbeddingMagic[8] = {'M', 'S', 'S', 'L', 'E', 'M', 'B', 'D'};
constexpr std::uint32_t kEmbeddingVersion = 1;
}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& embeddings) {
  auto p = embeddings;
  p += ".idx.tsv";
  return p;
}

void save_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> records,
                     const std::vector<std::string>& regions, const std::vector<int>& ks) {
  const std::uint32_t d = records.empty() ? 0u : static_cast<std::uint32_t>(records.front().vector.size());
  for (const auto& r : records)
    if (static_cast<std::uint32_t>(r.vector.size()) != d) throw ShapeError("embedding dimensions differ");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embeddings " + path.string());
  out.write(kEmbeddingMagic, sizeof kEmbeddingMagic);
  out.write(reinterpret_cast<const char*>(&kEmbeddingVersion), sizeof kEmbeddingVersion);
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  const std::uint64_t count = records.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (const auto& r : records)
    out.write(reinterpret_cast<const char*>(r.vector.data()), static_cast<std::streamsize>(d * sizeof(double)));
  if (!out) throw IoError("failed writing embeddings " + path.string());

  Manifest index;
  index.regions = regions;
  index.ks = ks;
  for (const auto& r : records) index.records.push_back({r.sample_id, {}, r.modality, r.labels});
  std::ofstream side(sidecar_path(path), std::ios::binary);
  if (!side) throw IoError("cannot write embedding index " + sidecar_path(path).string());
  write_manifest(side, index);
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embeddings " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kEmbeddingMagic, sizeof magic) != 0) throw IoError(path.string() + " is not an embedding file");
  std::uint32_t version = 0, d = 0;
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&d), sizeof d);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || version != kEmbeddingVersion) throw IoError("unsupported embedding file " + path.string());

  std::ifstream side(sidecar_path(path));
  if (!side) throw IoError("missing embedding index " + sidecar_path(path).string());
  Manifest index = parse_manifest(side);
  if (index.records.size() != count) throw IoError("embedding index row count differs from the embedding file");

  EmbeddingSet set;
  set.dim = static_cast<int>(d);
  set.regions = index.regions;
  set.ks = index.ks;
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord r;
    r.vector.resize(d);
    in.read(reinterpret_cast<char*>(r.vector.data()), static_cast<std::streamsize>(d * sizeof(double)));
    if (!in) throw IoError("truncated embedding file " + path.string());
    auto& src = index.records[i];
    r.sample_id = std::move(src.sample_id);
    r.modality = src.modality;
    r.labels = std::move(src.labels);
    set.records.push_back(std::move(r));
  }
  return set;
}

}  // namespace medssl
