#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "datamodel.hpp"
#include "tensor.hpp"

namespace medssl {

struct EmbeddingRecord {
  std::string sample_id;
  Modality modality = Modality::XRay;
  Vector vector;
  LabelSet labels;
};

/// Canonicalizes per-modality body-part tags onto shared anatomical keys.
class BodyPartMap {
 public:
  /// `modality` empty means the entry applies to every modality.
  void add(std::optional<Modality> modality, const std::string& tag, const std::string& key);
  /// Throws LabelError naming the tag when it is unmapped.
  const std::string& canonical(Modality modality, const std::string& tag) const;
  bool contains(Modality modality, const std::string& tag) const;
  std::size_t size() const { return entries_.size(); }
  /// Throws InvalidInput when a key that is also a tag does not map to itself.
  void validate() const;

  /// Lines: `modality|*  TAB  tag  TAB  key`; `#` starts a comment.
  static BodyPartMap parse(std::istream& in);
  static BodyPartMap load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  /// The table shipped with the library.
  static BodyPartMap defaults();
  static const char* default_text();

 private:
  // (modality tag or "*", tag) -> key
  std::map<std::pair<std::string, std::string>, std::string> entries_;
};

enum class RelevanceKind { Category, RegionalAbnormality, LesionSize, CrossModalBodyPart };
std::string_view to_tag(RelevanceKind k);
RelevanceKind parse_relevance(std::string_view s);

struct RelevanceRule {
  RelevanceKind kind = RelevanceKind::Category;
  std::shared_ptr<const BodyPartMap> body_part_map;
  /// Regional abnormality: any co-annotated region agreeing suffices.
  bool regional_any = false;
  int lesion_bucket_mm = 5;

  void validate() const;
};

struct LabeledItem {
  Modality modality;
  const LabelSet* labels;
};

bool is_relevant(const LabeledItem& query, const LabeledItem& candidate, const RelevanceRule& rule);
/// Whether a record carries the labels `rule` needs.
bool has_required_labels(const LabelSet& labels, const RelevanceRule& rule);

/// Gallery indices by descending cosine similarity; ties by index.
std::vector<int> rank(const EmbeddingRecord& query, std::span<const EmbeddingRecord> gallery);

struct MetricsReport {
  std::map<int, double> recall_at;
  double mnr = 0.0;
  double mdr = 0.0;
  int query_count = 0;   // queries that contributed
  int skipped = 0;       // queries with no relevant gallery item
  RelevanceKind rule = RelevanceKind::Category;
  std::vector<int> first_ranks;  // per contributing query

  bool operator==(const MetricsReport&) const = default;
};

/// Ranks the gallery for each query, skipping gallery items with the
/// query's sample_id (leave-one-out when queries and gallery coincide).
MetricsReport evaluate(std::span<const EmbeddingRecord> queries, std::span<const EmbeddingRecord> gallery,
                       const RelevanceRule& rule, std::span<const int> ks);

/// Lower median for even counts.
double lower_median(std::vector<int> values);

std::string report_to_json(const MetricsReport& r);
std::string report_to_table(const MetricsReport& r);

// Embedding files: header (magic, version, d, count) + float64 rows, plus a
// sidecar index in manifest format holding ids, modality and labels.
void save_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> records,
                     const std::vector<std::string>& regions = {}, const std::vector<int>& ks = {});
struct EmbeddingSet {
  std::vector<EmbeddingRecord> records;
  std::vector<std::string> regions;
  std::vector<int> ks;
  int dim = 0;
};
EmbeddingSet load_embeddings(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& embeddings);

}  // namespace medssl
