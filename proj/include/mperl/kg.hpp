#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mperl/ntriples.hpp"

namespace mperl {

enum class Split : std::uint8_t { Train = 0, Valid = 1, Test = 2 };
enum class TaskMode : std::uint8_t { SingleLabel = 0, MultiLabel = 1 };

const char* split_name(Split s);
Split split_from_name(const std::string& name);  // ConfigError on unknown tag

// Ingestion recipe for one dataset.
struct DatasetSpec {
  std::string name;
  std::string triples_path;  // N-Triples, optionally gzip-compressed
  std::string labels_path;   // TSV: entity IRI <TAB> class label <TAB> split tag
  std::vector<std::string> target_relations;  // label-bearing relations to strip
  TaskMode mode = TaskMode::SingleLabel;
  bool type_augmentation = false;
  std::size_t neighbor_fanout = 0;  // 0 = full neighborhoods
};

struct Triple {
  std::uint32_t subject;
  std::uint32_t relation;
  std::uint32_t object;
  bool operator==(const Triple&) const = default;
};

// One (entity, split) group of class assertions. Single-label graphs have
// exactly one class and one row per labeled entity.
struct LabeledEntity {
  std::uint32_t entity;
  std::vector<std::uint32_t> classes;
  Split split;
  bool operator==(const LabeledEntity&) const = default;
};

struct KnowledgeGraph {
  std::vector<std::string> entity_names;
  std::vector<std::string> relation_names;
  std::vector<std::string> class_names;
  std::unordered_map<std::string, std::uint32_t> entity_index;
  std::unordered_map<std::string, std::uint32_t> relation_index;
  std::unordered_map<std::string, std::uint32_t> class_index;

  std::vector<Triple> triples;  // target-relation statements removed
  std::vector<LabeledEntity> labeled;
  std::uint64_t parsed_triples = 0;  // statement count before stripping
  TaskMode mode = TaskMode::SingleLabel;

  std::size_t num_entities() const { return entity_names.size(); }
  std::size_t num_relations() const { return relation_names.size(); }
  std::size_t num_classes() const { return class_names.size(); }

  // labeled rows for one split, in table order
  std::vector<std::size_t> rows_of(Split split) const;
  // total class assertions across labeled rows
  std::size_t assertion_count() const;

  bool operator==(const KnowledgeGraph& other) const;
};

struct LabelRow {
  std::string entity;
  std::string label;
  Split split;
};

// Reads the canonical label file: entity IRI <TAB> class label <TAB> split.
std::vector<LabelRow> read_label_tsv(const std::string& path);

// Builds dictionaries over every parsed statement, drops statements whose
// predicate is a target relation, and attaches the labeled-entity table.
// Labeled entities missing from the graph raise IngestError naming the IRI.
KnowledgeGraph build_graph(const std::vector<RawTriple>& triples,
                           const std::vector<LabelRow>& labels, const DatasetSpec& spec);

// Adds one (entity, hastype, class-entity) triple per training-split class
// assertion; classes are registered as entities on demand. Multi-label
// graphs only (ContractError otherwise). Returns the number of added triples.
std::size_t augment_type_triples(KnowledgeGraph& kg,
                                 const std::string& relation_name = "mperl:hastype");

// entity total degree (in + out over the kept triples) -> entity count
std::map<std::size_t, std::size_t> degree_histogram(const KnowledgeGraph& kg);

// binary graph cache
void save_graph(const KnowledgeGraph& kg, const std::string& path);
KnowledgeGraph load_graph(const std::string& path);

struct DatasetStats {
  std::string name;
  std::uint64_t entities = 0;
  std::uint64_t relations = 0;
  std::uint64_t triples = 0;  // parsed statements (before stripping)
  std::uint64_t kept_triples = 0;
  std::uint64_t labeled = 0;  // class assertions
  std::uint64_t classes = 0;
};

DatasetStats compute_stats(const KnowledgeGraph& kg, const std::string& name);
std::string stats_to_json(const DatasetStats& s);

}  // namespace mperl
