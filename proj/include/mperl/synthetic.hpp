#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mperl/kg.hpp"
#include "mperl/ntriples.hpp"

namespace mperl {

// Deterministic generator for a small relational classification benchmark.
// Item entities carry class-specific attribute neighbors plus noise edges,
// and the class affiliation itself is also present as a strippable target
// relation, mirroring the shape of the real benchmark dumps.
struct SyntheticSpec {
  std::size_t classes = 3;
  std::size_t entities_per_class = 30;
  std::size_t attrs_per_class = 2;
  double attr_edge_prob = 0.9;
  double noise_edge_prob = 0.1;
  double test_fraction = 0.3;   // single-label: per-class holdout share
  double valid_fraction = 0.0;  // multi-label assertion share
  double extra_type_prob = 0.4; // multi-label: chance of a second type
  TaskMode mode = TaskMode::SingleLabel;
  std::uint64_t seed = 7;
};

struct SyntheticData {
  std::vector<RawTriple> triples;
  std::vector<LabelRow> labels;
  DatasetSpec dataset;  // name, target relations, task mode
};

SyntheticData make_synthetic(const SyntheticSpec& spec);

// convenience: generate and run full ingestion (stripping included)
KnowledgeGraph synthetic_graph(const SyntheticSpec& spec);

// write the generated benchmark as on-disk dataset files
void write_synthetic_files(const SyntheticData& data, const std::string& triples_path,
                           const std::string& labels_path);

}  // namespace mperl
