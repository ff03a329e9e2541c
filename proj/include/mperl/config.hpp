#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mperl/kg.hpp"
#include "mperl/trainer.hpp"

namespace mperl {

// Effective run configuration: a flat set of typed keys loaded from a
// key = value file, with command-line overrides applied on top. The
// rendered snapshot reparses to an identical config.
struct RunConfig {
  std::string dataset = "";
  std::string data_root = "data";
  std::string out_dir = "runs/out";
  std::string task = "single";         // single | multi
  std::string checkpoints = "first";   // first | all | none
  std::size_t repeats = 10;
  std::size_t jobs = 1;
  bool include_inverse = true;
  bool type_augment = false;
  std::vector<double> sweep_values = {1.0, 0.5, 0.2, 0.1};

  // custom dataset files (used when the name is not in the registry)
  std::string triples_path;
  std::string labels_path;
  std::vector<std::string> target_relations;

  TrainConfig train;

  TaskMode mode() const { return task == "multi" ? TaskMode::MultiLabel : TaskMode::SingleLabel; }
};

std::map<std::string, std::string> read_kv_file(const std::string& path);

// Type- and range-checks every key; violations are appended to `errors`
// with the key name and the expected range.
RunConfig parse_config(const std::map<std::string, std::string>& kv,
                       std::vector<std::string>& errors);
RunConfig load_config(const std::string& path, std::vector<std::string>& errors);
std::string render_config(const RunConfig& cfg);

// One raw task file of a public benchmark and the split it carries.
struct RawTaskFile {
  std::string file;
  Split split;
};

struct DatasetInfo {
  std::string name;
  std::string archive_url;  // where `prepare` fetches the dump
  std::string archive_sha256;  // pinned digest; empty = record on first use
  std::string triples_file;
  TaskMode mode = TaskMode::SingleLabel;
  std::vector<std::string> target_relations;
  bool type_augment = false;
  std::size_t suggested_fanout = 0;
  std::size_t suggested_max_steps = 0;
  std::size_t suggested_batch = 0;
  // raw labeled-task files: header-based TSV when the column names are
  // set, otherwise two-column (entity, type) pairs
  std::vector<RawTaskFile> raw_task_files;
  std::string raw_entity_column;
  std::string raw_label_column;
};

const std::vector<DatasetInfo>& dataset_registry();
std::optional<DatasetInfo> find_dataset(const std::string& name);

// Built-in deterministic benchmark used by tests and smoke runs.
bool is_synthetic_dataset(const std::string& name);

// Loads (or ingests and caches) the dataset selected by the config.
// Honors the MPERL_DATA environment variable as the data root default.
KnowledgeGraph load_dataset(const RunConfig& cfg);

// Converts raw benchmark task files into the canonical labels.tsv.
// Returns the number of label rows written.
std::size_t convert_raw_labels(const DatasetInfo& info, const std::string& dataset_dir,
                               const std::string& out_labels_path);

std::string effective_data_root(const RunConfig& cfg);

}  // namespace mperl
