#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mperl/adjacency.hpp"
#include "mperl/kg.hpp"
#include "mperl/loss.hpp"
#include "mperl/metrics.hpp"
#include "mperl/model.hpp"

namespace mperl {

// One training run. Repeat/seed handling lives in run_repeats.
struct TrainConfig {
  HyperParams hp;
  LossConfig loss;
  std::size_t epochs = 100;
  double lr = 0.01;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  std::size_t batch_size = 0;  // 0 = full batch per epoch
  std::size_t fanout = 0;      // 0 = full neighborhoods during training
};

struct EpochRecord {
  std::size_t epoch = 0;
  double total = 0, err = 0, var = 0, unc = 0, reg = 0, delta = 0;
};

struct RunResult {
  ModelParams params;
  HyperParams hp;  // resolved hyperparameters the run used
  std::vector<EpochRecord> curve;
  std::optional<ClassificationMetrics> classification;  // single-label test metrics
  std::optional<RankingMetrics> ranking;                // multi-label test metrics
  std::size_t executed_steps = 0;
  std::uint64_t seed = 0;
};

// Trains on the train split with full-epoch updates (mini-batches only when
// batch_size > 0) and evaluates on the test split. Throws on a non-finite
// loss with the full breakdown in the message.
RunResult train(const KnowledgeGraph& kg, const RelationalAdjacency& adj,
                const TrainConfig& cfg);

// argmax prediction over the Dirichlet mean; ContractError on empty split
ClassificationMetrics evaluate_classification(const ModelParams& params, const HyperParams& hp,
                                              const KnowledgeGraph& kg,
                                              const RelationalAdjacency& adj, Split split);

// filtered ranking protocol: for each assertion, the entity's other known
// types across every split are removed before ranking the evaluated type
RankingMetrics evaluate_ranking(const ModelParams& params, const HyperParams& hp,
                                const KnowledgeGraph& kg, const RelationalAdjacency& adj,
                                Split split);

struct MetricsReport {
  std::vector<RunResult> runs;
  // aggregate over runs (classification or ranking, by task mode)
  ClassificationMetrics cls_mean, cls_std;
  RankingMetrics rank_mean, rank_std;
  TaskMode mode = TaskMode::SingleLabel;
};

// seeds cfg.seed, cfg.seed + 1, ...; runs may execute on parallel threads
// with isolated state, results are ordered by run index
MetricsReport run_repeats(const KnowledgeGraph& kg, const RelationalAdjacency& adj,
                          const TrainConfig& cfg, std::size_t repeats, std::size_t jobs = 1);

struct SweepEntry {
  double lambda_p = 0.0;
  std::size_t steps = 0;                 // resolved Markov horizon
  std::vector<double> mean_curve;        // mean total loss per epoch over runs
  MetricsReport report;
};

std::vector<SweepEntry> sweep_lambda(const KnowledgeGraph& kg, const RelationalAdjacency& adj,
                                     const TrainConfig& base, const std::vector<double>& values,
                                     std::size_t repeats, std::size_t jobs = 1);

struct AblationCell {
  bool markov = false;      // +MP: multi-step halting process
  bool evidential = false;  // +ERL: evidential loss with halting regularizer
  MetricsReport report;
};

// grid order: (-MP,-ERL), (-MP,+ERL), (+MP,-ERL), (+MP,+ERL)
std::vector<AblationCell> ablate(const KnowledgeGraph& kg, const RelationalAdjacency& adj,
                                 const TrainConfig& base, std::size_t repeats,
                                 std::size_t jobs = 1);

// target matrix (rows × K) for the given labeled rows: one-hot, or a
// multi-hot normalized by the assertion count
Tensor targets_for_rows(const KnowledgeGraph& kg, const std::vector<std::size_t>& labeled_rows);

void write_curve_csv(const std::string& path, const std::vector<EpochRecord>& curve);

}  // namespace mperl
