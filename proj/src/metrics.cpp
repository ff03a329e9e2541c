#include "mperl/metrics.hpp"

#include <algorithm>

#include "mperl/error.hpp"

namespace mperl {

ClassificationMetrics classification_metrics(const std::vector<std::uint32_t>& predicted,
                                             const std::vector<std::uint32_t>& truth,
                                             std::size_t num_classes) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw ContractError("classification_metrics: empty or mismatched prediction list");
  }
  std::size_t correct = 0;
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == truth[i]) {
      ++correct;
      ++tp[predicted[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[truth[i]];
    }
  }
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
  }
  return {static_cast<double>(correct) / static_cast<double>(predicted.size()),
          f1_sum / static_cast<double>(num_classes)};
}

std::size_t filtered_rank(const std::vector<double>& scores, std::uint32_t target,
                          const std::vector<std::uint32_t>& exclude) {
  if (target >= scores.size()) throw ContractError("filtered_rank: target out of range");
  std::vector<bool> skip(scores.size(), false);
  for (std::uint32_t e : exclude) {
    if (e < scores.size() && e != target) skip[e] = true;
  }
  const double ts = scores[target];
  std::size_t rank = 1;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (c == target || skip[c]) continue;
    if (scores[c] > ts || (scores[c] == ts && c < target)) ++rank;
  }
  return rank;
}

void RankingAccumulator::add_rank(std::size_t rank) {
  if (rank == 0) throw ContractError("ranks are 1-based");
  mrr_sum_ += 1.0 / static_cast<double>(rank);
  hit1_ += rank <= 1;
  hit3_ += rank <= 3;
  hit10_ += rank <= 10;
  ++count_;
}

RankingMetrics RankingAccumulator::result() const {
  if (count_ == 0) throw ContractError("no ranks accumulated");
  const double n = static_cast<double>(count_);
  return {mrr_sum_ / n, static_cast<double>(hit1_) / n, static_cast<double>(hit3_) / n,
          static_cast<double>(hit10_) / n, count_};
}

}  // namespace mperl
