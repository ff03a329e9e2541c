#pragma once

#include <cstdint>
#include <vector>

namespace mperl {

struct ClassificationMetrics {
  double accuracy = 0.0;
  double f1_macro = 0.0;
};

// accuracy and unweighted mean of per-class F1 over all `num_classes`
ClassificationMetrics classification_metrics(const std::vector<std::uint32_t>& predicted,
                                             const std::vector<std::uint32_t>& truth,
                                             std::size_t num_classes);

// 1-based rank of `target` by descending score after removing the `exclude`
// classes from the candidate list (the target itself is never excluded);
// ties break toward the smaller class index.
std::size_t filtered_rank(const std::vector<double>& scores, std::uint32_t target,
                          const std::vector<std::uint32_t>& exclude);

struct RankingMetrics {
  double mrr = 0.0;
  double hit1 = 0.0;
  double hit3 = 0.0;
  double hit10 = 0.0;
  std::size_t assertions = 0;
};

class RankingAccumulator {
 public:
  void add_rank(std::size_t rank);
  RankingMetrics result() const;

 private:
  double mrr_sum_ = 0.0;
  std::size_t hit1_ = 0, hit3_ = 0, hit10_ = 0, count_ = 0;
};

}  // namespace mperl
