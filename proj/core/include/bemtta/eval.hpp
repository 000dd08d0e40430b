#pragma once

#include <array>
#include <string>
#include <vector>

#include "bemtta/adapter.hpp"
#include "bemtta/world.hpp"

namespace bemtta {

// Information-retrieval average precision: sort by descending score (ties
// broken by ascending item index), average precision@k over the positive
// ranks. Throws std::invalid_argument when no item is relevant.
double average_precision(const std::vector<double>& scores,
                         const std::vector<bool>& relevance);

double mean_ap(const std::vector<double>& per_class_ap);

inline constexpr std::array<const char*, 4> kBucketNames = {"1-2", "3-4",
                                                            "5-7", "8+"};

// Bucket id for a label count: {1,2} -> 0, {3,4} -> 1, {5,6,7} -> 2,
// >= 8 -> 3.
int bucket_of(int label_count);

// Instance indices partitioned by label count; total and disjoint.
std::array<std::vector<int>, 4> bucket_by_label_count(
    const std::vector<Instance>& instances);

struct BceResult {
  double loss = 0.0;
  Vec grad;  // (sigmoid(s_j) - y_j) / L per class
};

// Mean over classes of per-class sigmoid cross-entropy against the
// multi-hot target built from label_set.
BceResult bce_loss(const LogitVector& logits,
                   const std::vector<int>& label_set);

struct EvalReport {
  std::string method;
  std::vector<double> per_class_ap;  // NaN where the class was excluded
  std::vector<int> excluded_classes;
  double map = 0.0;
  std::array<double, 4> bucket_map{};  // NaN for an empty bucket
  std::array<int, 4> bucket_sizes{};
  double runtime_seconds = 0.0;
  std::string config_digest;
};

// The frozen universe of one experiment.
struct World {
  WorldConfig config;
  LabelSpace space;
  CaptionBase base;
  FrozenEncoder encoder;
};

World build_world(const WorldConfig& config);

// dataset_size instances, each from its own index-derived stream so any
// subset regenerates identically.
std::vector<Instance> gen_dataset(const World& world, int dataset_size);

// Runs every configuration over one shared seeded dataset and scores each
// with mAP plus the label-count bucket breakdown. Episodes may run on
// `jobs` threads; results are identical for any jobs value. Episode
// failures are rethrown with the instance index attached.
std::vector<EvalReport> run_benchmark(
    const World& world, const std::vector<AdaptationConfig>& configs,
    int dataset_size, int jobs = 1, const PromptInit* init = nullptr);

}  // namespace bemtta
