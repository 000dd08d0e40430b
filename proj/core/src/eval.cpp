#include "bemtta/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace bemtta {

double average_precision(const std::vector<double>& scores,
                         const std::vector<bool>& relevance) {
  if (scores.size() != relevance.size() || scores.empty()) {
    throw std::invalid_argument("average_precision: bad input lists");
  }
  const int n = static_cast<int>(scores.size());
  int positives = 0;
  for (bool r : relevance) positives += r ? 1 : 0;
  if (positives == 0) {
    throw std::invalid_argument("average_precision: no relevant items");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] >
           scores[static_cast<std::size_t>(b)];
  });
  double hits = 0.0;
  double acc = 0.0;
  for (int k = 1; k <= n; ++k) {
    if (relevance[static_cast<std::size_t>(order[static_cast<std::size_t>(k - 1)])]) {
      hits += 1.0;
      acc += hits / static_cast<double>(k);
    }
  }
  return acc / static_cast<double>(positives);
}

double mean_ap(const std::vector<double>& per_class_ap) {
  if (per_class_ap.empty()) {
    throw std::invalid_argument("mean_ap: empty AP list");
  }
  double acc = 0.0;
  for (double ap : per_class_ap) acc += ap;
  return acc / static_cast<double>(per_class_ap.size());
}

int bucket_of(int label_count) {
  if (label_count <= 2) return 0;
  if (label_count <= 4) return 1;
  if (label_count <= 7) return 2;
  return 3;
}

std::array<std::vector<int>, 4> bucket_by_label_count(
    const std::vector<Instance>& instances) {
  std::array<std::vector<int>, 4> buckets;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    buckets[static_cast<std::size_t>(
                bucket_of(static_cast<int>(instances[i].labels.size())))]
        .push_back(static_cast<int>(i));
  }
  return buckets;
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

BceResult bce_loss(const LogitVector& logits,
                   const std::vector<int>& label_set) {
  const std::size_t n = logits.values.size();
  if (n == 0 || !all_finite(logits.values)) {
    throw std::invalid_argument("bce_loss: invalid logits");
  }
  std::vector<bool> target(n, false);
  for (int l : label_set) {
    if (l < 0 || l >= static_cast<int>(n)) {
      throw std::invalid_argument("bce_loss: label out of range");
    }
    target[static_cast<std::size_t>(l)] = true;
  }
  BceResult out;
  out.grad.resize(n);
  const double inv = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double s = logits.values[j];
    const double y = target[j] ? 1.0 : 0.0;
    // max(s, 0) - s*y + log(1 + exp(-|s|))
    loss += std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
    out.grad[j] = (sigmoid(s) - y) * inv;
  }
  out.loss = loss * inv;
  return out;
}

World build_world(const WorldConfig& config) {
  World world;
  world.config = config;
  world.space = gen_label_space(config.seed, config.label_count, config.dim);
  Rng base_rng(splitmix64(config.seed ^ 0xba5eba11ull));
  world.base = gen_caption_base(world.space, config.base_size,
                                config.caption_label_weights,
                                config.text_sigma, base_rng);
  world.encoder = make_encoder(world.space, config.context_dim,
                               config.temperature, config.proj_scale,
                               splitmix64(config.seed ^ 0xe4c0deull));
  return world;
}

std::vector<Instance> gen_dataset(const World& world, int dataset_size) {
  if (dataset_size < 1) {
    throw std::invalid_argument("gen_dataset: dataset_size must be >= 1");
  }
  const WorldConfig& cfg = world.config;
  if (cfg.instance_label_weights.empty() ||
      static_cast<int>(cfg.instance_label_weights.size()) >
          cfg.label_count) {
    throw std::invalid_argument("gen_dataset: bad instance_label_weights");
  }
  std::vector<Instance> dataset;
  dataset.reserve(static_cast<std::size_t>(dataset_size));
  for (int i = 0; i < dataset_size; ++i) {
    Rng rng(instance_stream_seed(cfg.seed, i));
    const int count = rng.sample_weighted(cfg.instance_label_weights) + 1;
    dataset.push_back(
        gen_instance(world.space, count, cfg.instance_sigma, rng));
  }
  return dataset;
}

namespace {

// Chunked fork-join over episodes; the partition never affects results
// because each episode is a pure function of (instance, seed).
void parallel_episodes(int n, int jobs,
                       const std::function<void(int, int)>& run_range) {
  jobs = std::clamp(jobs, 1, n);
  if (jobs == 1) {
    run_range(0, n);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(jobs));
  const int chunk = (n + jobs - 1) / jobs;
  for (int w = 0; w < jobs; ++w) {
    const int lo = w * chunk;
    const int hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&, lo, hi] { run_range(lo, hi); });
  }
  for (auto& t : workers) t.join();
}

EvalReport build_report(Method method, const std::vector<Instance>& dataset,
                        const std::vector<LogitVector>& scores,
                        int label_count, double runtime_seconds) {
  EvalReport report;
  report.method = std::string(method_name(method));
  report.runtime_seconds = runtime_seconds;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto class_ap = [&](int cls, const std::vector<int>& subset)
      -> std::pair<bool, double> {
    std::vector<double> s;
    std::vector<bool> rel;
    s.reserve(subset.size());
    rel.reserve(subset.size());
    bool any = false;
    for (int i : subset) {
      const auto& inst = dataset[static_cast<std::size_t>(i)];
      s.push_back(scores[static_cast<std::size_t>(i)]
                      .values[static_cast<std::size_t>(cls)]);
      const bool r = std::binary_search(inst.labels.begin(),
                                        inst.labels.end(), cls);
      rel.push_back(r);
      any = any || r;
    }
    if (!any) return {false, nan};
    return {true, average_precision(s, rel)};
  };

  std::vector<int> all(dataset.size());
  std::iota(all.begin(), all.end(), 0);

  report.per_class_ap.assign(static_cast<std::size_t>(label_count), nan);
  std::vector<double> included;
  for (int cls = 0; cls < label_count; ++cls) {
    const auto [ok, ap] = class_ap(cls, all);
    if (ok) {
      report.per_class_ap[static_cast<std::size_t>(cls)] = ap;
      included.push_back(ap);
    } else {
      report.excluded_classes.push_back(cls);
    }
  }
  report.map = included.empty() ? nan : mean_ap(included);

  const auto buckets = bucket_by_label_count(dataset);
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    report.bucket_sizes[b] = static_cast<int>(buckets[b].size());
    if (buckets[b].empty()) {
      report.bucket_map[b] = nan;
      continue;
    }
    std::vector<double> aps;
    for (int cls = 0; cls < label_count; ++cls) {
      const auto [ok, ap] = class_ap(cls, buckets[b]);
      if (ok) aps.push_back(ap);
    }
    report.bucket_map[b] = aps.empty() ? nan : mean_ap(aps);
  }
  return report;
}

}  // namespace

std::vector<EvalReport> run_benchmark(
    const World& world, const std::vector<AdaptationConfig>& configs,
    int dataset_size, int jobs, const PromptInit* init) {
  if (configs.empty()) {
    throw std::invalid_argument("run_benchmark: no configurations");
  }
  const std::vector<Instance> dataset = gen_dataset(world, dataset_size);
  const PromptInit base_init =
      init ? *init : zero_prompt_init(world.config.context_dim);

  std::vector<EvalReport> reports;
  reports.reserve(configs.size());
  for (const AdaptationConfig& acfg : configs) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<LogitVector> scores(dataset.size());
    std::mutex error_mutex;
    std::string first_error;

    parallel_episodes(
        dataset_size, jobs, [&](int lo, int hi) {
          Adapter adapter(world.space, world.config, world.base,
                          world.encoder, base_init);
          for (int i = lo; i < hi; ++i) {
            try {
              AdaptationOutcome outcome = adapter.adapt_instance(
                  dataset[static_cast<std::size_t>(i)], acfg,
                  episode_stream_seed(world.config.seed, i));
              scores[static_cast<std::size_t>(i)] = std::move(outcome.scores);
            } catch (const std::exception& e) {
              std::lock_guard<std::mutex> lock(error_mutex);
              if (first_error.empty()) {
                first_error =
                    "instance " + std::to_string(i) + ": " + e.what();
              }
              return;
            }
          }
        });
    if (!first_error.empty()) {
      throw std::runtime_error("run_benchmark: " + first_error);
    }

    const std::chrono::duration<double> elapsed =
        std::chrono::steady_clock::now() - t0;
    reports.push_back(build_report(acfg.method, dataset, scores,
                                   world.config.label_count,
                                   elapsed.count()));
  }
  return reports;
}

}  // namespace bemtta
