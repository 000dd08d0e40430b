#include "bemtta/world.hpp"

#include <algorithm>
#include <stdexcept>

namespace bemtta {

LabelSpace gen_label_space(std::uint64_t seed, int label_count, int dim) {
  if (label_count < 2) {
    throw std::invalid_argument("gen_label_space: label_count must be >= 2");
  }
  if (dim < 8) {
    throw std::invalid_argument("gen_label_space: dim must be >= 8");
  }
  LabelSpace space;
  space.label_count = label_count;
  space.dim = dim;
  space.seed = seed;
  space.anchors.reserve(static_cast<std::size_t>(label_count));
  Rng rng(seed);
  for (int l = 0; l < label_count; ++l) {
    space.anchors.push_back(
        l2_normalize(rng.normal_vector(static_cast<std::size_t>(dim))));
  }
  return space;
}

namespace {

Vec labeled_embedding(const LabelSpace& space, const std::vector<int>& labels,
                      double noise_sigma, Rng& rng) {
  Vec sum(static_cast<std::size_t>(space.dim), 0.0);
  for (int l : labels) {
    if (l < 0 || l >= space.label_count) {
      throw std::invalid_argument("labeled_embedding: label out of range");
    }
    const Vec& a = space.anchors[static_cast<std::size_t>(l)];
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += a[i];
  }
  if (noise_sigma > 0.0) {
    const Vec noise = rng.normal_vector(sum.size());
    for (std::size_t i = 0; i < sum.size(); ++i) {
      sum[i] += noise_sigma * noise[i];
    }
  }
  return l2_normalize(sum);
}

}  // namespace

Instance make_instance(const LabelSpace& space, std::vector<int> labels,
                       double noise_sigma, Rng& rng) {
  if (labels.empty()) {
    throw std::invalid_argument("make_instance: empty label set");
  }
  std::sort(labels.begin(), labels.end());
  Instance inst;
  inst.embedding = labeled_embedding(space, labels, noise_sigma, rng);
  inst.labels = std::move(labels);
  return inst;
}

Instance gen_instance(const LabelSpace& space, int label_count,
                      double noise_sigma, Rng& rng) {
  if (label_count < 1 || label_count > space.label_count) {
    throw std::invalid_argument("gen_instance: label_count out of range");
  }
  return make_instance(
      space, rng.sample_without_replacement(space.label_count, label_count),
      noise_sigma, rng);
}

std::vector<View> augment(const LabelSpace& space, const Instance& instance,
                          int n_views, double drop_prob, double view_sigma,
                          Rng& rng) {
  if (n_views < 1) throw std::invalid_argument("augment: n_views must be >= 1");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) {
    throw std::invalid_argument("augment: drop_prob must lie in [0, 1)");
  }
  std::vector<View> views;
  views.reserve(static_cast<std::size_t>(n_views));
  const double keep_prob = 1.0 - drop_prob;
  for (int v = 0; v < n_views; ++v) {
    View view;
    for (int l : instance.labels) {
      if (rng.bernoulli(keep_prob)) view.kept_labels.push_back(l);
    }
    if (view.kept_labels.empty()) {
      // the noisy view: no target label content at all
      view.embedding = l2_normalize(
          rng.normal_vector(static_cast<std::size_t>(space.dim)));
    } else {
      view.embedding =
          labeled_embedding(space, view.kept_labels, view_sigma, rng);
    }
    views.push_back(std::move(view));
  }
  return views;
}

CaptionBase gen_caption_base(const LabelSpace& space, int base_size,
                             const std::vector<double>& count_weights,
                             double text_sigma, Rng& rng) {
  if (base_size < 1) {
    throw std::invalid_argument("gen_caption_base: base_size must be >= 1");
  }
  if (count_weights.empty() || count_weights.size() > 5) {
    throw std::invalid_argument(
        "gen_caption_base: count_weights must cover sizes 1..5");
  }
  if (static_cast<int>(count_weights.size()) > space.label_count) {
    throw std::invalid_argument(
        "gen_caption_base: label-set sizes exceed label count");
  }
  CaptionBase base;
  base.dim = space.dim;
  base.captions.reserve(static_cast<std::size_t>(base_size));
  base.matrix.reserve(static_cast<std::size_t>(base_size) *
                      static_cast<std::size_t>(space.dim));
  for (int b = 0; b < base_size; ++b) {
    const int count = rng.sample_weighted(count_weights) + 1;
    Instance proto = gen_instance(space, count, text_sigma, rng);
    Caption cap;
    cap.label_set = std::move(proto.labels);
    cap.embedding = std::move(proto.embedding);
    base.matrix.insert(base.matrix.end(), cap.embedding.begin(),
                       cap.embedding.end());
    base.captions.push_back(std::move(cap));
  }
  return base;
}

std::uint64_t instance_stream_seed(std::uint64_t global_seed, int index) {
  return splitmix64(global_seed) ^
         splitmix64(static_cast<std::uint64_t>(index) + 1);
}

std::uint64_t episode_stream_seed(std::uint64_t global_seed, int index) {
  return instance_stream_seed(global_seed, index) ^ 0x9e3779b97f4a7c15ull;
}

}  // namespace bemtta
