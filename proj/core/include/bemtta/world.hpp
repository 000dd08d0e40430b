#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bemtta/math_core.hpp"
#include "bemtta/rng.hpp"

namespace bemtta {

// Shared embedding space: one unit anchor per class label. Fully determined
// by (seed, label_count, dim).
struct LabelSpace {
  int label_count = 0;
  int dim = 0;
  std::vector<Vec> anchors;
  std::uint64_t seed = 0;
};

// A synthetic multi-label item: its positive label set and a unit embedding
// built from the label anchors plus isotropic noise.
struct Instance {
  std::vector<int> labels;  // ascending, non-empty
  Vec embedding;
};

// One augmented view: the subset of parent labels it kept (possibly empty
// for a pure-noise view) and its own embedding.
struct View {
  std::vector<int> kept_labels;
  Vec embedding;
};

// A pseudo-view caption with its strong label set, known by construction.
struct Caption {
  std::vector<int> label_set;  // ascending, 1..5 labels
  Vec embedding;
};

// Offline caption store. `matrix` is the row-major base_size x dim copy of
// the caption embeddings kept contiguous for retrieval scans; row i always
// equals captions[i].embedding.
struct CaptionBase {
  std::vector<Caption> captions;
  Vec matrix;
  int dim = 0;

  int size() const { return static_cast<int>(captions.size()); }
  std::span<const double> row(int i) const {
    return {matrix.data() + static_cast<std::size_t>(i) * dim,
            static_cast<std::size_t>(dim)};
  }
};

LabelSpace gen_label_space(std::uint64_t seed, int label_count, int dim);

// Instance with an explicit label set: l2_normalize(sum of anchors + sigma*noise).
Instance make_instance(const LabelSpace& space, std::vector<int> labels,
                       double noise_sigma, Rng& rng);

// Instance with `label_count` labels drawn uniformly without replacement.
Instance gen_instance(const LabelSpace& space, int label_count,
                      double noise_sigma, Rng& rng);

// Label-dropping augmentation: each view keeps each parent label with
// probability 1 - drop_prob and rebuilds its embedding from the kept
// anchors with view_sigma noise. A view that drops everything becomes pure
// normalized noise. drop_prob must lie in [0, 1).
std::vector<View> augment(const LabelSpace& space, const Instance& instance,
                          int n_views, double drop_prob, double view_sigma,
                          Rng& rng);

// Synthetic caption store: label-set sizes drawn from count_weights (index
// i weights size i+1, at most 5 sizes), embeddings built like instances
// with text_sigma noise.
CaptionBase gen_caption_base(const LabelSpace& space, int base_size,
                             const std::vector<double>& count_weights,
                             double text_sigma, Rng& rng);

// Everything that pins the frozen universe of one experiment: the label
// space, the caption store, the toy encoder, and the noise/augmentation
// levels instances are generated with.
struct WorldConfig {
  std::uint64_t seed = 1;
  int label_count = 20;
  int dim = 64;
  int base_size = 2000;
  double instance_sigma = 0.75;
  double view_sigma = 0.15;
  double text_sigma = 0.1;
  double drop_prob = 0.3;
  // weight for |labels| = i+1; mean ~3 labels per instance
  std::vector<double> instance_label_weights = {0.20, 0.25, 0.22, 0.13,
                                                0.08, 0.05, 0.04, 0.03};
  // weight for caption label-set size i+1 (capped at 5)
  std::vector<double> caption_label_weights = {0.15, 0.25, 0.25, 0.20, 0.15};
  int context_dim = 16;
  double temperature = 100.0;
  double proj_scale = 0.25;  // std-dev of the frozen projection entries
};

// Stream-seed derivation. Instance streams mix the global seed with the
// instance index so episodes are order-independent; the two streams per
// instance (generation, adaptation) are salted apart.
std::uint64_t instance_stream_seed(std::uint64_t global_seed, int index);
std::uint64_t episode_stream_seed(std::uint64_t global_seed, int index);

}  // namespace bemtta
