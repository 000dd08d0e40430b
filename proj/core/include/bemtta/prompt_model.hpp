#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bemtta/math_core.hpp"
#include "bemtta/world.hpp"

namespace bemtta {

enum class PromptRole { view, caption };

// Learnable context vector behind one prompt. Zero values reproduce the
// hard-prompt class embeddings (the anchors) exactly.
struct PromptContext {
  Vec values;  // length context_dim
  PromptRole role = PromptRole::view;
};

// Frozen toy text encoder. Class embeddings are a differentiable function
// of the context:  t_j(c) = l2_normalize(anchor_j + G c)  with G fixed for
// the lifetime of an experiment. The anchors are copied in so the encoder
// is a self-contained value.
struct FrozenEncoder {
  std::vector<Vec> anchors;
  Vec projection;  // dim x context_dim, row-major, gradient-inert
  int dim = 0;
  int context_dim = 0;
  double temperature = 100.0;

  int label_count() const { return static_cast<int>(anchors.size()); }
};

FrozenEncoder make_encoder(const LabelSpace& space, int context_dim,
                           double temperature, double proj_scale,
                           std::uint64_t seed);

PromptContext zero_context(int context_dim,
                           PromptRole role = PromptRole::view);

// t_j = l2_normalize(anchor_j + G c) for every class. A zero context
// returns the anchors unchanged (the hard-prompt initialization identity).
// Throws std::domain_error if some anchor_j + G c degenerates to zero.
std::vector<Vec> class_text_embeddings(const PromptContext& context,
                                       const FrozenEncoder& enc);

// s_j = temperature * <embedding, t_j>, given precomputed class embeddings.
LogitVector logits_from_text(std::span<const double> embedding,
                             const std::vector<Vec>& text_embeddings,
                             double temperature);

// s_j = temperature * <embedding, t_j(c)>
LogitVector logits(std::span<const double> embedding,
                   const PromptContext& context, const FrozenEncoder& enc);

// Chain rule through the logits and the normalization:
//
//   d s_j / d c = temperature * G^T (I - t_j t_j^T) embedding / ||anchor_j + G c||
//
// Returns sum_j upstream_j * d s_j / d c as a context_dim vector.
Vec grad_wrt_context(std::span<const double> embedding,
                     const PromptContext& context, const FrozenEncoder& enc,
                     const LogitVector& upstream);

}  // namespace bemtta
