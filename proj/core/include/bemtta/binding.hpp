#pragma once

#include <vector>

#include "bemtta/math_core.hpp"

namespace bemtta {

// Result of lifting the top-k logits to the shared maximum. The offsets are
// gradient-inert constants: they move the forward value but contribute
// nothing to any derivative taken through the bound logits.
struct BoundLogits {
  LogitVector original;
  LogitVector bound;
  int k = 0;
  // the k lifted class indices, in descending score order
  // (ties broken by ascending class index)
  std::vector<int> bound_indices;
  // offsets[i] = max(original) - original[i] on bound indices, 0 elsewhere
  Vec offsets;
};

// Lift the k highest logits to the maximum. Rank ties resolve in favor of
// the lower class index. Throws std::invalid_argument unless 1 <= k <= L.
BoundLogits bind_top_k(const LogitVector& logits, int k);

// entropy(softmax(bind_top_k(logits, k).bound))
double bound_entropy(const LogitVector& logits, int k);

// Gradient of the bound entropy with respect to the original logits.
// Offsets are constants and d(bound_i)/d(s_i) = 1 for every coordinate, so
// this is the plain entropy gradient evaluated at the bound logits. Under
// strict top-k separation every bound coordinate's gradient is negative and
// the non-bound coordinates sum to the matching positive mass.
LogitVector bound_entropy_grad(const LogitVector& logits, int k);

}  // namespace bemtta
