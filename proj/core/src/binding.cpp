#include "bemtta/binding.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace bemtta {

BoundLogits bind_top_k(const LogitVector& logits, int k) {
  const int label_count = static_cast<int>(logits.values.size());
  if (label_count == 0 || !all_finite(logits.values)) {
    throw std::invalid_argument("bind_top_k: invalid logits");
  }
  if (k < 1 || k > label_count) {
    throw std::invalid_argument("bind_top_k: k out of range [1, L]");
  }

  std::vector<int> order(static_cast<std::size_t>(label_count));
  std::iota(order.begin(), order.end(), 0);
  // stable sort keeps ascending class index among equal scores
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return logits.values[static_cast<std::size_t>(a)] >
           logits.values[static_cast<std::size_t>(b)];
  });

  BoundLogits out;
  out.original = logits;
  out.bound = logits;
  out.k = k;
  out.offsets.assign(logits.values.size(), 0.0);
  out.bound_indices.assign(order.begin(), order.begin() + k);

  const double m = logits.values[static_cast<std::size_t>(order[0])];
  for (int idx : out.bound_indices) {
    const auto i = static_cast<std::size_t>(idx);
    out.offsets[i] = m - logits.values[i];
    out.bound.values[i] = m;  // offset + original == max, exactly
  }
  return out;
}

double bound_entropy(const LogitVector& logits, int k) {
  return entropy(softmax(bind_top_k(logits, k).bound));
}

LogitVector bound_entropy_grad(const LogitVector& logits, int k) {
  return entropy_grad(bind_top_k(logits, k).bound);
}

}  // namespace bemtta
