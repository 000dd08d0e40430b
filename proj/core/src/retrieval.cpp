#include "bemtta/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace bemtta {

RetrievalResult retrieve(std::span<const double> query,
                         const CaptionBase& base, int top_k) {
  const int n = base.size();
  if (n == 0) throw std::invalid_argument("retrieve: empty caption base");
  if (top_k < 1 || top_k > n) {
    throw std::invalid_argument("retrieve: top_k out of range [1, B]");
  }
  if (static_cast<int>(query.size()) != base.dim) {
    throw std::invalid_argument("retrieve: query dimension mismatch");
  }

  Vec sims(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    sims[static_cast<std::size_t>(i)] = dot(query, base.row(i));
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + top_k, order.end(),
                    [&](int a, int b) {
                      const double sa = sims[static_cast<std::size_t>(a)];
                      const double sb = sims[static_cast<std::size_t>(b)];
                      if (sa != sb) return sa > sb;
                      return a < b;
                    });

  RetrievalResult result;
  result.caption_indices.assign(order.begin(), order.begin() + top_k);
  result.similarities.reserve(static_cast<std::size_t>(top_k));
  for (int idx : result.caption_indices) {
    result.similarities.push_back(sims[static_cast<std::size_t>(idx)]);
  }
  return result;
}

std::vector<int> weak_label_set(const CaptionBase& base,
                                const RetrievalResult& result) {
  if (result.caption_indices.empty()) {
    throw std::invalid_argument("weak_label_set: empty retrieval result");
  }
  const int top = result.caption_indices.front();
  return base.captions[static_cast<std::size_t>(top)].label_set;
}

}  // namespace bemtta
