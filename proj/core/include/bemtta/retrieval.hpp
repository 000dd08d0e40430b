#pragma once

#include <span>
#include <vector>

#include "bemtta/world.hpp"

namespace bemtta {

// Captions paired to a query, best first. Similarities are dot products of
// unit vectors (cosine); ties resolve to the lower caption index.
struct RetrievalResult {
  std::vector<int> caption_indices;
  Vec similarities;  // non-increasing, parallel to caption_indices
};

// Exhaustive cosine scan over the caption store. top_k must lie in
// [1, base.size()]; throws std::invalid_argument otherwise or on an empty
// base.
RetrievalResult retrieve(std::span<const double> query,
                         const CaptionBase& base, int top_k);

// The strong label set of the top-1 retrieved caption, reused as the
// query view's pseudo-positive (weak) label set. Its size is the view's
// binding k.
std::vector<int> weak_label_set(const CaptionBase& base,
                                const RetrievalResult& result);

}  // namespace bemtta
