#pragma once

#include <span>
#include <vector>

namespace bemtta {

using Vec = std::vector<double>;

// Raw per-class scores; the length is the label-space size L.
struct LogitVector {
  Vec values;
};

// Softmax output; entries in [0, 1] summing to 1 within 1e-9.
struct ProbDist {
  Vec probs;
};

bool all_finite(std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);

double norm2(std::span<const double> v);

// v / ||v||. Throws std::invalid_argument on a zero vector.
Vec l2_normalize(const Vec& v);

// Numerically stable softmax: exp(s_i - max) / sum_j exp(s_j - max).
// Throws std::invalid_argument on empty or non-finite input.
ProbDist softmax(const LogitVector& logits);

// Shannon entropy in nats with 0*ln(0) := 0. Lies in [0, ln L].
double entropy(const ProbDist& p);

// Closed-form gradient of entropy(softmax(s)) with respect to the logits:
//
//   dH/ds_i = -sum_l p_l p_i ln(p_i / p_l) = -p_i (ln p_i + H)
//
// Components sum to zero; the gradient of the strict-max coordinate is
// negative.
LogitVector entropy_grad(const LogitVector& logits);

}  // namespace bemtta
