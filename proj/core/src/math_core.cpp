#include "bemtta/math_core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bemtta {

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Vec l2_normalize(const Vec& v) {
  const double n = norm2(v);
  if (!(n > 0.0)) {
    throw std::invalid_argument("l2_normalize: zero-norm vector");
  }
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

namespace {

void check_logits(const LogitVector& logits, const char* who) {
  if (logits.values.empty()) {
    throw std::invalid_argument(std::string(who) + ": empty logit vector");
  }
  if (!all_finite(logits.values)) {
    throw std::invalid_argument(std::string(who) + ": non-finite logit");
  }
}

// log p_i = (s_i - max) - ln sum_j exp(s_j - max); finite even where the
// probability itself underflows
Vec log_softmax(const Vec& s) {
  const double m = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double x : s) z += std::exp(x - m);
  const double log_z = std::log(z);
  Vec lp(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) lp[i] = (s[i] - m) - log_z;
  return lp;
}

}  // namespace

ProbDist softmax(const LogitVector& logits) {
  check_logits(logits, "softmax");
  const Vec& s = logits.values;
  const double m = *std::max_element(s.begin(), s.end());
  ProbDist out;
  out.probs.resize(s.size());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.probs[i] = std::exp(s[i] - m);
    z += out.probs[i];
  }
  for (double& p : out.probs) p /= z;
  return out;
}

double entropy(const ProbDist& p) {
  if (p.probs.empty()) throw std::invalid_argument("entropy: empty ProbDist");
  double h = 0.0;
  for (double q : p.probs) {
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

LogitVector entropy_grad(const LogitVector& logits) {
  check_logits(logits, "entropy_grad");
  const Vec lp = log_softmax(logits.values);
  const std::size_t n = lp.size();
  Vec p(n);
  double h = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(lp[i]);
    h -= p[i] * lp[i];
  }
  LogitVector g;
  g.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    g.values[i] = -p[i] * (lp[i] + h);
  }
  return g;
}

}  // namespace bemtta
