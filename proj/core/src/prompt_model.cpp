#include "bemtta/prompt_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bemtta {

FrozenEncoder make_encoder(const LabelSpace& space, int context_dim,
                           double temperature, double proj_scale,
                           std::uint64_t seed) {
  if (context_dim < 1) {
    throw std::invalid_argument("make_encoder: context_dim must be >= 1");
  }
  FrozenEncoder enc;
  enc.anchors = space.anchors;
  enc.dim = space.dim;
  enc.context_dim = context_dim;
  enc.temperature = temperature;
  enc.projection.resize(static_cast<std::size_t>(space.dim) *
                        static_cast<std::size_t>(context_dim));
  Rng rng(seed);
  for (double& g : enc.projection) g = proj_scale * rng.normal();
  return enc;
}

PromptContext zero_context(int context_dim, PromptRole role) {
  PromptContext ctx;
  ctx.values.assign(static_cast<std::size_t>(context_dim), 0.0);
  ctx.role = role;
  return ctx;
}

namespace {

void check_context(const PromptContext& context, const FrozenEncoder& enc,
                   const char* who) {
  if (static_cast<int>(context.values.size()) != enc.context_dim) {
    throw std::invalid_argument(std::string(who) +
                                ": context length mismatch");
  }
  if (!all_finite(context.values)) {
    throw std::invalid_argument(std::string(who) + ": non-finite context");
  }
}

// G c, a dim-length displacement shared by every class
Vec project_context(const FrozenEncoder& enc, const Vec& c) {
  Vec u(static_cast<std::size_t>(enc.dim), 0.0);
  for (int i = 0; i < enc.dim; ++i) {
    const double* row = enc.projection.data() +
                        static_cast<std::size_t>(i) * enc.context_dim;
    double s = 0.0;
    for (int j = 0; j < enc.context_dim; ++j) s += row[j] * c[static_cast<std::size_t>(j)];
    u[static_cast<std::size_t>(i)] = s;
  }
  return u;
}

bool is_zero(const Vec& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

std::vector<Vec> class_text_embeddings(const PromptContext& context,
                                       const FrozenEncoder& enc) {
  check_context(context, enc, "class_text_embeddings");
  if (is_zero(context.values)) {
    return enc.anchors;  // hard-prompt init: anchors bit-for-bit
  }
  const Vec u = project_context(enc, context.values);
  std::vector<Vec> text;
  text.reserve(enc.anchors.size());
  for (const Vec& anchor : enc.anchors) {
    Vec w(anchor.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = anchor[i] + u[i];
    const double n = norm2(w);
    if (!(n > 0.0)) {
      throw std::domain_error(
          "class_text_embeddings: degenerate class embedding");
    }
    for (double& x : w) x /= n;
    text.push_back(std::move(w));
  }
  return text;
}

LogitVector logits_from_text(std::span<const double> embedding,
                             const std::vector<Vec>& text_embeddings,
                             double temperature) {
  LogitVector s;
  s.values.reserve(text_embeddings.size());
  for (const Vec& t : text_embeddings) {
    s.values.push_back(temperature * dot(embedding, t));
  }
  return s;
}

LogitVector logits(std::span<const double> embedding,
                   const PromptContext& context, const FrozenEncoder& enc) {
  return logits_from_text(embedding, class_text_embeddings(context, enc),
                          enc.temperature);
}

Vec grad_wrt_context(std::span<const double> embedding,
                     const PromptContext& context, const FrozenEncoder& enc,
                     const LogitVector& upstream) {
  check_context(context, enc, "grad_wrt_context");
  if (static_cast<int>(upstream.values.size()) != enc.label_count()) {
    throw std::invalid_argument("grad_wrt_context: upstream length mismatch");
  }
  const Vec u = project_context(enc, context.values);

  // accumulate r = sum_j upstream_j (I - t_j t_j^T) e / ||w_j|| in
  // embedding space, then push through G^T once
  Vec r(static_cast<std::size_t>(enc.dim), 0.0);
  Vec w(static_cast<std::size_t>(enc.dim));
  for (std::size_t j = 0; j < enc.anchors.size(); ++j) {
    const double coeff = upstream.values[j];
    if (coeff == 0.0) continue;
    const Vec& anchor = enc.anchors[j];
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = anchor[i] + u[i];
    const double n = norm2(w);
    if (!(n > 0.0)) {
      throw std::domain_error("grad_wrt_context: degenerate class embedding");
    }
    double te = 0.0;  // <t_j, e> with t_j = w / n
    for (std::size_t i = 0; i < w.size(); ++i) te += (w[i] / n) * embedding[i];
    for (std::size_t i = 0; i < w.size(); ++i) {
      r[i] += coeff * (embedding[i] - te * (w[i] / n)) / n;
    }
  }

  Vec grad(static_cast<std::size_t>(enc.context_dim), 0.0);
  for (int i = 0; i < enc.dim; ++i) {
    const double ri = enc.temperature * r[static_cast<std::size_t>(i)];
    if (ri == 0.0) continue;
    const double* row = enc.projection.data() +
                        static_cast<std::size_t>(i) * enc.context_dim;
    for (int j = 0; j < enc.context_dim; ++j) {
      grad[static_cast<std::size_t>(j)] += ri * row[j];
    }
  }
  return grad;
}

}  // namespace bemtta
