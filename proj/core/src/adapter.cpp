#include "bemtta/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bemtta/eval.hpp"

namespace bemtta {

void adamw_step(Vec& params, const Vec& grad, OptimizerState& state,
                double lr, const AdamWConfig& hyper) {
  if (params.size() != grad.size()) {
    throw std::invalid_argument("adamw_step: shape mismatch");
  }
  if (state.first_moment.size() != params.size()) {
    state.reset(params.size());
  }
  state.step_count += 1;
  const auto t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(hyper.beta1, t);
  const double bias2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (hyper.weight_decay != 0.0) {
      params[i] *= 1.0 - lr * hyper.weight_decay;
    }
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * grad[i];
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * grad[i] * grad[i];
    const double m_hat = m / bias1;
    const double v_hat = v / bias2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

int select_count(int n, double select_ratio) {
  if (n < 1) throw std::invalid_argument("select_count: empty list");
  if (!(select_ratio > 0.0 && select_ratio <= 1.0)) {
    throw std::invalid_argument("select_count: ratio must lie in (0, 1]");
  }
  // the epsilon keeps ceil(0.2 * 5) from landing on 2
  const int c = static_cast<int>(std::ceil(select_ratio * n - 1e-9));
  return std::clamp(c, 1, n);
}

std::vector<int> confidence_select(const std::vector<double>& entropies,
                                   double select_ratio) {
  const int n = static_cast<int>(entropies.size());
  const int count = select_count(n, select_ratio);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  // stable sort keeps ascending index among equal entropies
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return entropies[static_cast<std::size_t>(a)] <
           entropies[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(count));
  std::sort(order.begin(), order.end());
  return order;
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::no_adapt: return "no_adapt";
    case Method::vanilla_em: return "vanilla_em";
    case Method::bem_view: return "bem_view";
    case Method::bem_caption: return "bem_caption";
    case Method::bem_full: return "bem_full";
    case Method::bce_baseline: return "bce_baseline";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view name) {
  for (Method m : {Method::no_adapt, Method::vanilla_em, Method::bem_view,
                   Method::bem_caption, Method::bem_full,
                   Method::bce_baseline}) {
    if (name == method_name(m)) return m;
  }
  return std::nullopt;
}

PromptInit zero_prompt_init(int context_dim) {
  return PromptInit{zero_context(context_dim, PromptRole::view),
                    zero_context(context_dim, PromptRole::caption)};
}

namespace {

bool optimizes_view(Method m) {
  return m == Method::vanilla_em || m == Method::bem_view ||
         m == Method::bem_full || m == Method::bce_baseline;
}

bool optimizes_caption(Method m) {
  return m == Method::vanilla_em || m == Method::bem_caption ||
         m == Method::bem_full || m == Method::bce_baseline;
}

// One view or caption pseudo-view entering a branch.
struct BranchItem {
  const Vec* embedding = nullptr;
  int bind_k = 1;
  const std::vector<int>* label_set = nullptr;  // weak or strong set
};

struct BranchForward {
  std::vector<LogitVector> raw;
  std::vector<BoundLogits> bound;
  // plain prediction entropy; what confidence selection filters on. Bound
  // entropy is useless for ranking confidence: it pins to ln k as soon as
  // the binding saturates, so it would sort by label-set size instead.
  std::vector<double> pred_entropies;
  std::vector<double> bound_entropies;  // the loss term per item
};

BranchForward forward_branch(const std::vector<BranchItem>& items,
                             const std::vector<Vec>& text,
                             double temperature) {
  BranchForward f;
  f.raw.reserve(items.size());
  f.bound.reserve(items.size());
  f.pred_entropies.reserve(items.size());
  f.bound_entropies.reserve(items.size());
  for (const BranchItem& item : items) {
    LogitVector s = logits_from_text(*item.embedding, text, temperature);
    BoundLogits bl = bind_top_k(s, item.bind_k);
    f.pred_entropies.push_back(entropy(softmax(s)));
    f.bound_entropies.push_back(entropy(softmax(bl.bound)));
    f.raw.push_back(std::move(s));
    f.bound.push_back(std::move(bl));
  }
  return f;
}

double branch_loss(const BranchForward& fwd,
                   const std::vector<BranchItem>& items,
                   const std::vector<int>& selected, bool bce) {
  double acc = 0.0;
  for (int idx : selected) {
    const auto i = static_cast<std::size_t>(idx);
    acc += bce ? bce_loss(fwd.raw[i], *items[i].label_set).loss
               : fwd.bound_entropies[i];
  }
  return acc / static_cast<double>(selected.size());
}

Vec branch_context_grad(const BranchForward& fwd,
                        const std::vector<BranchItem>& items,
                        const std::vector<int>& selected,
                        const PromptContext& ctx, const FrozenEncoder& enc,
                        bool bce) {
  Vec grad(ctx.values.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(selected.size());
  for (int idx : selected) {
    const auto i = static_cast<std::size_t>(idx);
    LogitVector upstream;
    if (bce) {
      upstream.values = bce_loss(fwd.raw[i], *items[i].label_set).grad;
    } else {
      // offsets are detached; d(bound)/d(logit) is the identity
      upstream = entropy_grad(fwd.bound[i].bound);
    }
    for (double& u : upstream.values) u *= inv;
    const Vec g = grad_wrt_context(*items[i].embedding, ctx, enc, upstream);
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g[j];
  }
  return grad;
}

// Branch loss re-evaluated at the current contexts with the selected set
// and the binding offsets frozen at their forward-pass values.
double frozen_branch_loss(const BranchForward& fwd,
                          const std::vector<BranchItem>& items,
                          const std::vector<int>& selected,
                          const std::vector<Vec>& text, double temperature,
                          bool bce) {
  double acc = 0.0;
  for (int idx : selected) {
    const auto i = static_cast<std::size_t>(idx);
    LogitVector s = logits_from_text(*items[i].embedding, text, temperature);
    if (bce) {
      acc += bce_loss(s, *items[i].label_set).loss;
    } else {
      const Vec& offsets = fwd.bound[i].offsets;
      for (std::size_t j = 0; j < s.values.size(); ++j) {
        s.values[j] += offsets[j];
      }
      acc += entropy(softmax(s));
    }
  }
  return acc / static_cast<double>(selected.size());
}

void check_adaptation_config(const AdaptationConfig& cfg) {
  if (cfg.n_views < 1) {
    throw std::invalid_argument("adapt_instance: n_views must be >= 1");
  }
  if (!(cfg.select_ratio > 0.0 && cfg.select_ratio <= 1.0)) {
    throw std::invalid_argument(
        "adapt_instance: select_ratio must lie in (0, 1]");
  }
  if (cfg.steps < 1) {
    throw std::invalid_argument("adapt_instance: steps must be >= 1");
  }
  if (cfg.captions_per_view < 1) {
    throw std::invalid_argument(
        "adapt_instance: captions_per_view must be >= 1");
  }
  if (!(cfg.lr_view >= 0.0) || !(cfg.lr_caption >= 0.0)) {
    throw std::invalid_argument("adapt_instance: learning rates must be >= 0");
  }
}

}  // namespace

Adapter::Adapter(const LabelSpace& space, const WorldConfig& config,
                 const CaptionBase& base, const FrozenEncoder& enc,
                 PromptInit init)
    : space_(&space),
      config_(&config),
      base_(&base),
      enc_(&enc),
      init_(std::move(init)) {
  if (static_cast<int>(init_.view.values.size()) != enc.context_dim ||
      static_cast<int>(init_.caption.values.size()) != enc.context_dim) {
    throw std::invalid_argument("Adapter: init context length mismatch");
  }
  init_.view.role = PromptRole::view;
  init_.caption.role = PromptRole::caption;
  reset();
}

void Adapter::reset() {
  view_ctx_ = init_.view;
  caption_ctx_ = init_.caption;
  view_state_.reset(init_.view.values.size());
  caption_state_.reset(init_.caption.values.size());
}

AdaptationOutcome Adapter::adapt_instance(const Instance& instance,
                                          const AdaptationConfig& cfg,
                                          std::uint64_t seed) {
  check_adaptation_config(cfg);
  const Method method = cfg.method;
  const double temperature = enc_->temperature;
  const int label_count = enc_->label_count();

  Rng rng(seed);
  const std::vector<View> views = augment(*space_, instance, cfg.n_views,
                                          config_->drop_prob,
                                          config_->view_sigma, rng);

  // Caption allocation: captions_per_view nearest captions per view, each
  // entering the caption branch as its own pseudo-view. The view's weak
  // set always comes from its top-1 caption.
  AdaptationOutcome out;
  out.weak_sets.resize(views.size());
  std::vector<int> caption_rows;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const RetrievalResult r =
        retrieve(views[i].embedding, *base_, cfg.captions_per_view);
    out.weak_sets[i] = weak_label_set(*base_, r);
    for (int idx : r.caption_indices) {
      caption_rows.push_back(idx);
      out.strong_sets.push_back(
          base_->captions[static_cast<std::size_t>(idx)].label_set);
    }
  }

  // vanilla entropy minimization is the same pipeline with k pinned to 1
  const bool bind = method != Method::vanilla_em;
  const bool bce = method == Method::bce_baseline;
  auto effective_k = [&](const std::vector<int>& label_set) {
    if (!bind) return 1;
    return std::clamp(static_cast<int>(label_set.size()), 1, label_count);
  };

  std::vector<BranchItem> view_items(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    view_items[i] = {&views[i].embedding, effective_k(out.weak_sets[i]),
                     &out.weak_sets[i]};
  }
  std::vector<BranchItem> caption_items(caption_rows.size());
  for (std::size_t j = 0; j < caption_rows.size(); ++j) {
    const auto& cap = base_->captions[static_cast<std::size_t>(caption_rows[j])];
    caption_items[j] = {&cap.embedding, effective_k(out.strong_sets[j]),
                        &out.strong_sets[j]};
  }

  auto run_forward = [&](BranchForward& fv, BranchForward& fc,
                         std::vector<int>& sel_v, std::vector<int>& sel_c) {
    const auto text_v = class_text_embeddings(view_ctx_, *enc_);
    const auto text_c = class_text_embeddings(caption_ctx_, *enc_);
    fv = forward_branch(view_items, text_v, temperature);
    fc = forward_branch(caption_items, text_c, temperature);
    sel_v = confidence_select(fv.pred_entropies, cfg.select_ratio);
    sel_c = confidence_select(fc.pred_entropies, cfg.select_ratio);
  };

  BranchForward fwd_view, fwd_caption;
  std::vector<int> sel_view, sel_caption;
  run_forward(fwd_view, fwd_caption, sel_view, sel_caption);

  out.per_view_entropy = fwd_view.pred_entropies;
  out.per_caption_entropy = fwd_caption.pred_entropies;
  out.selected_view_indices = sel_view;
  out.selected_caption_indices = sel_caption;
  out.loss_value = branch_loss(fwd_view, view_items, sel_view, bce) +
                   branch_loss(fwd_caption, caption_items, sel_caption, bce);

  if (method != Method::no_adapt) {
    for (int step = 0; step < cfg.steps; ++step) {
      if (step > 0) {
        run_forward(fwd_view, fwd_caption, sel_view, sel_caption);
      }
      if (optimizes_view(method)) {
        const Vec g = branch_context_grad(fwd_view, view_items, sel_view,
                                          view_ctx_, *enc_, bce);
        adamw_step(view_ctx_.values, g, view_state_, cfg.lr_view, cfg.adamw);
      }
      if (optimizes_caption(method)) {
        const Vec g = branch_context_grad(fwd_caption, caption_items,
                                          sel_caption, caption_ctx_, *enc_,
                                          bce);
        adamw_step(caption_ctx_.values, g, caption_state_, cfg.lr_caption,
                   cfg.adamw);
      }
    }
  }

  // Inference: the two prompt similarities of the raw test embedding,
  // added without weighting.
  const LogitVector fused_view = logits(instance.embedding, view_ctx_, *enc_);
  const LogitVector fused_caption =
      logits(instance.embedding, caption_ctx_, *enc_);
  out.scores.values.resize(fused_view.values.size());
  for (std::size_t j = 0; j < out.scores.values.size(); ++j) {
    out.scores.values[j] = fused_view.values[j] + fused_caption.values[j];
  }

  if (method == Method::no_adapt) {
    out.loss_after_step = out.loss_value;
  } else {
    const auto text_v = class_text_embeddings(view_ctx_, *enc_);
    const auto text_c = class_text_embeddings(caption_ctx_, *enc_);
    out.loss_after_step =
        frozen_branch_loss(fwd_view, view_items, sel_view, text_v,
                           temperature, bce) +
        frozen_branch_loss(fwd_caption, caption_items, sel_caption, text_c,
                           temperature, bce);
  }

  reset();  // episodic contract: nothing leaks to the next instance
  return out;
}

}  // namespace bemtta
