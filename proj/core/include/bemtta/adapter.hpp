#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "bemtta/binding.hpp"
#include "bemtta/prompt_model.hpp"
#include "bemtta/retrieval.hpp"
#include "bemtta/world.hpp"

namespace bemtta {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct OptimizerState {
  Vec first_moment;
  Vec second_moment;
  long step_count = 0;

  void reset(std::size_t n) {
    first_moment.assign(n, 0.0);
    second_moment.assign(n, 0.0);
    step_count = 0;
  }
};

// One decoupled-weight-decay adaptive-moment update with bias correction.
// Decay is applied multiplicatively before the moment step.
void adamw_step(Vec& params, const Vec& grad, OptimizerState& state,
                double lr, const AdamWConfig& hyper);

// Indices of the ceil(ratio * N) smallest entries, ties broken by
// ascending index. ratio must lie in (0, 1].
std::vector<int> confidence_select(const std::vector<double>& entropies,
                                   double select_ratio);

int select_count(int n, double select_ratio);

enum class Method {
  no_adapt,      // zero-shot fusion, no optimizer step
  vanilla_em,    // both prompts, entropy minimization with k forced to 1
  bem_view,      // view prompt only, bound entropy
  bem_caption,   // caption prompt only, bound entropy
  bem_full,      // both prompts, bound entropy
  bce_baseline,  // both prompts, BCE against weak/strong hard labels
};

std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view name);

struct AdaptationConfig {
  int n_views = 64;
  double select_ratio = 0.1;
  double lr_view = 1e-2;
  double lr_caption = 1e-3;
  int steps = 1;
  int captions_per_view = 1;
  Method method = Method::bem_full;
  AdamWConfig adamw;
};

// Scores plus the per-episode diagnostics the trace output exposes.
// Entropies are the plain prediction entropies confidence selection
// filters on. loss_value sums the view-branch and caption-branch terms at
// the first forward pass (single-prompt methods update only their own
// term); loss_after_step is the same composition re-evaluated after the
// update with the selected sets and binding offsets frozen.
struct AdaptationOutcome {
  LogitVector scores;  // fused per-class scores for the test instance
  std::vector<int> selected_view_indices;
  std::vector<int> selected_caption_indices;
  std::vector<double> per_view_entropy;
  std::vector<double> per_caption_entropy;
  std::vector<std::vector<int>> weak_sets;    // per view
  std::vector<std::vector<int>> strong_sets;  // per caption item
  double loss_value = 0.0;
  double loss_after_step = 0.0;
};

struct PromptInit {
  PromptContext view;
  PromptContext caption;
};

PromptInit zero_prompt_init(int context_dim);

// Owns the prompt pair and optimizer state for episodic adaptation. Each
// adapt_instance call runs one full episode -- augment, retrieve, bind,
// select, update, fuse -- and restores the prompts and optimizer to their
// initial snapshots before returning, so episodes never leak state.
class Adapter {
 public:
  Adapter(const LabelSpace& space, const WorldConfig& config,
          const CaptionBase& base, const FrozenEncoder& enc,
          PromptInit init);

  AdaptationOutcome adapt_instance(const Instance& instance,
                                   const AdaptationConfig& config,
                                   std::uint64_t seed);

  // Restore prompts and optimizer states to the pre-episode snapshots.
  void reset();

  const PromptContext& view_context() const { return view_ctx_; }
  const PromptContext& caption_context() const { return caption_ctx_; }

 private:
  const LabelSpace* space_;
  const WorldConfig* config_;
  const CaptionBase* base_;
  const FrozenEncoder* enc_;
  PromptInit init_;
  PromptContext view_ctx_;
  PromptContext caption_ctx_;
  OptimizerState view_state_;
  OptimizerState caption_state_;
};

}  // namespace bemtta
