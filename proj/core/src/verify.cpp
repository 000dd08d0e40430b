#include "bemtta/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "bemtta/binding.hpp"
#include "bemtta/eval.hpp"
#include "bemtta/math_core.hpp"
#include "bemtta/prompt_model.hpp"
#include "bemtta/rng.hpp"

namespace bemtta {

namespace {

constexpr std::uint64_t kSuiteSeed = 0xbe7a5eedull;

std::string format(const char* fmt, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), fmt, a, b);
  return buf;
}

// logits with a strict maximum (top-1 gap at least `gap`)
LogitVector random_logits(Rng& rng, int label_count, double gap) {
  LogitVector s;
  for (;;) {
    s.values.clear();
    for (int i = 0; i < label_count; ++i) {
      s.values.push_back(-3.0 + 6.0 * rng.uniform());
    }
    Vec sorted = s.values;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    if (sorted[0] - sorted[1] > gap) return s;
  }
}

// logits with strict separation between the k-th and (k+1)-th score
LogitVector random_logits_separated(Rng& rng, int label_count, int k,
                                    double gap) {
  LogitVector s;
  for (;;) {
    s.values.clear();
    for (int i = 0; i < label_count; ++i) {
      s.values.push_back(-3.0 + 6.0 * rng.uniform());
    }
    Vec sorted = s.values;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    if (sorted[static_cast<std::size_t>(k - 1)] -
            sorted[static_cast<std::size_t>(k)] >
        gap) {
      return s;
    }
  }
}

Vec central_diff(const std::function<double(const Vec&)>& f, const Vec& x,
                 double h) {
  Vec g(x.size());
  Vec p = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    const double fp = f(p);
    p[i] = saved - h;
    const double fm = f(p);
    p[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double rel_l2_error(const Vec& got, const Vec& want) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

// brute-force average precision: recount precision@k from scratch at every
// positive rank
double ap_bruteforce(const std::vector<double>& scores,
                     const std::vector<bool>& relevance) {
  const int n = static_cast<int>(scores.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] >
           scores[static_cast<std::size_t>(b)];
  });
  int positives = 0;
  for (bool r : relevance) positives += r ? 1 : 0;
  double acc = 0.0;
  for (int k = 1; k <= n; ++k) {
    const int item = order[static_cast<std::size_t>(k - 1)];
    if (!relevance[static_cast<std::size_t>(item)]) continue;
    int hits = 0;
    for (int j = 0; j < k; ++j) {
      hits += relevance[static_cast<std::size_t>(
                  order[static_cast<std::size_t>(j)])]
                  ? 1
                  : 0;
    }
    acc += static_cast<double>(hits) / static_cast<double>(k);
  }
  return acc / static_cast<double>(positives);
}

using GradFn = std::function<LogitVector(const LogitVector&)>;

struct Suite {
  std::vector<CheckResult> results;

  void run(const std::string& name,
           const std::function<std::pair<bool, std::string>()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    r.name = name;
    try {
      auto [pass, detail] = body();
      r.pass = pass;
      r.detail = std::move(detail);
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    const std::chrono::duration<double> dt =
        std::chrono::steady_clock::now() - t0;
    r.seconds = dt.count();
    results.push_back(std::move(r));
  }
};

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& options) {
  if (!options.inject.empty() && options.inject != "entropy-grad-sign") {
    throw std::invalid_argument("run_verification: unknown inject '" +
                                options.inject + "'");
  }
  const bool flip_sign = options.inject == "entropy-grad-sign";
  const GradFn grad_fn = [flip_sign](const LogitVector& s) {
    LogitVector g = entropy_grad(s);
    if (flip_sign) {
      for (double& x : g.values) x = -x;
    }
    return g;
  };

  Suite suite;

  // Gradient sign law for plain entropy: the strict-max coordinate falls,
  // the rest rise in sum.
  suite.run("prop1-gradient-signs", [&]() -> std::pair<bool, std::string> {
    Rng rng(kSuiteSeed);
    int good = 0;
    const int cases = 1000;
    for (int c = 0; c < cases; ++c) {
      const int label_count = 3 + static_cast<int>(rng.uniform_below(48));
      const LogitVector s = random_logits(rng, label_count, 1e-9);
      const LogitVector g = grad_fn(s);
      const auto arg_max = static_cast<std::size_t>(
          std::max_element(s.values.begin(), s.values.end()) -
          s.values.begin());
      double rest = 0.0;
      for (std::size_t i = 0; i < g.values.size(); ++i) {
        if (i != arg_max) rest += g.values[i];
      }
      if (g.values[arg_max] < 0.0 && rest > 0.0) ++good;
    }
    return {good == cases,
            format("%0.0f/1000 sign cases", static_cast<double>(good))};
  });

  suite.run("gradient-zero-sum", [&]() -> std::pair<bool, std::string> {
    Rng rng(kSuiteSeed + 1);
    double worst = 0.0;
    for (int c = 0; c < 1000; ++c) {
      const int label_count = 3 + static_cast<int>(rng.uniform_below(48));
      const LogitVector s = random_logits(rng, label_count, 0.0);
      const LogitVector g = grad_fn(s);
      const double total =
          std::accumulate(g.values.begin(), g.values.end(), 0.0);
      worst = std::max(worst, std::abs(total));
    }
    return {worst <= 1e-10, format("max |sum g| = %.3e (tol 1e-10)", worst)};
  });

  // Bound-entropy sign law: every bound coordinate falls, the non-bound
  // coordinates rise in sum.
  suite.run("prop2-bound-gradient-signs",
            [&]() -> std::pair<bool, std::string> {
    Rng rng(kSuiteSeed + 2);
    int good = 0;
    const int cases = 1000;
    for (int c = 0; c < cases; ++c) {
      const int label_count = 3 + static_cast<int>(rng.uniform_below(48));
      const int k =
          1 + static_cast<int>(rng.uniform_below(
                  static_cast<std::uint64_t>(label_count - 1)));
      const LogitVector s =
          random_logits_separated(rng, label_count, k, 1e-9);
      const BoundLogits bl = bind_top_k(s, k);
      const LogitVector g = bound_entropy_grad(s, k);
      bool ok = true;
      std::vector<bool> is_bound(s.values.size(), false);
      for (int idx : bl.bound_indices) {
        is_bound[static_cast<std::size_t>(idx)] = true;
        ok = ok && g.values[static_cast<std::size_t>(idx)] < 0.0;
      }
      double rest = 0.0;
      for (std::size_t i = 0; i < g.values.size(); ++i) {
        if (!is_bound[i]) rest += g.values[i];
      }
      ok = ok && rest > 0.0;
      if (ok) ++good;
    }
    return {good == cases,
            format("%0.0f/1000 sign cases", static_cast<double>(good))};
  });

  // Worked 3-class example: [0.9, 0.7, 0.3] with k = 2 binds to
  // [0.9, 0.9, 0.3], replayed per class through the rank rule.
  suite.run("appendix-binding-example",
            [&]() -> std::pair<bool, std::string> {
    const LogitVector s{{0.9, 0.7, 0.3}};
    const BoundLogits bl = bind_top_k(s, 2);
    bool ok = bl.bound.values == Vec{0.9, 0.9, 0.3};
    // per-class replay: Rank(s_j) <= k lifts to max, else unchanged
    const double m = *std::max_element(s.values.begin(), s.values.end());
    for (std::size_t j = 0; j < s.values.size(); ++j) {
      int rank = 1;
      for (std::size_t i = 0; i < s.values.size(); ++i) {
        if (s.values[i] > s.values[j]) ++rank;
      }
      const double replay = rank <= 2 ? m : s.values[j];
      ok = ok && replay == bl.bound.values[j];
    }
    return {ok, "bind([0.9,0.7,0.3], k=2) -> [0.9,0.9,0.3]"};
  });

  suite.run("fd-entropy-grad", [&]() -> std::pair<bool, std::string> {
    Rng rng(kSuiteSeed + 3);
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
      const int label_count = 3 + static_cast<int>(rng.uniform_below(10));
      const LogitVector s = random_logits(rng, label_count, 0.0);
      const Vec fd = central_diff(
          [](const Vec& x) { return entropy(softmax(LogitVector{x})); },
          s.values, 1e-5);
      worst = std::max(worst, rel_l2_error(grad_fn(s).values, fd));
    }
    return {worst < 1e-4, format("max rel err = %.3e (tol 1e-4)", worst)};
  });

  suite.run("fd-bound-entropy-grad", [&]() -> std::pair<bool, std::string> {
    Rng rng(kSuiteSeed + 4);
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
      const int label_count = 4 + static_cast<int>(rng.uniform_below(9));
      const int k =
          1 + static_cast<int>(rng.uniform_below(
                  static_cast<std::uint64_t>(label_count - 1)));
      const LogitVector s =
          random_logits_separated(rng, label_count, k, 1e-3);
      const Vec offsets = bind_top_k(s, k).offsets;  // frozen at the center
      const Vec fd = central_diff(
          [&](const Vec& x) {
            Vec shifted = x;
            for (std::size_t i = 0; i < shifted.size(); ++i) {
              shifted[i] += offsets[i];
            }
            return entropy(softmax(LogitVector{shifted}));
          },
          s.values, 1e-5);
      worst = std::max(worst, rel_l2_error(bound_entropy_grad(s, k).values, fd));
    }
    return {worst < 1e-4, format("max rel err = %.3e (tol 1e-4)", worst)};
  });

  suite.run("fd-context-grad", [&]() -> std::pair<bool, std::string> {
    Rng rng(kSuiteSeed + 5);
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
      const int label_count = 6;
      const int dim = 16;
      const int context_dim = 8;
      FrozenEncoder enc;
      enc.dim = dim;
      enc.context_dim = context_dim;
      enc.temperature = 7.5;
      for (int l = 0; l < label_count; ++l) {
        enc.anchors.push_back(
            l2_normalize(rng.normal_vector(static_cast<std::size_t>(dim))));
      }
      enc.projection.resize(static_cast<std::size_t>(dim * context_dim));
      for (double& g : enc.projection) g = 0.4 * rng.normal();
      const Vec embedding =
          l2_normalize(rng.normal_vector(static_cast<std::size_t>(dim)));
      PromptContext ctx = zero_context(context_dim);
      for (double& x : ctx.values) x = -0.5 + rng.uniform();
      LogitVector upstream;
      for (int l = 0; l < label_count; ++l) {
        upstream.values.push_back(-1.0 + 2.0 * rng.uniform());
      }
      const Vec analytic = grad_wrt_context(embedding, ctx, enc, upstream);
      const Vec fd = central_diff(
          [&](const Vec& c_values) {
            PromptContext probe = ctx;
            probe.values = c_values;
            const LogitVector s = logits(embedding, probe, enc);
            double acc = 0.0;
            for (std::size_t j = 0; j < s.values.size(); ++j) {
              acc += upstream.values[j] * s.values[j];
            }
            return acc;
          },
          ctx.values, 1e-5);
      worst = std::max(worst, rel_l2_error(analytic, fd));
    }
    return {worst < 1e-4, format("max rel err = %.3e (tol 1e-4)", worst)};
  });

  suite.run("fd-bce-grad", [&]() -> std::pair<bool, std::string> {
    Rng rng(kSuiteSeed + 6);
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
      const int label_count = 3 + static_cast<int>(rng.uniform_below(13));
      const LogitVector s = random_logits(rng, label_count, 0.0);
      const int set_size =
          1 + static_cast<int>(rng.uniform_below(
                  static_cast<std::uint64_t>(std::min(label_count, 5))));
      const std::vector<int> labels =
          rng.sample_without_replacement(label_count, set_size);
      const Vec fd = central_diff(
          [&](const Vec& x) { return bce_loss(LogitVector{x}, labels).loss; },
          s.values, 1e-5);
      worst = std::max(worst, rel_l2_error(bce_loss(s, labels).grad, fd));
    }
    return {worst < 1e-4, format("max rel err = %.3e (tol 1e-4)", worst)};
  });

  // Descent law at the logit level: one plain step on the bound logits
  // strictly raises every bound probability and strictly shrinks the
  // non-bound mass.
  suite.run("logit-descent", [&]() -> std::pair<bool, std::string> {
    Rng rng(kSuiteSeed + 7);
    int good = 0;
    const int cases = 1000;
    const double alpha = 1e-3;
    for (int c = 0; c < cases; ++c) {
      const int label_count = 3 + static_cast<int>(rng.uniform_below(48));
      const int k =
          1 + static_cast<int>(rng.uniform_below(
                  static_cast<std::uint64_t>(label_count - 1)));
      const LogitVector s =
          random_logits_separated(rng, label_count, k, 1e-3);
      const BoundLogits bl = bind_top_k(s, k);
      const LogitVector g = entropy_grad(bl.bound);
      LogitVector updated = bl.bound;
      for (std::size_t i = 0; i < updated.values.size(); ++i) {
        updated.values[i] -= alpha * g.values[i];
      }
      const ProbDist before = softmax(bl.bound);
      const ProbDist after = softmax(updated);
      bool ok = true;
      double bound_before = 0.0;
      double bound_after = 0.0;
      for (int idx : bl.bound_indices) {
        const auto i = static_cast<std::size_t>(idx);
        ok = ok && after.probs[i] > before.probs[i];
        bound_before += before.probs[i];
        bound_after += after.probs[i];
      }
      ok = ok && (1.0 - bound_after) < (1.0 - bound_before);
      if (ok) ++good;
    }
    return {good == cases,
            format("%0.0f/1000 descent cases", static_cast<double>(good))};
  });

  suite.run("ap-brute-force", [&]() -> std::pair<bool, std::string> {
    Rng rng(kSuiteSeed + 8);
    int good = 0;
    const int cases = 1000;
    for (int c = 0; c < cases; ++c) {
      const int n = 1 + static_cast<int>(rng.uniform_below(20));
      std::vector<double> scores;
      std::vector<bool> relevance(static_cast<std::size_t>(n), false);
      bool any = false;
      for (int i = 0; i < n; ++i) {
        // coarse score grid so ties actually occur
        scores.push_back(static_cast<double>(rng.uniform_below(10)) / 2.0);
        const bool r = rng.bernoulli(0.4);
        relevance[static_cast<std::size_t>(i)] = r;
        any = any || r;
      }
      if (!any) relevance[static_cast<std::size_t>(rng.uniform_below(
                    static_cast<std::uint64_t>(n)))] = true;
      if (average_precision(scores, relevance) ==
          ap_bruteforce(scores, relevance)) {
        ++good;
      }
    }
    return {good == cases,
            format("%0.0f/1000 exact matches", static_cast<double>(good))};
  });

  return suite.results;
}

int run_verification_report(const VerifyOptions& options, std::ostream& out) {
  const std::vector<CheckResult> results = run_verification(options);
  bool all_pass = true;
  for (const CheckResult& r : results) {
    char line[256];
    std::snprintf(line, sizeof(line), "[%s] %-28s %s (%.3f s)\n",
                  r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(),
                  r.seconds);
    out << line;
    all_pass = all_pass && r.pass;
  }
  out << (all_pass ? "verification passed\n" : "verification FAILED\n");
  return all_pass ? 0 : 1;
}

}  // namespace bemtta
