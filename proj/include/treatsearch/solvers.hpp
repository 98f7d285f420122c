#pragma once

#include <limits>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "treatsearch/core.hpp"
#include "treatsearch/model.hpp"
#include "treatsearch/stopping.hpp"

namespace treatsearch {

/// Decision function over histories; returns an action id or kStop. Must
/// never return an action already present in the history.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual int decide(const History& h) const = 0;
};

namespace detail {

/// All histories for one context, grouped by trial count. Trials are kept in
/// ascending action order so each set appears exactly once.
inline std::vector<std::vector<History>> enumerate_histories(const ProblemSpec& spec,
                                                             const Context& context) {
  std::vector<std::vector<History>> by_size(static_cast<std::size_t>(spec.num_actions) + 1);
  by_size[0].push_back(History{context, {}});
  for (int s = 0; s < spec.num_actions; ++s) {
    for (const History& h : by_size[static_cast<std::size_t>(s)]) {
      int first = h.trials.empty() ? 0 : h.trials.back().action + 1;
      for (int a = first; a < spec.num_actions; ++a) {
        for (int y = 0; y < spec.num_outcomes(); ++y) {
          by_size[static_cast<std::size_t>(s) + 1].push_back(extend(h, a, y));
        }
      }
    }
  }
  return by_size;
}

}  // namespace detail

/// Constrained dynamic-programming policy: per-history value and argmax
/// tables, with stopping restricted to histories where gamma holds.
class CdpPolicy : public Policy {
 public:
  struct Entry {
    double value = 0.0;
    int choice = kStop;
    bool stop_allowed = false;
  };

  CdpPolicy(ProblemSpec spec, StoppingConfig cfg, std::vector<Context> contexts)
      : spec_(std::move(spec)), cfg_(cfg), contexts_(std::move(contexts)) {}

  int decide(const History& h) const override { return entry(h).choice; }

  const Entry& entry(const History& h) const {
    auto it = table_.find(canonicalize(spec_, h));
    if (it == table_.end()) throw SpecMismatch("history outside solved context set");
    return it->second;
  }

  /// Predicted expected search length for one context: -V(empty history).
  double expected_length(const Context& context) const {
    return -entry(History{context, {}}).value;
  }

  /// Mean predicted search length over the solved contexts.
  double expected_length() const {
    double total = 0.0;
    for (const Context& c : contexts_) total += expected_length(c);
    return total / static_cast<double>(contexts_.size());
  }

  const ProblemSpec& spec() const { return spec_; }
  const StoppingConfig& stopping() const { return cfg_; }
  const std::vector<Context>& contexts() const { return contexts_; }
  std::unordered_map<CanonicalKey, Entry, CanonicalKeyHash>& table() { return table_; }
  const std::unordered_map<CanonicalKey, Entry, CanonicalKeyHash>& table() const {
    return table_;
  }

 private:
  ProblemSpec spec_;
  StoppingConfig cfg_;
  std::vector<Context> contexts_;
  std::unordered_map<CanonicalKey, Entry, CanonicalKeyHash> table_;
};

inline std::shared_ptr<CdpPolicy> solve_cdp(const OutcomeModel& model,
                                            const StoppingConfig& cfg,
                                            const std::vector<Context>& contexts) {
  const ProblemSpec& spec = model.spec();
  auto policy = std::make_shared<CdpPolicy>(spec, cfg, contexts);
  auto& table = policy->table();
  for (const Context& context : contexts) {
    validate_context(spec, context);
    auto by_size = detail::enumerate_histories(spec, context);
    for (int s = spec.num_actions; s >= 0; --s) {
      for (const History& h : by_size[static_cast<std::size_t>(s)]) {
        CdpPolicy::Entry e;
        e.stop_allowed = gamma(model, h, cfg);
        double best = -std::numeric_limits<double>::infinity();
        int choice = kStop;
        if (e.stop_allowed) best = 0.0;  // stop reward; unavailable otherwise
        for (int a : untried(spec, h)) {
          std::vector<double> p = model.predict(h, a);
          double q = -1.0;
          for (int y = 0; y < spec.num_outcomes(); ++y) {
            double py = p[static_cast<std::size_t>(y)];
            if (py == 0.0) continue;
            q += py * table.at(canonicalize(spec, extend(h, a, y))).value;
          }
          if (q > best) {
            best = q;
            choice = a;
          }
        }
        e.value = best;
        e.choice = choice;
        table.emplace(canonicalize(spec, h), e);
      }
    }
  }
  return policy;
}

/// One-step greedy score: expected value of action a restricted to outcomes
/// that strictly beat the best observed so far.
inline double greedy_score(const OutcomeModel& model, const History& h, int a) {
  const ProblemSpec& spec = model.spec();
  if (h.tried(a)) throw RepeatedAction("greedy_score on tried action");
  std::optional<double> mu = best_so_far(spec, h);
  const double bar = mu ? *mu : -std::numeric_limits<double>::infinity();
  std::vector<double> p = model.predict(h, a);
  double score = 0.0;
  for (int y = 0; y < spec.num_outcomes(); ++y) {
    double v = spec.value(y);
    if (v > bar) score += p[static_cast<std::size_t>(y)] * v;
  }
  return score;
}

inline int decide_greedy(const OutcomeModel& model, const StoppingConfig& cfg,
                         const History& h) {
  if (gamma(model, h, cfg)) return kStop;
  int choice = kStop;
  double best = -std::numeric_limits<double>::infinity();
  for (int a : untried(model.spec(), h)) {
    double score = greedy_score(model, h, a);
    if (score > best) {
      best = score;
      choice = a;
    }
  }
  return choice;
}

/// Constrained greedy policy; computes decisions on demand from the model.
class GreedyPolicy : public Policy {
 public:
  GreedyPolicy(std::shared_ptr<const OutcomeModel> model, StoppingConfig cfg)
      : model_(std::move(model)), cfg_(cfg) {}

  int decide(const History& h) const override { return decide_greedy(*model_, cfg_, h); }

  const OutcomeModel& model() const { return *model_; }
  const StoppingConfig& stopping() const { return cfg_; }

 private:
  std::shared_ptr<const OutcomeModel> model_;
  StoppingConfig cfg_;
};

/// Model-free-style dynamic programming baseline: terminal reward is the best
/// outcome so far minus a per-trial penalty lambda.
class NdpPolicy : public Policy {
 public:
  struct Entry {
    double value = 0.0;
    int choice = kStop;
  };

  NdpPolicy(ProblemSpec spec, double lambda, std::vector<Context> contexts)
      : spec_(std::move(spec)), lambda_(lambda), contexts_(std::move(contexts)) {}

  int decide(const History& h) const override {
    auto it = table_.find(canonicalize(spec_, h));
    if (it == table_.end()) throw SpecMismatch("history outside solved context set");
    return it->second.choice;
  }

  double lambda() const { return lambda_; }
  const ProblemSpec& spec() const { return spec_; }
  const std::vector<Context>& contexts() const { return contexts_; }
  std::unordered_map<CanonicalKey, Entry, CanonicalKeyHash>& table() { return table_; }
  const std::unordered_map<CanonicalKey, Entry, CanonicalKeyHash>& table() const {
    return table_;
  }

 private:
  ProblemSpec spec_;
  double lambda_;
  std::vector<Context> contexts_;
  std::unordered_map<CanonicalKey, Entry, CanonicalKeyHash> table_;
};

inline std::shared_ptr<NdpPolicy> solve_ndp(const OutcomeModel& model, double lambda,
                                            const std::vector<Context>& contexts) {
  if (!(lambda > 0)) throw SpecMismatch("lambda must be > 0");
  const ProblemSpec& spec = model.spec();
  auto policy = std::make_shared<NdpPolicy>(spec, lambda, contexts);
  auto& table = policy->table();
  for (const Context& context : contexts) {
    validate_context(spec, context);
    auto by_size = detail::enumerate_histories(spec, context);
    for (int s = spec.num_actions; s >= 0; --s) {
      for (const History& h : by_size[static_cast<std::size_t>(s)]) {
        NdpPolicy::Entry e;
        double best = -std::numeric_limits<double>::infinity();
        int choice = kStop;
        if (!h.trials.empty()) {
          // Stop reward mu(h) - lambda*|h|; stop is undefined before any trial.
          best = *best_so_far(spec, h) - lambda * h.size();
        }
        for (int a : untried(spec, h)) {
          std::vector<double> p = model.predict(h, a);
          double q = 0.0;
          for (int y = 0; y < spec.num_outcomes(); ++y) {
            double py = p[static_cast<std::size_t>(y)];
            if (py == 0.0) continue;
            q += py * table.at(canonicalize(spec, extend(h, a, y))).value;
          }
          if (q > best) {
            best = q;
            choice = a;
          }
        }
        e.value = best;
        e.choice = choice;
        table.emplace(canonicalize(spec, h), e);
      }
    }
  }
  return policy;
}

struct BruteForceResult {
  double expected_trials = 0.0;
  std::vector<int> best_first_actions;  // empty when stopping immediately is optimal
};

namespace detail {

inline double brute_force_value(const OutcomeModel& model, const StoppingConfig& cfg,
                                const History& h) {
  const ProblemSpec& spec = model.spec();
  double best = std::numeric_limits<double>::infinity();
  if (gamma(model, h, cfg)) best = 0.0;
  for (int a : untried(spec, h)) {
    std::vector<double> p = model.predict(h, a);
    double cost = 1.0;
    for (int y = 0; y < spec.num_outcomes(); ++y) {
      double py = p[static_cast<std::size_t>(y)];
      if (py == 0.0) continue;
      cost += py * brute_force_value(model, cfg, extend(h, a, y));
    }
    best = std::min(best, cost);
  }
  return best;
}

}  // namespace detail

/// Exhaustive search over all feasible non-repeating decision trees. Test
/// oracle for small instances; independent of the DP table machinery.
inline BruteForceResult brute_force_optimal(const OutcomeModel& model,
                                            const StoppingConfig& cfg,
                                            const Context& context) {
  const ProblemSpec& spec = model.spec();
  if (spec.num_actions > 4 || spec.num_outcomes() > 3)
    throw InstanceTooLarge("brute force limited to k <= 4, n_y <= 3");
  History root{context, {}};
  BruteForceResult result;
  result.expected_trials = detail::brute_force_value(model, cfg, root);
  if (gamma(model, root, cfg) && result.expected_trials == 0.0) return result;
  for (int a : untried(spec, root)) {
    std::vector<double> p = model.predict(root, a);
    double cost = 1.0;
    for (int y = 0; y < spec.num_outcomes(); ++y) {
      double py = p[static_cast<std::size_t>(y)];
      if (py == 0.0) continue;
      cost += py * detail::brute_force_value(model, cfg, extend(root, a, y));
    }
    if (cost <= result.expected_trials + 1e-12) result.best_first_actions.push_back(a);
  }
  return result;
}

/// Expected number of trials of a deterministic policy under the given model,
/// computed by chaining the model's conditionals along every branch.
inline double policy_expected_length(const Policy& policy, const OutcomeModel& model,
                                     const History& h) {
  int choice = policy.decide(h);
  if (choice == kStop) return 0.0;
  if (h.tried(choice)) throw PolicyRepeatedAction("policy repeated an action");
  const ProblemSpec& spec = model.spec();
  std::vector<double> p = model.predict(h, choice);
  double total = 1.0;
  for (int y = 0; y < spec.num_outcomes(); ++y) {
    double py = p[static_cast<std::size_t>(y)];
    if (py == 0.0) continue;
    total += py * policy_expected_length(policy, model, extend(h, choice, y));
  }
  return total;
}

/// Longest branch with positive probability under the model.
inline int policy_worst_case_length(const Policy& policy, const OutcomeModel& model,
                                    const History& h) {
  int choice = policy.decide(h);
  if (choice == kStop) return 0;
  if (h.tried(choice)) throw PolicyRepeatedAction("policy repeated an action");
  const ProblemSpec& spec = model.spec();
  std::vector<double> p = model.predict(h, choice);
  int worst = 0;
  for (int y = 0; y < spec.num_outcomes(); ++y) {
    if (p[static_cast<std::size_t>(y)] == 0.0) continue;
    worst = std::max(worst,
                     policy_worst_case_length(policy, model, extend(h, choice, y)));
  }
  return 1 + worst;
}

}  // namespace treatsearch
