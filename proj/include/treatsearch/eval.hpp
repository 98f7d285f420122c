#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "treatsearch/core.hpp"
#include "treatsearch/dgp.hpp"
#include "treatsearch/model.hpp"
#include "treatsearch/solvers.hpp"

namespace treatsearch {

struct EvalConfig {
  double epsilon = 0.0;  // efficacy slack in outcome units
  int max_steps = -1;    // -1 means num_actions
};

struct Metrics {
  double efficacy = 0.0;
  double efficacy_se = 0.0;
  double mean_search_time = 0.0;
  double mean_search_time_se = 0.0;
  double worst_search_time = 0.0;
  std::vector<double> best_so_far_curve;  // index t-1 holds mean best at trial count t
  std::size_t n_subjects = 0;
};

struct SweepResult {
  std::vector<std::pair<double, Metrics>> rows;
};

/// Plays the policy against a subject's fixed potential-outcome vector.
/// Stops at kStop (terminal) or after max_steps (censored).
inline Trajectory rollout(const Policy& policy, const ProblemSpec& spec,
                          const Subject& subject, int max_steps = -1) {
  if (max_steps < 0) max_steps = spec.num_actions;
  Trajectory traj{subject.context, {}, false};
  History h{subject.context, {}};
  for (int step = 0; step <= max_steps; ++step) {
    int choice = policy.decide(h);
    if (choice == kStop) {
      traj.terminal = true;
      return traj;
    }
    if (step == max_steps) break;  // censored before taking another action
    if (h.tried(choice)) throw PolicyRepeatedAction("policy repeated an action in rollout");
    int y = subject.potential_outcomes[static_cast<std::size_t>(choice)];
    traj.steps.push_back({choice, y});
    h = extend(h, choice, y);
  }
  return traj;
}

inline Metrics evaluate(const Policy& policy, const ProblemSpec& spec,
                        const std::vector<Subject>& subjects, const EvalConfig& cfg,
                        const std::vector<double>& weights = {}) {
  if (!weights.empty() && weights.size() != subjects.size())
    throw SpecMismatch("weights must match subject count");
  Metrics m;
  m.n_subjects = subjects.size();
  const int k = spec.num_actions;
  m.best_so_far_curve.assign(static_cast<std::size_t>(k), 0.0);

  double total_w = 0.0;
  double success_w = 0.0;
  double time_w = 0.0, time_total = 0.0, time_sq = 0.0;
  double worst = 0.0;
  std::vector<double> curve_w(static_cast<std::size_t>(k), 0.0);

  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const Subject& s = subjects[i];
    const double w = weights.empty() ? 1.0 : weights[i];
    total_w += w;
    Trajectory traj = rollout(policy, spec, s, cfg.max_steps);
    const int t = static_cast<int>(traj.steps.size());

    double best = -std::numeric_limits<double>::infinity();
    for (const TrialRecord& r : traj.steps) best = std::max(best, spec.value(r.outcome_index));
    double true_best = -std::numeric_limits<double>::infinity();
    for (int o : s.potential_outcomes) true_best = std::max(true_best, spec.value(o));

    const bool success = best >= true_best - cfg.epsilon;
    success_w += w * (success ? 1.0 : 0.0);

    if (traj.terminal) {
      time_w += w;
      time_total += w * t;
      time_sq += w * t * t;
      worst = std::max(worst, static_cast<double>(t));
    }

    if (t >= 1) {
      double running = -std::numeric_limits<double>::infinity();
      for (int trial = 1; trial <= k; ++trial) {
        if (trial <= t)
          running = std::max(running, spec.value(traj.steps[static_cast<std::size_t>(trial - 1)]
                                                     .outcome_index));
        // past termination the best-at-termination carries forward
        m.best_so_far_curve[static_cast<std::size_t>(trial - 1)] += w * running;
      }
      for (double& cw : curve_w) cw += w;
    }
  }

  if (total_w > 0) {
    m.efficacy = success_w / total_w;
    double var = m.efficacy * (1.0 - m.efficacy);
    m.efficacy_se = std::sqrt(var / total_w);
  }
  if (time_w > 0) {
    m.mean_search_time = time_total / time_w;
    double var = std::max(0.0, time_sq / time_w - m.mean_search_time * m.mean_search_time);
    m.mean_search_time_se = std::sqrt(var / time_w);
  }
  m.worst_search_time = worst;
  for (int trial = 0; trial < k; ++trial) {
    if (curve_w[static_cast<std::size_t>(trial)] > 0)
      m.best_so_far_curve[static_cast<std::size_t>(trial)] /=
          curve_w[static_cast<std::size_t>(trial)];
  }
  return m;
}

/// Tabular estimate of the behavior policy: samples the next action (or stop)
/// from observed frequencies at each canonical history; unseen histories fall
/// back to uniform untried actions plus the marginal stop rate.
class EmulatedBehaviorPolicy : public Policy {
 public:
  EmulatedBehaviorPolicy(const Dataset& dataset, std::uint64_t seed)
      : spec_(dataset.spec), rng_(seed) {
    std::size_t decisions = 0, stops = 0;
    for (const Trajectory& traj : dataset.trajectories) {
      validate_trajectory(spec_, traj);
      History h{traj.context, {}};
      for (const TrialRecord& step : traj.steps) {
        bump(canonicalize(spec_, h), step.action);
        h = extend(h, step.action, step.outcome_index);
        ++decisions;
      }
      if (traj.terminal) {
        bump(canonicalize(spec_, h), kStop);
        ++decisions;
        ++stops;
      }
    }
    marginal_stop_rate_ = decisions > 0 ? static_cast<double>(stops) /
                                              static_cast<double>(decisions)
                                        : 1.0;
  }

  int decide(const History& h) const override {
    std::vector<int> free_actions = untried(spec_, h);
    if (free_actions.empty()) return kStop;
    auto it = counts_.find(canonicalize(spec_, h));
    std::vector<int> options;
    std::vector<double> weights;
    if (it != counts_.end()) {
      for (const auto& [choice, n] : it->second) {
        options.push_back(choice);
        weights.push_back(static_cast<double>(n));
      }
    } else {
      for (int a : free_actions) {
        options.push_back(a);
        weights.push_back((1.0 - marginal_stop_rate_) / free_actions.size());
      }
      options.push_back(kStop);
      weights.push_back(marginal_stop_rate_);
    }
    return options[static_cast<std::size_t>(rng_.categorical(weights))];
  }

  double marginal_stop_rate() const { return marginal_stop_rate_; }

  /// Estimated choice distribution at one history (for inspection/tests).
  std::unordered_map<int, double> distribution(const History& h) const {
    std::unordered_map<int, double> out;
    auto it = counts_.find(canonicalize(spec_, h));
    if (it == counts_.end()) return out;
    double total = 0.0;
    for (const auto& [choice, n] : it->second) total += static_cast<double>(n);
    for (const auto& [choice, n] : it->second) out[choice] = static_cast<double>(n) / total;
    return out;
  }

 private:
  void bump(const CanonicalKey& key, int choice) { counts_[key][choice] += 1; }

  ProblemSpec spec_;
  std::unordered_map<CanonicalKey, std::map<int, std::int64_t>, CanonicalKeyHash> counts_;
  double marginal_stop_rate_ = 1.0;
  mutable Rng rng_;
};

enum class SolverKind { Cdp, Greedy, Ndp };
enum class EstimatorKind { Tabular, Historical, Logistic };
enum class SweepParam { Delta, Lambda };

struct SweepConfig {
  SolverKind solver = SolverKind::Cdp;
  EstimatorKind estimator = EstimatorKind::Historical;
  SweepParam param = SweepParam::Delta;
  StoppingConfig stopping;
  double beta0 = 0.1;
  LogisticModelConfig logistic;
  double lambda = 0.35;
  EvalConfig eval;
};

inline std::shared_ptr<OutcomeModel> fit_estimator(const Dataset& train,
                                                   EstimatorKind kind, double beta0,
                                                   const LogisticModelConfig& logistic_cfg) {
  switch (kind) {
    case EstimatorKind::Tabular:
      return std::make_shared<TabularModel>(train.spec, fit_counts(train),
                                            SmoothingConfig{PriorKind::Uninformed, beta0});
    case EstimatorKind::Historical:
      return std::make_shared<TabularModel>(train.spec, fit_counts(train),
                                            SmoothingConfig{PriorKind::Historical, beta0});
    case EstimatorKind::Logistic:
      return fit_logistic(train, logistic_cfg);
  }
  throw SpecMismatch("unknown estimator kind");
}

inline std::shared_ptr<Policy> build_policy(std::shared_ptr<const OutcomeModel> model,
                                            SolverKind solver, const StoppingConfig& stopping,
                                            double lambda,
                                            const std::vector<Context>& contexts) {
  switch (solver) {
    case SolverKind::Cdp:
      return solve_cdp(*model, stopping, contexts);
    case SolverKind::Greedy:
      return std::make_shared<GreedyPolicy>(std::move(model), stopping);
    case SolverKind::Ndp:
      return solve_ndp(*model, lambda, contexts);
  }
  throw SpecMismatch("unknown solver kind");
}

inline std::vector<Context> contexts_of(const ProblemSpec& spec,
                                        const std::vector<Subject>& subjects,
                                        const Dataset* train = nullptr) {
  std::vector<std::vector<int>> seen;
  auto add = [&](const Context& c) {
    if (std::find(seen.begin(), seen.end(), c.coords) == seen.end())
      seen.push_back(c.coords);
  };
  for (const Subject& s : subjects) add(s.context);
  if (train)
    for (const Trajectory& t : train->trajectories) add(t.context);
  std::sort(seen.begin(), seen.end());
  std::vector<Context> out;
  out.reserve(seen.size());
  for (auto& coords : seen) out.push_back(Context{std::move(coords)});
  (void)spec;
  return out;
}

/// Fits once, then solves and evaluates per grid value of delta or lambda.
inline SweepResult sweep(const Dataset& train, const std::vector<Subject>& test,
                         const std::vector<double>& grid, const SweepConfig& cfg) {
  if (grid.empty()) throw SpecMismatch("empty sweep grid");
  std::shared_ptr<OutcomeModel> model =
      fit_estimator(train, cfg.estimator, cfg.beta0, cfg.logistic);
  std::vector<Context> contexts = contexts_of(train.spec, test, &train);
  SweepResult result;
  for (double value : grid) {
    StoppingConfig stopping = cfg.stopping;
    double lambda = cfg.lambda;
    if (cfg.param == SweepParam::Delta)
      stopping.delta = value;
    else
      lambda = value;
    std::shared_ptr<Policy> policy = build_policy(model, cfg.solver, stopping, lambda, contexts);
    result.rows.emplace_back(value, evaluate(*policy, train.spec, test, cfg.eval));
  }
  return result;
}

}  // namespace treatsearch
