#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "treatsearch/core.hpp"
#include "treatsearch/model.hpp"

namespace treatsearch {

enum class BoundMode { Exact, Upper, Lower };

struct StoppingConfig {
  double epsilon = 0.0;
  double delta = 0.0;
  double alpha = 1.0;
  BoundMode bound = BoundMode::Exact;
  // Average the exact statistic over all orderings of the untried actions
  // instead of using the canonical ascending order. Only sensible for
  // estimated models; the true statistic is order-invariant.
  bool average_permutations = false;

  double threshold() const { return delta / alpha; }
};

namespace detail {

inline double rho_exact_ordered(const OutcomeModel& model, const History& h, double nu,
                                const std::vector<int>& order, std::size_t pos) {
  if (pos == order.size()) return 0.0;
  const ProblemSpec& spec = model.spec();
  const int a = order[pos];
  std::vector<double> p = model.predict(h, a);
  double acc = 0.0;
  for (int y = 0; y < spec.num_outcomes(); ++y) {
    double py = p[static_cast<std::size_t>(y)];
    if (py == 0.0) continue;
    if (spec.value(y) > nu) {
      acc += py;
    } else {
      acc += py * rho_exact_ordered(model, extend(h, a, y), nu, order, pos + 1);
    }
  }
  return acc;
}

}  // namespace detail

/// Probability that some untried action beats the best observed outcome by
/// more than epsilon, per the requested mode. Exact mode chains the model's
/// conditionals over a canonical future ordering (or averages all orderings).
inline double rho(const OutcomeModel& model, const History& h, double epsilon,
                  BoundMode mode, bool average_permutations = false) {
  const ProblemSpec& spec = model.spec();
  std::vector<int> free_actions = untried(spec, h);
  if (free_actions.empty()) return 0.0;
  std::optional<double> mu = best_so_far(spec, h);
  const double nu = (mu ? *mu : -std::numeric_limits<double>::infinity()) + epsilon;

  switch (mode) {
    case BoundMode::Exact: {
      if (!average_permutations)
        return detail::rho_exact_ordered(model, h, nu, free_actions, 0);
      if (free_actions.size() > 5)
        throw InstanceTooLarge("permutation averaging limited to 5 untried actions");
      double total = 0.0;
      std::size_t count = 0;
      std::vector<int> order = free_actions;
      do {
        total += detail::rho_exact_ordered(model, h, nu, order, 0);
        ++count;
      } while (std::next_permutation(order.begin(), order.end()));
      return total / static_cast<double>(count);
    }
    case BoundMode::Upper: {
      double sum = 0.0;
      for (int a : free_actions) {
        std::vector<double> p = model.predict(h, a);
        for (int y = 0; y < spec.num_outcomes(); ++y)
          if (spec.value(y) > nu) sum += p[static_cast<std::size_t>(y)];
      }
      return std::min(sum, 1.0);
    }
    case BoundMode::Lower: {
      double best = 0.0;
      for (int a : free_actions) {
        std::vector<double> p = model.predict(h, a);
        double exceed = 0.0;
        for (int y = 0; y < spec.num_outcomes(); ++y)
          if (spec.value(y) > nu) exceed += p[static_cast<std::size_t>(y)];
        best = std::max(best, exceed);
      }
      return best;
    }
  }
  return 0.0;
}

/// Stop indicator: true when the near-optimality statistic clears the
/// confounding-adjusted threshold delta/alpha, and always once every action
/// has been tried.
inline bool gamma(const OutcomeModel& model, const History& h, const StoppingConfig& cfg) {
  if (untried(model.spec(), h).empty()) return true;
  return rho(model, h, cfg.epsilon, cfg.bound, cfg.average_permutations) <= cfg.threshold();
}

}  // namespace treatsearch
