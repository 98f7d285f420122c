#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numeric>
#include <unordered_map>
#include <utility>
#include <vector>

#include "treatsearch/core.hpp"

namespace treatsearch {

/// Anything that can answer p(Y(a)=y | H=h) as a probability vector over the
/// outcome grid. Implementations must be invariant to trial insertion order.
class OutcomeModel {
 public:
  virtual ~OutcomeModel() = default;
  virtual std::vector<double> predict(const History& h, int action) const = 0;
  virtual const ProblemSpec& spec() const = 0;
};

/// Per-(history, action) outcome counts pooled over trial permutations.
struct CountTable {
  // key -> num_actions x num_outcomes counts
  std::unordered_map<CanonicalKey, std::vector<std::vector<std::int64_t>>, CanonicalKeyHash>
      cells;

  const std::vector<std::int64_t>* find(const CanonicalKey& key, int action) const {
    auto it = cells.find(key);
    if (it == cells.end()) return nullptr;
    return &it->second[static_cast<std::size_t>(action)];
  }
};

inline CountTable fit_counts(const Dataset& dataset) {
  CountTable table;
  const ProblemSpec& spec = dataset.spec;
  for (const Trajectory& traj : dataset.trajectories) {
    validate_trajectory(spec, traj);
    History h{traj.context, {}};
    for (const TrialRecord& step : traj.steps) {
      CanonicalKey key = canonicalize(spec, h);
      auto [it, inserted] = table.cells.try_emplace(key);
      if (inserted) {
        it->second.assign(static_cast<std::size_t>(spec.num_actions),
                          std::vector<std::int64_t>(
                              static_cast<std::size_t>(spec.num_outcomes()), 0));
      }
      it->second[static_cast<std::size_t>(step.action)]
                [static_cast<std::size_t>(step.outcome_index)] += 1;
      h = extend(h, step.action, step.outcome_index);
    }
  }
  return table;
}

enum class PriorKind { Uninformed, Historical };

struct SmoothingConfig {
  PriorKind prior_kind = PriorKind::Uninformed;
  double beta0 = 0.1;  // uninformed pseudo-count per outcome
};

/// Similarity weight between a history of length len_h and one of its strict
/// sub-histories of length len_sub.
inline double historical_weight(int len_h, int len_sub) {
  const int gap = len_h - len_sub - 1;
  return std::exp(-static_cast<double>(gap) * gap) /
         (static_cast<double>(len_h) * std::ldexp(1.0, gap));
}

/// Tabular outcome model: Dirichlet-smoothed counts, with either a flat prior
/// or the historical kernel prior built recursively from sub-histories.
class TabularModel : public OutcomeModel {
 public:
  TabularModel(ProblemSpec spec, CountTable counts, SmoothingConfig smoothing)
      : spec_(std::move(spec)), counts_(std::move(counts)), smoothing_(smoothing) {
    spec_.validate();
    if (smoothing_.beta0 <= 0) throw SpecMismatch("beta0 must be > 0");
  }

  const ProblemSpec& spec() const override { return spec_; }
  const CountTable& counts() const { return counts_; }
  const SmoothingConfig& smoothing() const { return smoothing_; }

  std::vector<double> predict(const History& h, int action) const override {
    if (action < 0 || action >= spec_.num_actions)
      throw SpecMismatch("action id out of range");
    return posterior(h, action);
  }

 private:
  std::vector<double> posterior(const History& h, int action) const {
    const int ny = spec_.num_outcomes();
    std::vector<double> beta = prior(h, action);
    const auto* counts = counts_.find(canonicalize(spec_, h), action);
    std::vector<double> post(static_cast<std::size_t>(ny), 0.0);
    double total = 0.0;
    for (int y = 0; y < ny; ++y) {
      double c = counts ? static_cast<double>((*counts)[static_cast<std::size_t>(y)]) : 0.0;
      post[static_cast<std::size_t>(y)] = c + beta[static_cast<std::size_t>(y)];
      total += post[static_cast<std::size_t>(y)];
    }
    for (double& p : post) p /= total;
    return post;
  }

  std::vector<double> prior(const History& h, int action) const {
    const int ny = spec_.num_outcomes();
    if (smoothing_.prior_kind == PriorKind::Uninformed || h.trials.empty()) {
      return std::vector<double>(static_cast<std::size_t>(ny), smoothing_.beta0);
    }
    {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      auto it = prior_cache_.find(cache_key(h, action));
      if (it != prior_cache_.end()) return it->second;
    }
    // Eq-style recursion: weighted posteriors of all strict sub-histories,
    // rescaled to total prior mass beta0 * n_y.
    const int n = h.size();
    std::vector<double> raw(static_cast<std::size_t>(ny), 0.0);
    const std::uint32_t full = (1u << n) - 1u;
    for (std::uint32_t mask = 0; mask < full; ++mask) {
      History sub{h.context, {}};
      for (int i = 0; i < n; ++i)
        if (mask & (1u << i)) sub.trials.push_back(h.trials[static_cast<std::size_t>(i)]);
      double w = historical_weight(n, sub.size());
      std::vector<double> p = posterior(sub, action);
      for (int y = 0; y < ny; ++y) raw[static_cast<std::size_t>(y)] += w * p[static_cast<std::size_t>(y)];
    }
    double mass = std::accumulate(raw.begin(), raw.end(), 0.0);
    const double target = smoothing_.beta0 * ny;
    for (double& b : raw) b *= target / mass;
    {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      prior_cache_.emplace(cache_key(h, action), raw);
    }
    return raw;
  }

  CanonicalKey cache_key(const History& h, int action) const {
    CanonicalKey key = canonicalize(spec_, h);
    key.values.push_back(action);
    return key;
  }

  ProblemSpec spec_;
  CountTable counts_;
  SmoothingConfig smoothing_;
  mutable std::mutex cache_mutex_;
  mutable std::unordered_map<CanonicalKey, std::vector<double>, CanonicalKeyHash> prior_cache_;
};

/// Convenience: Dirichlet-posterior mean for one (history, action) cell.
inline std::vector<double> posterior_distribution(const CountTable& table,
                                                  const SmoothingConfig& cfg,
                                                  const ProblemSpec& spec, const History& h,
                                                  int action) {
  TabularModel model(spec, table, cfg);
  return model.predict(h, action);
}

/// Permutation-invariant feature map for (history, action) pairs:
/// [bias; one-hot context; tried indicators; per-action outcome one-hots;
///  action one-hot].
inline std::vector<double> featurize(const ProblemSpec& spec, const History& h, int action) {
  if (action < 0 || action >= spec.num_actions)
    throw SpecMismatch("action id out of range");
  const int k = spec.num_actions;
  const int ny = spec.num_outcomes();
  std::size_t dim = 1;
  for (int d : spec.context_dims) dim += static_cast<std::size_t>(d);
  dim += static_cast<std::size_t>(k) + static_cast<std::size_t>(k * ny) +
         static_cast<std::size_t>(k);
  std::vector<double> phi(dim, 0.0);
  std::size_t pos = 0;
  phi[pos++] = 1.0;
  for (std::size_t i = 0; i < spec.context_dims.size(); ++i) {
    phi[pos + static_cast<std::size_t>(h.context.coords[i])] = 1.0;
    pos += static_cast<std::size_t>(spec.context_dims[i]);
  }
  const std::size_t tried_base = pos;
  const std::size_t outcome_base = pos + static_cast<std::size_t>(k);
  for (const TrialRecord& t : h.trials) {
    phi[tried_base + static_cast<std::size_t>(t.action)] = 1.0;
    phi[outcome_base + static_cast<std::size_t>(t.action * ny + t.outcome_index)] = 1.0;
  }
  pos = outcome_base + static_cast<std::size_t>(k * ny);
  phi[pos + static_cast<std::size_t>(action)] = 1.0;
  return phi;
}

inline std::size_t feature_dim(const ProblemSpec& spec) {
  std::size_t dim = 1;
  for (int d : spec.context_dims) dim += static_cast<std::size_t>(d);
  return dim + static_cast<std::size_t>(spec.num_actions) * (2 + spec.num_outcomes());
}

struct LogisticModelConfig {
  double learning_rate = 0.5;
  int epochs = 500;
  double l2_penalty = 0.0;
  std::uint64_t seed = 0;
};

/// Multinomial logistic regression over featurize(.), softmax over outcomes.
class LogisticModel : public OutcomeModel {
 public:
  LogisticModel(ProblemSpec spec, std::vector<std::vector<double>> weights, bool degenerate,
                int degenerate_class)
      : spec_(std::move(spec)),
        weights_(std::move(weights)),
        degenerate_(degenerate),
        degenerate_class_(degenerate_class) {}

  const ProblemSpec& spec() const override { return spec_; }
  bool degenerate() const { return degenerate_; }
  int degenerate_class() const { return degenerate_class_; }
  const std::vector<std::vector<double>>& weights() const { return weights_; }

  std::vector<double> predict(const History& h, int action) const override {
    const int ny = spec_.num_outcomes();
    if (degenerate_) {
      std::vector<double> p(static_cast<std::size_t>(ny), 0.0);
      p[static_cast<std::size_t>(degenerate_class_)] = 1.0;
      return p;
    }
    return softmax(logits(featurize(spec_, h, action)));
  }

  static std::vector<double> softmax(std::vector<double> z) {
    double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - zmax);
      sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
  }

 private:
  std::vector<double> logits(const std::vector<double>& phi) const {
    std::vector<double> z(weights_.size(), 0.0);
    for (std::size_t c = 0; c < weights_.size(); ++c) {
      z[c] = std::inner_product(phi.begin(), phi.end(), weights_[c].begin(), 0.0);
    }
    return z;
  }

  ProblemSpec spec_;
  std::vector<std::vector<double>> weights_;  // num_outcomes x dim
  bool degenerate_ = false;
  int degenerate_class_ = 0;
};

struct LogisticFitReport {
  std::vector<double> loss_per_epoch;
  bool degenerate = false;
};

inline std::shared_ptr<LogisticModel> fit_logistic(const Dataset& dataset,
                                                   const LogisticModelConfig& cfg,
                                                   LogisticFitReport* report = nullptr) {
  if (dataset.trajectories.empty()) throw SpecMismatch("empty dataset");
  if (cfg.learning_rate <= 0 || cfg.epochs < 1 || cfg.l2_penalty < 0)
    throw SpecMismatch("invalid logistic training config");
  const ProblemSpec& spec = dataset.spec;
  const int ny = spec.num_outcomes();
  const std::size_t dim = feature_dim(spec);

  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  for (const Trajectory& traj : dataset.trajectories) {
    validate_trajectory(spec, traj);
    History h{traj.context, {}};
    for (const TrialRecord& step : traj.steps) {
      features.push_back(featurize(spec, h, step.action));
      labels.push_back(step.outcome_index);
      h = extend(h, step.action, step.outcome_index);
    }
  }
  const std::size_t n = features.size();
  if (n == 0) throw SpecMismatch("dataset has no trials");

  bool single_class = std::all_of(labels.begin(), labels.end(),
                                  [&](int y) { return y == labels.front(); });
  if (single_class) {
    if (report) report->degenerate = true;
    return std::make_shared<LogisticModel>(
        spec, std::vector<std::vector<double>>(), true, labels.front());
  }

  std::vector<std::vector<double>> W(static_cast<std::size_t>(ny),
                                     std::vector<double>(dim, 0.0));
  auto loss_of = [&](const std::vector<std::vector<double>>& w) {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> z(static_cast<std::size_t>(ny), 0.0);
      for (int c = 0; c < ny; ++c)
        z[static_cast<std::size_t>(c)] = std::inner_product(
            features[i].begin(), features[i].end(), w[static_cast<std::size_t>(c)].begin(), 0.0);
      std::vector<double> p = LogisticModel::softmax(z);
      loss -= std::log(std::max(p[static_cast<std::size_t>(labels[i])], 1e-300));
    }
    loss /= static_cast<double>(n);
    for (const auto& row : w)
      for (double v : row) loss += 0.5 * cfg.l2_penalty * v * v;
    return loss;
  };

  double lr = cfg.learning_rate;
  double loss = loss_of(W);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::vector<double>> grad(static_cast<std::size_t>(ny),
                                          std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> z(static_cast<std::size_t>(ny), 0.0);
      for (int c = 0; c < ny; ++c)
        z[static_cast<std::size_t>(c)] = std::inner_product(
            features[i].begin(), features[i].end(), W[static_cast<std::size_t>(c)].begin(), 0.0);
      std::vector<double> p = LogisticModel::softmax(z);
      for (int c = 0; c < ny; ++c) {
        double g = p[static_cast<std::size_t>(c)] - (labels[i] == c ? 1.0 : 0.0);
        for (std::size_t j = 0; j < dim; ++j)
          grad[static_cast<std::size_t>(c)][j] += g * features[i][j];
      }
    }
    for (int c = 0; c < ny; ++c)
      for (std::size_t j = 0; j < dim; ++j)
        grad[static_cast<std::size_t>(c)][j] =
            grad[static_cast<std::size_t>(c)][j] / static_cast<double>(n) +
            cfg.l2_penalty * W[static_cast<std::size_t>(c)][j];

    // Full-batch step with halving when the step overshoots.
    for (int attempt = 0;; ++attempt) {
      std::vector<std::vector<double>> trial = W;
      for (int c = 0; c < ny; ++c)
        for (std::size_t j = 0; j < dim; ++j)
          trial[static_cast<std::size_t>(c)][j] -= lr * grad[static_cast<std::size_t>(c)][j];
      double trial_loss = loss_of(trial);
      if (trial_loss <= loss) {
        W = std::move(trial);
        loss = trial_loss;
        break;
      }
      if (attempt >= 40) break;  // stuck at numerical floor; keep current W
      lr *= 0.5;
    }
    if (report) report->loss_per_epoch.push_back(loss);
  }
  return std::make_shared<LogisticModel>(spec, std::move(W), false, 0);
}

}  // namespace treatsearch
