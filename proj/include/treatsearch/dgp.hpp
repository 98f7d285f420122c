#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <utility>
#include <vector>

#include "treatsearch/core.hpp"
#include "treatsearch/model.hpp"

namespace treatsearch {

/// Counter-based splittable generator (splitmix64 core). Every subject gets
/// an independent stream derived from (seed, subject index), so parallel
/// generation is order-independent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  static Rng for_subject(std::uint64_t seed, std::uint64_t subject_index) {
    return Rng(mix(seed) ^ mix(subject_index * 0x9e3779b97f4a7c15ULL + 0xbf58476d1ce4e5b9ULL));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform in (0, 1).
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = uniform01() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (r < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

/// Exact outcome model backed by an explicit joint distribution over
/// potential-outcome vectors per context. Conditionals are computed by
/// filtering atoms consistent with the observed trials.
class JointOutcomeModel : public OutcomeModel {
 public:
  struct Atom {
    double prob = 0.0;
    std::vector<int> outcomes;  // length num_actions, outcome indices
  };

  JointOutcomeModel(ProblemSpec spec,
                    std::map<std::vector<int>, std::vector<Atom>> per_context)
      : spec_(std::move(spec)), per_context_(std::move(per_context)) {}

  const ProblemSpec& spec() const override { return spec_; }
  const std::map<std::vector<int>, std::vector<Atom>>& atoms() const { return per_context_; }

  std::vector<double> predict(const History& h, int action) const override {
    const auto& atoms = atoms_for(h.context);
    std::vector<double> p(static_cast<std::size_t>(spec_.num_outcomes()), 0.0);
    double mass = 0.0;
    for (const Atom& atom : atoms) {
      bool consistent = true;
      for (const TrialRecord& t : h.trials) {
        if (atom.outcomes[static_cast<std::size_t>(t.action)] != t.outcome_index) {
          consistent = false;
          break;
        }
      }
      if (!consistent) continue;
      mass += atom.prob;
      p[static_cast<std::size_t>(atom.outcomes[static_cast<std::size_t>(action)])] +=
          atom.prob;
    }
    if (mass == 0.0) {
      // History has zero support; fall back to a flat conditional.
      std::fill(p.begin(), p.end(), 1.0 / spec_.num_outcomes());
      return p;
    }
    for (double& v : p) v /= mass;
    return p;
  }

  Subject sample_subject(const Context& context, Rng& rng) const {
    const auto& atoms = atoms_for(context);
    std::vector<double> weights;
    weights.reserve(atoms.size());
    for (const Atom& a : atoms) weights.push_back(a.prob);
    int idx = rng.categorical(weights);
    return Subject{context, idx, atoms[static_cast<std::size_t>(idx)].outcomes};
  }

 private:
  const std::vector<Atom>& atoms_for(const Context& c) const {
    auto it = per_context_.find(c.coords);
    if (it == per_context_.end()) throw SpecMismatch("context not covered by joint model");
    return it->second;
  }

  ProblemSpec spec_;
  std::map<std::vector<int>, std::vector<Atom>> per_context_;
};

/// Three actions, binary outcomes, four latent subject classes. Marginal
/// success probabilities are [0.4, 0.6, 0.65].
inline std::shared_ptr<JointOutcomeModel> build_toy_example1() {
  ProblemSpec spec{3, {0.0, 1.0}, {1}};
  std::vector<JointOutcomeModel::Atom> atoms = {
      {0.20, {1, 0, 1}},
      {0.15, {0, 1, 0}},
      {0.20, {1, 0, 0}},
      {0.45, {0, 1, 1}},
  };
  std::map<std::vector<int>, std::vector<JointOutcomeModel::Atom>> per_context;
  per_context[{0}] = std::move(atoms);
  return std::make_shared<JointOutcomeModel>(std::move(spec), std::move(per_context));
}

/// Two actions on the grid {0.5, 0.5+eps, 1.0}: action 0 is a fair coin
/// between the extremes, action 1 deterministically lands in the middle.
inline std::shared_ptr<JointOutcomeModel> build_toy_a6(double eps) {
  if (!(eps > 0.0 && eps < 0.25)) throw SpecMismatch("a6 instance requires 0 < eps < 0.25");
  ProblemSpec spec{2, {0.5, 0.5 + eps, 1.0}, {1}};
  std::vector<JointOutcomeModel::Atom> atoms = {
      {0.5, {0, 1}},
      {0.5, {2, 1}},
  };
  std::map<std::vector<int>, std::vector<JointOutcomeModel::Atom>> per_context;
  per_context[{0}] = std::move(atoms);
  return std::make_shared<JointOutcomeModel>(std::move(spec), std::move(per_context));
}

namespace detail {

inline void enumerate_vectors(int length, int base, std::vector<int>& cur,
                              const std::function<void(const std::vector<int>&)>& fn) {
  if (static_cast<int>(cur.size()) == length) {
    fn(cur);
    return;
  }
  for (int v = 0; v < base; ++v) {
    cur.push_back(v);
    enumerate_vectors(length, base, cur, fn);
    cur.pop_back();
  }
}

}  // namespace detail

/// Random coherent instance: per context, a random joint over all outcome
/// vectors. Used by the oracle-check harness and property tests.
inline std::shared_ptr<JointOutcomeModel> random_joint_instance(const ProblemSpec& spec,
                                                                Rng& rng) {
  spec.validate();
  std::map<std::vector<int>, std::vector<JointOutcomeModel::Atom>> per_context;
  std::vector<std::vector<int>> contexts;
  std::vector<int> cur;
  std::function<void(std::size_t)> walk = [&](std::size_t dim) {
    if (dim == spec.context_dims.size()) {
      contexts.push_back(cur);
      return;
    }
    for (int v = 0; v < spec.context_dims[dim]; ++v) {
      cur.push_back(v);
      walk(dim + 1);
      cur.pop_back();
    }
  };
  walk(0);
  for (const auto& coords : contexts) {
    std::vector<JointOutcomeModel::Atom> atoms;
    std::vector<int> vec;
    detail::enumerate_vectors(spec.num_actions, spec.num_outcomes(), vec,
                              [&](const std::vector<int>& outcomes) {
                                // Exponential draws give a Dirichlet(1) joint.
                                double w = -std::log(rng.uniform01());
                                atoms.push_back({w, outcomes});
                              });
    double total = 0.0;
    for (const auto& a : atoms) total += a.prob;
    for (auto& a : atoms) a.prob /= total;
    per_context[coords] = std::move(atoms);
  }
  return std::make_shared<JointOutcomeModel>(spec, std::move(per_context));
}

struct DegenerateScale : Error {
  using Error::Error;
};

struct DgpParams {
  int num_actions = 5;
  int num_outcomes = 3;
  int moderator_dims = 3;   // d, binary
  int context_dims = 1;     // v, binary
  double weight_x = 1.0;
  double p_stop = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_actions < 1 || num_outcomes < 2 || moderator_dims < 1 || context_dims < 1)
      throw SpecMismatch("invalid dgp dimensions");
    if (p_stop < 0.0 || p_stop > 1.0) throw SpecMismatch("p_stop must lie in [0,1]");
  }
};

/// Fully materialized generative instance: parameter matrices plus
/// precomputed outcome tables p(Y(a)=y | x, z) and behavior-policy
/// dissimilarities.
struct DgpInstance {
  DgpParams params;
  ProblemSpec spec;  // outcome grid 0..n_y-1, binary context dims

  std::vector<double> alpha;                    // d
  std::vector<std::vector<double>> beta;        // v x d
  std::vector<std::vector<double>> u1, u2;      // k x (1+v+d)
  std::vector<std::vector<double>> eta;         // k x (1+v+k)
  std::vector<double> u1_neg, u1_pos, u2_neg, u2_pos;  // k
  std::vector<std::vector<double>> delta_sim;   // k x k, symmetric, zero diag

  // (x bits, z bits) -> k x n_y outcome distributions
  std::map<std::pair<std::vector<int>, std::vector<int>>,
           std::vector<std::vector<double>>>
      outcome_tables;

  const std::vector<std::vector<double>>& outcomes_for(const std::vector<int>& x,
                                                       const std::vector<int>& z) const {
    auto it = outcome_tables.find({x, z});
    if (it == outcome_tables.end()) throw SpecMismatch("unknown (x, z) cell");
    return it->second;
  }

  std::vector<double> x_probs(const std::vector<int>& z) const {
    std::vector<double> p(beta.size(), 0.0);
    for (std::size_t i = 0; i < beta.size(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < alpha.size(); ++j)
        dot += beta[i][j] * static_cast<double>(z[j]);
      p[i] = std::clamp(dot, 0.02, 0.98);
    }
    return p;
  }

  double z_prob(const std::vector<int>& z) const {
    double p = 1.0;
    for (std::size_t j = 0; j < alpha.size(); ++j)
      p *= z[j] ? alpha[j] : 1.0 - alpha[j];
    return p;
  }
};

inline double cauchy_pdf(double y, double location, double scale) {
  double t = (y - location) / scale;
  return 1.0 / (std::numbers::pi * scale * (1.0 + t * t));
}

namespace detail {

inline std::vector<std::vector<int>> binary_grid(int dims) {
  std::vector<std::vector<int>> grid;
  std::vector<int> cur;
  std::function<void()> walk = [&]() {
    if (static_cast<int>(cur.size()) == dims) {
      grid.push_back(cur);
      return;
    }
    for (int b = 0; b < 2; ++b) {
      cur.push_back(b);
      walk();
      cur.pop_back();
    }
  };
  walk();
  return grid;
}

}  // namespace detail

inline DgpInstance build_instance(const DgpParams& params) {
  params.validate();
  const int k = params.num_actions;
  const int ny = params.num_outcomes;
  const int d = params.moderator_dims;
  const int v = params.context_dims;
  Rng rng(params.seed);

  DgpInstance inst;
  inst.params = params;
  std::vector<double> grid(static_cast<std::size_t>(ny));
  for (int y = 0; y < ny; ++y) grid[static_cast<std::size_t>(y)] = y;
  inst.spec = ProblemSpec{k, grid, std::vector<int>(static_cast<std::size_t>(v), 2)};

  inst.alpha.resize(static_cast<std::size_t>(d));
  for (double& a : inst.alpha) a = rng.uniform01();
  inst.beta.assign(static_cast<std::size_t>(v), std::vector<double>(static_cast<std::size_t>(d)));
  for (auto& row : inst.beta)
    for (double& b : row) b = rng.uniform01();

  const int cols = 1 + v + d;
  auto draw_row = [&](bool absolute) {
    std::vector<double> row(static_cast<std::size_t>(cols));
    for (double& x : row) {
      x = rng.normal();
      if (absolute) x = std::fabs(x);
    }
    for (int i = 1; i <= v; ++i) row[static_cast<std::size_t>(i)] *= params.weight_x;
    return row;
  };
  auto pos_sum = [](const std::vector<double>& row) {
    double s = 0.0;
    for (double x : row)
      if (x > 0) s += x;
    return s;
  };
  auto neg_sum = [](const std::vector<double>& row) {
    double s = 0.0;
    for (double x : row)
      if (x < 0) s += x;
    return s;
  };

  inst.u1.resize(static_cast<std::size_t>(k));
  inst.u2.resize(static_cast<std::size_t>(k));
  inst.u1_neg.resize(static_cast<std::size_t>(k));
  inst.u1_pos.resize(static_cast<std::size_t>(k));
  inst.u2_neg.resize(static_cast<std::size_t>(k));
  inst.u2_pos.resize(static_cast<std::size_t>(k));
  for (int a = 0; a < k; ++a) {
    for (int attempt = 0;; ++attempt) {
      std::vector<double> r1 = draw_row(false);
      std::vector<double> r2 = draw_row(true);
      double n1 = neg_sum(r1), p1 = pos_sum(r1);
      double n2 = neg_sum(r2), p2 = pos_sum(r2);
      if (p1 - n1 != 0.0 && p2 - n2 != 0.0) {
        inst.u1[static_cast<std::size_t>(a)] = std::move(r1);
        inst.u2[static_cast<std::size_t>(a)] = std::move(r2);
        inst.u1_neg[static_cast<std::size_t>(a)] = n1;
        inst.u1_pos[static_cast<std::size_t>(a)] = p1;
        inst.u2_neg[static_cast<std::size_t>(a)] = n2;
        inst.u2_pos[static_cast<std::size_t>(a)] = p2;
        break;
      }
      if (attempt > 100) throw DegenerateScale("could not draw non-degenerate row");
    }
  }

  inst.eta.assign(static_cast<std::size_t>(k),
                  std::vector<double>(static_cast<std::size_t>(1 + v + k)));
  for (auto& row : inst.eta)
    for (double& x : row) x = rng.normal();

  inst.delta_sim.assign(static_cast<std::size_t>(k),
                        std::vector<double>(static_cast<std::size_t>(k), 0.0));
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) {
      double s = 0.0;
      for (int i = 0; i < cols; ++i) {
        double d1 = inst.u1[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] -
                    inst.u1[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)];
        double d2 = inst.u2[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] -
                    inst.u2[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)];
        s += d1 * d1 + d2 * d2;
      }
      inst.delta_sim[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = s;
      inst.delta_sim[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = s;
    }
  }

  // Outcome tables: Cauchy density at each grid point, location and scale
  // affine in [1; x; z] then min-max normalized by the row sums.
  for (const auto& x : detail::binary_grid(v)) {
    for (const auto& z : detail::binary_grid(d)) {
      std::vector<double> feat;
      feat.reserve(static_cast<std::size_t>(cols));
      feat.push_back(1.0);
      for (int b : x) feat.push_back(static_cast<double>(b));
      for (int b : z) feat.push_back(static_cast<double>(b));
      std::vector<std::vector<double>> table(static_cast<std::size_t>(k));
      for (int a = 0; a < k; ++a) {
        double loc = 0.0, sc = 0.0;
        for (int i = 0; i < cols; ++i) {
          loc += inst.u1[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] *
                 feat[static_cast<std::size_t>(i)];
          sc += inst.u2[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] *
                feat[static_cast<std::size_t>(i)];
        }
        loc = (ny - 1) * (loc - inst.u1_neg[static_cast<std::size_t>(a)]) /
              (inst.u1_pos[static_cast<std::size_t>(a)] - inst.u1_neg[static_cast<std::size_t>(a)]);
        sc = (sc - inst.u2_neg[static_cast<std::size_t>(a)]) /
             (inst.u2_pos[static_cast<std::size_t>(a)] - inst.u2_neg[static_cast<std::size_t>(a)]);
        sc = std::max(sc, 0.05);  // keep densities away from point masses
        std::vector<double> p(static_cast<std::size_t>(ny));
        double total = 0.0;
        for (int y = 0; y < ny; ++y) {
          p[static_cast<std::size_t>(y)] = cauchy_pdf(static_cast<double>(y), loc, sc);
          total += p[static_cast<std::size_t>(y)];
        }
        for (double& q : p) q /= total;
        table[static_cast<std::size_t>(a)] = std::move(p);
      }
      inst.outcome_tables[{x, z}] = std::move(table);
    }
  }
  return inst;
}

/// Behavior policy: stop with p_stop after the first trial; otherwise sample
/// an untried action with weight exp(eta(a) . [1; x; o(h)]) scaled by the
/// dissimilarity to every tried action.
inline int behavior_next_action(const DgpInstance& inst, const History& h, Rng& rng) {
  const int k = inst.params.num_actions;
  std::vector<int> free_actions = untried(inst.spec, h);
  if (free_actions.empty()) return kStop;
  if (!h.trials.empty() && rng.bernoulli(inst.params.p_stop)) return kStop;

  std::vector<double> feat;
  feat.reserve(static_cast<std::size_t>(1 + inst.params.context_dims + k));
  feat.push_back(1.0);
  for (int c : h.context.coords) feat.push_back(static_cast<double>(c));
  for (int a = 0; a < k; ++a) feat.push_back(h.tried(a) ? 1.0 : 0.0);

  std::vector<double> weights;
  weights.reserve(free_actions.size());
  for (int a : free_actions) {
    double dot = 0.0;
    for (std::size_t i = 0; i < feat.size(); ++i)
      dot += inst.eta[static_cast<std::size_t>(a)][i] * feat[i];
    double w = std::exp(dot);
    for (const TrialRecord& t : h.trials)
      w *= inst.delta_sim[static_cast<std::size_t>(a)][static_cast<std::size_t>(t.action)];
    weights.push_back(w);
  }
  return free_actions[static_cast<std::size_t>(rng.categorical(weights))];
}

inline Subject sample_subject(const DgpInstance& inst, Rng& rng) {
  const int d = inst.params.moderator_dims;
  std::vector<int> z(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j)
    z[static_cast<std::size_t>(j)] = rng.bernoulli(inst.alpha[static_cast<std::size_t>(j)]) ? 1 : 0;
  std::vector<double> px = inst.x_probs(z);
  std::vector<int> x(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) x[i] = rng.bernoulli(px[i]) ? 1 : 0;

  const auto& table = inst.outcomes_for(x, z);
  std::vector<int> outcomes(static_cast<std::size_t>(inst.params.num_actions));
  for (int a = 0; a < inst.params.num_actions; ++a)
    outcomes[static_cast<std::size_t>(a)] = rng.categorical(table[static_cast<std::size_t>(a)]);

  int moderator = 0;
  for (int j = 0; j < d; ++j) moderator = moderator * 2 + z[static_cast<std::size_t>(j)];
  return Subject{Context{x}, moderator, outcomes};
}

inline Trajectory sample_trajectory(const DgpInstance& inst, const Subject& subject,
                                    Rng& rng) {
  Trajectory traj{subject.context, {}, true};
  History h{subject.context, {}};
  while (true) {
    int a = behavior_next_action(inst, h, rng);
    if (a == kStop) break;
    int y = subject.potential_outcomes[static_cast<std::size_t>(a)];
    traj.steps.push_back({a, y});
    h = extend(h, a, y);
  }
  return traj;
}

/// Exact marginal model of the instance: per context x, the joint over
/// potential-outcome vectors obtained by mixing over z.
inline std::shared_ptr<JointOutcomeModel> true_model(const DgpInstance& inst) {
  const int k = inst.params.num_actions;
  const int ny = inst.params.num_outcomes;
  std::map<std::vector<int>, std::vector<JointOutcomeModel::Atom>> per_context;
  for (const auto& x : detail::binary_grid(inst.params.context_dims)) {
    std::map<std::vector<int>, double> joint;
    double px_total = 0.0;
    for (const auto& z : detail::binary_grid(inst.params.moderator_dims)) {
      double pz = inst.z_prob(z);
      std::vector<double> pxz = inst.x_probs(z);
      double px = 1.0;
      for (std::size_t i = 0; i < pxz.size(); ++i)
        px *= x[i] ? pxz[i] : 1.0 - pxz[i];
      double w = pz * px;
      if (w == 0.0) continue;
      px_total += w;
      const auto& table = inst.outcomes_for(x, z);
      std::vector<int> vec;
      detail::enumerate_vectors(k, ny, vec, [&](const std::vector<int>& outcomes) {
        double p = w;
        for (int a = 0; a < k; ++a)
          p *= table[static_cast<std::size_t>(a)]
                    [static_cast<std::size_t>(outcomes[static_cast<std::size_t>(a)])];
        joint[outcomes] += p;
      });
    }
    std::vector<JointOutcomeModel::Atom> atoms;
    atoms.reserve(joint.size());
    for (const auto& [outcomes, p] : joint) atoms.push_back({p / px_total, outcomes});
    per_context[x] = std::move(atoms);
  }
  return std::make_shared<JointOutcomeModel>(inst.spec, std::move(per_context));
}

}  // namespace treatsearch
