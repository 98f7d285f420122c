#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace treatsearch {

/// Sentinel decision value returned by policies; never stored in a history.
inline constexpr int kStop = -1;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RepeatedAction : Error {
  using Error::Error;
};

struct InstanceTooLarge : Error {
  using Error::Error;
};

struct SpecMismatch : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct PolicyRepeatedAction : Error {
  using Error::Error;
};

/// Static description of a search problem: action count, the ordered grid of
/// outcome values and the cardinalities of the discrete context coordinates.
struct ProblemSpec {
  int num_actions = 0;
  std::vector<double> outcome_values;
  std::vector<int> context_dims;

  int num_outcomes() const { return static_cast<int>(outcome_values.size()); }

  void validate() const {
    if (num_actions < 1) throw SpecMismatch("num_actions must be >= 1");
    if (outcome_values.size() < 2)
      throw SpecMismatch("outcome_values needs at least 2 entries");
    for (std::size_t i = 1; i < outcome_values.size(); ++i) {
      if (!(outcome_values[i - 1] < outcome_values[i]))
        throw SpecMismatch("outcome_values must be strictly increasing");
    }
    for (int d : context_dims) {
      if (d < 1) throw SpecMismatch("context cardinalities must be >= 1");
    }
  }

  double value(int outcome_index) const {
    return outcome_values.at(static_cast<std::size_t>(outcome_index));
  }

  bool operator==(const ProblemSpec&) const = default;
};

struct Context {
  std::vector<int> coords;

  bool operator==(const Context&) const = default;
};

inline void validate_context(const ProblemSpec& spec, const Context& c) {
  if (c.coords.size() != spec.context_dims.size())
    throw SpecMismatch("context coordinate count does not match spec");
  for (std::size_t i = 0; i < c.coords.size(); ++i) {
    if (c.coords[i] < 0 || c.coords[i] >= spec.context_dims[i])
      throw SpecMismatch("context coordinate out of range");
  }
}

struct TrialRecord {
  int action = 0;
  int outcome_index = 0;

  bool operator==(const TrialRecord&) const = default;
};

/// A context plus an unordered set of distinct-action trials. Trials keep
/// their insertion order for readability; all lookups treat them as a set.
struct History {
  Context context;
  std::vector<TrialRecord> trials;

  bool tried(int action) const {
    return std::any_of(trials.begin(), trials.end(),
                       [&](const TrialRecord& t) { return t.action == action; });
  }

  std::optional<int> outcome_of(int action) const {
    for (const TrialRecord& t : trials)
      if (t.action == action) return t.outcome_index;
    return std::nullopt;
  }

  int size() const { return static_cast<int>(trials.size()); }
};

/// Permutation-invariant encoding of a history: context coordinates followed
/// by one slot per action holding the observed outcome index or kUntried.
struct CanonicalKey {
  static constexpr int kUntried = -1;

  std::vector<int> values;

  bool operator==(const CanonicalKey&) const = default;

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i > 0) s += ',';
      s += std::to_string(values[i]);
    }
    return s;
  }

  static CanonicalKey from_string(const std::string& s) {
    CanonicalKey key;
    std::size_t pos = 0;
    while (pos <= s.size()) {
      std::size_t next = s.find(',', pos);
      if (next == std::string::npos) next = s.size();
      key.values.push_back(std::stoi(s.substr(pos, next - pos)));
      pos = next + 1;
    }
    return key;
  }
};

struct CanonicalKeyHash {
  std::size_t operator()(const CanonicalKey& k) const {
    std::size_t h = 0xcbf29ce484222325ULL;
    for (int v : k.values) {
      h ^= static_cast<std::size_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h;
  }
};

inline CanonicalKey canonicalize(const ProblemSpec& spec, const History& h) {
  CanonicalKey key;
  key.values.reserve(h.context.coords.size() + static_cast<std::size_t>(spec.num_actions));
  key.values.insert(key.values.end(), h.context.coords.begin(), h.context.coords.end());
  key.values.insert(key.values.end(), static_cast<std::size_t>(spec.num_actions),
                    CanonicalKey::kUntried);
  const std::size_t offset = h.context.coords.size();
  for (const TrialRecord& t : h.trials) {
    key.values[offset + static_cast<std::size_t>(t.action)] = t.outcome_index;
  }
  return key;
}

inline History extend(const History& h, int action, int outcome_index) {
  if (h.tried(action))
    throw RepeatedAction("action " + std::to_string(action) + " already tried");
  History out = h;
  out.trials.push_back({action, outcome_index});
  return out;
}

/// Max observed outcome value; empty histories yield nullopt (read as -inf).
inline std::optional<double> best_so_far(const ProblemSpec& spec, const History& h) {
  std::optional<double> best;
  for (const TrialRecord& t : h.trials) {
    double v = spec.value(t.outcome_index);
    if (!best || v > *best) best = v;
  }
  return best;
}

inline std::vector<int> untried(const ProblemSpec& spec, const History& h) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(spec.num_actions));
  for (int a = 0; a < spec.num_actions; ++a)
    if (!h.tried(a)) out.push_back(a);
  return out;
}

/// One recorded search: ordered trials plus whether it ended with an explicit
/// stop (terminal) or was cut off (censored).
struct Trajectory {
  Context context;
  std::vector<TrialRecord> steps;
  bool terminal = true;

  bool operator==(const Trajectory&) const = default;
};

/// Ground-truth evaluation unit: a context and the full potential-outcome
/// vector, one outcome index per action.
struct Subject {
  Context context;
  std::optional<int> moderator;
  std::vector<int> potential_outcomes;

  bool operator==(const Subject&) const = default;
};

struct Dataset {
  ProblemSpec spec;
  std::vector<Trajectory> trajectories;
};

inline void validate_trajectory(const ProblemSpec& spec, const Trajectory& t) {
  validate_context(spec, t.context);
  if (t.steps.size() > static_cast<std::size_t>(spec.num_actions))
    throw SpecMismatch("trajectory longer than action count");
  std::vector<bool> seen(static_cast<std::size_t>(spec.num_actions), false);
  for (const TrialRecord& r : t.steps) {
    if (r.action < 0 || r.action >= spec.num_actions)
      throw SpecMismatch("action id out of range");
    if (r.outcome_index < 0 || r.outcome_index >= spec.num_outcomes())
      throw SpecMismatch("outcome index out of range");
    if (seen[static_cast<std::size_t>(r.action)])
      throw RepeatedAction("repeated action in trajectory");
    seen[static_cast<std::size_t>(r.action)] = true;
  }
}

}  // namespace treatsearch
