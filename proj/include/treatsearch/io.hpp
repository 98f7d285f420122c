#pragma once

#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "treatsearch/core.hpp"
#include "treatsearch/dgp.hpp"
#include "treatsearch/eval.hpp"
#include "treatsearch/model.hpp"
#include "treatsearch/solvers.hpp"
#include "treatsearch/stopping.hpp"

namespace treatsearch {

inline constexpr int kFormatVersion = 1;

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

inline nlohmann::json spec_to_json(const ProblemSpec& spec) {
  return {{"num_actions", spec.num_actions},
          {"outcome_values", spec.outcome_values},
          {"context_dims", spec.context_dims}};
}

inline ProblemSpec spec_from_json(const nlohmann::json& j) {
  ProblemSpec spec;
  spec.num_actions = j.at("num_actions").get<int>();
  spec.outcome_values = j.at("outcome_values").get<std::vector<double>>();
  spec.context_dims = j.at("context_dims").get<std::vector<int>>();
  spec.validate();
  return spec;
}

inline std::string bound_mode_name(BoundMode mode) {
  switch (mode) {
    case BoundMode::Exact: return "exact";
    case BoundMode::Upper: return "upper";
    case BoundMode::Lower: return "lower";
  }
  return "exact";
}

inline BoundMode bound_mode_from_name(const std::string& name) {
  if (name == "exact") return BoundMode::Exact;
  if (name == "upper") return BoundMode::Upper;
  if (name == "lower") return BoundMode::Lower;
  throw ParseError("unknown bound mode: " + name);
}

inline nlohmann::json stopping_to_json(const StoppingConfig& cfg) {
  return {{"epsilon", cfg.epsilon},
          {"delta", cfg.delta},
          {"alpha", cfg.alpha},
          {"bound", bound_mode_name(cfg.bound)},
          {"average_permutations", cfg.average_permutations}};
}

inline StoppingConfig stopping_from_json(const nlohmann::json& j) {
  StoppingConfig cfg;
  cfg.epsilon = j.at("epsilon").get<double>();
  cfg.delta = j.at("delta").get<double>();
  cfg.alpha = j.at("alpha").get<double>();
  cfg.bound = bound_mode_from_name(j.at("bound").get<std::string>());
  cfg.average_permutations = j.value("average_permutations", false);
  return cfg;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

// ---------------------------------------------------------------------------
// CSV primitives
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline long parse_int(const std::string& s, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": not an integer: '" + s + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Trajectory files
// ---------------------------------------------------------------------------

inline void write_trajectories(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  const std::size_t dims = dataset.spec.context_dims.size();
  out << "subject_id";
  for (std::size_t i = 0; i < dims; ++i) out << ",x" << i;
  out << ",step,action,outcome_index,terminal\n";
  for (std::size_t sid = 0; sid < dataset.trajectories.size(); ++sid) {
    const Trajectory& traj = dataset.trajectories[sid];
    for (std::size_t s = 0; s < traj.steps.size(); ++s) {
      out << sid;
      for (int c : traj.context.coords) out << ',' << c;
      bool last = s + 1 == traj.steps.size();
      out << ',' << (s + 1) << ',' << traj.steps[s].action << ','
          << traj.steps[s].outcome_index << ',' << (last && traj.terminal ? 1 : 0) << "\n";
    }
  }
}

inline Dataset read_trajectories(const std::string& path, const ProblemSpec& spec) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  const std::size_t dims = spec.context_dims.size();
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty file: " + path);
  {
    std::string expected = "subject_id";
    for (std::size_t i = 0; i < dims; ++i) expected += ",x" + std::to_string(i);
    expected += ",step,action,outcome_index,terminal";
    if (line != expected)
      throw SpecMismatch("trajectory header mismatch: expected '" + expected + "'");
  }

  Dataset dataset{spec, {}};
  long current_id = -1;
  Trajectory current;
  bool have_current = false;
  auto flush = [&]() {
    if (have_current) {
      validate_trajectory(spec, current);
      dataset.trajectories.push_back(std::move(current));
      current = Trajectory{};
    }
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != dims + 5)
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(dims + 5) + " fields");
    long sid = detail::parse_int(fields[0], line_no);
    Context ctx;
    for (std::size_t i = 0; i < dims; ++i)
      ctx.coords.push_back(static_cast<int>(detail::parse_int(fields[1 + i], line_no)));
    long step = detail::parse_int(fields[1 + dims], line_no);
    int action = static_cast<int>(detail::parse_int(fields[2 + dims], line_no));
    int outcome = static_cast<int>(detail::parse_int(fields[3 + dims], line_no));
    int terminal = static_cast<int>(detail::parse_int(fields[4 + dims], line_no));

    if (sid != current_id) {
      flush();
      current_id = sid;
      current = Trajectory{ctx, {}, false};
      have_current = true;
    } else if (current.terminal) {
      throw ParseError("line " + std::to_string(line_no) + ": subject " +
                       std::to_string(sid) + " continues past its terminal row");
    } else if (ctx.coords != current.context.coords) {
      throw ParseError("line " + std::to_string(line_no) + ": context changed mid-subject");
    }
    if (step != static_cast<long>(current.steps.size()) + 1)
      throw ParseError("line " + std::to_string(line_no) + ": steps must be contiguous from 1");
    for (const TrialRecord& r : current.steps) {
      if (r.action == action)
        throw RepeatedAction("subject " + std::to_string(sid) + ": repeated action " +
                             std::to_string(action));
    }
    current.steps.push_back({action, outcome});
    if (terminal != 0) current.terminal = true;
  }
  flush();
  return dataset;
}

// ---------------------------------------------------------------------------
// Complete-panel files
// ---------------------------------------------------------------------------

inline void write_panels(const std::string& path, const ProblemSpec& spec,
                         const std::vector<Subject>& subjects) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  const std::size_t dims = spec.context_dims.size();
  out << "subject_id";
  for (std::size_t i = 0; i < dims; ++i) out << ",x" << i;
  for (int a = 0; a < spec.num_actions; ++a) out << ",y_a" << a;
  out << "\n";
  for (std::size_t sid = 0; sid < subjects.size(); ++sid) {
    out << sid;
    for (int c : subjects[sid].context.coords) out << ',' << c;
    for (int o : subjects[sid].potential_outcomes) out << ',' << o;
    out << "\n";
  }
}

inline std::vector<Subject> read_panels(const std::string& path, const ProblemSpec& spec) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  const std::size_t dims = spec.context_dims.size();
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty file: " + path);
  {
    std::string expected = "subject_id";
    for (std::size_t i = 0; i < dims; ++i) expected += ",x" + std::to_string(i);
    for (int a = 0; a < spec.num_actions; ++a) expected += ",y_a" + std::to_string(a);
    if (line != expected)
      throw SpecMismatch("panel header mismatch: expected '" + expected + "'");
  }
  std::vector<Subject> subjects;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != dims + 1 + static_cast<std::size_t>(spec.num_actions))
      throw SpecMismatch("line " + std::to_string(line_no) + ": wrong column count");
    Subject s;
    for (std::size_t i = 0; i < dims; ++i)
      s.context.coords.push_back(static_cast<int>(detail::parse_int(fields[1 + i], line_no)));
    validate_context(spec, s.context);
    for (int a = 0; a < spec.num_actions; ++a) {
      int o = static_cast<int>(detail::parse_int(fields[1 + dims + static_cast<std::size_t>(a)],
                                                 line_no));
      if (o < 0 || o >= spec.num_outcomes())
        throw SpecMismatch("line " + std::to_string(line_no) + ": outcome index out of range");
      s.potential_outcomes.push_back(o);
    }
    subjects.push_back(std::move(s));
  }
  return subjects;
}

// ---------------------------------------------------------------------------
// Model persistence
// ---------------------------------------------------------------------------

inline nlohmann::json model_to_json(const OutcomeModel& model) {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["spec"] = spec_to_json(model.spec());
  if (const auto* tab = dynamic_cast<const TabularModel*>(&model)) {
    j["kind"] = "tabular";
    j["smoothing"] = {
        {"prior", tab->smoothing().prior_kind == PriorKind::Historical ? "historical"
                                                                       : "uninformed"},
        {"beta0", tab->smoothing().beta0}};
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [key, cell] : tab->counts().cells) counts[key.to_string()] = cell;
    j["counts"] = std::move(counts);
  } else if (const auto* log = dynamic_cast<const LogisticModel*>(&model)) {
    j["kind"] = "logistic";
    j["parameters"] = {{"weights", log->weights()},
                       {"degenerate", log->degenerate()},
                       {"degenerate_class", log->degenerate_class()}};
  } else if (const auto* joint = dynamic_cast<const JointOutcomeModel*>(&model)) {
    j["kind"] = "joint";
    nlohmann::json tables = nlohmann::json::array();
    for (const auto& [coords, atoms] : joint->atoms()) {
      nlohmann::json entry;
      entry["context"] = coords;
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& atom : atoms)
        arr.push_back({{"prob", atom.prob}, {"outcomes", atom.outcomes}});
      entry["atoms"] = std::move(arr);
      tables.push_back(std::move(entry));
    }
    j["tables"] = std::move(tables);
  } else {
    throw SpecMismatch("model kind not serializable");
  }
  return j;
}

inline std::shared_ptr<OutcomeModel> model_from_json(const nlohmann::json& j) {
  ProblemSpec spec = spec_from_json(j.at("spec"));
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "tabular") {
    SmoothingConfig smoothing;
    smoothing.prior_kind = j.at("smoothing").at("prior").get<std::string>() == "historical"
                               ? PriorKind::Historical
                               : PriorKind::Uninformed;
    smoothing.beta0 = j.at("smoothing").at("beta0").get<double>();
    CountTable table;
    for (const auto& [key_str, cell] : j.at("counts").items()) {
      table.cells[CanonicalKey::from_string(key_str)] =
          cell.get<std::vector<std::vector<std::int64_t>>>();
    }
    return std::make_shared<TabularModel>(std::move(spec), std::move(table), smoothing);
  }
  if (kind == "logistic") {
    const auto& p = j.at("parameters");
    return std::make_shared<LogisticModel>(
        std::move(spec), p.at("weights").get<std::vector<std::vector<double>>>(),
        p.at("degenerate").get<bool>(), p.at("degenerate_class").get<int>());
  }
  if (kind == "joint") {
    std::map<std::vector<int>, std::vector<JointOutcomeModel::Atom>> per_context;
    for (const auto& entry : j.at("tables")) {
      std::vector<JointOutcomeModel::Atom> atoms;
      for (const auto& a : entry.at("atoms"))
        atoms.push_back(
            {a.at("prob").get<double>(), a.at("outcomes").get<std::vector<int>>()});
      per_context[entry.at("context").get<std::vector<int>>()] = std::move(atoms);
    }
    return std::make_shared<JointOutcomeModel>(std::move(spec), std::move(per_context));
  }
  throw ParseError("unknown model kind: " + kind);
}

// ---------------------------------------------------------------------------
// Policy persistence
// ---------------------------------------------------------------------------

inline nlohmann::json policy_to_json(const Policy& policy) {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  auto contexts_json = [](const std::vector<Context>& contexts) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Context& c : contexts) arr.push_back(c.coords);
    return arr;
  };
  if (const auto* cdp = dynamic_cast<const CdpPolicy*>(&policy)) {
    j["kind"] = "cdp";
    j["spec"] = spec_to_json(cdp->spec());
    j["stopping"] = stopping_to_json(cdp->stopping());
    j["contexts"] = contexts_json(cdp->contexts());
    nlohmann::json table = nlohmann::json::object();
    for (const auto& [key, e] : cdp->table())
      table[key.to_string()] = {
          {"value", e.value}, {"choice", e.choice}, {"stop_allowed", e.stop_allowed}};
    j["table"] = std::move(table);
  } else if (const auto* ndp = dynamic_cast<const NdpPolicy*>(&policy)) {
    j["kind"] = "ndp";
    j["spec"] = spec_to_json(ndp->spec());
    j["lambda"] = ndp->lambda();
    j["contexts"] = contexts_json(ndp->contexts());
    nlohmann::json table = nlohmann::json::object();
    for (const auto& [key, e] : ndp->table())
      table[key.to_string()] = {{"value", e.value}, {"choice", e.choice}};
    j["table"] = std::move(table);
  } else if (const auto* greedy = dynamic_cast<const GreedyPolicy*>(&policy)) {
    j["kind"] = "greedy";
    j["spec"] = spec_to_json(greedy->model().spec());
    j["stopping"] = stopping_to_json(greedy->stopping());
    j["model"] = model_to_json(greedy->model());
  } else {
    throw SpecMismatch("policy kind not serializable");
  }
  return j;
}

inline std::shared_ptr<Policy> policy_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  auto contexts_of_json = [](const nlohmann::json& arr) {
    std::vector<Context> contexts;
    for (const auto& c : arr) contexts.push_back(Context{c.get<std::vector<int>>()});
    return contexts;
  };
  if (kind == "cdp") {
    auto policy = std::make_shared<CdpPolicy>(spec_from_json(j.at("spec")),
                                              stopping_from_json(j.at("stopping")),
                                              contexts_of_json(j.at("contexts")));
    for (const auto& [key_str, e] : j.at("table").items()) {
      policy->table()[CanonicalKey::from_string(key_str)] = {
          e.at("value").get<double>(), e.at("choice").get<int>(),
          e.at("stop_allowed").get<bool>()};
    }
    return policy;
  }
  if (kind == "ndp") {
    auto policy = std::make_shared<NdpPolicy>(spec_from_json(j.at("spec")),
                                              j.at("lambda").get<double>(),
                                              contexts_of_json(j.at("contexts")));
    for (const auto& [key_str, e] : j.at("table").items()) {
      policy->table()[CanonicalKey::from_string(key_str)] = {e.at("value").get<double>(),
                                                             e.at("choice").get<int>()};
    }
    return policy;
  }
  if (kind == "greedy") {
    std::shared_ptr<OutcomeModel> model = model_from_json(j.at("model"));
    return std::make_shared<GreedyPolicy>(std::move(model),
                                          stopping_from_json(j.at("stopping")));
  }
  throw ParseError("unknown policy kind: " + kind);
}

// ---------------------------------------------------------------------------
// DGP instance persistence
// ---------------------------------------------------------------------------

inline nlohmann::json instance_to_json(const DgpInstance& inst) {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["params"] = {{"num_actions", inst.params.num_actions},
                 {"num_outcomes", inst.params.num_outcomes},
                 {"moderator_dims", inst.params.moderator_dims},
                 {"context_dims", inst.params.context_dims},
                 {"weight_x", inst.params.weight_x},
                 {"p_stop", inst.params.p_stop},
                 {"seed", inst.params.seed}};
  j["spec"] = spec_to_json(inst.spec);
  j["alpha"] = inst.alpha;
  j["beta"] = inst.beta;
  j["u1"] = inst.u1;
  j["u2"] = inst.u2;
  j["eta"] = inst.eta;
  j["u1_neg"] = inst.u1_neg;
  j["u1_pos"] = inst.u1_pos;
  j["u2_neg"] = inst.u2_neg;
  j["u2_pos"] = inst.u2_pos;
  j["delta_sim"] = inst.delta_sim;
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& [key, table] : inst.outcome_tables) {
    tables.push_back({{"x", key.first}, {"z", key.second}, {"p", table}});
  }
  j["outcome_tables"] = std::move(tables);
  return j;
}

inline DgpInstance instance_from_json(const nlohmann::json& j) {
  DgpInstance inst;
  const auto& p = j.at("params");
  inst.params = DgpParams{p.at("num_actions").get<int>(),
                          p.at("num_outcomes").get<int>(),
                          p.at("moderator_dims").get<int>(),
                          p.at("context_dims").get<int>(),
                          p.at("weight_x").get<double>(),
                          p.at("p_stop").get<double>(),
                          p.at("seed").get<std::uint64_t>()};
  inst.spec = spec_from_json(j.at("spec"));
  inst.alpha = j.at("alpha").get<std::vector<double>>();
  inst.beta = j.at("beta").get<std::vector<std::vector<double>>>();
  inst.u1 = j.at("u1").get<std::vector<std::vector<double>>>();
  inst.u2 = j.at("u2").get<std::vector<std::vector<double>>>();
  inst.eta = j.at("eta").get<std::vector<std::vector<double>>>();
  inst.u1_neg = j.at("u1_neg").get<std::vector<double>>();
  inst.u1_pos = j.at("u1_pos").get<std::vector<double>>();
  inst.u2_neg = j.at("u2_neg").get<std::vector<double>>();
  inst.u2_pos = j.at("u2_pos").get<std::vector<double>>();
  inst.delta_sim = j.at("delta_sim").get<std::vector<std::vector<double>>>();
  for (const auto& entry : j.at("outcome_tables")) {
    inst.outcome_tables[{entry.at("x").get<std::vector<int>>(),
                         entry.at("z").get<std::vector<int>>()}] =
        entry.at("p").get<std::vector<std::vector<double>>>();
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Result files
// ---------------------------------------------------------------------------

struct ResultRow {
  std::string solver;
  std::string estimator;
  std::string parameter_name;
  double parameter_value = 0.0;
  std::uint64_t seed = 0;
  Metrics metrics;
};

inline void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << "solver,estimator,parameter_name,parameter_value,seed,efficacy,efficacy_se,"
         "mean_search_time,mean_search_time_se,worst_search_time,n_subjects\n";
  out.precision(12);
  for (const ResultRow& r : rows) {
    out << r.solver << ',' << r.estimator << ',' << r.parameter_name << ','
        << r.parameter_value << ',' << r.seed << ',' << r.metrics.efficacy << ','
        << r.metrics.efficacy_se << ',' << r.metrics.mean_search_time << ','
        << r.metrics.mean_search_time_se << ',' << r.metrics.worst_search_time << ','
        << r.metrics.n_subjects << "\n";
  }
}

inline void write_curve_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << "solver,estimator,parameter_name,parameter_value,seed,trial,mean_best_outcome\n";
  out.precision(12);
  for (const ResultRow& r : rows) {
    for (std::size_t t = 0; t < r.metrics.best_so_far_curve.size(); ++t) {
      out << r.solver << ',' << r.estimator << ',' << r.parameter_name << ','
          << r.parameter_value << ',' << r.seed << ',' << (t + 1) << ','
          << r.metrics.best_so_far_curve[t] << "\n";
    }
  }
}

}  // namespace treatsearch
