// Command-line front end: generate | fit | solve | eval | sweep |
// oracle-check | step. Exit codes: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "treatsearch/core.hpp"
#include "treatsearch/dgp.hpp"
#include "treatsearch/eval.hpp"
#include "treatsearch/io.hpp"
#include "treatsearch/model.hpp"
#include "treatsearch/solvers.hpp"
#include "treatsearch/stopping.hpp"

namespace ts = treatsearch;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  double delta = 0.0;
  double epsilon = 0.0;
  double alpha = 1.0;
  double lambda = 0.35;
  double beta0 = 0.1;
  std::string bound = "exact";
  std::string estimator = "historical";
  std::string solver = "cdp";
  std::string toy;
  std::string in_path;
  std::string out_path;
  std::string panel_path;
  std::string model_path;
  std::string policy_path;
  std::string spec_path;
  std::string context;

  // generate
  int k = 5;
  int ny = 3;
  int d = 3;
  int v = 1;
  double weight_x = 1.0;
  double p_stop = 0.1;
  int n_train = 1000;
  int n_test = 1000;

  // fit (logistic)
  int epochs = 500;
  double learning_rate = 0.5;
  double l2 = 0.0;

  // oracle-check
  int instances = 50;

  // sweep
  std::string param = "delta";
  std::string grid = "";
  std::string curve_out;
};

ts::StoppingConfig stopping_of(const Options& opt) {
  ts::StoppingConfig cfg;
  cfg.epsilon = opt.epsilon;
  cfg.delta = opt.delta;
  cfg.alpha = opt.alpha;
  cfg.bound = ts::bound_mode_from_name(opt.bound);
  return cfg;
}

ts::EstimatorKind estimator_of(const std::string& name) {
  if (name == "tabular") return ts::EstimatorKind::Tabular;
  if (name == "historical") return ts::EstimatorKind::Historical;
  if (name == "logistic") return ts::EstimatorKind::Logistic;
  throw ts::ParseError("unknown estimator: " + name);
}

ts::SolverKind solver_of(const std::string& name) {
  if (name == "cdp") return ts::SolverKind::Cdp;
  if (name == "greedy") return ts::SolverKind::Greedy;
  if (name == "ndp") return ts::SolverKind::Ndp;
  throw ts::ParseError("unknown solver: " + name);
}

std::shared_ptr<ts::OutcomeModel> load_model(const Options& opt) {
  if (!opt.toy.empty()) {
    if (opt.toy == "example1") return ts::build_toy_example1();
    if (opt.toy == "a6") return ts::build_toy_a6(0.1);
    throw ts::ParseError("unknown toy: " + opt.toy);
  }
  if (opt.model_path.empty()) throw ts::ParseError("need --model or --toy");
  return ts::model_from_json(ts::read_json_file(opt.model_path));
}

std::vector<ts::Context> context_grid(const ts::ProblemSpec& spec) {
  std::vector<ts::Context> out;
  std::vector<int> cur;
  std::function<void(std::size_t)> walk = [&](std::size_t dim) {
    if (dim == spec.context_dims.size()) {
      out.push_back(ts::Context{cur});
      return;
    }
    for (int v = 0; v < spec.context_dims[dim]; ++v) {
      cur.push_back(v);
      walk(dim + 1);
      cur.pop_back();
    }
  };
  walk(0);
  return out;
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

std::vector<int> parse_coords(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

// --config supplies defaults; explicit flags override them. The file is read
// before CLI11 parses, so option defaults come from the document.
void apply_config(Options& opt) {
  if (opt.config.empty()) return;
  nlohmann::json j = ts::read_json_file(opt.config);
  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("seed", opt.seed);
  get("delta", opt.delta);
  get("epsilon", opt.epsilon);
  get("alpha", opt.alpha);
  get("lambda", opt.lambda);
  get("beta0", opt.beta0);
  get("bound", opt.bound);
  get("estimator", opt.estimator);
  get("solver", opt.solver);
  if (j.contains("dgp")) {
    const auto& d = j.at("dgp");
    auto getd = [&](const char* key, auto& slot) {
      if (d.contains(key)) slot = d.at(key).get<std::decay_t<decltype(slot)>>();
    };
    getd("num_actions", opt.k);
    getd("num_outcomes", opt.ny);
    getd("moderator_dims", opt.d);
    getd("context_dims", opt.v);
    getd("weight_x", opt.weight_x);
    getd("p_stop", opt.p_stop);
    getd("n_train", opt.n_train);
    getd("n_test", opt.n_test);
  }
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    auto getp = [&](const char* key, std::string& slot) {
      if (p.contains(key)) slot = p.at(key).get<std::string>();
    };
    getp("in", opt.in_path);
    getp("out", opt.out_path);
    getp("panel", opt.panel_path);
    getp("model", opt.model_path);
    getp("policy", opt.policy_path);
    getp("spec", opt.spec_path);
  }
}

int cmd_generate(const Options& opt) {
  if (opt.out_path.empty()) throw ts::ParseError("generate needs --out DIR");
  ts::DgpParams params;
  params.num_actions = opt.k;
  params.num_outcomes = opt.ny;
  params.moderator_dims = opt.d;
  params.context_dims = opt.v;
  params.weight_x = opt.weight_x;
  params.p_stop = opt.p_stop;
  params.seed = opt.seed;
  ts::DgpInstance inst = ts::build_instance(params);

  ts::Dataset train{inst.spec, {}};
  train.trajectories.reserve(static_cast<std::size_t>(opt.n_train));
  for (int i = 0; i < opt.n_train; ++i) {
    ts::Rng rng = ts::Rng::for_subject(opt.seed, static_cast<std::uint64_t>(i));
    ts::Subject s = ts::sample_subject(inst, rng);
    train.trajectories.push_back(ts::sample_trajectory(inst, s, rng));
  }
  std::vector<ts::Subject> test;
  test.reserve(static_cast<std::size_t>(opt.n_test));
  for (int i = 0; i < opt.n_test; ++i) {
    ts::Rng rng = ts::Rng::for_subject(opt.seed ^ 0x74657374ULL,
                                       static_cast<std::uint64_t>(i) + 0x100000000ULL);
    test.push_back(ts::sample_subject(inst, rng));
  }

  std::filesystem::create_directories(opt.out_path);
  auto at = [&](const char* name) {
    return (std::filesystem::path(opt.out_path) / name).string();
  };
  ts::write_json_file(at("instance.json"), ts::instance_to_json(inst));
  ts::write_json_file(at("spec.json"), ts::spec_to_json(inst.spec));
  ts::write_trajectories(at("train.csv"), train);
  ts::write_panels(at("test.csv"), inst.spec, test);
  std::cout << "wrote " << train.trajectories.size() << " trajectories and " << test.size()
            << " panel subjects to " << opt.out_path << "\n";
  return 0;
}

int cmd_fit(const Options& opt) {
  if (opt.in_path.empty() || opt.spec_path.empty() || opt.out_path.empty())
    throw ts::ParseError("fit needs --in, --spec and --out");
  ts::ProblemSpec spec = ts::spec_from_json(ts::read_json_file(opt.spec_path));
  ts::Dataset train = ts::read_trajectories(opt.in_path, spec);
  ts::LogisticModelConfig lcfg;
  lcfg.epochs = opt.epochs;
  lcfg.learning_rate = opt.learning_rate;
  lcfg.l2_penalty = opt.l2;
  lcfg.seed = opt.seed;
  std::shared_ptr<ts::OutcomeModel> model =
      ts::fit_estimator(train, estimator_of(opt.estimator), opt.beta0, lcfg);
  ts::write_json_file(opt.out_path, ts::model_to_json(*model));
  std::cout << "fitted " << opt.estimator << " model on " << train.trajectories.size()
            << " trajectories -> " << opt.out_path << "\n";
  return 0;
}

int cmd_solve(const Options& opt) {
  std::shared_ptr<ts::OutcomeModel> model = load_model(opt);
  std::vector<ts::Context> contexts = context_grid(model->spec());
  ts::StoppingConfig stopping = stopping_of(opt);
  std::shared_ptr<ts::Policy> policy =
      ts::build_policy(model, solver_of(opt.solver), stopping, opt.lambda, contexts);
  if (auto cdp = std::dynamic_pointer_cast<ts::CdpPolicy>(policy)) {
    std::cout << "expected search length: " << cdp->expected_length() << "\n";
  }
  if (!opt.out_path.empty()) {
    ts::write_json_file(opt.out_path, ts::policy_to_json(*policy));
    std::cout << "wrote policy -> " << opt.out_path << "\n";
  }
  return 0;
}

int cmd_eval(const Options& opt) {
  if (opt.policy_path.empty() || opt.panel_path.empty() || opt.spec_path.empty())
    throw ts::ParseError("eval needs --policy, --panel and --spec");
  ts::ProblemSpec spec = ts::spec_from_json(ts::read_json_file(opt.spec_path));
  std::shared_ptr<ts::Policy> policy =
      ts::policy_from_json(ts::read_json_file(opt.policy_path));
  std::vector<ts::Subject> subjects = ts::read_panels(opt.panel_path, spec);
  ts::EvalConfig cfg;
  cfg.epsilon = opt.epsilon;
  ts::Metrics m = ts::evaluate(*policy, spec, subjects, cfg);

  ts::ResultRow row;
  row.solver = opt.solver;
  row.estimator = opt.estimator;
  row.parameter_name = "delta";
  row.parameter_value = opt.delta;
  row.seed = opt.seed;
  row.metrics = m;
  std::cout << "efficacy: " << m.efficacy << " (se " << m.efficacy_se << ")\n"
            << "mean search time: " << m.mean_search_time << " (se " << m.mean_search_time_se
            << ")\n"
            << "worst search time: " << m.worst_search_time << "\n";
  if (!opt.out_path.empty()) ts::write_results_csv(opt.out_path, {row});
  if (!opt.curve_out.empty()) ts::write_curve_csv(opt.curve_out, {row});
  return 0;
}

int cmd_sweep(const Options& opt) {
  if (opt.in_path.empty() || opt.panel_path.empty() || opt.spec_path.empty() ||
      opt.out_path.empty())
    throw ts::ParseError("sweep needs --in, --panel, --spec and --out");
  ts::ProblemSpec spec = ts::spec_from_json(ts::read_json_file(opt.spec_path));
  ts::Dataset train = ts::read_trajectories(opt.in_path, spec);
  std::vector<ts::Subject> subjects = ts::read_panels(opt.panel_path, spec);

  ts::SweepConfig cfg;
  cfg.solver = solver_of(opt.solver);
  cfg.estimator = estimator_of(opt.estimator);
  cfg.param = opt.param == "lambda" ? ts::SweepParam::Lambda : ts::SweepParam::Delta;
  if (opt.param != "lambda" && opt.param != "delta")
    throw ts::ParseError("sweep --param must be delta or lambda");
  cfg.stopping = stopping_of(opt);
  cfg.beta0 = opt.beta0;
  cfg.lambda = opt.lambda;
  cfg.logistic.epochs = opt.epochs;
  cfg.logistic.learning_rate = opt.learning_rate;
  cfg.logistic.l2_penalty = opt.l2;
  cfg.eval.epsilon = opt.epsilon;

  std::vector<double> grid = parse_grid(opt.grid);
  if (grid.empty()) throw ts::ParseError("sweep needs --grid v1,v2,...");
  ts::SweepResult result = ts::sweep(train, subjects, grid, cfg);

  std::vector<ts::ResultRow> rows;
  for (const auto& [value, metrics] : result.rows) {
    ts::ResultRow row;
    row.solver = opt.solver;
    row.estimator = opt.estimator;
    row.parameter_name = opt.param;
    row.parameter_value = value;
    row.seed = opt.seed;
    row.metrics = metrics;
    rows.push_back(row);
    std::cout << opt.param << "=" << value << " efficacy=" << metrics.efficacy
              << " mean_time=" << metrics.mean_search_time << "\n";
  }
  ts::write_results_csv(opt.out_path, rows);
  if (!opt.curve_out.empty()) ts::write_curve_csv(opt.curve_out, rows);
  return 0;
}

int cmd_oracle_check(const Options& opt) {
  if (opt.k > 4 || opt.ny > 3)
    throw ts::ParseError("oracle-check limited to --k <= 4 and --ny <= 2 or 3");
  std::vector<double> grid(static_cast<std::size_t>(opt.ny));
  for (int y = 0; y < opt.ny; ++y) grid[static_cast<std::size_t>(y)] = y;
  const std::vector<double> deltas = {0.0, 0.2, 0.5};
  int matches = 0;
  for (int i = 0; i < opt.instances; ++i) {
    ts::Rng rng = ts::Rng::for_subject(opt.seed, static_cast<std::uint64_t>(i));
    ts::ProblemSpec spec{opt.k, grid, {2}};
    auto model = ts::random_joint_instance(spec, rng);
    ts::StoppingConfig cfg;
    cfg.delta = deltas[static_cast<std::size_t>(rng.next_u64() % deltas.size())];
    bool ok = true;
    for (int c = 0; c < 2 && ok; ++c) {
      ts::Context ctx{{c}};
      auto policy = ts::solve_cdp(*model, cfg, {ctx});
      ts::BruteForceResult res = ts::brute_force_optimal(*model, cfg, ctx);
      ok = std::fabs(policy->expected_length(ctx) - res.expected_trials) <= 1e-9;
    }
    if (ok) ++matches;
  }
  std::cout << matches << "/" << opt.instances << " matches\n";
  return matches == opt.instances ? 0 : 2;
}

int cmd_step(const Options& opt) {
  std::shared_ptr<ts::OutcomeModel> model = load_model(opt);
  const ts::ProblemSpec& spec = model->spec();
  ts::StoppingConfig stopping = stopping_of(opt);

  ts::Context ctx;
  if (!opt.context.empty()) {
    ctx.coords = parse_coords(opt.context);
  } else {
    ctx = context_grid(spec).front();
  }
  ts::validate_context(spec, ctx);
  auto policy = ts::solve_cdp(*model, stopping, {ctx});

  std::cout << "interactive session; stopping threshold delta/alpha = "
            << stopping.threshold() << "\n"
            << "outcome grid:";
  for (int y = 0; y < spec.num_outcomes(); ++y)
    std::cout << " [" << y << "]=" << spec.value(y);
  std::cout << "\nenter the observed outcome index after each trial, or q to quit.\n";

  ts::History h{ctx, {}};
  while (true) {
    double r_exact = ts::rho(*model, h, stopping.epsilon, ts::BoundMode::Exact);
    double r_upper = ts::rho(*model, h, stopping.epsilon, ts::BoundMode::Upper);
    double r_lower = ts::rho(*model, h, stopping.epsilon, ts::BoundMode::Lower);
    std::cout << "rho exact=" << r_exact << " upper=" << r_upper << " lower=" << r_lower
              << "\n";
    int choice = policy->decide(h);
    if (choice == ts::kStop) {
      std::cout << "STOP (stopping constraint satisfied)\n";
      return 0;
    }
    std::cout << "recommended action: " << choice << "\n> " << std::flush;
    std::string line;
    if (!std::getline(std::cin, line) || line == "q" || line == "quit") {
      std::cout << "\nsession ended\n";
      return 0;
    }
    int outcome;
    try {
      outcome = std::stoi(line);
    } catch (const std::exception&) {
      std::cout << "please enter an outcome index in [0, " << spec.num_outcomes() - 1
                << "] or q\n";
      continue;
    }
    if (outcome < 0 || outcome >= spec.num_outcomes()) {
      std::cout << "outcome index out of range\n";
      continue;
    }
    h = ts::extend(h, choice, outcome);
    std::cout << "recorded action " << choice << " -> outcome " << outcome
              << " (value " << spec.value(outcome) << ")\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  // pre-scan for --config so its values become flag defaults
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") opt.config = argv[i + 1];
  }
  try {
    apply_config(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App app{"Search for near-optimal treatments in minimal expected trials"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "JSON config supplying flag defaults");
    sub->add_option("--seed", opt.seed, "random seed");
    sub->add_option("--delta", opt.delta, "stopping failure budget");
    sub->add_option("--epsilon", opt.epsilon, "near-optimality slack");
    sub->add_option("--alpha", opt.alpha, "confounding sensitivity factor")
        ->check(CLI::PositiveNumber);
    sub->add_option("--lambda", opt.lambda, "trial penalty for the ndp baseline");
    sub->add_option("--beta0", opt.beta0, "Dirichlet pseudo-count");
    sub->add_option("--bound", opt.bound, "rho computation mode")
        ->check(CLI::IsMember({"exact", "upper", "lower"}));
    sub->add_option("--estimator", opt.estimator, "outcome model estimator")
        ->check(CLI::IsMember({"tabular", "historical", "logistic"}));
    sub->add_option("--solver", opt.solver, "policy solver")
        ->check(CLI::IsMember({"cdp", "greedy", "ndp"}));
    sub->add_option("--toy", opt.toy, "built-in toy instance")
        ->check(CLI::IsMember({"example1", "a6"}));
    sub->add_option("--in", opt.in_path, "input trajectory csv");
    sub->add_option("--out", opt.out_path, "output path");
    sub->add_option("--panel", opt.panel_path, "complete-panel csv");
    sub->add_option("--model", opt.model_path, "model json");
    sub->add_option("--policy", opt.policy_path, "policy json");
    sub->add_option("--spec", opt.spec_path, "problem spec json");
  };

  CLI::App* generate = app.add_subcommand("generate", "sample a synthetic instance and data");
  add_common(generate);
  generate->add_option("--k", opt.k, "number of actions");
  generate->add_option("--ny", opt.ny, "number of outcome levels");
  generate->add_option("--d", opt.d, "moderator dimensions");
  generate->add_option("--v", opt.v, "context dimensions");
  generate->add_option("--weight-x", opt.weight_x, "context weight in outcome params");
  generate->add_option("--p-stop", opt.p_stop, "behavior stop probability");
  generate->add_option("--n-train", opt.n_train, "training trajectories");
  generate->add_option("--n-test", opt.n_test, "test panel subjects");

  CLI::App* fit = app.add_subcommand("fit", "fit an outcome model from trajectories");
  add_common(fit);
  fit->add_option("--epochs", opt.epochs, "logistic training epochs");
  fit->add_option("--learning-rate", opt.learning_rate, "logistic step size");
  fit->add_option("--l2", opt.l2, "logistic l2 penalty");

  CLI::App* solve = app.add_subcommand("solve", "solve a policy from a model");
  add_common(solve);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a policy on a panel");
  add_common(eval);
  eval->add_option("--curve-out", opt.curve_out, "best-so-far curve csv");

  CLI::App* sweep = app.add_subcommand("sweep", "fit once, solve and evaluate over a grid");
  add_common(sweep);
  sweep->add_option("--param", opt.param, "swept parameter")
      ->check(CLI::IsMember({"delta", "lambda"}));
  sweep->add_option("--grid", opt.grid, "comma-separated grid values");
  sweep->add_option("--curve-out", opt.curve_out, "best-so-far curve csv");
  sweep->add_option("--epochs", opt.epochs, "logistic training epochs");
  sweep->add_option("--learning-rate", opt.learning_rate, "logistic step size");
  sweep->add_option("--l2", opt.l2, "logistic l2 penalty");

  CLI::App* oracle = app.add_subcommand("oracle-check",
                                        "compare the dp against brute force on random instances");
  add_common(oracle);
  oracle->add_option("--instances", opt.instances, "number of random instances");
  oracle->add_option("--k", opt.k, "number of actions")->check(CLI::Range(1, 4));
  oracle->add_option("--ny", opt.ny, "number of outcome levels")->check(CLI::Range(2, 3));

  CLI::App* step = app.add_subcommand("step", "interactive search session");
  add_common(step);
  step->add_option("--context", opt.context, "context coordinates, comma-separated");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (generate->parsed()) return cmd_generate(opt);
    if (fit->parsed()) return cmd_fit(opt);
    if (solve->parsed()) return cmd_solve(opt);
    if (eval->parsed()) return cmd_eval(opt);
    if (sweep->parsed()) return cmd_sweep(opt);
    if (oracle->parsed()) {
      if (!oracle->count("--k")) opt.k = 3;
      if (!oracle->count("--ny")) opt.ny = 2;
      return cmd_oracle_check(opt);
    }
    if (step->parsed()) return cmd_step(opt);
  } catch (const ts::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
