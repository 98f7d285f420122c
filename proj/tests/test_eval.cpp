#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "treatsearch/core.hpp"
#include "treatsearch/dgp.hpp"
#include "treatsearch/eval.hpp"
#include "treatsearch/solvers.hpp"

using namespace treatsearch;

namespace {

// tries actions in ascending id order and never stops voluntarily
struct ExhaustivePolicy : Policy {
  explicit ExhaustivePolicy(ProblemSpec spec) : spec(std::move(spec)) {}
  int decide(const History& h) const override {
    auto free_actions = untried(spec, h);
    return free_actions.empty() ? kStop : free_actions.front();
  }
  ProblemSpec spec;
};

struct StopImmediatelyPolicy : Policy {
  int decide(const History&) const override { return kStop; }
};

std::vector<Subject> toy_subjects(const JointOutcomeModel& model, int n, std::uint64_t seed) {
  std::vector<Subject> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::for_subject(seed, static_cast<std::uint64_t>(i));
    out.push_back(model.sample_subject(Context{{0}}, rng));
  }
  return out;
}

}  // namespace

TEST_CASE("rollout terminates at stop and reports terminal") {
  auto model = build_toy_example1();
  auto policy = solve_cdp(*model, StoppingConfig{}, {Context{{0}}});
  Subject s{Context{{0}}, std::nullopt, {1, 0, 0}};
  Trajectory traj = rollout(*policy, model->spec(), s);
  CHECK(traj.terminal);
  // dp starts with action 1 (fails here), then action 0 succeeds
  REQUIRE(traj.steps.size() == 2);
  CHECK(traj.steps[0] == TrialRecord{1, 0});
  CHECK(traj.steps[1] == TrialRecord{0, 1});
}

TEST_CASE("rollout censors at max_steps") {
  auto model = build_toy_example1();
  ExhaustivePolicy policy(model->spec());
  Subject s{Context{{0}}, std::nullopt, {0, 0, 0}};
  Trajectory censored = rollout(policy, model->spec(), s, 2);
  CHECK_FALSE(censored.terminal);
  CHECK(censored.steps.size() == 2);

  Trajectory full = rollout(policy, model->spec(), s);
  CHECK(full.terminal);  // stops once everything is tried
  CHECK(full.steps.size() == 3);
}

TEST_CASE("evaluate on the exhaustive policy always finds the best") {
  auto model = build_toy_example1();
  ExhaustivePolicy policy(model->spec());
  auto subjects = toy_subjects(*model, 400, 1);
  Metrics m = evaluate(policy, model->spec(), subjects, EvalConfig{});
  CHECK(m.efficacy == 1.0);
  CHECK(m.mean_search_time == 3.0);
  CHECK(m.worst_search_time == 3.0);
  CHECK(m.n_subjects == 400);
}

TEST_CASE("evaluate the dp policy on the four-class toy") {
  auto model = build_toy_example1();
  auto policy = solve_cdp(*model, StoppingConfig{}, {Context{{0}}});
  auto subjects = toy_subjects(*model, 4000, 2);
  Metrics m = evaluate(*policy, model->spec(), subjects, EvalConfig{});
  // delta = 0 guarantees the constraint is met on every subject
  CHECK(m.efficacy == 1.0);
  CHECK(std::fabs(m.mean_search_time - 1.4) < 4.0 * m.mean_search_time_se + 1e-9);
  CHECK(m.worst_search_time <= 2.0);
}

TEST_CASE("stopping immediately fails subjects with any success") {
  auto model = build_toy_example1();
  StopImmediatelyPolicy policy;
  auto subjects = toy_subjects(*model, 500, 3);
  Metrics m = evaluate(policy, model->spec(), subjects, EvalConfig{});
  // every toy class has at least one success, so immediate stopping never
  // reaches the best outcome
  CHECK(m.efficacy == 0.0);
  CHECK(m.mean_search_time == 0.0);
  CHECK(m.best_so_far_curve.empty() == false);
}

TEST_CASE("the efficacy slack forgives near misses") {
  // grid {0.5, 0.6, 1.0}; the subject's best is 1.0 via action 0 but the
  // policy only ever tries action 1, reaching 0.6
  auto model = build_toy_a6(0.1);
  std::vector<Subject> subjects = {{Context{{0}}, std::nullopt, {2, 1}}};
  struct FirstOnly : Policy {
    int decide(const History& h) const override { return h.trials.empty() ? 1 : kStop; }
  } first_only;
  Metrics tight = evaluate(first_only, model->spec(), subjects, EvalConfig{0.0});
  CHECK(tight.efficacy == 0.0);
  Metrics slack = evaluate(first_only, model->spec(), subjects, EvalConfig{0.4});
  CHECK(slack.efficacy == 1.0);

  // the empty search counts as minus infinity, slack never rescues it
  StopImmediatelyPolicy never;
  Metrics empty_search = evaluate(never, model->spec(), subjects, EvalConfig{0.4});
  CHECK(empty_search.efficacy == 0.0);
}

TEST_CASE("rollout with zero budget is censored before acting") {
  auto model = build_toy_a6(0.1);
  ExhaustivePolicy policy(model->spec());
  Subject s{Context{{0}}, std::nullopt, {0, 1}};
  Trajectory traj = rollout(policy, model->spec(), s, 0);
  CHECK_FALSE(traj.terminal);
  CHECK(traj.steps.empty());
}

TEST_CASE("best so far curve carries the terminal value forward") {
  auto model = build_toy_example1();
  struct FirstOnly : Policy {
    int decide(const History& h) const override { return h.trials.empty() ? 0 : kStop; }
  } policy;
  std::vector<Subject> subjects = {{Context{{0}}, std::nullopt, {1, 0, 0}},
                                   {Context{{0}}, std::nullopt, {0, 1, 1}}};
  Metrics m = evaluate(policy, model->spec(), subjects, EvalConfig{});
  REQUIRE(m.best_so_far_curve.size() == 3);
  CHECK(m.best_so_far_curve[0] == Catch::Approx(0.5));
  CHECK(m.best_so_far_curve[1] == Catch::Approx(0.5));
  CHECK(m.best_so_far_curve[2] == Catch::Approx(0.5));
}

TEST_CASE("subject weights shift the averages") {
  auto model = build_toy_example1();
  struct FirstOnly : Policy {
    int decide(const History& h) const override { return h.trials.empty() ? 0 : kStop; }
  } policy;
  std::vector<Subject> subjects = {{Context{{0}}, std::nullopt, {1, 0, 0}},
                                   {Context{{0}}, std::nullopt, {0, 1, 1}}};
  Metrics even = evaluate(policy, model->spec(), subjects, EvalConfig{}, {1.0, 1.0});
  CHECK(even.efficacy == 0.5);
  Metrics skewed = evaluate(policy, model->spec(), subjects, EvalConfig{}, {3.0, 1.0});
  CHECK(skewed.efficacy == 0.75);
  CHECK_THROWS_AS(evaluate(policy, model->spec(), subjects, EvalConfig{}, {1.0}),
                  SpecMismatch);
}

TEST_CASE("emulated behavior reproduces observed choice frequencies") {
  ProblemSpec spec{2, {0.0, 1.0}, {1}};
  Dataset d{spec, {}};
  // at the empty history: action 0 three times, action 1 once
  d.trajectories.push_back({{{0}}, {{0, 1}}, true});
  d.trajectories.push_back({{{0}}, {{0, 0}}, true});
  d.trajectories.push_back({{{0}}, {{0, 1}}, true});
  d.trajectories.push_back({{{0}}, {{1, 1}}, true});
  EmulatedBehaviorPolicy policy(d, 99);

  auto dist = policy.distribution(History{{{0}}, {}});
  CHECK(dist[0] == Catch::Approx(0.75));
  CHECK(dist[1] == Catch::Approx(0.25));
  // 4 action decisions + 4 stop decisions
  CHECK(policy.marginal_stop_rate() == Catch::Approx(0.5));

  int zeros = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    int choice = policy.decide(History{{{0}}, {}});
    if (choice == 0) ++zeros;
  }
  CHECK(std::fabs(zeros / static_cast<double>(n) - 0.75) < 0.03);
}

TEST_CASE("emulated behavior never repeats an action") {
  DgpParams params;
  params.seed = 6;
  DgpInstance inst = build_instance(params);
  Dataset d{inst.spec, {}};
  for (int i = 0; i < 300; ++i) {
    Rng rng = Rng::for_subject(7, static_cast<std::uint64_t>(i));
    Subject s = sample_subject(inst, rng);
    d.trajectories.push_back(sample_trajectory(inst, s, rng));
  }
  EmulatedBehaviorPolicy policy(d, 5);
  for (int i = 0; i < 50; ++i) {
    Rng rng = Rng::for_subject(8, static_cast<std::uint64_t>(i));
    Subject s = sample_subject(inst, rng);
    CHECK_NOTHROW(rollout(policy, inst.spec, s));
  }
}

TEST_CASE("sweeping delta gives non-increasing search times") {
  auto truth = build_toy_example1();
  Dataset train{truth->spec(), {}};
  for (int i = 0; i < 3000; ++i) {
    Rng rng = Rng::for_subject(11, static_cast<std::uint64_t>(i));
    Subject s = truth->sample_subject(Context{{0}}, rng);
    Trajectory traj{s.context, {}, true};
    for (int a = 0; a < 3; ++a) {
      traj.steps.push_back({a, s.potential_outcomes[static_cast<std::size_t>(a)]});
      if (rng.uniform01() < 0.4) break;
    }
    train.trajectories.push_back(traj);
  }
  auto subjects = toy_subjects(*truth, 500, 12);

  SweepConfig cfg;
  cfg.solver = SolverKind::Cdp;
  cfg.estimator = EstimatorKind::Tabular;
  cfg.param = SweepParam::Delta;
  std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  SweepResult result = sweep(train, subjects, grid, cfg);
  REQUIRE(result.rows.size() == grid.size());
  double prev = 1e18;
  for (const auto& [delta, metrics] : result.rows) {
    CHECK(metrics.mean_search_time <= prev + 1e-9);
    prev = metrics.mean_search_time;
  }
  // the trivial constraint stops immediately
  CHECK(result.rows.back().second.mean_search_time == 0.0);
}

TEST_CASE("sweep validates its inputs") {
  auto truth = build_toy_example1();
  Dataset train{truth->spec(), {}};
  train.trajectories.push_back({{{0}}, {{0, 1}}, true});
  auto subjects = toy_subjects(*truth, 5, 13);
  CHECK_THROWS_AS(sweep(train, subjects, {}, SweepConfig{}), SpecMismatch);
}
