#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "treatsearch/core.hpp"
#include "treatsearch/dgp.hpp"
#include "treatsearch/solvers.hpp"

using namespace treatsearch;

namespace {

std::vector<Context> one_context() { return {Context{{0}}}; }

}  // namespace

TEST_CASE("dp on the four-class toy: start with the second action, 1.4 trials") {
  auto model = build_toy_example1();
  StoppingConfig cfg;  // delta 0, epsilon 0, exact
  auto policy = solve_cdp(*model, cfg, one_context());

  History empty{{{0}}, {}};
  CHECK(policy->decide(empty) == 1);
  CHECK(policy->expected_length(Context{{0}}) == Catch::Approx(1.4).epsilon(1e-12));
  CHECK(policy->expected_length() == Catch::Approx(1.4).epsilon(1e-12));
  CHECK(policy_expected_length(*policy, *model, empty) == Catch::Approx(1.4).epsilon(1e-12));
  CHECK(policy_worst_case_length(*policy, *model, empty) == 2);

  // a success from action 1 ends the search
  History succeeded{{{0}}, {{1, 1}}};
  CHECK(policy->decide(succeeded) == kStop);
  // a failure reveals the class pair where action 0 always works
  History failed{{{0}}, {{1, 0}}};
  CHECK(policy->decide(failed) == 0);
}

TEST_CASE("greedy on the four-class toy: myopic start costs 0.1 trials") {
  auto model = build_toy_example1();
  StoppingConfig cfg;
  GreedyPolicy policy(model, cfg);

  History empty{{{0}}, {}};
  CHECK(greedy_score(*model, empty, 0) == Catch::Approx(0.4).epsilon(1e-12));
  CHECK(greedy_score(*model, empty, 1) == Catch::Approx(0.6).epsilon(1e-12));
  CHECK(greedy_score(*model, empty, 2) == Catch::Approx(0.65).epsilon(1e-12));
  CHECK(policy.decide(empty) == 2);

  History failed{{{0}}, {{2, 0}}};
  CHECK(greedy_score(*model, failed, 0) == Catch::Approx(4.0 / 7.0).epsilon(1e-12));
  CHECK(greedy_score(*model, failed, 1) == Catch::Approx(3.0 / 7.0).epsilon(1e-12));
  CHECK(policy.decide(failed) == 0);

  CHECK(policy_expected_length(policy, *model, empty) == Catch::Approx(1.5).epsilon(1e-12));
  CHECK(policy_worst_case_length(policy, *model, empty) == 3);
}

TEST_CASE("greedy stops exactly when gamma holds") {
  auto model = build_toy_a6(0.1);
  StoppingConfig cfg;
  cfg.delta = 0.5;
  GreedyPolicy policy(model, cfg);
  History middle{{{0}}, {{1, 1}}};  // rho = 0.5 = threshold
  CHECK(policy.decide(middle) == kStop);
  cfg.delta = 0.4;
  GreedyPolicy strict(model, cfg);
  CHECK(strict.decide(middle) == 0);
}

TEST_CASE("dp on the coin toy starts with the certain middle action") {
  auto model = build_toy_a6(0.1);
  StoppingConfig cfg;
  cfg.delta = 0.5;
  auto policy = solve_cdp(*model, cfg, one_context());
  History empty{{{0}}, {}};
  CHECK(policy->decide(empty) == 1);
  CHECK(policy->expected_length(Context{{0}}) == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("penalty baseline prefers the risky action on the coin toy") {
  auto model = build_toy_a6(0.1);
  History empty{{{0}}, {}};
  for (double lambda = 0.1; lambda <= 2.0 + 1e-9; lambda += 0.1) {
    auto policy = solve_ndp(*model, lambda, one_context());
    CHECK(policy->decide(empty) == 0);
  }
}

TEST_CASE("penalty baseline stops after one trial when the penalty is high") {
  auto model = build_toy_a6(0.1);
  auto policy = solve_ndp(*model, 1.5, one_context());
  History after{{{0}}, {{0, 0}}};
  CHECK(policy->decide(after) == kStop);
  CHECK_THROWS_AS(solve_ndp(*model, 0.0, one_context()), SpecMismatch);
}

TEST_CASE("penalty baseline never stops before the first trial") {
  auto model = build_toy_example1();
  for (double lambda : {0.1, 1.0, 5.0}) {
    auto policy = solve_ndp(*model, lambda, one_context());
    CHECK(policy->decide(History{{{0}}, {}}) != kStop);
  }
}

TEST_CASE("brute force agrees with the dp on the four-class toy") {
  auto model = build_toy_example1();
  StoppingConfig cfg;
  BruteForceResult res = brute_force_optimal(*model, cfg, Context{{0}});
  CHECK(res.expected_trials == Catch::Approx(1.4).epsilon(1e-12));
  REQUIRE(res.best_first_actions.size() == 1);
  CHECK(res.best_first_actions[0] == 1);
}

TEST_CASE("brute force agrees with the dp on random coherent instances") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed + 1000);
    ProblemSpec spec{3, {0.0, 1.0}, {2}};
    auto model = random_joint_instance(spec, rng);
    for (double delta : {0.0, 0.2, 0.5}) {
      StoppingConfig cfg;
      cfg.delta = delta;
      for (int c = 0; c < 2; ++c) {
        Context ctx{{c}};
        auto policy = solve_cdp(*model, cfg, {ctx});
        BruteForceResult res = brute_force_optimal(*model, cfg, ctx);
        CHECK(policy->expected_length(ctx) == Catch::Approx(res.expected_trials).margin(1e-9));
        int first = policy->decide(History{ctx, {}});
        if (first == kStop) {
          CHECK(res.expected_trials == 0.0);
        } else {
          CHECK(std::find(res.best_first_actions.begin(), res.best_first_actions.end(),
                          first) != res.best_first_actions.end());
        }
      }
    }
  }
}

TEST_CASE("brute force rejects large instances") {
  ProblemSpec spec{5, {0.0, 1.0}, {1}};
  Rng rng(2);
  auto model = random_joint_instance(spec, rng);
  CHECK_THROWS_AS(brute_force_optimal(*model, StoppingConfig{}, Context{{0}}),
                  InstanceTooLarge);
}

TEST_CASE("dp expected length is non-increasing in delta") {
  Rng rng(5);
  ProblemSpec spec{4, {0.0, 1.0, 2.0}, {1}};
  auto model = random_joint_instance(spec, rng);
  double prev = 1e18;
  for (double delta : {0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0}) {
    StoppingConfig cfg;
    cfg.delta = delta;
    auto policy = solve_cdp(*model, cfg, one_context());
    double len = policy->expected_length(Context{{0}});
    CHECK(len <= prev + 1e-12);
    prev = len;
  }
}

TEST_CASE("dp with the trivial constraint stops immediately") {
  auto model = build_toy_example1();
  StoppingConfig cfg;
  cfg.delta = 1.0;
  auto policy = solve_cdp(*model, cfg, one_context());
  CHECK(policy->decide(History{{{0}}, {}}) == kStop);
  CHECK(policy->expected_length(Context{{0}}) == 0.0);
}

TEST_CASE("dp values stay within feasibility limits") {
  Rng rng(12);
  ProblemSpec spec{3, {0.0, 1.0}, {1}};
  auto model = random_joint_instance(spec, rng);
  StoppingConfig cfg;
  cfg.delta = 0.3;
  auto policy = solve_cdp(*model, cfg, one_context());
  for (const auto& [key, e] : policy->table()) {
    CHECK(e.value <= 0.0);
    CHECK(e.value >= -3.0);
    if (e.choice == kStop) CHECK(e.stop_allowed);
  }
}

TEST_CASE("solved policies reject histories from unknown contexts") {
  auto model = build_toy_example1();
  auto policy = solve_cdp(*model, StoppingConfig{}, one_context());
  CHECK_THROWS_AS(policy->decide(History{{{5}}, {}}), SpecMismatch);
}
