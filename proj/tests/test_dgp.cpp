#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "treatsearch/core.hpp"
#include "treatsearch/dgp.hpp"

using namespace treatsearch;

TEST_CASE("rng streams are reproducible and subject-splittable") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(43).next_u64() == c.next_u64());

  // subject streams do not depend on the order they are created in
  Rng s3 = Rng::for_subject(7, 3);
  Rng s0 = Rng::for_subject(7, 0);
  Rng s3_again = Rng::for_subject(7, 3);
  (void)s0;
  CHECK(s3.next_u64() == s3_again.next_u64());
}

TEST_CASE("uniform01 stays inside the open unit interval") {
  Rng rng(1);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double u = rng.uniform01();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  // mean 0.5, sd of the mean = 1/sqrt(12 n) ~ 0.002
  CHECK(std::fabs(sum / 20000 - 0.5) < 0.007);
}

TEST_CASE("normal draws have the right first two moments") {
  Rng rng(2);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::fabs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("categorical draws follow the weights") {
  Rng rng(3);
  std::vector<double> w = {2.0, 1.0, 1.0};
  std::vector<int> counts(3, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(rng.categorical(w))] += 1;
  CHECK(std::fabs(counts[0] / static_cast<double>(n) - 0.5) < 0.015);
  CHECK(std::fabs(counts[1] / static_cast<double>(n) - 0.25) < 0.015);
}

TEST_CASE("four-class toy marginals match the construction") {
  auto model = build_toy_example1();
  History empty{{{0}}, {}};
  CHECK(model->predict(empty, 0)[1] == Catch::Approx(0.4).epsilon(1e-12));
  CHECK(model->predict(empty, 1)[1] == Catch::Approx(0.6).epsilon(1e-12));
  CHECK(model->predict(empty, 2)[1] == Catch::Approx(0.65).epsilon(1e-12));
}

TEST_CASE("four-class toy conditionals follow the class posterior") {
  // After action 2 fails, only classes (0,1,0) w.p. 3/7 and (1,0,0) w.p. 4/7
  // remain.
  auto model = build_toy_example1();
  History h{{{0}}, {{2, 0}}};
  auto p0 = model->predict(h, 0);
  auto p1 = model->predict(h, 1);
  CHECK(p0[1] == Catch::Approx(4.0 / 7.0).epsilon(1e-12));
  CHECK(p1[1] == Catch::Approx(3.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("joint model falls back to a flat conditional off support") {
  auto model = build_toy_a6(0.1);
  // action 0 never lands in the middle of the grid
  History impossible{{{0}}, {{0, 1}}};
  auto p = model->predict(impossible, 1);
  for (double v : p) CHECK(v == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("coin toy construction guards its spread parameter") {
  CHECK_THROWS_AS(build_toy_a6(0.0), SpecMismatch);
  CHECK_THROWS_AS(build_toy_a6(0.25), SpecMismatch);
  CHECK_NOTHROW(build_toy_a6(0.2));
}

TEST_CASE("random coherent instances are proper distributions") {
  ProblemSpec spec{3, {0.0, 1.0}, {2}};
  Rng rng(9);
  auto model = random_joint_instance(spec, rng);
  REQUIRE(model->atoms().size() == 2);
  for (const auto& [coords, atoms] : model->atoms()) {
    REQUIRE(atoms.size() == 8);
    double total = 0.0;
    for (const auto& atom : atoms) {
      CHECK(atom.prob > 0.0);
      total += atom.prob;
    }
    CHECK(total == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("generator instances are deterministic in the seed") {
  DgpParams params;
  params.seed = 11;
  DgpInstance a = build_instance(params);
  DgpInstance b = build_instance(params);
  CHECK(a.alpha == b.alpha);
  CHECK(a.u1 == b.u1);
  CHECK(a.eta == b.eta);
  CHECK(a.outcome_tables == b.outcome_tables);

  params.seed = 12;
  DgpInstance c = build_instance(params);
  CHECK(a.alpha != c.alpha);
}

TEST_CASE("generator outcome tables are proper and scales are floored") {
  DgpParams params;
  params.seed = 4;
  DgpInstance inst = build_instance(params);
  CHECK(inst.outcome_tables.size() == (1u << params.context_dims) * (1u << params.moderator_dims));
  for (const auto& [key, table] : inst.outcome_tables) {
    REQUIRE(static_cast<int>(table.size()) == params.num_actions);
    for (const auto& row : table) {
      double total = 0.0;
      for (double p : row) {
        CHECK(p > 0.0);  // Cauchy with floored scale has full support
        total += p;
      }
      CHECK(total == Catch::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("generator dissimilarities are symmetric with zero diagonal") {
  DgpParams params;
  params.seed = 8;
  DgpInstance inst = build_instance(params);
  for (int a = 0; a < params.num_actions; ++a) {
    CHECK(inst.delta_sim[static_cast<std::size_t>(a)][static_cast<std::size_t>(a)] == 0.0);
    for (int b = 0; b < params.num_actions; ++b) {
      CHECK(inst.delta_sim[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] ==
            inst.delta_sim[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)]);
      if (a != b)
        CHECK(inst.delta_sim[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] > 0.0);
    }
  }
}

TEST_CASE("context probabilities stay clamped") {
  DgpParams params;
  params.seed = 21;
  params.context_dims = 2;
  DgpInstance inst = build_instance(params);
  for (const auto& z : std::vector<std::vector<int>>{{0, 0, 0}, {1, 1, 1}, {1, 0, 1}}) {
    for (double p : inst.x_probs(z)) {
      CHECK(p >= 0.02);
      CHECK(p <= 0.98);
    }
  }
}

TEST_CASE("behavior trajectories are valid searches") {
  DgpParams params;
  params.seed = 33;
  DgpInstance inst = build_instance(params);
  int with_multiple = 0;
  for (int i = 0; i < 200; ++i) {
    Rng rng = Rng::for_subject(100, static_cast<std::uint64_t>(i));
    Subject s = sample_subject(inst, rng);
    Trajectory traj = sample_trajectory(inst, s, rng);
    CHECK(traj.terminal);
    REQUIRE(!traj.steps.empty());  // stopping only offered after the first trial
    CHECK_NOTHROW(validate_trajectory(inst.spec, traj));
    for (const TrialRecord& r : traj.steps)
      CHECK(r.outcome_index == s.potential_outcomes[static_cast<std::size_t>(r.action)]);
    if (traj.steps.size() > 1) ++with_multiple;
  }
  CHECK(with_multiple > 0);
}

TEST_CASE("behavior policy only proposes untried actions") {
  DgpParams params;
  params.seed = 5;
  DgpInstance inst = build_instance(params);
  Rng rng(77);
  History h{{{0}}, {{0, 1}, {3, 2}}};
  for (int i = 0; i < 200; ++i) {
    int a = behavior_next_action(inst, h, rng);
    if (a == kStop) continue;
    CHECK_FALSE(h.tried(a));
  }
  History full{{{0}}, {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}}};
  CHECK(behavior_next_action(inst, full, rng) == kStop);
}

TEST_CASE("sampled moderators match their mixing weights") {
  DgpParams params;
  params.seed = 14;
  params.moderator_dims = 2;
  DgpInstance inst = build_instance(params);
  const int n = 20000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::for_subject(500, static_cast<std::uint64_t>(i));
    Subject s = sample_subject(inst, rng);
    counts[static_cast<std::size_t>(*s.moderator)] += 1;
  }
  for (int m = 0; m < 4; ++m) {
    std::vector<int> z = {(m >> 1) & 1, m & 1};
    double expect = inst.z_prob(z);
    double got = counts[static_cast<std::size_t>(m)] / static_cast<double>(n);
    double se = std::sqrt(expect * (1 - expect) / n);
    CHECK(std::fabs(got - expect) < 3.5 * se + 1e-9);
  }
}

TEST_CASE("the exact mixture model matches sampled outcome frequencies") {
  DgpParams params;
  params.seed = 19;
  params.num_actions = 3;
  params.moderator_dims = 2;
  DgpInstance inst = build_instance(params);
  auto model = true_model(inst);

  const int n = 20000;
  std::vector<std::vector<int>> counts(
      2, std::vector<int>(static_cast<std::size_t>(params.num_outcomes), 0));
  std::vector<int> per_context(2, 0);
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::for_subject(900, static_cast<std::uint64_t>(i));
    Subject s = sample_subject(inst, rng);
    int x = s.context.coords[0];
    per_context[static_cast<std::size_t>(x)] += 1;
    counts[static_cast<std::size_t>(x)][static_cast<std::size_t>(s.potential_outcomes[0])] += 1;
  }
  for (int x = 0; x < 2; ++x) {
    auto p = model->predict(History{{{x}}, {}}, 0);
    int nx = per_context[static_cast<std::size_t>(x)];
    REQUIRE(nx > 1000);
    for (int y = 0; y < params.num_outcomes; ++y) {
      double expect = p[static_cast<std::size_t>(y)];
      double got = counts[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)] /
                   static_cast<double>(nx);
      double se = std::sqrt(std::max(expect * (1 - expect), 1e-12) / nx);
      CHECK(std::fabs(got - expect) < 4.0 * se + 1e-9);
    }
  }
}

TEST_CASE("the exact mixture model is a proper joint per context") {
  DgpParams params;
  params.seed = 2;
  params.num_actions = 3;
  DgpInstance inst = build_instance(params);
  auto model = true_model(inst);
  for (const auto& [coords, atoms] : model->atoms()) {
    double total = 0.0;
    std::set<std::vector<int>> seen;
    for (const auto& atom : atoms) {
      total += atom.prob;
      CHECK(seen.insert(atom.outcomes).second);
    }
    CHECK(total == Catch::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("parameter validation rejects bad dimensions") {
  DgpParams params;
  params.num_outcomes = 1;
  CHECK_THROWS_AS(build_instance(params), SpecMismatch);
  params = DgpParams{};
  params.p_stop = 1.5;
  CHECK_THROWS_AS(build_instance(params), SpecMismatch);
}
