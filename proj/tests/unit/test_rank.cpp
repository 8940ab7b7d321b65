#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "doctest.h"
#include "llrkit/errors.hpp"
#include "llrkit/rank.hpp"
#include "oracles.hpp"

using namespace llrkit;
using netzoo::Family;
using netzoo::NetworkSpec;
using netzoo::ParamPoint;
using netzoo::Role;

namespace {

int oracle_rank(const ParamPoint& p, std::uint64_t seed = 1) {
  rank::MonteCarloOptions mc;
  mc.seed = seed;
  return rank::model_rank_mc(p, mc).rank;
}

ParamPoint generic_fc(std::mt19937_64& rng, int d, int m) {
  return oracle::random_point(rng, NetworkSpec::fc(d, {m}));
}

}  // namespace

TEST_CASE("numerical rank of diagonal matrices") {
  CHECK(rank::numerical_rank(Eigen::MatrixXd::Zero(3, 4)).rank == 0);

  const auto id = rank::numerical_rank(Eigen::MatrixXd::Identity(3, 3));
  CHECK(id.rank == 3);
  CHECK(std::isinf(id.gap_ratio));
  CHECK_FALSE(id.ill_determined());

  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 3);
  d.diagonal() << 1.0, 1e-3, 1e-18;
  const auto r = rank::numerical_rank(d);
  CHECK(r.rank == 2);
  CHECK(r.tolerance == doctest::Approx(100.0 * 3 * std::numeric_limits<double>::epsilon()));
  CHECK(r.gap_ratio == doctest::Approx(1e15));

  rank::TolerancePolicy loose;
  loose.absolute = 1e-2;
  CHECK(rank::numerical_rank(d, loose).rank == 1);
}

TEST_CASE("numerical rank rejects non-finite matrices") {
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(2, 2);
  m(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(rank::numerical_rank(m), NumericalError);
}

TEST_CASE("empirical tangent matrix") {
  std::mt19937_64 rng(1);
  const auto t = netzoo::make_phase_target();
  const auto x = rank::gaussian_inputs(t.spec(), 1, 9);
  const auto T = rank::empirical_tangent_matrix(t, x);
  const auto col = netzoo::tangent_features(t, std::vector<double>(x.data(), x.data() + 5));
  REQUIRE(T.entries.cols() == 1);
  for (Eigen::Index k = 0; k < T.entries.rows(); ++k) CHECK(T.entries(k, 0) == col[static_cast<std::size_t>(k)]);

  const ParamPoint zero(NetworkSpec::fc(4, {3}));
  CHECK(rank::empirical_tangent_matrix(zero, rank::gaussian_inputs(zero.spec(), 10, 2)).entries.isZero(0.0));

  const auto T40 = rank::empirical_tangent_matrix(t, rank::gaussian_inputs(t.spec(), 40, 3));
  CHECK(rank::numerical_rank(T40).rank == 18);
  CHECK(oracle::jacobi_rank(T40.entries) == 18);

  CHECK_THROWS_AS(rank::empirical_tangent_matrix(t, Eigen::MatrixXd::Zero(4, 3)), ShapeError);
  ParamPoint bad = t;
  bad.values()[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(rank::empirical_tangent_matrix(bad, rank::gaussian_inputs(t.spec(), 3, 1)), PreconditionError);
}

TEST_CASE("Monte-Carlo model rank") {
  std::mt19937_64 rng(2);
  CHECK(oracle_rank(generic_fc(rng, 3, 4)) == 16);
  CHECK(oracle_rank(ParamPoint(NetworkSpec::fc(3, {4}))) == 0);

  auto p = generic_fc(rng, 4, 3);
  for (int t = 0; t < 4; ++t) p.at(1, Role::Weight, {1, t}) = -p.at(1, Role::Weight, {0, t});
  CHECK(oracle_rank(p) == 10);
  const auto prof = rank::effective_profile_fc2(p);
  CHECK(prof.m_w == 2);
  CHECK(prof.m_a == 2);

  rank::MonteCarloOptions bad;
  bad.oversample = 0;
  CHECK_THROWS_AS(rank::model_rank_mc(p, bad), PreconditionError);
}

TEST_CASE("two-layer FC profiles and formula") {
  std::mt19937_64 rng(3);
  const auto g = generic_fc(rng, 5, 3);
  auto prof = rank::effective_profile_fc2(g);
  CHECK(prof.m_w == 3);
  CHECK(prof.m_a == 3);

  ParamPoint dead(NetworkSpec::fc(5, {1}));
  for (int t = 0; t < 5; ++t) dead.at(1, Role::Weight, {0, t}) = 0.3 + t;
  prof = rank::effective_profile_fc2(dead);
  CHECK(prof.m_w == 1);
  CHECK(prof.m_a == 0);
  CHECK(rank::rank_formula_fc2(prof, 5) == 1);
  CHECK(oracle_rank(dead) == 1);

  ParamPoint flat(NetworkSpec::fc(5, {1}));
  flat.at(2, Role::OutputWeight, {0}) = 1.5;
  prof = rank::effective_profile_fc2(flat);
  CHECK(prof.m_w == 0);
  CHECK(prof.m_a == 1);
  CHECK(rank::rank_formula_fc2(prof, 5) == 5);
  CHECK(oracle_rank(flat) == 5);

  CHECK(rank::rank_formula(netzoo::make_phase_target()) == 18);
  CHECK(rank::rank_formula_fc2({}, 7) == 0);

  auto two = generic_fc(rng, 4, 2);
  two.at(2, Role::OutputWeight, {1}) = 0.0;
  CHECK(rank::rank_formula(two) == 6);
  CHECK(oracle_rank(two) == 6);

  // Several zero-weight neurons share one span{x_1..x_d}.
  ParamPoint zeros(NetworkSpec::fc(3, {3}));
  for (int i = 0; i < 3; ++i) zeros.at(2, Role::OutputWeight, {i}) = 1.0 + i;
  CHECK(rank::rank_formula(zeros) == 3);
  CHECK(oracle_rank(zeros) == 3);

  CHECK_THROWS_AS(rank::effective_profile_fc2(ParamPoint(NetworkSpec::fc(3, {2}, true))), UnsupportedSpec);
  CHECK_THROWS_AS(rank::effective_profile_fc2(ParamPoint(NetworkSpec::fc(3, {2, 2}))), UnsupportedSpec);
}

TEST_CASE("CNN with weight sharing formula") {
  std::mt19937_64 rng(4);
  const auto spec = NetworkSpec::cnn(Family::CNN_WS, 4, 2, 1);
  const auto g = oracle::random_point(rng, spec);
  CHECK(rank::rank_formula_cnn_ws(g) == 13);
  CHECK(oracle_rank(g) == 13);

  auto pair = oracle::random_point(rng, NetworkSpec::cnn(Family::CNN_WS, 4, 2, 2));
  for (int u = 0; u < 2; ++u)
    for (int v = 0; v < 2; ++v) pair.at(1, Role::Kernel, {1, u, v}) = -pair.at(1, Role::Kernel, {0, u, v});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) pair.at(2, Role::OutputWeight, {1, i, j}) = pair.at(2, Role::OutputWeight, {0, i, j});
  CHECK(rank::rank_formula_cnn_ws(pair) == 13);
  CHECK(oracle_rank(pair) == 13);

  auto dead = g;
  for (double& v : dead.block(2, Role::OutputWeight)) v = 0.0;
  CHECK(rank::rank_formula_cnn_ws(dead) == 9);
  CHECK(oracle_rank(dead) == 9);

  auto ineffective = g;
  for (double& v : ineffective.block(1, Role::Kernel)) v = 0.0;
  CHECK_THROWS_AS(rank::rank_formula_cnn_ws(ineffective), PreconditionError);

  // A generic two-kernel point realizes the k = 2 optimistic sample size.
  const auto two = oracle::random_point(rng, NetworkSpec::cnn(Family::CNN_WS, 4, 2, 2));
  CHECK(oracle_rank(two) == rank::opt_sample_size_cnn_ws(2, 4, 2));
}

TEST_CASE("CNN without weight sharing formula") {
  std::mt19937_64 rng(5);
  const auto g = oracle::random_point(rng, NetworkSpec::cnn(Family::CNN_NS, 3, 2, 1));
  CHECK(rank::rank_formula_cnn_ns(g) == 20);
  CHECK(oracle_rank(g) == 20);

  auto with_null = g;
  for (int u = 0; u < 2; ++u)
    for (int v = 0; v < 2; ++v) with_null.at(1, Role::Kernel, {0, 1, 1, u, v}) = 0.0;
  with_null.at(2, Role::OutputWeight, {0, 1, 1}) = 0.0;
  CHECK(rank::rank_formula_cnn_ns(with_null) == 15);
  CHECK(oracle_rank(with_null) == 15);

  // Same kernel at two positions: the padded kernels have different supports.
  auto shared = g;
  for (int u = 0; u < 2; ++u)
    for (int v = 0; v < 2; ++v) shared.at(1, Role::Kernel, {0, 1, 1, u, v}) = shared.at(1, Role::Kernel, {0, 0, 0, u, v});
  CHECK(rank::rank_formula_cnn_ns(shared) == 20);
  CHECK(oracle_rank(shared) == 20);

  // Two null neurons among k (d+1-s)^2 = 9.
  auto nulls = oracle::random_point(rng, NetworkSpec::cnn(Family::CNN_NS, 4, 2, 1));
  for (int pos : {0, 4}) {
    const int i = pos / 3, j = pos % 3;
    for (int u = 0; u < 2; ++u)
      for (int v = 0; v < 2; ++v) nulls.at(1, Role::Kernel, {0, i, j, u, v}) = 0.0;
    nulls.at(2, Role::OutputWeight, {0, i, j}) = 0.0;
  }
  CHECK(rank::opt_sample_size_cnn_ns(1, 4, 2, 2) == 35);
  CHECK(rank::rank_formula_cnn_ns(nulls) == 35);
  CHECK(oracle_rank(nulls) == 35);
}

TEST_CASE("formula agrees with the oracle on structured points") {
  std::mt19937_64 rng(6);
  for (auto f : {Family::FC, Family::CNN_WS, Family::CNN_NS})
    for (int t = 0; t < 15; ++t) {
      const auto p = oracle::structured_point(rng, f, 4, 5);
      CHECK(rank::rank_formula(p) == oracle_rank(p, static_cast<std::uint64_t>(t)));
    }
}

TEST_CASE("rank is invariant under hidden-unit permutation") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t) {
    const auto p = oracle::structured_point(rng, Family::FC, 5, 4);
    const int m = p.spec().hidden_widths[0], d = p.spec().input_dim;
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ParamPoint q(p.spec());
    for (int i = 0; i < m; ++i) {
      const int src = perm[static_cast<std::size_t>(i)];
      for (int j = 0; j < d; ++j) q.at(1, Role::Weight, {i, j}) = p.at(1, Role::Weight, {src, j});
      q.at(2, Role::OutputWeight, {i}) = p.at(2, Role::OutputWeight, {src});
    }
    CHECK(oracle_rank(q) == oracle_rank(p));
    CHECK(rank::rank_formula(q) == rank::rank_formula(p));
  }
}

TEST_CASE("rank does not depend on the scale of the output weights") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t) {
    auto p = oracle::structured_point(rng, Family::FC, 4, 4);
    const int before = oracle_rank(p);
    for (double& v : p.block(2, Role::OutputWeight)) v *= -7.5;
    CHECK(oracle_rank(p) == before);
  }
}

TEST_CASE("empirical rank saturates as min(n, rank)") {
  std::mt19937_64 rng(9);
  const auto p = generic_fc(rng, 3, 2);  // rank 8
  const auto X = rank::gaussian_inputs(p.spec(), 12, 4);
  const auto T = rank::empirical_tangent_matrix(p, X);
  for (int n = 1; n <= 12; ++n)
    CHECK(rank::numerical_rank(Eigen::MatrixXd(T.entries.leftCols(n))).rank == std::min(n, 8));
}

TEST_CASE("optimistic sample sizes and bounds") {
  CHECK(rank::opt_sample_size_fc2(0, 5) == 0);
  CHECK(rank::opt_sample_size_fc2(1, 5) == 6);
  CHECK(rank::opt_sample_size_fc2(3, 5) == 18);
  CHECK(rank::opt_sample_size_cnn_ws(1, 28, 3) == 685);
  CHECK(rank::opt_sample_size_cnn_ws(0, 28, 3) == 0);
  CHECK(rank::opt_sample_size_cnn_ws(2, 4, 2) == 26);
  CHECK(rank::opt_sample_size_cnn_ns(1, 28, 3, 0) == 6760);
  CHECK(rank::opt_sample_size_cnn_ns(2, 5, 3, 2 * 9) == 0);
  CHECK_THROWS_AS(rank::opt_sample_size_cnn_ns(1, 4, 2, 10), PreconditionError);
  CHECK_THROWS_AS(rank::opt_sample_size_cnn_ws(1, 2, 3), PreconditionError);

  for (int L = 2; L <= 6; ++L) CHECK(rank::upper_bound_dnn(std::vector<int>(static_cast<std::size_t>(L - 1), 1), 7) == 7 + L - 1);
  CHECK(rank::upper_bound_dnn({4}, 5) == 4 * 5 + 4);
  CHECK(rank::upper_bound_dnn({2, 3}, 2) == 13);

  const auto rows = rank::comparison_table(28, 3, 2);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].cnn_ws == 0);
  CHECK(rows[0].cnn_ns == 0);
  CHECK(rows[0].fc == 0);
  CHECK(rows[1].cnn_ws == 685);
  CHECK(rows[1].cnn_ns == 6760);
  CHECK(rows[1].fc == 530660);
  CHECK(rows[2].fc == 2 * 530660);
  const auto small = rank::comparison_table(4, 2, 1);
  CHECK(small[1].cnn_ws == 13);
  CHECK(small[1].cnn_ns == 45);
  CHECK(small[1].fc == 153);
}

TEST_CASE("closed forms cover only two-layer tanh nets without bias") {
  CHECK(rank::closed_form_applies(NetworkSpec::fc(3, {2})));
  CHECK_FALSE(rank::closed_form_applies(NetworkSpec::fc(3, {2}, true)));
  CHECK_FALSE(rank::closed_form_applies(NetworkSpec::fc(3, {2}, false, false, netzoo::Activation::Sigmoid)));
  CHECK_THROWS_AS(rank::rank_formula(ParamPoint(NetworkSpec::fc(3, {2, 2}))), UnsupportedSpec);
}
