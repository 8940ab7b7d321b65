#include <cmath>
#include <random>

#include "doctest.h"
#include "llrkit/errors.hpp"
#include "llrkit/trainlab.hpp"
#include "oracles.hpp"

using namespace llrkit;
using netzoo::Family;
using netzoo::NetworkSpec;
using netzoo::ParamPoint;
using trainlab::TrainConfig;

TEST_CASE("datasets") {
  const auto t = netzoo::make_phase_target();
  const auto one = trainlab::make_dataset(t, 1, 5);
  CHECK(one.size() == 1);
  const auto a = trainlab::make_dataset(t, 20, 5);
  const auto b = trainlab::make_dataset(t, 20, 5);
  CHECK(a.inputs == b.inputs);
  CHECK(a.labels == b.labels);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a.labels(static_cast<Eigen::Index>(i)) == netzoo::forward(t, a.input(i)));
  CHECK_THROWS_AS(trainlab::make_dataset(t, 0, 5), PreconditionError);
}

TEST_CASE("gradient descent basics") {
  TrainConfig cfg;
  cfg.max_steps = 5000;
  const auto spec = netzoo::phase_student_spec(Family::FC, 1);

  ParamPoint zero_teacher(NetworkSpec::fc(5, {3}));
  const auto flat = trainlab::make_dataset(zero_teacher, 10, 1);
  const auto fit = trainlab::gd_train(spec, cfg, flat, 0.1, 2);
  CHECK(fit.initial_train_mse < 1e-10);
  CHECK(fit.steps == 0);
  CHECK_FALSE(fit.diverged);

  const auto data = trainlab::make_dataset(netzoo::make_phase_target(), 10, 3);
  const auto blow = trainlab::gd_train(spec, cfg, data, 1e3, 4);
  CHECK(blow.diverged);

  const auto ok = trainlab::gd_train(spec, cfg, data, 0.1, 4);
  CHECK_FALSE(ok.diverged);
  CHECK(ok.final_train_mse <= ok.initial_train_mse);
  CHECK(ok.trace.front().step == 0);
  CHECK(ok.trace.back().step == ok.steps);

  const auto again = trainlab::gd_train(spec, cfg, data, 0.1, 4);
  CHECK(std::equal(again.params.values().begin(), again.params.values().end(), ok.params.values().begin()));

  TrainConfig bad;
  bad.learning_rates.clear();
  CHECK_THROWS_AS(bad.validate(), PreconditionError);
}

TEST_CASE("test error") {
  const auto t = netzoo::make_phase_target();
  CHECK(trainlab::test_error(t, t, 500, 1) == 0.0);

  // E[f*(x)^2] by direct sampling of the reference forward pass.
  std::mt19937_64 rng(77);
  double sum = 0.0;
  const int N = 1000000;
  for (int i = 0; i < N; ++i) {
    const double y = oracle::forward(t, oracle::random_input(rng, t.spec()));
    sum += y * y;
  }
  const double expected = sum / N;
  const ParamPoint zero(t.spec());
  const double est = trainlab::test_error(zero, t, 100000, 3);
  CHECK(est == doctest::Approx(expected).epsilon(0.03));
  const double est2 = trainlab::test_error(zero, t, 200000, 4);
  CHECK(est2 == doctest::Approx(est).epsilon(0.03));
}

TEST_CASE("biased width-3 student recovers the target from 63 samples") {
  const auto t = netzoo::make_phase_target();
  const auto data = trainlab::make_dataset(t, 63, 11);
  const auto spec = netzoo::phase_student_spec(Family::FC, 1);
  TrainConfig cfg;
  double best = INFINITY;
  for (double lr : cfg.learning_rates) {
    const auto r = trainlab::gd_train(spec, cfg, data, lr, 12);
    if (!r.diverged) best = std::min(best, trainlab::test_error(r.params, t, 1000, 13));
  }
  CHECK(best < 1e-3);
}

TEST_CASE("critical point search") {
  std::mt19937_64 rng(5);
  auto data = trainlab::make_dataset(netzoo::make_phase_target(), 12, 6);
  std::normal_distribution<double> n;
  for (Eigen::Index i = 0; i < data.labels.size(); ++i) data.labels(i) = n(rng);
  const auto start = oracle::random_point(rng, NetworkSpec::fc(5, {2}), 0.5);
  const auto c = trainlab::refine_to_critical(start, data, 1e-9);
  CHECK(c.converged);
  CHECK(c.grad_norm < 1e-9);
}

TEST_CASE("sweeps are deterministic and thread-independent") {
  trainlab::SweepConfig sweep;
  sweep.architectures = {{Family::CNN_WS, 1}, {Family::FC, 2}};
  sweep.n_min = 3;
  sweep.n_max = 5;
  sweep.seeds_per_cell = 2;
  sweep.test_size = 200;
  sweep.seed = 9;
  TrainConfig train;
  train.learning_rates = {0.1, 0.5};
  train.max_steps = 3000;
  const auto t = netzoo::make_phase_target();

  const auto a = trainlab::run_sweep(sweep, train, t);
  sweep.threads = 3;
  const auto b = trainlab::run_sweep(sweep, train, t);
  CHECK(trainlab::sweep_csv(a.runs) == trainlab::sweep_csv(b.runs));
  CHECK(trainlab::grid_csv(a) == trainlab::grid_csv(b));
  CHECK(a.cells.size() == 2 * 3 * 2);
  CHECK(a.runs.size() == 2 * a.cells.size());
  CHECK(a.info({Family::CNN_WS, 1}).model_rank == 7);
  CHECK(a.info({Family::FC, 2}).model_rank == 21);
  CHECK(a.info({Family::FC, 2}).parameter_count == 42);

  for (const auto& cell : a.cells) {
    double best = INFINITY;
    for (const auto& r : a.runs)
      if (r.arch == cell.arch && r.n == cell.n && r.seed_index == cell.seed_index && !r.diverged)
        best = std::min(best, r.test_mse);
    CHECK(cell.test_mse == best);
  }

  const auto csv = trainlab::sweep_csv(a.cells);
  CHECK(csv.rfind("architecture,N,n,seed,lr,steps,train_mse,test_mse,diverged\n", 0) == 0);
  const auto grid = trainlab::grid_csv(a);
  CHECK(grid.rfind("architecture,N,parameters,model_rank,n=3,n=4,n=5\ncnn-ws,1,7,7,", 0) == 0);

  sweep.n_min = 0;
  CHECK_THROWS_AS(trainlab::run_sweep(sweep, train, t), PreconditionError);
}
