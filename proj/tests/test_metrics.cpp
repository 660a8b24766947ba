#include <doctest.h>

#include "recl/error.hpp"
#include "recl/metrics.hpp"

using namespace recl;

TEST_CASE("ACC and BWT on the two-task example") {
  AccuracyMatrix m(2);
  m.record(1, 1, 0.99);
  m.record(2, 1, 0.80);
  m.record(2, 2, 0.95);
  CHECK(compute_acc(m, 2) == doctest::Approx(0.875).epsilon(1e-12));
  CHECK(compute_bwt(m, 2) == doctest::Approx(-0.19).epsilon(1e-12));
  CHECK(compute_acc(m, 1) == doctest::Approx(0.99));
  CHECK_THROWS_AS(compute_bwt(m, 1), ContractError);
}

TEST_CASE("ACC and BWT over three tasks against hand sums") {
  AccuracyMatrix m(3);
  const double a[4][4] = {{}, {0, 0.9}, {0, 0.6, 0.8}, {0, 0.3, 0.5, 0.7}};
  for (std::size_t T = 1; T <= 3; ++T)
    for (std::size_t tau = 1; tau <= T; ++tau) m.record(T, tau, a[T][tau]);
  CHECK(m.entry_count() == 6);
  CHECK(compute_acc(m, 3) == doctest::Approx((0.3 + 0.5 + 0.7) / 3.0));
  CHECK(compute_bwt(m, 3) == doctest::Approx(((0.3 - 0.9) + (0.5 - 0.8)) / 2.0));
  CHECK(m.at(3, 2) == 0.5);
  CHECK_FALSE(m.get(2, 3).has_value());
}

TEST_CASE("accuracy matrix rejects bad entries and reports missing ones") {
  AccuracyMatrix m(2);
  CHECK_THROWS_AS(m.record(1, 2, 0.5), ContractError);
  CHECK_THROWS_AS(m.record(0, 0, 0.5), ContractError);
  CHECK_THROWS_AS(m.record(3, 1, 0.5), ContractError);
  CHECK_THROWS_AS(m.record(1, 1, 1.5), ContractError);
  try {
    m.at(2, 1);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("T=2") != std::string::npos);
  }
  CHECK_THROWS_AS(compute_acc(m, 1), ContractError);
}

TEST_CASE("evaluate uses argmax with ties to the lowest index") {
  // Identity network on 2-d inputs: the logits are the inputs themselves.
  ParamVector net({Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}), Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}})});
  auto data = LabeledDataset::make(Tensor::matrix({{2.0, 1.0}, {0.5, 3.0}, {1.0, 1.0}, {1.0, 1.0}}), {0, 1, 0, 1});
  CHECK(evaluate(net, data, Scenario::kClassIncremental) == doctest::Approx(0.75));
  auto bad = LabeledDataset::make(Tensor::matrix({{1.0, 0.0}}), {2});
  CHECK_THROWS_AS(evaluate(net, bad, Scenario::kClassIncremental), ContractError);
  CHECK_THROWS_AS(evaluate(net, LabeledDataset{}, Scenario::kClassIncremental), ContractError);
}
