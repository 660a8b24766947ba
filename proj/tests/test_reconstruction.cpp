#include <doctest.h>

#include <cmath>

#include "recl/error.hpp"
#include "recl/reconstruction.hpp"
#include "recl/rng.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace recl;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Closed-form L_rec for a two-layer net Phi = W2 relu(W1 x) with the smooth
// step sigma(alpha z) standing in for relu'.
double two_layer_rec(const ParamVector& th, const Tensor& xs, const Tensor& lam,
                     const std::vector<std::size_t>& labels, double alpha) {
  const Tensor& W1 = th.layer(0);
  const Tensor& W2 = th.layer(1);
  const std::size_t h = W1.rows(), d = W1.cols(), C = W2.rows();
  Tensor G1({h, d}, 0.0), G2({C, h}, 0.0);
  for (std::size_t i = 0; i < xs.rows(); ++i) {
    std::vector<double> z(h, 0.0);
    for (std::size_t a = 0; a < h; ++a)
      for (std::size_t b = 0; b < d; ++b) z[a] += W1.at(a, b) * xs.at(i, b);
    // Coefficient vector over classes: +sum lambda at y, -lambda_j elsewhere.
    std::vector<double> w(C, 0.0);
    std::size_t col = 0;
    for (std::size_t k = 0; k < C; ++k) {
      if (k == labels[i]) continue;
      w[labels[i]] += lam.at(i, col);
      w[k] -= lam.at(i, col);
      ++col;
    }
    for (std::size_t k = 0; k < C; ++k)
      for (std::size_t a = 0; a < h; ++a) G2.at(k, a) += w[k] * std::max(z[a], 0.0);
    for (std::size_t a = 0; a < h; ++a) {
      double back = 0.0;
      for (std::size_t k = 0; k < C; ++k) back += w[k] * W2.at(k, a);
      back *= sigmoid(alpha * z[a]);
      for (std::size_t b = 0; b < d; ++b) G1.at(a, b) += back * xs.at(i, b);
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < G1.size(); ++k) total += (W1[k] - G1[k]) * (W1[k] - G1[k]);
  for (std::size_t k = 0; k < G2.size(); ++k) total += (W2[k] - G2[k]) * (W2[k] - G2[k]);
  return total;
}

}  // namespace

TEST_CASE("prior loss on the reference points") {
  auto prior = [](std::initializer_list<double> v) {
    return loss_prior(ad::Var::constant(Tensor::vector(v))).value().item();
  };
  CHECK(prior({0.5, -0.5}) == 0.0);
  CHECK(prior({1.5}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(prior({-2.0, 0.3}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(prior({1.0, -1.0}) == 0.0);
}

TEST_CASE("lambda loss on the reference point") {
  const double v = loss_lambda(ad::Var::constant(Tensor::vector({0.5, 0.05})), 0.1).value().item();
  CHECK(v == doctest::Approx(-0.15).epsilon(1e-15));
}

TEST_CASE("rec loss with all lambdas zero equals the squared parameter norm") {
  ParamVector theta = init_mlp(MlpSpec{{4, 7, 3}, 1.0}, 1);
  CandidateSet c = init_candidates(5, 4, std::vector<std::size_t>{0, 1, 2}, ReconHyperparams{}, 2);
  c.lambdas = Tensor(c.lambdas.shape(), 0.0);
  CHECK(loss_rec(theta, c, 100.0) == doctest::Approx(theta.squared_norm()).epsilon(1e-14));
}

TEST_CASE("rec loss matches the two-layer closed form") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ParamVector theta = init_mlp(MlpSpec{{3, 6, 4}, 1.0}, seed);
    Rng rng(seed + 50);
    Tensor xs({5, 3}), lam({5, 3});
    for (auto& v : xs.values()) v = rng.normal();
    for (auto& v : lam.values()) v = rng.uniform(0.0, 1.0);
    std::vector<std::size_t> labels{0, 3, 1, 2, 3};
    for (double alpha : {1.0, 100.0}) {
      const double got = loss_rec(theta, ad::Var::constant(xs), ad::Var::constant(lam), labels, alpha).value().item();
      CHECK(got == doctest::Approx(two_layer_rec(theta, xs, lam, labels, alpha)).epsilon(1e-11));
    }
  }
}

TEST_CASE("full loss is the sum of its parts") {
  ParamVector theta = init_mlp(MlpSpec{{3, 5, 2}, 1.0}, 3);
  Tensor xs = Tensor::matrix({{1.5, 0.0, -0.2}, {0.1, -3.0, 0.4}});
  Tensor lam = Tensor::matrix({{0.05}, {0.7}});
  std::vector<std::size_t> labels{1, 0};
  FullLoss f = loss_full(theta, ad::Var::constant(xs), ad::Var::constant(lam), labels, ReconHyperparams{});
  auto v = f.values();
  CHECK(v.prior == doctest::Approx(0.5 + 2.0));
  CHECK(v.lambda == doctest::Approx(-0.05 - 0.1));
  CHECK(v.full == doctest::Approx(v.rec + v.lambda + v.prior).epsilon(1e-14));
}

TEST_CASE("gradients of the full loss match finite differences away from kinks") {
  // The smooth step only agrees with the exact ReLU forward when every
  // pre-activation sits well away from zero; draw cases until that holds.
  Rng rng(77);
  int tested = 0, failures = 0;
  while (tested < 20) {
    ParamVector theta = init_mlp(MlpSpec{{3, 6, 3}, 1.0}, rng.next_u64());
    Tensor xs({4, 3}), lam({4, 2});
    for (auto& v : xs.values()) {
      v = rng.uniform(-0.9, 0.9);
      if (std::abs(v) < 0.05) v = 0.3;
    }
    for (auto& v : lam.values()) v = rng.uniform(0.15, 1.0);
    Tensor z = forward(ParamVector({theta.layer(0)}), xs);
    bool clear = true;
    for (double v : z.values()) clear = clear && std::abs(v) >= 0.25;
    if (!clear) continue;
    ++tested;
    std::vector<std::size_t> labels{0, 1, 2, 1};
    auto rep = oracle::check_gradients(
        [&](const std::vector<ad::Var>& v) { return loss_full(theta, v[0], v[1], labels, ReconHyperparams{}).total; },
        {xs, lam}, 1e-3, 1e-6, 1e-6);
    if (!rep.ok) {
      ++failures;
      MESSAGE(rep.detail);
    }
  }
  CHECK(failures == 0);
}

TEST_CASE("candidate initialization") {
  ReconHyperparams hp;
  hp.sigma_x = 0.5;
  CandidateSet c = init_candidates(7, 3, std::vector<std::size_t>{4, 2}, hp, 1, 6);
  CHECK(c.labels == std::vector<std::size_t>{2, 4, 2, 4, 2, 4, 2});
  CHECK(c.lambdas.shape() == Shape{7, 5});
  CHECK(c.head_size() == 6);
  for (double v : c.lambdas.values()) CHECK(v == 0.1);
  CHECK(init_candidates(7, 3, std::vector<std::size_t>{4, 2}, hp, 1, 6).xs == c.xs);
  CHECK(init_candidates(3, 2, std::vector<std::size_t>{1}, hp, 1).lambdas.cols() == 1);
  CHECK_THROWS_AS(init_candidates(0, 3, std::vector<std::size_t>{0}, hp, 1), ContractError);
  CHECK_THROWS_AS(init_candidates(2, 3, std::vector<std::size_t>{}, hp, 1), ContractError);
}

TEST_CASE("reconstruct leaves theta untouched and records the trajectory") {
  ParamVector theta = init_mlp(MlpSpec{{2, 8, 2}, 1.0}, 4);
  const ParamVector copy = theta;
  ReconHyperparams hp;
  hp.n_rec = 25;
  hp.m = 6;
  ReconResult r = reconstruct(theta, hp, std::vector<std::size_t>{0, 1}, 9);
  CHECK(theta == copy);
  CHECK(r.trajectory.size() == 26);
  CHECK(r.final_loss() < r.trajectory.front().full);
  CHECK(r.candidates.size() == 6);
  ReconResult again = reconstruct(theta, hp, std::vector<std::size_t>{0, 1}, 9);
  CHECK(again.candidates.xs == r.candidates.xs);
  CHECK(again.candidates.lambdas == r.candidates.lambdas);

  hp.m = 0;
  CHECK_THROWS_AS(reconstruct(theta, hp, std::vector<std::size_t>{0, 1}, 9), ContractError);
  CandidateSet wrong = init_candidates(3, 5, std::vector<std::size_t>{0, 1}, hp, 1);
  CHECK_THROWS_AS(reconstruct(theta, wrong, hp), ShapeError);
  hp.lr_x = 0.0;
  CHECK_THROWS_AS(reconstruct(theta, r.candidates, hp), ContractError);
}

TEST_CASE("divergent reconstruction raises NumericError naming the step") {
  ParamVector theta = init_mlp(MlpSpec{{2, 8, 2}, 1.0}, 4);
  ReconHyperparams hp;
  hp.n_rec = 50;
  hp.m = 4;
  hp.lr_x = 1e200;
  hp.lr_lambda = 1e200;
  try {
    reconstruct(theta, hp, std::vector<std::size_t>{0, 1}, 1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("candidate dump round-trip and corruption") {
  testutil::TempDir dir;
  CandidateSet c = init_candidates(5, 3, std::vector<std::size_t>{0, 1, 2, 3}, ReconHyperparams{}, 8);
  c.lambdas.at(2, 1) = -0.75;
  save_candidates(dir / "c.bin", c);
  const std::string bytes = testutil::read_file(dir / "c.bin");
  CHECK(bytes.substr(0, 8) == "RECLCND1");
  CHECK(bytes.size() == 8 + 16 + 8 * 5 + 8 * 15 + 8 * 15);
  CandidateSet back = load_candidates(dir / "c.bin");
  CHECK(back.xs == c.xs);
  CHECK(back.labels == c.labels);
  CHECK(back.lambdas == c.lambdas);

  testutil::write_file(dir / "short", bytes.substr(0, 40));
  CHECK_THROWS_AS(load_candidates(dir / "short"), ParseError);
  testutil::write_file(dir / "odd", bytes + "abc");
  CHECK_THROWS_AS(load_candidates(dir / "odd"), ParseError);
  std::string magic = bytes;
  magic[0] = 'X';
  testutil::write_file(dir / "magic", magic);
  CHECK_THROWS_AS(load_candidates(dir / "magic"), ParseError);
}

TEST_CASE("ReCL task step reconstructs the previous tasks' sample count") {
  auto train = make_blobs(30, 4, 3, 4.0, 1);
  auto test = make_blobs(10, 4, 3, 4.0, 2);
  auto stream = build_task_stream(train, test, Scenario::kClassIncremental, 2, 12, 3);
  ParamVector m = init_mlp(MlpSpec{{3, 10, 2}, 1.0}, 1);
  FinetuneStrategy ft;
  ReconHyperparams hp;
  hp.n_rec = 5;
  SampleCounter counter;
  TrainConfig cfg{2, 0.05, 8};

  auto first = recl_train_task(m, stream.tasks[0], 0, ft, hp, Scenario::kClassIncremental, counter, cfg, 4);
  CHECK_FALSE(first.reconstruction.has_value());
  CHECK(first.reconstructed == 0);
  counter.add_task(stream.tasks[0]);
  CHECK(counter.total() == 24);
  CHECK(counter.seen_classes == std::vector<std::size_t>{0, 1});

  auto second = recl_train_task(first.model, stream.tasks[1], 1, ft, hp, Scenario::kClassIncremental, counter, cfg, 4);
  REQUIRE(second.reconstruction.has_value());
  CHECK(second.reconstructed == 24);
  CHECK(second.reconstruction->candidates.head_size() == 2);
  CHECK(second.model.num_classes() == 4);
  for (auto y : second.reconstruction->candidates.labels) CHECK(y < 2);
}
