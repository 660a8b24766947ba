#include <doctest.h>

#include <cmath>
#include <fstream>

#include "recl/error.hpp"
#include "recl/model.hpp"
#include "recl/rng.hpp"
#include "support/tempdir.hpp"

using namespace recl;

namespace {

// Plain-loop forward pass used as the reference.
std::vector<double> naive_forward(const ParamVector& p, std::vector<double> h) {
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const Tensor& W = p.layer(l);
    std::vector<double> next(W.rows(), 0.0);
    for (std::size_t i = 0; i < W.rows(); ++i) {
      for (std::size_t j = 0; j < W.cols(); ++j) next[i] += W.at(i, j) * h[j];
      if (l + 1 < p.num_layers()) next[i] = std::max(next[i], 0.0);
    }
    h = std::move(next);
  }
  return h;
}

}  // namespace

TEST_CASE("init_mlp layout and first-layer scaling") {
  MlpSpec spec{{5, 7, 3}, 1e-4};
  ParamVector p = init_mlp(spec, 1);
  REQUIRE(p.num_layers() == 2);
  CHECK(p.layer(0).shape() == Shape{7, 5});
  CHECK(p.layer(1).shape() == Shape{3, 7});
  CHECK(p.size() == 35 + 21);
  CHECK(p.layer_sizes() == spec.layer_sizes);
  double max_first = 0.0, max_second = 0.0;
  for (double v : p.layer(0).values()) max_first = std::max(max_first, std::abs(v));
  for (double v : p.layer(1).values()) max_second = std::max(max_second, std::abs(v));
  CHECK(max_first < 1e-3);
  CHECK(max_second > 1e-2);
  CHECK(init_mlp(spec, 1) == p);
  CHECK_FALSE(init_mlp(spec, 2) == p);
  CHECK_THROWS_AS(init_mlp(MlpSpec{{5}, 1.0}, 0), ContractError);
  CHECK_THROWS_AS(init_mlp(MlpSpec{{5, 0, 2}, 1.0}, 0), ContractError);
}

TEST_CASE("forward matches a plain-loop reference for vectors and batches") {
  ParamVector p = init_mlp(MlpSpec{{4, 6, 5, 3}, 1.0}, 3);
  Rng rng(8);
  Tensor X({5, 4});
  for (auto& v : X.values()) v = rng.normal();
  Tensor batch = forward(p, X);
  REQUIRE(batch.shape() == Shape{5, 3});
  for (std::size_t i = 0; i < 5; ++i) {
    auto ref = naive_forward(p, {X.at(i, 0), X.at(i, 1), X.at(i, 2), X.at(i, 3)});
    Tensor single = forward(p, X.row(i));
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(batch.at(i, k) == doctest::Approx(ref[k]).epsilon(1e-12));
      CHECK(single[k] == doctest::Approx(ref[k]).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(forward(p, Tensor({2, 3})), ShapeError);
  CHECK_THROWS_AS(forward(p, Tensor(Shape{3})), ShapeError);
}

TEST_CASE("positive homogeneity of degree L") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t depth = 2 + rng.below(3);
    std::vector<std::size_t> sizes{3};
    for (std::size_t l = 1; l < depth; ++l) sizes.push_back(4 + rng.below(5));
    sizes.push_back(3);
    ParamVector p = init_mlp(MlpSpec{sizes, 1.0}, seed);
    Tensor x({3});
    for (auto& v : x.values()) v = rng.normal();
    for (double c : {0.5, 2.0, 10.0}) {
      auto [lhs, rhs] = homogeneity_check(p, x, c);
      for (std::size_t k = 0; k < lhs.size(); ++k) {
        CHECK(std::abs(lhs[k] - rhs[k]) <= 1e-5 * std::abs(rhs[k]));
      }
      // Independent route: scale the weights by hand.
      auto scaled = naive_forward(p.scaled(c), {x[0], x[1], x[2]});
      auto base = naive_forward(p, {x[0], x[1], x[2]});
      for (std::size_t k = 0; k < base.size(); ++k) {
        CHECK(std::abs(scaled[k] - std::pow(c, depth) * base[k]) <= 1e-5 * std::abs(scaled[k]) + 1e-12);
      }
    }
  }
  ParamVector p = init_mlp(MlpSpec{{2, 2}, 1.0}, 0);
  CHECK_THROWS_AS(homogeneity_check(p, Tensor::vector({1.0, 1.0}), 0.0), ContractError);
}

TEST_CASE("expand_head copies old rows bit-exactly and is seeded") {
  ParamVector p = init_mlp(MlpSpec{{4, 8, 2}, 1.0}, 4);
  ParamVector q = expand_head(p, 3, 99);
  REQUIRE(q.layer(1).shape() == Shape{5, 8});
  CHECK(q.layer(0) == p.layer(0));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 8; ++c) CHECK(q.layer(1).at(r, c) == p.layer(1).at(r, c));
  CHECK(expand_head(p, 3, 99) == q);
  CHECK_FALSE(expand_head(p, 3, 100) == q);
  CHECK(q.num_classes() == 5);
  CHECK_THROWS_AS(expand_head(p, 0, 1), ContractError);
}

TEST_CASE("flatten and unflatten round-trip") {
  ParamVector p = init_mlp(MlpSpec{{3, 4, 2}, 1.0}, 6);
  auto flat = p.flatten();
  CHECK(flat.size() == p.size());
  CHECK(ParamVector::unflatten(flat, p.layout()) == p);
  flat.push_back(0.0);
  CHECK_THROWS_AS(ParamVector::unflatten(flat, p.layout()), ShapeError);
  CHECK(p.dot(p) == doctest::Approx(p.squared_norm()));
  CHECK_THROWS_AS(ParamVector({Tensor({3, 2}), Tensor({2, 4})}), ShapeError);
}

TEST_CASE("checkpoint round-trip and corrupt files") {
  testutil::TempDir dir;
  MlpSpec spec{{6, 5, 4}, 1e-4};
  ParamVector p = init_mlp(spec, 12);
  const auto path = dir / "m.ckpt";
  save_checkpoint(path, spec, p);
  auto [spec2, p2] = load_checkpoint(path);
  CHECK(spec2 == spec);
  CHECK(p2 == p);

  const std::string bytes = testutil::read_file(path);
  CHECK(bytes.substr(0, 8) == "RECLMDL1");
  CHECK(bytes.size() == 8 + 8 + 3 * 8 + 8 + 8 * (30 + 20));

  std::string bad_magic = bytes;
  bad_magic[3] = 'X';
  testutil::write_file(dir / "bad", bad_magic);
  CHECK_THROWS_AS(load_checkpoint(dir / "bad"), ParseError);

  testutil::write_file(dir / "short", bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS_AS(load_checkpoint(dir / "short"), ParseError);

  testutil::write_file(dir / "long", bytes + "x");
  CHECK_THROWS_AS(load_checkpoint(dir / "long"), ParseError);

  CHECK_THROWS(load_checkpoint(dir / "missing"));
}
