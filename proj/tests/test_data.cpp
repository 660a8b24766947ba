#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>

#include "recl/data.hpp"
#include "recl/error.hpp"
#include "support/tempdir.hpp"

using namespace recl;

namespace {

// Hand-assembled IDX bytes, big-endian header.
std::vector<std::uint8_t> idx_header(std::uint32_t magic, std::initializer_list<std::uint32_t> dims) {
  std::vector<std::uint8_t> out;
  auto be = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  };
  be(magic);
  for (auto d : dims) be(d);
  return out;
}

std::string to_string(const std::vector<std::uint8_t>& b) { return {b.begin(), b.end()}; }

}  // namespace

TEST_CASE("IDX images and labels round-trip through encode and parse") {
  std::vector<std::uint8_t> pixels(3 * 2 * 4);
  std::iota(pixels.begin(), pixels.end(), std::uint8_t{230});
  auto bytes = encode_idx_images(pixels, 3, 2, 4);
  CHECK(bytes == [&] {
    auto h = idx_header(0x803, {3, 2, 4});
    h.insert(h.end(), pixels.begin(), pixels.end());
    return h;
  }());
  IdxData img = parse_idx(bytes);
  CHECK(img.is_images);
  CHECK(img.image_rows == 2);
  CHECK(img.image_cols == 4);
  REQUIRE(img.values.shape() == Shape{3, 8});
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    CHECK(static_cast<std::uint8_t>(std::lround(img.values[i] * 255.0)) == pixels[i]);
  }

  std::vector<std::uint8_t> labels{7, 0, 9, 3};
  auto lbytes = encode_idx_labels(labels);
  IdxData lab = parse_idx(lbytes);
  CHECK_FALSE(lab.is_images);
  CHECK(lab.labels() == std::vector<std::size_t>{7, 0, 9, 3});
  CHECK_THROWS_AS(img.labels(), ContractError);
}

TEST_CASE("IDX parse errors name the byte offset") {
  auto expect_offset = [](const std::vector<std::uint8_t>& bytes, const std::string& fragment) {
    try {
      parse_idx(bytes);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
  };
  expect_offset({0, 0, 8}, "offset 0");
  expect_offset(idx_header(0x804, {1}), "offset 0");
  expect_offset(idx_header(0x801, {}), "offset 4");
  expect_offset(idx_header(0x801, {0}), "offset 4");
  expect_offset(idx_header(0x801, {5}), "offset 8");
  expect_offset(idx_header(0x803, {1, 2}), "offset 12");
  auto truncated = idx_header(0x803, {2, 2, 2});
  truncated.resize(truncated.size() + 5);
  expect_offset(truncated, "offset 21");
}

TEST_CASE("IDX files on disk and missing files") {
  testutil::TempDir dir;
  testutil::write_file(dir / "l.idx", to_string(encode_idx_labels(std::vector<std::uint8_t>{1, 2})));
  CHECK(read_idx_file(dir / "l.idx").labels() == std::vector<std::size_t>{1, 2});
  CHECK_THROWS_AS(read_idx_file(dir / "nope.idx"), ParseError);
}

TEST_CASE("make_blobs centres and determinism") {
  auto d = make_blobs(500, 4, 3, 5.0, 1);
  CHECK(d.size() == 2000);
  CHECK(d.class_set == std::vector<std::size_t>{0, 1, 2, 3});
  std::vector<std::vector<double>> mean(4, std::vector<double>(3, 0.0));
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < 3; ++j) mean[d.labels[i]][j] += d.features.at(i, j) / 500.0;
  // Class 3 sits at -separation * e_0.
  CHECK(mean[0][0] == doctest::Approx(5.0).epsilon(0.05));
  CHECK(mean[1][1] == doctest::Approx(5.0).epsilon(0.05));
  CHECK(mean[3][0] == doctest::Approx(-5.0).epsilon(0.05));
  CHECK(std::abs(mean[3][1]) < 0.2);
  CHECK(make_blobs(10, 4, 3, 5.0, 1).features == make_blobs(10, 4, 3, 5.0, 1).features);
  CHECK_THROWS_AS(make_blobs(0, 2, 2, 1.0, 0), ContractError);
}

TEST_CASE("class-incremental task stream") {
  auto train = make_blobs(30, 6, 4, 3.0, 2);
  auto test = make_blobs(10, 6, 4, 3.0, 3);
  auto s = build_task_stream(train, test, Scenario::kClassIncremental, 3, 20, 5);
  REQUIRE(s.tasks.size() == 3);
  std::set<std::size_t> seen;
  for (std::size_t t = 0; t < 3; ++t) {
    const Task& task = s.tasks[t];
    CHECK(task.train.size() == 40);
    CHECK(task.test.size() == 20);
    CHECK(task.head_classes == std::vector<std::size_t>{2 * t, 2 * t + 1});
    CHECK(task.train.class_set == task.head_classes);
    for (auto c : task.original_classes) CHECK(seen.insert(c).second);
    CHECK(s.head_size_after(t) == 2 * (t + 1));
  }
  CHECK(seen.size() == 6);

  // Training features across all tasks have zero mean after normalization.
  std::vector<double> mean(4, 0.0);
  for (const auto& task : s.tasks)
    for (std::size_t i = 0; i < task.train.size(); ++i)
      for (std::size_t j = 0; j < 4; ++j) mean[j] += task.train.features.at(i, j);
  for (double m : mean) CHECK(std::abs(m) < 1e-9);

  auto again = build_task_stream(train, test, Scenario::kClassIncremental, 3, 20, 5);
  CHECK(again.tasks[1].train.features == s.tasks[1].train.features);
  auto other = build_task_stream(train, test, Scenario::kClassIncremental, 3, 20, 6);
  CHECK_FALSE(other.tasks[0].train.features == s.tasks[0].train.features);
}

TEST_CASE("domain-incremental stream relabels every task to 0..k-1") {
  auto train = make_blobs(30, 6, 4, 3.0, 2);
  auto test = make_blobs(10, 6, 4, 3.0, 3);
  auto s = build_task_stream(train, test, Scenario::kDomainIncremental, 3, 20, 5);
  for (const auto& task : s.tasks) CHECK(task.head_classes == std::vector<std::size_t>{0, 1});
  CHECK(s.head_size_after(0) == 2);
  CHECK(s.head_size_after(2) == 2);
}

TEST_CASE("task stream with an explicit number of classes per task") {
  auto train = make_blobs(30, 10, 5, 3.0, 2);
  auto test = make_blobs(10, 10, 5, 3.0, 3);
  auto s = build_task_stream(train, test, Scenario::kClassIncremental, 3, 20, 1, 2);
  CHECK(s.tasks.size() == 3);
  CHECK(s.tasks[2].head_classes == std::vector<std::size_t>{4, 5});
  CHECK_THROWS_AS(build_task_stream(train, test, Scenario::kClassIncremental, 3, 20, 1), ConfigError);
  CHECK_THROWS_AS(build_task_stream(train, test, Scenario::kClassIncremental, 6, 20, 1, 2), ConfigError);
  CHECK_THROWS_AS(build_task_stream(train, test, Scenario::kClassIncremental, 5, 31, 1), ConfigError);
}

TEST_CASE("batch_iter covers every row once per epoch") {
  auto d = make_blobs(10, 3, 2, 1.0, 0);
  auto batches = batch_iter(d, 7, 4, 0);
  REQUIRE(batches.size() == 5);
  CHECK(batches.back().indices.size() == 2);
  std::vector<std::size_t> all;
  for (const auto& b : batches) {
    CHECK(b.features.rows() == b.indices.size());
    for (std::size_t k = 0; k < b.indices.size(); ++k) {
      CHECK(b.labels[k] == d.labels[b.indices[k]]);
      CHECK(b.features.at(k, 1) == d.features.at(b.indices[k], 1));
    }
    all.insert(all.end(), b.indices.begin(), b.indices.end());
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(30);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);
  CHECK(batch_iter(d, 7, 4, 0)[0].indices == batches[0].indices);
  CHECK_FALSE(batch_iter(d, 7, 4, 1)[0].indices == batches[0].indices);
  CHECK_THROWS_AS(batch_iter(d, 0, 4, 0), ContractError);
}

TEST_CASE("manifest parsing and data directory override") {
  auto m = parse_manifest("# comment\n\nfoo a/x b/y /abs/z w  # tail\n", "/root");
  REQUIRE(m.count("foo"));
  CHECK(m["foo"].train_images == std::filesystem::path("/root/a/x"));
  CHECK(m["foo"].test_images == std::filesystem::path("/abs/z"));
  CHECK_THROWS_AS(parse_manifest("foo a b c\n", "/"), ParseError);

  testutil::TempDir dir;
  testutil::write_file(dir / "datasets.manifest", "toy tri trl tei tel\n");
  CHECK(load_manifest(dir / "datasets.manifest")["toy"].train_labels == dir / "trl");
  ::setenv("RECL_DATA_DIR", "/elsewhere", 1);
  CHECK(load_manifest(dir / "datasets.manifest")["toy"].train_labels == std::filesystem::path("/elsewhere/trl"));
  ::unsetenv("RECL_DATA_DIR");
  CHECK_THROWS_AS(load_manifest(dir / "missing.manifest"), ConfigError);
}

TEST_CASE("IDX dataset from a manifest entry") {
  testutil::TempDir dir;
  std::vector<std::uint8_t> px(4 * 3, 128), lab{0, 1, 1, 0};
  testutil::write_file(dir / "tri", to_string(encode_idx_images(px, 4, 1, 3)));
  testutil::write_file(dir / "trl", to_string(encode_idx_labels(lab)));
  DatasetFiles f{dir / "tri", dir / "trl", dir / "tri", dir / "trl"};
  auto pair = load_idx_dataset(f);
  CHECK(pair.train.size() == 4);
  CHECK(pair.train.dim() == 3);
  CHECK(pair.test.class_set == std::vector<std::size_t>{0, 1});
  DatasetFiles swapped{dir / "trl", dir / "tri", dir / "tri", dir / "trl"};
  CHECK_THROWS_AS(load_idx_dataset(swapped), ParseError);
}

TEST_CASE("bundled MNIST subset loads through the default manifest") {
  const std::filesystem::path manifest = std::filesystem::path(RECL_SOURCE_DIR) / "data/datasets.manifest";
  auto entries = load_manifest(manifest);
  REQUIRE(entries.count("splitmnist"));
  auto pair = load_idx_dataset(entries["splitmnist"]);
  CHECK(pair.train.dim() == 784);
  CHECK(pair.train.class_set.size() == 10);
  CHECK(pair.train.size() == 4000);
  CHECK(pair.test.size() == 1000);
}

TEST_CASE("scenario names") {
  CHECK(parse_scenario("CIL") == Scenario::kClassIncremental);
  CHECK(parse_scenario("DIL") == Scenario::kDomainIncremental);
  CHECK(std::string(scenario_name(Scenario::kDomainIncremental)) == "DIL");
  CHECK_THROWS_AS(parse_scenario("TIL"), ConfigError);
}
