#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "axcrf/errors.hpp"
#include "axcrf/pointcloud.hpp"
#include "oracles.hpp"

using namespace axcrf;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / ("axcrf_pc_" + name);
  std::ofstream(p) << text;
  return p;
}

ColumnMap default_map() {
  ColumnMap m;
  m.features = {3, 4};
  m.label = 5;
  return m;
}

PointCloud cloud_from(const Tensor& positions) {
  PointCloud c;
  c.positions = positions;
  c.features = Tensor::zeros({positions.shape[0], 1});
  return c;
}

}  // namespace

TEST_CASE("parse a point line") {
  const auto p = write_temp("one.txt", "1.0 2.0 3.0 0.4 -0.1 5\n");
  const PointCloud c = load_pointcloud(p, default_map(), 9);
  REQUIRE(c.size() == 1);
  CHECK(c.positions.values == std::vector<double>{1, 2, 3});
  CHECK(c.features.values == std::vector<double>{0.4, -0.1});
  CHECK(c.labels == std::vector<int>{5});
}

TEST_CASE("comma separated input and a header line") {
  const auto p = write_temp("csv.txt", "x,y,z,i,r,l\n1,2,3,4,5,1\n2,3,4,5,6,0\n");
  ColumnMap m;
  m.features = {3};
  m.label = 5;
  const PointCloud c = load_pointcloud(p, m, 2, true);
  CHECK(c.size() == 2);
  CHECK(c.features.values == std::vector<double>{4, 5});
}

TEST_CASE("empty file gives an empty cloud") {
  const auto p = write_temp("empty.txt", "");
  CHECK(load_pointcloud(p, default_map(), 9).size() == 0);
}

TEST_CASE("malformed input is reported with its line") {
  SUBCASE("non-numeric field") {
    const auto p = write_temp("bad.txt", "1 2 3 0 0 1\n1 2 x 0 0 1\n");
    try {
      load_pointcloud(p, default_map(), 9);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("missing column") {
    const auto p = write_temp("short.txt", "1 2 3 0\n");
    CHECK_THROWS_AS(load_pointcloud(p, default_map(), 9), DataError);
  }
  SUBCASE("label outside the class range") {
    const auto p = write_temp("lab.txt", "1 2 3 0 0 9\n");
    CHECK_THROWS_AS(load_pointcloud(p, default_map(), 9), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_pointcloud("/nonexistent/cloud.txt", default_map(), 9), DataError);
  }
}

TEST_CASE("write and reload round trip") {
  PointCloud c = generate_synthetic("strata", 200, 3, 0.1, 4);
  const auto p = fs::temp_directory_path() / "axcrf_pc_roundtrip.txt";
  write_pointcloud(p, c);
  const PointCloud back = load_pointcloud(p, default_map(), 3);
  CHECK(back.positions == c.positions);
  CHECK(back.features == c.features);
  CHECK(back.labels == c.labels);
}

TEST_CASE("feature normalization onto [-0.5, 0.5]") {
  PointCloud c;
  c.positions = Tensor::zeros({3, 3});
  c.features = Tensor::matrix({{0, 7, 1}, {5, 7, 2}, {10, 7, 4}});
  const NormalizedCloud n = normalize_features(c);
  const Tensor& f = n.cloud.features;
  CHECK(f(0, 0) == -0.5);
  CHECK(f(1, 0) == 0.0);
  CHECK(f(2, 0) == 0.5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(f(i, 1) == 0.0);
  CHECK(f(0, 2) == doctest::Approx(-0.5));
  CHECK(f(1, 2) == doctest::Approx(-1.0 / 6.0));
  CHECK(f(2, 2) == doctest::Approx(0.5));
}

TEST_CASE("corners of a 10 m square") {
  const PointCloud c = cloud_from(Tensor::matrix({{0, 0, 0}, {10, 0, 0}, {0, 10, 0}, {10, 10, 0}}));
  SliceOptions o;
  o.min_points = 1;
  const auto blocks = slice_blocks(c, o);
  REQUIRE(!blocks.empty());
  CHECK(blocks[0].members.size() == 4);
  CHECK(blocks[0].origin_x == 0.0);
  // offset grid starts at 12.5, so only the base block holds points
  std::size_t total = 0;
  for (const auto& b : blocks) total += b.members.size();
  CHECK(blocks.size() == 2);
  CHECK(total == 8);
}

TEST_CASE("a single point lies in exactly one block per grid") {
  const PointCloud c = cloud_from(Tensor::matrix({{3, 4, 1}}));
  SliceOptions o;
  o.min_points = 1;
  const auto blocks = slice_blocks(c, o);
  CHECK(blocks.size() == 2);
  for (const auto& b : blocks) CHECK(b.members == std::vector<std::size_t>{0});
}

TEST_CASE("slice membership matches the per-point grid-cell oracle") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.index(2000);
    const PointCloud c = cloud_from(oracle::random_cloud(rng, n, 40.0 + rng.uniform(0, 60)));
    SliceOptions o;
    o.side = rng.uniform(5.0, 25.0);
    o.shift = o.side * rng.uniform(0.1, 1.0);
    o.min_points = rng.index(5);

    double mx = 1e300, my = 1e300;
    for (std::size_t i = 0; i < n; ++i) {
      mx = std::min(mx, c.positions(i, 0));
      my = std::min(my, c.positions(i, 1));
    }
    std::set<std::vector<std::size_t>> expected;
    for (const auto& [ax, ay] : {std::pair{mx, my}, std::pair{mx + o.shift, my + o.shift}}) {
      std::map<std::pair<long, long>, std::vector<std::size_t>> cells;
      for (std::size_t i = 0; i < n; ++i) {
        cells[{oracle::cell_of(c.positions(i, 0), ax, o.side), oracle::cell_of(c.positions(i, 1), ay, o.side)}]
            .push_back(i);
      }
      for (auto& [k, m] : cells) {
        if (m.size() >= o.min_points) expected.insert(m);
      }
    }
    std::set<std::vector<std::size_t>> got;
    for (const auto& b : slice_blocks(c, o)) {
      for (std::size_t i = 0; i < b.members.size(); ++i) {
        const std::size_t m = b.members[i];
        CHECK(c.positions(m, 0) >= b.origin_x);
        CHECK(c.positions(m, 0) < b.origin_x + b.side);
        CHECK(b.local_positions(i, 0) == c.positions(m, 0) - b.center_x());
      }
      got.insert(b.members);
    }
    CHECK(got == expected);
  }
}

TEST_CASE("slice rejects a bad shift") {
  const PointCloud c = cloud_from(Tensor::matrix({{0, 0, 0}}));
  SliceOptions o;
  o.shift = 30;
  CHECK_THROWS_AS(slice_blocks(c, o), std::invalid_argument);
}

TEST_CASE("block sampling") {
  Block b;
  SUBCASE("more members than n: distinct indices") {
    for (std::size_t i = 0; i < 3000; ++i) b.members.push_back(i * 2);
    const auto s = sample_block(b, 2048, 5);
    CHECK(s.sample_indices.size() == 2048);
    CHECK(std::set<std::size_t>(s.sample_indices.begin(), s.sample_indices.end()).size() == 2048);
  }
  SUBCASE("fewer members than n: all present plus repeats") {
    for (std::size_t i = 0; i < 1300; ++i) b.members.push_back(i);
    const auto s = sample_block(b, 2048, 5);
    CHECK(s.sample_indices.size() == 2048);
    CHECK(std::set<std::size_t>(s.sample_indices.begin(), s.sample_indices.end()).size() == 1300);
  }
  SUBCASE("exactly n members: identity multiset") {
    for (std::size_t i = 0; i < 64; ++i) b.members.push_back(i);
    auto s = sample_block(b, 64, 5).sample_indices;
    std::sort(s.begin(), s.end());
    CHECK(s == b.members);
  }
  SUBCASE("same seed, same sample") {
    for (std::size_t i = 0; i < 500; ++i) b.members.push_back(i);
    CHECK(sample_block(b, 100, 8).sample_indices == sample_block(b, 100, 8).sample_indices);
    CHECK(sample_block(b, 100, 8).sample_indices != sample_block(b, 100, 9).sample_indices);
  }
}

TEST_CASE("coverage passes touch every member") {
  Rng rng(2);
  for (std::size_t m : {1u, 7u, 100u, 513u, 2000u}) {
    Block b;
    for (std::size_t i = 0; i < m; ++i) b.members.push_back(i);
    const auto passes = coverage_samples(b, 128, rng.next());
    std::set<std::size_t> seen;
    for (const auto& p : passes) {
      CHECK(p.sample_indices.size() == 128);
      seen.insert(p.sample_indices.begin(), p.sample_indices.end());
    }
    CHECK(seen.size() == m);
  }
}

TEST_CASE("tile split partitions the cloud by whole tiles") {
  const PointCloud c = generate_synthetic("clusters", 5000, 3, 0.1, 6);
  const TileSplit s = split_by_tiles(c, 20.0, 0.8, 0.25, 3);
  CHECK(s.train.size() + s.validation.size() + s.test.size() == c.size());
  CHECK(!s.train.empty());
  CHECK(!s.validation.empty());
  CHECK(!s.test.empty());
  std::map<std::pair<long, long>, int> owner;
  double mx = 1e300, my = 1e300;
  for (std::size_t i = 0; i < c.size(); ++i) {
    mx = std::min(mx, c.positions(i, 0));
    my = std::min(my, c.positions(i, 1));
  }
  int part = 0;
  for (const auto* v : {&s.train, &s.validation, &s.test}) {
    for (std::size_t i : *v) {
      const auto key = std::pair{grid_cell(c.positions(i, 0), mx, 20.0), grid_cell(c.positions(i, 1), my, 20.0)};
      const auto it = owner.emplace(key, part).first;
      CHECK(it->second == part);
    }
    ++part;
  }
  const TileSplit again = split_by_tiles(c, 20.0, 0.8, 0.25, 3);
  CHECK(again.train == s.train);
}

TEST_CASE("synthetic presets") {
  SUBCASE("same seed, same cloud") {
    const auto a = generate_synthetic("strata", 1000, 4, 0.15, 1);
    const auto b = generate_synthetic("strata", 1000, 4, 0.15, 1);
    CHECK(a.positions == b.positions);
    CHECK(a.features == b.features);
    CHECK(a.labels == b.labels);
  }
  SUBCASE("zero noise strata with two classes is separable on height above ground") {
    const auto c = generate_synthetic("strata", 1000, 2, 0.0, 1);
    double max0 = -1e300, min1 = 1e300;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c.labels[i] == 0) max0 = std::max(max0, c.features(i, 0));
      else min1 = std::min(min1, c.features(i, 0));
    }
    CHECK(max0 < min1);
  }
  SUBCASE("unknown preset") { CHECK_THROWS_AS(generate_synthetic("waves", 10, 2, 0.0, 1), std::invalid_argument); }
  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(generate_synthetic("strata", 0, 2, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(generate_synthetic("strata", 10, 1, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(generate_synthetic("strata", 10, 2, 1.0, 1), std::invalid_argument);
  }
}

TEST_CASE("1-NN on features of the default strata cloud") {
  // leave-one-out nearest neighbor in feature space
  const auto c = generate_synthetic("strata", 20000, 4, 0.15, 1);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    double best = 1e300;
    int label = -1;
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (j == i) continue;
      const double d0 = c.features(i, 0) - c.features(j, 0), d1 = c.features(i, 1) - c.features(j, 1);
      const double d = d0 * d0 + d1 * d1;
      if (d < best) {
        best = d;
        label = c.labels[j];
      }
    }
    hit += label == c.labels[i];
  }
  const double oa = static_cast<double>(hit) / static_cast<double>(c.size());
  CHECK(hit == 19315);
  CHECK(oa >= 0.85);
}
