#include <doctest.h>

#include <numeric>

#include "axcrf/errors.hpp"
#include "axcrf/metrics.hpp"
#include "axcrf/random.hpp"

using namespace axcrf;

TEST_CASE("perfect predictions") {
  const std::vector<int> y{0, 1, 2, 2, 1};
  const auto cm = confusion_matrix(y, y, 3);
  CHECK(cm.counts == std::vector<std::uint64_t>{1, 0, 0, 0, 2, 0, 0, 0, 2});
  const auto r = scores(cm);
  for (double f : r.f1) CHECK(f == 1.0);
  CHECK(r.overall_accuracy == 1.0);
}

TEST_CASE("rows are truth, columns prediction") {
  const auto cm = confusion_matrix({0, 1}, {1, 1}, 2);
  CHECK(cm.counts == std::vector<std::uint64_t>{0, 0, 1, 1});
}

TEST_CASE("hand-evaluated two-class matrix") {
  ConfusionMatrix cm{2, {5, 1, 2, 2}};
  const auto r = scores(cm);
  CHECK(r.precision[0] == doctest::Approx(5.0 / 7.0).epsilon(1e-15));
  CHECK(r.recall[0] == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(r.f1[0] == doctest::Approx(10.0 / 13.0).epsilon(1e-15));
  CHECK(r.overall_accuracy == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("mean of published per-class F1 values") {
  const std::vector<double> f1{62.97, 82.59, 91.91, 74.86, 39.87, 94.48, 59.33, 50.75, 82.69};
  const double mean = std::accumulate(f1.begin(), f1.end(), 0.0) / 9.0;
  CHECK(std::abs(mean - 71.05) < 0.005);
}

TEST_CASE("undefined precision and recall are zero") {
  ConfusionMatrix cm{3, {4, 0, 0, 1, 0, 0, 0, 0, 0}};
  const auto r = scores(cm);
  CHECK(r.precision[2] == 0.0);
  CHECK(r.recall[2] == 0.0);
  CHECK(r.f1[2] == 0.0);
  CHECK(r.recall[1] == 0.0);
  CHECK(r.average_f1 == doctest::Approx((2.0 * 0.8 / 1.8) / 3.0));
}

TEST_CASE("counting oracle and permutation invariance") {
  Rng rng(12);
  std::vector<int> p, t;
  for (int i = 0; i < 500; ++i) {
    p.push_back(static_cast<int>(rng.index(4)));
    t.push_back(static_cast<int>(rng.index(4)));
  }
  const auto cm = confusion_matrix(p, t, 4);
  for (int c = 0; c < 4; ++c) {
    std::uint64_t row = 0;
    for (int q = 0; q < 4; ++q) row += cm.at(c, q);
    CHECK(row == static_cast<std::uint64_t>(std::count(t.begin(), t.end(), c)));
  }
  std::vector<std::size_t> perm(500);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  std::vector<int> p2, t2;
  for (std::size_t i : perm) {
    p2.push_back(p[i]);
    t2.push_back(t[i]);
  }
  const auto a = scores(cm), b = scores(confusion_matrix(p2, t2, 4));
  CHECK(a.matrix == b.matrix);
  CHECK(a.f1 == b.f1);
  CHECK(a.overall_accuracy == b.overall_accuracy);
  CHECK(overall_accuracy(p, t) == a.overall_accuracy);
}

TEST_CASE("invalid inputs") {
  CHECK_THROWS_AS(confusion_matrix({0, 1}, {0}, 2), DataError);
  CHECK_THROWS_AS(confusion_matrix({0, 3}, {0, 1}, 2), DataError);
  CHECK_THROWS_AS(scores(ConfusionMatrix{2, {0, 0, 0, 0}}), DataError);
}

TEST_CASE("report output") {
  const auto r = scores(ConfusionMatrix{2, {5, 1, 2, 2}}, {"ground", "roof"});
  const auto text = r.to_text();
  CHECK(text.find("roof") != std::string::npos);
  CHECK(text.find("OA") != std::string::npos);
  const auto j = r.to_json();
  CHECK(j["overall_accuracy"].get<double>() == doctest::Approx(0.7));
  CHECK(j["confusion_matrix"][1][0].get<int>() == 2);
}
