#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cilforge/errors.hpp"
#include "cilforge/memory.hpp"
#include "cilforge/rng.hpp"
#include "oracles.hpp"

using namespace cilforge;

namespace {

using testing::herding_objective;
using testing::normalized_rows;
using testing::oracle_herding;
using testing::Rows;

Tensor random_features(std::size_t n, std::size_t d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return Tensor::randn({n, d}, rng, 1.0);
}

}  // namespace

TEST_CASE("quota examples") {
  CHECK(quota({false, 2000, 20}, 100) == 20);
  CHECK(quota({false, 2000, 20}, 30) == 66);
  for (int k : {1, 7, 100, 5000}) CHECK(quota({true, 2000, 20}, k) == 20);
  CHECK(quota({false, 5, 20}, 10) == 0);
  CHECK_THROWS_AS(quota({false, 2000, 20}, 0), ContractError);
}

TEST_CASE("herding trivial cases") {
  Tensor f = random_features(7, 3, 11);
  const Rows x = normalized_rows(f);
  auto one = herding_select(f, 1);
  REQUIRE(one.size() == 1);
  // The single point closest to the mean of the normalized rows.
  std::vector<double> mu(3, 0.0);
  for (const auto& r : x) for (int k = 0; k < 3; ++k) mu[k] += r[k] / 7.0;
  std::size_t closest = 0;
  double best = 1e300;
  for (std::size_t i = 0; i < 7; ++i) {
    double dd = 0;
    for (int k = 0; k < 3; ++k) dd += (x[i][k] - mu[k]) * (x[i][k] - mu[k]);
    if (dd < best) { best = dd; closest = i; }
  }
  CHECK(one[0] == closest);

  auto all = herding_select(f, 7);
  std::vector<std::size_t> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expect(7);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted == expect);
  CHECK_THROWS_AS(herding_select(f, 8), SelectionError);
}

TEST_CASE("herding matches the greedy oracle") {
  Tensor f = random_features(6, 4, 2024);
  auto picked = herding_select(f, 3);
  CHECK(picked == oracle_herding(normalized_rows(f), 3));
  CHECK(picked == std::vector<std::size_t>{4, 5, 0});
}

TEST_CASE("herding matches the greedy oracle on random instances") {
  SplitMix64 sizes(404);
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + sizes.next() % 12;
    const std::size_t m = std::min<std::size_t>(n, 1 + sizes.next() % 4);
    Tensor f = random_features(n, 1 + sizes.next() % 6, 1000 + trial);
    CHECK(herding_select(f, static_cast<int>(m)) == oracle_herding(normalized_rows(f), m));
  }
}

TEST_CASE("herding steps are optimal under exhaustive scan") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const std::size_t n = 2 + seed % 11;
    Tensor f = random_features(n, 5, seed);
    const Rows x = normalized_rows(f);
    auto picked = herding_select(f, static_cast<int>(n));
    std::vector<std::size_t> chosen;
    for (std::size_t step = 0; step < n; ++step) {
      const double got = herding_objective(x, chosen, picked[step]);
      for (std::size_t i = 0; i < n; ++i) {
        if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
        CHECK(got <= herding_objective(x, chosen, i) + 1e-12);
      }
      chosen.push_back(picked[step]);
    }
  }
}

TEST_CASE("herding prefix property") {
  Tensor f = random_features(12, 6, 99);
  auto longest = herding_select(f, 12);
  for (int m = 0; m <= 12; ++m) {
    auto pick = herding_select(f, m);
    CHECK(std::equal(pick.begin(), pick.end(), longest.begin()));
  }
}

TEST_CASE("herding ties go to the lowest index") {
  Tensor f = Tensor::from_rows({{1, 0}, {0, 1}, {1, 0}, {0, 1}});
  CHECK(herding_select(f, 4) == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("reduce_exemplars keeps herding prefixes") {
  ExemplarStore store;
  for (int c = 0; c < 3; ++c) {
    std::vector<std::size_t> rows(20);
    std::iota(rows.begin(), rows.end(), static_cast<std::size_t>(100 * c));
    store.set_class(c, rows);
  }
  CHECK(reduce_exemplars(store, 20) == store);
  auto half = reduce_exemplars(store, 10);
  for (int c = 0; c < 3; ++c) {
    REQUIRE(half.count(c) == 10);
    CHECK(std::equal(half.class_rows(c).begin(), half.class_rows(c).end(),
                     store.class_rows(c).begin()));
  }
}

TEST_CASE("dynamic budget over a 100-class stream") {
  const MemoryPolicy policy{false, 2000, 20};
  ExemplarStore store;
  for (int seen = 10; seen <= 100; seen += 10) {
    const int q = quota(policy, seen);
    store = reduce_exemplars(store, q);
    for (int c = seen - 10; c < seen; ++c) {
      std::vector<std::size_t> rows(static_cast<std::size_t>(q));
      std::iota(rows.begin(), rows.end(), static_cast<std::size_t>(c * 1000));
      store.set_class(c, rows);
    }
    CHECK(store.total() <= 2000u);
  }
  for (int c = 0; c < 100; ++c) CHECK(store.count(c) == 20);
}

TEST_CASE("rehearsal dataset assembly") {
  Dataset full;
  full.dim = 2;
  for (int c = 0; c < 15; ++c) {
    for (int i = 0; i < 50; ++i) full.push_back(std::vector<double>{double(c), double(i)}, c);
  }
  Dataset current;
  current.dim = 2;
  for (std::size_t r = 0; r < full.size(); ++r) {
    if (full.labels[r] >= 10) current.push_back(full.row(r), full.labels[r]);
  }
  for (std::size_t r = 0; r < 250; ++r) current.push_back(full.row(500 + r % 250), full.labels[500 + r % 250]);
  REQUIRE(current.size() == 500);

  ExemplarStore empty;
  CHECK(rehearsal_dataset(empty, current, full) == current);

  ExemplarStore store;
  for (int c = 0; c < 10; ++c) {
    std::vector<std::size_t> rows;
    for (int i = 0; i < 20; ++i) rows.push_back(static_cast<std::size_t>(c * 50 + i));
    store.set_class(c, rows);
  }
  const auto reads = store.access_count();
  Dataset mix = rehearsal_dataset(store, current, full);
  CHECK(store.access_count() == reads + 1);
  CHECK(mix.size() == 700);
  for (std::size_t i = 500; i < mix.size(); ++i) {
    CHECK(mix.labels[i] < 10);
    CHECK(mix.row(i)[0] == mix.labels[i]);
  }
}

TEST_CASE("store serialization round trip") {
  ExemplarStore store;
  store.set_class(3, {9, 1, 4});
  store.set_class(0, {2});
  auto back = ExemplarStore::from_json(nlohmann::json::parse(store.to_json().dump()));
  CHECK(back == store);
  CHECK(back.classes() == std::vector<int>{0, 3});
  CHECK_THROWS_AS(back.class_rows(5), RangeError);
}
