#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <regex>

#include <json.hpp>

#include "sdna/error.hpp"
#include "sdna/experts.hpp"
#include "synthetic.hpp"

using namespace sdna;

namespace {

std::vector<double> flatten(const std::vector<std::vector<double>>& rows) {
  std::vector<double> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

ExpertModel basis_model(std::size_t k, std::size_t dim) {
  ExpertModel m;
  m.k = k;
  m.dim = dim;
  for (std::size_t c = 0; c < k; ++c) {
    const auto b = testing::basis(dim, c);
    m.centroids.insert(m.centroids.end(), b.begin(), b.end());
  }
  m.cost_table.assign(k, 0.0);
  return m;
}

}  // namespace

TEST_CASE("SplitMix64 reproduces the reference sequence") {
  SplitMix64 rng(1234567);
  CHECK(rng.next() == 6457827717110365317ULL);
  CHECK(rng.next() == 3203168211198807973ULL);
  CHECK(rng.next() == 9817491932198370423ULL);
  SplitMix64 u(42);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("kmeans on orthogonal points recovers the points") {
  const auto pts = flatten({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const auto r = kmeans(pts, 3, 3, 9, 100, 1e-6);
  std::vector<std::vector<double>> got;
  for (std::size_t c = 0; c < 3; ++c) got.emplace_back(r.centroids.begin() + c * 3, r.centroids.begin() + c * 3 + 3);
  std::sort(got.begin(), got.end());
  CHECK(got == std::vector<std::vector<double>>{{0, 0, 1}, {0, 1, 0}, {1, 0, 0}});
  CHECK(r.stats.inertia == 0.0);
}

TEST_CASE("kmeans with k = 1 returns the mean") {
  const auto pts = flatten({{1, 2}, {3, 4}, {5, 0}, {-1, 2}});
  const auto r = kmeans(pts, 2, 1, 0, 100, 1e-9);
  CHECK(r.centroids[0] == doctest::Approx(2.0));
  CHECK(r.centroids[1] == doctest::Approx(2.0));
}

TEST_CASE("kmeans recovers four planted clusters") {
  std::mt19937_64 rng(77);
  std::vector<double> pts;
  std::vector<std::size_t> planted;
  for (std::size_t i = 0; i < 60; ++i) {
    const std::size_t label = i % 4;
    const auto row = testing::planted_rows(rng, testing::basis(8, label), 1, 0.03)[0];
    pts.insert(pts.end(), row.begin(), row.end());
    planted.push_back(label);
  }
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL, 3ULL, 4ULL}) {
    const auto r = kmeans(pts, 8, 4, seed, 100, 1e-6);
    CHECK(testing::best_permutation_agreement(r.labels, planted, 4) == 1.0);
  }
}

TEST_CASE("kmeans inertia never increases and runs are bit-identical") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const auto rows = testing::random_rows(rng, 80, 6);
    const auto pts = flatten(rows);
    const auto a = kmeans(pts, 6, 7, static_cast<std::uint64_t>(trial), 100, 1e-9);
    const auto b = kmeans(pts, 6, 7, static_cast<std::uint64_t>(trial), 100, 1e-9);
    CHECK(a.centroids == b.centroids);
    CHECK(a.labels == b.labels);
    const auto& h = a.stats.inertia_history;
    REQUIRE(!h.empty());
    for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] <= h[i - 1] * (1.0 + 1e-12));
    CHECK(a.stats.iterations == h.size());
  }
}

TEST_CASE("kmeans error paths") {
  const auto pts = flatten({{1, 1}, {1, 1}, {1, 1}});
  CHECK_THROWS_WITH_AS(kmeans(pts, 2, 4, 0, 10, 1e-6), doctest::Contains("TooFewPoints"), Error);
  CHECK_THROWS_WITH_AS(kmeans(pts, 2, 2, 0, 10, 1e-6), doctest::Contains("DegenerateInput"), Error);
  CHECK_NOTHROW(kmeans(pts, 2, 1, 0, 10, 1e-6));
  // more clusters than distinct points still terminates
  CHECK_NOTHROW(kmeans(flatten({{1, 0}, {1, 0}, {0, 1}}), 2, 3, 0, 10, 1e-6));
}

TEST_CASE("fit_experts pools codon embeddings or document embeddings") {
  std::mt19937_64 rng(4);
  const std::vector<std::vector<double>> dirs{testing::basis(6, 0), testing::basis(6, 1), testing::basis(6, 2)};
  const auto corpus = testing::planted_corpus(rng, dirs, 12, 3, 6, 0.02);

  FitOptions o;
  o.k = 3;
  o.seed = 5;
  const auto model = fit_experts(corpus.docs, o);
  CHECK(model.k == 3);
  CHECK(model.dim == 6);
  CHECK(model.cost_table == std::vector<double>(3, 0.0));
  CHECK_NOTHROW(model.validate());

  o.points = FitPoints::Documents;
  const auto by_doc = fit_experts(corpus.docs, o);
  CHECK(by_doc.k == 3);

  o.k = 13;
  CHECK_THROWS_WITH_AS(fit_experts(corpus.docs, o), doctest::Contains("TooFewPoints"), Error);
  o.k = 3;
  o.cost_table = {1.0};
  CHECK_THROWS_AS(fit_experts(corpus.docs, o), Error);
}

TEST_CASE("expert_affinity") {
  const auto model = basis_model(4, 4);
  const auto at_two = expert_affinity(std::vector<double>{0, 0, 3, 0}, model);
  CHECK(at_two[2] == doctest::Approx(1.0));
  CHECK(std::max_element(at_two.begin(), at_two.end()) - at_two.begin() == 2);

  auto m5 = basis_model(3, 5);
  const auto ortho = expert_affinity(std::vector<double>{0, 0, 0, 1, 1}, m5);
  for (double v : ortho) CHECK(v == doctest::Approx(0.0));

  const auto mid = expert_affinity(std::vector<double>{1, 1, 0, 0}, model);
  CHECK(mid[0] == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(mid[1] == doctest::Approx(1.0 / std::sqrt(2.0)));

  CHECK_THROWS_WITH_AS(expert_affinity(std::vector<double>{0, 0, 0, 0}, model), doctest::Contains("ZeroNormInput"), Error);
  CHECK_THROWS_WITH_AS(expert_affinity(std::vector<double>{1, 0}, model), doctest::Contains("DimMismatch"), Error);

  std::mt19937_64 rng(8);
  ExpertModel random_model = basis_model(5, 7);
  random_model.centroids = flatten(testing::random_rows(rng, 5, 7));
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = testing::random_rows(rng, 1, 7)[0];
    auto cx = x;
    for (double& v : cx) v *= 12.5;
    const auto a = expert_affinity(x, random_model);
    const auto b = expert_affinity(cx, random_model);
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6);
  }
}

TEST_CASE("activation_distribution") {
  for (double c : {-1.0, 0.0, 0.4}) {
    const auto p = activation_distribution(std::vector<double>{c, c}, 1.0);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
  }
  const auto sharp = activation_distribution(std::vector<double>{0.1, 0.2, 0.3, 0.9, 0.5}, 1e-3);
  CHECK(sharp[3] > 0.999);

  const auto p = activation_distribution(std::vector<double>{1.0, 0.0}, 1.0);
  CHECK(p[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.2689414213699951).epsilon(1e-12));

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(9);
    for (double& v : a) v = u(rng);
    auto shifted = a;
    for (double& v : shifted) v += 3.25;
    const auto p1 = activation_distribution(a, 0.3);
    const auto p2 = activation_distribution(shifted, 0.3);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sum += p1[i];
      CHECK(p1[i] > 0.0);
      CHECK(std::abs(p1[i] - p2[i]) < 1e-12);
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(activation_distribution(std::vector<double>{1.0}, 0.0), Error);
}

TEST_CASE("model JSON is stable and round-trips") {
  std::mt19937_64 rng(10);
  const std::vector<std::vector<double>> dirs{testing::random_unit(rng, 5), testing::random_unit(rng, 5)};
  const auto corpus = testing::planted_corpus(rng, dirs, 10, 2, 5, 0.05);
  FitOptions o;
  o.k = 2;
  o.seed = 17;
  o.cost_table = {0.5, 2.0};
  const auto model = fit_experts(corpus.docs, o);
  const std::string text = model_to_json(model);

  const auto j = nlohmann::ordered_json::parse(text);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  CHECK(keys == std::vector<std::string>{"k", "dim", "tau", "beta", "gamma", "temperature", "seed",
                                         "cost_table", "centroids", "fit_stats"});

  // centroid numbers carry at most 9 significant digits
  const auto centroids_text = j["centroids"].dump();
  const std::regex number(R"(-?(\d+)(?:\.(\d+))?(?:e[-+]?\d+)?)");
  for (auto it = std::sregex_iterator(centroids_text.begin(), centroids_text.end(), number);
       it != std::sregex_iterator(); ++it) {
    std::string digits = (*it)[1].str() + (*it)[2].str();
    digits.erase(0, digits.find_first_not_of('0'));
    CHECK(digits.size() <= 9);
  }

  const auto back = model_from_json(text);
  CHECK(back.centroids == model.centroids);
  CHECK(back.cost_table == model.cost_table);
  CHECK(back.seed == 17);
  CHECK(model_to_json(back) == text);

  CHECK_THROWS_AS(model_from_json("{}"), Error);
  auto broken = j;
  broken["cost_table"] = {1.0};
  CHECK_THROWS_AS(model_from_json(broken.dump()), Error);
}
