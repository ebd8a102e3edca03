#include <doctest.h>

#include "amcl/errors.hpp"
#include "amcl/metrics.hpp"
#include "amcl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace amcl;

namespace {

SimilarityHistogram uniform_on_bins(std::size_t first, std::size_t last) {
  SimilarityHistogram h;
  h.counts.assign(kHistogramBins, 0);
  for (std::size_t b = first; b <= last; ++b) h.counts[b - 1] = 1;
  h.total = last - first + 1;
  return h;
}

RowMatrixXd rows(std::initializer_list<std::initializer_list<double>> r) {
  RowMatrixXd m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (const double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("identical pairs land in the bin containing 1") {
  const std::vector<RowMatrixXd> u{rows({{0.3, -0.2, 0.9}, {1.0, 2.0, 3.0}})};
  const auto sims = pair_similarities(u, u);
  const auto h = similarity_histogram(sims);
  CHECK(h.counts[kHistogramBins - 1] == 2);
  CHECK(h.mass()[kHistogramBins - 1] == doctest::Approx(1.0));
}

TEST_CASE("orthogonal pairs land in the bin containing 0") {
  const std::vector<RowMatrixXd> u{rows({{1.0, 0.0}, {0.0, 3.0}})};
  const std::vector<RowMatrixXd> v{rows({{0.0, 2.0}, {-1.0, 0.0}})};
  const auto h = similarity_histogram(pair_similarities(u, v));
  CHECK(h.counts[histogram_bin(0.0)] == 2);
  CHECK(histogram_bin(0.0) == kHistogramBins / 2);
}

TEST_CASE("projected similarity averages over heads") {
  const std::vector<RowMatrixXd> u{rows({{1.0, 0.0}}), rows({{1.0, 0.0}})};
  const std::vector<RowMatrixXd> v{rows({{1.0, 0.0}}), rows({{0.0, 1.0}})};
  CHECK(pair_similarities(u, v)[0] == doctest::Approx(0.5));
}

TEST_CASE("uniform similarities fill every bin evenly") {
  std::vector<double> s(1000);
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = -1.0 + 2.0 * static_cast<double>(k) / 999.0;
  const auto h = similarity_histogram(s);
  const auto m = h.mass();
  CHECK(std::accumulate(m.begin(), m.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  for (const double x : m) CHECK(std::abs(x - 0.01) <= 0.001 + 1e-12);
  CHECK(h.counts.back() >= 1);  // right edge inclusive
}

TEST_CASE("every value falls in exactly one bin and mass sums to one") {
  SplitMix64 rng(11);
  std::vector<double> s(777);
  for (auto& x : s) x = rng.uniform(-1.0, 1.0);
  s[0] = -1.0;
  s[1] = 1.0;
  const auto h = similarity_histogram(s);
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}) == s.size());
  const auto m = h.mass();
  CHECK(std::abs(std::accumulate(m.begin(), m.end(), 0.0) - 1.0) < 1e-12);
  for (std::size_t b = 0; b < h.bins(); ++b) {
    for (const double x : s) {
      if (histogram_bin(x) == b) CHECK((x >= h.bin_lo(b) - 1e-15 && x <= h.bin_hi(b) + 1e-15));
    }
  }
}

TEST_CASE("empty similarity list is a contract violation") {
  CHECK_THROWS_AS(similarity_histogram(std::vector<double>{}), ContractViolation);
}

TEST_CASE("overlap coefficient examples") {
  const auto a = uniform_on_bins(1, 50);
  CHECK(overlap_coefficient(a, a) == doctest::Approx(1.0));
  CHECK(overlap_coefficient(a, uniform_on_bins(51, 100)) == 0.0);
  CHECK(overlap_coefficient(a, uniform_on_bins(26, 75)) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("overlap requires matching binning") {
  SimilarityHistogram small;
  small.counts.assign(10, 1);
  small.total = 10;
  CHECK_THROWS_AS(overlap_coefficient(uniform_on_bins(1, 5), small), ContractViolation);
}

TEST_CASE("overlap is symmetric and invariant to a shared bin permutation") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p(300), n(300);
    for (auto& x : p) x = rng.uniform(-0.2, 1.0);
    for (auto& x : n) x = rng.uniform(-1.0, 0.6);
    const auto hp = similarity_histogram(p);
    const auto hn = similarity_histogram(n);
    const double o = overlap_coefficient(hp, hn);
    CHECK(o >= 0.0);
    CHECK(o <= 1.0);
    CHECK(o == overlap_coefficient(hn, hp));

    const auto perm = shuffled_indices(kHistogramBins, 100 + static_cast<std::uint64_t>(trial));
    SimilarityHistogram qp = hp, qn = hn;
    for (std::size_t b = 0; b < kHistogramBins; ++b) {
      qp.counts[b] = hp.counts[perm[b]];
      qn.counts[b] = hn.counts[perm[b]];
    }
    CHECK(overlap_coefficient(qp, qn) == doctest::Approx(o).epsilon(1e-12));
  }
}

TEST_CASE("separability report counts pairs and writes csv") {
  const std::vector<double> pos{0.9, 0.95, 1.0};
  const std::vector<double> neg{0.0, 0.1, 0.95, -0.5};
  const auto r = separability("projected", pos, neg);
  CHECK(r.positive.total == 3);
  CHECK(r.negative.total == 4);
  CHECK(r.overlap == doctest::Approx(0.25));

  const auto path = std::filesystem::temp_directory_path() / "amcl_sep_test.csv";
  const std::vector<SeparabilityReport> reports{r};
  write_separability_csv(path, reports);
  std::ifstream in(path);
  std::string header, line, last;
  std::getline(in, header);
  CHECK(header == "source,bin_lo,bin_hi,pos_mass,neg_mass");
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    last = line;
  }
  CHECK(lines == kHistogramBins + 1);
  CHECK(last == "projected,overlap,,0.25,");
  std::filesystem::remove(path);
}

TEST_CASE("temperature statistics") {
  SUBCASE("heads at 1, 2, 3 give population variance 2/3") {
    const std::vector<Eigen::VectorXd> t{Eigen::VectorXd::Constant(5, 1.0), Eigen::VectorXd::Constant(5, 2.0),
                                         Eigen::VectorXd::Constant(5, 3.0)};
    const auto s = temperature_stats(t);
    CHECK(s.cross_head_variance == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(s.mean[1] == 2.0);
  }
  SUBCASE("constant temperatures") {
    const std::vector<Eigen::VectorXd> t(3, Eigen::VectorXd::Constant(7, 0.2));
    const auto s = temperature_stats(t);
    CHECK(s.cross_head_variance == 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(s.min[c] == 0.2);
      CHECK(s.max[c] == 0.2);
      CHECK(s.mean[c] == doctest::Approx(0.2).epsilon(1e-15));
    }
  }
  SUBCASE("per-sample variance is averaged") {
    Eigen::VectorXd a(2), b(2);
    a << 0.0, 1.0;
    b << 2.0, 1.0;
    const std::vector<Eigen::VectorXd> t{a, b};
    CHECK(temperature_stats(t).cross_head_variance == doctest::Approx(0.5));
  }
  CHECK_THROWS_AS(temperature_stats(std::vector<Eigen::VectorXd>{}), ContractViolation);
}

}  // TEST_SUITE
