#pragma once

// Similarity histograms, histogram overlap and temperature statistics.

#include "amcl/tensor.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace amcl {

inline constexpr std::size_t kHistogramBins = 100;

/// Equal-width bins over [-1, 1]; the last bin includes its right edge.
struct SimilarityHistogram {
  std::vector<std::size_t> counts;
  std::size_t total = 0;

  std::size_t bins() const { return counts.size(); }
  double bin_lo(std::size_t b) const { return -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(bins()); }
  double bin_hi(std::size_t b) const { return -1.0 + 2.0 * static_cast<double>(b + 1) / static_cast<double>(bins()); }
  std::vector<double> mass() const;
};

/// Bin of similarity `s` (clamped into [-1, 1] first).
std::size_t histogram_bin(double s, std::size_t bins = kHistogramBins);

/// Throws ContractViolation on an empty input.
SimilarityHistogram similarity_histogram(std::span<const double> similarities, std::size_t bins = kHistogramBins);

/// sum_b min(p_b, n_b) over normalized masses. Throws ContractViolation when
/// the binnings differ.
double overlap_coefficient(const SimilarityHistogram& p, const SimilarityHistogram& n);

/// Cosine similarity of row i of `u` with row i of `v`, averaged over the
/// per-head matrices. One matrix per side gives the plain row similarity.
std::vector<double> pair_similarities(std::span<const RowMatrixXd> u, std::span<const RowMatrixXd> v);

struct SeparabilityReport {
  std::string source;  // "projected" or "backbone"
  SimilarityHistogram positive;
  SimilarityHistogram negative;
  double overlap = 0.0;
};

SeparabilityReport separability(std::string source, std::span<const double> pos_sims, std::span<const double> neg_sims);

/// `source,bin_lo,bin_hi,pos_mass,neg_mass` rows, then `<source>,overlap,,<value>,` per report.
void write_separability_csv(const std::filesystem::path& path, std::span<const SeparabilityReport> reports);

struct TemperatureStats {
  std::vector<double> mean;  // per head
  std::vector<double> min;
  std::vector<double> max;
  double cross_head_variance = 0.0;  // mean over samples of the population variance across heads
};

/// `per_head[c][i]` is head c's temperature for sample i; all heads hold the
/// same number of samples. Throws ContractViolation on an empty window.
TemperatureStats temperature_stats(std::span<const Eigen::VectorXd> per_head);

}  // namespace amcl
