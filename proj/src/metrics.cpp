#include "amcl/metrics.hpp"

#include "amcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace amcl {

std::vector<double> SimilarityHistogram::mass() const {
  std::vector<double> m(counts.size(), 0.0);
  if (total == 0) return m;
  for (std::size_t b = 0; b < counts.size(); ++b) m[b] = static_cast<double>(counts[b]) / static_cast<double>(total);
  return m;
}

std::size_t histogram_bin(double s, std::size_t bins) {
  const double x = std::clamp(s, -1.0, 1.0);
  const auto b = static_cast<std::size_t>(std::floor((x + 1.0) / 2.0 * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

SimilarityHistogram similarity_histogram(std::span<const double> similarities, std::size_t bins) {
  if (similarities.empty()) throw ContractViolation("similarity_histogram: empty pair list");
  if (bins == 0) throw ContractViolation("similarity_histogram: need at least one bin");
  SimilarityHistogram h;
  h.counts.assign(bins, 0);
  for (const double s : similarities) {
    if (!std::isfinite(s)) throw ContractViolation("similarity_histogram: non-finite similarity");
    ++h.counts[histogram_bin(s, bins)];
  }
  h.total = similarities.size();
  return h;
}

double overlap_coefficient(const SimilarityHistogram& p, const SimilarityHistogram& n) {
  if (p.bins() != n.bins()) {
    throw ContractViolation("overlap_coefficient: binning mismatch (" + std::to_string(p.bins()) + " vs " +
                            std::to_string(n.bins()) + " bins)");
  }
  const auto mp = p.mass();
  const auto mn = n.mass();
  double acc = 0.0;
  for (std::size_t b = 0; b < mp.size(); ++b) acc += std::min(mp[b], mn[b]);
  return std::min(acc, 1.0);
}

std::vector<double> pair_similarities(std::span<const RowMatrixXd> u, std::span<const RowMatrixXd> v) {
  if (u.empty() || u.size() != v.size()) throw ContractViolation("pair_similarities: need matching non-empty head lists");
  const Eigen::Index rows = u[0].rows();
  std::vector<double> out(static_cast<std::size_t>(rows), 0.0);
  for (std::size_t c = 0; c < u.size(); ++c) {
    if (u[c].rows() != rows || v[c].rows() != rows || u[c].cols() != v[c].cols()) {
      throw ContractViolation("pair_similarities: shape mismatch in head " + std::to_string(c));
    }
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double nu = u[c].row(i).norm();
      const double nv = v[c].row(i).norm();
      if (nu == 0.0 || nv == 0.0) throw DomainError("pair_similarities: zero vector");
      out[static_cast<std::size_t>(i)] += u[c].row(i).dot(v[c].row(i)) / (nu * nv);
    }
  }
  for (auto& s : out) s /= static_cast<double>(u.size());
  return out;
}

SeparabilityReport separability(std::string source, std::span<const double> pos_sims, std::span<const double> neg_sims) {
  SeparabilityReport r;
  r.source = std::move(source);
  r.positive = similarity_histogram(pos_sims);
  r.negative = similarity_histogram(neg_sims);
  r.overlap = overlap_coefficient(r.positive, r.negative);
  return r;
}

void write_separability_csv(const std::filesystem::path& path, std::span<const SeparabilityReport> reports) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[256];
  out << "source,bin_lo,bin_hi,pos_mass,neg_mass\n";
  for (const auto& r : reports) {
    const auto pm = r.positive.mass();
    const auto nm = r.negative.mass();
    for (std::size_t b = 0; b < pm.size(); ++b) {
      std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g\n", r.source.c_str(), r.positive.bin_lo(b),
                    r.positive.bin_hi(b), pm[b], nm[b]);
      out << buf;
    }
  }
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%s,overlap,,%.17g,\n", r.source.c_str(), r.overlap);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

TemperatureStats temperature_stats(std::span<const Eigen::VectorXd> per_head) {
  if (per_head.empty() || per_head[0].size() == 0) throw ContractViolation("temperature_stats: empty window");
  const Eigen::Index n = per_head[0].size();
  TemperatureStats s;
  for (const auto& t : per_head) {
    if (t.size() != n) throw ContractViolation("temperature_stats: heads hold different sample counts");
    s.mean.push_back(t.mean());
    s.min.push_back(t.minCoeff());
    s.max.push_back(t.maxCoeff());
  }
  const auto c = static_cast<double>(per_head.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    // shifted by the first head so equal temperatures give exactly zero
    const double shift = per_head[0][i];
    double mu = 0.0;
    for (const auto& t : per_head) mu += t[i] - shift;
    mu /= c;
    double var = 0.0;
    for (const auto& t : per_head) var += (t[i] - shift - mu) * (t[i] - shift - mu);
    acc += var / c;
  }
  s.cross_head_variance = acc / static_cast<double>(n);
  return s;
}

}  // namespace amcl
