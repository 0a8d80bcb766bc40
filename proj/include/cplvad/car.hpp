#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cplvad/errors.hpp"
#include "cplvad/pyramid.hpp"
#include "cplvad/tensor.hpp"

namespace cplvad {

enum class BranchKind { binary, category };

// Length-n soft supervision track in [0,1] produced by the refinement stage.
struct PseudoTrack {
  std::vector<double> values;
  BranchKind source = BranchKind::binary;
  std::string video_id;
};

struct RefineConfig {
  double threshold = 0.5;      // binarization
  std::size_t max_gap = 5;     // merge runs separated by <= this many snippets
  std::size_t min_len = 3;     // drop surviving runs shorter than this
  double sigma_b = 2.0;        // Gaussian taper width at segment boundaries
  double mad_scale = 1.4826;   // MAD-to-sigma factor
  double sigma_floor = 1e-6;   // bandwidth floor

  void validate() const {
    if (threshold <= 0.0 || threshold >= 1.0)
      fail(ErrorCode::validation, "refine: threshold outside (0,1)");
    if (max_gap < 1 || min_len < 1 || sigma_b <= 0.0 || mad_scale <= 0.0 ||
        sigma_floor <= 0.0)
      fail(ErrorCode::validation, "refine: parameters must be positive");
  }
};

// Per-snippet abnormality in [0,1] from category logits: softmax over M,
// then the total abnormal mass (equivalently 1 - softmax_normal).
inline std::vector<double> abnormal_track(const Tensor<double>& logits) {
  if (logits.cols < 2)
    fail(ErrorCode::validation, "abnormal_track: needs M >= 2");
  std::vector<double> out(logits.rows);
  for (std::size_t t = 0; t < logits.rows; ++t) {
    double mx = logits.at(t, 0);
    for (std::size_t m = 1; m < logits.cols; ++m)
      mx = std::max(mx, logits.at(t, m));
    double denom = 0.0;
    for (std::size_t m = 0; m < logits.cols; ++m)
      denom += std::exp(logits.at(t, m) - mx);
    out[t] = 1.0 - std::exp(logits.at(t, 0) - mx) / denom;
  }
  return out;
}

// Normalizes each level's logits to [0,1] scores (sigmoid for the binary
// branch, abnormal softmax mass for the category branch), then upsamples
// every level to length n. Returns L x n.
inline Tensor<double> normalize_and_upsample(
    const std::vector<Tensor<double>>& levels, BranchKind branch,
    std::size_t n) {
  Tensor<double> out(levels.size(), n);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::vector<double> track;
    if (branch == BranchKind::binary) {
      track.resize(levels[i].rows);
      for (std::size_t t = 0; t < levels[i].rows; ++t) {
        const double x = levels[i].at(t, 0);
        track[t] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
      }
    } else {
      track = abnormal_track(levels[i]);
    }
    Tensor<double> col(track.size(), 1);
    col.v = track;
    const Tensor<double> up = resample_to_n(col, n);
    for (std::size_t t = 0; t < n; ++t) out.at(i, t) = up.v[t];
  }
  return out;
}

// Adaptive RBF bandwidth from the median absolute deviation, floored.
inline double mad_bandwidth(const std::vector<double>& x, double scale,
                            double floor_sigma) {
  if (x.size() < 2)
    fail(ErrorCode::validation, "mad_bandwidth: needs at least 2 values");
  auto median_of = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size() / 2;
    if (v.size() % 2 == 1) return v[k];
    return (v[k - 1] + v[k]) / 2.0;
  };
  const double med = median_of(x);
  std::vector<double> dev(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) dev[i] = std::abs(x[i] - med);
  const double mad = median_of(dev);
  return std::max(scale * mad, floor_sigma);
}

// Normalized cross-scale affinity weights: w(i) is the total RBF affinity of
// scale i to all other scales, normalized so the weights sum to one. The
// diagonal i = j is excluded from both sums.
inline std::vector<double> rbf_weights(const std::vector<double>& x,
                                       double sigma) {
  if (sigma <= 0.0) fail(ErrorCode::validation, "rbf_weights: sigma <= 0");
  const std::size_t L = x.size();
  std::vector<double> w(L, 0.0);
  double total = 0.0;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < L; ++j) {
      if (j == i) continue;
      const double d = x[i] - x[j];
      w[i] += std::exp(-d * d * inv);
    }
    total += w[i];
  }
  for (std::size_t i = 0; i < L; ++i) w[i] /= total;
  return w;
}

// Scale-wise aggregation: per snippet, a MAD-adapted RBF weighting of the L
// per-scale scores. Convex combination, so outputs stay inside the input
// range.
inline std::vector<double> aggregate_scales(const Tensor<double>& tracks,
                                            const RefineConfig& cfg) {
  std::vector<double> out(tracks.cols, 0.0);
  std::vector<double> col(tracks.rows);
  for (std::size_t t = 0; t < tracks.cols; ++t) {
    for (std::size_t i = 0; i < tracks.rows; ++i) col[i] = tracks.at(i, t);
    const double sigma = mad_bandwidth(col, cfg.mad_scale, cfg.sigma_floor);
    const std::vector<double> w = rbf_weights(col, sigma);
    double s = 0.0;
    for (std::size_t i = 0; i < col.size(); ++i) s += w[i] * col[i];
    out[t] = s;
  }
  return out;
}

// Plain per-snippet mean across scales; the aggregation used when the
// refinement module is disabled.
inline std::vector<double> mean_scales(const Tensor<double>& tracks) {
  std::vector<double> out(tracks.cols, 0.0);
  for (std::size_t t = 0; t < tracks.cols; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < tracks.rows; ++i) s += tracks.at(i, t);
    out[t] = s / static_cast<double>(tracks.rows);
  }
  return out;
}

namespace detail {

struct Run {
  std::size_t start, end;  // half-open
};

inline std::vector<Run> binarize_runs(const std::vector<double>& scores,
                                      double threshold) {
  std::vector<Run> runs;
  std::size_t i = 0;
  while (i < scores.size()) {
    if (scores[i] >= threshold) {
      std::size_t j = i;
      while (j < scores.size() && scores[j] >= threshold) ++j;
      runs.push_back(Run{i, j});
      i = j;
    } else {
      ++i;
    }
  }
  return runs;
}

inline std::vector<Run> merge_and_filter(std::vector<Run> runs,
                                         std::size_t max_gap,
                                         std::size_t min_len) {
  std::vector<Run> merged;
  for (const Run& r : runs) {
    if (!merged.empty() && r.start - merged.back().end <= max_gap)
      merged.back().end = r.end;
    else
      merged.push_back(r);
  }
  std::vector<Run> kept;
  for (const Run& r : merged)
    if (r.end - r.start >= min_len) kept.push_back(r);
  return kept;
}

}  // namespace detail

// Temporal refinement: binarize, merge nearby runs, drop short ones, then
// emit a plateau mask of ones with Gaussian tapers just outside each
// boundary (truncated at 3 sigma). Centers give strong supervision,
// boundaries weak.
inline std::vector<double> temporal_refine(const std::vector<double>& scores,
                                           const RefineConfig& cfg) {
  cfg.validate();
  const auto runs = detail::merge_and_filter(
      detail::binarize_runs(scores, cfg.threshold), cfg.max_gap, cfg.min_len);
  std::vector<double> out(scores.size(), 0.0);
  const double reach = 3.0 * cfg.sigma_b;
  for (const auto& r : runs) {
    for (std::size_t t = r.start; t < r.end; ++t) out[t] = 1.0;
    const double denom = 2.0 * cfg.sigma_b * cfg.sigma_b;
    for (std::size_t t = 0; t < scores.size(); ++t) {
      if (t >= r.start && t < r.end) continue;
      const double dist = t < r.start
                              ? static_cast<double>(r.start - t)
                              : static_cast<double>(t - (r.end - 1));
      if (dist > reach) continue;
      out[t] = std::max(out[t], std::exp(-dist * dist / denom));
    }
  }
  return out;
}

// Surviving-run extraction used by property tests (the binary skeleton of a
// refined track is exactly its value==1 plateau).
inline std::vector<detail::Run> refined_segments(
    const std::vector<double>& track) {
  std::vector<detail::Run> runs;
  std::size_t i = 0;
  while (i < track.size()) {
    if (track[i] == 1.0) {
      std::size_t j = i;
      while (j < track.size() && track[j] == 1.0) ++j;
      runs.push_back(detail::Run{i, j});
      i = j;
    } else {
      ++i;
    }
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Pseudo-track persistence: TSV of snippet_index, pseudo_b, pseudo_c.
// ---------------------------------------------------------------------------

inline void write_pseudo_tracks(const std::string& path,
                                const std::vector<double>& pseudo_b,
                                const std::vector<double>& pseudo_c) {
  if (pseudo_b.size() != pseudo_c.size())
    fail(ErrorCode::shape_mismatch, "pseudo tracks: length mismatch");
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorCode::io, "cannot open for write: " + path);
  char buf[96];
  for (std::size_t t = 0; t < pseudo_b.size(); ++t) {
    std::snprintf(buf, sizeof(buf), "%zu\t%.17g\t%.17g\n", t, pseudo_b[t],
                  pseudo_c[t]);
    os << buf;
  }
  if (!os) fail(ErrorCode::io, "write failed: " + path);
}

inline std::pair<std::vector<double>, std::vector<double>> read_pseudo_tracks(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::io, "cannot open: " + path);
  std::vector<double> pb, pc;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t idx;
    double b, c;
    if (std::sscanf(line.c_str(), "%zu\t%lg\t%lg", &idx, &b, &c) != 3)
      fail(ErrorCode::parse, "pseudo tracks: bad line in " + path);
    pb.push_back(b);
    pc.push_back(c);
  }
  return {std::move(pb), std::move(pc)};
}

}  // namespace cplvad
