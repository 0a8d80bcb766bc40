#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cplvad/errors.hpp"
#include "cplvad/rng.hpp"
#include "cplvad/tensor.hpp"

namespace cplvad {

// One video: n_raw x d snippet embeddings, the video-level label set and,
// when available, per-snippet ground-truth category ids (evaluation only).
struct FeatureSequence {
  std::string video_id;
  Tensor<float> features;        // n_raw x d
  std::vector<int> video_labels; // sorted unique category ids, 0 = normal
  std::vector<int> gt_frames;    // empty when absent
  bool has_gt = false;

  bool is_normal() const {
    return video_labels.size() == 1 && video_labels[0] == 0;
  }
};

struct ManifestEntry {
  std::string video_id;
  std::string feature_path;
  std::vector<int> labels;
  std::string gt_path;  // empty = none
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::size_t d = 0;
  std::size_t num_categories = 0;  // M
  std::string base_dir;            // directory of the manifest file
};

struct SynthConfig {
  std::size_t num_videos = 60;
  std::size_t d = 32;
  std::size_t num_categories = 7;  // M, including normal
  std::size_t n_raw_min = 160;
  std::size_t n_raw_max = 320;
  double anomaly_ratio = 0.5;
  double shift_magnitude = 3.0;
  std::size_t seg_len_min = 20;
  std::size_t seg_len_max = 60;
  std::size_t ramp_width = 8;  // raised-cosine ramp, snippets per side
  std::uint64_t seed = 7;

  void validate() const {
    if (num_categories < 2)
      fail(ErrorCode::validation, "synth: M must be at least 2");
    if (d < 1 || num_videos < 1)
      fail(ErrorCode::validation, "synth: d and num_videos must be positive");
    if (anomaly_ratio < 0.0 || anomaly_ratio > 1.0)
      fail(ErrorCode::validation, "synth: anomaly ratio outside [0,1]");
    if (n_raw_min < 1 || n_raw_min > n_raw_max)
      fail(ErrorCode::validation, "synth: bad n_raw range");
    if (seg_len_min < 1 || seg_len_min > seg_len_max)
      fail(ErrorCode::validation, "synth: bad segment length range");
  }
};

// ---------------------------------------------------------------------------
// Feature file: magic "CPLF", u32 version=1, u32 n_raw, u32 d, then
// n_raw*d float32 values, row-major, little-endian.
// ---------------------------------------------------------------------------

constexpr std::uint32_t kFeatureFileVersion = 1;

inline void write_features(const std::string& path,
                           const FeatureSequence& seq) {
  if (!seq.features.all_finite())
    fail(ErrorCode::non_finite, "write_features: non-finite entries");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::io, "cannot open for write: " + path);
  os.write("CPLF", 4);
  const std::uint32_t version = kFeatureFileVersion;
  const auto n = static_cast<std::uint32_t>(seq.features.rows);
  const auto d = static_cast<std::uint32_t>(seq.features.cols);
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&n), 4);
  os.write(reinterpret_cast<const char*>(&d), 4);
  os.write(reinterpret_cast<const char*>(seq.features.v.data()),
           static_cast<std::streamsize>(seq.features.size() * sizeof(float)));
  if (!os) fail(ErrorCode::io, "write failed: " + path);
}

inline Tensor<float> read_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::io, "cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CPLF", 4) != 0)
    fail(ErrorCode::bad_magic, "feature file: bad magic in " + path);
  std::uint32_t version = 0, n = 0, d = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&n), 4);
  is.read(reinterpret_cast<char*>(&d), 4);
  if (!is)
    fail(ErrorCode::truncated_payload, "feature file: truncated header");
  if (version != kFeatureFileVersion)
    fail(ErrorCode::version_mismatch,
         "feature file: version " + std::to_string(version));
  if (n == 0 || d == 0 ||
      static_cast<std::uint64_t>(n) * d > (std::uint64_t{1} << 31))
    fail(ErrorCode::dimension_overflow,
         "feature file: implausible dims " + std::to_string(n) + "x" +
             std::to_string(d));
  Tensor<float> out(n, d);
  const std::streamsize expected =
      static_cast<std::streamsize>(out.size() * sizeof(float));
  is.read(reinterpret_cast<char*>(out.v.data()), expected);
  if (is.gcount() != expected)
    fail(ErrorCode::truncated_payload,
         "feature file: payload has " + std::to_string(is.gcount()) +
             " bytes, expected " + std::to_string(expected));
  is.peek();
  if (!is.eof())
    fail(ErrorCode::truncated_payload,
         "feature file: trailing bytes after payload");
  return out;
}

// ---------------------------------------------------------------------------
// Manifest TSV: video_id <TAB> feature_path <TAB> comma-separated labels
// <TAB> gt_path or "-". GT file: one category id per line.
// ---------------------------------------------------------------------------

inline std::vector<int> parse_label_list(const std::string& s,
                                         const std::string& video_id) {
  std::vector<int> labels;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      labels.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      fail(ErrorCode::parse, "manifest: bad label '" + tok + "' for video " +
                                 video_id);
    }
  }
  if (labels.empty())
    fail(ErrorCode::parse, "manifest: empty label list for video " + video_id);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

inline void write_manifest(const std::string& path,
                           const DatasetManifest& manifest) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorCode::io, "cannot open for write: " + path);
  for (const auto& e : manifest.entries) {
    os << e.video_id << '\t' << e.feature_path << '\t';
    for (std::size_t i = 0; i < e.labels.size(); ++i) {
      if (i) os << ',';
      os << e.labels[i];
    }
    os << '\t' << (e.gt_path.empty() ? "-" : e.gt_path) << '\n';
  }
  if (!os) fail(ErrorCode::io, "write failed: " + path);
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::io, "cannot open: " + path);
  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, '\t')) cols.push_back(tok);
    if (cols.size() != 4)
      fail(ErrorCode::parse,
           "manifest: expected 4 tab-separated columns, got " +
               std::to_string(cols.size()));
    ManifestEntry e;
    e.video_id = cols[0];
    e.feature_path = cols[1];
    e.labels = parse_label_list(cols[2], e.video_id);
    e.gt_path = (cols[3] == "-") ? "" : cols[3];
    if (!seen.insert(e.video_id).second)
      fail(ErrorCode::validation, "manifest: duplicate video_id " + e.video_id);
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::vector<int> read_gt_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::io, "cannot open: " + path);
  std::vector<int> gt;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      gt.push_back(std::stoi(line));
    } catch (const std::exception&) {
      fail(ErrorCode::parse, "gt file: bad line '" + line + "' in " + path);
    }
  }
  return gt;
}

inline void write_gt_file(const std::string& path, const std::vector<int>& gt) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorCode::io, "cannot open for write: " + path);
  for (int g : gt) os << g << '\n';
  if (!os) fail(ErrorCode::io, "write failed: " + path);
}

// Loads every sequence referenced by a manifest. Paths resolve relative to
// the manifest's directory. num_categories = 0 derives M from the labels
// (max id + 1, at least 2).
inline std::vector<FeatureSequence> load_dataset(
    const std::string& manifest_path, std::size_t num_categories = 0) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(manifest_path).parent_path();
  auto entries = read_manifest(manifest_path);
  std::size_t M = num_categories;
  if (M == 0) {
    int max_label = 1;
    for (const auto& e : entries)
      for (int l : e.labels) max_label = std::max(max_label, l);
    M = static_cast<std::size_t>(max_label) + 1;
  }
  std::vector<FeatureSequence> seqs;
  std::size_t d = 0;
  for (const auto& e : entries) {
    for (int l : e.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= M)
        fail(ErrorCode::validation,
             "dataset: label id " + std::to_string(l) + " out of range for " +
                 "video " + e.video_id + " (M=" + std::to_string(M) + ")");
    }
    FeatureSequence seq;
    seq.video_id = e.video_id;
    seq.features = read_features((base / e.feature_path).string());
    if (d == 0) d = seq.features.cols;
    if (seq.features.cols != d)
      fail(ErrorCode::validation,
           "dataset: feature dim mismatch for video " + e.video_id + ": " +
               std::to_string(seq.features.cols) + " vs " + std::to_string(d));
    seq.video_labels = e.labels;
    if (!e.gt_path.empty()) {
      seq.gt_frames = read_gt_file((base / e.gt_path).string());
      seq.has_gt = true;
      if (seq.gt_frames.size() != seq.features.rows)
        fail(ErrorCode::validation,
             "dataset: gt length mismatch for video " + e.video_id);
    }
    seqs.push_back(std::move(seq));
  }
  return seqs;
}

// ---------------------------------------------------------------------------
// Synthetic dataset generator. Normal snippets come from a unit Gaussian
// cloud; abnormal videos carry 1-3 non-overlapping planted segments shifted
// along a category direction under a raised-cosine ramp, so segment
// boundaries are genuinely ambiguous. Output bytes are a pure function of
// the config.
// ---------------------------------------------------------------------------

inline DatasetManifest generate_synthetic_dataset(const SynthConfig& cfg,
                                                  const std::string& out_dir) {
  namespace fs = std::filesystem;
  cfg.validate();
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "features", ec);
  fs::create_directories(fs::path(out_dir) / "gt", ec);
  if (ec) fail(ErrorCode::io, "cannot create output directory " + out_dir);

  // Category shift directions, one unit vector per abnormal category.
  Rng dir_rng(mix_seed(cfg.seed, 0xD16));
  std::vector<std::vector<double>> dirs(cfg.num_categories);
  for (std::size_t m = 1; m < cfg.num_categories; ++m) {
    std::vector<double> u(cfg.d);
    double nrm = 0.0;
    for (double& x : u) {
      x = dir_rng.gaussian();
      nrm += x * x;
    }
    nrm = std::sqrt(nrm);
    for (double& x : u) x /= nrm;
    dirs[m] = std::move(u);
  }

  const auto num_abnormal = static_cast<std::size_t>(
      std::llround(cfg.anomaly_ratio * static_cast<double>(cfg.num_videos)));

  DatasetManifest manifest;
  manifest.d = cfg.d;
  manifest.num_categories = cfg.num_categories;
  manifest.base_dir = out_dir;

  for (std::size_t v = 0; v < cfg.num_videos; ++v) {
    Rng rng(mix_seed(cfg.seed, v));
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "video_%03zu", v);
    FeatureSequence seq;
    seq.video_id = idbuf;
    const auto n_raw = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(cfg.n_raw_min),
        static_cast<std::int64_t>(cfg.n_raw_max)));
    seq.features = Tensor<float>(n_raw, cfg.d);
    for (auto& x : seq.features.v) x = static_cast<float>(rng.gaussian());
    seq.gt_frames.assign(n_raw, 0);
    seq.has_gt = true;

    const bool abnormal = v < num_abnormal;
    std::set<int> labels;
    if (abnormal) {
      const auto num_segments = static_cast<std::size_t>(rng.uniform_int(1, 3));
      std::vector<std::pair<std::size_t, std::size_t>> placed;
      for (std::size_t s = 0; s < num_segments; ++s) {
        const int cat = static_cast<int>(rng.uniform_int(
            1, static_cast<std::int64_t>(cfg.num_categories) - 1));
        std::size_t len = static_cast<std::size_t>(rng.uniform_int(
            static_cast<std::int64_t>(cfg.seg_len_min),
            static_cast<std::int64_t>(cfg.seg_len_max)));
        len = std::min(len, n_raw);
        bool ok = false;
        std::size_t start = 0;
        for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
          start = static_cast<std::size_t>(
              rng.uniform_int(0, static_cast<std::int64_t>(n_raw - len)));
          ok = true;
          for (const auto& p : placed)
            if (start < p.second && p.first < start + len) ok = false;
        }
        if (!ok && s > 0) continue;  // keep at least one segment
        placed.emplace_back(start, start + len);
        labels.insert(cat);

        const std::size_t ramp = std::min(cfg.ramp_width, len / 2);
        for (std::size_t j = 0; j < len; ++j) {
          double env = 1.0;
          if (j < ramp)
            env = 0.5 * (1.0 - std::cos(3.14159265358979323846 *
                                        static_cast<double>(j + 1) /
                                        static_cast<double>(ramp + 1)));
          else if (len - 1 - j < ramp)
            env = 0.5 * (1.0 - std::cos(3.14159265358979323846 *
                                        static_cast<double>(len - j) /
                                        static_cast<double>(ramp + 1)));
          const std::size_t t = start + j;
          for (std::size_t c = 0; c < cfg.d; ++c)
            seq.features.at(t, c) += static_cast<float>(
                cfg.shift_magnitude * env * dirs[static_cast<std::size_t>(cat)][c]);
          seq.gt_frames[t] = cat;
        }
      }
    }
    if (labels.empty()) labels.insert(0);
    seq.video_labels.assign(labels.begin(), labels.end());

    const std::string feat_rel = std::string("features/") + idbuf + ".cplf";
    const std::string gt_rel = std::string("gt/") + idbuf + ".gt";
    write_features((fs::path(out_dir) / feat_rel).string(), seq);
    write_gt_file((fs::path(out_dir) / gt_rel).string(), seq.gt_frames);
    manifest.entries.push_back(
        ManifestEntry{seq.video_id, feat_rel, seq.video_labels, gt_rel});
  }

  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), manifest);

  // Category-name table used only for report labeling.
  std::ofstream cats((fs::path(out_dir) / "categories.tsv").string(),
                     std::ios::trunc);
  cats << 0 << '\t' << "normal" << '\n';
  for (std::size_t m = 1; m < cfg.num_categories; ++m)
    cats << m << '\t' << "category_" << m << '\n';
  return manifest;
}

}  // namespace cplvad
