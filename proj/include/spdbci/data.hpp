#pragma once

// On-disk formats, synthetic generators and CSV ingestion.
//
// Segment file (little-endian):
//   "EEGS"  u32 version=1  u32 N  u32 T  f64 fs
//   u32 label_kind (0 none, 1 class, 2 real)  8-byte label (i64 or f64)
//   f64 samples[N*T], row-major (channel by channel)
//
// Feature file (little-endian):
//   "EEGF"  u32 version=1  u32 kind  u32 rows  u32 cols
//   u32 label_kind  8-byte label
//   f64 values[rows*cols], row-major
// kind 1: temporal sequence (L x F); 2: tangent vector (1 x S);
// 3: covariance stack, one N x N block per band stacked vertically.

#include "spdbci/signal.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spdbci::data {

inline constexpr std::size_t kSegmentHeaderBytes = 36;

void write_segment(const std::filesystem::path& path, const EegSegment& segment);
EegSegment read_segment(const std::filesystem::path& path);

enum class FeatureKind : std::uint32_t { Temporal = 1, Tangent = 2, CovarianceStack = 3 };

struct FeatureFile {
  FeatureKind kind = FeatureKind::Temporal;
  Matrix values;
  Label label;
};

void write_features(const std::filesystem::path& path, const FeatureFile& file);
FeatureFile read_features(const std::filesystem::path& path);

/// Class k segments are X = A_k G (+ noise * G') with A_k the Cholesky
/// factor of covariances[k] and G unit Gaussian. Segments cycle through the
/// classes: index i has class i % K.
struct SynthSpdSpec {
  std::vector<Matrix> covariances;
  int per_class = 100;
  Eigen::Index samples = 500;
  double fs = 200.0;
  double noise = 0.0;
  std::uint64_t seed = 1;
};

std::vector<EegSegment> synth_spd_classes(const SynthSpdSpec& spec);

struct Tone {
  double freq_hz = 10.0;
  double amplitude = 1.0;
};

/// Per class, a sum of tones with independent random phases on every
/// channel, plus white Gaussian noise.
struct SynthBandSpec {
  std::vector<std::vector<Tone>> classes;
  int per_class = 100;
  Eigen::Index channels = 4;
  Eigen::Index samples = 800;
  double fs = 200.0;
  double noise = 0.2;
  std::uint64_t seed = 1;
};

std::vector<EegSegment> synth_band_signals(const SynthBandSpec& spec);

/// Four classes, label = 2a + b. Bit a sets the sign of the correlation
/// between paired channels (equal variances, so per-channel band powers
/// do not depend on it). Bit b places a tone burst with random per-channel
/// phases in the first or second half of the segment (same total power
/// either way, so the covariance does not depend on it).
struct SynthMixedSpec {
  int per_class = 100;
  Eigen::Index channels = 4;
  Eigen::Index samples = 800;
  double fs = 200.0;
  double correlation = 0.6;
  Tone burst{10.0, 1.5};
  double noise = 0.0;
  std::uint64_t seed = 1;
};

std::vector<EegSegment> synth_mixed(const SynthMixedSpec& spec);

/// Key-value manifest describing a CSV recording (channels as columns,
/// one header row).
///   fs = 1000
///   channels = Fz, Cz, Pz        (optional: default all but the label)
///   label_column = label         (optional)
///   label_kind = class|real|none (default class when a label column is set)
///   decimate = 5                 (optional, default 1)
///   segment_seconds = 4
struct CsvManifest {
  double fs = 0.0;
  std::vector<std::string> channels;
  std::optional<std::string> label_column;
  std::string label_kind = "class";
  int decimate = 1;
  double segment_seconds = 0.0;
};

CsvManifest read_manifest(const std::filesystem::path& path);

/// Reads the CSV, decimates (anti-aliased) and cuts consecutive segments of
/// segment_seconds; a trailing remainder is dropped. Each segment takes the
/// label of its first row and the label must be constant within it.
std::vector<EegSegment> ingest_csv(const std::filesystem::path& csv, const CsvManifest& manifest);

}  // namespace spdbci::data
