#pragma once

// Dataset profiles, the key-value run configuration, and the subcommands
// that carry segments from raw files to metrics.
//
// Work directory layout:
//   preprocessed/<stem>.eegs
//   features/<stem>.temporal.eegf  (L x F)
//   features/<stem>.scm.eegf       (H*N x N)
//   features/<stem>.tangent.eegf   (1 x S, against the training references)
//   features/split.json
//   models/<variant>.ckpt, models/<variant>.log.jsonl
//   models/grid.csv                (rank grid search only)
//   metrics/<variant>.json
//   ablation.csv

#include "spdbci/data.hpp"
#include "spdbci/model.hpp"
#include "spdbci/signal.hpp"
#include "spdbci/spd.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace spdbci::pipeline {

/// Acquisition and task constants of one dataset.
struct Profile {
  std::string name;
  double fs = 200.0;
  std::vector<signal::BandSpec> bands;
  double seconds = 8.0;
  Eigen::Index channels = 62;
  Eigen::Index rank = 48;
  int classes = 3;
  model::OutputActivation output = model::OutputActivation::Softmax;
  model::LossKind loss = model::LossKind::CrossEntropy;
  model::Regularizer regularizer = model::Regularizer::BatchNorm;

  bool regression() const { return loss == model::LossKind::MeanSquaredError; }
};

/// seed, seed-vig, bci2a, bci2b, synthetic.
Profile builtin_profile(const std::string& name);
std::vector<std::string> profile_names();

enum class RankMode { Fixed, Grid };

struct Config {
  Profile profile;
  std::filesystem::path input_dir;
  std::filesystem::path work_dir;
  std::uint64_t seed = 1;
  int jobs = 1;
  bool continue_on_error = false;

  signal::PreprocessOptions preprocess;

  RankMode rank_mode = RankMode::Fixed;
  bool shared_filter = false;
  double ridge = 0.0;
  spd::ReferencePolicy reference = spd::ReferencePolicy::BatchMean;

  double test_fraction = 0.2;
  double validation_fraction = 0.1;

  model::ArchitectureConfig architecture;  ///< sizes; feature widths filled in later
  model::TrainingOptions training;
  std::vector<std::string> variants{"fused"};

  // synthetic data generation
  std::string synth_task = "mixed";
  int synth_per_class = 40;
  double synth_noise = 0.2;

  // CSV ingestion
  std::filesystem::path ingest_csv;
  std::filesystem::path ingest_manifest;
};

/// Parses "key = value" lines ('#' starts a comment). Relative paths are
/// resolved against base_dir. The profile key is applied first so later keys
/// override its constants regardless of order.
Config parse_config(const std::string& text, const std::filesystem::path& base_dir);
Config load_config(const std::filesystem::path& path);

/// Architecture for a named variant: fused, attention, soft-attention,
/// independent-sigmoid, concatenation, temporal-only, spatial-only.
model::ArchitectureConfig architecture_for(const Config& config, const std::string& variant,
                                           Eigen::Index temporal_features, Eigen::Index spatial_features);

/// Temporal feature sequence and per-band covariances of one preprocessed
/// segment.
struct SegmentFeatures {
  Matrix temporal;
  std::vector<spd::SpdMatrix> covariances;
  Label label;
};

SegmentFeatures extract_features(const EegSegment& segment, const signal::FilterBank& bank);

/// Fits the per-band PCA and reference means on the training covariances.
spd::TangentSpaceMapper fit_mapper(const Config& config, const std::vector<SegmentFeatures>& train, Eigen::Index rank);

/// Tangent vectors for a set of segments. BatchMean recomputes the
/// reference on ceil(n / batch_size) consecutive groups of near-equal size.
Matrix tangent_features(const spd::TangentSpaceMapper& mapper, const std::vector<SegmentFeatures>& items,
                        spd::ReferencePolicy policy, int batch_size);

model::Dataset assemble(const std::vector<SegmentFeatures>& items, const Matrix& tangent, bool regression);

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Seeded shuffle of the sorted stems, then the first test_fraction (at
/// least one) for testing.
Split make_split(std::vector<std::string> stems, double test_fraction, std::uint64_t seed);

void cmd_synth(const Config& config);
void cmd_ingest(const Config& config);
void cmd_preprocess(const Config& config);
void cmd_features(const Config& config);
void cmd_train(const Config& config);
void cmd_evaluate(const Config& config);
void cmd_ablate(const Config& config);

/// Dispatches by subcommand name; throws Usage for unknown names.
void run(const std::string& command, const Config& config);

std::vector<std::string> command_names();

}  // namespace spdbci::pipeline
