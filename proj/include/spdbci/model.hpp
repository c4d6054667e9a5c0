#pragma once

// Two-stream network: an LSTM-attention temporal stream over feature
// sequences, a fully connected spatial stream over tangent vectors, and a
// fusion head that reweights each embedding by a learned score.

#include "spdbci/checkpoint.hpp"
#include "spdbci/metrics.hpp"
#include "spdbci/neural.hpp"

#include <functional>
#include <string>
#include <vector>

namespace spdbci::model {

enum class OutputActivation { Softmax, Sigmoid, Linear };
enum class LossKind { CrossEntropy, BinaryCrossEntropy, MeanSquaredError };
enum class Regularizer { Dropout, BatchNorm };

/// Attention: alpha = softmax of the two encoder scores, embeddings scaled
/// by (1 + alpha). IndependentSigmoid: alpha = sigmoid(score) per stream,
/// scale (1 + alpha). SoftAttention: softmax alpha, scale alpha.
/// Concatenation: no reweighting.
enum class FusionMode { Attention, IndependentSigmoid, SoftAttention, Concatenation };
enum class StreamMode { Fused, TemporalOnly, SpatialOnly };

const char* to_string(OutputActivation v);
const char* to_string(LossKind v);
const char* to_string(Regularizer v);
const char* to_string(FusionMode v);
const char* to_string(StreamMode v);
const char* to_string(nn::AttentionMode v);

OutputActivation parse_output_activation(const std::string& s);
LossKind parse_loss(const std::string& s);
Regularizer parse_regularizer(const std::string& s);
FusionMode parse_fusion(const std::string& s);
StreamMode parse_streams(const std::string& s);
nn::AttentionMode parse_attention(const std::string& s);

struct ArchitectureConfig {
  Eigen::Index temporal_features = 0;  ///< F per window
  Eigen::Index spatial_features = 0;   ///< tangent vector length
  int classes = 2;

  int lstm_layers = 3;
  Eigen::Index lstm_hidden = 256;
  Regularizer regularizer = Regularizer::Dropout;
  std::vector<double> lstm_dropout{0.2, 0.1, 0.1};
  double leaky_slope = 0.3;
  nn::AttentionMode attention = nn::AttentionMode::Summed;
  Eigen::Index temporal_embedding = 64;

  std::vector<Eigen::Index> spatial_units{512, 64};
  double spatial_dropout = 0.5;

  Eigen::Index encoder_hidden = 32;
  Eigen::Index fusion_units = 128;
  OutputActivation output = OutputActivation::Softmax;
  LossKind loss = LossKind::CrossEntropy;
  FusionMode fusion = FusionMode::Attention;
  StreamMode streams = StreamMode::Fused;

  /// Output units: the class count for softmax, otherwise one.
  Eigen::Index outputs() const;
  bool classification() const { return loss != LossKind::MeanSquaredError; }
  bool uses_temporal() const { return streams != StreamMode::SpatialOnly; }
  bool uses_spatial() const { return streams != StreamMode::TemporalOnly; }

  /// Positive sizes and a valid activation/loss pairing.
  void validate() const;
};

std::string architecture_json(const ArchitectureConfig& config);
ArchitectureConfig architecture_from_json(const std::string& text);

struct Dataset {
  std::vector<Matrix> sequences;  ///< per sample, L x F
  Matrix spatial;                 ///< one tangent vector per row
  std::vector<int> classes;
  std::vector<double> targets;    ///< regression targets (or binary labels)

  std::size_t size() const;
  /// Row subset, used for train/validation/test splits.
  Dataset subset(std::span<const std::size_t> indices) const;
  void check(const ArchitectureConfig& config) const;
};

struct Batch {
  std::vector<Matrix> sequence;  ///< L steps, each B x F
  Matrix spatial;                ///< B x S
  std::vector<int> classes;
  std::vector<double> targets;

  Eigen::Index size() const;
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Per-stream fusion weights for the given encoder scores (each B x 1).
struct FusionWeights {
  Matrix temporal;  ///< alpha_t
  Matrix spatial;   ///< alpha_s
};
FusionWeights fusion_weights(FusionMode mode, const Matrix& temporal_score, const Matrix& spatial_score);

/// Multiplier applied to an embedding given its alpha.
double fusion_scale(FusionMode mode, double alpha);

class FusionNetwork {
 public:
  FusionNetwork() = default;
  explicit FusionNetwork(ArchitectureConfig config);

  /// Glorot weights, zero biases, forget-gate bias +1.
  void initialize(std::uint64_t seed);

  const ArchitectureConfig& config() const { return config_; }

  Matrix temporal_stream(const std::vector<Matrix>& sequence, bool training, nn::Rng& rng);
  Matrix spatial_stream(const Matrix& features, bool training, nn::Rng& rng);

  /// Output-layer values before the task activation. noise_seed drives the
  /// dropout masks when training.
  Matrix forward(const Batch& batch, bool training, std::uint64_t noise_seed);

  /// Task activation applied to forward() output.
  Matrix activate(const Matrix& raw) const;

  /// Loss of raw outputs from the last forward(); backpropagates into the
  /// parameter gradients (which are not zeroed first).
  double backward(const Batch& batch, const Matrix& raw);

  /// Loss only.
  double loss(const Batch& batch, const Matrix& raw) const;

  nn::ParameterList parameters();
  std::vector<std::pair<std::string, Matrix*>> buffers();

  /// Fusion weights from the last forward() (empty for single streams and
  /// concatenation).
  const FusionWeights& last_fusion() const { return fusion_; }

 private:
  nn::LossResult loss_result(const Batch& batch, const Matrix& raw) const;

  ArchitectureConfig config_;
  std::vector<nn::Lstm> lstm_;
  std::vector<nn::Dropout> lstm_dropout_;
  std::vector<nn::BatchNorm> lstm_norm_;
  nn::Attention attention_;
  nn::Dense temporal_fc_;
  std::vector<nn::Dense> spatial_fc_;
  std::vector<nn::Dropout> spatial_dropout_;
  nn::Dense encoder_t1_, encoder_t2_, encoder_s1_, encoder_s2_;
  nn::Dense fusion_fc_;
  nn::Dense output_;

  // forward caches
  std::size_t steps_ = 0;
  std::vector<Matrix> lstm_pre_act_;  // batch-norm output before leaky ReLU
  Matrix e_t_, e_s_;
  FusionWeights fusion_;
};

struct TrainingOptions {
  int epochs = 200;
  int batch_size = 32;
  nn::AdamOptions adam;
  double clip_norm = 5.0;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;    ///< mean training loss over the epoch's batches
  double metric = 0.0;  ///< training accuracy, or RMSE for regression
};

/// Minibatch Adam over shuffled data. Deterministic in seed. Throws
/// Numerical if the loss becomes non-finite.
std::vector<EpochRecord> train(FusionNetwork& net, nn::Adam& optimizer, const Dataset& data,
                               const TrainingOptions& options, std::uint64_t seed,
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Activated outputs in evaluation mode, one row per sample.
Matrix predict(FusionNetwork& net, const Dataset& data, int batch_size = 64);

/// Class decisions from activated outputs: argmax, or p >= 0.5 for one unit.
std::vector<int> decide(const Matrix& outputs);

struct Evaluation {
  bool classification = true;
  double accuracy = 0.0;
  double kappa = 0.0;
  metrics::Confusion confusion;
  double rmse = 0.0;
  double pcc = 0.0;
  std::vector<int> predicted_classes;
  std::vector<double> predicted_values;
};

Evaluation evaluate(FusionNetwork& net, const Dataset& data);

/// Parameters, running statistics and optimizer moments as named tensors.
void store(FusionNetwork& net, nn::Adam& optimizer, Checkpoint& ckpt);
/// Inverse of store(); shapes must match the network's configuration.
void load(FusionNetwork& net, nn::Adam& optimizer, const Checkpoint& ckpt);

}  // namespace spdbci::model
