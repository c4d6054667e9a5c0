#pragma once

// Trainable building blocks with hand-written backward passes. Layers cache
// what they need during forward() and consume it in the next backward();
// gradients accumulate into Parameter::grad until zero_grad().

#include "spdbci/signal.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace spdbci::nn {

using Rng = std::mt19937_64;

struct Parameter {
  Matrix value;
  Matrix grad;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value = Matrix::Zero(rows, cols);
    grad = Matrix::Zero(rows, cols);
  }
};

using ParameterList = std::vector<std::pair<std::string, Parameter*>>;

void zero_grad(const ParameterList& params);

/// Global L2 norm over every gradient.
double gradient_norm(const ParameterList& params);

/// Rescales gradients so the global norm is at most max_norm. Returns the
/// norm before clipping.
double clip_gradients(const ParameterList& params, double max_norm);

enum class Activation { Identity, Tanh, LeakyRelu, Sigmoid, Softmax };

Matrix activate(Activation act, const Matrix& z, double slope = 0.3);

/// dL/dz from dL/dy given z and y = act(z).
Matrix activation_backward(Activation act, const Matrix& z, const Matrix& y, const Matrix& dy,
                           double slope = 0.3);

Matrix softmax_rows(const Matrix& z);
Matrix sigmoid(const Matrix& z);

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Matrix& m, Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

/// Fully connected layer over row-major batches: y = act(x W^T + b).
class Dense {
 public:
  Dense() = default;
  Dense(Eigen::Index in, Eigen::Index out, Activation act, double slope = 0.3);

  void initialize(Rng& rng);
  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);
  void collect(const std::string& prefix, ParameterList& out);

  Eigen::Index inputs() const { return weight.value.cols(); }
  Eigen::Index outputs() const { return weight.value.rows(); }

  Parameter weight;  // out x in
  Parameter bias;    // 1 x out
  Activation activation = Activation::Identity;
  double slope = 0.3;

 private:
  Matrix x_, z_, y_;
};

/// Standard LSTM (sigmoid input/forget/output gates, tanh candidate and cell
/// output) run from a zero state. Gate rows are stacked [input, forget,
/// output, candidate] in a single 4H x (in + H) weight.
class Lstm {
 public:
  Lstm() = default;
  Lstm(Eigen::Index in, Eigen::Index hidden);

  /// Glorot per gate matrix, forget-gate bias +1.
  void initialize(Rng& rng);

  /// xs[t] is B x in; returns the L hidden states, each B x H.
  std::vector<Matrix> forward(const std::vector<Matrix>& xs);
  /// dhs[t] is dL/dh_t; returns dL/dx_t.
  std::vector<Matrix> backward(const std::vector<Matrix>& dhs);
  void collect(const std::string& prefix, ParameterList& out);

  Eigen::Index inputs() const { return in_; }
  Eigen::Index hidden() const { return hidden_; }

  Parameter weight;
  Parameter bias;

 private:
  struct Step {
    Matrix input;  // [x_t, h_{t-1}]
    Matrix i, f, o, g;
    Matrix c_prev, c, tanh_c;
  };
  Eigen::Index in_ = 0;
  Eigen::Index hidden_ = 0;
  std::vector<Step> steps_;
};

/// Summed: one score per step, the sum of the components of
/// u_t = tanh(W h_t + b), softmax over steps. PerComponent: a separate
/// softmax over steps for every component of u_t.
enum class AttentionMode { Summed, PerComponent };

/// Softmax over steps of the scores derived from the projections u[t]
/// (each B x H). Returns alpha per step as in Attention::weights().
std::vector<Matrix> attention_weights(const std::vector<Matrix>& u, AttentionMode mode);

class Attention {
 public:
  Attention() = default;
  Attention(Eigen::Index hidden, AttentionMode mode);

  void initialize(Rng& rng);
  /// Context v = sum_t alpha_t * h_t, B x H.
  Matrix forward(const std::vector<Matrix>& hs);
  std::vector<Matrix> backward(const Matrix& dv);
  void collect(const std::string& prefix, ParameterList& out);

  /// alpha per step: B x 1 (Summed) or B x H (PerComponent).
  const std::vector<Matrix>& weights() const { return alpha_; }
  AttentionMode mode() const { return mode_; }

  Parameter weight;  // H x H
  Parameter bias;    // 1 x H

 private:
  AttentionMode mode_ = AttentionMode::Summed;
  std::vector<Matrix> hs_, u_, alpha_;
};

/// Per-feature batch standardization with learned scale and shift.
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(Eigen::Index features, double momentum = 0.99, double epsilon = 1e-3);

  Matrix forward(const Matrix& x, bool training);
  Matrix backward(const Matrix& dy);
  void collect(const std::string& prefix, ParameterList& out);
  /// Running statistics (not trained, but checkpointed).
  void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, Matrix*>>& out);

  Parameter gamma;
  Parameter beta;
  Matrix running_mean;
  Matrix running_var;

 private:
  double momentum_ = 0.99;
  double epsilon_ = 1e-3;
  bool training_ = false;
  Matrix xhat_, inv_std_;
};

/// Inverted dropout: kept units are scaled by 1 / (1 - rate) in training;
/// identity in evaluation.
class Dropout {
 public:
  Dropout() = default;
  explicit Dropout(double rate);

  Matrix forward(const Matrix& x, bool training, Rng& rng);
  Matrix backward(const Matrix& dy) const;
  double rate() const { return rate_; }

 private:
  double rate_ = 0.0;
  Matrix mask_;
};

struct LossResult {
  double value = 0.0;
  Matrix grad;  ///< dL/d(input), already divided by the batch size
};

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean categorical cross-entropy of softmax(logits).
LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

/// Mean binary cross-entropy of sigmoid(logits), logits B x 1.
LossResult sigmoid_binary_cross_entropy(const Matrix& logits, std::span<const double> targets);

/// Mean over all entries of (prediction - target)^2.
LossResult mean_squared_error(const Matrix& prediction, const Matrix& target);

/// Plain forms on probabilities, floored at kProbabilityFloor.
double cross_entropy(const Matrix& probabilities, const Matrix& one_hot);
double binary_cross_entropy(double target, double probability);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moment buffers follow the order of the parameter
/// list passed to the first step().
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions options) : options_(options) {}

  void step(const ParameterList& params);

  std::int64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  void restore(std::int64_t steps, std::vector<Matrix> m, std::vector<Matrix> v);

 private:
  AdamOptions options_;
  std::int64_t steps_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Stacks L matrices of B x D into (L*B) x D, step-major.
Matrix stack_steps(const std::vector<Matrix>& steps);
std::vector<Matrix> unstack_steps(const Matrix& stacked, std::size_t steps);

}  // namespace spdbci::nn
