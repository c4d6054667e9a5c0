#include "spdbci/neural.hpp"

#include "spdbci/error.hpp"

#include <algorithm>
#include <cmath>

namespace spdbci::nn {

namespace {

void require_cols(const Matrix& x, Eigen::Index cols, const char* what) {
  if (x.cols() != cols) {
    fail(ErrorKind::Shape, std::string(what) + ": expected " + std::to_string(cols) + " columns, got " +
                               std::to_string(x.cols()));
  }
}

Matrix add_bias(Matrix z, const Matrix& bias) {
  z.rowwise() += bias.row(0);
  return z;
}

}  // namespace

void zero_grad(const ParameterList& params) {
  for (const auto& [name, p] : params) p->grad.setZero();
}

double gradient_norm(const ParameterList& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_gradients(const ParameterList& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const auto& [name, p] : params) p->grad *= scale;
  }
  return norm;
}

Matrix softmax_rows(const Matrix& z) {
  Matrix out = z;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double top = z.row(r).maxCoeff();
    out.row(r) = (z.row(r).array() - top).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix sigmoid(const Matrix& z) {
  return z.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Matrix activate(Activation act, const Matrix& z, double slope) {
  switch (act) {
    case Activation::Identity: return z;
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::LeakyRelu: return z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    case Activation::Sigmoid: return sigmoid(z);
    case Activation::Softmax: return softmax_rows(z);
  }
  return z;
}

Matrix activation_backward(Activation act, const Matrix& z, const Matrix& y, const Matrix& dy, double slope) {
  switch (act) {
    case Activation::Identity: return dy;
    case Activation::Tanh: return (dy.array() * (1.0 - y.array().square())).matrix();
    case Activation::LeakyRelu:
      return dy.binaryExpr(z, [slope](double g, double v) { return v > 0.0 ? g : slope * g; });
    case Activation::Sigmoid: return (dy.array() * y.array() * (1.0 - y.array())).matrix();
    case Activation::Softmax: {
      // per row: y * (dy - <dy, y>)
      const Vector inner = (dy.array() * y.array()).rowwise().sum();
      return (y.array() * (dy.colwise() - inner).array()).matrix();
    }
  }
  return dy;
}

void glorot_uniform(Matrix& m, Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  }
}

// --- Dense ------------------------------------------------------------------

Dense::Dense(Eigen::Index in, Eigen::Index out, Activation act, double slope_)
    : activation(act), slope(slope_) {
  if (in <= 0 || out <= 0) fail(ErrorKind::Shape, "dense layer sizes must be positive");
  weight.resize(out, in);
  bias.resize(1, out);
}

void Dense::initialize(Rng& rng) {
  glorot_uniform(weight.value, inputs(), outputs(), rng);
  bias.value.setZero();
}

Matrix Dense::forward(const Matrix& x) {
  require_cols(x, inputs(), "dense input");
  x_ = x;
  z_ = add_bias(x * weight.value.transpose(), bias.value);
  y_ = activate(activation, z_, slope);
  return y_;
}

Matrix Dense::backward(const Matrix& dy) {
  const Matrix dz = activation_backward(activation, z_, y_, dy, slope);
  weight.grad.noalias() += dz.transpose() * x_;
  bias.grad += dz.colwise().sum();
  return dz * weight.value;
}

void Dense::collect(const std::string& prefix, ParameterList& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

// --- LSTM -------------------------------------------------------------------

Lstm::Lstm(Eigen::Index in, Eigen::Index hidden) : in_(in), hidden_(hidden) {
  if (in <= 0 || hidden <= 0) fail(ErrorKind::Shape, "LSTM sizes must be positive");
  weight.resize(4 * hidden, in + hidden);
  bias.resize(1, 4 * hidden);
}

void Lstm::initialize(Rng& rng) {
  for (int gate = 0; gate < 4; ++gate) {
    Matrix block(hidden_, in_ + hidden_);
    glorot_uniform(block, in_ + hidden_, hidden_, rng);
    weight.value.middleRows(gate * hidden_, hidden_) = block;
  }
  bias.value.setZero();
  bias.value.middleCols(hidden_, hidden_).setOnes();
}

std::vector<Matrix> Lstm::forward(const std::vector<Matrix>& xs) {
  const Eigen::Index h = hidden_;
  steps_.clear();
  steps_.reserve(xs.size());
  std::vector<Matrix> hs;
  hs.reserve(xs.size());
  if (xs.empty()) return hs;
  const Eigen::Index batch = xs.front().rows();
  Matrix h_prev = Matrix::Zero(batch, h);
  Matrix c_prev = Matrix::Zero(batch, h);
  for (const Matrix& x : xs) {
    require_cols(x, in_, "LSTM input");
    if (x.rows() != batch) fail(ErrorKind::Shape, "LSTM input batch size changes across steps");
    Step s;
    s.input.resize(batch, in_ + h);
    s.input << x, h_prev;
    const Matrix pre = add_bias(s.input * weight.value.transpose(), bias.value);
    s.i = sigmoid(pre.leftCols(h));
    s.f = sigmoid(pre.middleCols(h, h));
    s.o = sigmoid(pre.middleCols(2 * h, h));
    s.g = pre.rightCols(h).array().tanh().matrix();
    s.c_prev = c_prev;
    s.c = (s.f.array() * c_prev.array() + s.i.array() * s.g.array()).matrix();
    s.tanh_c = s.c.array().tanh().matrix();
    h_prev = (s.o.array() * s.tanh_c.array()).matrix();
    c_prev = s.c;
    hs.push_back(h_prev);
    steps_.push_back(std::move(s));
  }
  return hs;
}

std::vector<Matrix> Lstm::backward(const std::vector<Matrix>& dhs) {
  if (dhs.size() != steps_.size()) fail(ErrorKind::Shape, "LSTM backward step count mismatch");
  const Eigen::Index h = hidden_;
  std::vector<Matrix> dxs(steps_.size());
  if (steps_.empty()) return dxs;
  const Eigen::Index batch = steps_.front().input.rows();
  Matrix dh_next = Matrix::Zero(batch, h);
  Matrix dc_next = Matrix::Zero(batch, h);
  Matrix dpre(batch, 4 * h);
  for (std::size_t t = steps_.size(); t-- > 0;) {
    const Step& s = steps_[t];
    const Matrix dh = dhs[t] + dh_next;
    const auto dc = (dc_next.array() + dh.array() * s.o.array() * (1.0 - s.tanh_c.array().square())).eval();
    dpre.leftCols(h) = (dc * s.g.array() * s.i.array() * (1.0 - s.i.array())).matrix();
    dpre.middleCols(h, h) = (dc * s.c_prev.array() * s.f.array() * (1.0 - s.f.array())).matrix();
    dpre.middleCols(2 * h, h) = (dh.array() * s.tanh_c.array() * s.o.array() * (1.0 - s.o.array())).matrix();
    dpre.rightCols(h) = (dc * s.i.array() * (1.0 - s.g.array().square())).matrix();
    weight.grad.noalias() += dpre.transpose() * s.input;
    bias.grad += dpre.colwise().sum();
    const Matrix dinput = dpre * weight.value;
    dxs[t] = dinput.leftCols(in_);
    dh_next = dinput.rightCols(h);
    dc_next = (dc * s.f.array()).matrix();
  }
  return dxs;
}

void Lstm::collect(const std::string& prefix, ParameterList& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

// --- Attention --------------------------------------------------------------

std::vector<Matrix> attention_weights(const std::vector<Matrix>& u, AttentionMode mode) {
  std::vector<Matrix> alpha;
  if (u.empty()) return alpha;
  alpha.reserve(u.size());
  for (const Matrix& ut : u) {
    alpha.push_back(mode == AttentionMode::Summed ? Matrix(ut.rowwise().sum()) : ut);
  }
  Matrix top = alpha.front();
  for (const Matrix& a : alpha) top = top.cwiseMax(a);
  Matrix total = Matrix::Zero(top.rows(), top.cols());
  for (Matrix& a : alpha) {
    a = (a - top).array().exp().matrix();
    total += a;
  }
  for (Matrix& a : alpha) a = a.cwiseQuotient(total);
  return alpha;
}

Attention::Attention(Eigen::Index hidden, AttentionMode mode) : mode_(mode) {
  if (hidden <= 0) fail(ErrorKind::Shape, "attention size must be positive");
  weight.resize(hidden, hidden);
  bias.resize(1, hidden);
}

void Attention::initialize(Rng& rng) {
  glorot_uniform(weight.value, weight.value.cols(), weight.value.rows(), rng);
  bias.value.setZero();
}

Matrix Attention::forward(const std::vector<Matrix>& hs) {
  if (hs.empty()) fail(ErrorKind::Arity, "attention needs at least one step");
  hs_ = hs;
  u_.clear();
  for (const Matrix& h : hs) {
    require_cols(h, weight.value.cols(), "attention input");
    u_.push_back(add_bias(h * weight.value.transpose(), bias.value).array().tanh().matrix());
  }
  alpha_ = attention_weights(u_, mode_);
  Matrix v = Matrix::Zero(hs.front().rows(), hs.front().cols());
  for (std::size_t t = 0; t < hs.size(); ++t) {
    if (mode_ == AttentionMode::Summed) {
      v += alpha_[t].col(0).asDiagonal() * hs[t];
    } else {
      v += alpha_[t].cwiseProduct(hs[t]);
    }
  }
  return v;
}

std::vector<Matrix> Attention::backward(const Matrix& dv) {
  const std::size_t steps = hs_.size();
  std::vector<Matrix> dhs(steps);
  std::vector<Matrix> dalpha(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    if (mode_ == AttentionMode::Summed) {
      dhs[t] = alpha_[t].col(0).asDiagonal() * dv;
      dalpha[t] = dv.cwiseProduct(hs_[t]).rowwise().sum();
    } else {
      dhs[t] = alpha_[t].cwiseProduct(dv);
      dalpha[t] = dv.cwiseProduct(hs_[t]);
    }
  }
  // softmax over steps: ds_t = alpha_t (dalpha_t - sum_j alpha_j dalpha_j)
  Matrix inner = Matrix::Zero(alpha_.front().rows(), alpha_.front().cols());
  for (std::size_t t = 0; t < steps; ++t) inner += alpha_[t].cwiseProduct(dalpha[t]);
  for (std::size_t t = 0; t < steps; ++t) {
    const Matrix ds = alpha_[t].cwiseProduct(dalpha[t] - inner);
    Matrix du;
    if (mode_ == AttentionMode::Summed) {
      du = ds.col(0).replicate(1, u_[t].cols());
    } else {
      du = ds;
    }
    const Matrix dpre = (du.array() * (1.0 - u_[t].array().square())).matrix();
    weight.grad.noalias() += dpre.transpose() * hs_[t];
    bias.grad += dpre.colwise().sum();
    dhs[t].noalias() += dpre * weight.value;
  }
  return dhs;
}

void Attention::collect(const std::string& prefix, ParameterList& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

// --- BatchNorm --------------------------------------------------------------

BatchNorm::BatchNorm(Eigen::Index features, double momentum, double epsilon)
    : momentum_(momentum), epsilon_(epsilon) {
  if (features <= 0) fail(ErrorKind::Shape, "batch norm size must be positive");
  gamma.resize(1, features);
  gamma.value.setOnes();
  beta.resize(1, features);
  running_mean = Matrix::Zero(1, features);
  running_var = Matrix::Ones(1, features);
}

Matrix BatchNorm::forward(const Matrix& x, bool training) {
  require_cols(x, gamma.value.cols(), "batch norm input");
  training_ = training;
  Matrix mean, var;
  if (training) {
    const double m = static_cast<double>(x.rows());
    mean = x.colwise().mean();
    var = (x.rowwise() - mean.row(0)).array().square().colwise().sum().matrix() / m;
    const double unbiased = x.rows() > 1 ? m / (m - 1.0) : 1.0;
    running_mean = momentum_ * running_mean + (1.0 - momentum_) * mean;
    running_var = momentum_ * running_var + (1.0 - momentum_) * unbiased * var;
  } else {
    mean = running_mean;
    var = running_var;
  }
  inv_std_ = (var.array() + epsilon_).rsqrt().matrix();
  xhat_ = ((x.rowwise() - mean.row(0)).array().rowwise() * inv_std_.row(0).array()).matrix();
  return add_bias((xhat_.array().rowwise() * gamma.value.row(0).array()).matrix(), beta.value);
}

Matrix BatchNorm::backward(const Matrix& dy) {
  gamma.grad += dy.cwiseProduct(xhat_).colwise().sum();
  beta.grad += dy.colwise().sum();
  const Matrix dxhat = (dy.array().rowwise() * gamma.value.row(0).array()).matrix();
  if (!training_) return (dxhat.array().rowwise() * inv_std_.row(0).array()).matrix();
  const double m = static_cast<double>(dy.rows());
  const Matrix sum_dxhat = dxhat.colwise().sum();
  const Matrix sum_dxhat_xhat = dxhat.cwiseProduct(xhat_).colwise().sum();
  Matrix dx = (m * dxhat).rowwise() - sum_dxhat.row(0);
  dx -= (xhat_.array().rowwise() * sum_dxhat_xhat.row(0).array()).matrix();
  return (dx.array().rowwise() * (inv_std_.row(0).array() / m)).matrix();
}

void BatchNorm::collect(const std::string& prefix, ParameterList& out) {
  out.emplace_back(prefix + ".gamma", &gamma);
  out.emplace_back(prefix + ".beta", &beta);
}

void BatchNorm::collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, Matrix*>>& out) {
  out.emplace_back(prefix + ".running_mean", &running_mean);
  out.emplace_back(prefix + ".running_var", &running_var);
}

// --- Dropout ----------------------------------------------------------------

Dropout::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::Config, "dropout rate must lie in [0, 1)");
}

Matrix Dropout::forward(const Matrix& x, bool training, Rng& rng) {
  if (!training || rate_ == 0.0) {
    mask_ = Matrix::Ones(x.rows(), x.cols());
    return x;
  }
  std::bernoulli_distribution keep(1.0 - rate_);
  const double scale = 1.0 / (1.0 - rate_);
  mask_.resize(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) mask_(r, c) = keep(rng) ? scale : 0.0;
  }
  return x.cwiseProduct(mask_);
}

Matrix Dropout::backward(const Matrix& dy) const { return dy.cwiseProduct(mask_); }

// --- Losses -----------------------------------------------------------------

LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    fail(ErrorKind::Shape, "label count does not match batch size");
  }
  const double b = static_cast<double>(logits.rows());
  LossResult out;
  out.grad = softmax_rows(logits);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int k = labels[static_cast<std::size_t>(r)];
    if (k < 0 || k >= logits.cols()) fail(ErrorKind::Data, "class label out of range: " + std::to_string(k));
    out.value -= std::log(std::max(out.grad(r, k), kProbabilityFloor));
    out.grad(r, k) -= 1.0;
  }
  out.value /= b;
  out.grad /= b;
  return out;
}

LossResult sigmoid_binary_cross_entropy(const Matrix& logits, std::span<const double> targets) {
  if (logits.cols() != 1 || static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    fail(ErrorKind::Shape, "binary cross-entropy expects one logit per target");
  }
  const double b = static_cast<double>(logits.rows());
  const Matrix p = sigmoid(logits);
  LossResult out;
  out.grad.resize(logits.rows(), 1);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double y = targets[static_cast<std::size_t>(r)];
    out.value += binary_cross_entropy(y, p(r, 0));
    out.grad(r, 0) = (p(r, 0) - y) / b;
  }
  out.value /= b;
  return out;
}

LossResult mean_squared_error(const Matrix& prediction, const Matrix& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    fail(ErrorKind::Shape, "prediction and target shapes differ");
  }
  const double n = static_cast<double>(prediction.size());
  LossResult out;
  const Matrix diff = prediction - target;
  out.value = diff.squaredNorm() / n;
  out.grad = 2.0 * diff / n;
  return out;
}

double cross_entropy(const Matrix& probabilities, const Matrix& one_hot) {
  if (probabilities.rows() != one_hot.rows() || probabilities.cols() != one_hot.cols()) {
    fail(ErrorKind::Shape, "probability and target shapes differ");
  }
  const Matrix logp = probabilities.cwiseMax(kProbabilityFloor).array().log().matrix();
  return -(one_hot.cwiseProduct(logp).sum()) / static_cast<double>(probabilities.rows());
}

double binary_cross_entropy(double target, double probability) {
  const double p = std::clamp(probability, kProbabilityFloor, 1.0 - kProbabilityFloor);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

// --- Adam -------------------------------------------------------------------

void Adam::step(const ParameterList& params) {
  if (m_.empty()) {
    for (const auto& [name, p] : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) fail(ErrorKind::Shape, "optimizer state does not match parameters");
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k].second;
    if (p.grad.rows() != m_[k].rows() || p.grad.cols() != m_[k].cols()) {
      fail(ErrorKind::Shape, "optimizer state shape mismatch for " + params[k].first);
    }
    m_[k] = options_.beta1 * m_[k] + (1.0 - options_.beta1) * p.grad;
    v_[k] = options_.beta2 * v_[k] + (1.0 - options_.beta2) * p.grad.cwiseAbs2();
    const auto m_hat = m_[k].array() / c1;
    const auto v_hat = v_[k].array() / c2;
    p.value.array() -= options_.learning_rate * m_hat / (v_hat.sqrt() + options_.epsilon);
  }
}

void Adam::restore(std::int64_t steps, std::vector<Matrix> m, std::vector<Matrix> v) {
  if (m.size() != v.size()) fail(ErrorKind::Shape, "optimizer moment lists differ in length");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

// --- Sequence helpers -------------------------------------------------------

Matrix stack_steps(const std::vector<Matrix>& steps) {
  if (steps.empty()) return {};
  const Eigen::Index b = steps.front().rows();
  Matrix out(b * static_cast<Eigen::Index>(steps.size()), steps.front().cols());
  for (std::size_t t = 0; t < steps.size(); ++t) out.middleRows(static_cast<Eigen::Index>(t) * b, b) = steps[t];
  return out;
}

std::vector<Matrix> unstack_steps(const Matrix& stacked, std::size_t steps) {
  std::vector<Matrix> out;
  if (steps == 0) return out;
  const Eigen::Index b = stacked.rows() / static_cast<Eigen::Index>(steps);
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) out.push_back(stacked.middleRows(static_cast<Eigen::Index>(t) * b, b));
  return out;
}

}  // namespace spdbci::nn
