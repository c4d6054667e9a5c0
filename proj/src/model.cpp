#include "spdbci/model.hpp"

#include "spdbci/error.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spdbci::model {

using nn::Activation;

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::pair<const char*, E> (&table)[N], const char* what) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  std::string options;
  for (const auto& [name, value] : table) options += std::string(options.empty() ? "" : ", ") + name;
  fail(ErrorKind::Config, std::string("unknown ") + what + " '" + s + "' (expected one of: " + options + ")");
}

template <typename E, std::size_t N>
const char* enum_name(E v, const std::pair<const char*, E> (&table)[N]) {
  for (const auto& [name, value] : table) {
    if (v == value) return name;
  }
  return "?";
}

constexpr std::pair<const char*, OutputActivation> kOutputs[] = {
    {"softmax", OutputActivation::Softmax}, {"sigmoid", OutputActivation::Sigmoid}, {"linear", OutputActivation::Linear}};
constexpr std::pair<const char*, LossKind> kLosses[] = {{"ce", LossKind::CrossEntropy},
                                                        {"bce", LossKind::BinaryCrossEntropy},
                                                        {"mse", LossKind::MeanSquaredError}};
constexpr std::pair<const char*, Regularizer> kRegularizers[] = {{"dropout", Regularizer::Dropout},
                                                                 {"batchnorm", Regularizer::BatchNorm}};
constexpr std::pair<const char*, FusionMode> kFusions[] = {{"attention", FusionMode::Attention},
                                                           {"independent-sigmoid", FusionMode::IndependentSigmoid},
                                                           {"soft-attention", FusionMode::SoftAttention},
                                                           {"concatenation", FusionMode::Concatenation}};
constexpr std::pair<const char*, StreamMode> kStreams[] = {{"fused", StreamMode::Fused},
                                                           {"temporal-only", StreamMode::TemporalOnly},
                                                           {"spatial-only", StreamMode::SpatialOnly}};
constexpr std::pair<const char*, nn::AttentionMode> kAttention[] = {{"summed", nn::AttentionMode::Summed},
                                                                    {"per-component", nn::AttentionMode::PerComponent}};

bool reweighted(const ArchitectureConfig& c) {
  return c.streams == StreamMode::Fused && c.fusion != FusionMode::Concatenation;
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace

const char* to_string(OutputActivation v) { return enum_name(v, kOutputs); }
const char* to_string(LossKind v) { return enum_name(v, kLosses); }
const char* to_string(Regularizer v) { return enum_name(v, kRegularizers); }
const char* to_string(FusionMode v) { return enum_name(v, kFusions); }
const char* to_string(StreamMode v) { return enum_name(v, kStreams); }
const char* to_string(nn::AttentionMode v) { return enum_name(v, kAttention); }

OutputActivation parse_output_activation(const std::string& s) { return parse_enum(s, kOutputs, "output activation"); }
LossKind parse_loss(const std::string& s) { return parse_enum(s, kLosses, "loss"); }
Regularizer parse_regularizer(const std::string& s) { return parse_enum(s, kRegularizers, "regularizer"); }
FusionMode parse_fusion(const std::string& s) { return parse_enum(s, kFusions, "fusion mode"); }
StreamMode parse_streams(const std::string& s) { return parse_enum(s, kStreams, "stream mode"); }
nn::AttentionMode parse_attention(const std::string& s) { return parse_enum(s, kAttention, "attention mode"); }

// --- configuration ------------------------------------------------------------

Eigen::Index ArchitectureConfig::outputs() const {
  return output == OutputActivation::Softmax ? classes : 1;
}

void ArchitectureConfig::validate() const {
  auto positive = [](Eigen::Index v, const char* what) {
    if (v <= 0) fail(ErrorKind::Config, std::string(what) + " must be positive");
  };
  if (uses_temporal()) {
    positive(temporal_features, "temporal feature count");
    positive(lstm_layers, "LSTM layer count");
    positive(lstm_hidden, "LSTM hidden size");
    positive(temporal_embedding, "temporal embedding size");
    if (regularizer == Regularizer::Dropout && lstm_dropout.size() < static_cast<std::size_t>(lstm_layers)) {
      fail(ErrorKind::Config, "need one dropout rate per LSTM layer");
    }
  }
  if (uses_spatial()) {
    positive(spatial_features, "spatial feature count");
    if (spatial_units.empty()) fail(ErrorKind::Config, "spatial stream needs at least one layer");
    for (Eigen::Index u : spatial_units) positive(u, "spatial layer size");
  }
  if (reweighted(*this)) positive(encoder_hidden, "encoder size");
  positive(fusion_units, "fusion layer size");

  switch (loss) {
    case LossKind::CrossEntropy:
      if (output != OutputActivation::Softmax) fail(ErrorKind::Config, "cross-entropy requires a softmax output");
      if (classes < 2) fail(ErrorKind::Config, "cross-entropy needs at least two classes");
      break;
    case LossKind::BinaryCrossEntropy:
      if (output != OutputActivation::Sigmoid) fail(ErrorKind::Config, "binary cross-entropy requires a sigmoid output");
      if (classes != 2) fail(ErrorKind::Config, "binary cross-entropy is for two classes");
      break;
    case LossKind::MeanSquaredError:
      if (output == OutputActivation::Softmax) fail(ErrorKind::Config, "mean squared error needs a sigmoid or linear output");
      break;
  }
}

std::string architecture_json(const ArchitectureConfig& c) {
  nlohmann::ordered_json j;
  j["temporal_features"] = c.temporal_features;
  j["spatial_features"] = c.spatial_features;
  j["classes"] = c.classes;
  j["lstm_layers"] = c.lstm_layers;
  j["lstm_hidden"] = c.lstm_hidden;
  j["regularizer"] = to_string(c.regularizer);
  j["lstm_dropout"] = c.lstm_dropout;
  j["leaky_slope"] = c.leaky_slope;
  j["attention"] = to_string(c.attention);
  j["temporal_embedding"] = c.temporal_embedding;
  j["spatial_units"] = c.spatial_units;
  j["spatial_dropout"] = c.spatial_dropout;
  j["encoder_hidden"] = c.encoder_hidden;
  j["fusion_units"] = c.fusion_units;
  j["output"] = to_string(c.output);
  j["loss"] = to_string(c.loss);
  j["fusion"] = to_string(c.fusion);
  j["streams"] = to_string(c.streams);
  return j.dump();
}

ArchitectureConfig architecture_from_json(const std::string& text) {
  ArchitectureConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.temporal_features = j.at("temporal_features").get<Eigen::Index>();
    c.spatial_features = j.at("spatial_features").get<Eigen::Index>();
    c.classes = j.at("classes").get<int>();
    c.lstm_layers = j.at("lstm_layers").get<int>();
    c.lstm_hidden = j.at("lstm_hidden").get<Eigen::Index>();
    c.regularizer = parse_regularizer(j.at("regularizer").get<std::string>());
    c.lstm_dropout = j.at("lstm_dropout").get<std::vector<double>>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.attention = parse_attention(j.at("attention").get<std::string>());
    c.temporal_embedding = j.at("temporal_embedding").get<Eigen::Index>();
    c.spatial_units = j.at("spatial_units").get<std::vector<Eigen::Index>>();
    c.spatial_dropout = j.at("spatial_dropout").get<double>();
    c.encoder_hidden = j.at("encoder_hidden").get<Eigen::Index>();
    c.fusion_units = j.at("fusion_units").get<Eigen::Index>();
    c.output = parse_output_activation(j.at("output").get<std::string>());
    c.loss = parse_loss(j.at("loss").get<std::string>());
    c.fusion = parse_fusion(j.at("fusion").get<std::string>());
    c.streams = parse_streams(j.at("streams").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("bad architecture metadata: ") + e.what());
  }
  return c;
}

// --- data ---------------------------------------------------------------------

std::size_t Dataset::size() const { return std::max(sequences.size(), static_cast<std::size_t>(spatial.rows())); }

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  if (spatial.rows() > 0) out.spatial.resize(static_cast<Eigen::Index>(indices.size()), spatial.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= size()) fail(ErrorKind::Shape, "dataset index out of range");
    if (!sequences.empty()) out.sequences.push_back(sequences[i]);
    if (spatial.rows() > 0) out.spatial.row(static_cast<Eigen::Index>(k)) = spatial.row(static_cast<Eigen::Index>(i));
    if (!classes.empty()) out.classes.push_back(classes[i]);
    if (!targets.empty()) out.targets.push_back(targets[i]);
  }
  return out;
}

void Dataset::check(const ArchitectureConfig& config) const {
  const std::size_t n = size();
  if (n == 0) fail(ErrorKind::Arity, "empty dataset");
  if (config.uses_temporal()) {
    if (sequences.size() != n) fail(ErrorKind::Shape, "missing temporal features for some samples");
    const Eigen::Index steps = sequences.front().rows();
    if (steps < 1) fail(ErrorKind::Shape, "feature sequences must have at least one window");
    for (const Matrix& s : sequences) {
      if (s.rows() != steps) fail(ErrorKind::Shape, "feature sequences differ in length");
      if (s.cols() != config.temporal_features) {
        fail(ErrorKind::Shape, "temporal feature width " + std::to_string(s.cols()) + " does not match the model's " +
                                   std::to_string(config.temporal_features));
      }
    }
  }
  if (config.uses_spatial()) {
    if (static_cast<std::size_t>(spatial.rows()) != n) fail(ErrorKind::Shape, "missing spatial features for some samples");
    if (spatial.cols() != config.spatial_features) {
      fail(ErrorKind::Shape, "spatial feature length " + std::to_string(spatial.cols()) + " does not match the model's " +
                                 std::to_string(config.spatial_features));
    }
  }
  if (config.loss == LossKind::MeanSquaredError) {
    if (targets.size() != n) fail(ErrorKind::Data, "regression needs one target per sample");
  } else {
    if (classes.size() != n) fail(ErrorKind::Data, "classification needs one class label per sample");
    for (int k : classes) {
      if (k < 0 || k >= config.classes) fail(ErrorKind::Data, "class label " + std::to_string(k) + " out of range");
    }
  }
}

Eigen::Index Batch::size() const {
  return sequence.empty() ? spatial.rows() : sequence.front().rows();
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  Batch b;
  const auto rows = static_cast<Eigen::Index>(indices.size());
  if (!data.sequences.empty()) {
    const Eigen::Index steps = data.sequences.front().rows();
    const Eigen::Index width = data.sequences.front().cols();
    b.sequence.assign(static_cast<std::size_t>(steps), Matrix(rows, width));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Matrix& s = data.sequences[indices[static_cast<std::size_t>(r)]];
      for (Eigen::Index t = 0; t < steps; ++t) b.sequence[static_cast<std::size_t>(t)].row(r) = s.row(t);
    }
  }
  if (data.spatial.rows() > 0) {
    b.spatial.resize(rows, data.spatial.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
      b.spatial.row(r) = data.spatial.row(static_cast<Eigen::Index>(indices[static_cast<std::size_t>(r)]));
    }
  }
  for (std::size_t i : indices) {
    if (!data.classes.empty()) b.classes.push_back(data.classes[i]);
    if (!data.targets.empty()) {
      b.targets.push_back(data.targets[i]);
    } else if (!data.classes.empty()) {
      b.targets.push_back(static_cast<double>(data.classes[i]));
    }
  }
  return b;
}

// --- fusion -------------------------------------------------------------------

FusionWeights fusion_weights(FusionMode mode, const Matrix& temporal_score, const Matrix& spatial_score) {
  FusionWeights w;
  if (mode == FusionMode::IndependentSigmoid) {
    w.temporal = nn::sigmoid(temporal_score);
    w.spatial = nn::sigmoid(spatial_score);
    return w;
  }
  const Matrix p = nn::softmax_rows(concat_cols(temporal_score, spatial_score));
  w.temporal = p.col(0);
  w.spatial = p.col(1);
  return w;
}

double fusion_scale(FusionMode mode, double alpha) {
  switch (mode) {
    case FusionMode::Attention:
    case FusionMode::IndependentSigmoid: return 1.0 + alpha;
    case FusionMode::SoftAttention: return alpha;
    case FusionMode::Concatenation: return 1.0;
  }
  return 1.0;
}

// --- network ------------------------------------------------------------------

FusionNetwork::FusionNetwork(ArchitectureConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  const double slope = c.leaky_slope;
  Eigen::Index fused_width = 0;
  if (c.uses_temporal()) {
    for (int l = 0; l < c.lstm_layers; ++l) {
      lstm_.emplace_back(l == 0 ? c.temporal_features : c.lstm_hidden, c.lstm_hidden);
      if (c.regularizer == Regularizer::Dropout) {
        lstm_dropout_.emplace_back(c.lstm_dropout[static_cast<std::size_t>(l)]);
      } else {
        lstm_norm_.emplace_back(c.lstm_hidden);
      }
    }
    attention_ = nn::Attention(c.lstm_hidden, c.attention);
    temporal_fc_ = nn::Dense(c.lstm_hidden, c.temporal_embedding, Activation::LeakyRelu, slope);
    fused_width += c.temporal_embedding;
  }
  if (c.uses_spatial()) {
    Eigen::Index in = c.spatial_features;
    for (Eigen::Index units : c.spatial_units) {
      spatial_fc_.emplace_back(in, units, Activation::LeakyRelu, slope);
      spatial_dropout_.emplace_back(c.spatial_dropout);
      in = units;
    }
    fused_width += in;
  }
  if (reweighted(c)) {
    encoder_t1_ = nn::Dense(c.temporal_embedding, c.encoder_hidden, Activation::Tanh);
    encoder_t2_ = nn::Dense(c.encoder_hidden, 1, Activation::Identity);
    encoder_s1_ = nn::Dense(c.spatial_units.back(), c.encoder_hidden, Activation::Tanh);
    encoder_s2_ = nn::Dense(c.encoder_hidden, 1, Activation::Identity);
  }
  fusion_fc_ = nn::Dense(fused_width, c.fusion_units, Activation::LeakyRelu, slope);
  output_ = nn::Dense(c.fusion_units, c.outputs(), Activation::Identity);
}

void FusionNetwork::initialize(std::uint64_t seed) {
  nn::Rng rng(seed);
  for (nn::Lstm& l : lstm_) l.initialize(rng);
  if (config_.uses_temporal()) {
    attention_.initialize(rng);
    temporal_fc_.initialize(rng);
  }
  for (nn::Dense& d : spatial_fc_) d.initialize(rng);
  if (reweighted(config_)) {
    encoder_t1_.initialize(rng);
    encoder_t2_.initialize(rng);
    encoder_s1_.initialize(rng);
    encoder_s2_.initialize(rng);
  }
  fusion_fc_.initialize(rng);
  output_.initialize(rng);
}

nn::ParameterList FusionNetwork::parameters() {
  nn::ParameterList out;
  for (std::size_t l = 0; l < lstm_.size(); ++l) {
    lstm_[l].collect("temporal.lstm" + std::to_string(l), out);
    if (l < lstm_norm_.size()) lstm_norm_[l].collect("temporal.norm" + std::to_string(l), out);
  }
  if (config_.uses_temporal()) {
    attention_.collect("temporal.attention", out);
    temporal_fc_.collect("temporal.fc", out);
  }
  for (std::size_t k = 0; k < spatial_fc_.size(); ++k) spatial_fc_[k].collect("spatial.fc" + std::to_string(k), out);
  if (reweighted(config_)) {
    encoder_t1_.collect("fusion.encoder_t.fc0", out);
    encoder_t2_.collect("fusion.encoder_t.fc1", out);
    encoder_s1_.collect("fusion.encoder_s.fc0", out);
    encoder_s2_.collect("fusion.encoder_s.fc1", out);
  }
  fusion_fc_.collect("fusion.fc", out);
  output_.collect("output", out);
  return out;
}

std::vector<std::pair<std::string, Matrix*>> FusionNetwork::buffers() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (std::size_t l = 0; l < lstm_norm_.size(); ++l) lstm_norm_[l].collect_buffers("temporal.norm" + std::to_string(l), out);
  return out;
}

Matrix FusionNetwork::temporal_stream(const std::vector<Matrix>& sequence, bool training, nn::Rng& rng) {
  if (!config_.uses_temporal()) fail(ErrorKind::Config, "temporal stream disabled in this configuration");
  if (sequence.empty()) fail(ErrorKind::Arity, "feature sequence is empty");
  steps_ = sequence.size();
  lstm_pre_act_.assign(lstm_.size(), Matrix());
  std::vector<Matrix> x = sequence;
  for (std::size_t l = 0; l < lstm_.size(); ++l) {
    const Matrix stacked = nn::stack_steps(lstm_[l].forward(x));
    if (config_.regularizer == Regularizer::Dropout) {
      x = nn::unstack_steps(lstm_dropout_[l].forward(stacked, training, rng), steps_);
    } else {
      lstm_pre_act_[l] = lstm_norm_[l].forward(stacked, training);
      x = nn::unstack_steps(nn::activate(Activation::LeakyRelu, lstm_pre_act_[l], config_.leaky_slope), steps_);
    }
  }
  return temporal_fc_.forward(attention_.forward(x));
}

Matrix FusionNetwork::spatial_stream(const Matrix& features, bool training, nn::Rng& rng) {
  if (!config_.uses_spatial()) fail(ErrorKind::Config, "spatial stream disabled in this configuration");
  Matrix a = features;
  for (std::size_t k = 0; k < spatial_fc_.size(); ++k) {
    a = spatial_dropout_[k].forward(spatial_fc_[k].forward(a), training, rng);
  }
  return a;
}

Matrix FusionNetwork::forward(const Batch& batch, bool training, std::uint64_t noise_seed) {
  nn::Rng rng(noise_seed);
  fusion_ = {};
  if (config_.uses_temporal()) e_t_ = temporal_stream(batch.sequence, training, rng);
  if (config_.uses_spatial()) e_s_ = spatial_stream(batch.spatial, training, rng);
  if (config_.uses_temporal() && config_.uses_spatial() && e_t_.rows() != e_s_.rows()) {
    fail(ErrorKind::Shape, "temporal and spatial batches differ in size");
  }

  Matrix z;
  if (config_.streams == StreamMode::TemporalOnly) {
    z = e_t_;
  } else if (config_.streams == StreamMode::SpatialOnly) {
    z = e_s_;
  } else if (config_.fusion == FusionMode::Concatenation) {
    z = concat_cols(e_t_, e_s_);
  } else {
    const Matrix st = encoder_t2_.forward(encoder_t1_.forward(e_t_));
    const Matrix ss = encoder_s2_.forward(encoder_s1_.forward(e_s_));
    fusion_ = fusion_weights(config_.fusion, st, ss);
    const Vector scale_t = fusion_.temporal.col(0).unaryExpr([this](double a) { return fusion_scale(config_.fusion, a); });
    const Vector scale_s = fusion_.spatial.col(0).unaryExpr([this](double a) { return fusion_scale(config_.fusion, a); });
    z = concat_cols(scale_t.asDiagonal() * e_t_, scale_s.asDiagonal() * e_s_);
  }
  return output_.forward(fusion_fc_.forward(z));
}

Matrix FusionNetwork::activate(const Matrix& raw) const {
  switch (config_.output) {
    case OutputActivation::Softmax: return nn::softmax_rows(raw);
    case OutputActivation::Sigmoid: return nn::sigmoid(raw);
    case OutputActivation::Linear: return raw;
  }
  return raw;
}

nn::LossResult FusionNetwork::loss_result(const Batch& batch, const Matrix& raw) const {
  switch (config_.loss) {
    case LossKind::CrossEntropy: return nn::softmax_cross_entropy(raw, batch.classes);
    case LossKind::BinaryCrossEntropy: return nn::sigmoid_binary_cross_entropy(raw, batch.targets);
    case LossKind::MeanSquaredError: {
      if (static_cast<Eigen::Index>(batch.targets.size()) != raw.rows()) {
        fail(ErrorKind::Shape, "target count does not match batch size");
      }
      const Matrix t = Eigen::Map<const Vector>(batch.targets.data(), raw.rows());
      if (config_.output == OutputActivation::Sigmoid) {
        const Matrix p = nn::sigmoid(raw);
        nn::LossResult r = nn::mean_squared_error(p, t);
        r.grad = (r.grad.array() * p.array() * (1.0 - p.array())).matrix();
        return r;
      }
      return nn::mean_squared_error(raw, t);
    }
  }
  fail(ErrorKind::Config, "unknown loss");
}

double FusionNetwork::loss(const Batch& batch, const Matrix& raw) const { return loss_result(batch, raw).value; }

double FusionNetwork::backward(const Batch& batch, const Matrix& raw) {
  const nn::LossResult lr = loss_result(batch, raw);
  const Matrix dz = fusion_fc_.backward(output_.backward(lr.grad));

  Matrix de_t, de_s;
  if (config_.streams == StreamMode::TemporalOnly) {
    de_t = dz;
  } else if (config_.streams == StreamMode::SpatialOnly) {
    de_s = dz;
  } else if (config_.fusion == FusionMode::Concatenation) {
    de_t = dz.leftCols(e_t_.cols());
    de_s = dz.rightCols(e_s_.cols());
  } else {
    const FusionMode mode = config_.fusion;
    const Matrix dz_t = dz.leftCols(e_t_.cols());
    const Matrix dz_s = dz.rightCols(e_s_.cols());
    const Vector a_t = fusion_.temporal.col(0);
    const Vector a_s = fusion_.spatial.col(0);
    const Vector scale_t = a_t.unaryExpr([mode](double a) { return fusion_scale(mode, a); });
    const Vector scale_s = a_s.unaryExpr([mode](double a) { return fusion_scale(mode, a); });
    de_t = scale_t.asDiagonal() * dz_t;
    de_s = scale_s.asDiagonal() * dz_s;
    // every mode's scale has unit slope in alpha
    const Vector da_t = dz_t.cwiseProduct(e_t_).rowwise().sum();
    const Vector da_s = dz_s.cwiseProduct(e_s_).rowwise().sum();
    Vector ds_t, ds_s;
    if (mode == FusionMode::IndependentSigmoid) {
      ds_t = da_t.cwiseProduct(a_t.cwiseProduct((1.0 - a_t.array()).matrix()));
      ds_s = da_s.cwiseProduct(a_s.cwiseProduct((1.0 - a_s.array()).matrix()));
    } else {
      const Vector inner = a_t.cwiseProduct(da_t) + a_s.cwiseProduct(da_s);
      ds_t = a_t.cwiseProduct(da_t - inner);
      ds_s = a_s.cwiseProduct(da_s - inner);
    }
    de_t += encoder_t1_.backward(encoder_t2_.backward(ds_t));
    de_s += encoder_s1_.backward(encoder_s2_.backward(ds_s));
  }

  if (config_.uses_temporal()) {
    std::vector<Matrix> dxs = attention_.backward(temporal_fc_.backward(de_t));
    for (std::size_t l = lstm_.size(); l-- > 0;) {
      Matrix d = nn::stack_steps(dxs);
      if (config_.regularizer == Regularizer::Dropout) {
        d = lstm_dropout_[l].backward(d);
      } else {
        d = nn::activation_backward(Activation::LeakyRelu, lstm_pre_act_[l], lstm_pre_act_[l], d, config_.leaky_slope);
        d = lstm_norm_[l].backward(d);
      }
      dxs = lstm_[l].backward(nn::unstack_steps(d, steps_));
    }
  }
  if (config_.uses_spatial()) {
    Matrix d = de_s;
    for (std::size_t k = spatial_fc_.size(); k-- > 0;) d = spatial_fc_[k].backward(spatial_dropout_[k].backward(d));
  }
  return lr.value;
}

// --- training -----------------------------------------------------------------

Matrix predict(FusionNetwork& net, const Dataset& data, int batch_size) {
  const std::size_t n = data.size();
  Matrix out(static_cast<Eigen::Index>(n), net.config().outputs());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    idx.resize(std::min(static_cast<std::size_t>(batch_size), n - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(data, idx);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(idx.size())) =
        net.activate(net.forward(b, false, 0));
  }
  return out;
}

std::vector<int> decide(const Matrix& outputs) {
  std::vector<int> out(static_cast<std::size_t>(outputs.rows()));
  for (Eigen::Index r = 0; r < outputs.rows(); ++r) {
    if (outputs.cols() == 1) {
      out[static_cast<std::size_t>(r)] = outputs(r, 0) >= 0.5 ? 1 : 0;
    } else {
      Eigen::Index k = 0;
      outputs.row(r).maxCoeff(&k);
      out[static_cast<std::size_t>(r)] = static_cast<int>(k);
    }
  }
  return out;
}

Evaluation evaluate(FusionNetwork& net, const Dataset& data) {
  data.check(net.config());
  const Matrix outputs = predict(net, data);
  Evaluation e;
  e.classification = net.config().classification();
  if (e.classification) {
    e.predicted_classes = decide(outputs);
    e.confusion = metrics::confusion_matrix(data.classes, e.predicted_classes, net.config().classes);
    e.accuracy = metrics::accuracy(e.confusion);
    e.kappa = metrics::kappa(e.confusion);
  } else {
    e.predicted_values.assign(outputs.col(0).data(), outputs.col(0).data() + outputs.rows());
    e.rmse = metrics::rmse(data.targets, e.predicted_values);
    e.pcc = metrics::pcc(data.targets, e.predicted_values);
  }
  return e;
}

std::vector<EpochRecord> train(FusionNetwork& net, nn::Adam& optimizer, const Dataset& data,
                               const TrainingOptions& options, std::uint64_t seed,
                               const std::function<void(const EpochRecord&)>& on_epoch) {
  data.check(net.config());
  if (options.epochs < 0 || options.batch_size <= 0) fail(ErrorKind::Config, "epochs and batch size must be positive");
  const nn::ParameterList params = net.parameters();
  nn::Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(options.batch_size);

  std::vector<EpochRecord> log;
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      const Batch batch = make_batch(data, idx);
      const Matrix raw = net.forward(batch, true, rng());
      nn::zero_grad(params);
      const double loss = net.backward(batch, raw);
      const double norm = nn::clip_gradients(params, options.clip_norm);
      if (!std::isfinite(loss) || !std::isfinite(norm)) {
        fail(ErrorKind::Numerical, "training diverged at epoch " + std::to_string(epoch) + ", batch starting at " +
                                       std::to_string(start) + ": loss " + std::to_string(loss) + ", gradient norm " +
                                       std::to_string(norm));
      }
      optimizer.step(params);
      total += loss * static_cast<double>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = total / static_cast<double>(order.size());
    const Matrix outputs = predict(net, data);
    if (net.config().classification()) {
      const std::vector<int> pred = decide(outputs);
      rec.metric = metrics::accuracy(metrics::confusion_matrix(data.classes, pred, net.config().classes));
    } else {
      rec.metric = metrics::rmse(data.targets, std::span<const double>(outputs.col(0).data(), data.size()));
    }
    spdlog::debug("epoch {} loss {:.6f} metric {:.4f}", epoch, rec.loss, rec.metric);
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

// --- checkpoint -----------------------------------------------------------------

void store(FusionNetwork& net, nn::Adam& optimizer, Checkpoint& ckpt) {
  const nn::ParameterList params = net.parameters();
  for (const auto& [name, p] : params) ckpt.tensors.push_back({name, p->value});
  for (const auto& [name, m] : net.buffers()) ckpt.tensors.push_back({name, *m});
  ckpt.tensors.push_back({"adam.steps", Matrix::Constant(1, 1, static_cast<double>(optimizer.steps()))});
  if (optimizer.first_moments().size() == params.size()) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      ckpt.tensors.push_back({"adam.m." + params[k].first, optimizer.first_moments()[k]});
      ckpt.tensors.push_back({"adam.v." + params[k].first, optimizer.second_moments()[k]});
    }
  }
}

void load(FusionNetwork& net, nn::Adam& optimizer, const Checkpoint& ckpt) {
  auto assign = [&](const std::string& name, Matrix& dst) {
    const Matrix& src = ckpt.tensor(name);
    if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
      fail(ErrorKind::Format, "checkpoint tensor '" + name + "' has shape " + std::to_string(src.rows()) + "x" +
                                  std::to_string(src.cols()) + ", model expects " + std::to_string(dst.rows()) + "x" +
                                  std::to_string(dst.cols()));
    }
    dst = src;
  };
  const nn::ParameterList params = net.parameters();
  for (const auto& [name, p] : params) {
    assign(name, p->value);
    p->grad.setZero();
  }
  for (const auto& [name, m] : net.buffers()) assign(name, *m);
  const auto steps = static_cast<std::int64_t>(ckpt.has("adam.steps") ? ckpt.tensor("adam.steps")(0, 0) : 0.0);
  std::vector<Matrix> m, v;
  if (!params.empty() && ckpt.has("adam.m." + params.front().first)) {
    for (const auto& [name, p] : params) {
      m.push_back(p->value);
      v.push_back(p->value);
      assign("adam.m." + name, m.back());
      assign("adam.v." + name, v.back());
    }
  }
  optimizer.restore(steps, std::move(m), std::move(v));
}

}  // namespace spdbci::model
