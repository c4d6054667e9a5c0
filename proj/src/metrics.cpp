#include "spdbci/metrics.hpp"

#include "spdbci/error.hpp"

#include <cmath>

namespace spdbci::metrics {

namespace {

void require_pairs(std::size_t a, std::size_t b) {
  if (a != b) fail(ErrorKind::Shape, "truth and prediction counts differ");
  if (a == 0) fail(ErrorKind::Arity, "no samples to score");
}

}  // namespace

Confusion confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int classes) {
  require_pairs(truth.size(), predicted.size());
  if (classes <= 0) fail(ErrorKind::Config, "class count must be positive");
  Confusion counts = Confusion::Zero(classes, classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = predicted[i];
    if (t < 0 || t >= classes || p < 0 || p >= classes) {
      fail(ErrorKind::Data, "class index out of range in confusion matrix");
    }
    ++counts(t, p);
  }
  return counts;
}

double accuracy(const Confusion& counts) {
  const auto total = counts.sum();
  if (total == 0) fail(ErrorKind::Arity, "empty confusion matrix");
  return static_cast<double>(counts.trace()) / static_cast<double>(total);
}

double chance_agreement(const Confusion& counts) {
  const double total = static_cast<double>(counts.sum());
  if (total == 0.0) fail(ErrorKind::Arity, "empty confusion matrix");
  double pe = 0.0;
  for (Eigen::Index k = 0; k < counts.rows(); ++k) {
    pe += static_cast<double>(counts.row(k).sum()) * static_cast<double>(counts.col(k).sum());
  }
  return pe / (total * total);
}

double kappa(double p0, double pe) {
  if (pe >= 1.0) return p0 >= 1.0 ? 1.0 : 0.0;
  return (p0 - pe) / (1.0 - pe);
}

double kappa(const Confusion& counts) { return kappa(accuracy(counts), chance_agreement(counts)); }

double rmse(std::span<const double> truth, std::span<const double> predicted) {
  require_pairs(truth.size(), predicted.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) sq += (truth[i] - predicted[i]) * (truth[i] - predicted[i]);
  return std::sqrt(sq / static_cast<double>(truth.size()));
}

double pcc(std::span<const double> truth, std::span<const double> predicted) {
  require_pairs(truth.size(), predicted.size());
  const double n = static_cast<double>(truth.size());
  double mt = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    mt += truth[i];
    mp += predicted[i];
  }
  mt /= n;
  mp /= n;
  double stt = 0.0, spp = 0.0, stp = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double a = truth[i] - mt;
    const double b = predicted[i] - mp;
    stt += a * a;
    spp += b * b;
    stp += a * b;
  }
  if (stt == 0.0 || spp == 0.0) fail(ErrorKind::Degenerate, "PCC undefined: zero variance");
  return stp / std::sqrt(stt * spp);
}

}  // namespace spdbci::metrics
