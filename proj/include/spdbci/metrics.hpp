#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

namespace spdbci::metrics {

/// counts(i, j): samples of true class i predicted as class j.
using Confusion = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

Confusion confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int classes);

/// Observed agreement P0, i.e. accuracy.
double accuracy(const Confusion& counts);

/// Chance agreement from the empirical marginals.
double chance_agreement(const Confusion& counts);

/// (P0 - Pe) / (1 - Pe). When Pe = 1 every sample sits in one class on both
/// sides; that case is reported as 1 (perfect) or 0.
double kappa(double p0, double pe);
double kappa(const Confusion& counts);

double rmse(std::span<const double> truth, std::span<const double> predicted);

/// Pearson correlation; throws Degenerate if either side has zero variance.
double pcc(std::span<const double> truth, std::span<const double> predicted);

}  // namespace spdbci::metrics
