#pragma once

#include "spdbci/signal.hpp"

#include <span>

namespace spdbci::features {

/// Silent channels are clamped to this power before taking logarithms.
inline constexpr double kPowerFloor = 1e-10;

/// 1-second periodic Hann windows with 50% overlap.
struct StftPlan {
  Eigen::Index window = 0;
  Eigen::Index hop = 0;
  Eigen::Index count = 0;
  double fs = 0.0;
  Vector weights;

  Eigen::Index start(Eigen::Index w) const { return w * hop; }
  double bin_width() const { return fs / static_cast<double>(window); }
};

/// count = floor(2 * seconds - 1).
StftPlan plan_stft(double seconds, double fs);

StftPlan plan_for(const EegSegment& segment);

Vector hann_window(Eigen::Index n);

/// One-sided PSD of frame * window. Scaled so that sum(psd) * bin width equals
/// the mean power of the frame after compensating for window energy.
Vector periodogram(const Eigen::Ref<const Vector>& frame, const Vector& window, double fs);

/// Sum of psd * bin width over bins whose centre lies in [low_hz, high_hz].
double band_power(const Vector& psd, double bin_width, double low_hz, double high_hz);

double log_psd(double power);

/// 0.5 * ln(2 pi e variance), variance clamped at kPowerFloor.
double differential_entropy(double variance);

enum class VarianceEstimate { Periodogram, TimeDomain };

/// L x N natural-log in-band power per window and channel.
Matrix log_psd_feature(const EegSegment& band_segment, const signal::BandSpec& band,
                       const StftPlan& plan);

/// L x N differential entropy per window and channel.
Matrix de_feature(const EegSegment& band_segment, const signal::BandSpec& band,
                  const StftPlan& plan,
                  VarianceEstimate estimate = VarianceEstimate::Periodogram);

/// L windows x F features, F = 2 * H * N. Columns hold every DE value first
/// (band-major, channel-minor), then every log-PSD value in the same order.
struct FeatureSequence {
  Matrix values;

  Eigen::Index windows() const { return values.rows(); }
  Eigen::Index features() const { return values.cols(); }
};

FeatureSequence build_feature_sequence(std::span<const EegSegment> band_segments,
                                       std::span<const signal::BandSpec> bands,
                                       const StftPlan& plan,
                                       VarianceEstimate estimate = VarianceEstimate::Periodogram);

}  // namespace spdbci::features
