#include "spdbci/features.hpp"

#include "spdbci/error.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>
#include <sstream>

namespace spdbci::features {

namespace {

constexpr double kTwoPiE = 2.0 * std::numbers::pi * std::numbers::e;

void check_plan(const StftPlan& plan, const EegSegment& segment) {
  if (segment.fs != plan.fs) fail(ErrorKind::Shape, "segment sampling rate differs from the STFT plan");
  const Eigen::Index needed = plan.start(plan.count - 1) + plan.window;
  if (segment.length() < needed) {
    std::ostringstream msg;
    msg << "segment has " << segment.length() << " samples, STFT plan needs " << needed;
    fail(ErrorKind::Length, msg.str());
  }
}

template <typename PerWindow>
Matrix per_window(const EegSegment& segment, const StftPlan& plan, PerWindow&& fn) {
  check_plan(plan, segment);
  Matrix out(plan.count, segment.channels());
  for (Eigen::Index c = 0; c < segment.channels(); ++c) {
    for (Eigen::Index w = 0; w < plan.count; ++w) {
      out(w, c) = fn(segment.samples.row(c).segment(plan.start(w), plan.window).transpose());
    }
  }
  return out;
}

}  // namespace

StftPlan plan_stft(double seconds, double fs) {
  if (!(fs > 0.0)) fail(ErrorKind::Config, "sampling rate must be positive");
  if (!(seconds >= 1.0)) fail(ErrorKind::Length, "segment shorter than one 1-second window");
  StftPlan plan;
  plan.fs = fs;
  plan.window = static_cast<Eigen::Index>(std::lround(fs));
  plan.hop = plan.window / 2;
  plan.count = static_cast<Eigen::Index>(std::floor(2.0 * seconds - 1.0 + 1e-9));
  plan.weights = hann_window(plan.window);
  const auto available = static_cast<Eigen::Index>(std::llround(seconds * fs));
  if (plan.start(plan.count - 1) + plan.window > available) {
    fail(ErrorKind::Length, "STFT windows do not fit inside the segment");
  }
  return plan;
}

StftPlan plan_for(const EegSegment& segment) { return plan_stft(segment.seconds(), segment.fs); }

Vector hann_window(Eigen::Index n) {
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

Vector periodogram(const Eigen::Ref<const Vector>& frame, const Vector& window, double fs) {
  if (frame.size() != window.size() || frame.size() < 2) {
    fail(ErrorKind::Shape, "periodogram frame and window lengths differ");
  }
  thread_local Eigen::FFT<double> fft;
  const Eigen::Index n = frame.size();
  Vector windowed = frame.cwiseProduct(window);
  Eigen::VectorXcd spectrum;
  fft.fwd(spectrum, windowed);

  const double scale = 1.0 / (fs * window.squaredNorm());
  Vector psd(n / 2 + 1);
  for (Eigen::Index k = 0; k <= n / 2; ++k) {
    const bool unpaired = (k == 0) || (n % 2 == 0 && k == n / 2);
    psd[k] = (unpaired ? 1.0 : 2.0) * std::norm(spectrum[k]) * scale;
  }
  return psd;
}

double band_power(const Vector& psd, double bin_width, double low_hz, double high_hz) {
  double power = 0.0;
  for (Eigen::Index k = 0; k < psd.size(); ++k) {
    const double f = static_cast<double>(k) * bin_width;
    if (f >= low_hz - 1e-9 && f <= high_hz + 1e-9) power += psd[k];
  }
  return power * bin_width;
}

double log_psd(double power) { return std::log(std::max(power, kPowerFloor)); }

double differential_entropy(double variance) {
  return 0.5 * std::log(kTwoPiE * std::max(variance, kPowerFloor));
}

namespace {

Matrix band_power_matrix(const EegSegment& segment, const signal::BandSpec& band,
                         const StftPlan& plan) {
  return per_window(segment, plan, [&](const Vector& frame) {
    return band_power(periodogram(frame, plan.weights, plan.fs), plan.bin_width(), band.low_hz,
                      band.high_hz);
  });
}

Matrix variance_matrix(const EegSegment& segment, const StftPlan& plan) {
  return per_window(segment, plan, [](const Vector& frame) {
    const double mean = frame.mean();
    return (frame.array() - mean).square().sum() / static_cast<double>(frame.size() - 1);
  });
}

}  // namespace

Matrix log_psd_feature(const EegSegment& band_segment, const signal::BandSpec& band,
                       const StftPlan& plan) {
  return band_power_matrix(band_segment, band, plan).unaryExpr([](double p) { return log_psd(p); });
}

Matrix de_feature(const EegSegment& band_segment, const signal::BandSpec& band,
                  const StftPlan& plan, VarianceEstimate estimate) {
  const Matrix var = estimate == VarianceEstimate::TimeDomain
                         ? variance_matrix(band_segment, plan)
                         : band_power_matrix(band_segment, band, plan);
  return var.unaryExpr([](double v) { return differential_entropy(v); });
}

FeatureSequence build_feature_sequence(std::span<const EegSegment> band_segments,
                                       std::span<const signal::BandSpec> bands,
                                       const StftPlan& plan, VarianceEstimate estimate) {
  if (band_segments.empty() || band_segments.size() != bands.size()) {
    fail(ErrorKind::Shape, "need one band-limited segment per band");
  }
  const Eigen::Index channels = band_segments.front().channels();
  const auto h = static_cast<Eigen::Index>(bands.size());
  for (const EegSegment& s : band_segments) {
    if (s.channels() != channels) fail(ErrorKind::Shape, "band segments disagree on channel count");
  }

  FeatureSequence seq;
  seq.values.resize(plan.count, 2 * h * channels);
  for (Eigen::Index b = 0; b < h; ++b) {
    const auto& segment = band_segments[static_cast<std::size_t>(b)];
    const auto& band = bands[static_cast<std::size_t>(b)];
    const Matrix power = band_power_matrix(segment, band, plan);
    const Matrix var = estimate == VarianceEstimate::TimeDomain ? variance_matrix(segment, plan) : power;
    seq.values.middleCols(b * channels, channels) =
        var.unaryExpr([](double v) { return differential_entropy(v); });
    seq.values.middleCols((h + b) * channels, channels) =
        power.unaryExpr([](double p) { return log_psd(p); });
  }
  return seq;
}

}  // namespace spdbci::features
