#pragma once

#include <Eigen/Dense>

#include <complex>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace spdbci {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Class index, real-valued target, or nothing.
using Label = std::variant<std::monostate, int, double>;

/// One multichannel trial: channels in rows, samples in columns.
struct EegSegment {
  Matrix samples;
  double fs = 0.0;
  Label label;

  Eigen::Index channels() const { return samples.rows(); }
  Eigen::Index length() const { return samples.cols(); }
  double seconds() const { return static_cast<double>(samples.cols()) / fs; }
};

/// Throws Data/Shape errors when the segment violates N >= 1, T >= 2,
/// fs > 0 or contains non-finite samples.
void validate(const EegSegment& segment);

}  // namespace spdbci

namespace spdbci::signal {

struct BandSpec {
  double low_hz = 0.0;
  double high_hz = 0.0;
  int order = 5;
};

/// Transposed direct-form II biquad, a0 normalized to 1.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

/// Cascade of second-order sections.
class SosFilter {
 public:
  SosFilter() = default;
  explicit SosFilter(std::vector<Biquad> sections);

  const std::vector<Biquad>& sections() const { return sections_; }

  /// Digital filter order (twice the number of sections).
  int order() const { return 2 * static_cast<int>(sections_.size()); }

  std::complex<double> response(double f_hz, double fs) const;
  double gain(double f_hz, double fs) const { return std::abs(response(f_hz, fs)); }

  /// Roots of every section denominator.
  std::vector<std::complex<double>> poles() const;

  bool is_stable() const;

  /// Samples to pad on each side for forward-backward filtering.
  Eigen::Index edge_padding(Eigen::Index length) const;

 private:
  std::vector<Biquad> sections_;
};

/// Analog Butterworth prototype, low-pass to band-pass transform, bilinear
/// transform with pre-warped edges. Unity gain at the geometric centre.
SosFilter design_butterworth_bandpass(double low_hz, double high_hz, int order, double fs);

SosFilter design_butterworth_lowpass(double cutoff_hz, int order, double fs);

/// Second-order IIR notch with quality factor q.
SosFilter design_notch(double f0_hz, double fs, double q = 30.0);

/// Single causal pass from rest.
Vector filter_causal(const SosFilter& filter, const Eigen::Ref<const Vector>& x);

/// Forward-backward pass with odd reflection padding and steady-state
/// initial conditions.
Vector filtfilt(const SosFilter& filter, const Eigen::Ref<const Vector>& x);

EegSegment apply_filter_zero_phase(const SosFilter& filter, const EegSegment& segment);

EegSegment notch_filter(const EegSegment& segment, double f0_hz = 50.0, double q = 30.0);

enum class ConstantChannel { Error, MapToZero };

/// Per-channel affine rescale onto [-1, 1].
EegSegment minmax_normalize(const EegSegment& segment,
                            ConstantChannel constant = ConstantChannel::Error);

class FilterBank {
 public:
  FilterBank(std::vector<BandSpec> bands, double fs);

  const std::vector<BandSpec>& bands() const { return bands_; }
  const std::vector<SosFilter>& filters() const { return filters_; }
  std::size_t size() const { return bands_.size(); }
  double fs() const { return fs_; }

 private:
  std::vector<BandSpec> bands_;
  std::vector<SosFilter> filters_;
  double fs_;
};

/// delta, theta, alpha, beta, gamma.
std::vector<BandSpec> classic_rhythm_bands(int order = 5);

/// Contiguous bands of equal width covering [start_hz, stop_hz].
std::vector<BandSpec> uniform_bands(double start_hz, double stop_hz, double width_hz,
                                    int order = 5);

std::vector<EegSegment> filter_bank_decompose(const EegSegment& segment, const FilterBank& bank);

struct PreprocessOptions {
  double broadband_low_hz = 0.5;
  double broadband_high_hz = 70.0;
  int broadband_order = 5;
  std::optional<double> notch_hz = 50.0;
  double notch_q = 30.0;
  bool normalize = true;
  ConstantChannel constant = ConstantChannel::Error;
};

/// Broadband band-pass, notch, then min-max normalization.
EegSegment preprocess(const EegSegment& segment, const PreprocessOptions& options = {});

/// Anti-aliased integer-factor decimation (zero-phase low-pass at 0.8 of
/// the new Nyquist frequency, then every factor-th sample).
EegSegment decimate(const EegSegment& segment, int factor);

}  // namespace spdbci::signal
