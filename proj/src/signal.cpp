#include "spdbci/signal.hpp"

#include "spdbci/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

namespace spdbci {

void validate(const EegSegment& segment) {
  if (segment.samples.rows() < 1) fail(ErrorKind::Shape, "segment has no channels");
  if (segment.samples.cols() < 2) fail(ErrorKind::Length, "segment needs at least 2 samples");
  if (!(segment.fs > 0.0) || !std::isfinite(segment.fs)) {
    fail(ErrorKind::Data, "sampling rate must be positive and finite");
  }
  if (!segment.samples.allFinite()) fail(ErrorKind::Data, "segment contains non-finite samples");
}

}  // namespace spdbci

namespace spdbci::signal {

namespace {

using Complex = std::complex<double>;
constexpr double kPi = std::numbers::pi;

void check_band(double low_hz, double high_hz, double fs) {
  const double nyquist = fs / 2.0;
  if (!(low_hz > 0.0) || !(high_hz > low_hz) || !(high_hz < nyquist)) {
    std::ostringstream msg;
    msg << "band [" << low_hz << ", " << high_hz << "] Hz must satisfy 0 < low < high < "
        << nyquist << " Hz";
    fail(ErrorKind::InvalidBand, msg.str());
  }
}

double prewarp(double f_hz, double fs) { return 2.0 * fs * std::tan(kPi * f_hz / fs); }

Complex bilinear(Complex s, double fs) { return (2.0 * fs + s) / (2.0 * fs - s); }

std::vector<Complex> butterworth_prototype(int order) {
  std::vector<Complex> poles;
  poles.reserve(static_cast<std::size_t>(order));
  for (int k = 0; k < order; ++k) {
    const double theta = kPi * (2.0 * k + order + 1.0) / (2.0 * order);
    poles.emplace_back(std::cos(theta), std::sin(theta));
  }
  return poles;
}

// Pairs conjugate poles into denominators; real poles are paired in order
// and a leftover real pole becomes a first-order section.
std::vector<Biquad> pole_sections(std::vector<Complex> poles) {
  constexpr double kImagTol = 1e-12;
  std::vector<Biquad> sections;
  std::vector<double> reals;
  for (const Complex& p : poles) {
    if (p.imag() > kImagTol) {
      Biquad q;
      q.a1 = -2.0 * p.real();
      q.a2 = std::norm(p);
      sections.push_back(q);
    } else if (std::abs(p.imag()) <= kImagTol) {
      reals.push_back(p.real());
    }
  }
  std::sort(reals.begin(), reals.end());
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
    Biquad q;
    q.a1 = -(reals[i] + reals[i + 1]);
    q.a2 = reals[i] * reals[i + 1];
    sections.push_back(q);
  }
  if (reals.size() % 2 == 1) {
    Biquad q;
    q.a1 = -reals.back();
    q.a2 = 0.0;
    sections.push_back(q);
  }
  return sections;
}

void normalize_gain(std::vector<Biquad>& sections, double f_hz, double fs) {
  const double g = SosFilter(sections).gain(f_hz, fs);
  if (!(g > 0.0) || !std::isfinite(g)) fail(ErrorKind::Numerical, "filter normalization failed");
  const double per_section = std::pow(1.0 / g, 1.0 / static_cast<double>(sections.size()));
  for (Biquad& q : sections) {
    q.b0 *= per_section;
    q.b1 *= per_section;
    q.b2 *= per_section;
  }
}

// Section states after an infinitely long constant input of level 1.
std::vector<std::array<double, 2>> steady_state(const SosFilter& filter) {
  std::vector<std::array<double, 2>> zi;
  double level = 1.0;
  for (const Biquad& q : filter.sections()) {
    const double y = level * (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
    zi.push_back({y - q.b0 * level, q.b2 * level - q.a2 * y});
    level = y;
  }
  return zi;
}

void run_sections(const SosFilter& filter, Vector& x,
                  const std::vector<std::array<double, 2>>& zi, double scale) {
  for (std::size_t s = 0; s < filter.sections().size(); ++s) {
    const Biquad& q = filter.sections()[s];
    double z1 = zi.empty() ? 0.0 : zi[s][0] * scale;
    double z2 = zi.empty() ? 0.0 : zi[s][1] * scale;
    for (Eigen::Index n = 0; n < x.size(); ++n) {
      const double in = x[n];
      const double y = q.b0 * in + z1;
      z1 = q.b1 * in - q.a1 * y + z2;
      z2 = q.b2 * in - q.a2 * y;
      x[n] = y;
    }
  }
}

}  // namespace

SosFilter::SosFilter(std::vector<Biquad> sections) : sections_(std::move(sections)) {}

Complex SosFilter::response(double f_hz, double fs) const {
  const Complex z1 = std::polar(1.0, -2.0 * kPi * f_hz / fs);
  const Complex z2 = z1 * z1;
  Complex h(1.0, 0.0);
  for (const Biquad& q : sections_) {
    h *= (q.b0 + q.b1 * z1 + q.b2 * z2) / (1.0 + q.a1 * z1 + q.a2 * z2);
  }
  return h;
}

std::vector<Complex> SosFilter::poles() const {
  std::vector<Complex> out;
  for (const Biquad& q : sections_) {
    if (q.a2 == 0.0) {
      if (q.a1 != 0.0) out.emplace_back(-q.a1, 0.0);
      continue;
    }
    const Complex disc = std::sqrt(Complex(q.a1 * q.a1 - 4.0 * q.a2, 0.0));
    out.push_back((-q.a1 + disc) / 2.0);
    out.push_back((-q.a1 - disc) / 2.0);
  }
  return out;
}

bool SosFilter::is_stable() const {
  for (const Complex& p : poles()) {
    if (!(std::abs(p) < 1.0)) return false;
  }
  return true;
}

Eigen::Index SosFilter::edge_padding(Eigen::Index length) const {
  Eigen::Index pad = 3 * (order() + 1);
  double radius = 0.0;
  for (const Complex& p : poles()) radius = std::max(radius, std::abs(p));
  if (radius > 0.0 && radius < 1.0) {
    const auto decay = static_cast<Eigen::Index>(std::ceil(std::log(1e-4) / std::log(radius)));
    pad = std::max(pad, decay);
  }
  return std::min(pad, length - 1);
}

SosFilter design_butterworth_bandpass(double low_hz, double high_hz, int order, double fs) {
  if (order < 1) fail(ErrorKind::InvalidBand, "filter order must be >= 1");
  check_band(low_hz, high_hz, fs);

  const double w_low = prewarp(low_hz, fs);
  const double w_high = prewarp(high_hz, fs);
  const double bandwidth = w_high - w_low;
  const double centre = std::sqrt(w_low * w_high);

  std::vector<Complex> digital;
  for (const Complex& p : butterworth_prototype(order)) {
    const Complex half = p * bandwidth / 2.0;
    const Complex root = std::sqrt(half * half - centre * centre);
    digital.push_back(bilinear(half + root, fs));
    digital.push_back(bilinear(half - root, fs));
  }

  std::vector<Biquad> sections = pole_sections(std::move(digital));
  for (Biquad& q : sections) {
    // one zero at z = 1 (s = 0) and one at z = -1 (s = infinity)
    q.b0 = 1.0;
    q.b1 = 0.0;
    q.b2 = -1.0;
  }
  const double digital_centre = fs / kPi * std::atan(centre / (2.0 * fs));
  normalize_gain(sections, digital_centre, fs);
  return SosFilter(std::move(sections));
}

SosFilter design_butterworth_lowpass(double cutoff_hz, int order, double fs) {
  if (order < 1) fail(ErrorKind::InvalidBand, "filter order must be >= 1");
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < fs / 2.0)) {
    fail(ErrorKind::InvalidBand, "low-pass cutoff must lie in (0, fs/2)");
  }
  const double wc = prewarp(cutoff_hz, fs);
  std::vector<Complex> digital;
  for (const Complex& p : butterworth_prototype(order)) digital.push_back(bilinear(p * wc, fs));

  std::vector<Biquad> sections = pole_sections(std::move(digital));
  for (Biquad& q : sections) {
    if (q.a2 == 0.0) {
      q.b0 = 1.0;
      q.b1 = 1.0;
      q.b2 = 0.0;
    } else {
      q.b0 = 1.0;
      q.b1 = 2.0;
      q.b2 = 1.0;
    }
  }
  normalize_gain(sections, 0.0, fs);
  return SosFilter(std::move(sections));
}

SosFilter design_notch(double f0_hz, double fs, double q) {
  if (!(f0_hz > 0.0) || !(f0_hz < fs / 2.0)) {
    std::ostringstream msg;
    msg << "notch frequency " << f0_hz << " Hz must lie in (0, " << fs / 2.0 << ") Hz";
    fail(ErrorKind::InvalidBand, msg.str());
  }
  if (!(q > 0.0)) fail(ErrorKind::InvalidBand, "notch quality factor must be positive");
  const double w0 = 2.0 * kPi * f0_hz / fs;
  const double beta = std::tan(w0 / q / 2.0);
  const double g = 1.0 / (1.0 + beta);
  Biquad section;
  section.b0 = g;
  section.b1 = -2.0 * g * std::cos(w0);
  section.b2 = g;
  section.a1 = -2.0 * g * std::cos(w0);
  section.a2 = 2.0 * g - 1.0;
  return SosFilter({section});
}

Vector filter_causal(const SosFilter& filter, const Eigen::Ref<const Vector>& x) {
  Vector y = x;
  run_sections(filter, y, {}, 0.0);
  return y;
}

Vector filtfilt(const SosFilter& filter, const Eigen::Ref<const Vector>& x) {
  const Eigen::Index n = x.size();
  const Eigen::Index minimum = 3 * (filter.order() + 1);
  if (n <= minimum) {
    std::ostringstream msg;
    msg << "zero-phase filtering needs more than " << minimum << " samples, got " << n;
    fail(ErrorKind::Length, msg.str());
  }
  const Eigen::Index pad = filter.edge_padding(n);

  Vector ext(n + 2 * pad);
  for (Eigen::Index i = 0; i < pad; ++i) {
    ext[i] = 2.0 * x[0] - x[pad - i];
    ext[n + pad + i] = 2.0 * x[n - 1] - x[n - 2 - i];
  }
  ext.segment(pad, n) = x;

  const auto zi = steady_state(filter);
  run_sections(filter, ext, zi, ext[0]);
  ext.reverseInPlace();
  run_sections(filter, ext, zi, ext[0]);
  ext.reverseInPlace();
  return ext.segment(pad, n);
}

EegSegment apply_filter_zero_phase(const SosFilter& filter, const EegSegment& segment) {
  EegSegment out = segment;
  for (Eigen::Index c = 0; c < segment.samples.rows(); ++c) {
    out.samples.row(c) = filtfilt(filter, segment.samples.row(c).transpose()).transpose();
  }
  return out;
}

EegSegment notch_filter(const EegSegment& segment, double f0_hz, double q) {
  return apply_filter_zero_phase(design_notch(f0_hz, segment.fs, q), segment);
}

EegSegment minmax_normalize(const EegSegment& segment, ConstantChannel constant) {
  EegSegment out = segment;
  for (Eigen::Index c = 0; c < segment.samples.rows(); ++c) {
    auto row = out.samples.row(c);
    const double lo = row.minCoeff();
    const double hi = row.maxCoeff();
    if (lo == -1.0 && hi == 1.0) continue;
    if (!(hi > lo)) {
      if (constant == ConstantChannel::MapToZero) {
        row.setZero();
        continue;
      }
      fail(ErrorKind::Degenerate, "channel " + std::to_string(c) + " is constant");
    }
    const double range = hi - lo;
    for (Eigen::Index t = 0; t < row.size(); ++t) row[t] = 2.0 * (row[t] - lo) / range - 1.0;
  }
  return out;
}

FilterBank::FilterBank(std::vector<BandSpec> bands, double fs) : bands_(std::move(bands)), fs_(fs) {
  if (bands_.empty()) fail(ErrorKind::Config, "filter bank needs at least one band");
  for (std::size_t b = 1; b < bands_.size(); ++b) {
    if (bands_[b].low_hz < bands_[b - 1].high_hz) {
      fail(ErrorKind::InvalidBand, "filter bank bands must be ordered and non-overlapping");
    }
  }
  filters_.reserve(bands_.size());
  for (const BandSpec& band : bands_) {
    filters_.push_back(design_butterworth_bandpass(band.low_hz, band.high_hz, band.order, fs));
  }
}

std::vector<BandSpec> classic_rhythm_bands(int order) {
  return {{1.0, 3.0, order}, {4.0, 7.0, order}, {8.0, 13.0, order},
          {14.0, 30.0, order}, {31.0, 50.0, order}};
}

std::vector<BandSpec> uniform_bands(double start_hz, double stop_hz, double width_hz, int order) {
  if (!(width_hz > 0.0) || !(stop_hz > start_hz)) {
    fail(ErrorKind::InvalidBand, "uniform bands need width > 0 and stop > start");
  }
  const auto count = static_cast<int>(std::lround((stop_hz - start_hz) / width_hz));
  std::vector<BandSpec> bands;
  for (int i = 0; i < count; ++i) {
    bands.push_back({start_hz + i * width_hz, start_hz + (i + 1) * width_hz, order});
  }
  return bands;
}

std::vector<EegSegment> filter_bank_decompose(const EegSegment& segment, const FilterBank& bank) {
  if (segment.fs != bank.fs()) {
    fail(ErrorKind::Config, "filter bank was designed for a different sampling rate");
  }
  std::vector<EegSegment> out;
  out.reserve(bank.size());
  for (const SosFilter& filter : bank.filters()) {
    out.push_back(apply_filter_zero_phase(filter, segment));
  }
  return out;
}

EegSegment preprocess(const EegSegment& segment, const PreprocessOptions& options) {
  validate(segment);
  EegSegment out = apply_filter_zero_phase(
      design_butterworth_bandpass(options.broadband_low_hz, options.broadband_high_hz,
                                  options.broadband_order, segment.fs),
      segment);
  if (options.notch_hz) out = notch_filter(out, *options.notch_hz, options.notch_q);
  if (options.normalize) out = minmax_normalize(out, options.constant);
  return out;
}

EegSegment decimate(const EegSegment& segment, int factor) {
  if (factor < 1) fail(ErrorKind::Config, "decimation factor must be >= 1");
  if (factor == 1) return segment;
  const double new_fs = segment.fs / factor;
  const SosFilter lowpass = design_butterworth_lowpass(0.8 * new_fs / 2.0, 5, segment.fs);
  const EegSegment smooth = apply_filter_zero_phase(lowpass, segment);

  const Eigen::Index length = (segment.length() + factor - 1) / factor;
  EegSegment out;
  out.fs = new_fs;
  out.label = segment.label;
  out.samples.resize(segment.channels(), length);
  for (Eigen::Index t = 0; t < length; ++t) out.samples.col(t) = smooth.samples.col(t * factor);
  return out;
}

}  // namespace spdbci::signal
