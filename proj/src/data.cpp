#include "spdbci/data.hpp"

#include "binary_io.hpp"
#include "spdbci/error.hpp"

#include <Eigen/Cholesky>

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace spdbci::data {

namespace {

constexpr char kSegmentMagic[4] = {'E', 'E', 'G', 'S'};
constexpr char kFeatureMagic[4] = {'E', 'E', 'G', 'F'};
constexpr std::uint32_t kVersion = 1;

void write_label(io::Writer& w, const Label& label) {
  if (std::holds_alternative<int>(label)) {
    w.u32(1);
    w.i64(std::get<int>(label));
  } else if (std::holds_alternative<double>(label)) {
    w.u32(2);
    w.f64(std::get<double>(label));
  } else {
    w.u32(0);
    w.u64(0);
  }
}

Label read_label(io::Reader& r) {
  const std::uint32_t kind = r.u32("label kind");
  switch (kind) {
    case 0: r.u64("label value"); return std::monostate{};
    case 1: return static_cast<int>(r.i64("label value"));
    case 2: return r.f64("label value");
    default:
      fail(ErrorKind::Format, r.source() + ": unknown label kind " + std::to_string(kind) + " at byte offset " +
                                  std::to_string(r.offset() - 4));
  }
}

void check_magic(io::Reader& r, const char (&expected)[4], const char* what) {
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, expected, 4) != 0) {
    fail(ErrorKind::Format, r.source() + ": bad magic at byte offset 0, not " + std::string(what));
  }
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    fail(ErrorKind::Format, r.source() + ": unsupported version " + std::to_string(version) + " at byte offset 4");
  }
}

void write_values(io::Writer& w, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
  }
}

// Reads rows*cols doubles in one go so a short payload reports its sizes.
Matrix read_values(io::Reader& r, std::uint32_t rows, std::uint32_t cols) {
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> raw(count * 8);
  r.bytes(raw.data(), raw.size(), "payload");
  Matrix m(rows, cols);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[k * 8 + static_cast<std::size_t>(b)]) << (8 * b);
    m(static_cast<Eigen::Index>(k / cols), static_cast<Eigen::Index>(k % cols)) = std::bit_cast<double>(bits);
  }
  return m;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Data, "cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Data, "cannot open " + path.string());
  return in;
}

std::uint32_t checked_u32(Eigen::Index v, const char* what) {
  if (v < 0 || v > static_cast<Eigen::Index>(UINT32_MAX)) fail(ErrorKind::Shape, std::string(what) + " out of range");
  return static_cast<std::uint32_t>(v);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, const std::string& where) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
    fail(ErrorKind::Data, where + ": non-numeric cell '" + cell + "'");
  }
  return v;
}

}  // namespace

// --- segment files --------------------------------------------------------------

void write_segment(const std::filesystem::path& path, const EegSegment& segment) {
  std::ofstream out = open_out(path);
  io::Writer w(out);
  w.bytes(kSegmentMagic, 4);
  w.u32(kVersion);
  w.u32(checked_u32(segment.channels(), "channel count"));
  w.u32(checked_u32(segment.length(), "sample count"));
  w.f64(segment.fs);
  write_label(w, segment.label);
  write_values(w, segment.samples);
  out.flush();
  if (!w.ok()) fail(ErrorKind::Data, "write failed: " + path.string());
}

EegSegment read_segment(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  io::Reader r(in, path.string());
  check_magic(r, kSegmentMagic, "a segment file");
  const std::uint32_t n = r.u32("channel count");
  const std::uint32_t t = r.u32("sample count");
  EegSegment s;
  s.fs = r.f64("sampling rate");
  if (n == 0 || t == 0) fail(ErrorKind::Format, path.string() + ": empty segment header (N or T is zero)");
  if (!(s.fs > 0.0) || !std::isfinite(s.fs)) fail(ErrorKind::Format, path.string() + ": invalid sampling rate in header");
  s.label = read_label(r);
  s.samples = read_values(r, n, t);
  r.expect_end();
  return s;
}

// --- feature files --------------------------------------------------------------

void write_features(const std::filesystem::path& path, const FeatureFile& file) {
  std::ofstream out = open_out(path);
  io::Writer w(out);
  w.bytes(kFeatureMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(file.kind));
  w.u32(checked_u32(file.values.rows(), "feature rows"));
  w.u32(checked_u32(file.values.cols(), "feature columns"));
  write_label(w, file.label);
  write_values(w, file.values);
  out.flush();
  if (!w.ok()) fail(ErrorKind::Data, "write failed: " + path.string());
}

FeatureFile read_features(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  io::Reader r(in, path.string());
  check_magic(r, kFeatureMagic, "a feature file");
  FeatureFile f;
  const std::uint32_t kind = r.u32("feature kind");
  if (kind < 1 || kind > 3) fail(ErrorKind::Format, path.string() + ": unknown feature kind " + std::to_string(kind));
  f.kind = static_cast<FeatureKind>(kind);
  const std::uint32_t rows = r.u32("feature rows");
  const std::uint32_t cols = r.u32("feature columns");
  f.label = read_label(r);
  f.values = read_values(r, rows, cols);
  r.expect_end();
  return f;
}

// --- generators -----------------------------------------------------------------

std::vector<EegSegment> synth_spd_classes(const SynthSpdSpec& spec) {
  if (spec.covariances.empty()) fail(ErrorKind::Config, "need at least one class covariance");
  if (spec.per_class < 1 || spec.samples < 2) fail(ErrorKind::Config, "need per_class >= 1 and samples >= 2");
  const Eigen::Index n = spec.covariances.front().rows();
  std::vector<Matrix> factors;
  for (const Matrix& c : spec.covariances) {
    if (c.rows() != n || c.cols() != n) fail(ErrorKind::Shape, "class covariances differ in shape");
    if (!c.isApprox(c.transpose(), 1e-12)) fail(ErrorKind::NearSingular, "class covariance is not symmetric");
    Eigen::LLT<Matrix> llt(c);
    if (llt.info() != Eigen::Success) fail(ErrorKind::NearSingular, "class covariance is not positive definite");
    factors.push_back(llt.matrixL());
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t k = factors.size();
  std::vector<EegSegment> out;
  for (std::size_t i = 0; i < k * static_cast<std::size_t>(spec.per_class); ++i) {
    const std::size_t cls = i % k;
    Matrix g(n, spec.samples);
    for (Eigen::Index t = 0; t < spec.samples; ++t) {
      for (Eigen::Index c = 0; c < n; ++c) g(c, t) = gauss(rng);
    }
    EegSegment s;
    s.fs = spec.fs;
    s.label = static_cast<int>(cls);
    s.samples = factors[cls] * g;
    if (spec.noise > 0.0) {
      for (Eigen::Index t = 0; t < spec.samples; ++t) {
        for (Eigen::Index c = 0; c < n; ++c) s.samples(c, t) += spec.noise * gauss(rng);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<EegSegment> synth_band_signals(const SynthBandSpec& spec) {
  if (spec.classes.empty()) fail(ErrorKind::Config, "need at least one class");
  if (spec.per_class < 1 || spec.samples < 2 || spec.channels < 1) fail(ErrorKind::Config, "invalid generator sizes");
  for (const auto& tones : spec.classes) {
    for (const Tone& tone : tones) {
      if (tone.amplitude < 0.0) fail(ErrorKind::Config, "tone amplitudes must be non-negative");
    }
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const std::size_t k = spec.classes.size();
  std::vector<EegSegment> out;
  for (std::size_t i = 0; i < k * static_cast<std::size_t>(spec.per_class); ++i) {
    const std::size_t cls = i % k;
    EegSegment s;
    s.fs = spec.fs;
    s.label = static_cast<int>(cls);
    s.samples = Matrix::Zero(spec.channels, spec.samples);
    for (Eigen::Index c = 0; c < spec.channels; ++c) {
      for (const Tone& tone : spec.classes[cls]) {
        const double phi = phase(rng);
        const double w = 2.0 * std::numbers::pi * tone.freq_hz / spec.fs;
        for (Eigen::Index t = 0; t < spec.samples; ++t) s.samples(c, t) += tone.amplitude * std::sin(w * t + phi);
      }
      for (Eigen::Index t = 0; t < spec.samples; ++t) s.samples(c, t) += spec.noise * gauss(rng);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<EegSegment> synth_mixed(const SynthMixedSpec& spec) {
  if (spec.per_class < 1 || spec.samples < 4 || spec.channels < 2) fail(ErrorKind::Config, "invalid generator sizes");
  if (!(std::abs(spec.correlation) < 1.0)) fail(ErrorKind::Config, "correlation must lie in (-1, 1)");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double rho = spec.correlation;
  const double rest = std::sqrt(1.0 - rho * rho);
  const Eigen::Index half = spec.samples / 2;
  const double w = 2.0 * std::numbers::pi * spec.burst.freq_hz / spec.fs;
  std::vector<EegSegment> out;
  for (int i = 0; i < 4 * spec.per_class; ++i) {
    const int cls = i % 4;
    const double sign = (cls / 2) == 0 ? 1.0 : -1.0;
    const Eigen::Index begin = (cls % 2) == 0 ? 0 : half;
    const Eigen::Index end = (cls % 2) == 0 ? half : spec.samples;
    EegSegment s;
    s.fs = spec.fs;
    s.label = cls;
    s.samples.resize(spec.channels, spec.samples);
    for (Eigen::Index t = 0; t < spec.samples; ++t) {
      for (Eigen::Index c = 0; c < spec.channels; ++c) s.samples(c, t) = gauss(rng);
      for (Eigen::Index c = 0; c + 1 < spec.channels; c += 2) {
        s.samples(c + 1, t) = sign * rho * s.samples(c, t) + rest * s.samples(c + 1, t);
      }
    }
    for (Eigen::Index c = 0; c < spec.channels; ++c) {
      const double phi = phase(rng);
      for (Eigen::Index t = begin; t < end; ++t) s.samples(c, t) += spec.burst.amplitude * std::sin(w * t + phi);
      if (spec.noise > 0.0) {
        for (Eigen::Index t = 0; t < spec.samples; ++t) s.samples(c, t) += spec.noise * gauss(rng);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// --- CSV ingestion --------------------------------------------------------------

CsvManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot open manifest " + path.string());
  CsvManifest m;
  bool kind_set = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::Config, path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (key == "fs") {
      m.fs = parse_number(value, where);
    } else if (key == "channels") {
      for (const std::string& name : split(value, ',')) {
        if (!name.empty()) m.channels.push_back(name);
      }
    } else if (key == "label_column") {
      m.label_column = value;
    } else if (key == "label_kind") {
      if (value != "class" && value != "real" && value != "none") {
        fail(ErrorKind::Config, where + ": label_kind must be class, real or none");
      }
      m.label_kind = value;
      kind_set = true;
    } else if (key == "decimate") {
      m.decimate = static_cast<int>(parse_number(value, where));
    } else if (key == "segment_seconds") {
      m.segment_seconds = parse_number(value, where);
    } else {
      fail(ErrorKind::Config, where + ": unknown manifest key '" + key + "'");
    }
  }
  if (!m.label_column && !kind_set) m.label_kind = "none";
  if (!(m.fs > 0.0)) fail(ErrorKind::Config, path.string() + ": manifest needs fs > 0");
  if (!(m.segment_seconds > 0.0)) fail(ErrorKind::Config, path.string() + ": manifest needs segment_seconds > 0");
  if (m.decimate < 1) fail(ErrorKind::Config, path.string() + ": decimate must be >= 1");
  return m;
}

std::vector<EegSegment> ingest_csv(const std::filesystem::path& csv, const CsvManifest& manifest) {
  std::ifstream in(csv);
  if (!in) fail(ErrorKind::Data, "cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Data, csv.string() + ": empty file");
  const std::vector<std::string> header = split(line, ',');

  auto column_of = [&](const std::string& name) {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) return k;
    }
    fail(ErrorKind::Data, csv.string() + ": no column named '" + name + "'");
  };
  std::optional<std::size_t> label_col;
  if (manifest.label_column) label_col = column_of(*manifest.label_column);
  std::vector<std::size_t> channel_cols;
  if (manifest.channels.empty()) {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (k != label_col) channel_cols.push_back(k);
    }
  } else {
    for (const std::string& name : manifest.channels) channel_cols.push_back(column_of(name));
  }
  if (channel_cols.empty()) fail(ErrorKind::Data, csv.string() + ": no channel columns");

  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split(line, ',');
    const std::string where = csv.string() + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) {
      fail(ErrorKind::Data, where + ": ragged row with " + std::to_string(cells.size()) + " cells, header has " +
                                std::to_string(header.size()));
    }
    std::vector<double> row;
    for (std::size_t k : channel_cols) row.push_back(parse_number(cells[k], where));
    rows.push_back(std::move(row));
    if (label_col) labels.push_back(parse_number(cells[*label_col], where));
  }
  if (rows.empty()) fail(ErrorKind::Data, csv.string() + ": no data rows");

  EegSegment record;
  record.fs = manifest.fs;
  record.samples.resize(static_cast<Eigen::Index>(channel_cols.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t c = 0; c < channel_cols.size(); ++c) {
      record.samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t)) = rows[t][c];
    }
  }
  const EegSegment reduced = signal::decimate(record, manifest.decimate);

  const auto seg_len = static_cast<Eigen::Index>(std::llround(manifest.segment_seconds * reduced.fs));
  if (seg_len < 2) fail(ErrorKind::Config, "segment_seconds too short for the sampling rate");
  std::vector<EegSegment> out;
  for (Eigen::Index start = 0; start + seg_len <= reduced.length(); start += seg_len) {
    EegSegment s;
    s.fs = reduced.fs;
    s.samples = reduced.samples.middleCols(start, seg_len);
    if (label_col && manifest.label_kind != "none") {
      const auto first = static_cast<std::size_t>(start * manifest.decimate);
      const auto last = std::min(labels.size(), static_cast<std::size_t>((start + seg_len) * manifest.decimate));
      for (std::size_t r = first; r < last; ++r) {
        if (labels[r] != labels[first]) {
          fail(ErrorKind::Data, csv.string() + ": label changes inside segment starting at row " +
                                    std::to_string(first + 2));
        }
      }
      if (manifest.label_kind == "class") {
        const double v = labels[first];
        if (v != std::floor(v) || v < 0) fail(ErrorKind::Data, csv.string() + ": class label must be a non-negative integer");
        s.label = static_cast<int>(v);
      } else {
        s.label = labels[first];
      }
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) fail(ErrorKind::Data, csv.string() + ": recording shorter than one segment");
  return out;
}

}  // namespace spdbci::data
