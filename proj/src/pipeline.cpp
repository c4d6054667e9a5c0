#include "spdbci/pipeline.hpp"

#include "spdbci/checkpoint.hpp"
#include "spdbci/error.hpp"
#include "spdbci/features.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <random>
#include <sstream>
#include <thread>

namespace spdbci::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// --- small utilities -------------------------------------------------------------

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Runs fn(0..n-1) on up to `jobs` threads. Every index runs; the error of
/// the lowest failing index is rethrown so failures do not depend on timing.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<std::string> list_stems(const fs::path& dir, const std::string& suffix) {
  if (!fs::is_directory(dir)) fail(ErrorKind::Data, "directory not found: " + dir.string());
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > suffix.size() && name.ends_with(suffix)) {
      stems.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Data, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::Data, "write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, source + ": " + e.what());
  }
}

fs::path preprocessed_dir(const Config& c) { return c.work_dir / "preprocessed"; }
fs::path features_dir(const Config& c) { return c.work_dir / "features"; }
fs::path models_dir(const Config& c) { return c.work_dir / "models"; }
fs::path metrics_dir(const Config& c) { return c.work_dir / "metrics"; }

std::string band_text(const std::vector<signal::BandSpec>& bands) {
  std::ostringstream s;
  for (std::size_t b = 0; b < bands.size(); ++b) s << (b ? ", " : "") << bands[b].low_hz << "-" << bands[b].high_hz;
  return s.str();
}

// --- configuration parsing -----------------------------------------------------

struct Entry {
  std::string value;
  int line = 0;
};

class Fields {
 public:
  Fields(std::map<std::string, Entry> entries, std::string source)
      : entries_(std::move(entries)), source_(std::move(source)) {}

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  const std::string* get(const std::string& key) {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    used_.insert(key);
    return &it->second.value;
  }

  std::string where(const std::string& key) const {
    const auto it = entries_.find(key);
    return source_ + ":" + std::to_string(it == entries_.end() ? 0 : it->second.line) + " (" + key + ")";
  }

  [[noreturn]] void bad(const std::string& key, const std::string& why) const {
    fail(ErrorKind::Config, where(key) + ": " + why);
  }

  double number(const std::string& key, const std::string& text) const {
    try {
      std::size_t pos = 0;
      const double v = std::stod(text, &pos);
      if (trim(text.substr(pos)).empty() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    bad(key, "expected a number, got '" + text + "'");
  }

  void set(const std::string& key, double& dst) {
    if (const std::string* v = get(key)) dst = number(key, *v);
  }

  template <typename I>
    requires std::is_integral_v<I>
  void set(const std::string& key, I& dst) {
    if (const std::string* v = get(key)) {
      const double d = number(key, *v);
      if (d != std::floor(d)) bad(key, "expected an integer");
      dst = static_cast<I>(d);
    }
  }

  void set(const std::string& key, bool& dst) {
    if (const std::string* v = get(key)) {
      if (*v == "true" || *v == "yes" || *v == "1") {
        dst = true;
      } else if (*v == "false" || *v == "no" || *v == "0") {
        dst = false;
      } else {
        bad(key, "expected true or false");
      }
    }
  }

  void set(const std::string& key, std::string& dst) {
    if (const std::string* v = get(key)) dst = *v;
  }

  template <typename Parse, typename T>
  void set_enum(const std::string& key, T& dst, Parse parse) {
    if (const std::string* v = get(key)) {
      try {
        dst = parse(*v);
      } catch (const Error& e) {
        bad(key, e.what());
      }
    }
  }

  std::vector<double> numbers(const std::string& key, const std::string& text) const {
    std::vector<double> out;
    for (const std::string& item : split_list(text)) out.push_back(number(key, item));
    return out;
  }

  void unknown_keys_are_errors() const {
    for (const auto& [key, entry] : entries_) {
      if (!used_.count(key)) fail(ErrorKind::Config, source_ + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
    }
  }

 private:
  std::map<std::string, Entry> entries_;
  std::string source_;
  std::set<std::string> used_;
};

std::vector<signal::BandSpec> parse_bands(Fields& f, const std::string& key, const std::string& text, int order) {
  std::vector<signal::BandSpec> bands;
  for (const std::string& item : split_list(text)) {
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) f.bad(key, "bands are written low-high, e.g. 8-13");
    bands.push_back({f.number(key, item.substr(0, dash)), f.number(key, item.substr(dash + 1)), order});
  }
  if (bands.empty()) f.bad(key, "no bands given");
  return bands;
}

void apply_profile_architecture(Config& c) {
  model::ArchitectureConfig& a = c.architecture;
  a = model::ArchitectureConfig{};
  a.classes = c.profile.classes;
  a.output = c.profile.output;
  a.loss = c.profile.loss;
  a.regularizer = c.profile.regularizer;
  c.training = model::TrainingOptions{};
  if (c.profile.name == "synthetic") {
    a.lstm_hidden = 16;
    a.temporal_embedding = 16;
    a.spatial_units = {32, 16};
    a.spatial_dropout = 0.2;
    a.encoder_hidden = 8;
    a.fusion_units = 32;
    c.training.epochs = 40;
  }
}

}  // namespace

// --- profiles --------------------------------------------------------------------

std::vector<std::string> profile_names() { return {"seed", "seed-vig", "bci2a", "bci2b", "synthetic"}; }

Profile builtin_profile(const std::string& name) {
  using model::LossKind;
  using model::OutputActivation;
  using model::Regularizer;
  Profile p;
  p.name = name;
  if (name == "seed") {
    p.fs = 200.0;
    p.bands = signal::classic_rhythm_bands();
    p.seconds = 8.0;
    p.channels = 62;
    p.rank = 48;
    p.classes = 3;
  } else if (name == "seed-vig") {
    p.fs = 200.0;
    p.bands = signal::uniform_bands(0.5, 50.5, 2.0);
    p.seconds = 8.0;
    p.channels = 17;
    p.rank = 11;
    p.classes = 2;
    p.output = OutputActivation::Sigmoid;
    p.loss = LossKind::MeanSquaredError;
  } else if (name == "bci2a") {
    p.fs = 250.0;
    p.bands = signal::uniform_bands(0.5, 50.5, 2.0);
    p.seconds = 4.0;
    p.channels = 22;
    p.rank = 18;
    p.classes = 4;
    p.regularizer = Regularizer::Dropout;
  } else if (name == "bci2b") {
    p.fs = 250.0;
    p.bands = signal::uniform_bands(0.5, 50.5, 2.0);
    p.seconds = 4.0;
    p.channels = 3;
    p.rank = 3;
    p.classes = 2;
    p.output = OutputActivation::Sigmoid;
    p.loss = LossKind::BinaryCrossEntropy;
  } else if (name == "synthetic") {
    p.fs = 200.0;
    p.bands = {{4.0, 7.0, 5}, {8.0, 13.0, 5}, {14.0, 30.0, 5}};
    p.seconds = 4.0;
    p.channels = 4;
    p.rank = 3;
    p.classes = 4;
  } else {
    std::string names;
    for (const auto& n : profile_names()) names += (names.empty() ? "" : ", ") + n;
    fail(ErrorKind::Config, "unknown profile '" + name + "' (expected one of: " + names + ")");
  }
  return p;
}

// --- configuration ---------------------------------------------------------------

namespace {

Config parse_config_from(const std::string& text, const fs::path& base_dir, const std::string& source) {
  std::map<std::string, Entry> entries;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Config, source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    if (entries.count(key)) fail(ErrorKind::Config, source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    entries[key] = {trim(body.substr(eq + 1)), lineno};
  }
  Fields f(std::move(entries), source);

  Config c;
  const std::string* profile = f.get("profile");
  if (!profile) fail(ErrorKind::Config, source + ": missing required key 'profile'");
  c.profile = builtin_profile(*profile);
  apply_profile_architecture(c);

  auto path = [&](const std::string& key, fs::path& dst) {
    if (const std::string* v = f.get(key)) {
      const fs::path p(*v);
      dst = p.is_absolute() ? p : base_dir / p;
    }
  };
  path("input_dir", c.input_dir);
  path("work_dir", c.work_dir);
  path("ingest_csv", c.ingest_csv);
  path("ingest_manifest", c.ingest_manifest);
  f.set("seed", c.seed);
  f.set("jobs", c.jobs);
  f.set("continue_on_error", c.continue_on_error);

  // acquisition; task keys are fixed for the paper's datasets
  const bool synthetic = c.profile.name == "synthetic";
  for (const char* key : {"classes", "output", "loss"}) {
    if (!synthetic && f.has(key)) f.bad(key, "fixed by profile '" + c.profile.name + "'");
  }
  f.set("fs", c.profile.fs);
  f.set("segment_seconds", c.profile.seconds);
  f.set("channels", c.profile.channels);
  f.set("rank", c.profile.rank);
  f.set("classes", c.profile.classes);
  f.set_enum("output", c.profile.output, model::parse_output_activation);
  f.set_enum("loss", c.profile.loss, model::parse_loss);
  f.set_enum("regularizer", c.profile.regularizer, model::parse_regularizer);
  int order = 5;
  f.set("filter_order", order);
  if (const std::string* v = f.get("bands")) {
    c.profile.bands = parse_bands(f, "bands", *v, order);
  } else {
    for (auto& b : c.profile.bands) b.order = order;
  }
  c.architecture.classes = c.profile.classes;
  c.architecture.output = c.profile.output;
  c.architecture.loss = c.profile.loss;
  c.architecture.regularizer = c.profile.regularizer;

  // preprocessing
  if (const std::string* v = f.get("broadband")) {
    const auto bands = parse_bands(f, "broadband", *v, 5);
    if (bands.size() != 1) f.bad("broadband", "expected a single low-high range");
    c.preprocess.broadband_low_hz = bands[0].low_hz;
    c.preprocess.broadband_high_hz = bands[0].high_hz;
  }
  if (const std::string* v = f.get("notch_hz")) {
    if (*v == "none") {
      c.preprocess.notch_hz.reset();
    } else {
      c.preprocess.notch_hz = f.number("notch_hz", *v);
    }
  }
  f.set("notch_q", c.preprocess.notch_q);
  f.set("normalize", c.preprocess.normalize);
  if (const std::string* v = f.get("constant_channels")) {
    if (*v == "error") {
      c.preprocess.constant = signal::ConstantChannel::Error;
    } else if (*v == "zero") {
      c.preprocess.constant = signal::ConstantChannel::MapToZero;
    } else {
      f.bad("constant_channels", "expected error or zero");
    }
  }

  // spatial stream
  if (const std::string* v = f.get("rank_mode")) {
    if (*v == "fixed") {
      c.rank_mode = RankMode::Fixed;
    } else if (*v == "grid") {
      c.rank_mode = RankMode::Grid;
    } else {
      f.bad("rank_mode", "expected fixed or grid");
    }
  }
  f.set("shared_filter", c.shared_filter);
  f.set("ridge", c.ridge);
  if (const std::string* v = f.get("reference")) {
    if (*v == "batch-mean") {
      c.reference = spd::ReferencePolicy::BatchMean;
    } else if (*v == "train-mean") {
      c.reference = spd::ReferencePolicy::TrainMean;
    } else {
      f.bad("reference", "expected batch-mean or train-mean");
    }
  }
  f.set("test_fraction", c.test_fraction);
  f.set("validation_fraction", c.validation_fraction);

  // network
  model::ArchitectureConfig& a = c.architecture;
  f.set("lstm_layers", a.lstm_layers);
  f.set("lstm_hidden", a.lstm_hidden);
  if (const std::string* v = f.get("lstm_dropout")) a.lstm_dropout = f.numbers("lstm_dropout", *v);
  f.set("leaky_slope", a.leaky_slope);
  f.set_enum("attention", a.attention, model::parse_attention);
  f.set("temporal_embedding", a.temporal_embedding);
  if (const std::string* v = f.get("spatial_units")) {
    a.spatial_units.clear();
    for (double u : f.numbers("spatial_units", *v)) a.spatial_units.push_back(static_cast<Eigen::Index>(u));
  }
  f.set("spatial_dropout", a.spatial_dropout);
  f.set("encoder_hidden", a.encoder_hidden);
  f.set("fusion_units", a.fusion_units);
  f.set_enum("fusion", a.fusion, model::parse_fusion);
  f.set("epochs", c.training.epochs);
  f.set("batch_size", c.training.batch_size);
  f.set("learning_rate", c.training.adam.learning_rate);
  f.set("clip_norm", c.training.clip_norm);
  if (const std::string* v = f.get("variants")) c.variants = split_list(*v);

  f.set("synth_task", c.synth_task);
  f.set("synth_per_class", c.synth_per_class);
  f.set("synth_noise", c.synth_noise);

  f.unknown_keys_are_errors();

  // consistency
  const Profile& p = c.profile;
  if (!(p.fs > 0.0) || !(p.seconds > 0.0) || p.channels < 1) fail(ErrorKind::Config, source + ": fs, segment_seconds and channels must be positive");
  if (p.rank < 1 || p.rank > p.channels) fail(ErrorKind::Config, source + ": rank must lie in [1, channels]");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) fail(ErrorKind::Config, source + ": test_fraction must lie in (0, 1)");
  if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0)) {
    fail(ErrorKind::Config, source + ": validation_fraction must lie in (0, 1)");
  }
  if (c.training.epochs < 1 || c.training.batch_size < 1) fail(ErrorKind::Config, source + ": epochs and batch_size must be positive");
  signal::FilterBank(p.bands, p.fs);  // validates the band table
  for (const std::string& v : c.variants) architecture_for(c, v, 1, 1).validate();
  return c;
}

}  // namespace

Config parse_config(const std::string& text, const fs::path& base_dir) {
  return parse_config_from(text, base_dir, "config");
}

Config load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Config c = parse_config_from(ss.str(), path.parent_path(), path.string());
  if (c.work_dir.empty()) c.work_dir = path.parent_path() / "work";
  if (c.input_dir.empty()) c.input_dir = c.work_dir / "raw";
  return c;
}

model::ArchitectureConfig architecture_for(const Config& config, const std::string& variant,
                                           Eigen::Index temporal_features, Eigen::Index spatial_features) {
  model::ArchitectureConfig a = config.architecture;
  a.temporal_features = temporal_features;
  a.spatial_features = spatial_features;
  if (variant == "fused") {
    a.streams = model::StreamMode::Fused;
  } else if (variant == "temporal-only") {
    a.streams = model::StreamMode::TemporalOnly;
  } else if (variant == "spatial-only") {
    a.streams = model::StreamMode::SpatialOnly;
  } else {
    a.streams = model::StreamMode::Fused;
    try {
      a.fusion = model::parse_fusion(variant);
    } catch (const Error&) {
      fail(ErrorKind::Config,
           "unknown variant '" + variant +
               "' (expected fused, temporal-only, spatial-only, attention, soft-attention, independent-sigmoid or "
               "concatenation)");
    }
  }
  return a;
}

// --- feature plumbing ------------------------------------------------------------

SegmentFeatures extract_features(const EegSegment& segment, const signal::FilterBank& bank) {
  const std::vector<EegSegment> per_band = signal::filter_bank_decompose(segment, bank);
  SegmentFeatures out;
  out.temporal = features::build_feature_sequence(per_band, bank.bands(), features::plan_for(segment)).values;
  for (const EegSegment& band : per_band) out.covariances.push_back(spd::scm(band.samples));
  out.label = segment.label;
  return out;
}

spd::TangentSpaceMapper fit_mapper(const Config& config, const std::vector<SegmentFeatures>& train, Eigen::Index rank) {
  if (train.empty()) fail(ErrorKind::Data, "no training segments");
  const std::size_t bands = train.front().covariances.size();
  std::vector<std::vector<spd::SpdMatrix>> per_band(bands);
  for (const SegmentFeatures& item : train) {
    if (item.covariances.size() != bands) fail(ErrorKind::Shape, "segments differ in band count");
    for (std::size_t b = 0; b < bands; ++b) per_band[b].push_back(item.covariances[b]);
  }
  const std::vector<Eigen::Index> ranks{rank};
  return spd::TangentSpaceMapper::fit(per_band, ranks, config.shared_filter, config.ridge);
}

Matrix tangent_features(const spd::TangentSpaceMapper& mapper, const std::vector<SegmentFeatures>& items,
                        spd::ReferencePolicy policy, int batch_size) {
  Matrix out(static_cast<Eigen::Index>(items.size()), mapper.output_length());
  if (items.empty()) return out;
  // BatchMean: ceil(n / batch_size) consecutive groups of near-equal size, so
  // no group is a small remainder with a skewed mean.
  const std::size_t n = items.size();
  const std::size_t groups = policy == spd::ReferencePolicy::TrainMean
                                 ? 1
                                 : (n + static_cast<std::size_t>(std::max(batch_size, 1)) - 1) /
                                       static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t start = g * n / groups;
    const std::size_t end = (g + 1) * n / groups;
    std::vector<std::vector<spd::SpdMatrix>> trials;
    for (std::size_t i = start; i < end; ++i) trials.push_back(items[i].covariances);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        mapper.transform_batch(trials, policy);
  }
  return out;
}

model::Dataset assemble(const std::vector<SegmentFeatures>& items, const Matrix& tangent, bool regression) {
  model::Dataset d;
  d.spatial = tangent;
  for (const SegmentFeatures& item : items) {
    d.sequences.push_back(item.temporal);
    if (std::holds_alternative<std::monostate>(item.label)) fail(ErrorKind::Data, "segment has no label");
    if (regression) {
      d.targets.push_back(std::holds_alternative<int>(item.label) ? std::get<int>(item.label) : std::get<double>(item.label));
    } else {
      if (!std::holds_alternative<int>(item.label)) fail(ErrorKind::Data, "classification needs integer class labels");
      d.classes.push_back(std::get<int>(item.label));
    }
  }
  return d;
}

Split make_split(std::vector<std::string> stems, double test_fraction, std::uint64_t seed) {
  if (stems.size() < 2) fail(ErrorKind::Data, "need at least two segments to split into train and test");
  std::sort(stems.begin(), stems.end());
  std::mt19937_64 rng(seed);
  std::shuffle(stems.begin(), stems.end(), rng);
  auto test_count = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(stems.size())));
  test_count = std::clamp<std::size_t>(test_count, 1, stems.size() - 1);
  Split s;
  s.test.assign(stems.begin(), stems.begin() + static_cast<std::ptrdiff_t>(test_count));
  s.train.assign(stems.begin() + static_cast<std::ptrdiff_t>(test_count), stems.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

namespace {

fs::path temporal_file(const Config& c, const std::string& stem) { return features_dir(c) / (stem + ".temporal.eegf"); }
fs::path scm_file(const Config& c, const std::string& stem) { return features_dir(c) / (stem + ".scm.eegf"); }
fs::path tangent_file(const Config& c, const std::string& stem) { return features_dir(c) / (stem + ".tangent.eegf"); }

Split read_split(const Config& c) {
  const fs::path path = features_dir(c) / "split.json";
  if (!fs::exists(path)) fail(ErrorKind::Data, "missing " + path.string() + " (run the features command first)");
  const json j = parse_json(read_text(path), path.string());
  Split s;
  try {
    s.train = j.at("train").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, path.string() + ": " + e.what());
  }
  return s;
}

std::vector<SegmentFeatures> load_items(const Config& c, const std::vector<std::string>& stems) {
  const auto h = static_cast<Eigen::Index>(c.profile.bands.size());
  const Eigen::Index n = c.profile.channels;
  std::vector<SegmentFeatures> items(stems.size());
  parallel_for(stems.size(), c.jobs, [&](std::size_t i) {
    const data::FeatureFile t = data::read_features(temporal_file(c, stems[i]));
    const data::FeatureFile s = data::read_features(scm_file(c, stems[i]));
    if (t.kind != data::FeatureKind::Temporal || s.kind != data::FeatureKind::CovarianceStack) {
      fail(ErrorKind::Format, stems[i] + ": unexpected feature file kind");
    }
    if (t.values.cols() != 2 * h * n || s.values.rows() != h * n || s.values.cols() != n) {
      fail(ErrorKind::Shape, stems[i] + ": feature dimensions do not match profile '" + c.profile.name + "'");
    }
    SegmentFeatures& item = items[i];
    item.temporal = t.values;
    item.label = t.label;
    for (Eigen::Index b = 0; b < h; ++b) item.covariances.emplace_back(s.values.middleRows(b * n, n));
  });
  return items;
}

json mapper_metadata(const Config& c, const std::string& variant, Eigen::Index rank) {
  json meta;
  meta["profile"] = c.profile.name;
  meta["variant"] = variant;
  meta["fs"] = c.profile.fs;
  meta["channels"] = c.profile.channels;
  meta["bands"] = band_text(c.profile.bands);
  meta["rank"] = rank;
  meta["shared_filter"] = c.shared_filter;
  meta["ridge"] = c.ridge;
  return meta;
}

void store_mapper(const spd::TangentSpaceMapper& mapper, Checkpoint& ckpt) {
  for (std::size_t b = 0; b < mapper.bands(); ++b) {
    ckpt.tensors.push_back({"mapper.band" + std::to_string(b) + ".filter", mapper.filters()[b].weights});
    ckpt.tensors.push_back({"mapper.band" + std::to_string(b) + ".reference", mapper.references()[b].matrix()});
  }
}

struct TrainedModel {
  model::FusionNetwork net;
  nn::Adam optimizer;
  std::vector<model::EpochRecord> log;
};

TrainedModel train_variant(const Config& c, const std::string& variant, const model::Dataset& data) {
  const Eigen::Index f = data.sequences.empty() ? 0 : data.sequences.front().cols();
  TrainedModel m;
  m.net = model::FusionNetwork(architecture_for(c, variant, f, data.spatial.cols()));
  m.net.initialize(c.seed);
  m.optimizer = nn::Adam(c.training.adam);
  m.log = model::train(m.net, m.optimizer, data, c.training, c.seed + 1);
  return m;
}

json evaluation_json(const model::Evaluation& e) {
  json j;
  if (e.classification) {
    j["accuracy"] = e.accuracy;
    j["kappa"] = e.kappa;
    json rows = json::array();
    for (Eigen::Index r = 0; r < e.confusion.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index k = 0; k < e.confusion.cols(); ++k) row.push_back(e.confusion(r, k));
      rows.push_back(row);
    }
    j["confusion"] = rows;
  } else {
    j["rmse"] = e.rmse;
    j["pcc"] = e.pcc;
  }
  return j;
}

// Picks the rank with the best validation score over R in [1, N-1].
Eigen::Index grid_search(const Config& c, const std::vector<SegmentFeatures>& train_items) {
  std::vector<std::size_t> order(train_items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(c.seed + 2);
  std::shuffle(order.begin(), order.end(), rng);
  auto val_count = static_cast<std::size_t>(std::llround(c.validation_fraction * static_cast<double>(order.size())));
  val_count = std::clamp<std::size_t>(val_count, 1, order.size() - 1);
  std::vector<SegmentFeatures> inner, val;
  for (std::size_t k = 0; k < order.size(); ++k) (k < val_count ? val : inner).push_back(train_items[order[k]]);

  const Eigen::Index max_rank = std::max<Eigen::Index>(1, c.profile.channels - 1);
  std::vector<model::Evaluation> results(static_cast<std::size_t>(max_rank));
  const std::string variant = c.variants.front();
  const bool regression = c.profile.regression();
  spdlog::info("rank grid search over R = 1..{} with variant {}", max_rank, variant);
  parallel_for(results.size(), c.jobs, [&](std::size_t k) {
    const auto rank = static_cast<Eigen::Index>(k + 1);
    const spd::TangentSpaceMapper mapper = fit_mapper(c, inner, rank);
    const model::Dataset tr =
        assemble(inner, tangent_features(mapper, inner, spd::ReferencePolicy::TrainMean, c.training.batch_size), regression);
    const model::Dataset va =
        assemble(val, tangent_features(mapper, val, c.reference, c.training.batch_size), regression);
    TrainedModel m = train_variant(c, variant, tr);
    results[k] = model::evaluate(m.net, va);
  });

  std::ostringstream csv;
  csv << std::setprecision(17);
  csv << (regression ? "rank,rmse,pcc\n" : "rank,accuracy,kappa\n");
  Eigen::Index best = 1;
  for (std::size_t k = 0; k < results.size(); ++k) {
    const model::Evaluation& e = results[k];
    csv << k + 1 << "," << (regression ? e.rmse : e.accuracy) << "," << (regression ? e.pcc : e.kappa) << "\n";
    const model::Evaluation& b = results[static_cast<std::size_t>(best - 1)];
    const bool better = regression ? e.rmse < b.rmse : e.accuracy > b.accuracy;
    if (better) best = static_cast<Eigen::Index>(k + 1);
  }
  write_text(models_dir(c) / "grid.csv", csv.str());
  spdlog::info("grid search picked rank {}", best);
  return best;
}

struct VariantResult {
  std::string variant;
  model::Evaluation evaluation;
  Eigen::Index rank = 0;
  std::size_t samples = 0;
};

VariantResult evaluate_variant(const Config& c, const std::string& variant, const std::vector<SegmentFeatures>& test) {
  const fs::path path = models_dir(c) / (variant + ".ckpt");
  if (!fs::exists(path)) fail(ErrorKind::Data, "missing checkpoint for variant '" + variant + "': " + path.string());
  const Checkpoint ckpt = read_checkpoint(path);
  const json meta = parse_json(ckpt.metadata, path.string());
  const json expected = mapper_metadata(c, variant, 0);
  for (const char* key : {"profile", "fs", "channels", "bands"}) {
    if (!meta.contains(key) || meta.at(key) != expected.at(key)) {
      fail(ErrorKind::Config, path.string() + ": checkpoint " + key + " " + (meta.contains(key) ? meta.at(key).dump() : "?") +
                                  " does not match the configured " + expected.at(key).dump());
    }
  }
  const model::ArchitectureConfig arch = model::architecture_from_json(meta.at("architecture").dump());
  const double ridge = meta.value("ridge", 0.0);
  std::vector<spd::SpatialFilter> filters;
  std::vector<spd::SpdMatrix> refs;
  for (std::size_t b = 0; b < c.profile.bands.size(); ++b) {
    filters.push_back({ckpt.tensor("mapper.band" + std::to_string(b) + ".filter"), 1.0});
    refs.emplace_back(ckpt.tensor("mapper.band" + std::to_string(b) + ".reference"));
  }
  const spd::TangentSpaceMapper mapper(std::move(filters), std::move(refs), ridge);

  const model::Dataset data =
      assemble(test, tangent_features(mapper, test, c.reference, c.training.batch_size), c.profile.regression());
  model::FusionNetwork net(arch);
  nn::Adam optimizer;
  model::load(net, optimizer, ckpt);
  VariantResult r;
  r.variant = variant;
  r.evaluation = model::evaluate(net, data);
  r.rank = meta.value("rank", Eigen::Index{0});
  r.samples = data.size();
  return r;
}

std::vector<VariantResult> evaluate_all(const Config& c) {
  if (c.variants.empty()) fail(ErrorKind::Usage, "no variants configured");
  for (const std::string& v : c.variants) {
    const fs::path path = models_dir(c) / (v + ".ckpt");
    if (!fs::exists(path)) fail(ErrorKind::Data, "missing checkpoint for variant '" + v + "': " + path.string());
  }
  const Split split = read_split(c);
  const std::vector<SegmentFeatures> test = load_items(c, split.test);
  std::vector<VariantResult> results(c.variants.size());
  parallel_for(results.size(), c.jobs, [&](std::size_t k) { results[k] = evaluate_variant(c, c.variants[k], test); });
  return results;
}

void print_table(const std::vector<VariantResult>& results, bool regression) {
  std::cout << std::left << std::setw(22) << "variant" << std::setw(8) << "rank" << std::setw(10) << "samples"
            << std::setw(12) << (regression ? "rmse" : "accuracy") << std::setw(12) << (regression ? "pcc" : "kappa")
            << "\n";
  for (const VariantResult& r : results) {
    const auto& e = r.evaluation;
    std::cout << std::left << std::setw(22) << r.variant << std::setw(8) << r.rank << std::setw(10) << r.samples
              << std::fixed << std::setprecision(4) << std::setw(12) << (regression ? e.rmse : e.accuracy)
              << std::setw(12) << (regression ? e.pcc : e.kappa) << "\n";
    std::cout.unsetf(std::ios::floatfield);
  }
}

}  // namespace

// --- commands --------------------------------------------------------------------

void cmd_synth(const Config& c) {
  const Eigen::Index samples = static_cast<Eigen::Index>(std::llround(c.profile.seconds * c.profile.fs));
  const Eigen::Index n = c.profile.channels;
  std::vector<EegSegment> segs;
  if (c.synth_task == "spd") {
    std::vector<Matrix> covs;
    const int k = c.profile.classes;
    for (int cls = 0; cls < k; ++cls) {
      Vector d = Vector::Ones(n);
      d[k > 1 ? (cls * (n - 1)) / (k - 1) : 0] = 2.0;
      covs.push_back(d.asDiagonal());
    }
    segs = data::synth_spd_classes({covs, c.synth_per_class, samples, c.profile.fs, c.synth_noise, c.seed});
  } else if (c.synth_task == "band") {
    data::SynthBandSpec spec;
    for (int cls = 0; cls < c.profile.classes; ++cls) spec.classes.push_back({{10.0 + 10.0 * cls, 2.0}});
    spec.per_class = c.synth_per_class;
    spec.channels = n;
    spec.samples = samples;
    spec.fs = c.profile.fs;
    spec.noise = c.synth_noise;
    spec.seed = c.seed;
    segs = data::synth_band_signals(spec);
  } else if (c.synth_task == "mixed") {
    if (c.profile.classes != 4) fail(ErrorKind::Config, "the mixed synthetic task has four classes");
    data::SynthMixedSpec spec;
    spec.per_class = c.synth_per_class;
    spec.channels = n;
    spec.samples = samples;
    spec.fs = c.profile.fs;
    spec.noise = c.synth_noise;
    spec.seed = c.seed;
    segs = data::synth_mixed(spec);
  } else {
    fail(ErrorKind::Config, "unknown synth_task '" + c.synth_task + "' (expected spd, band or mixed)");
  }
  fs::create_directories(c.input_dir);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    std::ostringstream name;
    name << "seg" << std::setw(5) << std::setfill('0') << i << ".eegs";
    data::write_segment(c.input_dir / name.str(), segs[i]);
  }
  spdlog::info("wrote {} synthetic segments to {}", segs.size(), c.input_dir.string());
}

void cmd_ingest(const Config& c) {
  if (c.ingest_csv.empty() || c.ingest_manifest.empty()) {
    fail(ErrorKind::Config, "ingest needs ingest_csv and ingest_manifest in the config");
  }
  const std::vector<EegSegment> segs = data::ingest_csv(c.ingest_csv, data::read_manifest(c.ingest_manifest));
  fs::create_directories(c.input_dir);
  const std::string stem = c.ingest_csv.stem().string();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    std::ostringstream name;
    name << stem << "_" << std::setw(5) << std::setfill('0') << i << ".eegs";
    data::write_segment(c.input_dir / name.str(), segs[i]);
  }
  spdlog::info("ingested {} segments from {}", segs.size(), c.ingest_csv.string());
}

void cmd_preprocess(const Config& c) {
  const std::vector<std::string> stems = list_stems(c.input_dir, ".eegs");
  if (stems.empty()) fail(ErrorKind::Data, "no .eegs segments in " + c.input_dir.string());
  fs::create_directories(preprocessed_dir(c));
  std::atomic<int> skipped{0};
  std::mutex log_mutex;
  parallel_for(stems.size(), c.jobs, [&](std::size_t i) {
    const fs::path in = c.input_dir / (stems[i] + ".eegs");
    try {
      const EegSegment seg = data::read_segment(in);
      data::write_segment(preprocessed_dir(c) / (stems[i] + ".eegs"), signal::preprocess(seg, c.preprocess));
    } catch (const Error& e) {
      if (!c.continue_on_error) throw Error(e.kind(), in.string() + ": " + e.what());
      std::lock_guard lock(log_mutex);
      spdlog::error("{}: {} (skipped)", in.string(), e.what());
      ++skipped;
    }
  });
  spdlog::info("preprocessed {} segments ({} skipped)", stems.size() - static_cast<std::size_t>(skipped.load()),
               skipped.load());
}

void cmd_features(const Config& c) {
  const std::vector<std::string> stems = list_stems(preprocessed_dir(c), ".eegs");
  if (stems.empty()) fail(ErrorKind::Data, "empty dataset: no preprocessed segments in " + preprocessed_dir(c).string());
  fs::create_directories(features_dir(c));
  const Profile& p = c.profile;
  const signal::FilterBank bank(p.bands, p.fs);
  const auto expected_length = static_cast<Eigen::Index>(std::llround(p.seconds * p.fs));
  std::vector<SegmentFeatures> items(stems.size());
  parallel_for(stems.size(), c.jobs, [&](std::size_t i) {
    const fs::path path = preprocessed_dir(c) / (stems[i] + ".eegs");
    const EegSegment seg = data::read_segment(path);
    if (std::abs(seg.fs - p.fs) > 1e-9 || seg.channels() != p.channels || seg.length() != expected_length) {
      std::ostringstream msg;
      msg << path.string() << ": segment is " << seg.channels() << " channels x " << seg.length() << " samples at "
          << seg.fs << " Hz, profile '" << p.name << "' expects " << p.channels << " x " << expected_length << " at "
          << p.fs << " Hz";
      fail(ErrorKind::Shape, msg.str());
    }
    items[i] = extract_features(seg, bank);
    Matrix stack(static_cast<Eigen::Index>(p.bands.size()) * p.channels, p.channels);
    for (std::size_t b = 0; b < p.bands.size(); ++b) {
      stack.middleRows(static_cast<Eigen::Index>(b) * p.channels, p.channels) = items[i].covariances[b].matrix();
    }
    data::write_features(temporal_file(c, stems[i]), {data::FeatureKind::Temporal, items[i].temporal, seg.label});
    data::write_features(scm_file(c, stems[i]), {data::FeatureKind::CovarianceStack, stack, seg.label});
  });

  const Split split = make_split(stems, c.test_fraction, c.seed);
  json j;
  j["seed"] = c.seed;
  j["train"] = split.train;
  j["test"] = split.test;
  write_text(features_dir(c) / "split.json", j.dump(2) + "\n");

  std::vector<SegmentFeatures> train;
  for (const std::string& s : split.train) train.push_back(items[static_cast<std::size_t>(
      std::lower_bound(stems.begin(), stems.end(), s) - stems.begin())]);
  const spd::TangentSpaceMapper mapper = fit_mapper(c, train, p.rank);
  const Matrix tangent = tangent_features(mapper, items, spd::ReferencePolicy::TrainMean, c.training.batch_size);
  for (std::size_t i = 0; i < stems.size(); ++i) {
    data::write_features(tangent_file(c, stems[i]),
                         {data::FeatureKind::Tangent, tangent.row(static_cast<Eigen::Index>(i)), items[i].label});
  }
  spdlog::info("features for {} segments: L = {}, F = {}, spatial length = {}", stems.size(),
               items.front().temporal.rows(), items.front().temporal.cols(), tangent.cols());
}

void cmd_train(const Config& c) {
  if (c.variants.empty()) fail(ErrorKind::Usage, "no variants configured");
  const Split split = read_split(c);
  const std::vector<SegmentFeatures> train = load_items(c, split.train);
  fs::create_directories(models_dir(c));
  const Eigen::Index rank = c.rank_mode == RankMode::Grid ? grid_search(c, train) : c.profile.rank;

  const spd::TangentSpaceMapper mapper = fit_mapper(c, train, rank);
  const model::Dataset data = assemble(
      train, tangent_features(mapper, train, spd::ReferencePolicy::TrainMean, c.training.batch_size), c.profile.regression());

  parallel_for(c.variants.size(), c.jobs, [&](std::size_t k) {
    const std::string& variant = c.variants[k];
    spdlog::info("training variant {} on {} segments (rank {})", variant, data.size(), rank);
    TrainedModel m = train_variant(c, variant, data);

    std::ostringstream log;
    for (const model::EpochRecord& r : m.log) {
      json line;
      line["epoch"] = r.epoch;
      line["loss"] = r.loss;
      line["metric"] = r.metric;
      log << line.dump() << "\n";
    }
    write_text(models_dir(c) / (variant + ".log.jsonl"), log.str());

    json meta = mapper_metadata(c, variant, rank);
    meta["architecture"] = json::parse(model::architecture_json(m.net.config()));
    Checkpoint ckpt;
    ckpt.metadata = meta.dump();
    model::store(m.net, m.optimizer, ckpt);
    store_mapper(mapper, ckpt);
    write_checkpoint(models_dir(c) / (variant + ".ckpt"), ckpt);
    spdlog::info("variant {} final loss {:.6f}", variant, m.log.empty() ? 0.0 : m.log.back().loss);
  });
}

void cmd_evaluate(const Config& c) {
  const std::vector<VariantResult> results = evaluate_all(c);
  fs::create_directories(metrics_dir(c));
  for (const VariantResult& r : results) {
    json j;
    j["variant"] = r.variant;
    j["profile"] = c.profile.name;
    j["task"] = r.evaluation.classification ? "classification" : "regression";
    j["reference"] = c.reference == spd::ReferencePolicy::BatchMean ? "batch-mean" : "train-mean";
    j["rank"] = r.rank;
    j["samples"] = r.samples;
    j.update(evaluation_json(r.evaluation));
    write_text(metrics_dir(c) / (r.variant + ".json"), j.dump(2) + "\n");
  }
  print_table(results, c.profile.regression());
}

void cmd_ablate(const Config& c) {
  const std::vector<VariantResult> results = evaluate_all(c);
  const bool regression = c.profile.regression();
  std::ostringstream csv;
  csv << std::setprecision(17) << "variant,metric,value\n";
  for (const VariantResult& r : results) {
    const auto& e = r.evaluation;
    if (regression) {
      csv << r.variant << ",rmse," << e.rmse << "\n" << r.variant << ",pcc," << e.pcc << "\n";
    } else {
      csv << r.variant << ",accuracy," << e.accuracy << "\n" << r.variant << ",kappa," << e.kappa << "\n";
    }
  }
  fs::create_directories(c.work_dir);
  write_text(c.work_dir / "ablation.csv", csv.str());
  print_table(results, regression);
}

std::vector<std::string> command_names() {
  return {"synth", "ingest", "preprocess", "features", "train", "evaluate", "ablate"};
}

void run(const std::string& command, const Config& config) {
  if (command == "synth") return cmd_synth(config);
  if (command == "ingest") return cmd_ingest(config);
  if (command == "preprocess") return cmd_preprocess(config);
  if (command == "features") return cmd_features(config);
  if (command == "train") return cmd_train(config);
  if (command == "evaluate") return cmd_evaluate(config);
  if (command == "ablate") return cmd_ablate(config);
  fail(ErrorKind::Usage, "unknown command '" + command + "'");
}

}  // namespace spdbci::pipeline
