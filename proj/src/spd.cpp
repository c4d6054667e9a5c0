#include "spdbci/spd.hpp"

#include "spdbci/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace spdbci::spd {

namespace {

void require_same_dims(std::span<const SpdMatrix> matrices) {
  if (matrices.empty()) fail(ErrorKind::Arity, "need at least one matrix");
  const Eigen::Index n = matrices.front().dim();
  for (const SpdMatrix& m : matrices) {
    if (m.dim() != n) fail(ErrorKind::Shape, "matrices differ in dimension");
  }
}

void require_same_dim(const SpdMatrix& a, const SpdMatrix& b) {
  if (a.dim() != b.dim()) fail(ErrorKind::Shape, "matrices differ in dimension");
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

// Square root and inverse square root of a reference point, computed once.
struct Whitener {
  Matrix root;
  Matrix inv_root;

  explicit Whitener(const SpdMatrix& c) {
    c.require_positive_definite("reference matrix");
    root = c.apply([](double x) { return std::sqrt(x); });
    inv_root = c.apply([](double x) { return 1.0 / std::sqrt(x); });
  }

  SpdMatrix whiten(const SpdMatrix& x) const {
    return SpdMatrix(inv_root * x.matrix() * inv_root);
  }
};

}  // namespace

SpdMatrix::SpdMatrix(const Matrix& entries) {
  if (entries.rows() != entries.cols() || entries.rows() == 0) {
    fail(ErrorKind::Shape, "SPD matrix must be square and non-empty");
  }
  if (!entries.allFinite()) fail(ErrorKind::Data, "matrix has non-finite entries");
  entries_ = symmetrize(entries);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(entries_);
  if (solver.info() != Eigen::Success) fail(ErrorKind::Numerical, "eigendecomposition failed");
  eigenvalues_ = solver.eigenvalues().reverse();
  eigenvectors_ = solver.eigenvectors().rowwise().reverse();
}

bool SpdMatrix::is_positive_definite() const {
  if (eigenvalues_.size() == 0) return false;
  const double top = eigenvalues_[0];
  const double bottom = eigenvalues_[eigenvalues_.size() - 1];
  return top > 0.0 && bottom > kSingularTolerance * top;
}

void SpdMatrix::require_positive_definite(const char* what) const {
  if (is_positive_definite()) return;
  std::ostringstream msg;
  msg << what << " is not positive definite (eigenvalues in ["
      << (eigenvalues_.size() ? eigenvalues_[eigenvalues_.size() - 1] : 0.0) << ", "
      << (eigenvalues_.size() ? eigenvalues_[0] : 0.0) << "])";
  fail(ErrorKind::NearSingular, msg.str());
}

SpdMatrix scm(const Matrix& samples) {
  if (samples.cols() < 2) fail(ErrorKind::Length, "covariance needs at least 2 samples");
  if (!samples.allFinite()) fail(ErrorKind::Data, "samples contain non-finite values");
  return SpdMatrix(samples * samples.transpose() / static_cast<double>(samples.cols() - 1));
}

SpdMatrix euclidean_mean(std::span<const SpdMatrix> matrices) {
  require_same_dims(matrices);
  Matrix sum = Matrix::Zero(matrices.front().dim(), matrices.front().dim());
  for (const SpdMatrix& m : matrices) sum += m.matrix();
  return SpdMatrix(sum / static_cast<double>(matrices.size()));
}

double frobenius_distance(const SpdMatrix& a, const SpdMatrix& b) {
  require_same_dim(a, b);
  return (a.matrix() - b.matrix()).norm();
}

Matrix logm(const SpdMatrix& c) {
  c.require_positive_definite("logm argument");
  return c.apply([](double x) { return std::log(x); });
}

Matrix sqrtm(const SpdMatrix& c) {
  return c.apply([](double x) { return std::sqrt(std::max(x, 0.0)); });
}

Matrix invsqrtm(const SpdMatrix& c) {
  c.require_positive_definite("invsqrtm argument");
  return c.apply([](double x) { return 1.0 / std::sqrt(x); });
}

SpdMatrix expm(const Matrix& symmetric) {
  return SpdMatrix(SpdMatrix(symmetric).apply([](double x) { return std::exp(x); }));
}

double airm_distance(const SpdMatrix& a, const SpdMatrix& b) {
  require_same_dim(a, b);
  b.require_positive_definite("distance argument");
  const SpdMatrix whitened = Whitener(a).whiten(b);
  whitened.require_positive_definite("whitened matrix");
  return std::sqrt(whitened.eigenvalues().array().log().square().sum());
}

Matrix log_map(const SpdMatrix& reference, const SpdMatrix& c) {
  require_same_dim(reference, c);
  const Whitener w(reference);
  return symmetrize(w.root * logm(w.whiten(c)) * w.root);
}

SpdMatrix exp_map(const SpdMatrix& reference, const Matrix& tangent) {
  if (tangent.rows() != reference.dim() || tangent.cols() != reference.dim()) {
    fail(ErrorKind::Shape, "tangent matrix does not match the reference dimension");
  }
  const Whitener w(reference);
  const SpdMatrix inner = expm(w.inv_root * symmetrize(tangent) * w.inv_root);
  return SpdMatrix(w.root * inner.matrix() * w.root);
}

double tangent_norm(const SpdMatrix& reference, const Matrix& tangent) {
  reference.require_positive_definite("reference matrix");
  const Matrix inv = reference.apply([](double x) { return 1.0 / x; });
  const Matrix m = tangent * inv;
  return std::sqrt(std::max((m * m).trace(), 0.0));
}

MeanResult riemannian_mean(std::span<const SpdMatrix> matrices, const MeanOptions& options) {
  require_same_dims(matrices);
  for (const SpdMatrix& m : matrices) m.require_positive_definite("mean argument");

  MeanResult result;
  result.mean = euclidean_mean(matrices);
  const double inv_count = 1.0 / static_cast<double>(matrices.size());
  const Eigen::Index n = matrices.front().dim();

  // Unit steps, halved whenever ||J|| grows: widely dispersed sets make the
  // plain iteration oscillate.
  double step_size = 1.0;
  double previous = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Whitener w(result.mean);
    Matrix inner = Matrix::Zero(n, n);
    for (const SpdMatrix& m : matrices) inner += logm(w.whiten(m));
    inner *= inv_count;
    const Matrix step = symmetrize(w.root * inner * w.root);

    result.iterations = it;
    result.step_norm = step.norm();
    if (result.step_norm > previous) step_size *= 0.5;
    previous = result.step_norm;
    result.mean = SpdMatrix(w.root * expm(step_size * inner).matrix() * w.root);
    if (result.step_norm < options.tolerance) {
      result.converged = true;
      break;
    }
  }
  if (!result.converged) {
    spdlog::warn("Riemannian mean stopped after {} iterations with ||J||_F = {:.3e}",
                 result.iterations, result.step_norm);
  }
  return result;
}

Vector upper_vectorize(const Matrix& s) {
  if (s.rows() != s.cols()) fail(ErrorKind::Shape, "half-vectorization needs a square matrix");
  const Eigen::Index n = s.rows();
  Vector v(tangent_length(n));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    v[k++] = s(i, i);
    for (Eigen::Index j = i + 1; j < n; ++j) v[k++] = std::numbers::sqrt2 * s(i, j);
  }
  return v;
}

Matrix upper_unvectorize(const Vector& v, Eigen::Index dim) {
  if (v.size() != tangent_length(dim)) fail(ErrorKind::Shape, "vector length is not R(R+1)/2");
  Matrix s(dim, dim);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    s(i, i) = v[k++];
    for (Eigen::Index j = i + 1; j < dim; ++j) {
      s(i, j) = s(j, i) = v[k++] / std::numbers::sqrt2;
    }
  }
  return s;
}

Vector tangent_vectorize(const SpdMatrix& reference, const SpdMatrix& c) {
  require_same_dim(reference, c);
  c.require_positive_definite("tangent argument");
  return upper_vectorize(logm(Whitener(reference).whiten(c)));
}

SpdMatrix regularize(const SpdMatrix& c, double gamma) {
  if (gamma == 0.0) return c;
  const double shift = gamma * c.matrix().trace() / static_cast<double>(c.dim());
  return SpdMatrix(c.matrix() + shift * Matrix::Identity(c.dim(), c.dim()));
}

SpatialFilter pca_spatial_filter(std::span<const SpdMatrix> matrices, Eigen::Index rank) {
  const SpdMatrix mean = euclidean_mean(matrices);
  if (rank < 1 || rank > mean.dim()) {
    std::ostringstream msg;
    msg << "rank " << rank << " outside [1, " << mean.dim() << "]";
    fail(ErrorKind::Rank, msg.str());
  }
  SpatialFilter filter;
  filter.weights = mean.eigenvectors().leftCols(rank);
  const double total = mean.eigenvalues().sum();
  filter.retained_variance = total > 0.0 ? mean.eigenvalues().head(rank).sum() / total : 1.0;
  return filter;
}

Matrix reduce(const SpatialFilter& filter, const Matrix& samples) {
  if (samples.rows() != filter.channels()) {
    fail(ErrorKind::Shape, "segment channel count does not match the spatial filter");
  }
  return filter.weights.transpose() * samples;
}

SpdMatrix reduce(const SpatialFilter& filter, const SpdMatrix& c) {
  if (c.dim() != filter.channels()) {
    fail(ErrorKind::Shape, "covariance dimension does not match the spatial filter");
  }
  return SpdMatrix(filter.weights.transpose() * c.matrix() * filter.weights);
}

TangentSpaceMapper::TangentSpaceMapper(std::vector<SpatialFilter> filters,
                                       std::vector<SpdMatrix> references, double ridge)
    : filters_(std::move(filters)), references_(std::move(references)), ridge_(ridge) {
  if (filters_.size() != references_.size()) {
    fail(ErrorKind::Shape, "one reference per spatial filter expected");
  }
}

TangentSpaceMapper TangentSpaceMapper::fit(const std::vector<std::vector<SpdMatrix>>& per_band,
                                           std::span<const Eigen::Index> ranks, bool shared_filter,
                                           double ridge, const MeanOptions& options) {
  if (per_band.empty()) fail(ErrorKind::Arity, "no frequency bands to fit");
  if (ranks.size() != 1 && ranks.size() != per_band.size()) {
    fail(ErrorKind::Config, "ranks must be a single value or one per band");
  }
  auto rank_of = [&](std::size_t b) { return ranks.size() == 1 ? ranks[0] : ranks[b]; };

  TangentSpaceMapper mapper;
  mapper.ridge_ = ridge;
  std::vector<SpdMatrix> band_means;
  if (shared_filter) {
    for (const auto& band : per_band) band_means.push_back(euclidean_mean(band));
    if (ranks.size() != 1) fail(ErrorKind::Config, "a shared spatial filter needs a single rank");
  }
  for (std::size_t b = 0; b < per_band.size(); ++b) {
    mapper.filters_.push_back(shared_filter ? pca_spatial_filter(band_means, rank_of(b))
                                            : pca_spatial_filter(per_band[b], rank_of(b)));
    std::vector<SpdMatrix> reduced;
    reduced.reserve(per_band[b].size());
    for (const SpdMatrix& c : per_band[b]) reduced.push_back(mapper.prepare(b, c));
    mapper.references_.push_back(riemannian_mean(reduced, options).mean);
  }
  return mapper;
}

Eigen::Index TangentSpaceMapper::output_length() const {
  Eigen::Index total = 0;
  for (const SpatialFilter& f : filters_) total += tangent_length(f.rank());
  return total;
}

SpdMatrix TangentSpaceMapper::prepare(std::size_t band, const SpdMatrix& c) const {
  return regularize(reduce(filters_.at(band), c), ridge_);
}

Vector TangentSpaceMapper::transform(std::span<const SpdMatrix> trial_bands) const {
  if (trial_bands.size() != filters_.size()) fail(ErrorKind::Shape, "band count mismatch");
  Vector out(output_length());
  Eigen::Index offset = 0;
  for (std::size_t b = 0; b < filters_.size(); ++b) {
    const Vector v = tangent_vectorize(references_[b], prepare(b, trial_bands[b]));
    out.segment(offset, v.size()) = v;
    offset += v.size();
  }
  return out;
}

Matrix TangentSpaceMapper::transform_batch(const std::vector<std::vector<SpdMatrix>>& trials,
                                           ReferencePolicy policy,
                                           const MeanOptions& options) const {
  Matrix out(static_cast<Eigen::Index>(trials.size()), output_length());
  if (policy == ReferencePolicy::TrainMean) {
    for (std::size_t i = 0; i < trials.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = transform(trials[i]).transpose();
    }
    return out;
  }
  Eigen::Index offset = 0;
  for (std::size_t b = 0; b < filters_.size(); ++b) {
    std::vector<SpdMatrix> reduced;
    reduced.reserve(trials.size());
    for (const auto& trial : trials) {
      if (trial.size() != filters_.size()) fail(ErrorKind::Shape, "band count mismatch");
      reduced.push_back(prepare(b, trial[b]));
    }
    const SpdMatrix reference = riemannian_mean(reduced, options).mean;
    const Eigen::Index len = tangent_length(filters_[b].rank());
    for (std::size_t i = 0; i < reduced.size(); ++i) {
      out.block(static_cast<Eigen::Index>(i), offset, 1, len) =
          tangent_vectorize(reference, reduced[i]).transpose();
    }
    offset += len;
  }
  return out;
}

void MdrmClassifier::fit(std::span<const SpdMatrix> covariances, std::span<const int> labels,
                         const MeanOptions& options) {
  if (covariances.size() != labels.size()) fail(ErrorKind::Shape, "one label per covariance expected");
  if (covariances.empty()) fail(ErrorKind::Arity, "no training covariances");
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<SpdMatrix>> grouped(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) fail(ErrorKind::Data, "class labels must be non-negative");
    grouped[static_cast<std::size_t>(labels[i])].push_back(covariances[i]);
  }
  means_.clear();
  for (int k = 0; k < classes; ++k) {
    if (grouped[static_cast<std::size_t>(k)].empty()) {
      fail(ErrorKind::Data, "class " + std::to_string(k) + " has no training samples");
    }
    means_.push_back(riemannian_mean(grouped[static_cast<std::size_t>(k)], options).mean);
  }
}

std::vector<double> MdrmClassifier::distances(const SpdMatrix& c) const {
  std::vector<double> out;
  out.reserve(means_.size());
  for (const SpdMatrix& m : means_) out.push_back(airm_distance(m, c));
  return out;
}

int MdrmClassifier::predict(const SpdMatrix& c) const {
  if (means_.empty()) fail(ErrorKind::Usage, "classifier has not been fitted");
  const auto d = distances(c);
  int best = 0;
  for (std::size_t k = 1; k < d.size(); ++k) {
    if (d[k] < d[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

}  // namespace spdbci::spd
