#pragma once

#include "spdbci/signal.hpp"

#include <span>
#include <vector>

namespace spdbci::spd {

/// Eigenvalues below this fraction of the largest one make a matrix
/// numerically singular for logm/invsqrtm.
inline constexpr double kSingularTolerance = 1e-12;

/// Symmetric matrix with its eigendecomposition cached at construction.
/// Eigenvalues are sorted in descending order.
class SpdMatrix {
 public:
  SpdMatrix() = default;

  /// Symmetrizes (A + A^T) / 2 before decomposing.
  explicit SpdMatrix(const Matrix& entries);

  const Matrix& matrix() const { return entries_; }
  const Vector& eigenvalues() const { return eigenvalues_; }
  const Matrix& eigenvectors() const { return eigenvectors_; }
  Eigen::Index dim() const { return entries_.rows(); }

  /// All eigenvalues above kSingularTolerance * lambda_max.
  bool is_positive_definite() const;

  /// Throws NearSingular unless positive definite.
  void require_positive_definite(const char* what) const;

  double determinant() const { return eigenvalues_.prod(); }

  /// V f(Lambda) V^T.
  template <typename F>
  Matrix apply(F&& f) const {
    const Vector mapped = eigenvalues_.unaryExpr(f);
    return eigenvectors_ * mapped.asDiagonal() * eigenvectors_.transpose();
  }

 private:
  Matrix entries_;
  Vector eigenvalues_;
  Matrix eigenvectors_;
};

/// C = X X^T / (T - 1) without mean removal.
SpdMatrix scm(const Matrix& samples);

SpdMatrix euclidean_mean(std::span<const SpdMatrix> matrices);

double frobenius_distance(const SpdMatrix& a, const SpdMatrix& b);

/// Matrix functions through the eigendecomposition.
Matrix logm(const SpdMatrix& c);
Matrix sqrtm(const SpdMatrix& c);
Matrix invsqrtm(const SpdMatrix& c);
/// Exponential of any symmetric matrix; the result is SPD.
SpdMatrix expm(const Matrix& symmetric);

/// Affine-invariant Riemannian distance ||log(A^{-1/2} B A^{-1/2})||_F.
double airm_distance(const SpdMatrix& a, const SpdMatrix& b);

/// Riemannian logarithm at the reference: C^{1/2} log(C^{-1/2} X C^{-1/2}) C^{1/2}.
Matrix log_map(const SpdMatrix& reference, const SpdMatrix& c);

/// Riemannian exponential at the reference.
SpdMatrix exp_map(const SpdMatrix& reference, const Matrix& tangent);

/// sqrt(tr(T C^-1 T C^-1)), the metric norm of a tangent matrix at C.
double tangent_norm(const SpdMatrix& reference, const Matrix& tangent);

struct MeanOptions {
  double tolerance = 1e-9;
  int max_iterations = 50;
};

struct MeanResult {
  SpdMatrix mean;
  int iterations = 0;
  double step_norm = 0.0;  ///< ||J||_F of the last iteration
  bool converged = false;
};

/// Fixed-point iteration from the arithmetic mean: J = mean of log_map(C, C_i),
/// C <- exp_map(C, nu J), until ||J||_F < tolerance. nu starts at 1 and halves
/// whenever ||J||_F increases. Non-convergence is reported
/// through MeanResult::converged, not thrown.
MeanResult riemannian_mean(std::span<const SpdMatrix> matrices, const MeanOptions& options = {});

/// Row-major upper triangle with off-diagonal entries scaled by sqrt(2), so
/// that the Euclidean norm of the result equals the Frobenius norm of s.
Vector upper_vectorize(const Matrix& s);
Matrix upper_unvectorize(const Vector& v, Eigen::Index dim);

inline Eigen::Index tangent_length(Eigen::Index rank) { return rank * (rank + 1) / 2; }

/// Half-vectorized log(C_ref^{-1/2} C C_ref^{-1/2}); its norm is the
/// geodesic distance between reference and c.
Vector tangent_vectorize(const SpdMatrix& reference, const SpdMatrix& c);

/// Adds gamma * trace / dim to the diagonal.
SpdMatrix regularize(const SpdMatrix& c, double gamma);

/// N x R projection onto the leading eigenvectors.
struct SpatialFilter {
  Matrix weights;
  double retained_variance = 1.0;

  Eigen::Index channels() const { return weights.rows(); }
  Eigen::Index rank() const { return weights.cols(); }
};

/// Leading R eigenvectors of the arithmetic mean, eigenvalues descending.
SpatialFilter pca_spatial_filter(std::span<const SpdMatrix> matrices, Eigen::Index rank);

/// W^T X for a segment's samples.
Matrix reduce(const SpatialFilter& filter, const Matrix& samples);
/// W^T C W.
SpdMatrix reduce(const SpatialFilter& filter, const SpdMatrix& c);

enum class ReferencePolicy { TrainMean, BatchMean };

/// Per-band PCA reduction and Riemannian-mean tangent projection. Fit on the
/// training covariances, then map any trial (or batch of trials) onto the
/// concatenated tangent vectors of all bands.
class TangentSpaceMapper {
 public:
  TangentSpaceMapper() = default;
  TangentSpaceMapper(std::vector<SpatialFilter> filters, std::vector<SpdMatrix> references, double ridge = 0.0);

  /// per_band[b][i] is the SCM of trial i in band b. ranks holds one rank per
  /// band (or a single shared rank). shared_filter fits one W on the average
  /// over bands instead of one per band.
  static TangentSpaceMapper fit(const std::vector<std::vector<SpdMatrix>>& per_band,
                                std::span<const Eigen::Index> ranks, bool shared_filter = false,
                                double ridge = 0.0, const MeanOptions& options = {});

  std::size_t bands() const { return filters_.size(); }
  Eigen::Index output_length() const;
  const std::vector<SpatialFilter>& filters() const { return filters_; }
  const std::vector<SpdMatrix>& references() const { return references_; }
  double ridge() const { return ridge_; }

  /// Reduced (and optionally ridged) covariance of one trial in band b.
  SpdMatrix prepare(std::size_t band, const SpdMatrix& c) const;

  /// Tangent features of one trial against the fitted references.
  Vector transform(std::span<const SpdMatrix> trial_bands) const;

  /// Tangent features of a batch of trials. TrainMean uses the fitted
  /// references; BatchMean recomputes the Riemannian mean of the batch per band.
  Matrix transform_batch(const std::vector<std::vector<SpdMatrix>>& trials,
                         ReferencePolicy policy, const MeanOptions& options = {}) const;

 private:
  std::vector<SpatialFilter> filters_;
  std::vector<SpdMatrix> references_;
  double ridge_ = 0.0;
};

/// Minimum distance to Riemannian mean classifier.
class MdrmClassifier {
 public:
  void fit(std::span<const SpdMatrix> covariances, std::span<const int> labels,
           const MeanOptions& options = {});

  /// argmin over classes of the affine-invariant distance; ties go to the
  /// lowest class index.
  int predict(const SpdMatrix& c) const;

  std::vector<double> distances(const SpdMatrix& c) const;
  const std::vector<SpdMatrix>& means() const { return means_; }

 private:
  std::vector<SpdMatrix> means_;
};

}  // namespace spdbci::spd
