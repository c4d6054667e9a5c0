#include "test_main.hpp"

#include "oracles.hpp"
#include "spdbci/error.hpp"
#include "spdbci/spd.hpp"

using namespace spdbci;
using namespace spdbci::spd;

namespace {

SpdMatrix diag(std::initializer_list<double> values) {
  Vector d(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) d[i++] = v;
  return SpdMatrix(d.asDiagonal().toDenseMatrix());
}

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

// Sum of squared affine-invariant distances, evaluated with the general
// eigensolver oracle.
double karcher_objective(const Matrix& c, const std::vector<Matrix>& points) {
  double acc = 0.0;
  for (const Matrix& p : points) {
    const double d = oracle::airm_via_general_eig(c, p);
    acc += d * d;
  }
  return acc;
}

// Compass search over the free parameters of a 2x2 symmetric matrix.
Matrix pattern_search_2x2(std::vector<Matrix> points, Matrix start, bool diagonal_only) {
  std::vector<double> x{start(0, 0), start(1, 1), start(0, 1)};
  auto build = [&](const std::vector<double>& p) {
    Matrix c(2, 2);
    c << p[0], diagonal_only ? 0.0 : p[2], diagonal_only ? 0.0 : p[2], p[1];
    return c;
  };
  auto valid = [](const Matrix& c) { return c(0, 0) > 0 && c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0) > 0; };
  double best = karcher_objective(build(x), points);
  const int dims = diagonal_only ? 2 : 3;
  for (double step = 0.25; step > 1e-11;) {
    bool improved = false;
    for (int d = 0; d < dims; ++d) {
      for (double sign : {1.0, -1.0}) {
        auto trial = x;
        trial[static_cast<std::size_t>(d)] += sign * step;
        const Matrix c = build(trial);
        if (!valid(c)) continue;
        const double f = karcher_objective(c, points);
        if (f < best) {
          best = f;
          x = trial;
          improved = true;
        }
      }
    }
    if (!improved) step /= 2.0;
  }
  return build(x);
}

}  // namespace

TEST_CASE("spatial covariance") {
  Matrix x(2, 2);
  x << 1, -1, 1, -1;
  const SpdMatrix c = scm(x);
  CHECK(c.matrix().isApprox((Matrix(2, 2) << 2, 2, 2, 2).finished()));
  CHECK_FALSE(c.is_positive_definite());

  CHECK(scm(Matrix::Identity(2, 2)).matrix().isApprox(Matrix::Identity(2, 2)));

  Matrix bad = Matrix::Zero(2, 4);
  bad(1, 2) = std::nan("");
  CHECK_THROWS_AS(scm(bad), Error);

  SUBCASE("Monte-Carlo error shrinks like 1/sqrt(T)") {
    std::mt19937_64 rng(42);
    const Matrix sigma = oracle::random_spd(4, rng, 0.5);
    const Matrix a = sigma.llt().matrixL();
    auto mean_error = [&](Eigen::Index t) {
      double acc = 0.0;
      for (int trial = 0; trial < 1000; ++trial) {
        Matrix g(4, t);
        for (Eigen::Index i = 0; i < 4; ++i) g.row(i) = oracle::gaussian(t, rng).transpose();
        acc += (scm(a * g).matrix() - sigma).norm();
      }
      return acc / 1000.0;
    };
    const double ratio = mean_error(100) / mean_error(400);
    CHECK(ratio == doctest::Approx(2.0).epsilon(0.15));
  }
}

TEST_CASE("euclidean mean and swelling") {
  const SpdMatrix a = diag({2.0, 0.5});
  const SpdMatrix b = diag({0.5, 2.0});
  CHECK(euclidean_mean(std::vector<SpdMatrix>{a, a}).matrix().isApprox(a.matrix()));
  const SpdMatrix m = euclidean_mean(std::vector<SpdMatrix>{a, b});
  CHECK(m.matrix().isApprox(diag({1.25, 1.25}).matrix()));
  CHECK(m.determinant() == doctest::Approx(1.5625));
  CHECK(a.determinant() == doctest::Approx(1.0));
  CHECK_THROWS_AS(euclidean_mean(std::vector<SpdMatrix>{}), Error);
}

TEST_CASE("PCA spatial filter") {
  const SpdMatrix c = diag({3.0, 2.0, 1.0});
  const std::vector<SpdMatrix> set(4, c);

  SUBCASE("leading axes") {
    const SpatialFilter f = pca_spatial_filter(set, 2);
    CHECK(f.rank() == 2);
    CHECK((f.weights.transpose() * f.weights).isIdentity(1e-10));
    const SpdMatrix r = reduce(f, c);
    CHECK(r.matrix().cwiseAbs().isApprox(diag({3.0, 2.0}).matrix()));
    CHECK(f.retained_variance == doctest::Approx(5.0 / 6.0));
  }

  SUBCASE("full rank is a similarity transform") {
    std::mt19937_64 rng(1);
    std::vector<SpdMatrix> random;
    for (int i = 0; i < 5; ++i) random.emplace_back(oracle::random_spd(5, rng));
    const SpatialFilter f = pca_spatial_filter(random, 5);
    CHECK((f.weights.transpose() * f.weights).isIdentity(1e-10));
    const SpdMatrix r = reduce(f, random[0]);
    CHECK((r.eigenvalues() - random[0].eigenvalues()).norm() < 1e-10);
  }

  SUBCASE("retained variance matches a Jacobi eigensolver") {
    std::mt19937_64 rng(2);
    std::vector<SpdMatrix> random;
    Matrix sum = Matrix::Zero(6, 6);
    for (int i = 0; i < 7; ++i) {
      random.emplace_back(oracle::random_spd(6, rng));
      sum += random.back().matrix();
    }
    const Vector eig = oracle::jacobi_eigenvalues(sum / 7.0);
    for (Eigen::Index r = 1; r <= 6; ++r) {
      CHECK(pca_spatial_filter(random, r).retained_variance ==
            doctest::Approx(eig.head(r).sum() / eig.sum()).epsilon(1e-10));
    }
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(pca_spatial_filter(set, 0), Error);
    CHECK_THROWS_AS(pca_spatial_filter(set, 4), Error);
    const SpatialFilter f = pca_spatial_filter(set, 2);
    CHECK(reduce(f, Matrix::Zero(3, 10)).isZero(0.0));
    CHECK(reduce(f, SpdMatrix(Matrix::Zero(3, 3))).matrix().isZero(0.0));
    CHECK_THROWS_AS(reduce(f, Matrix::Zero(4, 10)), Error);
  }
}

TEST_CASE("matrix functions") {
  CHECK(logm(SpdMatrix(Matrix::Identity(3, 3))).isZero(1e-15));
  CHECK(logm(diag({std::exp(2.0), 1.0})).isApprox(diag({2.0, 0.0}).matrix(), 1e-14));

  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    const SpdMatrix c(oracle::random_spd(6, rng, 2.0));
    CHECK(rel(expm(logm(c)).matrix(), c.matrix()) < 1e-10);
    const Matrix s = sqrtm(c);
    CHECK(rel(s * s, c.matrix()) < 1e-10);
    const Matrix is = invsqrtm(c);
    CHECK((is * c.matrix() * is).isIdentity(1e-9));
  }

  SUBCASE("near-singular") {
    CHECK_THROWS_AS(logm(diag({1.0, 1e-14})), Error);
    CHECK_THROWS_AS(logm(diag({1.0, 0.0})), Error);
    try {
      invsqrtm(diag({1.0, -1.0}));
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NearSingular);
    }
  }
}

TEST_CASE("affine-invariant distance") {
  const SpdMatrix identity(Matrix::Identity(2, 2));
  CHECK(airm_distance(identity, SpdMatrix(std::exp(1.0) * Matrix::Identity(2, 2))) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  CHECK(airm_distance(diag({1.0, 1.0}), diag({4.0, 1.0})) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-14));

  std::mt19937_64 rng(17);
  SUBCASE("agrees with the general-eigenvalue route") {
    for (int i = 0; i < 20; ++i) {
      const Matrix a = oracle::random_spd(5, rng);
      const Matrix b = oracle::random_spd(5, rng);
      CHECK(airm_distance(SpdMatrix(a), SpdMatrix(b)) ==
            doctest::Approx(oracle::airm_via_general_eig(a, b)).epsilon(1e-9));
    }
  }

  SUBCASE("affine invariance") {
    for (int i = 0; i < 100; ++i) {
      const SpdMatrix a(oracle::random_spd(8, rng));
      const SpdMatrix b(oracle::random_spd(8, rng));
      const Matrix w = oracle::random_invertible(8, rng);
      const double d = airm_distance(a, b);
      const double dw = airm_distance(SpdMatrix(w.transpose() * a.matrix() * w),
                                      SpdMatrix(w.transpose() * b.matrix() * w));
      CHECK(std::abs(d - dw) / d <= 1e-8);
    }
  }

  SUBCASE("metric axioms") {
    for (int i = 0; i < 200; ++i) {
      const SpdMatrix a(oracle::random_spd(4, rng));
      const SpdMatrix b(oracle::random_spd(4, rng));
      const SpdMatrix c(oracle::random_spd(4, rng));
      CHECK(airm_distance(a, b) == doctest::Approx(airm_distance(b, a)).epsilon(1e-10));
      CHECK(airm_distance(a, c) <= airm_distance(a, b) + airm_distance(b, c) + 1e-9);
      CHECK(airm_distance(a, a) < 1e-12);
    }
  }
}

TEST_CASE("log and exp maps") {
  std::mt19937_64 rng(23);
  const SpdMatrix c(oracle::random_spd(5, rng));
  CHECK(log_map(c, c).isZero(1e-12));
  const SpdMatrix identity(Matrix::Identity(5, 5));
  CHECK(rel(log_map(identity, c), logm(c)) < 1e-12);

  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const SpdMatrix ref(oracle::random_spd(8, rng));
    const SpdMatrix x(oracle::random_spd(8, rng));
    const Matrix t = log_map(ref, x);
    worst = std::max(worst, rel(exp_map(ref, t).matrix(), x.matrix()));
    CHECK(tangent_norm(ref, t) == doctest::Approx(airm_distance(ref, x)).epsilon(1e-9));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("Riemannian mean") {
  const MeanOptions opts;

  SUBCASE("identical inputs") {
    const SpdMatrix a = diag({3.0, 1.0, 0.5});
    const MeanResult r = riemannian_mean(std::vector<SpdMatrix>{a, a}, opts);
    CHECK(r.converged);
    CHECK(rel(r.mean.matrix(), a.matrix()) < 1e-12);
  }

  SUBCASE("geometric mean of scalar matrices") {
    const std::vector<SpdMatrix> set{diag({1.0, 1.0}), diag({4.0, 4.0})};
    const MeanResult r = riemannian_mean(set, opts);
    std::vector<Matrix> points{set[0].matrix(), set[1].matrix()};
    const Matrix oracle_min = pattern_search_2x2(points, euclidean_mean(set).matrix(), true);
    CHECK(rel(r.mean.matrix(), oracle_min) < 1e-6);
    CHECK(rel(r.mean.matrix(), diag({2.0, 2.0}).matrix()) < 1e-12);
  }

  SUBCASE("no swelling") {
    const std::vector<SpdMatrix> set{diag({2.0, 0.5}), diag({0.5, 2.0})};
    const MeanResult r = riemannian_mean(set, opts);
    std::vector<Matrix> points{set[0].matrix(), set[1].matrix()};
    const Matrix oracle_min = pattern_search_2x2(points, euclidean_mean(set).matrix(), false);
    CHECK(rel(r.mean.matrix(), oracle_min) < 1e-6);
    CHECK(r.mean.matrix().isIdentity(1e-12));
    CHECK(r.mean.determinant() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(euclidean_mean(set).determinant() == doctest::Approx(1.5625));
  }

  SUBCASE("fixed point, equivariance, determinant") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<SpdMatrix> set;
      for (int i = 0; i < 10; ++i) set.emplace_back(oracle::random_spd(5, rng, 0.7));
      const MeanResult r = riemannian_mean(set, opts);
      REQUIRE(r.converged);
      Matrix sum = Matrix::Zero(5, 5);
      for (const SpdMatrix& c : set) sum += log_map(r.mean, c);
      CHECK(sum.norm() < 10.0 * opts.tolerance);

      const Matrix w = oracle::random_invertible(5, rng);
      std::vector<SpdMatrix> moved;
      for (const SpdMatrix& c : set) moved.emplace_back(w.transpose() * c.matrix() * w);
      const MeanResult rm = riemannian_mean(moved, opts);
      CHECK(rel(rm.mean.matrix(), w.transpose() * r.mean.matrix() * w) < 1e-6);

      const std::vector<SpdMatrix> pair{set[0], set[1]};
      const double det = riemannian_mean(pair, opts).mean.determinant();
      CHECK(det == doctest::Approx(std::sqrt(set[0].determinant() * set[1].determinant())).epsilon(1e-6));
    }
  }

  SUBCASE("non-convergence is reported") {
    std::mt19937_64 rng(5);
    std::vector<SpdMatrix> set;
    for (int i = 0; i < 5; ++i) set.emplace_back(oracle::random_spd(4, rng, 1.0));
    const MeanResult r = riemannian_mean(set, MeanOptions{1e-30, 2});
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 2);
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(riemannian_mean(std::vector<SpdMatrix>{}), Error);
    CHECK_THROWS_AS(riemannian_mean(std::vector<SpdMatrix>{diag({1.0, 2.0}), diag({1.0, 2.0, 3.0})}),
                    Error);
  }
}

TEST_CASE("tangent vectorization") {
  const SpdMatrix identity(Matrix::Identity(2, 2));
  const Vector v = tangent_vectorize(identity, diag({std::exp(2.0), 1.0}));
  REQUIRE(v.size() == 3);
  CHECK(v[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(std::abs(v[1]) < 1e-14);
  CHECK(std::abs(v[2]) < 1e-14);
  CHECK(v.norm() == doctest::Approx(airm_distance(identity, diag({std::exp(2.0), 1.0}))));

  std::mt19937_64 rng(41);
  const SpdMatrix c(oracle::random_spd(6, rng));
  CHECK(tangent_vectorize(c, c).isZero(1e-12));

  SUBCASE("norm preservation and ordering") {
    for (int i = 0; i < 50; ++i) {
      const SpdMatrix a(oracle::random_spd(6, rng));
      const SpdMatrix b(oracle::random_spd(6, rng));
      const Matrix s = logm(SpdMatrix(invsqrtm(a) * b.matrix() * invsqrtm(a)));
      const Vector u = upper_vectorize(s);
      CHECK(std::abs(u.norm() - s.norm()) <= 1e-12 * s.norm());
      CHECK(tangent_vectorize(a, b).norm() == doctest::Approx(airm_distance(a, b)).epsilon(1e-10));
      CHECK(upper_unvectorize(u, 6).isApprox(s, 1e-14));
    }
    Matrix s(3, 3);
    s << 1, 2, 3, 2, 4, 5, 3, 5, 6;
    const Vector u = upper_vectorize(s);
    const double r2 = std::sqrt(2.0);
    CHECK(u.isApprox((Vector(6) << 1, r2 * 2, r2 * 3, 4, r2 * 5, 6).finished()));
  }

  SUBCASE("local distance approximation") {
    for (double eps : {0.1, 0.01}) {
      double acc = 0.0;
      for (int i = 0; i < 100; ++i) {
        const SpdMatrix ref(oracle::random_spd(6, rng));
        auto perturb = [&]() {
          Matrix k = oracle::random_spd(6, rng) - oracle::random_spd(6, rng);
          k = (k + k.transpose()) / 2.0;
          k /= k.norm();
          return exp_map(ref, sqrtm(ref) * (eps * k) * sqrtm(ref));
        };
        const SpdMatrix ci = perturb();
        const SpdMatrix cj = perturb();
        const double d = airm_distance(ci, cj);
        acc += std::abs(d - (tangent_vectorize(ref, ci) - tangent_vectorize(ref, cj)).norm()) / d;
      }
      CHECK(acc / 100.0 < (eps == 0.1 ? 0.05 : 0.005));
    }
  }
}

TEST_CASE("tangent space mapper") {
  std::mt19937_64 rng(51);
  auto make_bands = [&](int bands, int trials, int n) {
    std::vector<std::vector<SpdMatrix>> per_band(static_cast<std::size_t>(bands));
    for (auto& band : per_band)
      for (int i = 0; i < trials; ++i) band.emplace_back(oracle::random_spd(n, rng, 0.5));
    return per_band;
  };

  SUBCASE("classic-rhythm dimensions") {
    const auto per_band = make_bands(5, 3, 62);
    const std::vector<Eigen::Index> ranks{48};
    const TangentSpaceMapper mapper = TangentSpaceMapper::fit(per_band, ranks);
    CHECK(mapper.output_length() == 5880);
    const std::vector<SpdMatrix> trial{per_band[0][0], per_band[1][0], per_band[2][0],
                                       per_band[3][0], per_band[4][0]};
    CHECK(mapper.transform(trial).size() == 5880);
  }

  SUBCASE("25 bands at rank 3") {
    const auto per_band = make_bands(25, 2, 3);
    const std::vector<Eigen::Index> ranks{3};
    CHECK(TangentSpaceMapper::fit(per_band, ranks).output_length() == 150);
  }

  SUBCASE("single band, rank 1") {
    const auto per_band = make_bands(1, 4, 3);
    const std::vector<Eigen::Index> ranks{1};
    const TangentSpaceMapper mapper = TangentSpaceMapper::fit(per_band, ranks);
    CHECK(mapper.output_length() == 1);
  }

  SUBCASE("reference policies") {
    const auto per_band = make_bands(2, 6, 4);
    const std::vector<Eigen::Index> ranks{3};
    const TangentSpaceMapper mapper = TangentSpaceMapper::fit(per_band, ranks);
    std::vector<std::vector<SpdMatrix>> trials;
    for (int i = 0; i < 6; ++i) trials.push_back({per_band[0][static_cast<std::size_t>(i)], per_band[1][static_cast<std::size_t>(i)]});
    const Matrix train = mapper.transform_batch(trials, ReferencePolicy::TrainMean);
    CHECK(train.row(2).transpose().isApprox(mapper.transform(trials[2])));
    // the fitted reference is the mean of these very trials, so both agree
    const Matrix batch = mapper.transform_batch(trials, ReferencePolicy::BatchMean);
    CHECK((batch - train).norm() < 1e-8);
    // tangent vectors at the Riemannian mean sum to zero
    CHECK(batch.colwise().sum().norm() < 1e-7);

    std::vector<std::vector<SpdMatrix>> half(trials.begin(), trials.begin() + 3);
    const Matrix batch_half = mapper.transform_batch(half, ReferencePolicy::BatchMean);
    CHECK(batch_half.colwise().sum().norm() < 1e-7);
  }

  SUBCASE("shared filter") {
    const auto per_band = make_bands(3, 4, 5);
    const std::vector<Eigen::Index> ranks{2};
    const TangentSpaceMapper mapper = TangentSpaceMapper::fit(per_band, ranks, true);
    CHECK(mapper.filters()[0].weights.isApprox(mapper.filters()[2].weights));
  }
}

TEST_CASE("MDRM") {
  MdrmClassifier mdrm;
  const std::vector<SpdMatrix> train{diag({2.0, 1.0}), diag({1.0, 2.0})};
  const std::vector<int> labels{0, 1};
  mdrm.fit(train, labels);

  const SpdMatrix probe = diag({1.9, 1.0});
  CHECK(airm_distance(train[0], probe) == doctest::Approx(std::abs(std::log(0.95))));
  CHECK(airm_distance(train[1], probe) ==
        doctest::Approx(std::hypot(std::log(1.9), std::log(0.5))));
  CHECK(mdrm.predict(probe) == 0);
  CHECK(mdrm.predict(train[1]) == 1);
  CHECK(mdrm.predict(SpdMatrix(Matrix::Identity(2, 2))) == 0);  // tie → lowest index

  const std::vector<int> gap{0, 2};
  CHECK_THROWS_AS(mdrm.fit(train, gap), Error);
}
