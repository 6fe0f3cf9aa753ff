#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "isomix/compositional.hpp"

using isomix::Composition;
using isomix::IlrBasis;
using isomix::alr;
using isomix::closure;
using isomix::clr;
using isomix::ilr;
using isomix::ilr_inv;
using isomix::perturb;

namespace {

// 53-bit uniform in (0,1); bit-identical on every platform, unlike the
// distributions in <random>.
double uniform01(std::mt19937_64& gen) {
  return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
}

// Dirichlet(1,...,1) via normalized exponentials, occasionally sharpened so
// some parts are pushed toward the simplex boundary.
Composition random_composition(std::mt19937_64& gen, Eigen::Index k) {
  Eigen::VectorXd e(k);
  for (Eigen::Index i = 0; i < k; ++i) e[i] = -std::log(uniform01(gen));
  if (gen() % 5 == 0) e[static_cast<Eigen::Index>(gen() % static_cast<std::uint64_t>(k))] *= 40.0;
  return closure(e);
}

double aitchison_distance(const Composition& p, const Composition& q) {
  return (clr(p) - clr(q)).norm();
}

}  // namespace

TEST_CASE("ilr basis is orthonormal with zero column sums") {
  for (Eigen::Index k = 2; k <= 8; ++k) {
    const IlrBasis basis = IlrBasis::build(k);
    const Eigen::MatrixXd& v = basis.matrix();
    REQUIRE(v.rows() == k);
    REQUIRE(v.cols() == k - 1);
    const Eigen::MatrixXd gram = v.transpose() * v;
    CHECK((gram - Eigen::MatrixXd::Identity(k - 1, k - 1)).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK(v.colwise().sum().cwiseAbs().maxCoeff() < 1e-12);
    for (Eigen::Index j = 0; j < k - 1; ++j) CHECK(v(j, j) > 0.0);
  }
}

TEST_CASE("ilr basis matches closed-form entries") {
  const IlrBasis b2 = IlrBasis::build(2);
  CHECK(b2.matrix()(0, 0) == doctest::Approx(0.7071067811865476).epsilon(1e-15));
  CHECK(b2.matrix()(1, 0) == doctest::Approx(-0.7071067811865476).epsilon(1e-15));

  const IlrBasis b4 = IlrBasis::build(4);
  CHECK(b4.matrix()(0, 0) == doctest::Approx(0.8660254037844386).epsilon(1e-15));
  CHECK(b4.matrix()(1, 0) == doctest::Approx(-0.2886751345948129).epsilon(1e-15));
  CHECK(b4.matrix()(0, 1) == 0.0);
  // Rebuilding gives the identical matrix.
  CHECK((b4.matrix() - IlrBasis::build(4).matrix()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ilr round trips across dimensions") {
  std::mt19937_64 gen(20240811);
  for (Eigen::Index k = 2; k <= 8; ++k) {
    const IlrBasis basis = IlrBasis::build(k);
    double worst_p = 0.0, worst_phi = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
      const Composition p = random_composition(gen, k);
      const Eigen::VectorXd phi = ilr(p, basis);
      const Composition back = ilr_inv(phi, basis);
      worst_p = std::max(worst_p, (back.values() - p.values()).cwiseAbs().maxCoeff());
      const Eigen::VectorXd phi2 = ilr(back, basis);
      worst_phi = std::max(worst_phi, (phi2 - phi).cwiseAbs().maxCoeff());
    }
    CHECK(worst_p < 1e-10);
    CHECK(worst_phi < 1e-10);
  }
}

TEST_CASE("clr sums to zero and matches the log-ratio form") {
  std::mt19937_64 gen(7);
  for (int rep = 0; rep < 200; ++rep) {
    const Composition p = random_composition(gen, 5);
    const Eigen::VectorXd c = clr(p);
    CHECK(std::abs(c.sum()) < 1e-12);
  }
  const Composition p(Eigen::Vector3d(0.5, 0.25, 0.25));
  const Eigen::VectorXd c = clr(p);
  CHECK(c[0] == doctest::Approx(0.4620981203732967).epsilon(1e-14));
  CHECK(c[1] == doctest::Approx(-0.2310490601866486).epsilon(1e-14));
  CHECK(c[2] == doctest::Approx(-0.2310490601866486).epsilon(1e-14));
}

TEST_CASE("ilr and inverse match fixed examples") {
  const IlrBasis b2 = IlrBasis::build(2);
  Eigen::VectorXd two(2);
  two << 0.7311, 0.2689;
  const Eigen::VectorXd phi = ilr(Composition(two), b2);
  CHECK(phi.size() == 1);
  CHECK(phi[0] == doctest::Approx(0.7072557587031383).epsilon(1e-14));

  const IlrBasis b4 = IlrBasis::build(4);
  Eigen::VectorXd coords = Eigen::VectorXd::Zero(3);
  coords[0] = 1.0;
  const Composition p = ilr_inv(coords, b4);
  CHECK(p[0] == doctest::Approx(0.5140183875929619).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(0.161993870802346).epsilon(1e-14));
  CHECK(p[2] == doctest::Approx(0.161993870802346).epsilon(1e-14));
  CHECK(p[3] == doctest::Approx(0.161993870802346).epsilon(1e-14));
}

TEST_CASE("ilr is an isometry and maps perturbation to addition") {
  std::mt19937_64 gen(99);
  for (Eigen::Index k : {2, 3, 4, 6}) {
    const IlrBasis basis = IlrBasis::build(k);
    for (int rep = 0; rep < 200; ++rep) {
      const Composition p = random_composition(gen, k);
      const Composition q = random_composition(gen, k);
      const double d_clr = aitchison_distance(p, q);
      const double d_ilr = (ilr(p, basis) - ilr(q, basis)).norm();
      CHECK(std::abs(d_clr - d_ilr) < 1e-12 * (1.0 + d_clr));
      const Eigen::VectorXd sum = ilr(perturb(p, q), basis);
      const Eigen::VectorXd parts = ilr(p, basis) + ilr(q, basis);
      CHECK((sum - parts).cwiseAbs().maxCoeff() < 1e-12 * (1.0 + parts.norm()));
    }
  }
}

TEST_CASE("Aitchison distance is invariant under part permutation") {
  std::mt19937_64 gen(123);
  const Eigen::Index k = 5;
  std::vector<Eigen::Index> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  for (int rep = 0; rep < 100; ++rep) {
    const Composition p = random_composition(gen, k);
    const Composition q = random_composition(gen, k);
    std::shuffle(perm.begin(), perm.end(), gen);
    Eigen::VectorXd pp(k), qp(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      pp[i] = p[perm[static_cast<std::size_t>(i)]];
      qp[i] = q[perm[static_cast<std::size_t>(i)]];
    }
    const double before = aitchison_distance(p, q);
    const double after = aitchison_distance(Composition(pp), Composition(qp));
    CHECK(std::abs(before - after) < 1e-12 * (1.0 + before));
  }
}

TEST_CASE("alr drops the denominator part") {
  const Composition p(Eigen::Vector3d(0.5, 0.25, 0.25));
  const Eigen::VectorXd a = alr(p, 2);
  REQUIRE(a.size() == 2);
  CHECK(a[0] == doctest::Approx(0.6931471805599453).epsilon(1e-14));
  CHECK(a[1] == doctest::Approx(0.0));
  std::mt19937_64 gen(5);
  for (int rep = 0; rep < 50; ++rep) {
    const Composition r = random_composition(gen, 4);
    const Eigen::VectorXd v = alr(r, 0);
    for (Eigen::Index i = 0; i < 3; ++i)
      CHECK(v[i] == doctest::Approx(std::log(r[i + 1] / r[0])).epsilon(1e-12));
  }
}

TEST_CASE("closure normalizes and preserves ratios") {
  Eigen::VectorXd v(3);
  v << 2.0, 6.0, 4.0;
  const Composition p = closure(v);
  CHECK(p.values().sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p[1] / p[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(p[2] / p[0] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("perturbation by the barycenter is the identity") {
  std::mt19937_64 gen(17);
  const Composition e = closure(Eigen::VectorXd::Ones(4));
  for (int rep = 0; rep < 50; ++rep) {
    const Composition p = random_composition(gen, 4);
    const Composition r = perturb(p, e);
    CHECK((r.values() - p.values()).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("invalid compositions are rejected") {
  Eigen::VectorXd one(1);
  one << 1.0;
  CHECK_THROWS_AS(Composition{one}, std::domain_error);
  CHECK_THROWS_AS(Composition(Eigen::Vector2d(0.0, 1.0)), std::domain_error);
  CHECK_THROWS_AS(Composition(Eigen::Vector2d(-0.2, 1.2)), std::domain_error);
  CHECK_THROWS_AS(Composition(Eigen::Vector2d(0.6, 0.6)), std::domain_error);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Composition(Eigen::Vector2d(nan, 1.0)), std::domain_error);
  CHECK_THROWS_AS(closure(Eigen::Vector2d(1.0, -1.0)), std::domain_error);
  CHECK_THROWS_AS(closure(Eigen::Vector2d(1.0, 0.0)), std::domain_error);
  CHECK_THROWS_AS(IlrBasis::build(1), std::domain_error);

  const IlrBasis b3 = IlrBasis::build(3);
  const Composition p(Eigen::Vector2d(0.5, 0.5));
  CHECK_THROWS_AS(ilr(p, b3), std::domain_error);
  CHECK_THROWS_AS(ilr_inv(Eigen::VectorXd::Zero(1), b3), std::domain_error);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(2);
  bad[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(ilr_inv(bad, b3), std::domain_error);
  const Composition q(Eigen::Vector3d(0.2, 0.3, 0.5));
  CHECK_THROWS_AS(alr(q, 3), std::domain_error);
  CHECK_THROWS_AS(alr(q, -1), std::domain_error);
  CHECK_THROWS_AS(perturb(q, p), std::domain_error);
}

TEST_CASE("extreme but valid compositions still round trip") {
  const IlrBasis b3 = IlrBasis::build(3);
  Eigen::VectorXd v(3);
  v << 1e-8, 0.5, 0.5 - 1e-8;
  const Composition p(v);
  const Composition back = ilr_inv(ilr(p, b3), b3);
  CHECK((back.values() - p.values()).cwiseAbs().maxCoeff() < 1e-10);
}
