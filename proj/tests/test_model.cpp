#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isomix/bspline.hpp"
#include "isomix/model.hpp"

using namespace isomix;

namespace {

double uniform01(std::mt19937_64& gen) {
  return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
}

double randn(std::mt19937_64& gen) {
  const double u1 = uniform01(gen), u2 = uniform01(gen);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Eigen::MatrixXd random_pd(std::mt19937_64& gen, Eigen::Index d) {
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) a(r, c) = randn(gen);
  return a * a.transpose() + 0.3 * Eigen::MatrixXd::Identity(d, d);
}

ConsumerDataset make_consumers(const Eigen::MatrixXd& y) {
  ConsumerDataset d;
  d.isotopes = y;
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    d.isotope_names.push_back("iso" + std::to_string(j + 1));
  return d;
}

SourceSummary make_summary(Eigen::Index k, Eigen::Index j,
                           const std::vector<Eigen::VectorXd>& mus,
                           const std::vector<Eigen::MatrixXd>& covs) {
  SourceSummary s;
  for (Eigen::Index kk = 0; kk < k; ++kk)
    s.source_names.push_back("S" + std::to_string(kk + 1));
  for (Eigen::Index jj = 0; jj < j; ++jj)
    s.isotope_names.push_back("iso" + std::to_string(jj + 1));
  for (Eigen::Index kk = 0; kk < k; ++kk) {
    GaussianSummary g;
    g.mu = mus[static_cast<std::size_t>(kk)];
    g.cov = covs[static_cast<std::size_t>(kk)];
    s.by_source.push_back(g);
  }
  return s;
}

// -- independent density oracles --------------------------------------------

double o_normal(double x, double m, double var) {
  return -0.5 * std::log(2.0 * M_PI * var) - (x - m) * (x - m) / (2.0 * var);
}

double o_mvn(const Eigen::VectorXd& x, const Eigen::VectorXd& m,
             const Eigen::MatrixXd& cov) {
  const Eigen::Index d = x.size();
  const Eigen::MatrixXd inv = cov.inverse();
  const double quad = (x - m).transpose() * inv * (x - m);
  return -0.5 * (d * std::log(2.0 * M_PI) + std::log(cov.determinant()) + quad);
}

double o_inverse_gamma(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) -
         (shape + 1.0) * std::log(x) - rate / x;
}

double o_gamma(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) +
         (shape - 1.0) * std::log(x) - rate * x;
}

double o_mvlgamma(int p, double a) {
  double total = 0.25 * p * (p - 1) * std::log(M_PI);
  for (int i = 1; i <= p; ++i) total += std::lgamma(a + 0.5 * (1.0 - i));
  return total;
}

double o_inverse_wishart(const Eigen::MatrixXd& x, double dof,
                         const Eigen::MatrixXd& scale) {
  const int p = static_cast<int>(x.rows());
  const double half_dof = 0.5 * dof;
  return half_dof * std::log(scale.determinant()) -
         half_dof * p * std::log(2.0) - o_mvlgamma(p, half_dof) -
         0.5 * (dof + p + 1.0) * std::log(x.determinant()) -
         0.5 * (scale * x.inverse()).trace();
}

// Balance basis rebuilt from its closed form, independent of IlrBasis.
Eigen::MatrixXd o_basis(Eigen::Index k) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(k, k - 1);
  for (Eigen::Index col = 0; col < k - 1; ++col) {
    const double m = static_cast<double>(k - 1 - col);
    v(col, col) = std::sqrt(m / (m + 1.0));
    for (Eigen::Index r = col + 1; r < k; ++r)
      v(r, col) = -1.0 / std::sqrt(m * (m + 1.0));
  }
  return v;
}

Eigen::VectorXd o_softmax(const Eigen::VectorXd& z) {
  Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

// A random small model instance with matching oracle inputs.
struct Instance {
  ConsumerDataset consumers;
  ModelSpec spec;
  SourceSummary sources;
  TefSummary tefs;
  ParameterState state;
};

Instance random_instance(std::mt19937_64& gen, Eigen::Index n, Eigen::Index j,
                         Eigen::Index k, bool with_covariate,
                         bool with_concentration, bool helmert) {
  Instance inst;
  Eigen::MatrixXd y(n, j);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < j; ++c) y(r, c) = 5.0 * randn(gen);
  inst.consumers = make_consumers(y);
  if (with_covariate) {
    ConsumerDataset::Covariate cov;
    cov.is_numeric = true;
    for (Eigen::Index r = 0; r < n; ++r) {
      cov.numeric.push_back(uniform01(gen));
      cov.raw.push_back(std::to_string(cov.numeric.back()));
    }
    inst.consumers.covariates["t"] = cov;
    inst.spec.formula = parse_formula("1 + t");
  }
  inst.spec.use_helmert_contrasts = helmert;

  std::vector<Eigen::VectorXd> smu, cmu;
  std::vector<Eigen::MatrixXd> scov, ccov;
  for (Eigen::Index kk = 0; kk < k; ++kk) {
    Eigen::VectorXd m1(j), m2(j);
    for (Eigen::Index c = 0; c < j; ++c) {
      m1[c] = 10.0 * randn(gen);
      m2[c] = randn(gen);
    }
    smu.push_back(m1);
    cmu.push_back(m2);
    scov.push_back(random_pd(gen, j));
    ccov.push_back(random_pd(gen, j));
  }
  inst.sources = make_summary(k, j, smu, scov);
  inst.tefs = make_summary(k, j, cmu, ccov);
  if (with_concentration) {
    ConcentrationTable q;
    q.source_names = inst.sources.source_names;
    q.isotope_names = inst.sources.isotope_names;
    q.q = Eigen::MatrixXd(k, j);
    for (Eigen::Index r = 0; r < k; ++r)
      for (Eigen::Index c = 0; c < j; ++c)
        q.q(r, c) = 0.2 + 0.8 * uniform01(gen);
    inst.spec.concentration = q;
  }

  ModelContext model(inst.consumers, inst.spec, inst.sources, inst.tefs);
  ParameterState st = model.initial_state();
  for (Eigen::Index r = 0; r < st.beta.rows(); ++r)
    for (Eigen::Index c = 0; c < st.beta.cols(); ++c)
      st.beta(r, c) = randn(gen);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < k - 1; ++c) st.phi(r, c) = randn(gen);
  for (Eigen::Index c = 0; c < k - 1; ++c)
    st.kappa[c] = 0.3 + 2.0 * uniform01(gen);
  st.sigma = random_pd(gen, j);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index kk = 0; kk < k; ++kk) {
      for (Eigen::Index c = 0; c < j; ++c) {
        st.s[static_cast<std::size_t>(i)](kk, c) = smu[static_cast<std::size_t>(kk)][c] + randn(gen);
        st.c[static_cast<std::size_t>(i)](kk, c) = cmu[static_cast<std::size_t>(kk)][c] + randn(gen);
      }
    }
  inst.state = st;
  return inst;
}

// Full joint density recomputed term by term from the written-out model.
double oracle_log_joint(const Instance& inst) {
  const Eigen::Index n = inst.consumers.n(), j = inst.consumers.j();
  const Eigen::Index k = inst.sources.k();
  const ParameterState& st = inst.state;
  const Eigen::MatrixXd v = o_basis(k);

  Eigen::MatrixXd x(n, inst.spec.formula.size() == 2 ? 2 : 1);
  x.col(0).setOnes();
  if (x.cols() == 2) {
    const auto& cov = inst.consumers.covariates.at("t");
    for (Eigen::Index r = 0; r < n; ++r)
      x(r, 1) = cov.numeric[static_cast<std::size_t>(r)];
  }

  double total = 0.0;
  // likelihood
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd p = o_softmax(v * st.phi.row(i).transpose());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(j);
    for (Eigen::Index jj = 0; jj < j; ++jj) {
      double num = 0.0, den = 0.0;
      for (Eigen::Index kk = 0; kk < k; ++kk) {
        double w = p[kk];
        if (inst.spec.concentration) {
          w *= inst.spec.concentration->q(kk, jj);
        }
        num += w * (st.s[static_cast<std::size_t>(i)](kk, jj) +
                    st.c[static_cast<std::size_t>(i)](kk, jj));
        den += w;
      }
      mean[jj] = inst.spec.concentration ? num / den : num;
    }
    total += o_mvn(inst.consumers.isotopes.row(i).transpose(), mean, st.sigma);
  }
  // phi prior
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index kc = 0; kc < k - 1; ++kc) {
      Eigen::VectorXd beta_eff = st.beta.row(kc).transpose();
      if (inst.spec.use_helmert_contrasts && kc > 0)
        beta_eff += st.beta.row(0).transpose();
      if (inst.spec.use_helmert_contrasts && kc == 0)
        beta_eff = st.beta.row(0).transpose();
      const double gamma = x.row(i) * beta_eff;
      total += o_normal(st.phi(i, kc), gamma, st.kappa[kc]);
    }
  // latent source/TEF terms
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index kk = 0; kk < k; ++kk) {
      total += o_mvn(st.s[static_cast<std::size_t>(i)].row(kk).transpose(),
                     inst.sources.by_source[static_cast<std::size_t>(kk)].mu,
                     inst.sources.by_source[static_cast<std::size_t>(kk)].cov);
      total += o_mvn(st.c[static_cast<std::size_t>(i)].row(kk).transpose(),
                     inst.tefs.by_source[static_cast<std::size_t>(kk)].mu,
                     inst.tefs.by_source[static_cast<std::size_t>(kk)].cov);
    }
  // beta prior
  for (Eigen::Index r = 0; r < st.beta.rows(); ++r)
    for (Eigen::Index c = 0; c < st.beta.cols(); ++c)
      total += o_normal(st.beta(r, c), 0.0, 100.0);
  // kappa prior
  for (Eigen::Index kc = 0; kc < k - 1; ++kc)
    total += o_inverse_gamma(st.kappa[kc], 1.0, 1.0);
  // sigma prior
  total += o_inverse_wishart(st.sigma, static_cast<double>(j) + 1.0,
                             Eigen::MatrixXd::Identity(j, j));
  return total;
}

bool rel_close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("formula parsing round trips and rejects malformed input") {
  auto f1 = parse_formula("1");
  REQUIRE(f1.size() == 1);
  CHECK(f1[0].kind == Term::Kind::Intercept);

  auto f2 = parse_formula("1 + jday + harmonic(jday, 365) + factor(age)");
  REQUIRE(f2.size() == 4);
  CHECK(f2[1].kind == Term::Kind::Linear);
  CHECK(f2[1].covariate == "jday");
  CHECK(f2[2].kind == Term::Kind::Harmonic);
  CHECK(f2[2].period == doctest::Approx(365.0));
  CHECK(f2[3].kind == Term::Kind::Factor);

  auto f3 = parse_formula("bspline(t, 25)");
  CHECK(f3[0].kind == Term::Kind::Bspline);
  CHECK(f3[0].knot_count == 25);
  CHECK(f3[0].degree == 3);

  auto f4 = parse_formula("interaction(harmonic(t), factor(sex))");
  REQUIRE(f4[0].kind == Term::Kind::Interaction);
  REQUIRE(f4[0].parents.size() == 2);
  CHECK(f4[0].parents[0].kind == Term::Kind::Harmonic);

  CHECK(format_formula(parse_formula(format_formula(f2))) == format_formula(f2));

  CHECK_THROWS_AS(parse_formula(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_formula("harmonic("), std::invalid_argument);
  CHECK_THROWS_AS(parse_formula("unknown(t)"), std::invalid_argument);
  CHECK_THROWS_AS(parse_formula("bspline(t, 3)"), std::invalid_argument);
  CHECK_THROWS_AS(parse_formula("harmonic(t, -1)"), std::invalid_argument);
  CHECK_THROWS_AS(parse_formula("1 + "), std::invalid_argument);
}

TEST_CASE("design matrix expands terms in formula order") {
  Eigen::MatrixXd y(3, 2);
  y << 1, 2, 3, 4, 5, 6;
  ConsumerDataset data = make_consumers(y);
  ConsumerDataset::Covariate t;
  t.is_numeric = true;
  t.numeric = {0.0, 91.25, 182.5};
  t.raw = {"0", "91.25", "182.5"};
  data.covariates["t"] = t;
  ConsumerDataset::Covariate age;
  age.is_numeric = false;
  age.raw = {"adult", "juvenile", "adult"};
  data.covariates["age"] = age;

  SUBCASE("harmonic pair hits the axis points") {
    ModelSpec spec;
    spec.formula = parse_formula("1 + harmonic(t, 365)");
    DesignMatrix d = build_design_matrix(data, spec);
    REQUIRE(d.l() == 3);
    CHECK(d.x(0, 0) == doctest::Approx(1.0));
    CHECK(d.x(0, 1) == doctest::Approx(1.0));
    CHECK(d.x(0, 2) == doctest::Approx(0.0));
    CHECK(std::abs(d.x(1, 1)) < 1e-12);  // quarter period
    CHECK(std::abs(d.x(1, 2) - 1.0) < 1e-12);
  }

  SUBCASE("harmonic plus two-level factor gives four columns") {
    ModelSpec spec;
    spec.formula = parse_formula("1 + harmonic(t, 365) + factor(age)");
    DesignMatrix d = build_design_matrix(data, spec);
    CHECK(d.l() == 4);
    // treatment coding, first sorted level is baseline
    CHECK(d.x(0, 3) == doctest::Approx(0.0));
    CHECK(d.x(1, 3) == doctest::Approx(1.0));
  }

  SUBCASE("linear column copies the covariate") {
    ModelSpec spec;
    spec.formula = parse_formula("1 + t");
    DesignMatrix d = build_design_matrix(data, spec);
    CHECK(d.x.col(0).isOnes());
    CHECK(d.x(2, 1) == doctest::Approx(182.5));
    CHECK(d.labels[0] == "intercept");
  }

  SUBCASE("interaction multiplies parent columns") {
    ModelSpec spec;
    spec.formula = parse_formula("interaction(t, factor(age))");
    DesignMatrix d = build_design_matrix(data, spec);
    REQUIRE(d.l() == 1);
    CHECK(d.x(0, 0) == doctest::Approx(0.0));
    CHECK(d.x(1, 0) == doctest::Approx(91.25));
    CHECK(d.x(2, 0) == doctest::Approx(0.0));
  }

  SUBCASE("bspline block is recorded") {
    ModelSpec spec;
    spec.formula = parse_formula("bspline(t, 6)");
    DesignMatrix d = build_design_matrix(data, spec);
    REQUIRE(d.spline_blocks.size() == 1);
    CHECK(d.spline_blocks[0].first == 0);
    CHECK(d.spline_blocks[0].count == 6 + 3 - 1);
    CHECK(d.l() == d.spline_blocks[0].count);
  }

  SUBCASE("errors") {
    ModelSpec spec;
    spec.formula = parse_formula("1 + missing");
    CHECK_THROWS_AS(build_design_matrix(data, spec), std::invalid_argument);
    ConsumerDataset one_level = data;
    one_level.covariates["age"].raw = {"adult", "adult", "adult"};
    spec.formula = parse_formula("factor(age)");
    CHECK_THROWS_AS(build_design_matrix(one_level, spec), std::invalid_argument);
  }
}

TEST_CASE("bspline basis matches a Cox-de Boor recursion oracle") {
  const int knot_count = 7, degree = 3;
  BsplineBasis basis(0.0, 1.0, knot_count, degree);
  CHECK(basis.size() == knot_count + degree - 1);

  // Independent recursion on the same padded knot vector.
  const std::vector<double>& knots = basis.knots();
  auto cox_de_boor = [&](double t) {
    const std::size_t m = knots.size();
    // closed right end: clamp into the last nonempty interval
    std::vector<double> n0(m - 1, 0.0);
    for (std::size_t i = 0; i + 1 < m; ++i) {
      const bool last = knots[i] < knots[i + 1] &&
                        !(knots[i + 1] < knots[m - 1]) && t == knots[m - 1];
      if ((t >= knots[i] && t < knots[i + 1]) || last) n0[i] = 1.0;
    }
    std::vector<double> prev = n0;
    for (int d = 1; d <= degree; ++d) {
      std::vector<double> cur(m - 1 - static_cast<std::size_t>(d), 0.0);
      for (std::size_t i = 0; i < cur.size(); ++i) {
        double left = 0.0, right = 0.0;
        const double dl = knots[i + static_cast<std::size_t>(d)] - knots[i];
        if (dl > 0.0) left = (t - knots[i]) / dl * prev[i];
        const double dr =
            knots[i + static_cast<std::size_t>(d) + 1] - knots[i + 1];
        if (dr > 0.0)
          right = (knots[i + static_cast<std::size_t>(d) + 1] - t) / dr * prev[i + 1];
        cur[i] = left + right;
      }
      prev = cur;
    }
    return prev;
  };

  std::mt19937_64 gen(401);
  std::vector<double> probes;
  for (int i = 0; i < 200; ++i) probes.push_back(uniform01(gen));
  for (int i = 1; i < knot_count - 1; ++i)
    probes.push_back(static_cast<double>(i) / (knot_count - 1));  // interior knots
  probes.push_back(0.0);
  probes.push_back(1.0);

  for (double t : probes) {
    Eigen::VectorXd v = basis.evaluate(t);
    REQUIRE(v.size() == basis.size());
    CHECK(std::abs(v.sum() - 1.0) < 1e-12);
    std::vector<double> oracle = cox_de_boor(t);
    REQUIRE(static_cast<Eigen::Index>(oracle.size()) == v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      CHECK(v[i] >= 0.0);
      CHECK(v[i] <= 1.0);
      CHECK(std::abs(v[i] - oracle[static_cast<std::size_t>(i)]) < 1e-12);
    }
  }

  CHECK_THROWS_AS(basis.evaluate(-0.01), std::domain_error);
  CHECK_THROWS_AS(basis.evaluate(1.01), std::domain_error);
  CHECK_THROWS_AS(BsplineBasis(0.0, 1.0, 1, 3), std::invalid_argument);
}

TEST_CASE("linear predictor applies Helmert contrasts") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 1);
  Eigen::MatrixXd beta(3, 1);
  beta << 2, 3, -1;

  Eigen::MatrixXd with = linear_predictor(x, beta, true);
  CHECK(with(0, 0) == doctest::Approx(2.0));
  CHECK(with(0, 1) == doctest::Approx(5.0));
  CHECK(with(0, 2) == doctest::Approx(1.0));

  SUBCASE("zero contrasts share the first predictor") {
    Eigen::MatrixXd b0 = beta;
    b0.row(1).setZero();
    b0.row(2).setZero();
    Eigen::MatrixXd g = linear_predictor(x, b0, true);
    CHECK((g.col(0) - g.col(1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((g.col(0) - g.col(2)).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("contrasts off equals contrasts on after remapping") {
    Eigen::MatrixXd remapped = beta;
    remapped.row(1) = beta.row(1) + beta.row(0);
    remapped.row(2) = beta.row(2) + beta.row(0);
    Eigen::MatrixXd off = linear_predictor(x, remapped, false);
    CHECK((off - with).cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("dimension mismatch throws") {
    Eigen::MatrixXd bad(3, 2);
    bad.setZero();
    CHECK_THROWS_AS(linear_predictor(x, bad, true), std::invalid_argument);
  }
}

TEST_CASE("mixture mean handles concentrations and boundary compositions") {
  Eigen::MatrixXd s(4, 2), c(4, 2);
  s << -11.17, 6.45, -30.88, 4.43, -14.06, 9.82, -11.17, 11.2;
  c.setZero();
  c.rowwise() += Eigen::RowVector2d(1.63, 3.54);

  SUBCASE("degenerate composition picks one source") {
    Eigen::VectorXd p(4);
    p << 1, 0, 0, 0;
    Eigen::VectorXd m = mixture_mean(p, s, c);
    CHECK(m[0] == doctest::Approx(-11.17 + 1.63));
    CHECK(m[1] == doctest::Approx(6.45 + 3.54));
  }

  SUBCASE("uniform diet averages the corrected means") {
    Eigen::VectorXd p = Eigen::VectorXd::Constant(4, 0.25);
    Eigen::VectorXd m = mixture_mean(p, s, c);
    CHECK(m[0] == doctest::Approx(-15.19));
    CHECK(m[1] == doctest::Approx((9.99 + 7.97 + 13.36 + 14.74) / 4.0));
  }

  SUBCASE("all-ones concentrations change nothing") {
    std::mt19937_64 gen(11);
    Eigen::MatrixXd q = Eigen::MatrixXd::Ones(4, 2);
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::VectorXd e(4);
      for (int i = 0; i < 4; ++i) e[i] = -std::log(uniform01(gen));
      Eigen::VectorXd p = e / e.sum();
      Eigen::VectorXd with = mixture_mean(p, s, c, &q);
      Eigen::VectorXd without = mixture_mean(p, s, c);
      CHECK((with - without).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  SUBCASE("concentration weights follow the stated formula") {
    Eigen::MatrixXd q(4, 2);
    q << 0.5, 0.9, 0.8, 0.3, 1.0, 0.6, 0.4, 0.7;
    Eigen::VectorXd p(4);
    p << 0.4, 0.3, 0.2, 0.1;
    Eigen::VectorXd m = mixture_mean(p, s, c, &q);
    for (int jj = 0; jj < 2; ++jj) {
      double num = 0, den = 0;
      for (int kk = 0; kk < 4; ++kk) {
        num += p[kk] * q(kk, jj) * (s(kk, jj) + c(kk, jj));
        den += p[kk] * q(kk, jj);
      }
      CHECK(m[jj] == doctest::Approx(num / den).epsilon(1e-12));
    }
    Eigen::MatrixXd w = mixing_weights(p, &q, 2);
    for (int jj = 0; jj < 2; ++jj) CHECK(w.col(jj).sum() == doctest::Approx(1.0));
  }

  SUBCASE("homogeneous of degree one in p without concentrations") {
    Eigen::VectorXd p(4);
    p << 0.4, 0.3, 0.2, 0.1;
    Eigen::VectorXd a = mixture_mean(p, s, c);
    Eigen::VectorXd b = mixture_mean(Eigen::VectorXd(3.0 * p), s, c);
    CHECK((3.0 * a - b).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("interior p stays inside the source bounding box") {
    std::mt19937_64 gen(12);
    for (int rep = 0; rep < 50; ++rep) {
      Eigen::VectorXd e(4);
      for (int i = 0; i < 4; ++i) e[i] = -std::log(uniform01(gen));
      Eigen::VectorXd p = e / e.sum();
      Eigen::VectorXd m = mixture_mean(p, s, c);
      Eigen::MatrixXd sc = s + c;
      for (int jj = 0; jj < 2; ++jj) {
        CHECK(m[jj] >= sc.col(jj).minCoeff() - 1e-12);
        CHECK(m[jj] <= sc.col(jj).maxCoeff() + 1e-12);
      }
    }
  }

  SUBCASE("dimension mismatch throws") {
    Eigen::VectorXd p(3);
    p << 0.5, 0.3, 0.2;
    CHECK_THROWS_AS(mixture_mean(p, s, c), std::invalid_argument);
  }
}

TEST_CASE("log joint matches a term-by-term oracle") {
  SUBCASE("standard normal likelihood at the mode") {
    // one consumer, one isotope, two sources; mixture mean forced to zero
    Eigen::MatrixXd y(1, 1);
    y << 0.0;
    ConsumerDataset data = make_consumers(y);
    Eigen::VectorXd mu1(1), mu0(1);
    mu1 << -1.0;
    mu0 << 1.0;
    Eigen::MatrixXd unit = Eigen::MatrixXd::Identity(1, 1);
    SourceSummary src = make_summary(2, 1, {mu1, mu1}, {unit, unit});
    TefSummary tef = make_summary(2, 1, {mu0, mu0}, {unit, unit});
    ModelContext model(data, ModelSpec{}, src, tef);
    ParameterState st = model.initial_state();  // latents at means: s + c = 0
    CHECK(model.log_likelihood(st) ==
          doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-12));
  }

  SUBCASE("random small instances") {
    std::mt19937_64 gen(2311);
    for (int rep = 0; rep < 25; ++rep) {
      const Eigen::Index n = 1 + static_cast<Eigen::Index>(gen() % 4);
      const Eigen::Index k = 2 + static_cast<Eigen::Index>(gen() % 3);
      Instance inst = random_instance(gen, n, 2, k, gen() % 2 == 0,
                                      gen() % 2 == 0, gen() % 2 == 0);
      ModelContext model(inst.consumers, inst.spec, inst.sources, inst.tefs);
      const double got = model.log_joint(inst.state);
      const double want = oracle_log_joint(inst);
      CHECK(rel_close(got, want, 1e-10));
    }
  }

  SUBCASE("doubling kappa at phi equal gamma shifts the phi prior by half log two") {
    std::mt19937_64 gen(77);
    Instance inst = random_instance(gen, 4, 2, 3, false, false, true);
    ModelContext model(inst.consumers, inst.spec, inst.sources, inst.tefs);
    ParameterState st = inst.state;
    const Eigen::MatrixXd gamma =
        linear_predictor(model.design().x, st.beta, true);
    st.phi = gamma;
    const double before = model.phi_log_prior(st);
    st.kappa *= 2.0;
    const double after = model.phi_log_prior(st);
    const double per_term = (before - after) / static_cast<double>(4 * 2);
    CHECK(per_term == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("non positive definite sigma maps to negative infinity") {
    std::mt19937_64 gen(78);
    Instance inst = random_instance(gen, 2, 2, 3, false, false, true);
    ModelContext model(inst.consumers, inst.spec, inst.sources, inst.tefs);
    ParameterState st = inst.state;
    st.sigma << 1.0, 2.0, 2.0, 1.0;  // indefinite
    CHECK(model.log_joint(st) == -std::numeric_limits<double>::infinity());
    st.kappa[0] = -1.0;
    CHECK_FALSE(std::isfinite(model.log_joint(st)));
  }

  SUBCASE("consumer relabeling leaves the joint unchanged") {
    std::mt19937_64 gen(79);
    Instance inst = random_instance(gen, 4, 2, 3, false, false, true);
    ModelContext model(inst.consumers, inst.spec, inst.sources, inst.tefs);
    const double base = model.log_joint(inst.state);

    std::vector<Eigen::Index> perm = {2, 0, 3, 1};
    Instance shuffled = inst;
    for (Eigen::Index i = 0; i < 4; ++i) {
      shuffled.consumers.isotopes.row(i) = inst.consumers.isotopes.row(perm[static_cast<std::size_t>(i)]);
      shuffled.state.phi.row(i) = inst.state.phi.row(perm[static_cast<std::size_t>(i)]);
      shuffled.state.s[static_cast<std::size_t>(i)] = inst.state.s[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      shuffled.state.c[static_cast<std::size_t>(i)] = inst.state.c[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    ModelContext model2(shuffled.consumers, shuffled.spec, shuffled.sources,
                        shuffled.tefs);
    CHECK(model2.log_joint(shuffled.state) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("log joint gradient matches central finite differences") {
  std::mt19937_64 gen(3031);
  auto check_instance = [&](Instance& inst, bool with_lik) {
    ModelContext model(inst.consumers, inst.spec, inst.sources, inst.tefs);
    ParameterState& st = inst.state;
    JointGradient g = model.log_joint_gradient(st, with_lik);
    auto objective = [&](const ParameterState& s) {
      return with_lik ? model.log_joint(s) : model.log_prior(s);
    };
    auto fd_ok = [&](double analytic, double grad_fd) {
      return std::abs(analytic - grad_fd) <=
             1e-5 * std::max(1.0, std::abs(grad_fd));
    };
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < st.phi.rows(); ++i)
      for (Eigen::Index kc = 0; kc < st.phi.cols(); ++kc) {
        ParameterState a = st, b = st;
        a.phi(i, kc) += h;
        b.phi(i, kc) -= h;
        CHECK(fd_ok(g.phi(i, kc), (objective(a) - objective(b)) / (2 * h)));
      }
    for (Eigen::Index r = 0; r < st.beta.rows(); ++r)
      for (Eigen::Index c = 0; c < st.beta.cols(); ++c) {
        ParameterState a = st, b = st;
        a.beta(r, c) += h;
        b.beta(r, c) -= h;
        CHECK(fd_ok(g.beta(r, c), (objective(a) - objective(b)) / (2 * h)));
      }
    for (Eigen::Index kc = 0; kc < st.kappa.size(); ++kc) {
      ParameterState a = st, b = st;
      a.kappa[kc] *= std::exp(h);
      b.kappa[kc] *= std::exp(-h);
      CHECK(fd_ok(g.log_kappa[kc], (objective(a) - objective(b)) / (2 * h)));
    }
    for (Eigen::Index kc = 0; kc < st.tau.size(); ++kc) {
      ParameterState a = st, b = st;
      a.tau[kc] *= std::exp(h);
      b.tau[kc] *= std::exp(-h);
      CHECK(fd_ok(g.log_tau[kc], (objective(a) - objective(b)) / (2 * h)));
    }
  };

  for (int rep = 0; rep < 6; ++rep) {
    Instance inst = random_instance(gen, 3, 2, 2 + static_cast<Eigen::Index>(gen() % 3),
                                    gen() % 2 == 0, gen() % 2 == 0, gen() % 2 == 0);
    check_instance(inst, true);
  }
  {
    Instance inst = random_instance(gen, 3, 2, 3, false, false, true);
    check_instance(inst, false);
  }

  SUBCASE("spline formula exercises the tau gradient") {
    Instance inst = random_instance(gen, 5, 2, 3, true, false, true);
    inst.spec.formula = parse_formula("bspline(t, 4)");
    ModelContext model(inst.consumers, inst.spec, inst.sources, inst.tefs);
    ParameterState st = model.initial_state();
    for (Eigen::Index r = 0; r < st.beta.rows(); ++r)
      for (Eigen::Index c = 0; c < st.beta.cols(); ++c) st.beta(r, c) = randn(gen);
    st.phi = inst.state.phi;
    st.kappa = inst.state.kappa;
    st.sigma = inst.state.sigma;
    st.s = inst.state.s;
    st.c = inst.state.c;
    for (Eigen::Index kc = 0; kc < st.tau.size(); ++kc)
      st.tau[kc] = 0.5 + uniform01(gen);
    inst.state = st;
    check_instance(inst, true);
  }
}

TEST_CASE("collapsed likelihood row integrates the latents out") {
  std::mt19937_64 gen(4041);

  SUBCASE("matches an independently computed Gaussian") {
    for (int rep = 0; rep < 10; ++rep) {
      const Eigen::Index k = 2 + static_cast<Eigen::Index>(gen() % 3);
      Instance inst = random_instance(gen, 2, 2, k, false, gen() % 2 == 0, true);
      ModelContext model(inst.consumers, inst.spec, inst.sources, inst.tefs);
      for (Eigen::Index i = 0; i < 2; ++i) {
        const Eigen::VectorXd p = model.proportions(inst.state, i);
        const Eigen::MatrixXd w =
            mixing_weights(p, model.concentration(), 2);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(2);
        Eigen::MatrixXd cov = inst.state.sigma;
        for (Eigen::Index kk = 0; kk < k; ++kk) {
          const Eigen::VectorXd wk = w.row(kk).transpose();
          mean += wk.cwiseProduct(
              inst.sources.by_source[static_cast<std::size_t>(kk)].mu +
              inst.tefs.by_source[static_cast<std::size_t>(kk)].mu);
          const Eigen::MatrixXd outer = wk * wk.transpose();
          cov += outer.cwiseProduct(
              inst.sources.by_source[static_cast<std::size_t>(kk)].cov +
              inst.tefs.by_source[static_cast<std::size_t>(kk)].cov);
        }
        const double want =
            o_mvn(inst.consumers.isotopes.row(i).transpose(), mean, cov);
        CHECK(rel_close(model.collapsed_likelihood_row(inst.state, i), want, 1e-10));
      }
    }
  }

  SUBCASE("agrees with Monte Carlo integration over the latents") {
    // Deliberately benign geometry (moderate covariances, observation close
    // to the mixture mean) so the simple-average estimator has light tails
    // and the normal-theory error bar is trustworthy.
    Eigen::MatrixXd y(1, 2);
    y << -13.0, 8.5;
    ConsumerDataset data = make_consumers(y);
    Eigen::VectorXd m1(2), m2(2), m3(2), mc0(2);
    m1 << -11.0, 6.5;
    m2 << -20.0, 4.5;
    m3 << -14.0, 10.0;
    mc0 << 1.5, 3.0;
    Eigen::MatrixXd small = 0.3 * Eigen::MatrixXd::Identity(2, 2);
    SourceSummary src = make_summary(3, 2, {m1, m2, m3}, {small, small, small});
    TefSummary tef =
        make_summary(3, 2, {mc0, mc0, mc0}, {0.5 * small, 0.5 * small, 0.5 * small});
    ModelContext model(data, ModelSpec{}, src, tef);
    ParameterState st = model.initial_state();
    st.phi(0, 0) = 0.4;
    st.phi(0, 1) = -0.2;
    const double collapsed = model.collapsed_likelihood_row(st, 0);

    const int m = 40000;
    std::vector<double> lik(m);
    Eigen::LLT<Eigen::MatrixXd> sig_chol(st.sigma);
    Eigen::LLT<Eigen::MatrixXd> schol(small), cchol(Eigen::MatrixXd(0.5 * small));
    for (int it = 0; it < m; ++it) {
      for (int kk = 0; kk < 3; ++kk) {
        Eigen::Vector2d zs(randn(gen), randn(gen)), zc(randn(gen), randn(gen));
        st.s[0].row(kk) =
            (src.by_source[static_cast<std::size_t>(kk)].mu +
             schol.matrixL() * zs)
                .transpose();
        st.c[0].row(kk) =
            (tef.by_source[static_cast<std::size_t>(kk)].mu +
             cchol.matrixL() * zc)
                .transpose();
      }
      lik[static_cast<std::size_t>(it)] =
          std::exp(model.log_likelihood_row(st, 0, sig_chol));
    }
    double mc = 0.0;
    for (double v : lik) mc += v;
    mc /= m;
    double var = 0.0;
    for (double v : lik) var += (v - mc) * (v - mc);
    const double se = std::sqrt(var / (m - 1.0) / m);
    CHECK(std::abs(std::exp(collapsed) - mc) < 5.0 * se);
  }

  SUBCASE("pinned latents collapse to the plain row likelihood") {
    Eigen::MatrixXd y(1, 2);
    y << -12.0, 8.0;
    ConsumerDataset data = make_consumers(y);
    Eigen::VectorXd m1(2), m2(2), t0(2);
    m1 << -11.0, 6.0;
    m2 << -29.0, 4.0;
    t0 << 1.6, 3.5;
    Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 2);
    SourceSummary src = make_summary(2, 2, {m1, m2}, {zero, zero});
    for (auto& b : src.by_source) b.degenerate = true;
    TefSummary tef = make_summary(2, 2, {t0, t0}, {zero, zero});
    for (auto& b : tef.by_source) b.degenerate = true;
    ModelContext model(data, ModelSpec{}, src, tef);
    ParameterState st = model.initial_state();
    st.phi(0, 0) = 0.3;
    Eigen::LLT<Eigen::MatrixXd> chol(st.sigma);
    CHECK(model.collapsed_likelihood_row(st, 0) ==
          doctest::Approx(model.log_likelihood_row(st, 0, chol)).epsilon(1e-12));
  }
}

TEST_CASE("proportions tolerate saturated coordinates") {
  std::mt19937_64 gen(5051);
  Instance inst = random_instance(gen, 1, 2, 4, false, false, true);
  ModelContext model(inst.consumers, inst.spec, inst.sources, inst.tefs);
  ParameterState st = inst.state;

  st.phi.row(0) << 500.0, -500.0, 250.0;
  Eigen::VectorXd p = model.proportions(st, 0);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.minCoeff() >= 0.0);
  CHECK(p.maxCoeff() <= 1.0);

  st.phi.row(0) << 0.3, -0.8, 0.1;
  p = model.proportions(st, 0);
  Composition via_inv = ilr_inv(st.phi.row(0).transpose(), model.basis());
  CHECK((p - via_inv.values()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("model context validates shapes and inputs") {
  std::mt19937_64 gen(6061);
  Instance inst = random_instance(gen, 3, 2, 3, false, false, true);
  ModelContext model(inst.consumers, inst.spec, inst.sources, inst.tefs);

  ParameterState st = inst.state;
  st.beta = Eigen::MatrixXd::Zero(1, 1);
  CHECK_THROWS_AS(model.validate_state(st), std::invalid_argument);
  st = inst.state;
  st.phi = Eigen::MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(model.validate_state(st), std::invalid_argument);
  st = inst.state;
  st.s.pop_back();
  CHECK_THROWS_AS(model.validate_state(st), std::invalid_argument);

  SUBCASE("initial state follows the documented contract") {
    ParameterState init = model.initial_state();
    CHECK(init.beta.isZero());
    CHECK(init.phi.isZero());
    CHECK(init.kappa.isOnes());
    CHECK(init.sigma.isIdentity());
    CHECK(init.tau.size() == 0);
    CHECK((init.s[0].row(1).transpose() - inst.sources.by_source[1].mu).norm() ==
          0.0);
  }

  SUBCASE("source and tef counts must agree") {
    SourceSummary fewer = inst.sources;
    fewer.source_names.pop_back();
    fewer.by_source.pop_back();
    CHECK_THROWS_AS(
        ModelContext(inst.consumers, inst.spec, fewer, inst.tefs),
        std::invalid_argument);
  }

  SUBCASE("fewer than two sources rejected") {
    SourceSummary one = inst.sources;
    one.source_names.resize(1);
    one.by_source.resize(1);
    TefSummary onet = inst.tefs;
    onet.source_names.resize(1);
    onet.by_source.resize(1);
    CHECK_THROWS_AS(ModelContext(inst.consumers, inst.spec, one, onet),
                    std::invalid_argument);
  }
}

TEST_CASE("time varying sources swap in per-consumer summaries") {
  std::mt19937_64 gen(7071);
  Instance inst = random_instance(gen, 3, 2, 3, false, false, true);
  ModelContext model(inst.consumers, inst.spec, inst.sources, inst.tefs);
  const double before = model.collapsed_likelihood_row(inst.state, 1);

  std::vector<SourceSummary> per_consumer(3, inst.sources);
  per_consumer[1].by_source[0].mu[0] += 4.0;
  model.set_time_varying_sources(per_consumer);
  CHECK(model.time_varying());
  const double after = model.collapsed_likelihood_row(inst.state, 1);
  CHECK(before != after);
  // consumer 0 sees unchanged summaries
  ModelContext fresh(inst.consumers, inst.spec, inst.sources, inst.tefs);
  CHECK(model.collapsed_likelihood_row(inst.state, 0) ==
        doctest::Approx(fresh.collapsed_likelihood_row(inst.state, 0)));

  CHECK_THROWS_AS(model.set_time_varying_sources(
                      std::vector<SourceSummary>(2, inst.sources)),
                  std::invalid_argument);
}
