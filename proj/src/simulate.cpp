#include "isomix/simulate.hpp"

#include <cmath>
#include <stdexcept>

#include "isomix/compositional.hpp"
#include "isomix/csv.hpp"
#include "isomix/linalg.hpp"
#include "isomix/model.hpp"

namespace isomix {

namespace {

constexpr double kPi = 3.14159265358979323846;

/// Draw from N(mu, cov), treating an exactly zero covariance as a point mass.
Eigen::VectorXd draw_gaussian(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov,
                              Rng& rng) {
  if (cov.size() == 0 || cov.cwiseAbs().maxCoeff() == 0.0) return mu;
  Eigen::LLT<Eigen::MatrixXd> chol(cov);
  if (chol.info() != Eigen::Success) chol.compute(regularized_cov(cov));
  return rng.mvnormal(mu, chol);
}

}  // namespace

Eigen::MatrixXd moment_matched_samples(const Eigen::VectorXd& mu,
                                       const Eigen::MatrixXd& cov, int count,
                                       Rng& rng) {
  const Eigen::Index jj = mu.size();
  Eigen::MatrixXd out(count, jj);
  if (cov.cwiseAbs().maxCoeff() == 0.0) {
    out.rowwise() = mu.transpose();
    return out;
  }
  if (count <= jj)
    throw std::invalid_argument(
        "moment matching needs more samples than isotope dimensions");
  Eigen::LLT<Eigen::MatrixXd> target_chol(cov);
  if (target_chol.info() != Eigen::Success)
    throw std::invalid_argument("moment matching needs a positive definite covariance");

  Eigen::MatrixXd z(count, jj);
  for (Eigen::Index r = 0; r < count; ++r)
    for (Eigen::Index c = 0; c < jj; ++c) z(r, c) = rng.normal();
  const Eigen::RowVectorXd mean = z.colwise().mean();
  Eigen::MatrixXd centered = z.rowwise() - mean;
  const Eigen::MatrixXd sample_cov =
      centered.transpose() * centered / static_cast<double>(count - 1);
  Eigen::LLT<Eigen::MatrixXd> sample_chol(sample_cov);
  if (sample_chol.info() != Eigen::Success)
    throw std::runtime_error("degenerate raw sample covariance in moment matching");
  // Whiten by the sample factor, color by the target factor.
  const Eigen::MatrixXd l_sample = sample_chol.matrixL();
  const Eigen::MatrixXd l_target = target_chol.matrixL();
  const Eigen::MatrixXd adjusted =
      l_sample.triangularView<Eigen::Lower>().solve(centered.transpose());
  out = (l_target * adjusted).transpose();
  out.rowwise() += mu.transpose();
  return out;
}

SimulatedData simulate(const SimulationSpec& spec, Rng& rng) {
  const Eigen::Index kk = static_cast<Eigen::Index>(spec.source_names.size());
  const Eigen::Index jj = static_cast<Eigen::Index>(spec.isotope_names.size());
  if (kk < 2) throw std::invalid_argument("simulate: need at least 2 sources");
  if (spec.source_mu.size() != static_cast<std::size_t>(kk) ||
      spec.source_cov.size() != static_cast<std::size_t>(kk) ||
      spec.tef_mu.size() != static_cast<std::size_t>(kk) ||
      spec.tef_cov.size() != static_cast<std::size_t>(kk))
    throw std::invalid_argument("simulate: per-source parameter count mismatch");
  for (Eigen::Index k = 0; k < kk; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    if (spec.source_mu[ks].size() != jj || spec.tef_mu[ks].size() != jj ||
        spec.source_cov[ks].rows() != jj || spec.tef_cov[ks].rows() != jj)
      throw std::invalid_argument("simulate: isotope dimension mismatch");
  }
  if (spec.sigma.rows() != jj || spec.sigma.cols() != jj)
    throw std::invalid_argument("simulate: residual covariance must be J x J");
  if (spec.harmonic) {
    if (spec.harmonic_beta.rows() != kk - 1 || spec.harmonic_beta.cols() != 3)
      throw std::invalid_argument("simulate: harmonic_beta must be (K-1) x 3");
    if (spec.times.size() != spec.n)
      throw std::invalid_argument("simulate: harmonic diet needs one time per consumer");
  } else {
    if (spec.true_p.size() != kk)
      throw std::invalid_argument("simulate: true_p must have length K");
  }
  if (spec.times.size() != 0 && spec.times.size() != spec.n)
    throw std::invalid_argument("simulate: times must be empty or length N");

  const IlrBasis basis = IlrBasis::build(kk);
  SimulatedData out;
  out.true_phi.resize(spec.n, kk - 1);
  out.true_props.resize(spec.n, kk);
  out.consumers.isotope_names = spec.isotope_names;
  out.consumers.isotopes.resize(spec.n, jj);

  Eigen::VectorXd phi_const;
  if (!spec.harmonic) phi_const = ilr(Composition(spec.true_p), basis);

  Eigen::LLT<Eigen::MatrixXd> sigma_chol;
  const bool noisy = spec.sigma.cwiseAbs().maxCoeff() > 0.0;
  if (noisy) {
    sigma_chol.compute(spec.sigma);
    if (sigma_chol.info() != Eigen::Success)
      throw std::invalid_argument("simulate: residual covariance not positive definite");
  }

  for (Eigen::Index i = 0; i < spec.n; ++i) {
    Eigen::VectorXd gamma(kk - 1);
    if (spec.harmonic) {
      const double angle = 2.0 * kPi * spec.times[i] / spec.period;
      const Eigen::Vector3d x(1.0, std::cos(angle), std::sin(angle));
      gamma = spec.harmonic_beta * x;
    } else {
      gamma = phi_const;
    }
    for (Eigen::Index kc = 0; kc < kk - 1; ++kc)
      out.true_phi(i, kc) = gamma[kc] + std::sqrt(spec.kappa) * rng.normal();
    const Eigen::VectorXd p = ilr_inv(out.true_phi.row(i).transpose(), basis).values();
    out.true_props.row(i) = p.transpose();

    Eigen::MatrixXd s(kk, jj), c(kk, jj);
    for (Eigen::Index k = 0; k < kk; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      s.row(k) = draw_gaussian(spec.source_mu[ks], spec.source_cov[ks], rng).transpose();
      c.row(k) = draw_gaussian(spec.tef_mu[ks], spec.tef_cov[ks], rng).transpose();
    }
    Eigen::VectorXd y = mixture_mean(p, s, c);
    if (noisy) y = rng.mvnormal(y, sigma_chol);
    out.consumers.isotopes.row(i) = y.transpose();
  }

  if (spec.times.size() == spec.n && spec.n > 0) {
    ConsumerDataset::Covariate t_cov;
    t_cov.is_numeric = true;
    for (Eigen::Index i = 0; i < spec.n; ++i) {
      t_cov.numeric.push_back(spec.times[i]);
      t_cov.raw.push_back(format_double(spec.times[i]));
    }
    out.consumers.covariates.emplace("t", std::move(t_cov));
  }

  out.sources.source_names = spec.source_names;
  out.sources.isotope_names = spec.isotope_names;
  for (Eigen::Index k = 0; k < kk; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    Eigen::MatrixXd samples;
    if (spec.exact_source_moments) {
      samples = moment_matched_samples(spec.source_mu[ks], spec.source_cov[ks],
                                       spec.source_sample_count, rng);
    } else {
      samples.resize(spec.source_sample_count, jj);
      for (Eigen::Index r = 0; r < spec.source_sample_count; ++r)
        samples.row(r) =
            draw_gaussian(spec.source_mu[ks], spec.source_cov[ks], rng).transpose();
    }
    out.sources.samples.push_back(std::move(samples));
    out.sources.times.emplace_back();
  }

  out.tefs.source_names = spec.source_names;
  out.tefs.isotope_names = spec.isotope_names;
  if (spec.tef_sample_count == 0) {
    out.tefs.direct = true;
    for (Eigen::Index k = 0; k < kk; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      out.tefs.direct_mu.push_back(spec.tef_mu[ks]);
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(jj, jj);
      cov.diagonal() = spec.tef_cov[ks].diagonal();
      out.tefs.direct_cov.push_back(cov);
    }
  } else {
    for (Eigen::Index k = 0; k < kk; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      out.tefs.samples.push_back(moment_matched_samples(
          spec.tef_mu[ks], spec.tef_cov[ks], spec.tef_sample_count, rng));
    }
  }
  return out;
}

GaussianSummary time_varying_truth(const TimeVaryingSourceSpec& spec, double t) {
  const Eigen::Index jj = spec.mean_base.size();
  GaussianSummary out;
  out.mu.resize(jj);
  out.cov = Eigen::MatrixXd::Zero(jj, jj);
  for (Eigen::Index j = 0; j < jj; ++j) {
    const double angle = 2.0 * kPi * t / spec.period + spec.mean_phase[j];
    out.mu[j] = spec.mean_base[j] + spec.mean_amp[j] * std::sin(angle);
    out.cov(j, j) = std::exp(spec.logvar_base[j] + spec.logvar_slope[j] * t / spec.period);
  }
  if (jj == 2) {
    const double off = spec.rho * std::sqrt(out.cov(0, 0) * out.cov(1, 1));
    out.cov(0, 1) = out.cov(1, 0) = off;
  }
  return out;
}

SourceSamples simulate_time_varying_sources(
    const std::vector<TimeVaryingSourceSpec>& specs,
    const std::vector<std::string>& isotope_names, const std::vector<double>& times,
    int replicates, Rng& rng) {
  SourceSamples out;
  out.isotope_names = isotope_names;
  const Eigen::Index jj = static_cast<Eigen::Index>(isotope_names.size());
  for (const auto& spec : specs) {
    if (spec.mean_base.size() != jj)
      throw std::invalid_argument("time-varying source dimension mismatch");
    out.source_names.push_back(spec.name);
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(times.size()) * replicates, jj);
    std::vector<double> sample_times;
    Eigen::Index row = 0;
    for (double t : times) {
      const GaussianSummary truth = time_varying_truth(spec, t);
      Eigen::LLT<Eigen::MatrixXd> chol(truth.cov);
      if (chol.info() != Eigen::Success)
        throw std::invalid_argument("time-varying source covariance not PD");
      for (int r = 0; r < replicates; ++r) {
        samples.row(row++) = rng.mvnormal(truth.mu, chol).transpose();
        sample_times.push_back(t);
      }
    }
    out.samples.push_back(std::move(samples));
    out.times.push_back(std::move(sample_times));
  }
  return out;
}

}  // namespace isomix
