#include "isomix/source_spline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "isomix/linalg.hpp"
#include "isomix/rng.hpp"

namespace isomix {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

struct Problem {
  Eigen::MatrixXd y;      // M x J
  Eigen::MatrixXd b;      // M x L basis rows
  Eigen::Index jdim, ldim;
  SourceSplineOptions options;

  Eigen::Index dim() const { return 2 * jdim * ldim + (jdim == 2 ? 1 : 0); }

  void unpack(const Eigen::VectorXd& x, Eigen::MatrixXd& beta_prime,
              Eigen::MatrixXd& beta_sigma, double& r) const {
    beta_prime.resize(jdim, ldim);
    beta_sigma.resize(jdim, ldim);
    Eigen::Index at = 0;
    for (Eigen::Index j = 0; j < jdim; ++j, at += ldim)
      beta_prime.row(j) = x.segment(at, ldim).transpose();
    for (Eigen::Index j = 0; j < jdim; ++j, at += ldim)
      beta_sigma.row(j) = x.segment(at, ldim).transpose();
    r = jdim == 2 ? x[at] : 0.0;
  }

  Eigen::VectorXd pack(const Eigen::MatrixXd& beta_prime,
                       const Eigen::MatrixXd& beta_sigma, double r) const {
    Eigen::VectorXd x(dim());
    Eigen::Index at = 0;
    for (Eigen::Index j = 0; j < jdim; ++j, at += ldim)
      x.segment(at, ldim) = beta_prime.row(j).transpose();
    for (Eigen::Index j = 0; j < jdim; ++j, at += ldim)
      x.segment(at, ldim) = beta_sigma.row(j).transpose();
    if (jdim == 2) x[at] = r;
    return x;
  }

  /// Roughness precision for one coefficient block: profiled MAP closed form
  /// unless a fixed value was requested.
  double block_tau(double ssd, double nd) const {
    if (options.fixed_tau > 0.0) return options.fixed_tau;
    return (0.5 * nd + options.tau_shape - 1.0) / (0.5 * ssd + options.tau_rate);
  }

  /// Penalized log-density (to be maximized) and its gradient.
  double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    Eigen::MatrixXd beta_prime, beta_sigma;
    double r;
    unpack(x, beta_prime, beta_sigma, r);
    const double rho = jdim == 2 ? std::tanh(r) : 0.0;

    Eigen::MatrixXd g_prime = Eigen::MatrixXd::Zero(jdim, ldim);
    Eigen::MatrixXd g_sigma = Eigen::MatrixXd::Zero(jdim, ldim);
    double g_r = 0.0;

    const Eigen::MatrixXd mu = b * beta_prime.transpose();  // M x J
    const Eigen::MatrixXd lv = b * beta_sigma.transpose();
    double total = 0.0;
    const double omr2 = 1.0 - rho * rho;
    for (Eigen::Index m = 0; m < y.rows(); ++m) {
      if (jdim == 1) {
        const double sd = std::exp(0.5 * lv(m, 0));
        const double z = (y(m, 0) - mu(m, 0)) / sd;
        total += -0.5 * kLogTwoPi - 0.5 * lv(m, 0) - 0.5 * z * z;
        if (grad) {
          g_prime.row(0) += (z / sd) * b.row(m);
          g_sigma.row(0) += (-0.5 + 0.5 * z * z) * b.row(m);
        }
      } else {
        const double sd1 = std::exp(0.5 * lv(m, 0));
        const double sd2 = std::exp(0.5 * lv(m, 1));
        const double z1 = (y(m, 0) - mu(m, 0)) / sd1;
        const double z2 = (y(m, 1) - mu(m, 1)) / sd2;
        total += -kLogTwoPi - 0.5 * (lv(m, 0) + lv(m, 1)) - 0.5 * std::log(omr2) -
                 (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / (2.0 * omr2);
        if (grad) {
          g_prime.row(0) += ((z1 - rho * z2) / (sd1 * omr2)) * b.row(m);
          g_prime.row(1) += ((z2 - rho * z1) / (sd2 * omr2)) * b.row(m);
          g_sigma.row(0) += (-0.5 + 0.5 * z1 * (z1 - rho * z2) / omr2) * b.row(m);
          g_sigma.row(1) += (-0.5 + 0.5 * z2 * (z2 - rho * z1) / omr2) * b.row(m);
          g_r += rho + (z1 * z2 * (1.0 + rho * rho) -
                        rho * (z1 * z1 + z2 * z2)) / omr2;
        }
      }
    }

    // Random-walk penalties with the precision profiled per block, plus the
    // diffuse anchor on each block's first coefficient.
    const double anchor_var = options.anchor_sd * options.anchor_sd;
    const double nd = static_cast<double>(ldim - 1);
    for (int which = 0; which < 2; ++which) {
      const Eigen::MatrixXd& beta = which == 0 ? beta_prime : beta_sigma;
      Eigen::MatrixXd& g = which == 0 ? g_prime : g_sigma;
      for (Eigen::Index j = 0; j < jdim; ++j) {
        double ssd = 0.0;
        for (Eigen::Index l = 1; l < ldim; ++l) {
          const double d = beta(j, l) - beta(j, l - 1);
          ssd += d * d;
        }
        const double tau = block_tau(ssd, nd);
        total += normal_logpdf(beta(j, 0), 0.0, anchor_var);
        total += -0.5 * nd * kLogTwoPi + 0.5 * nd * std::log(tau) - 0.5 * tau * ssd;
        if (options.fixed_tau <= 0.0)
          total += gamma_logpdf(tau, options.tau_shape, options.tau_rate);
        if (grad) {
          g(j, 0) += -beta(j, 0) / anchor_var;
          for (Eigen::Index l = 1; l < ldim; ++l) {
            const double d = beta(j, l) - beta(j, l - 1);
            g(j, l) += -tau * d;
            g(j, l - 1) += tau * d;
          }
        }
      }
    }

    if (grad) *grad = pack(g_prime, g_sigma, g_r);
    return total;
  }
};

Problem make_problem(const Eigen::MatrixXd& samples, const std::vector<double>& times,
                     const BsplineBasis& basis, const SourceSplineOptions& options) {
  Problem problem;
  problem.y = samples;
  problem.jdim = samples.cols();
  problem.ldim = basis.size();
  problem.options = options;
  Eigen::VectorXd t(static_cast<Eigen::Index>(times.size()));
  for (std::size_t m = 0; m < times.size(); ++m)
    t[static_cast<Eigen::Index>(m)] = times[m];
  problem.b = basis.evaluate(t);
  return problem;
}

Eigen::VectorXd initial_point(const Problem& problem) {
  const Eigen::MatrixXd& y = problem.y;
  const double m = static_cast<double>(y.rows());
  Eigen::MatrixXd beta_prime(problem.jdim, problem.ldim);
  Eigen::MatrixXd beta_sigma(problem.jdim, problem.ldim);
  for (Eigen::Index j = 0; j < problem.jdim; ++j) {
    const double mean = y.col(j).mean();
    const double var =
        std::max((y.col(j).array() - mean).square().sum() / std::max(1.0, m - 1.0),
                 1e-6);
    beta_prime.row(j).setConstant(mean);
    beta_sigma.row(j).setConstant(std::log(var));
  }
  double r = 0.0;
  if (problem.jdim == 2 && y.rows() > 2) {
    const double m1 = y.col(0).mean(), m2 = y.col(1).mean();
    const double c01 = ((y.col(0).array() - m1) * (y.col(1).array() - m2)).sum();
    const double v1 = (y.col(0).array() - m1).square().sum();
    const double v2 = (y.col(1).array() - m2).square().sum();
    if (v1 > 0.0 && v2 > 0.0)
      r = std::atanh(std::clamp(c01 / std::sqrt(v1 * v2), -0.9, 0.9));
  }
  return problem.pack(beta_prime, beta_sigma, r);
}

SourceSplineParams params_from(const Problem& problem, const BsplineBasis& basis,
                               const std::string& name,
                               const std::vector<std::string>& isotope_names,
                               const Eigen::VectorXd& x, double objective,
                               bool converged) {
  SourceSplineParams params;
  params.source_name = name;
  params.isotope_names = isotope_names;
  params.basis = basis;
  double r;
  problem.unpack(x, params.beta_prime, params.beta_sigma, r);
  params.rho = problem.jdim == 2 ? std::tanh(r) : 0.0;
  params.kappa_sigma = problem.options.kappa_sigma;
  params.objective = objective;
  params.converged = converged;
  params.tau_prime.resize(2 * problem.jdim);
  const double nd = static_cast<double>(problem.ldim - 1);
  Eigen::Index at = 0;
  for (int which = 0; which < 2; ++which) {
    const Eigen::MatrixXd& beta = which == 0 ? params.beta_prime : params.beta_sigma;
    for (Eigen::Index j = 0; j < problem.jdim; ++j) {
      double ssd = 0.0;
      for (Eigen::Index l = 1; l < problem.ldim; ++l) {
        const double d = beta(j, l) - beta(j, l - 1);
        ssd += d * d;
      }
      params.tau_prime[at++] = problem.block_tau(ssd, nd);
    }
  }
  return params;
}

}  // namespace

SourceSplineParams fit_source_spline(const std::string& source_name,
                                     const std::vector<std::string>& isotope_names,
                                     const Eigen::MatrixXd& samples,
                                     const std::vector<double>& times,
                                     const SourceSplineOptions& options) {
  const Eigen::Index jdim = samples.cols();
  if (jdim < 1 || jdim > 2)
    throw std::invalid_argument(
        "time-varying source fits support 1 or 2 isotopes; source '" + source_name +
        "' has " + std::to_string(jdim));
  if (static_cast<Eigen::Index>(times.size()) != samples.rows())
    throw std::invalid_argument("sample/time count mismatch for source '" +
                                source_name + "'");
  if (samples.rows() < 3)
    throw std::invalid_argument("source '" + source_name +
                                "' needs at least 3 time-stamped samples");
  const double t_min = *std::min_element(times.begin(), times.end());
  const double t_max = *std::max_element(times.begin(), times.end());
  if (!(t_max > t_min))
    throw std::invalid_argument("source '" + source_name +
                                "' needs samples at more than one time");

  const BsplineBasis basis(t_min, t_max, options.knot_count, options.degree);
  const Problem problem = make_problem(samples, times, basis, options);

  const ObjectiveFn fg = [&problem](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    const double value = problem.objective(x, &grad);
    grad = -grad;
    return -value;
  };

  const Eigen::VectorXd x0 = initial_point(problem);
  bool have_best = false;
  OptimResult best;
  for (int attempt = 0; attempt < std::max(1, options.restarts); ++attempt) {
    Eigen::VectorXd start = x0;
    if (attempt > 0) {
      Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(attempt)));
      start += 0.5 * static_cast<double>(attempt) * rng.normal_vector(start.size());
    }
    OptimResult result;
    try {
      result = minimize(fg, start, options.optim);
    } catch (const std::invalid_argument&) {
      continue;  // non-finite objective at a perturbed start
    }
    if (!have_best || (result.converged && !best.converged) ||
        (result.converged == best.converged && result.value < best.value)) {
      best = result;
      have_best = true;
    }
  }
  if (!have_best)
    throw std::invalid_argument("source '" + source_name +
                                "': no usable optimizer start");

  SourceSplineParams params = params_from(problem, basis, source_name, isotope_names,
                                          best.x, -best.value, best.converged);
  if (!best.converged)
    throw SourceSplineError(
        "source spline fit for '" + source_name + "' did not converge after " +
            std::to_string(best.iterations) + " iterations (objective " +
            std::to_string(-best.value) + ", gradient max-norm " +
            std::to_string(best.gradient_norm) + ")",
        params);
  return params;
}

std::vector<SourceSplineParams> fit_source_splines(
    const SourceSamples& samples, const SourceSplineOptions& options) {
  if (!samples.has_times())
    throw std::invalid_argument("source spline fit needs a time column");
  std::vector<SourceSplineParams> fits;
  for (Eigen::Index k = 0; k < samples.k(); ++k) {
    const auto ks = static_cast<std::size_t>(k);
    fits.push_back(fit_source_spline(samples.source_names[ks],
                                     samples.isotope_names, samples.samples[ks],
                                     samples.times[ks], options));
  }
  return fits;
}

GaussianSummary predict_source(const SourceSplineParams& params, double t) {
  const Eigen::VectorXd b = params.basis.evaluate(t);
  const Eigen::Index jdim = params.j();
  GaussianSummary out;
  out.mu = params.beta_prime * b;
  out.cov = Eigen::MatrixXd::Zero(jdim, jdim);
  const Eigen::VectorXd lv = params.beta_sigma * b;
  for (Eigen::Index j = 0; j < jdim; ++j) out.cov(j, j) = std::exp(lv[j]);
  if (jdim == 2) {
    const double off = params.rho * std::sqrt(out.cov(0, 0) * out.cov(1, 1));
    out.cov(0, 1) = out.cov(1, 0) = off;
  }
  return out;
}

SourceTimetable tabulate_sources(const std::vector<SourceSplineParams>& fits,
                                 const std::vector<double>& times) {
  SourceTimetable table;
  if (fits.empty()) return table;
  table.isotope_names = fits.front().isotope_names;
  for (const auto& fit : fits) {
    table.source_names.push_back(fit.source_name);
    std::vector<double> ts;
    std::vector<GaussianSummary> entries;
    for (double t : times) {
      ts.push_back(t);
      entries.push_back(predict_source(fit, t));
    }
    table.times.push_back(std::move(ts));
    table.entries.push_back(std::move(entries));
  }
  return table;
}

double gradient_check(const SourceSplineParams& params,
                      const Eigen::MatrixXd& samples,
                      const std::vector<double>& times,
                      const SourceSplineOptions& options) {
  const Problem problem = make_problem(samples, times, params.basis, options);
  const Eigen::VectorXd x =
      problem.pack(params.beta_prime, params.beta_sigma,
                   params.j() == 2 ? std::atanh(params.rho) : 0.0);
  Eigen::VectorXd analytic(x.size());
  problem.objective(x, &analytic);

  double worst = 0.0;
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    const double up = problem.objective(probe, nullptr);
    probe[i] = x[i] - h;
    const double down = problem.objective(probe, nullptr);
    probe[i] = x[i];
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace isomix
