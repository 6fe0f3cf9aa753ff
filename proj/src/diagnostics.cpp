#include "isomix/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "isomix/rng.hpp"

namespace isomix {

namespace {

/// Pooled per-draw accessor across chains.
struct Pooled {
  const PosteriorDraws& draws;
  std::vector<std::pair<int, int>> index;  // (chain, draw)

  explicit Pooled(const PosteriorDraws& d) : draws(d) {
    for (std::size_t c = 0; c < d.chains.size(); ++c)
      for (int i = 0; i < d.chains[c].size(); ++i)
        index.emplace_back(static_cast<int>(c), i);
  }
  int size() const { return static_cast<int>(index.size()); }
  const ChainDraws& chain(int t) const {
    return draws.chains[static_cast<std::size_t>(index[static_cast<std::size_t>(t)].first)];
  }
  std::size_t at(int t) const {
    return static_cast<std::size_t>(index[static_cast<std::size_t>(t)].second);
  }
};

}  // namespace

DicReport dic(const PosteriorDraws& draws, const ModelContext& model) {
  Pooled pooled(draws);
  const int t = pooled.size();
  if (t < 2) throw std::invalid_argument("dic needs at least 2 retained draws");

  double mean_dev = 0.0;
  for (int d = 0; d < t; ++d) mean_dev += pooled.chain(d).deviance[pooled.at(d)];
  mean_dev /= static_cast<double>(t);
  double var_dev = 0.0;
  for (int d = 0; d < t; ++d) {
    const double r = pooled.chain(d).deviance[pooled.at(d)] - mean_dev;
    var_dev += r * r;
  }
  var_dev /= static_cast<double>(t - 1);

  // Posterior means on unconstrained scales.
  const Eigen::Index nn = model.n(), kk = model.k(), jj = model.j();
  Eigen::MatrixXd phi_bar = Eigen::MatrixXd::Zero(nn, kk - 1);
  Eigen::MatrixXd log_var_bar = Eigen::MatrixXd::Zero(jj, 1);
  Eigen::MatrixXd corr_bar = Eigen::MatrixXd::Zero(jj, jj);
  Eigen::MatrixXd s_bar = Eigen::MatrixXd::Zero(nn * kk, jj);
  Eigen::MatrixXd c_bar = Eigen::MatrixXd::Zero(nn * kk, jj);
  for (int d = 0; d < t; ++d) {
    const ChainDraws& cd = pooled.chain(d);
    const std::size_t at = pooled.at(d);
    phi_bar += cd.phi[at];
    const Eigen::MatrixXd& sig = cd.sigma[at];
    for (Eigen::Index a = 0; a < jj; ++a) {
      log_var_bar(a, 0) += std::log(sig(a, a));
      for (Eigen::Index b = 0; b < jj; ++b)
        corr_bar(a, b) += sig(a, b) / std::sqrt(sig(a, a) * sig(b, b));
    }
  }
  phi_bar /= static_cast<double>(t);
  log_var_bar /= static_cast<double>(t);
  corr_bar /= static_cast<double>(t);
  // Latent means were accumulated per chain during the run.
  double weight = 0.0;
  for (const auto& cd : draws.chains) {
    if (cd.size() == 0) continue;
    s_bar += static_cast<double>(cd.size()) * cd.s_mean;
    c_bar += static_cast<double>(cd.size()) * cd.c_mean;
    weight += static_cast<double>(cd.size());
  }
  s_bar /= weight;
  c_bar /= weight;

  Eigen::MatrixXd sigma_bar(jj, jj);
  for (Eigen::Index a = 0; a < jj; ++a)
    for (Eigen::Index b = 0; b < jj; ++b)
      sigma_bar(a, b) = (a == b ? 1.0 : corr_bar(a, b)) *
                        std::exp(0.5 * (log_var_bar(a, 0) + log_var_bar(b, 0)));
  sigma_bar = regularized_cov(symmetrize(sigma_bar));

  Eigen::LLT<Eigen::MatrixXd> chol(sigma_bar);
  double plugin_dev = 0.0;
  for (Eigen::Index i = 0; i < nn; ++i) {
    const Eigen::VectorXd p = ilr_inv(phi_bar.row(i).transpose(), model.basis()).values();
    const Eigen::VectorXd mu =
        mixture_mean(p, s_bar.middleRows(i * kk, kk), c_bar.middleRows(i * kk, kk),
                     model.concentration());
    plugin_dev += mvn_logpdf(model.data().isotopes.row(i).transpose(), mu, chol);
  }
  plugin_dev *= -2.0;

  DicReport report;
  report.mean_deviance = mean_dev;
  report.p_v = 0.5 * var_dev;
  report.p_d = mean_dev - plugin_dev;
  report.dic_pd = mean_dev + report.p_d;
  report.dic_pv = mean_dev + report.p_v;
  return report;
}

PredictiveReport posterior_predictive(const PosteriorDraws& draws,
                                      const ModelContext& model,
                                      std::uint64_t seed) {
  Pooled pooled(draws);
  const int t = pooled.size();
  if (t < 2)
    throw std::invalid_argument("posterior_predictive needs at least 2 draws");
  const Eigen::Index nn = model.n(), jj = model.j();

  PredictiveReport report;
  Rng rng(derive_seed(seed, 0x7265706c69636174ULL));
  report.replicates.reserve(static_cast<std::size_t>(t));
  for (int d = 0; d < t; ++d) {
    const ChainDraws& cd = pooled.chain(d);
    const std::size_t at = pooled.at(d);
    Eigen::LLT<Eigen::MatrixXd> chol(cd.sigma[at]);
    if (chol.info() != Eigen::Success)
      chol.compute(regularized_cov(cd.sigma[at]));
    Eigen::MatrixXd rep(nn, jj);
    for (Eigen::Index i = 0; i < nn; ++i)
      rep.row(i) = rng.mvnormal(cd.means[at].row(i).transpose(), chol).transpose();
    report.replicates.push_back(std::move(rep));
  }

  // Central 95% region per consumer by Mahalanobis depth of the replicate
  // cloud; an observation is inside when its depth does not exceed the 95%
  // quantile of the replicate depths.
  int inside_count = 0;
  for (Eigen::Index i = 0; i < nn; ++i) {
    Eigen::MatrixXd cloud(t, jj);
    for (int d = 0; d < t; ++d) cloud.row(d) = report.replicates[static_cast<std::size_t>(d)].row(i);
    const Eigen::VectorXd center = cloud.colwise().mean();
    const Eigen::MatrixXd centered = cloud.rowwise() - center.transpose();
    Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(t - 1);
    cov = regularized_cov(symmetrize(cov));
    Eigen::LLT<Eigen::MatrixXd> chol(cov);
    std::vector<double> depths(static_cast<std::size_t>(t));
    for (int d = 0; d < t; ++d) {
      const Eigen::VectorXd r = cloud.row(d).transpose() - center;
      depths[static_cast<std::size_t>(d)] = r.dot(chol.solve(r));
    }
    const double cutoff = sample_quantile(depths, 0.95);
    const Eigen::VectorXd obs_r = model.data().isotopes.row(i).transpose() - center;
    const bool is_inside = obs_r.dot(chol.solve(obs_r)) <= cutoff;
    report.inside.push_back(is_inside);
    inside_count += is_inside ? 1 : 0;
  }
  report.coverage_95 = nn > 0 ? static_cast<double>(inside_count) /
                                    static_cast<double>(nn)
                              : 1.0;

  if (jj != 2) {
    report.notice = "predictive density grid is only drawn for J = 2";
    return report;
  }
  if (nn == 0) return report;

  // Pool all replicate points and evaluate a product-normal kernel density
  // with per-axis normal-reference bandwidths on a regular grid.
  const Eigen::Index points = static_cast<Eigen::Index>(t) * nn;
  Eigen::MatrixXd all(points, 2);
  for (int d = 0; d < t; ++d)
    all.middleRows(static_cast<Eigen::Index>(d) * nn, nn) =
        report.replicates[static_cast<std::size_t>(d)];
  Eigen::Vector2d lo = all.colwise().minCoeff();
  Eigen::Vector2d hi = all.colwise().maxCoeff();
  const Eigen::Vector2d pad = 0.1 * (hi - lo).cwiseMax(1e-6);
  lo -= pad;
  hi += pad;
  Eigen::Vector2d bandwidth;
  for (int a = 0; a < 2; ++a) {
    const double mean = all.col(a).mean();
    const double sd = std::sqrt((all.col(a).array() - mean).square().sum() /
                                static_cast<double>(points - 1));
    bandwidth[a] =
        std::max(1e-6, sd * std::pow(static_cast<double>(points), -1.0 / 6.0));
  }
  const Eigen::Index grid = 60;
  report.grid_x.setLinSpaced(grid, lo[0], hi[0]);
  report.grid_y.setLinSpaced(grid, lo[1], hi[1]);
  report.density = Eigen::MatrixXd::Zero(grid, grid);
  const double norm = 1.0 / (2.0 * 3.14159265358979323846 * bandwidth[0] *
                             bandwidth[1] * static_cast<double>(points));
  for (Eigen::Index p = 0; p < points; ++p) {
    for (Eigen::Index gy = 0; gy < grid; ++gy) {
      const double zy = (report.grid_y[gy] - all(p, 1)) / bandwidth[1];
      if (std::abs(zy) > 6.0) continue;
      for (Eigen::Index gx = 0; gx < grid; ++gx) {
        const double zx = (report.grid_x[gx] - all(p, 0)) / bandwidth[0];
        if (std::abs(zx) > 6.0) continue;
        report.density(gy, gx) += norm * std::exp(-0.5 * (zx * zx + zy * zy));
      }
    }
  }
  report.density_computed = true;
  return report;
}

double compare_consumers(const PosteriorDraws& draws, Eigen::Index i,
                         Eigen::Index i_other, Eigen::Index source) {
  Pooled pooled(draws);
  if (pooled.size() == 0) throw std::invalid_argument("no retained draws");
  if (i < 0 || i >= draws.n || i_other < 0 || i_other >= draws.n)
    throw std::invalid_argument("consumer index out of range");
  if (source < 0 || source >= draws.kdim)
    throw std::invalid_argument("source index out of range");
  int more = 0;
  for (int d = 0; d < pooled.size(); ++d) {
    const Eigen::MatrixXd& p = pooled.chain(d).proportions[pooled.at(d)];
    if (p(i, source) > p(i_other, source)) ++more;
  }
  return static_cast<double>(more) / static_cast<double>(pooled.size());
}

double sample_quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values.front();
  const double h = prob * (static_cast<double>(values.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = h - std::floor(h);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

PosteriorSummary summarize(const PosteriorDraws& draws) {
  Pooled pooled(draws);
  const int t = pooled.size();
  if (t == 0) throw std::invalid_argument("summarize needs retained draws");

  PosteriorSummary out;
  out.source_names = draws.source_names;
  out.n = draws.n;
  out.kdim = draws.kdim;
  const Eigen::Index nn = draws.n, kk = draws.kdim;
  out.mean = Eigen::MatrixXd::Zero(nn, kk);
  out.sd = Eigen::MatrixXd::Zero(nn, kk);
  out.q025.resize(nn, kk);
  out.q25.resize(nn, kk);
  out.q50.resize(nn, kk);
  out.q75.resize(nn, kk);
  out.q975.resize(nn, kk);

  std::vector<double> series(static_cast<std::size_t>(t));
  for (Eigen::Index i = 0; i < nn; ++i) {
    for (Eigen::Index kc = 0; kc < kk; ++kc) {
      for (int d = 0; d < t; ++d)
        series[static_cast<std::size_t>(d)] =
            pooled.chain(d).proportions[pooled.at(d)](i, kc);
      double mean = 0.0;
      for (double v : series) mean += v;
      mean /= static_cast<double>(t);
      double var = 0.0;
      for (double v : series) var += (v - mean) * (v - mean);
      var = t > 1 ? var / static_cast<double>(t - 1) : 0.0;
      out.mean(i, kc) = mean;
      out.sd(i, kc) = std::sqrt(var);
      out.q025(i, kc) = sample_quantile(series, 0.025);
      out.q25(i, kc) = sample_quantile(series, 0.25);
      out.q50(i, kc) = sample_quantile(series, 0.5);
      out.q75(i, kc) = sample_quantile(series, 0.75);
      out.q975(i, kc) = sample_quantile(series, 0.975);
    }
  }

  // Correlation of population-mean proportions across draws.
  out.correlation = Eigen::MatrixXd::Identity(kk, kk);
  if (nn > 0 && t > 1) {
    Eigen::MatrixXd pop(t, kk);
    for (int d = 0; d < t; ++d)
      pop.row(d) = pooled.chain(d).proportions[pooled.at(d)].colwise().mean();
    const Eigen::RowVectorXd mean = pop.colwise().mean();
    const Eigen::MatrixXd centered = pop.rowwise() - mean;
    const Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(t - 1);
    for (Eigen::Index a = 0; a < kk; ++a)
      for (Eigen::Index b = 0; b < kk; ++b) {
        const double denom = std::sqrt(cov(a, a) * cov(b, b));
        out.correlation(a, b) = denom > 0.0 ? cov(a, b) / denom : (a == b ? 1.0 : 0.0);
      }
  }

  if (draws.chains.size() >= 2 && draws.retained_per_chain() >= 10) {
    out.rhat = gelman_rubin(draws);
    out.rhat_available = true;
  }
  return out;
}

double mcse_mean(const Eigen::VectorXd& series) {
  const Eigen::Index n = series.size();
  if (n < 4) throw std::invalid_argument("mcse_mean needs at least 4 values");
  const auto batches = static_cast<Eigen::Index>(std::floor(std::sqrt(n)));
  const Eigen::Index per = n / batches;
  Eigen::VectorXd means(batches);
  for (Eigen::Index b = 0; b < batches; ++b)
    means[b] = series.segment(b * per, per).mean();
  const double grand = means.mean();
  const double var_batch =
      (means.array() - grand).square().sum() / static_cast<double>(batches - 1);
  return std::sqrt(var_batch / static_cast<double>(batches));
}

}  // namespace isomix
