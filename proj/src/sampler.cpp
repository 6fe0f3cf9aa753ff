#include "isomix/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace isomix {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double phi_prior_row(const ParameterState& state, const Eigen::MatrixXd& gamma,
                     Eigen::Index i) {
  double total = 0.0;
  for (Eigen::Index kc = 0; kc < state.phi.cols(); ++kc)
    total += normal_logpdf(state.phi(i, kc), gamma(i, kc), state.kappa[kc]);
  return total;
}

}  // namespace

Sweeper::Sweeper(const ModelContext& model, const SamplerOptions& options)
    : options_(options) {
  const Eigen::Index nn = model.n();
  const Eigen::Index d_phi = model.coords();
  const Eigen::Index d_beta = model.l();
  target_phi_ = d_phi == 1 ? 0.44 : 0.3;
  target_beta_ = d_beta == 1 ? 0.44 : 0.3;
  phi_log_scale_.assign(static_cast<std::size_t>(nn),
                        std::log(2.38 / std::sqrt(static_cast<double>(d_phi))));
  beta_log_scale_.assign(static_cast<std::size_t>(model.coords()),
                         std::log(2.38 / std::sqrt(static_cast<double>(d_beta))));
  phi_batch_accepts_.assign(phi_log_scale_.size(), 0);
  phi_batch_count_.assign(phi_log_scale_.size(), 0);
  phi_batch_index_.assign(phi_log_scale_.size(), 0);
  beta_batch_accepts_.assign(beta_log_scale_.size(), 0);
  beta_batch_count_.assign(beta_log_scale_.size(), 0);
  beta_batch_index_.assign(beta_log_scale_.size(), 0);
  trans_log_scale_.assign(static_cast<std::size_t>(model.coords() * d_beta),
                          std::log(2.38));
  trans_batch_accepts_.assign(trans_log_scale_.size(), 0);
  trans_batch_count_.assign(trans_log_scale_.size(), 0);
  trans_batch_index_.assign(trans_log_scale_.size(), 0);
  const Eigen::Index d_all = d_phi * d_beta;
  mv_mean_ = Eigen::VectorXd::Zero(d_all);
  mv_m2_ = Eigen::MatrixXd::Zero(d_all, d_all);
  mv_log_scale_ = std::log(2.38 / std::sqrt(static_cast<double>(d_all)));
}

void Sweeper::adapt_scale(double& log_scale, int& batch_accepts, int& batch_count,
                          int& batch_index, double target) {
  if (batch_count < adapt_window_) return;
  ++batch_index;
  const double rate =
      static_cast<double>(batch_accepts) / static_cast<double>(batch_count);
  const double step = std::min(0.25, 1.0 / std::sqrt(static_cast<double>(batch_index)));
  log_scale += step * (rate - target);
  log_scale = std::clamp(log_scale, -10.0, 10.0);
  batch_accepts = 0;
  batch_count = 0;
}

void Sweeper::update_phi(const ModelContext& model, ParameterState& state, Rng& rng,
                         bool adapt) {
  const Eigen::Index nn = model.n();
  if (nn == 0) return;
  const Eigen::MatrixXd gamma = linear_predictor(
      model.design().x, state.beta, model.spec().use_helmert_contrasts);
  for (Eigen::Index i = 0; i < nn; ++i) {
    double current = phi_prior_row(state, gamma, i);
    if (options_.include_likelihood)
      current += model.collapsed_likelihood_row(state, i);
    const Eigen::RowVectorXd saved = state.phi.row(i);
    const double scale = std::exp(phi_log_scale_[static_cast<std::size_t>(i)]);
    state.phi.row(i) =
        saved + scale * rng.normal_vector(state.phi.cols()).transpose();
    double proposed = phi_prior_row(state, gamma, i);
    if (options_.include_likelihood)
      proposed += model.collapsed_likelihood_row(state, i);
    const bool accept = std::log(rng.uniform_pos()) < proposed - current;
    if (!accept) state.phi.row(i) = saved;
    ++phi_proposals_;
    phi_accepts_ += accept ? 1 : 0;
    if (adapt) {
      auto is = static_cast<std::size_t>(i);
      phi_batch_accepts_[is] += accept ? 1 : 0;
      ++phi_batch_count_[is];
      adapt_scale(phi_log_scale_[is], phi_batch_accepts_[is], phi_batch_count_[is],
                  phi_batch_index_[is], target_phi_);
    }
  }
}

void Sweeper::update_beta(const ModelContext& model, ParameterState& state, Rng& rng,
                          bool adapt) {
  for (Eigen::Index kc = 0; kc < model.coords(); ++kc) {
    const double current = model.phi_log_prior(state) +
                           model.beta_log_prior(state.beta, state.tau);
    const Eigen::RowVectorXd saved = state.beta.row(kc);
    const double scale = std::exp(beta_log_scale_[static_cast<std::size_t>(kc)]);
    state.beta.row(kc) =
        saved + scale * rng.normal_vector(state.beta.cols()).transpose();
    const double proposed = model.phi_log_prior(state) +
                            model.beta_log_prior(state.beta, state.tau);
    const bool accept = std::log(rng.uniform_pos()) < proposed - current;
    if (!accept) state.beta.row(kc) = saved;
    ++beta_proposals_;
    beta_accepts_ += accept ? 1 : 0;
    if (adapt) {
      auto ks = static_cast<std::size_t>(kc);
      beta_batch_accepts_[ks] += accept ? 1 : 0;
      ++beta_batch_count_[ks];
      adapt_scale(beta_log_scale_[ks], beta_batch_accepts_[ks], beta_batch_count_[ks],
                  beta_batch_index_[ks], target_beta_);
    }
  }
}

void Sweeper::update_translation(const ModelContext& model, ParameterState& state,
                                 Rng& rng, bool adapt) {
  const Eigen::Index nn = model.n();
  if (nn == 0) return;
  const bool helmert = model.spec().use_helmert_contrasts;
  double cur_lik = 0.0;
  if (options_.include_likelihood)
    for (Eigen::Index i = 0; i < nn; ++i)
      cur_lik += model.collapsed_likelihood_row(state, i);
  // Attempts to replace beta(kc, col) with proposal_coef, shifting every phi
  // row by the induced change in the linear predictor. phi - gamma is
  // invariant under the move, so the phi prior (and the kappa terms with it)
  // cancels from the acceptance ratio; log_q_diff carries any asymmetric
  // proposal correction.
  const auto attempt = [&](Eigen::Index kc, Eigen::Index col,
                           double proposal_coef, double log_q_diff) {
    const double current = model.beta_log_prior(state.beta, state.tau) + cur_lik;
    const double saved_coef = state.beta(kc, col);
    const Eigen::MatrixXd saved_phi = state.phi;
    const Eigen::MatrixXd gamma_old =
        linear_predictor(model.design().x, state.beta, helmert);
    state.beta(kc, col) = proposal_coef;
    state.phi +=
        linear_predictor(model.design().x, state.beta, helmert) - gamma_old;
    double prop_lik = 0.0;
    if (options_.include_likelihood)
      for (Eigen::Index i = 0; i < nn; ++i)
        prop_lik += model.collapsed_likelihood_row(state, i);
    const double proposed =
        model.beta_log_prior(state.beta, state.tau) + prop_lik;
    const bool accept =
        std::log(rng.uniform_pos()) < proposed - current - log_q_diff;
    if (accept) {
      cur_lik = prop_lik;
    } else {
      state.beta(kc, col) = saved_coef;
      state.phi = saved_phi;
    }
    return accept;
  };

  const double prior_sd = model.spec().priors.beta_sd;
  for (Eigen::Index kc = 0; kc < model.coords(); ++kc) {
    for (Eigen::Index col = 0; col < model.l(); ++col) {
      const auto idx = static_cast<std::size_t>(kc * model.l() + col);
      const double step = std::exp(trans_log_scale_[idx]) * rng.normal();
      bool accept = attempt(kc, col, state.beta(kc, col) + step, 0.0);
      ++trans_proposals_;
      trans_accepts_ += accept ? 1 : 0;
      if (adapt) {
        trans_batch_accepts_[idx] += accept ? 1 : 0;
        ++trans_batch_count_[idx];
        adapt_scale(trans_log_scale_[idx], trans_batch_accepts_[idx],
                    trans_batch_count_[idx], trans_batch_index_[idx], 0.44);
      }

      // Independence refresh from the marginal prior. Where the likelihood is
      // flat (parts saturated against a simplex face) the ratio is near one,
      // so this jumps across prior-scale regions a random walk would need many
      // iterations to cross.
      const double cur_coef = state.beta(kc, col);
      const double ref = prior_sd * rng.normal();
      const double log_q_diff =
          (cur_coef * cur_coef - ref * ref) / (2.0 * prior_sd * prior_sd);
      accept = attempt(kc, col, ref, log_q_diff);
      ++refresh_proposals_;
      refresh_accepts_ += accept ? 1 : 0;
    }
  }

  // Block translation over all coefficients at once. The proposal covariance
  // is learned from the beta draws seen during adaptation, so the move lines
  // up with whatever correlated direction the coefficients drift along (for
  // example the straight line vec(beta) follows when a proportion saturates
  // toward zero and every log-ratio coordinate inflates together).
  const Eigen::Index d_all = model.coords() * model.l();
  Eigen::Map<Eigen::VectorXd> b_vec(state.beta.data(),
                                    state.beta.size());
  if (adapt) {
    ++mv_count_;
    const Eigen::VectorXd delta = b_vec - mv_mean_;
    mv_mean_ += delta / static_cast<double>(mv_count_);
    mv_m2_ += delta * (b_vec - mv_mean_).transpose();
  }
  Eigen::VectorXd step = rng.normal_vector(d_all);
  if (mv_count_ > 2 * d_all + 10) {
    Eigen::MatrixXd cov = mv_m2_ / static_cast<double>(mv_count_ - 1);
    cov.diagonal().array() += 1e-8;
    Eigen::LLT<Eigen::MatrixXd> chol(cov);
    if (chol.info() == Eigen::Success) step = chol.matrixL() * step;
  }
  step *= std::exp(mv_log_scale_);
  {
    const double current = model.beta_log_prior(state.beta, state.tau) + cur_lik;
    const Eigen::MatrixXd saved_beta = state.beta;
    const Eigen::MatrixXd saved_phi = state.phi;
    const Eigen::MatrixXd gamma_old =
        linear_predictor(model.design().x, state.beta, helmert);
    b_vec += step;
    state.phi +=
        linear_predictor(model.design().x, state.beta, helmert) - gamma_old;
    double prop_lik = 0.0;
    if (options_.include_likelihood)
      for (Eigen::Index i = 0; i < nn; ++i)
        prop_lik += model.collapsed_likelihood_row(state, i);
    const double proposed =
        model.beta_log_prior(state.beta, state.tau) + prop_lik;
    const bool accept = std::log(rng.uniform_pos()) < proposed - current;
    if (!accept) {
      state.beta = saved_beta;
      state.phi = saved_phi;
    }
    ++mv_proposals_;
    mv_accepts_ += accept ? 1 : 0;
    if (adapt) {
      mv_batch_accepts_ += accept ? 1 : 0;
      ++mv_batch_count_;
      adapt_scale(mv_log_scale_, mv_batch_accepts_, mv_batch_count_,
                  mv_batch_index_, d_all == 1 ? 0.44 : 0.3);
    }
  }
}

void Sweeper::update_latents(const ModelContext& model, ParameterState& state,
                             Rng& rng) {
  const Eigen::Index nn = model.n();
  const Eigen::Index kk = model.k();
  const Eigen::Index jj = model.j();
  if (nn == 0) return;
  const bool with_lik = options_.include_likelihood;

  Eigen::MatrixXd sigma_inv;
  if (with_lik) {
    Eigen::LLT<Eigen::MatrixXd> chol(state.sigma);
    if (chol.info() != Eigen::Success)
      throw std::runtime_error("sampler: sigma became non-positive-definite");
    sigma_inv = symmetrize(chol.solve(Eigen::MatrixXd::Identity(jj, jj)));
  }

  for (Eigen::Index i = 0; i < nn; ++i) {
    const auto is = static_cast<std::size_t>(i);
    Eigen::MatrixXd w;  // K x J mixing weights
    Eigen::VectorXd mu_i;
    if (with_lik) {
      const Eigen::VectorXd p = model.proportions(state, i);
      w = mixing_weights(p, model.concentration(), jj);
      mu_i = ((state.s[is] + state.c[is]).cwiseProduct(w)).colwise().sum().transpose();
    }

    // s and c enter the mean symmetrically; update both with the same
    // conditional form.
    for (int which = 0; which < 2; ++which) {
      Eigen::MatrixXd& latent = which == 0 ? state.s[is] : state.c[is];
      for (Eigen::Index kc = 0; kc < kk; ++kc) {
        const ModelContext::LatentPrior& prior =
            which == 0 ? model.source_prior(i, kc) : model.tef_prior(i, kc);
        if (prior.fixed) continue;
        Eigen::MatrixXd lambda = prior.dist.precision();
        Eigen::VectorXd b = lambda * prior.mu;
        if (with_lik) {
          const Eigen::VectorXd wk = w.row(kc).transpose();
          lambda += sigma_inv.cwiseProduct(wk * wk.transpose());
          const Eigen::VectorXd partial_resid =
              model.data().isotopes.row(i).transpose() - mu_i +
              wk.cwiseProduct(latent.row(kc).transpose());
          b += wk.cwiseProduct(sigma_inv * partial_resid);
        }
        Eigen::LLT<Eigen::MatrixXd> lambda_chol(symmetrize(lambda));
        if (lambda_chol.info() != Eigen::Success)
          throw std::runtime_error("sampler: latent conditional precision not PD");
        const Eigen::VectorXd mean = lambda_chol.solve(b);
        const Eigen::VectorXd draw =
            mean + lambda_chol.matrixU().solve(rng.normal_vector(jj));
        if (with_lik) {
          const Eigen::VectorXd wk = w.row(kc).transpose();
          mu_i += wk.cwiseProduct(draw - latent.row(kc).transpose());
        }
        latent.row(kc) = draw.transpose();
      }
    }
  }
}

void Sweeper::update_sigma(const ModelContext& model, ParameterState& state,
                           Rng& rng) {
  double dof = model.sigma_dof();
  Eigen::MatrixXd scale = model.sigma_scale();
  if (options_.include_likelihood) {
    for (Eigen::Index i = 0; i < model.n(); ++i) {
      const Eigen::VectorXd resid =
          model.data().isotopes.row(i).transpose() - model.consumer_mean(state, i);
      scale += resid * resid.transpose();
    }
    dof += static_cast<double>(model.n());
  }
  state.sigma = rng.inverse_wishart(dof, symmetrize(scale));
}

void Sweeper::update_kappa(const ModelContext& model, ParameterState& state,
                           Rng& rng) {
  const Eigen::MatrixXd gamma = linear_predictor(
      model.design().x, state.beta, model.spec().use_helmert_contrasts);
  const double n = static_cast<double>(model.n());
  for (Eigen::Index kc = 0; kc < model.coords(); ++kc) {
    double ssr = 0.0;
    for (Eigen::Index i = 0; i < model.n(); ++i) {
      const double r = state.phi(i, kc) - gamma(i, kc);
      ssr += r * r;
    }
    state.kappa[kc] = rng.inverse_gamma(model.spec().priors.kappa_shape + 0.5 * n,
                                        model.spec().priors.kappa_rate + 0.5 * ssr);
  }
}

void Sweeper::update_tau(const ModelContext& model, ParameterState& state, Rng& rng) {
  if (!model.has_splines()) return;
  for (Eigen::Index kc = 0; kc < model.coords(); ++kc) {
    double nd = 0.0, ssd = 0.0;
    for (const auto& block : model.design().spline_blocks) {
      for (Eigen::Index l = block.first + 1; l < block.first + block.count; ++l) {
        const double d = state.beta(kc, l) - state.beta(kc, l - 1);
        nd += 1.0;
        ssd += d * d;
      }
    }
    state.tau[kc] = rng.gamma(model.spec().priors.tau_shape + 0.5 * nd,
                              model.spec().priors.tau_rate + 0.5 * ssd);
  }
}

void Sweeper::sweep(const ModelContext& model, ParameterState& state, Rng& rng,
                    bool adapt) {
  if (options_.update_phi) update_phi(model, state, rng, adapt);
  if (options_.update_beta) update_beta(model, state, rng, adapt);
  if (options_.update_phi && options_.update_beta)
    update_translation(model, state, rng, adapt);
  if (options_.update_latents) update_latents(model, state, rng);
  if (options_.update_sigma) update_sigma(model, state, rng);
  if (options_.update_kappa) update_kappa(model, state, rng);
  if (options_.update_tau) update_tau(model, state, rng);
}

std::map<std::string, double> Sweeper::acceptance_rates() const {
  std::map<std::string, double> rates;
  if (phi_proposals_ > 0)
    rates["phi"] = static_cast<double>(phi_accepts_) /
                   static_cast<double>(phi_proposals_);
  if (beta_proposals_ > 0)
    rates["beta"] = static_cast<double>(beta_accepts_) /
                    static_cast<double>(beta_proposals_);
  if (trans_proposals_ > 0)
    rates["translation"] = static_cast<double>(trans_accepts_) /
                           static_cast<double>(trans_proposals_);
  if (refresh_proposals_ > 0)
    rates["refresh"] = static_cast<double>(refresh_accepts_) /
                       static_cast<double>(refresh_proposals_);
  if (mv_proposals_ > 0)
    rates["translation_block"] = static_cast<double>(mv_accepts_) /
                                 static_cast<double>(mv_proposals_);
  return rates;
}

void Sweeper::reset_acceptance_counts() {
  phi_accepts_ = phi_proposals_ = 0;
  beta_accepts_ = beta_proposals_ = 0;
  trans_accepts_ = trans_proposals_ = 0;
  refresh_accepts_ = refresh_proposals_ = 0;
  mv_accepts_ = mv_proposals_ = 0;
}

namespace {

std::vector<std::string> build_scalar_labels(const ModelContext& model) {
  std::vector<std::string> labels;
  for (Eigen::Index kc = 0; kc < model.coords(); ++kc)
    for (Eigen::Index l = 0; l < model.l(); ++l)
      labels.push_back("beta." + std::to_string(kc + 1) + "." +
                       model.design().labels[static_cast<std::size_t>(l)]);
  for (Eigen::Index kc = 0; kc < model.coords(); ++kc)
    labels.push_back("kappa." + std::to_string(kc + 1));
  if (model.has_splines())
    for (Eigen::Index kc = 0; kc < model.coords(); ++kc)
      labels.push_back("tau." + std::to_string(kc + 1));
  for (Eigen::Index j1 = 0; j1 < model.j(); ++j1)
    for (Eigen::Index j2 = 0; j2 <= j1; ++j2)
      labels.push_back("sigma." + std::to_string(j1 + 1) + "." +
                       std::to_string(j2 + 1));
  for (Eigen::Index i = 0; i < model.n(); ++i)
    for (Eigen::Index kc = 0; kc < model.k(); ++kc)
      labels.push_back("p." + std::to_string(i + 1) + "." +
                       model.sources().source_names[static_cast<std::size_t>(kc)]);
  labels.push_back("deviance");
  return labels;
}

ChainDraws run_chain(const ModelContext& model, const McmcConfig& config,
                     const SamplerOptions& options, int chain_index) {
  Rng rng = Rng::for_stream(config.seed, static_cast<std::uint64_t>(chain_index));
  ParameterState state = model.initial_state();

  const auto target = [&](const ParameterState& s) {
    return options.include_likelihood ? model.log_joint(s) : model.log_prior(s);
  };
  bool initialized = false;
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (Eigen::Index i = 0; i < state.phi.rows(); ++i)
      for (Eigen::Index kc = 0; kc < state.phi.cols(); ++kc)
        state.phi(i, kc) = rng.normal();
    if (std::isfinite(target(state))) {
      initialized = true;
      break;
    }
  }
  if (!initialized)
    throw std::runtime_error(
        "sampler initialization failure: no finite log density in 100 attempts");

  Sweeper sweeper(model, options);
  ChainDraws draws;
  const Eigen::Index nn = model.n(), kk = model.k(), jj = model.j();
  draws.s_mean = Eigen::MatrixXd::Zero(nn * kk, jj);
  draws.c_mean = Eigen::MatrixXd::Zero(nn * kk, jj);

  int retained = 0;
  for (int iter = 1; iter <= config.iterations; ++iter) {
    sweeper.sweep(model, state, rng, iter <= config.burn_in);
    if (iter == config.burn_in) sweeper.reset_acceptance_counts();
    if (iter <= config.burn_in || (iter - config.burn_in) % config.thin != 0)
      continue;
    draws.beta.push_back(state.beta);
    draws.phi.push_back(state.phi);
    draws.kappa.push_back(state.kappa);
    draws.tau.push_back(state.tau);
    draws.sigma.push_back(state.sigma);
    Eigen::MatrixXd props(nn, kk), means(nn, jj);
    for (Eigen::Index i = 0; i < nn; ++i) {
      props.row(i) = model.proportions(state, i).transpose();
      means.row(i) = model.consumer_mean(state, i).transpose();
    }
    draws.proportions.push_back(std::move(props));
    draws.means.push_back(std::move(means));
    draws.deviance.push_back(
        options.include_likelihood ? -2.0 * model.log_likelihood(state) : 0.0);
    draws.iteration.push_back(iter);
    for (Eigen::Index i = 0; i < nn; ++i) {
      draws.s_mean.middleRows(i * kk, kk) += state.s[static_cast<std::size_t>(i)];
      draws.c_mean.middleRows(i * kk, kk) += state.c[static_cast<std::size_t>(i)];
    }
    ++retained;
  }
  if (retained > 0) {
    draws.s_mean /= static_cast<double>(retained);
    draws.c_mean /= static_cast<double>(retained);
  }
  draws.acceptance = sweeper.acceptance_rates();
  return draws;
}

}  // namespace

int PosteriorDraws::total_draws() const {
  int total = 0;
  for (const auto& chain : chains) total += chain.size();
  return total;
}

PosteriorDraws run(const ModelContext& model, const McmcConfig& config,
                   const SamplerOptions& options) {
  if (config.chains < 1) throw std::invalid_argument("need at least one chain");
  if (config.burn_in < 0 || config.burn_in >= config.iterations)
    throw std::invalid_argument("burn-in must satisfy 0 <= burn_in < iterations");
  if (config.thin < 1) throw std::invalid_argument("thin must be >= 1");
  if (config.adapt_window < 1)
    throw std::invalid_argument("adapt_window must be >= 1");

  PosteriorDraws draws;
  draws.config = config;
  draws.scalar_labels = build_scalar_labels(model);
  draws.source_names = model.sources().source_names;
  draws.n = model.n();
  draws.jdim = model.j();
  draws.kdim = model.k();
  draws.ldim = model.l();
  draws.chains.resize(static_cast<std::size_t>(config.chains));

  const int workers = std::max(1, std::min(config.threads, config.chains));
  if (workers == 1) {
    for (int c = 0; c < config.chains; ++c)
      draws.chains[static_cast<std::size_t>(c)] = run_chain(model, config, options, c);
    return draws;
  }

  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int c = next.fetch_add(1); c < config.chains; c = next.fetch_add(1))
          draws.chains[static_cast<std::size_t>(c)] =
              run_chain(model, config, options, c);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return draws;
}

Eigen::MatrixXd scalar_matrix(const PosteriorDraws& draws, int chain) {
  const ChainDraws& cd = draws.chains.at(static_cast<std::size_t>(chain));
  const Eigen::Index cols = static_cast<Eigen::Index>(draws.scalar_labels.size());
  Eigen::MatrixXd out(cd.size(), cols);
  for (int d = 0; d < cd.size(); ++d) {
    const auto ds = static_cast<std::size_t>(d);
    Eigen::Index at = 0;
    for (Eigen::Index kc = 0; kc < draws.kdim - 1; ++kc)
      for (Eigen::Index l = 0; l < draws.ldim; ++l) out(d, at++) = cd.beta[ds](kc, l);
    for (Eigen::Index kc = 0; kc < draws.kdim - 1; ++kc)
      out(d, at++) = cd.kappa[ds][kc];
    if (cd.tau[ds].size() > 0)
      for (Eigen::Index kc = 0; kc < draws.kdim - 1; ++kc)
        out(d, at++) = cd.tau[ds][kc];
    for (Eigen::Index j1 = 0; j1 < draws.jdim; ++j1)
      for (Eigen::Index j2 = 0; j2 <= j1; ++j2) out(d, at++) = cd.sigma[ds](j1, j2);
    for (Eigen::Index i = 0; i < draws.n; ++i)
      for (Eigen::Index kc = 0; kc < draws.kdim; ++kc)
        out(d, at++) = cd.proportions[ds](i, kc);
    out(d, at++) = cd.deviance[ds];
    if (at != cols)
      throw std::logic_error("scalar_matrix: label/column count mismatch");
  }
  return out;
}

double GelmanRubinResult::worst() const {
  double w = kNaN;
  for (Eigen::Index i = 0; i < rhat.size(); ++i) {
    if (degenerate[static_cast<std::size_t>(i)]) continue;
    if (std::isnan(w) || rhat[i] > w) w = rhat[i];
  }
  return w;
}

GelmanRubinResult gelman_rubin(const PosteriorDraws& draws) {
  const int m = static_cast<int>(draws.chains.size());
  if (m < 2) throw std::invalid_argument("gelman_rubin needs at least 2 chains");
  const int n = draws.retained_per_chain();
  if (n < 10)
    throw std::invalid_argument("gelman_rubin needs at least 10 draws per chain");
  for (const auto& chain : draws.chains)
    if (chain.size() != n)
      throw std::invalid_argument("gelman_rubin: unequal chain lengths");

  std::vector<Eigen::MatrixXd> mats;
  mats.reserve(static_cast<std::size_t>(m));
  for (int c = 0; c < m; ++c) mats.push_back(scalar_matrix(draws, c));

  GelmanRubinResult result;
  result.labels = draws.scalar_labels;
  const Eigen::Index cols = static_cast<Eigen::Index>(draws.scalar_labels.size());
  result.rhat.resize(cols);
  result.degenerate.assign(static_cast<std::size_t>(cols), false);

  const double dn = static_cast<double>(n);
  for (Eigen::Index col = 0; col < cols; ++col) {
    Eigen::VectorXd chain_means(m);
    double w = 0.0;
    for (int c = 0; c < m; ++c) {
      const auto& series = mats[static_cast<std::size_t>(c)].col(col);
      const double mean = series.mean();
      chain_means[c] = mean;
      w += (series.array() - mean).square().sum() / (dn - 1.0);
    }
    w /= static_cast<double>(m);
    const double grand = chain_means.mean();
    const double b =
        dn * (chain_means.array() - grand).square().sum() / (m - 1.0);
    if (w <= 0.0) {
      result.rhat[col] = kNaN;
      result.degenerate[static_cast<std::size_t>(col)] = true;
      continue;
    }
    result.rhat[col] = std::sqrt(((dn - 1.0) / dn * w + b / dn) / w);
  }
  return result;
}

}  // namespace isomix
