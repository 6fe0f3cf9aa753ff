#include "isomix/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace isomix {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kPi = 3.14159265358979323846;

// -- Formula parsing ---------------------------------------------------------

struct FormulaParser {
  const std::string& text;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos])))
      ++pos;
  }

  bool peek(char c) {
    skip_ws();
    return pos < text.size() && text[pos] == c;
  }

  bool eat(char c) {
    if (!peek(c)) return false;
    ++pos;
    return true;
  }

  void expect(char c) {
    if (!eat(c))
      throw std::invalid_argument("formula: expected '" + std::string(1, c) +
                                  "' at position " + std::to_string(pos) + " in '" +
                                  text + "'");
  }

  static bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
  }

  std::string ident() {
    skip_ws();
    std::size_t start = pos;
    while (pos < text.size() && ident_char(text[pos])) ++pos;
    if (pos == start)
      throw std::invalid_argument("formula: expected a name at position " +
                                  std::to_string(pos) + " in '" + text + "'");
    return text.substr(start, pos - start);
  }

  double number(const std::string& what) {
    const std::string tok = ident();
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw std::invalid_argument("formula: " + what + " must be a number, got '" +
                                  tok + "'");
    }
  }

  Term parse_term() {
    skip_ws();
    if (pos < text.size() && text[pos] == '1' &&
        (pos + 1 == text.size() || !ident_char(text[pos + 1]))) {
      ++pos;
      Term t;
      t.kind = Term::Kind::Intercept;
      return t;
    }
    const std::string name = ident();
    if (!peek('(')) {
      Term t;
      t.kind = Term::Kind::Linear;
      t.covariate = name;
      return t;
    }
    expect('(');
    Term t;
    if (name == "harmonic") {
      t.kind = Term::Kind::Harmonic;
      t.covariate = ident();
      if (eat(',')) t.period = number("harmonic period");
      if (!(t.period > 0.0))
        throw std::invalid_argument("formula: harmonic period must be positive");
    } else if (name == "factor") {
      t.kind = Term::Kind::Factor;
      t.covariate = ident();
    } else if (name == "bspline") {
      t.kind = Term::Kind::Bspline;
      t.covariate = ident();
      if (eat(',')) t.knot_count = static_cast<int>(number("bspline knot count"));
      if (eat(',')) t.degree = static_cast<int>(number("bspline degree"));
      if (t.knot_count < 4)
        throw std::invalid_argument("formula: bspline needs at least 4 knots");
      if (t.degree < 1)
        throw std::invalid_argument("formula: bspline degree must be at least 1");
    } else if (name == "interaction") {
      t.kind = Term::Kind::Interaction;
      t.parents.push_back(parse_term());
      expect(',');
      t.parents.push_back(parse_term());
      for (const Term& p : t.parents)
        if (p.kind == Term::Kind::Interaction || p.kind == Term::Kind::Bspline)
          throw std::invalid_argument(
              "formula: interaction parents must be intercept, linear, "
              "harmonic, or factor terms");
    } else {
      throw std::invalid_argument("formula: unknown function '" + name + "'");
    }
    expect(')');
    return t;
  }
};

}  // namespace

std::vector<Term> parse_formula(const std::string& formula) {
  FormulaParser parser{formula};
  std::vector<Term> terms;
  terms.push_back(parser.parse_term());
  while (parser.eat('+')) terms.push_back(parser.parse_term());
  parser.skip_ws();
  if (parser.pos != formula.size())
    throw std::invalid_argument("formula: trailing input at position " +
                                std::to_string(parser.pos) + " in '" + formula + "'");
  return terms;
}

std::string format_term(const Term& term) {
  switch (term.kind) {
    case Term::Kind::Intercept:
      return "1";
    case Term::Kind::Linear:
      return term.covariate;
    case Term::Kind::Harmonic:
      return "harmonic(" + term.covariate + ", " + std::to_string(term.period) + ")";
    case Term::Kind::Factor:
      return "factor(" + term.covariate + ")";
    case Term::Kind::Bspline:
      return "bspline(" + term.covariate + ", " + std::to_string(term.knot_count) +
             ", " + std::to_string(term.degree) + ")";
    case Term::Kind::Interaction:
      return "interaction(" + format_term(term.parents[0]) + ", " +
             format_term(term.parents[1]) + ")";
  }
  return "";
}

std::string format_formula(const std::vector<Term>& terms) {
  std::string out;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i) out += " + ";
    out += format_term(terms[i]);
  }
  return out;
}

// -- Design matrix -----------------------------------------------------------

namespace {

struct ExpandedTerm {
  Eigen::MatrixXd cols;
  std::vector<std::string> labels;
  bool is_spline = false;
  std::optional<BsplineBasis> basis;
};

ExpandedTerm expand_term(const ConsumerDataset& dataset, const Term& term) {
  ExpandedTerm out;
  const Eigen::Index n = dataset.n();
  switch (term.kind) {
    case Term::Kind::Intercept: {
      out.cols = Eigen::MatrixXd::Ones(n, 1);
      out.labels = {"intercept"};
      break;
    }
    case Term::Kind::Linear: {
      out.cols = dataset.numeric_covariate(term.covariate);
      out.labels = {term.covariate};
      break;
    }
    case Term::Kind::Harmonic: {
      const Eigen::VectorXd t = dataset.numeric_covariate(term.covariate);
      out.cols.resize(n, 2);
      const Eigen::ArrayXd angle = 2.0 * kPi * t.array() / term.period;
      out.cols.col(0) = angle.cos();
      out.cols.col(1) = angle.sin();
      out.labels = {term.covariate + "_cos", term.covariate + "_sin"};
      break;
    }
    case Term::Kind::Factor: {
      const auto& cov = dataset.covariate(term.covariate);
      std::set<std::string> level_set(cov.raw.begin(), cov.raw.end());
      if (level_set.size() < 2)
        throw std::invalid_argument("factor '" + term.covariate +
                                    "' has fewer than 2 observed levels");
      // Treatment coding: first level in sorted order is the baseline.
      std::vector<std::string> levels(level_set.begin(), level_set.end());
      out.cols = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(levels.size() - 1));
      for (std::size_t lev = 1; lev < levels.size(); ++lev) {
        for (Eigen::Index i = 0; i < n; ++i)
          if (cov.raw[static_cast<std::size_t>(i)] == levels[lev])
            out.cols(i, static_cast<Eigen::Index>(lev - 1)) = 1.0;
        out.labels.push_back(term.covariate + "=" + levels[lev]);
      }
      break;
    }
    case Term::Kind::Bspline: {
      const Eigen::VectorXd t = dataset.numeric_covariate(term.covariate);
      if (t.size() == 0)
        throw std::invalid_argument("bspline term needs at least one observation");
      BsplineBasis basis(t.minCoeff(), t.maxCoeff(), term.knot_count, term.degree);
      out.cols = basis.evaluate(t);
      for (Eigen::Index l = 0; l < basis.size(); ++l)
        out.labels.push_back(term.covariate + "_bs" + std::to_string(l + 1));
      out.is_spline = true;
      out.basis = basis;
      break;
    }
    case Term::Kind::Interaction: {
      const ExpandedTerm a = expand_term(dataset, term.parents[0]);
      const ExpandedTerm b = expand_term(dataset, term.parents[1]);
      out.cols.resize(n, a.cols.cols() * b.cols.cols());
      Eigen::Index c = 0;
      for (Eigen::Index ca = 0; ca < a.cols.cols(); ++ca)
        for (Eigen::Index cb = 0; cb < b.cols.cols(); ++cb) {
          out.cols.col(c) = a.cols.col(ca).cwiseProduct(b.cols.col(cb));
          out.labels.push_back(a.labels[static_cast<std::size_t>(ca)] + ":" +
                               b.labels[static_cast<std::size_t>(cb)]);
          ++c;
        }
      break;
    }
  }
  return out;
}

}  // namespace

DesignMatrix build_design_matrix(const ConsumerDataset& dataset,
                                 const ModelSpec& spec) {
  if (spec.formula.empty())
    throw std::invalid_argument("model formula needs at least one term");
  DesignMatrix out;
  std::vector<ExpandedTerm> expanded;
  Eigen::Index total = 0;
  for (const Term& term : spec.formula) {
    expanded.push_back(expand_term(dataset, term));
    total += expanded.back().cols.cols();
  }
  out.x.resize(dataset.n(), total);
  Eigen::Index at = 0;
  for (ExpandedTerm& e : expanded) {
    out.x.middleCols(at, e.cols.cols()) = e.cols;
    out.labels.insert(out.labels.end(), e.labels.begin(), e.labels.end());
    if (e.is_spline) {
      out.spline_blocks.push_back({at, e.cols.cols()});
      out.spline_bases.push_back(*e.basis);
    }
    at += e.cols.cols();
  }
  if (!out.x.allFinite())
    throw std::invalid_argument("design matrix contains non-finite entries");
  return out;
}

// -- Predictor and mixture mean ----------------------------------------------

Eigen::MatrixXd linear_predictor(const Eigen::MatrixXd& x,
                                 const Eigen::MatrixXd& beta, bool use_helmert) {
  if (x.cols() != beta.cols())
    throw std::invalid_argument("linear_predictor: design has " +
                                std::to_string(x.cols()) + " columns, beta has " +
                                std::to_string(beta.cols()));
  if (!use_helmert || beta.rows() == 0) return x * beta.transpose();
  Eigen::MatrixXd effective = beta;
  for (Eigen::Index k = 1; k < beta.rows(); ++k) effective.row(k) += beta.row(0);
  return x * effective.transpose();
}

Eigen::VectorXd mixture_mean(const Eigen::VectorXd& p, const Eigen::MatrixXd& s,
                             const Eigen::MatrixXd& c, const Eigen::MatrixXd* q) {
  const Eigen::Index kk = p.size();
  const Eigen::Index jj = s.cols();
  if (s.rows() != kk || c.rows() != kk || c.cols() != jj)
    throw std::invalid_argument("mixture_mean: dimension mismatch");
  if (q && (q->rows() != kk || q->cols() != jj))
    throw std::invalid_argument("mixture_mean: concentration table mismatch");
  const Eigen::MatrixXd sc = s + c;
  if (!q) return sc.transpose() * p;
  Eigen::VectorXd mu(jj);
  for (Eigen::Index j = 0; j < jj; ++j) {
    const double denom = q->col(j).dot(p);
    mu[j] = (p.array() * q->col(j).array() * sc.col(j).array()).sum() / denom;
  }
  return mu;
}

Eigen::MatrixXd mixing_weights(const Eigen::VectorXd& p, const Eigen::MatrixXd* q,
                               Eigen::Index jdim) {
  Eigen::MatrixXd w(p.size(), jdim);
  if (!q) {
    w.colwise() = p;
    return w;
  }
  for (Eigen::Index j = 0; j < jdim; ++j) {
    const double denom = q->col(j).dot(p);
    w.col(j) = p.cwiseProduct(q->col(j)) / denom;
  }
  return w;
}

// -- ModelContext ------------------------------------------------------------

namespace {

Eigen::Index checked_source_count(const SourceSummary& sources) {
  if (sources.k() < 2) throw std::invalid_argument("need at least 2 sources");
  return sources.k();
}

}  // namespace

ModelContext::ModelContext(ConsumerDataset data, ModelSpec spec,
                           SourceSummary sources, TefSummary tefs)
    : data_(std::move(data)),
      spec_(std::move(spec)),
      sources_(std::move(sources)),
      tefs_(std::move(tefs)),
      design_(build_design_matrix(data_, spec_)),
      basis_(IlrBasis::build(checked_source_count(sources_))) {
  const Eigen::Index jj = data_.j();
  const Eigen::Index kk = sources_.k();
  if (sources_.j() != jj || tefs_.j() != jj)
    throw std::invalid_argument("isotope dimension mismatch between consumers and sources/TEFs");
  if (tefs_.k() != kk)
    throw std::invalid_argument("source/TEF source-count mismatch");
  for (const auto& g : sources_.by_source)
    if (g.mu.size() != jj || g.cov.rows() != jj || g.cov.cols() != jj)
      throw std::invalid_argument("malformed source summary");
  for (const auto& g : tefs_.by_source)
    if (g.mu.size() != jj || g.cov.rows() != jj || g.cov.cols() != jj)
      throw std::invalid_argument("malformed TEF summary");

  const PriorSpec& pr = spec_.priors;
  if (!(pr.beta_sd > 0.0) || !(pr.kappa_shape > 0.0) || !(pr.kappa_rate > 0.0) ||
      !(pr.tau_shape > 0.0) || !(pr.tau_rate > 0.0))
    throw std::invalid_argument("prior hyperparameters must be strictly positive");
  sigma_dof_ = pr.sigma_dof > 0.0 ? pr.sigma_dof : static_cast<double>(jj + 1);
  if (sigma_dof_ < static_cast<double>(jj))
    throw std::invalid_argument("inverse-Wishart dof must be at least J");
  if (pr.sigma_scale.size() == 0) {
    sigma_scale_ = Eigen::MatrixXd::Identity(jj, jj);
  } else {
    if (pr.sigma_scale.rows() != jj || pr.sigma_scale.cols() != jj)
      throw std::invalid_argument("sigma prior scale must be J x J");
    sigma_scale_ = pr.sigma_scale;
  }

  if (spec_.concentration) {
    const ConcentrationTable& q = *spec_.concentration;
    if (q.q.rows() != kk || q.q.cols() != jj)
      throw std::invalid_argument("concentration table must be K x J");
    if (!q.source_names.empty() && q.source_names != sources_.source_names)
      throw std::invalid_argument("concentration table source order mismatch");
  }

  rebuild_latent_priors();
}

namespace {

ModelContext::LatentPrior make_latent_prior(const GaussianSummary& g) {
  ModelContext::LatentPrior prior;
  prior.mu = g.mu;
  if (g.cov.size() == 0 || g.cov.cwiseAbs().maxCoeff() == 0.0) {
    // Exactly zero covariance: the latent is pinned at the mean and carries
    // no density term.
    prior.fixed = true;
    return prior;
  }
  prior.dist = GaussianDist(g.mu, g.degenerate ? regularized_cov(g.cov) : g.cov);
  return prior;
}

}  // namespace

void ModelContext::rebuild_latent_priors() {
  s_priors_.clear();
  c_priors_.clear();
  if (time_sources_.empty()) {
    for (const auto& g : sources_.by_source) s_priors_.push_back(make_latent_prior(g));
  } else {
    for (const auto& summary : time_sources_)
      for (const auto& g : summary.by_source) s_priors_.push_back(make_latent_prior(g));
  }
  for (const auto& g : tefs_.by_source) c_priors_.push_back(make_latent_prior(g));
}

void ModelContext::set_time_varying_sources(std::vector<SourceSummary> per_consumer) {
  if (static_cast<Eigen::Index>(per_consumer.size()) != n())
    throw std::invalid_argument("need one source summary per consumer");
  for (const auto& summary : per_consumer)
    if (summary.k() != k() || summary.j() != j())
      throw std::invalid_argument("per-consumer source summary has wrong shape");
  time_sources_ = std::move(per_consumer);
  rebuild_latent_priors();
}

const ModelContext::LatentPrior& ModelContext::source_prior(Eigen::Index i,
                                                            Eigen::Index source) const {
  if (time_sources_.empty()) return s_priors_[static_cast<std::size_t>(source)];
  return s_priors_[static_cast<std::size_t>(i * k() + source)];
}

const ModelContext::LatentPrior& ModelContext::tef_prior(Eigen::Index,
                                                         Eigen::Index source) const {
  return c_priors_[static_cast<std::size_t>(source)];
}

Eigen::VectorXd ModelContext::proportions(const ParameterState& state,
                                          Eigen::Index i) const {
  // Stable softmax of the basis expansion. Unlike ilr_inv this tolerates
  // coordinates extreme enough that a part underflows to 0: Metropolis
  // proposals must evaluate to a (vanishing) density, not throw.
  Eigen::VectorXd z = basis_.matrix() * state.phi.row(i).transpose();
  z.array() -= z.maxCoeff();
  const Eigen::VectorXd e = z.array().exp();
  return e / e.sum();
}

Eigen::VectorXd ModelContext::consumer_mean(const ParameterState& state,
                                            Eigen::Index i) const {
  return mixture_mean(proportions(state, i), state.s[static_cast<std::size_t>(i)],
                      state.c[static_cast<std::size_t>(i)], concentration());
}

double ModelContext::log_likelihood_row(
    const ParameterState& state, Eigen::Index i,
    const Eigen::LLT<Eigen::MatrixXd>& sigma_chol) const {
  return mvn_logpdf(data_.isotopes.row(i).transpose(), consumer_mean(state, i),
                    sigma_chol);
}

double ModelContext::log_likelihood(const ParameterState& state) const {
  Eigen::LLT<Eigen::MatrixXd> chol(state.sigma);
  if (chol.info() != Eigen::Success) return kNegInf;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n(); ++i)
    total += log_likelihood_row(state, i, chol);
  return total;
}

double ModelContext::collapsed_likelihood_row(const ParameterState& state,
                                              Eigen::Index i) const {
  const Eigen::Index jj = j();
  const Eigen::VectorXd p = proportions(state, i);
  const Eigen::MatrixXd w = mixing_weights(p, concentration(), jj);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(jj);
  Eigen::MatrixXd cov = state.sigma;
  for (Eigen::Index source = 0; source < k(); ++source) {
    const LatentPrior& sp = source_prior(i, source);
    const LatentPrior& cp = tef_prior(i, source);
    const Eigen::VectorXd wk = w.row(source).transpose();
    mean += wk.cwiseProduct(sp.mu + cp.mu);
    const Eigen::MatrixXd outer = wk * wk.transpose();
    if (!sp.fixed) cov += outer.cwiseProduct(sp.dist.cov());
    if (!cp.fixed) cov += outer.cwiseProduct(cp.dist.cov());
  }
  Eigen::LLT<Eigen::MatrixXd> chol(cov);
  if (chol.info() != Eigen::Success) return kNegInf;
  return mvn_logpdf(data_.isotopes.row(i).transpose(), mean, chol);
}

double ModelContext::beta_log_prior(const Eigen::MatrixXd& beta,
                                    const Eigen::VectorXd& tau) const {
  const double var_b = spec_.priors.beta_sd * spec_.priors.beta_sd;
  std::vector<bool> in_spline(static_cast<std::size_t>(design_.l()), false);
  for (const auto& block : design_.spline_blocks)
    for (Eigen::Index l = block.first; l < block.first + block.count; ++l)
      in_spline[static_cast<std::size_t>(l)] = true;

  double total = 0.0;
  for (Eigen::Index kc = 0; kc < beta.rows(); ++kc) {
    for (Eigen::Index l = 0; l < beta.cols(); ++l)
      if (!in_spline[static_cast<std::size_t>(l)])
        total += normal_logpdf(beta(kc, l), 0.0, var_b);
    for (const auto& block : design_.spline_blocks) {
      if (tau.size() <= kc || !(tau[kc] > 0.0)) return kNegInf;
      total += normal_logpdf(beta(kc, block.first), 0.0, var_b);
      for (Eigen::Index l = block.first + 1; l < block.first + block.count; ++l)
        total += normal_logpdf(beta(kc, l) - beta(kc, l - 1), 0.0, 1.0 / tau[kc]);
    }
  }
  return total;
}

double ModelContext::phi_log_prior(const ParameterState& state) const {
  const Eigen::MatrixXd gamma =
      linear_predictor(design_.x, state.beta, spec_.use_helmert_contrasts);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n(); ++i)
    for (Eigen::Index kc = 0; kc < coords(); ++kc)
      total += normal_logpdf(state.phi(i, kc), gamma(i, kc), state.kappa[kc]);
  return total;
}

void ModelContext::validate_state(const ParameterState& state) const {
  const Eigen::Index nn = n(), kk = k(), jj = j();
  if (state.beta.rows() != kk - 1 || state.beta.cols() != design_.l())
    throw std::invalid_argument("state.beta has wrong shape");
  if (state.phi.rows() != nn || state.phi.cols() != kk - 1)
    throw std::invalid_argument("state.phi has wrong shape");
  if (state.kappa.size() != kk - 1)
    throw std::invalid_argument("state.kappa has wrong length");
  if (state.sigma.rows() != jj || state.sigma.cols() != jj)
    throw std::invalid_argument("state.sigma has wrong shape");
  if (static_cast<Eigen::Index>(state.s.size()) != nn ||
      static_cast<Eigen::Index>(state.c.size()) != nn)
    throw std::invalid_argument("state latent source/TEF count mismatch");
  for (const auto& m : state.s)
    if (m.rows() != kk || m.cols() != jj)
      throw std::invalid_argument("state.s entry has wrong shape");
  for (const auto& m : state.c)
    if (m.rows() != kk || m.cols() != jj)
      throw std::invalid_argument("state.c entry has wrong shape");
  if (has_splines() && state.tau.size() != kk - 1)
    throw std::invalid_argument("state.tau has wrong length");
}

namespace {

double state_support_or_neg_inf(const ParameterState& state, bool with_splines) {
  for (Eigen::Index kc = 0; kc < state.kappa.size(); ++kc)
    if (!(state.kappa[kc] > 0.0) || !std::isfinite(state.kappa[kc])) return kNegInf;
  if (with_splines)
    for (Eigen::Index kc = 0; kc < state.tau.size(); ++kc)
      if (!(state.tau[kc] > 0.0) || !std::isfinite(state.tau[kc])) return kNegInf;
  return 0.0;
}

}  // namespace

double ModelContext::log_joint(const ParameterState& state) const {
  const double prior = log_prior(state);
  if (!std::isfinite(prior)) return prior;
  return prior + log_likelihood(state);
}

double ModelContext::log_prior(const ParameterState& state) const {
  validate_state(state);
  if (state_support_or_neg_inf(state, has_splines()) == kNegInf) return kNegInf;
  Eigen::LLT<Eigen::MatrixXd> chol(state.sigma);
  if (chol.info() != Eigen::Success) return kNegInf;

  double total = phi_log_prior(state);
  for (Eigen::Index i = 0; i < n(); ++i) {
    for (Eigen::Index kc = 0; kc < k(); ++kc) {
      const LatentPrior& sp = source_prior(i, kc);
      if (!sp.fixed)
        total += sp.dist.logpdf(state.s[static_cast<std::size_t>(i)].row(kc).transpose());
      const LatentPrior& cp = tef_prior(i, kc);
      if (!cp.fixed)
        total += cp.dist.logpdf(state.c[static_cast<std::size_t>(i)].row(kc).transpose());
    }
  }
  total += beta_log_prior(state.beta, state.tau);
  for (Eigen::Index kc = 0; kc < coords(); ++kc)
    total += inverse_gamma_logpdf(state.kappa[kc], spec_.priors.kappa_shape,
                                  spec_.priors.kappa_rate);
  if (has_splines())
    for (Eigen::Index kc = 0; kc < coords(); ++kc)
      total += gamma_logpdf(state.tau[kc], spec_.priors.tau_shape,
                            spec_.priors.tau_rate);
  total += inverse_wishart_logpdf(state.sigma, sigma_dof_, sigma_scale_);
  return total;
}

JointGradient ModelContext::log_joint_gradient(const ParameterState& state,
                                               bool with_likelihood) const {
  validate_state(state);
  const Eigen::Index nn = n(), kk = k(), ll = design_.l();
  const Eigen::Index kc1 = coords();
  JointGradient g;
  g.phi = Eigen::MatrixXd::Zero(nn, kc1);
  g.beta = Eigen::MatrixXd::Zero(kc1, ll);
  g.log_kappa = Eigen::VectorXd::Zero(kc1);
  g.log_tau = Eigen::VectorXd::Zero(has_splines() ? kc1 : 0);

  const Eigen::MatrixXd gamma =
      linear_predictor(design_.x, state.beta, spec_.use_helmert_contrasts);

  // phi prior: phi_ik ~ N(gamma_ik, kappa_k).
  Eigen::MatrixXd dgamma(nn, kc1);
  for (Eigen::Index kc = 0; kc < kc1; ++kc) {
    const double kap = state.kappa[kc];
    for (Eigen::Index i = 0; i < nn; ++i) {
      const double resid = state.phi(i, kc) - gamma(i, kc);
      g.phi(i, kc) += -resid / kap;
      dgamma(i, kc) = resid / kap;
      g.log_kappa[kc] += -0.5 + resid * resid / (2.0 * kap);
    }
  }
  // Chain dgamma into beta through the contrast mapping.
  for (Eigen::Index kc = 0; kc < kc1; ++kc) {
    const Eigen::VectorXd xg = design_.x.transpose() * dgamma.col(kc);
    if (spec_.use_helmert_contrasts) {
      g.beta.row(0) += xg.transpose();
      if (kc > 0) g.beta.row(kc) += xg.transpose();
    } else {
      g.beta.row(kc) += xg.transpose();
    }
  }

  // Likelihood through p(phi) = softmax(V phi) and the mixture mean.
  if (with_likelihood && nn > 0) {
    Eigen::LLT<Eigen::MatrixXd> chol(state.sigma);
    if (chol.info() != Eigen::Success)
      throw std::invalid_argument("log_joint_gradient: sigma not positive definite");
    const Eigen::MatrixXd* q = concentration();
    const Eigen::MatrixXd& v = basis_.matrix();
    for (Eigen::Index i = 0; i < nn; ++i) {
      const Eigen::VectorXd p = proportions(state, i);
      const Eigen::MatrixXd sc =
          state.s[static_cast<std::size_t>(i)] + state.c[static_cast<std::size_t>(i)];
      const Eigen::VectorXd mu = mixture_mean(p, state.s[static_cast<std::size_t>(i)],
                                              state.c[static_cast<std::size_t>(i)], q);
      const Eigen::VectorXd resid = data_.isotopes.row(i).transpose() - mu;
      const Eigen::VectorXd sol = chol.solve(resid);  // Sigma^{-1} r
      // dmu_j / dp_m, then contract with sol.
      Eigen::VectorXd dp = Eigen::VectorXd::Zero(kk);
      for (Eigen::Index m = 0; m < kk; ++m) {
        for (Eigen::Index jj = 0; jj < j(); ++jj) {
          double dmu;
          if (q) {
            const double denom = q->col(jj).dot(p);
            dmu = (*q)(m, jj) * (sc(m, jj) - mu[jj]) / denom;
          } else {
            dmu = sc(m, jj);
          }
          dp[m] += dmu * sol[jj];
        }
      }
      // Softmax Jacobian: da = p.*dp - (p.dp) p; dphi = V^T da.
      const Eigen::VectorXd da = p.cwiseProduct(dp) - p.dot(dp) * p;
      g.phi.row(i) += (v.transpose() * da).transpose();
    }
  }

  // beta prior.
  const double var_b = spec_.priors.beta_sd * spec_.priors.beta_sd;
  std::vector<bool> in_spline(static_cast<std::size_t>(ll), false);
  for (const auto& block : design_.spline_blocks)
    for (Eigen::Index l = block.first; l < block.first + block.count; ++l)
      in_spline[static_cast<std::size_t>(l)] = true;
  for (Eigen::Index kc = 0; kc < kc1; ++kc) {
    for (Eigen::Index l = 0; l < ll; ++l)
      if (!in_spline[static_cast<std::size_t>(l)])
        g.beta(kc, l) += -state.beta(kc, l) / var_b;
    for (const auto& block : design_.spline_blocks) {
      const double tau = state.tau[kc];
      g.beta(kc, block.first) += -state.beta(kc, block.first) / var_b;
      for (Eigen::Index l = block.first + 1; l < block.first + block.count; ++l) {
        const double diff = state.beta(kc, l) - state.beta(kc, l - 1);
        g.beta(kc, l) += -tau * diff;
        g.beta(kc, l - 1) += tau * diff;
        g.log_tau[kc] += 0.5 - 0.5 * tau * diff * diff;
      }
    }
  }

  // kappa prior (inverse-gamma), on the log scale.
  for (Eigen::Index kc = 0; kc < kc1; ++kc)
    g.log_kappa[kc] +=
        -(spec_.priors.kappa_shape + 1.0) + spec_.priors.kappa_rate / state.kappa[kc];
  // tau prior (gamma), on the log scale.
  for (Eigen::Index kc = 0; kc < g.log_tau.size(); ++kc)
    g.log_tau[kc] +=
        (spec_.priors.tau_shape - 1.0) - spec_.priors.tau_rate * state.tau[kc];

  return g;
}

ParameterState ModelContext::initial_state() const {
  ParameterState state;
  const Eigen::Index nn = n(), kk = k(), jj = j();
  state.beta = Eigen::MatrixXd::Zero(kk - 1, design_.l());
  state.phi = Eigen::MatrixXd::Zero(nn, kk - 1);
  state.kappa = Eigen::VectorXd::Ones(kk - 1);
  state.sigma = Eigen::MatrixXd::Identity(jj, jj);
  state.tau = has_splines() ? Eigen::VectorXd::Ones(kk - 1) : Eigen::VectorXd();
  state.s.reserve(static_cast<std::size_t>(nn));
  state.c.reserve(static_cast<std::size_t>(nn));
  for (Eigen::Index i = 0; i < nn; ++i) {
    Eigen::MatrixXd s(kk, jj), c(kk, jj);
    for (Eigen::Index kc = 0; kc < kk; ++kc) {
      s.row(kc) = source_prior(i, kc).mu.transpose();
      c.row(kc) = tef_prior(i, kc).mu.transpose();
    }
    state.s.push_back(std::move(s));
    state.c.push_back(std::move(c));
  }
  return state;
}

}  // namespace isomix
