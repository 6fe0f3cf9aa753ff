#include "isomix/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>

#include "isomix/csv.hpp"
#include "isomix/linalg.hpp"

namespace isomix {

namespace {

bool parses_as_double(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return end != s.c_str() && *end == '\0';
}

int require_column(const CsvTable& t, const std::string& name) {
  const int c = t.column(name);
  if (c < 0)
    throw std::runtime_error(t.path + ": missing required column '" + name + "'");
  return c;
}

int find_source(const std::vector<std::string>& names, const std::string& label) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == label) return static_cast<int>(i);
  return -1;
}

}  // namespace

const ConsumerDataset::Covariate& ConsumerDataset::covariate(
    const std::string& name) const {
  auto it = covariates.find(name);
  if (it == covariates.end())
    throw std::invalid_argument("unknown covariate '" + name + "'");
  return it->second;
}

Eigen::VectorXd ConsumerDataset::numeric_covariate(const std::string& name) const {
  const Covariate& c = covariate(name);
  if (!c.is_numeric)
    throw std::invalid_argument("covariate '" + name + "' is not numeric");
  return Eigen::Map<const Eigen::VectorXd>(c.numeric.data(),
                                           static_cast<Eigen::Index>(c.numeric.size()));
}

bool SourceSamples::has_times() const {
  if (times.empty()) return false;
  for (const auto& t : times)
    if (t.empty()) return false;
  return true;
}

const GaussianSummary& SourceTimetable::at(Eigen::Index source, double t,
                                           double tol) const {
  const auto& ts = times.at(static_cast<std::size_t>(source));
  for (std::size_t i = 0; i < ts.size(); ++i)
    if (std::abs(ts[i] - t) <= tol) return entries[static_cast<std::size_t>(source)][i];
  throw std::invalid_argument("no tabulated source summary at time " +
                              std::to_string(t) + " for source '" +
                              source_names[static_cast<std::size_t>(source)] + "'");
}

// -- Summaries ---------------------------------------------------------------

namespace {

GaussianSummary summarize_matrix(const Eigen::MatrixXd& x, const std::string& label) {
  const Eigen::Index m = x.rows();
  if (m == 0) throw std::invalid_argument("missing source: no samples for '" + label + "'");
  if (m == 1)
    throw std::invalid_argument("insufficient samples for '" + label +
                                "': need at least 2 for covariance estimation");
  GaussianSummary out;
  out.mu = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - out.mu.transpose();
  out.cov = centered.transpose() * centered / static_cast<double>(m - 1);
  out.cov = symmetrize(out.cov);
  Eigen::LLT<Eigen::MatrixXd> llt(out.cov);
  out.degenerate = (llt.info() != Eigen::Success);
  return out;
}

}  // namespace

SourceSummary empirical_bayes_summarize(const SourceSamples& samples) {
  SourceSummary out;
  out.source_names = samples.source_names;
  out.isotope_names = samples.isotope_names;
  for (Eigen::Index k = 0; k < samples.k(); ++k)
    out.by_source.push_back(
        summarize_matrix(samples.samples[static_cast<std::size_t>(k)],
                         samples.source_names[static_cast<std::size_t>(k)]));
  return out;
}

TefSummary empirical_bayes_summarize(const TefSamples& samples) {
  TefSummary out;
  out.source_names = samples.source_names;
  out.isotope_names = samples.isotope_names;
  for (Eigen::Index k = 0; k < samples.k(); ++k) {
    const auto ks = static_cast<std::size_t>(k);
    if (samples.direct) {
      GaussianSummary g;
      g.mu = samples.direct_mu[ks];
      g.cov = samples.direct_cov[ks];
      Eigen::LLT<Eigen::MatrixXd> llt(g.cov);
      g.degenerate = (llt.info() != Eigen::Success);
      out.by_source.push_back(std::move(g));
    } else {
      out.by_source.push_back(
          summarize_matrix(samples.samples[ks], samples.source_names[ks]));
    }
  }
  return out;
}

Eigen::MatrixXd regularized_cov(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return cov;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
  double jitter = 1e-8;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd fixed = cov + jitter * eye;
    if (Eigen::LLT<Eigen::MatrixXd>(fixed).info() == Eigen::Success) return fixed;
    jitter *= 10.0;
  }
  throw std::invalid_argument("covariance matrix cannot be regularized");
}

// -- Loaders -----------------------------------------------------------------

ConsumerDataset load_consumers(const std::string& path,
                               const std::vector<std::string>& isotope_names) {
  const CsvTable t = read_csv(path);
  ConsumerDataset data;
  data.isotope_names = isotope_names;
  std::vector<int> iso_cols;
  for (const auto& name : isotope_names)
    iso_cols.push_back(require_column(t, name));

  const Eigen::Index n = static_cast<Eigen::Index>(t.rows.size());
  const Eigen::Index j = static_cast<Eigen::Index>(isotope_names.size());
  data.isotopes.resize(n, j);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < j; ++c) {
      const std::string ctx =
          path + ":" + std::to_string(CsvTable::line_of(static_cast<std::size_t>(i)));
      const double v = parse_double(row[static_cast<std::size_t>(iso_cols[static_cast<std::size_t>(c)])], ctx);
      if (!std::isfinite(v))
        throw std::runtime_error(ctx + ": non-finite isotope value");
      data.isotopes(i, c) = v;
    }
  }

  // Remaining columns become covariates; a column is numeric when every
  // entry parses as a double.
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (std::find(iso_cols.begin(), iso_cols.end(), static_cast<int>(c)) != iso_cols.end())
      continue;
    ConsumerDataset::Covariate cov;
    cov.is_numeric = true;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::string& cell = t.rows[r][c];
      if (cell.empty())
        throw std::runtime_error(path + ":" + std::to_string(CsvTable::line_of(r)) +
                                 ": missing value in column '" + t.header[c] + "'");
      cov.raw.push_back(cell);
      if (!parses_as_double(cell)) cov.is_numeric = false;
    }
    if (cov.is_numeric)
      for (const auto& cell : cov.raw)
        cov.numeric.push_back(parse_double(cell, path + " column " + t.header[c]));
    data.covariates.emplace(t.header[c], std::move(cov));
  }
  return data;
}

namespace {

/// Shared parser for the sample-style source/TEF layout.
void load_sample_table(const CsvTable& t, std::vector<std::string>& source_names,
                       std::vector<std::string>& isotope_names,
                       std::vector<Eigen::MatrixXd>& samples,
                       std::vector<std::vector<double>>& times,
                       const std::vector<std::string>& expected_sources) {
  const int source_col = require_column(t, "source");
  const int time_col = t.column("time");

  std::vector<int> iso_cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (static_cast<int>(c) == source_col || static_cast<int>(c) == time_col) continue;
    iso_cols.push_back(static_cast<int>(c));
    isotope_names.push_back(t.header[c]);
  }
  if (iso_cols.empty())
    throw std::runtime_error(t.path + ": no isotope columns found");

  std::vector<std::vector<Eigen::VectorXd>> rows_by_source;
  std::vector<std::vector<double>> times_by_source;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = t.path + ":" + std::to_string(CsvTable::line_of(r));
    const std::string& label = row[static_cast<std::size_t>(source_col)];
    if (label.empty()) throw std::runtime_error(ctx + ": empty source label");
    if (!expected_sources.empty() && find_source(expected_sources, label) < 0)
      throw std::runtime_error(ctx + ": unknown source label '" + label + "'");
    int k = find_source(source_names, label);
    if (k < 0) {
      k = static_cast<int>(source_names.size());
      source_names.push_back(label);
      rows_by_source.emplace_back();
      times_by_source.emplace_back();
    }
    Eigen::VectorXd v(static_cast<Eigen::Index>(iso_cols.size()));
    for (std::size_t c = 0; c < iso_cols.size(); ++c)
      v[static_cast<Eigen::Index>(c)] =
          parse_double(row[static_cast<std::size_t>(iso_cols[c])], ctx);
    rows_by_source[static_cast<std::size_t>(k)].push_back(std::move(v));
    if (time_col >= 0)
      times_by_source[static_cast<std::size_t>(k)].push_back(
          parse_double(row[static_cast<std::size_t>(time_col)], ctx));
  }

  for (std::size_t k = 0; k < source_names.size(); ++k) {
    const auto& rows = rows_by_source[k];
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(iso_cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      m.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    samples.push_back(std::move(m));
    times.push_back(times_by_source[k]);
  }
}

/// Reorder isotope columns of a sample table to a canonical name order.
void reorder_isotopes(std::vector<std::string>& isotope_names,
                      std::vector<Eigen::MatrixXd>& samples,
                      const std::vector<std::string>& canonical,
                      const std::string& path) {
  if (canonical.empty() || isotope_names == canonical) return;
  std::vector<int> perm;
  for (const auto& name : canonical) {
    int idx = -1;
    for (std::size_t i = 0; i < isotope_names.size(); ++i)
      if (isotope_names[i] == name) idx = static_cast<int>(i);
    if (idx < 0)
      throw std::runtime_error(path + ": isotope column '" + name +
                               "' expected but not found (inconsistent isotope sets)");
    perm.push_back(idx);
  }
  if (isotope_names.size() != canonical.size())
    throw std::runtime_error(path + ": isotope set does not match other files");
  for (auto& m : samples) {
    Eigen::MatrixXd re(m.rows(), m.cols());
    for (std::size_t c = 0; c < perm.size(); ++c)
      re.col(static_cast<Eigen::Index>(c)) = m.col(perm[c]);
    m = std::move(re);
  }
  isotope_names = canonical;
}

}  // namespace

SourceSamples load_sources(const std::string& path) {
  const CsvTable t = read_csv(path);
  SourceSamples out;
  load_sample_table(t, out.source_names, out.isotope_names, out.samples, out.times, {});
  if (out.k() < 2)
    throw std::runtime_error(path + ": need at least 2 sources");
  return out;
}

TefSamples load_tefs(const std::string& path,
                     const std::vector<std::string>& expected_sources,
                     const std::vector<std::string>& isotope_names) {
  const CsvTable t = read_csv(path);
  TefSamples out;

  // Direct mean/sd layout is detected by the presence of mean_* columns.
  bool direct = false;
  for (const auto& h : t.header)
    if (h.rfind("mean_", 0) == 0) direct = true;

  if (!direct) {
    std::vector<std::vector<double>> unused_times;
    load_sample_table(t, out.source_names, out.isotope_names, out.samples,
                      unused_times, expected_sources);
    reorder_isotopes(out.isotope_names, out.samples, isotope_names, path);
    return out;
  }

  out.direct = true;
  const int source_col = require_column(t, "source");
  for (const auto& h : t.header)
    if (h.rfind("mean_", 0) == 0) out.isotope_names.push_back(h.substr(5));
  std::vector<int> mean_cols, sd_cols;
  for (const auto& iso : out.isotope_names) {
    mean_cols.push_back(require_column(t, "mean_" + iso));
    sd_cols.push_back(require_column(t, "sd_" + iso));
  }
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = path + ":" + std::to_string(CsvTable::line_of(r));
    const std::string& label = row[static_cast<std::size_t>(source_col)];
    if (!expected_sources.empty() && find_source(expected_sources, label) < 0)
      throw std::runtime_error(ctx + ": unknown source label '" + label + "'");
    if (find_source(out.source_names, label) >= 0)
      throw std::runtime_error(ctx + ": duplicate source '" + label + "'");
    out.source_names.push_back(label);
    const Eigen::Index j = out.j();
    Eigen::VectorXd mu(j);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(j, j);
    for (Eigen::Index c = 0; c < j; ++c) {
      mu[c] = parse_double(row[static_cast<std::size_t>(mean_cols[static_cast<std::size_t>(c)])], ctx);
      const double sd = parse_double(row[static_cast<std::size_t>(sd_cols[static_cast<std::size_t>(c)])], ctx);
      if (sd < 0.0) throw std::runtime_error(ctx + ": negative sd");
      cov(c, c) = sd * sd;
    }
    out.direct_mu.push_back(std::move(mu));
    out.direct_cov.push_back(std::move(cov));
  }
  if (!isotope_names.empty() && out.isotope_names != isotope_names) {
    // Reorder direct entries to the canonical isotope order.
    std::vector<int> perm;
    for (const auto& name : isotope_names) {
      int idx = -1;
      for (std::size_t i = 0; i < out.isotope_names.size(); ++i)
        if (out.isotope_names[i] == name) idx = static_cast<int>(i);
      if (idx < 0)
        throw std::runtime_error(path + ": isotope column '" + name +
                                 "' expected but not found (inconsistent isotope sets)");
      perm.push_back(idx);
    }
    for (std::size_t k = 0; k < out.source_names.size(); ++k) {
      Eigen::VectorXd mu(out.j());
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(out.j(), out.j());
      for (std::size_t c = 0; c < perm.size(); ++c) {
        mu[static_cast<Eigen::Index>(c)] = out.direct_mu[k][perm[c]];
        cov(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)) =
            out.direct_cov[k](perm[c], perm[c]);
      }
      out.direct_mu[k] = std::move(mu);
      out.direct_cov[k] = std::move(cov);
    }
    out.isotope_names = isotope_names;
  }
  return out;
}

ConcentrationTable load_concentrations(const std::string& path,
                                       const std::vector<std::string>& expected_sources,
                                       const std::vector<std::string>& isotope_names) {
  const CsvTable t = read_csv(path);
  const int source_col = require_column(t, "source");
  ConcentrationTable out;
  out.source_names = expected_sources;
  out.isotope_names = isotope_names;
  const Eigen::Index kk = static_cast<Eigen::Index>(expected_sources.size());
  const Eigen::Index jj = static_cast<Eigen::Index>(isotope_names.size());
  out.q = Eigen::MatrixXd::Constant(kk, jj, -1.0);
  std::vector<int> iso_cols;
  for (const auto& iso : isotope_names) iso_cols.push_back(require_column(t, iso));

  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = path + ":" + std::to_string(CsvTable::line_of(r));
    const int k = find_source(expected_sources, row[static_cast<std::size_t>(source_col)]);
    if (k < 0)
      throw std::runtime_error(ctx + ": unknown source label '" +
                               row[static_cast<std::size_t>(source_col)] + "'");
    for (Eigen::Index c = 0; c < jj; ++c) {
      const double v = parse_double(row[static_cast<std::size_t>(iso_cols[static_cast<std::size_t>(c)])], ctx);
      if (!(v > 0.0) || v > 1.0)
        throw std::runtime_error(ctx + ": concentration must lie in (0,1]");
      out.q(k, c) = v;
    }
  }
  for (Eigen::Index k = 0; k < kk; ++k)
    if (out.q(k, 0) < 0.0)
      throw std::runtime_error(path + ": no concentration row for source '" +
                               expected_sources[static_cast<std::size_t>(k)] + "'");
  return out;
}

SourceTimetable load_trajectories(const std::string& path) {
  const CsvTable t = read_csv(path);
  require_column(t, "source");
  require_column(t, "time");
  SourceTimetable out;
  for (const auto& h : t.header)
    if (h.rfind("mean_", 0) == 0) out.isotope_names.push_back(h.substr(5));
  const Eigen::Index j = static_cast<Eigen::Index>(out.isotope_names.size());
  if (j == 0) throw std::runtime_error(path + ": no mean_* columns found");
  if (j > 2) throw std::runtime_error(path + ": more than 2 isotopes not supported for trajectories");
  std::vector<int> mean_cols, var_cols;
  for (const auto& iso : out.isotope_names) {
    mean_cols.push_back(require_column(t, "mean_" + iso));
    var_cols.push_back(require_column(t, "var_" + iso));
  }
  const int corr_col = j == 2 ? require_column(t, "corr") : -1;
  const int source_col = t.column("source");
  const int time_col = t.column("time");

  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = path + ":" + std::to_string(CsvTable::line_of(r));
    const std::string& label = row[static_cast<std::size_t>(source_col)];
    int k = find_source(out.source_names, label);
    if (k < 0) {
      k = static_cast<int>(out.source_names.size());
      out.source_names.push_back(label);
      out.times.emplace_back();
      out.entries.emplace_back();
    }
    GaussianSummary g;
    g.mu.resize(j);
    g.cov = Eigen::MatrixXd::Zero(j, j);
    for (Eigen::Index c = 0; c < j; ++c) {
      g.mu[c] = parse_double(row[static_cast<std::size_t>(mean_cols[static_cast<std::size_t>(c)])], ctx);
      const double v = parse_double(row[static_cast<std::size_t>(var_cols[static_cast<std::size_t>(c)])], ctx);
      if (!(v > 0.0)) throw std::runtime_error(ctx + ": variance must be positive");
      g.cov(c, c) = v;
    }
    if (j == 2) {
      const double rho = parse_double(row[static_cast<std::size_t>(corr_col)], ctx);
      if (!(rho > -1.0 && rho < 1.0))
        throw std::runtime_error(ctx + ": correlation must lie in (-1,1)");
      const double off = rho * std::sqrt(g.cov(0, 0) * g.cov(1, 1));
      g.cov(0, 1) = g.cov(1, 0) = off;
    }
    out.times[static_cast<std::size_t>(k)].push_back(
        parse_double(row[static_cast<std::size_t>(time_col)], ctx));
    out.entries[static_cast<std::size_t>(k)].push_back(std::move(g));
  }
  return out;
}

// -- Savers ------------------------------------------------------------------

void save_consumers(const std::string& path, const ConsumerDataset& data) {
  std::vector<std::string> header = data.isotope_names;
  for (const auto& [name, cov] : data.covariates) header.push_back(name);
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index c = 0; c < data.j(); ++c)
      row.push_back(format_double(data.isotopes(i, c)));
    for (const auto& [name, cov] : data.covariates)
      row.push_back(cov.raw[static_cast<std::size_t>(i)]);
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

void save_sources(const std::string& path, const SourceSamples& data) {
  std::vector<std::string> header{"source"};
  for (const auto& iso : data.isotope_names) header.push_back(iso);
  const bool with_times = data.has_times();
  if (with_times) header.push_back("time");
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index k = 0; k < data.k(); ++k) {
    const auto ks = static_cast<std::size_t>(k);
    for (Eigen::Index r = 0; r < data.samples[ks].rows(); ++r) {
      std::vector<std::string> row{data.source_names[ks]};
      for (Eigen::Index c = 0; c < data.j(); ++c)
        row.push_back(format_double(data.samples[ks](r, c)));
      if (with_times)
        row.push_back(format_double(data.times[ks][static_cast<std::size_t>(r)]));
      rows.push_back(std::move(row));
    }
  }
  write_csv(path, header, rows);
}

void save_tefs(const std::string& path, const TefSamples& data) {
  if (!data.direct) {
    SourceSamples as_samples;
    as_samples.source_names = data.source_names;
    as_samples.isotope_names = data.isotope_names;
    as_samples.samples = data.samples;
    as_samples.times.assign(data.source_names.size(), {});
    save_sources(path, as_samples);
    return;
  }
  std::vector<std::string> header{"source"};
  for (const auto& iso : data.isotope_names) {
    header.push_back("mean_" + iso);
    header.push_back("sd_" + iso);
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < data.source_names.size(); ++k) {
    std::vector<std::string> row{data.source_names[k]};
    for (Eigen::Index c = 0; c < data.j(); ++c) {
      row.push_back(format_double(data.direct_mu[k][c]));
      row.push_back(format_double(std::sqrt(data.direct_cov[k](c, c))));
    }
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

void save_trajectories(const std::string& path, const SourceTimetable& table) {
  const Eigen::Index j = static_cast<Eigen::Index>(table.isotope_names.size());
  std::vector<std::string> header{"source", "time"};
  for (const auto& iso : table.isotope_names) header.push_back("mean_" + iso);
  for (const auto& iso : table.isotope_names) header.push_back("var_" + iso);
  if (j == 2) header.push_back("corr");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < table.source_names.size(); ++k) {
    for (std::size_t i = 0; i < table.times[k].size(); ++i) {
      const GaussianSummary& g = table.entries[k][i];
      std::vector<std::string> row{table.source_names[k],
                                   format_double(table.times[k][i])};
      for (Eigen::Index c = 0; c < j; ++c) row.push_back(format_double(g.mu[c]));
      for (Eigen::Index c = 0; c < j; ++c) row.push_back(format_double(g.cov(c, c)));
      if (j == 2) {
        const double denom = std::sqrt(g.cov(0, 0) * g.cov(1, 1));
        row.push_back(format_double(denom > 0.0 ? g.cov(0, 1) / denom : 0.0));
      }
      rows.push_back(std::move(row));
    }
  }
  write_csv(path, header, rows);
}

// -- Iso-space geometry ------------------------------------------------------

namespace {

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a,
             const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

/// Monotone-chain convex hull, counter-clockwise, no duplicate endpoint.
std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const auto& a, const auto& b) { return a == b; }),
            pts.end());
  const std::size_t n = pts.size();
  if (n <= 2) return pts;
  std::vector<Eigen::Vector2d> hull(2 * n);
  std::size_t h = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (h >= 2 && cross(hull[h - 2], hull[h - 1], pts[i]) <= 0) --h;
    hull[h++] = pts[i];
  }
  const std::size_t lower = h + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (h >= lower && cross(hull[h - 2], hull[h - 1], pts[i]) <= 0) --h;
    hull[h++] = pts[i];
  }
  hull.resize(h - 1);
  return hull;
}

double point_segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                              const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

}  // namespace

IsospaceReport isospace_check(const ConsumerDataset& consumers,
                              const SourceSummary& sources,
                              const TefSummary& tefs) {
  IsospaceReport report;
  if (consumers.j() != 2 || sources.j() != 2) {
    report.computed = false;
    return report;
  }
  if (sources.k() != tefs.k())
    throw std::invalid_argument("isospace_check: source/TEF count mismatch");
  report.computed = true;
  std::vector<Eigen::Vector2d> corrected;
  for (Eigen::Index k = 0; k < sources.k(); ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const Eigen::VectorXd m = sources.by_source[ks].mu + tefs.by_source[ks].mu;
    corrected.emplace_back(m[0], m[1]);
  }
  report.corrected_means = corrected;
  report.hull = convex_hull(corrected);

  const double eps = 1e-9;
  for (Eigen::Index i = 0; i < consumers.n(); ++i) {
    const Eigen::Vector2d p(consumers.isotopes(i, 0), consumers.isotopes(i, 1));
    IsospaceReport::Entry entry;
    if (report.hull.size() >= 3) {
      bool inside = true;
      for (std::size_t v = 0; v < report.hull.size(); ++v) {
        const auto& a = report.hull[v];
        const auto& b = report.hull[(v + 1) % report.hull.size()];
        if (cross(a, b, p) < -eps) inside = false;
      }
      entry.inside = inside;
      if (!inside) {
        double d = std::numeric_limits<double>::infinity();
        for (std::size_t v = 0; v < report.hull.size(); ++v)
          d = std::min(d, point_segment_distance(p, report.hull[v],
                                                 report.hull[(v + 1) % report.hull.size()]));
        entry.distance = d;
      }
    } else {
      // Degenerate hull (segment or point): inside means on it.
      double d = std::numeric_limits<double>::infinity();
      if (report.hull.size() == 2)
        d = point_segment_distance(p, report.hull[0], report.hull[1]);
      else if (report.hull.size() == 1)
        d = (p - report.hull[0]).norm();
      entry.inside = d <= eps;
      entry.distance = entry.inside ? 0.0 : d;
    }
    report.consumers.push_back(entry);
  }
  return report;
}

}  // namespace isomix
