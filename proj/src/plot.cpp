#include "isomix/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "isomix/csv.hpp"
#include "isomix/diagnostics.hpp"
#include "isomix/linalg.hpp"

namespace isomix {

namespace {

constexpr double kPi = 3.14159265358979323846;

const char* palette(std::size_t i) {
  static const char* colors[] = {"#1b6ca8", "#c3423f", "#2e7d32", "#8e5ba6",
                                 "#c78400", "#3c8d8a", "#7a4b2a", "#5d6d7e"};
  return colors[i % (sizeof(colors) / sizeof(colors[0]))];
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

/// Minimal SVG canvas over a fixed data window, y up.
class Svg {
 public:
  Svg(double xmin, double xmax, double ymin, double ymax, const std::string& xlabel,
      const std::string& ylabel)
      : xmin_(xmin), xmax_(xmax), ymin_(ymin), ymax_(ymax) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
          << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' '
          << kHeight << "\">\n";
    body_ << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
          << "\" fill=\"white\"/>\n";
    body_ << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\""
          << kWidth - 2 * kMargin << "\" height=\"" << kHeight - 2 * kMargin
          << "\" fill=\"none\" stroke=\"#444444\"/>\n";
    text(kWidth / 2.0, kHeight - 12.0, xlabel, "middle");
    body_ << "<text x=\"16\" y=\"" << kHeight / 2.0
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\""
          << " transform=\"rotate(-90 16 " << kHeight / 2.0 << ")\">" << ylabel
          << "</text>\n";
  }

  double sx(double x) const {
    return kMargin + (x - xmin_) / (xmax_ - xmin_) * (kWidth - 2.0 * kMargin);
  }
  double sy(double y) const {
    return kHeight - kMargin - (y - ymin_) / (ymax_ - ymin_) * (kHeight - 2.0 * kMargin);
  }

  void circle(double x, double y, double r, const std::string& fill) {
    body_ << "<circle cx=\"" << num(sx(x)) << "\" cy=\"" << num(sy(y)) << "\" r=\"" << r
          << "\" fill=\"" << fill << "\"/>\n";
  }

  void segment(double x1, double y1, double x2, double y2, const std::string& stroke) {
    body_ << "<line x1=\"" << num(sx(x1)) << "\" y1=\"" << num(sy(y1)) << "\" x2=\""
          << num(sx(x2)) << "\" y2=\"" << num(sy(y2)) << "\" stroke=\"" << stroke
          << "\"/>\n";
  }

  void path(const std::vector<std::pair<double, double>>& points, bool close,
            const std::string& stroke, const std::string& fill,
            double fill_opacity = 1.0) {
    if (points.empty()) return;
    body_ << "<path d=\"";
    for (std::size_t i = 0; i < points.size(); ++i)
      body_ << (i == 0 ? "M" : " L") << num(sx(points[i].first)) << ' '
            << num(sy(points[i].second));
    if (close) body_ << " Z";
    body_ << "\" stroke=\"" << stroke << "\" fill=\"" << fill << "\"";
    if (fill != "none") body_ << " fill-opacity=\"" << fill_opacity << "\"";
    body_ << "/>\n";
  }

  void text(double px, double py, const std::string& s, const std::string& anchor,
            const std::string& fill = "#222222") {
    body_ << "<text x=\"" << num(px) << "\" y=\"" << num(py) << "\" text-anchor=\""
          << anchor << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << fill
          << "\">" << s << "</text>\n";
  }

  void legend(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      const double y = kMargin + 16.0 * (static_cast<double>(i) + 1.0);
      body_ << "<rect x=\"" << kWidth - kMargin - 130 << "\" y=\"" << num(y - 9)
            << "\" width=\"10\" height=\"10\" fill=\"" << palette(i) << "\"/>\n";
      text(kWidth - kMargin - 115, y, names[i], "start");
    }
  }

  void save(const std::string& path) {
    body_ << "</svg>\n";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << body_.str();
    if (!out) throw std::runtime_error("write failed for " + path);
  }

 private:
  static constexpr int kWidth = 640, kHeight = 480, kMargin = 56;
  double xmin_, xmax_, ymin_, ymax_;
  std::ostringstream body_;
};

struct DataRow {
  std::string kind, label;
  int order = 0;
  std::string x, y;
};

void write_plot_data(const std::string& path, const std::vector<DataRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows)
    cells.push_back({r.kind, r.label, std::to_string(r.order), r.x, r.y});
  write_csv(path, {"kind", "label", "order", "x", "y"}, cells);
}

void push_axis_rows(std::vector<DataRow>& rows, double xmin, double xmax, double ymin,
                    double ymax) {
  rows.push_back({"axis", "x", 0, format_double(xmin), ""});
  rows.push_back({"axis", "x", 1, format_double(xmax), ""});
  rows.push_back({"axis", "y", 0, "", format_double(ymin)});
  rows.push_back({"axis", "y", 1, "", format_double(ymax)});
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void include(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad(double frac) {
    const double w = (hi - lo) * frac + 1e-12;
    lo -= w;
    hi += w;
  }
};

Range range_of(std::initializer_list<double> init) {
  Range r{init.begin()[0], init.begin()[0]};
  for (double v : init) r.include(v);
  return r;
}

/// Gaussian kernel density on a fixed grid; bandwidth by Silverman's rule.
Eigen::VectorXd kde_curve(const Eigen::VectorXd& samples, const Eigen::VectorXd& grid) {
  const Eigen::Index n = samples.size();
  const double mean = samples.mean();
  const double sd =
      std::sqrt((samples.array() - mean).square().sum() / std::max<Eigen::Index>(n - 1, 1));
  const double h =
      std::max(1.06 * sd * std::pow(static_cast<double>(n), -0.2), 1e-3);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(grid.size());
  const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * kPi));
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = (grid[g] - samples[i]) / h;
      acc += std::exp(-0.5 * z * z);
    }
    out[g] = acc * norm;
  }
  return out;
}

/// Density threshold whose super-level set holds `mass` of the total grid mass.
double hdr_level(const Eigen::MatrixXd& density, double mass) {
  std::vector<double> cells(density.data(), density.data() + density.size());
  std::sort(cells.begin(), cells.end(), std::greater<double>());
  const double total = std::accumulate(cells.begin(), cells.end(), 0.0);
  if (total <= 0.0) return 0.0;
  double acc = 0.0;
  for (double c : cells) {
    acc += c;
    if (acc >= mass * total) return c;
  }
  return cells.back();
}

struct Segment {
  double x1, y1, x2, y2;
};

/// Marching squares on the density grid at one level.
std::vector<Segment> contour_segments(const Eigen::VectorXd& grid_x,
                                      const Eigen::VectorXd& grid_y,
                                      const Eigen::MatrixXd& density, double level) {
  std::vector<Segment> out;
  auto interp = [level](double pa, double fa, double pb, double fb) {
    const double denom = fb - fa;
    double t = denom == 0.0 ? 0.5 : (level - fa) / denom;
    t = std::clamp(t, 0.0, 1.0);
    return pa + t * (pb - pa);
  };
  for (Eigen::Index iy = 0; iy + 1 < grid_y.size(); ++iy) {
    for (Eigen::Index ix = 0; ix + 1 < grid_x.size(); ++ix) {
      const double x0 = grid_x[ix], x1 = grid_x[ix + 1];
      const double y0 = grid_y[iy], y1 = grid_y[iy + 1];
      const double f00 = density(iy, ix), f10 = density(iy, ix + 1);
      const double f01 = density(iy + 1, ix), f11 = density(iy + 1, ix + 1);
      const int code = (f00 >= level ? 1 : 0) | (f10 >= level ? 2 : 0) |
                       (f11 >= level ? 4 : 0) | (f01 >= level ? 8 : 0);
      if (code == 0 || code == 15) continue;
      // Edge midpoints by linear interpolation: bottom, right, top, left.
      const double bx = interp(x0, f00, x1, f10), by = y0;
      const double rx = x1, ry = interp(y0, f10, y1, f11);
      const double tx = interp(x0, f01, x1, f11), ty = y1;
      const double lx = x0, ly = interp(y0, f00, y1, f01);
      auto emit = [&](double ax, double ay, double cx, double cy) {
        out.push_back({ax, ay, cx, cy});
      };
      switch (code) {
        case 1: case 14: emit(bx, by, lx, ly); break;
        case 2: case 13: emit(bx, by, rx, ry); break;
        case 3: case 12: emit(lx, ly, rx, ry); break;
        case 4: case 11: emit(rx, ry, tx, ty); break;
        case 6: case 9: emit(bx, by, tx, ty); break;
        case 7: case 8: emit(lx, ly, tx, ty); break;
        case 5:
          emit(bx, by, lx, ly);
          emit(rx, ry, tx, ty);
          break;
        case 10:
          emit(bx, by, rx, ry);
          emit(lx, ly, tx, ty);
          break;
        default: break;
      }
    }
  }
  return out;
}

std::vector<double> pooled_column(const StoredDraws& draws, const std::string& label) {
  const Eigen::VectorXd col = draws.column(label);
  return {col.data(), col.data() + col.size()};
}

}  // namespace

Eigen::MatrixXd covariance_ellipse(const Eigen::Vector2d& mu, const Eigen::Matrix2d& cov,
                                   double coverage, int segments) {
  if (coverage <= 0.0 || coverage >= 1.0)
    throw std::invalid_argument("ellipse coverage must be in (0,1)");
  if (segments < 3) throw std::invalid_argument("ellipse needs >= 3 segments");
  const double q = -2.0 * std::log1p(-coverage);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < 0.0)
    throw std::invalid_argument("ellipse covariance must be positive semidefinite");
  const Eigen::Matrix2d transform =
      eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal();
  Eigen::MatrixXd out(segments, 2);
  for (int s = 0; s < segments; ++s) {
    const double angle = 2.0 * kPi * s / segments;
    const Eigen::Vector2d u(std::cos(angle), std::sin(angle));
    out.row(s) = (mu + std::sqrt(q) * transform * u).transpose();
  }
  return out;
}

PlotFile plot_isospace(const std::string& stem, const ConsumerDataset& consumers,
                       const SourceSummary& sources, const TefSummary& tefs) {
  if (consumers.j() != 2 || sources.j() != 2)
    throw std::invalid_argument("iso-space plot needs exactly 2 isotopes");
  if (sources.k() != tefs.k())
    throw std::invalid_argument("iso-space plot: source/TEF count mismatch");

  std::vector<DataRow> rows;
  Range rx = range_of({consumers.isotopes(0, 0)});
  Range ry = range_of({consumers.isotopes(0, 1)});
  for (Eigen::Index i = 0; i < consumers.n(); ++i) {
    rx.include(consumers.isotopes(i, 0));
    ry.include(consumers.isotopes(i, 1));
  }

  struct EllipsePair {
    std::string name;
    Eigen::Vector2d mu;
    Eigen::MatrixXd e50, e90;
  };
  std::vector<EllipsePair> ellipses;
  for (Eigen::Index k = 0; k < sources.k(); ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const Eigen::Vector2d mu = sources.by_source[ks].mu + tefs.by_source[ks].mu;
    const Eigen::Matrix2d cov = sources.by_source[ks].cov + tefs.by_source[ks].cov;
    EllipsePair e;
    e.name = sources.source_names[ks];
    e.mu = mu;
    e.e50 = covariance_ellipse(mu, cov, 0.50);
    e.e90 = covariance_ellipse(mu, cov, 0.90);
    for (Eigen::Index r = 0; r < e.e90.rows(); ++r) {
      rx.include(e.e90(r, 0));
      ry.include(e.e90(r, 1));
    }
    ellipses.push_back(std::move(e));
  }
  rx.pad(0.06);
  ry.pad(0.06);
  push_axis_rows(rows, rx.lo, rx.hi, ry.lo, ry.hi);

  Svg svg(rx.lo, rx.hi, ry.lo, ry.hi, consumers.isotope_names[0],
          consumers.isotope_names[1]);
  std::vector<std::string> legend_names;
  for (std::size_t ks = 0; ks < ellipses.size(); ++ks) {
    const auto& e = ellipses[ks];
    legend_names.push_back(e.name);
    auto polygon = [&](const Eigen::MatrixXd& m, const char* kind, double opacity) {
      std::vector<std::pair<double, double>> pts;
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        pts.emplace_back(m(r, 0), m(r, 1));
        rows.push_back({kind, e.name, static_cast<int>(r), format_double(m(r, 0)),
                        format_double(m(r, 1))});
      }
      svg.path(pts, true, palette(ks), palette(ks), opacity);
    };
    polygon(e.e90, "ellipse90", 0.12);
    polygon(e.e50, "ellipse50", 0.30);
    rows.push_back({"source_mean", e.name, 0, format_double(e.mu[0]),
                    format_double(e.mu[1])});
    svg.circle(e.mu[0], e.mu[1], 3.0, palette(ks));
  }
  for (Eigen::Index i = 0; i < consumers.n(); ++i) {
    rows.push_back({"consumer", std::to_string(i + 1), 0,
                    format_double(consumers.isotopes(i, 0)),
                    format_double(consumers.isotopes(i, 1))});
    svg.circle(consumers.isotopes(i, 0), consumers.isotopes(i, 1), 3.5, "#222222");
  }
  svg.legend(legend_names);

  PlotFile out{stem + ".svg", stem + ".csv"};
  svg.save(out.svg_path);
  write_plot_data(out.data_path, rows);
  return out;
}

PlotFile plot_proportion_densities(const std::string& stem, const StoredDraws& draws,
                                   const std::vector<std::string>& source_names,
                                   Eigen::Index n_consumers) {
  if (n_consumers < 1) throw std::invalid_argument("density plot needs consumers");
  const Eigen::Index grid_size = 201;
  Eigen::VectorXd grid(grid_size);
  for (Eigen::Index g = 0; g < grid_size; ++g)
    grid[g] = static_cast<double>(g) / static_cast<double>(grid_size - 1);

  std::vector<Eigen::VectorXd> curves;
  double ymax = 0.0;
  for (const auto& name : source_names) {
    Eigen::VectorXd pooled = Eigen::VectorXd::Zero(draws.values.rows());
    for (Eigen::Index i = 0; i < n_consumers; ++i)
      pooled += draws.column("p." + std::to_string(i + 1) + "." + name);
    pooled /= static_cast<double>(n_consumers);
    curves.push_back(kde_curve(pooled, grid));
    ymax = std::max(ymax, curves.back().maxCoeff());
  }

  std::vector<DataRow> rows;
  push_axis_rows(rows, 0.0, 1.0, 0.0, ymax * 1.05);
  Svg svg(0.0, 1.0, 0.0, ymax * 1.05, "dietary proportion", "posterior density");
  for (std::size_t ks = 0; ks < source_names.size(); ++ks) {
    std::vector<std::pair<double, double>> pts;
    for (Eigen::Index g = 0; g < grid_size; ++g) {
      pts.emplace_back(grid[g], curves[ks][g]);
      rows.push_back({"density", source_names[ks], static_cast<int>(g),
                      format_double(grid[g]), format_double(curves[ks][g])});
    }
    svg.path(pts, false, palette(ks), "none");
  }
  svg.legend(source_names);

  PlotFile out{stem + ".svg", stem + ".csv"};
  svg.save(out.svg_path);
  write_plot_data(out.data_path, rows);
  return out;
}

PlotFile plot_proportion_ribbon(const std::string& stem, const StoredDraws& draws,
                                const std::vector<std::string>& source_names,
                                Eigen::Index n_consumers,
                                const std::vector<double>& times) {
  if (static_cast<Eigen::Index>(times.size()) != n_consumers)
    throw std::invalid_argument("ribbon plot needs one time per consumer");
  if (n_consumers < 2) throw std::invalid_argument("ribbon plot needs >= 2 consumers");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_consumers));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return times[static_cast<std::size_t>(a)] < times[static_cast<std::size_t>(b)];
  });

  Range rt = range_of({times[static_cast<std::size_t>(order.front())],
                       times[static_cast<std::size_t>(order.back())]});
  rt.pad(0.02);
  std::vector<DataRow> rows;
  push_axis_rows(rows, rt.lo, rt.hi, 0.0, 1.0);
  Svg svg(rt.lo, rt.hi, 0.0, 1.0, "time", "dietary proportion");

  for (std::size_t ks = 0; ks < source_names.size(); ++ks) {
    std::vector<std::pair<double, double>> lo, hi, med;
    int idx = 0;
    for (Eigen::Index i : order) {
      std::vector<double> p = pooled_column(
          draws, "p." + std::to_string(i + 1) + "." + source_names[ks]);
      const double t = times[static_cast<std::size_t>(i)];
      const double q05 = sample_quantile(p, 0.05);
      const double q50 = sample_quantile(p, 0.50);
      const double q95 = sample_quantile(p, 0.95);
      lo.emplace_back(t, q05);
      hi.emplace_back(t, q95);
      med.emplace_back(t, q50);
      rows.push_back({"band_low", source_names[ks], idx, format_double(t),
                      format_double(q05)});
      rows.push_back({"band_high", source_names[ks], idx, format_double(t),
                      format_double(q95)});
      rows.push_back({"median", source_names[ks], idx, format_double(t),
                      format_double(q50)});
      ++idx;
    }
    std::vector<std::pair<double, double>> band = lo;
    band.insert(band.end(), hi.rbegin(), hi.rend());
    svg.path(band, true, "none", palette(ks), 0.25);
    svg.path(med, false, palette(ks), "none");
  }
  svg.legend(source_names);

  PlotFile out{stem + ".svg", stem + ".csv"};
  svg.save(out.svg_path);
  write_plot_data(out.data_path, rows);
  return out;
}

PlotFile plot_predictive(const std::string& stem, const ConsumerDataset& consumers,
                         const Eigen::VectorXd& grid_x, const Eigen::VectorXd& grid_y,
                         const Eigen::MatrixXd& density) {
  if (consumers.j() != 2)
    throw std::invalid_argument("predictive plot needs exactly 2 isotopes");
  if (density.rows() != grid_y.size() || density.cols() != grid_x.size())
    throw std::invalid_argument("predictive plot: grid/density shape mismatch");

  Range rx = range_of({grid_x.minCoeff(), grid_x.maxCoeff()});
  Range ry = range_of({grid_y.minCoeff(), grid_y.maxCoeff()});
  for (Eigen::Index i = 0; i < consumers.n(); ++i) {
    rx.include(consumers.isotopes(i, 0));
    ry.include(consumers.isotopes(i, 1));
  }
  rx.pad(0.04);
  ry.pad(0.04);

  std::vector<DataRow> rows;
  push_axis_rows(rows, rx.lo, rx.hi, ry.lo, ry.hi);
  Svg svg(rx.lo, rx.hi, ry.lo, ry.hi, consumers.isotope_names[0],
          consumers.isotope_names[1]);

  const struct {
    double mass;
    const char* kind;
    const char* color;
  } levels[] = {{0.95, "contour95", "#7aa6c2"}, {0.50, "contour50", "#1b6ca8"}};
  for (const auto& lvl : levels) {
    const double c = hdr_level(density, lvl.mass);
    const std::vector<Segment> segs = contour_segments(grid_x, grid_y, density, c);
    int idx = 0;
    for (const auto& s : segs) {
      rows.push_back({lvl.kind, std::to_string(idx), 0, format_double(s.x1),
                      format_double(s.y1)});
      rows.push_back({lvl.kind, std::to_string(idx), 1, format_double(s.x2),
                      format_double(s.y2)});
      svg.segment(s.x1, s.y1, s.x2, s.y2, lvl.color);
      ++idx;
    }
  }
  for (Eigen::Index i = 0; i < consumers.n(); ++i) {
    rows.push_back({"consumer", std::to_string(i + 1), 0,
                    format_double(consumers.isotopes(i, 0)),
                    format_double(consumers.isotopes(i, 1))});
    svg.circle(consumers.isotopes(i, 0), consumers.isotopes(i, 1), 3.5, "#222222");
  }

  PlotFile out{stem + ".svg", stem + ".csv"};
  svg.save(out.svg_path);
  write_plot_data(out.data_path, rows);
  return out;
}

}  // namespace isomix
