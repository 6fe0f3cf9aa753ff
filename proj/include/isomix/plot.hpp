#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isomix/data.hpp"
#include "isomix/serialize.hpp"

namespace isomix {

/// Closed polygon approximating the contour of a bivariate normal that
/// encloses `coverage` probability mass: chi-square quantile scaling of the
/// covariance eigen-structure. Rows are vertices.
Eigen::MatrixXd covariance_ellipse(const Eigen::Vector2d& mu,
                                   const Eigen::Matrix2d& cov, double coverage,
                                   int segments = 64);

/// Paths written by one plot call. Every number rendered in the SVG appears
/// in the data file; the SVG is a view of that table. All data files share
/// the schema kind,label,order,x,y (axis rows carry the plotted ranges).
struct PlotFile {
  std::string svg_path;
  std::string data_path;
};

/// Consumer points with TEF-corrected source means and 50%/90% ellipses.
/// Needs exactly two isotopes.
PlotFile plot_isospace(const std::string& stem, const ConsumerDataset& consumers,
                       const SourceSummary& sources, const TefSummary& tefs);

/// Kernel density of each source's population-mean dietary proportion over
/// the pooled draws.
PlotFile plot_proportion_densities(const std::string& stem, const StoredDraws& draws,
                                   const std::vector<std::string>& source_names,
                                   Eigen::Index n_consumers);

/// Pointwise median and central 90% band of p_ik against consumer time.
PlotFile plot_proportion_ribbon(const std::string& stem, const StoredDraws& draws,
                                const std::vector<std::string>& source_names,
                                Eigen::Index n_consumers,
                                const std::vector<double>& times);

/// Highest-density-region contours (50% and 95% of grid mass) of the
/// posterior predictive density with the observed consumers overlaid.
PlotFile plot_predictive(const std::string& stem, const ConsumerDataset& consumers,
                         const Eigen::VectorXd& grid_x, const Eigen::VectorXd& grid_y,
                         const Eigen::MatrixXd& density);

}  // namespace isomix
