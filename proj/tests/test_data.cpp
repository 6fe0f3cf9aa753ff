#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isomix/csv.hpp"
#include "isomix/data.hpp"

using namespace isomix;

namespace {

std::string scratch_file(const std::string& name, const std::string& content) {
  const auto dir = std::filesystem::temp_directory_path() / "isomix_test_data";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / name).string();
  std::ofstream out(path);
  out << content;
  return path;
}

std::string scratch_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "isomix_test_data";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

// Expects fn() to throw E whose message contains `fragment`.
template <typename E, typename Fn>
void check_throws_containing(Fn&& fn, const std::string& fragment) {
  try {
    fn();
    FAIL_CHECK("expected exception containing '" << fragment << "'");
  } catch (const E& e) {
    const std::string message = e.what();
    CHECK_MESSAGE(message.find(fragment) != std::string::npos,
                  "message was: " << message);
  }
}

}  // namespace

TEST_CASE("csv round trips and reports columns") {
  const std::string path = scratch_path("roundtrip.csv");
  write_csv(path, {"a", "b"}, {{"1", "x"}, {"2.5", "y"}});
  const CsvTable t = read_csv(path);
  REQUIRE(t.header.size() == 2);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.column("a") == 0);
  CHECK(t.column("b") == 1);
  CHECK(t.column("missing") == -1);
  CHECK(t.rows[1][0] == "2.5");
  CHECK(CsvTable::line_of(0) == 2);
  CHECK(CsvTable::line_of(5) == 7);
}

TEST_CASE("csv loader reports malformed input with file and line") {
  CHECK_THROWS_AS(read_csv(scratch_path("missing_file.csv")), std::runtime_error);
  const std::string ragged = scratch_file("ragged.csv", "a,b\n1,2\n3\n");
  check_throws_containing<std::runtime_error>([&] { read_csv(ragged); }, ":3:");
  const std::string empty = scratch_file("empty.csv", "");
  CHECK_THROWS_AS(read_csv(empty), std::runtime_error);
}

TEST_CASE("format_double is shortest and exact") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(2.0) == "2");
  CHECK(format_double(-3.25) == "-3.25");
  CHECK(format_double(1e300) == "1e+300");
  std::mt19937_64 gen(42);
  for (int rep = 0; rep < 2000; ++rep) {
    const double mant = (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
    const int expo = static_cast<int>(gen() % 61) - 30;
    const double x = (gen() % 2 ? 1.0 : -1.0) * std::ldexp(mant, expo);
    const std::string s = format_double(x);
    CHECK(parse_double(s, "t") == x);
  }
}

TEST_CASE("parse_double is strict and carries context") {
  CHECK(parse_double("1.5", "c") == 1.5);
  CHECK(parse_double("-2e3", "c") == -2000.0);
  check_throws_containing<std::runtime_error>([] { parse_double("1.5x", "col t"); },
                                              "col t");
  CHECK_THROWS_AS(parse_double("", "c"), std::runtime_error);
  CHECK_THROWS_AS(parse_double("abc", "c"), std::runtime_error);
}

TEST_CASE("consumers load with covariates and strict isotope validation") {
  const std::string path = scratch_file(
      "consumers.csv",
      "d13C,d15N,time,site\n-12.5,9.1,0.25,north\n-11.75,10,0.5,south\n");
  const ConsumerDataset data = load_consumers(path, {"d13C", "d15N"});
  REQUIRE(data.n() == 2);
  REQUIRE(data.j() == 2);
  CHECK(data.isotopes(0, 0) == -12.5);
  CHECK(data.isotopes(1, 1) == 10.0);
  CHECK(data.covariate("time").is_numeric);
  CHECK_FALSE(data.covariate("site").is_numeric);
  const Eigen::VectorXd t = data.numeric_covariate("time");
  CHECK(t[1] == 0.5);
  CHECK_THROWS_AS(data.covariate("nope"), std::invalid_argument);
  CHECK_THROWS_AS(data.numeric_covariate("site"), std::invalid_argument);

  check_throws_containing<std::runtime_error>(
      [&] { load_consumers(path, {"d13C", "d18O"}); }, "d18O");
  const std::string bad =
      scratch_file("consumers_bad.csv", "d13C,d15N\n-12.5,nan\n");
  check_throws_containing<std::runtime_error>(
      [&] { load_consumers(bad, {"d13C", "d15N"}); }, ":2: non-finite");
}

TEST_CASE("source samples group by first appearance and keep times") {
  const std::string path = scratch_file("sources.csv",
                                        "source,d13C,d15N\n"
                                        "B,1,2\nA,3,4\nB,5,6\nA,7,8\nA,9,10\n");
  const SourceSamples s = load_sources(path);
  REQUIRE(s.k() == 2);
  CHECK(s.source_names[0] == "B");
  CHECK(s.source_names[1] == "A");
  CHECK(s.samples[0].rows() == 2);
  CHECK(s.samples[1].rows() == 3);
  CHECK(s.samples[1](2, 1) == 10.0);
  CHECK_FALSE(s.has_times());

  const std::string timed = scratch_file(
      "sources_t.csv",
      "source,time,d13C,d15N\nA,0.1,1,2\nA,0.2,3,4\nB,0.1,5,6\n");
  const SourceSamples st = load_sources(timed);
  REQUIRE(st.has_times());
  CHECK(st.times[0][1] == 0.2);
}

TEST_CASE("empirical summaries use the unbiased divisor and flag degeneracy") {
  SourceSamples s;
  s.source_names = {"A", "B"};
  s.isotope_names = {"x", "y"};
  Eigen::MatrixXd a(3, 2);
  a << 1, 2, 3, 4, 5, 6;  // perfectly collinear: singular covariance
  Eigen::MatrixXd b(3, 2);
  b << 0, 0, 1, 0, 0, 1;
  s.samples = {a, b};
  s.times = {{}, {}};
  const SourceSummary sum = empirical_bayes_summarize(s);
  REQUIRE(sum.k() == 2);
  CHECK(sum.by_source[0].mu.isApprox(Eigen::Vector2d(3, 4), 1e-14));
  CHECK(sum.by_source[0].cov.isApprox((Eigen::Matrix2d() << 4, 4, 4, 4).finished(),
                                      1e-14));
  CHECK(sum.by_source[0].degenerate);
  const double third = 1.0 / 3.0, sixth = -1.0 / 6.0;
  CHECK(sum.by_source[1].mu.isApprox(Eigen::Vector2d(third, third), 1e-14));
  CHECK(sum.by_source[1].cov.isApprox(
      (Eigen::Matrix2d() << third, sixth, sixth, third).finished(), 1e-14));
  CHECK_FALSE(sum.by_source[1].degenerate);

  SourceSamples tiny = s;
  tiny.samples[0] = a.topRows(1);
  check_throws_containing<std::invalid_argument>(
      [&] { empirical_bayes_summarize(tiny); }, "at least 2");

  SourceSamples same = s;
  same.samples[0] = Eigen::MatrixXd::Constant(4, 2, 1.5);
  const SourceSummary zs = empirical_bayes_summarize(same);
  CHECK(zs.by_source[0].cov.cwiseAbs().maxCoeff() == 0.0);
  CHECK(zs.by_source[0].degenerate);
}

TEST_CASE("regularized_cov jitters only rank-deficient matrices") {
  const Eigen::Matrix2d pd = (Eigen::Matrix2d() << 2, 0.5, 0.5, 1).finished();
  CHECK(regularized_cov(pd).isApprox(pd, 0.0));
  const Eigen::Matrix2d zero = Eigen::Matrix2d::Zero();
  const Eigen::MatrixXd fixed = regularized_cov(zero);
  CHECK(fixed(0, 0) > 0.0);
  CHECK(Eigen::LLT<Eigen::MatrixXd>(fixed).info() == Eigen::Success);
}

TEST_CASE("tef loader accepts both sample and direct layouts") {
  const std::string samples = scratch_file(
      "tefs_s.csv", "source,d13C,d15N\nA,1,3\nA,2,4\nB,1,3\nB,2,4\n");
  const TefSamples ts = load_tefs(samples, {"A", "B"}, {"d13C", "d15N"});
  CHECK_FALSE(ts.direct);
  REQUIRE(ts.k() == 2);
  const TefSummary sum = empirical_bayes_summarize(ts);
  CHECK(sum.by_source[0].mu.isApprox(Eigen::Vector2d(1.5, 3.5), 1e-14));

  const std::string direct = scratch_file(
      "tefs_d.csv",
      "source,mean_d13C,sd_d13C,mean_d15N,sd_d15N\nA,1.63,1,3.54,1\nB,1.63,2,3.54,0\n");
  const TefSamples td = load_tefs(direct, {"A", "B"}, {"d13C", "d15N"});
  CHECK(td.direct);
  const TefSummary dsum = empirical_bayes_summarize(td);
  CHECK(dsum.by_source[0].mu.isApprox(Eigen::Vector2d(1.63, 3.54), 1e-14));
  CHECK(dsum.by_source[1].cov(0, 0) == doctest::Approx(4.0));
  CHECK(dsum.by_source[1].cov(1, 1) == 0.0);
  CHECK(dsum.by_source[1].degenerate);

  check_throws_containing<std::runtime_error>(
      [&] { load_tefs(direct, {"A", "C"}, {"d13C", "d15N"}); },
      "unknown source label");
}

TEST_CASE("concentrations validate range and source coverage") {
  const std::string path = scratch_file(
      "conc.csv", "source,d13C,d15N\nA,0.4,0.05\nB,1,0.3\n");
  const ConcentrationTable q =
      load_concentrations(path, {"A", "B"}, {"d13C", "d15N"});
  CHECK(q.q(0, 1) == 0.05);
  CHECK(q.q(1, 0) == 1.0);

  const std::string bad = scratch_file(
      "conc_bad.csv", "source,d13C,d15N\nA,0.4,0\nB,1,0.3\n");
  check_throws_containing<std::runtime_error>(
      [&] { load_concentrations(bad, {"A", "B"}, {"d13C", "d15N"}); }, "(0,1]");
  check_throws_containing<std::runtime_error>(
      [&] { load_concentrations(path, {"A", "B", "C"}, {"d13C", "d15N"}); }, "C");
}

TEST_CASE("trajectory tables round trip and look up exact times") {
  SourceTimetable table;
  table.source_names = {"A"};
  table.isotope_names = {"d13C", "d15N"};
  table.times = {{0.0, 0.5, 1.0}};
  std::vector<GaussianSummary> entries;
  for (int i = 0; i < 3; ++i) {
    GaussianSummary g;
    g.mu = Eigen::Vector2d(i, 2 * i);
    g.cov = (Eigen::Matrix2d() << 1.0 + i, 0.2, 0.2, 2.0).finished();
    entries.push_back(g);
  }
  table.entries = {entries};
  const std::string path = scratch_path("traj.csv");
  save_trajectories(path, table);
  const SourceTimetable back = load_trajectories(path);
  REQUIRE(back.k() == 1);
  REQUIRE(back.times[0].size() == 3);
  const GaussianSummary& g = back.at(0, 0.5);
  CHECK(g.mu.isApprox(Eigen::Vector2d(1, 2), 1e-12));
  CHECK(g.cov.isApprox(entries[1].cov, 1e-12));
  CHECK_THROWS_AS(back.at(0, 0.25), std::invalid_argument);

  const std::string bad = scratch_file(
      "traj_bad.csv",
      "source,time,mean_d13C,var_d13C,mean_d15N,var_d15N,corr\nA,0,1,0,2,1,0\n");
  check_throws_containing<std::runtime_error>([&] { load_trajectories(bad); },
                                              "variance must be positive");
}

TEST_CASE("isospace check classifies consumers against the corrected hull") {
  ConsumerDataset consumers;
  consumers.isotope_names = {"x", "y"};
  consumers.isotopes.resize(3, 2);
  consumers.isotopes << 3, 3, 7, 3, 0.5, 0.5;

  SourceSummary sources;
  sources.source_names = {"a", "b", "c", "d"};
  sources.isotope_names = {"x", "y"};
  const double corners[4][2] = {{0, 0}, {4, 0}, {4, 4}, {0, 4}};
  for (const auto& c : corners) {
    GaussianSummary g;
    g.mu = Eigen::Vector2d(c[0], c[1]);
    g.cov = Eigen::Matrix2d::Identity();
    sources.by_source.push_back(g);
  }
  TefSummary tefs = sources;
  for (auto& g : tefs.by_source) {
    g.mu = Eigen::Vector2d(1, 1);
    g.cov = Eigen::Matrix2d::Identity();
  }

  const IsospaceReport report = isospace_check(consumers, sources, tefs);
  REQUIRE(report.computed);
  REQUIRE(report.hull.size() == 4);  // corrected square (1,1)..(5,5)
  REQUIRE(report.consumers.size() == 3);
  CHECK(report.consumers[0].inside);
  CHECK(report.consumers[0].distance == 0.0);
  CHECK_FALSE(report.consumers[1].inside);
  CHECK(report.consumers[1].distance == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_FALSE(report.consumers[2].inside);
  const double expect = std::sqrt(0.5);  // nearest corner (1,1)
  CHECK(report.consumers[2].distance == doctest::Approx(expect).epsilon(1e-9));

  ConsumerDataset one;
  one.isotope_names = {"x"};
  one.isotopes.resize(1, 1);
  one.isotopes << 0.5;
  SourceSummary s1;
  s1.source_names = {"a", "b"};
  s1.isotope_names = {"x"};
  GaussianSummary g1;
  g1.mu = Eigen::VectorXd::Constant(1, 0.0);
  g1.cov = Eigen::MatrixXd::Identity(1, 1);
  s1.by_source = {g1, g1};
  CHECK_FALSE(isospace_check(one, s1, s1).computed);
}

TEST_CASE("consumer and source savers round trip through loaders") {
  ConsumerDataset data;
  data.isotope_names = {"d13C", "d15N"};
  data.isotopes.resize(2, 2);
  data.isotopes << -12.5, 9.25, -11.0, 10.5;
  ConsumerDataset::Covariate time;
  time.raw = {"0.1", "0.9"};
  time.numeric = {0.1, 0.9};
  time.is_numeric = true;
  data.covariates.emplace("time", time);
  const std::string cpath = scratch_path("save_consumers.csv");
  save_consumers(cpath, data);
  const ConsumerDataset back = load_consumers(cpath, {"d13C", "d15N"});
  CHECK(back.isotopes.isApprox(data.isotopes, 0.0));
  CHECK(back.numeric_covariate("time")[1] == 0.9);

  SourceSamples s;
  s.source_names = {"A", "B"};
  s.isotope_names = {"d13C", "d15N"};
  Eigen::MatrixXd m(2, 2);
  m << 1.25, 2.5, 3.75, 5.0;
  s.samples = {m, m.array() + 1.0};
  s.times = {{0.25, 0.75}, {0.25, 0.75}};
  const std::string spath = scratch_path("save_sources.csv");
  save_sources(spath, s);
  const SourceSamples sback = load_sources(spath);
  CHECK(sback.samples[0].isApprox(m, 0.0));
  CHECK(sback.samples[1](0, 0) == 2.25);
  REQUIRE(sback.has_times());
  CHECK(sback.times[0][0] == 0.25);
}
