#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"
#include "twohop/report.hpp"

using namespace twohop;

namespace {

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

LayerFrequencyTable sample_table() {
  LayerFrequencyTable t;
  t.rows = {make_row(0, 100, 60), make_row(1, 7, 0), make_row(2, 3, 3), synthetic_row(3)};
  return t;
}

OutcomeTable sample_outcomes() {
  OutcomeTable t;
  t.rows.push_back({0, 10, 0.1, 0.2, 0.3, 0.4, false});
  t.rows.push_back({1, 0, 0.35, 0.15, 0.35, 0.15, true});
  return t;
}

}  // namespace

TEST(Report, EmptyTablesGiveHeaderOnlyCsv) {
  EXPECT_EQ(frequency_csv({}), std::string(kFrequencyHeader) + "\n");
  EXPECT_EQ(outcome_csv({}), std::string(kOutcomeHeader) + "\n");
  EXPECT_EQ(plot_rows(OutcomeTable{}), "");
}

TEST(Report, FrequencyCsvRows) {
  const auto l = lines(frequency_csv(sample_table()));
  ASSERT_EQ(l.size(), 5u);
  EXPECT_EQ(l[0], kFrequencyHeader);
  EXPECT_EQ(l[1].substr(0, 13), "0,100,60,0.6,");
  EXPECT_EQ(l[4], "3,0,0,0.5,1,0,1,1");
}

TEST(Report, OutcomePlotHasFourSeriesPerLayer) {
  const auto l = lines(plot_rows(sample_outcomes()));
  ASSERT_EQ(l.size(), 8u);
  for (std::size_t layer = 0; layer < 2; ++layer) {
    double total = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      const auto& row = l[4 * layer + j];
      EXPECT_EQ(row.substr(0, 2), std::to_string(layer) + ",");
      total += std::stod(row.substr(row.rfind(',') + 1));
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Report, JsonRoundTrip) {
  const auto t = sample_table();
  EXPECT_EQ(frequency_table_from_json(nlohmann::json::parse(to_json(t).dump())), t);
  const auto o = sample_outcomes();
  EXPECT_EQ(outcome_table_from_json(nlohmann::json::parse(to_json(o).dump())), o);
  EXPECT_THROW(frequency_table_from_json(nlohmann::json::parse(R"([{"layer":0}])")), InvalidInput);
}

TEST(Report, ShortestRoundTripDoubles) {
  for (double x : {0.1, 1.0 / 3.0, 1e-300, 0.5, 123456.789}) EXPECT_EQ(std::stod(format_double(x)), x);
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(Report, EmitWritesBundleAndRejectsUnwritableDirectory) {
  fixtures::TempDir dir("report");
  FrequencyResult r;
  r.table = sample_table();
  r.log = {"one", "two"};
  const auto bundle = frequency_report("rq2_consistency", r, Json::object());
  emit_report(bundle, dir.path() / "run");
  const auto files = fixtures::read_tree(dir.path() / "run");
  EXPECT_EQ(files.size(), 4u);
  EXPECT_EQ(files.at("log.txt"), "one\ntwo\n");
  EXPECT_EQ(files.at("report.csv"), frequency_csv(r.table));
  EXPECT_EQ(Json::parse(files.at("report.json"))["experiment"], "rq2_consistency");

  std::ofstream(dir.path() / "plainfile") << "x";
  EXPECT_THROW(emit_report(bundle, dir.path() / "plainfile" / "run"), InvalidInput);
}

TEST(Report, RunIdDependsOnCommandAndConfig) {
  const Json a = {{"seed", "1"}}, b = {{"seed", "2"}};
  EXPECT_EQ(run_id("run-rq1", a), run_id("run-rq1", a));
  EXPECT_NE(run_id("run-rq1", a), run_id("run-rq1", b));
  EXPECT_NE(run_id("run-rq1", a), run_id("run-rq2", a));
  EXPECT_EQ(run_id("run-rq1", a).size(), std::string("run-rq1-").size() + 16);
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}
