#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "epical/io.hpp"
#include "epical/presets.hpp"
#include "epical/run.hpp"

using namespace epical;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("epical_io_" + std::to_string(::getpid()) + "_" +
           ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name), std::ios::binary) << text;
    return path(name);
  }

  fs::path dir;
};

std::string slurp(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST(Dates, RoundTripAndCalendar) {
  EXPECT_EQ(parse_date("1970-01-01"), 0);
  EXPECT_EQ(parse_date("2020-03-01") - parse_date("2020-02-28"), 2);  // leap year
  EXPECT_EQ(format_date(parse_date("2020-10-27")), "2020-10-27");
  EXPECT_THROW(parse_date("2021-02-29"), SchemaError);
  EXPECT_THROW(parse_date("2020/01/01"), SchemaError);
}

TEST(Dates, BerlinBreakpoints) {
  const std::vector<double> want{25, 35, 80, 120};
  EXPECT_EQ(presets::berlin_breakpoints(), want);
}

using Dataset = TempDir;

TEST_F(Dataset, WriteReadRoundTrip) {
  auto spec = presets::sir_reference(3);
  spec.population = 1e6;
  const auto ds = synth_generate(spec);
  write_dataset_csv(path("d.csv"), ds);
  const auto back = read_dataset_csv(path("d.csv"));
  EXPECT_EQ(back.days, ds.days);
  EXPECT_EQ(back.columns, ds.columns);
  EXPECT_EQ(back.population, ds.population);
  EXPECT_EQ(back.counts, ds.counts);
  EXPECT_EQ(back.densities().values(), ds.densities().values());
}

TEST_F(Dataset, DensitiesAreCountsOverPopulation) {
  const auto p = write(
      "d.csv", "date,N,S,I\n2020-01-01,1000,990,10\n2020-01-02,2000,1900,100\n");
  const auto ts = read_dataset_csv(p).densities();
  EXPECT_EQ(ts.times(), (std::vector<double>{0.0, 1.0}));
  EXPECT_DOUBLE_EQ(ts.at(0, 0), 0.99);
  EXPECT_DOUBLE_EQ(ts.at(1, 1), 0.05);
}

TEST_F(Dataset, MissingDayIsGapError) {
  const auto p = write("d.csv", "date,N,S\n2020-01-01,10,9\n2020-01-03,10,8\n");
  try {
    read_dataset_csv(p);
    FAIL() << "no exception";
  } catch (const GapError& e) {
    EXPECT_NE(std::string(e.what()).find("2020-01-03"), std::string::npos);
  }
}

TEST_F(Dataset, NegativeCountIsValueError) {
  const auto p = write("d.csv", "date,N,S\n2020-01-01,10,9\n2020-01-02,10,-1\n");
  try {
    read_dataset_csv(p);
    FAIL() << "no exception";
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
}

TEST_F(Dataset, EmptyAndHeaderOnlyAreSchemaErrors) {
  EXPECT_THROW(read_dataset_csv(write("e.csv", "")), SchemaError);
  EXPECT_THROW(read_dataset_csv(write("h.csv", "date,N,S\n")), SchemaError);
  EXPECT_THROW(read_dataset_csv(write("b.csv", "day,N,S\n2020-01-01,1,1\n")), SchemaError);
  EXPECT_THROW(read_dataset_csv(write("f.csv", "date,N,S\n2020-01-01,1\n")), SchemaError);
}

TEST_F(Dataset, ReducedFileGivesReducedMask) {
  const auto p = write("r.csv",
                       "date,N,SY,H,C\n2020-02-16,3600000,1,0,0\n2020-02-17,3600000,2,1,0\n");
  const auto ds = read_dataset_csv(p);
  EXPECT_EQ(fit_mask(ds), (std::vector<std::string>{"SY", "H", "C"}));
}

TEST_F(Dataset, RenameMapsColumns) {
  const auto p = write("r.csv", "date,N,symptomatic,hosp\n2020-02-16,100,1,0\n");
  const auto ds = read_dataset_csv(p, {{"symptomatic", "SY"}, {"hosp", "H"}});
  EXPECT_EQ(ds.columns, (std::vector<std::string>{"SY", "H"}));
}

TEST_F(Dataset, RowOfOutsideRangeThrows) {
  const auto ds = synth_generate(presets::sir_reference(1));
  EXPECT_EQ(ds.row_of("2020-01-11"), 10u);
  EXPECT_THROW(ds.row_of("2019-12-31"), ConfigError);
}

using Synthetic = TempDir;

TEST_F(Synthetic, ZeroNoiseIgnoresSeed) {
  auto a = presets::sir_reference(1), b = presets::sir_reference(99);
  a.params[SirModel::sigma] = 0.0;
  b.params[SirModel::sigma] = 0.0;
  EXPECT_EQ(synth_generate(a).counts, synth_generate(b).counts);
}

TEST_F(Synthetic, NoiseDependsOnSeed) {
  EXPECT_NE(synth_generate(presets::sir_reference(1)).counts,
            synth_generate(presets::sir_reference(2)).counts);
}

TEST_F(Synthetic, SameSeedByteIdenticalFiles) {
  synth_write(presets::sir_reference(7), path("a.csv"));
  synth_write(presets::sir_reference(7), path("b.csv"));
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
  EXPECT_EQ(slurp(path("a.csv.truth.json")), slurp(path("b.csv.truth.json")));
  const auto truth = nlohmann::json::parse(slurp(path("a.csv.truth.json")));
  EXPECT_EQ(truth["schema"], "epical-truth/1");
  EXPECT_EQ(truth["parameters"]["tau"], 14.0);
}

TEST_F(Synthetic, BerlinSurrogateShape) {
  const auto ds = synth_generate(presets::berlin_surrogate());
  EXPECT_EQ(ds.rows(), presets::berlin_rows);
  EXPECT_EQ(ds.date(0), "2020-02-16");
  EXPECT_EQ(ds.columns,
            (std::vector<std::string>{"S", "E", "I", "R", "SY", "H", "C", "D", "Q"}));
  for (double v : ds.population) EXPECT_EQ(v, presets::berlin_population);
}

using Exports = TempDir;

TEST_F(Exports, LogRoundTrip) {
  PosteriorLog log;
  log.names = {"beta", "tau"};
  log.add(0, 0, {0.2, 14.0}, 0.125);
  log.add(3, 7, {1.0 / 3.0, 2e-7}, 12.5);
  write_log_csv(path("log.csv"), log);
  const auto back = read_log_csv(path("log.csv"));
  EXPECT_EQ(back.names, log.names);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(back.records[k].chain, log.records[k].chain);
    EXPECT_EQ(back.records[k].epoch, log.records[k].epoch);
    EXPECT_EQ(back.records[k].params, log.records[k].params);
    EXPECT_EQ(back.records[k].loss, log.records[k].loss);
  }
}

TEST_F(Exports, DensityRoundTrip) {
  const Density1D d(linspace(0.0, 1.0, 11), {0, 1, 2, 3, 4, 5, 4, 3, 2, 1, 0});
  write_density_csv(path("d.csv"), d);
  const auto back = read_density_csv(path("d.csv"));
  EXPECT_EQ(back.grid(), d.grid());
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(back.mass()[i], d.mass()[i], 1e-15);
}

using Config = TempDir;

TEST_F(Config, JsonRoundTrip) {
  const auto c = load_config(std::string(EPICAL_SOURCE_DIR) + "/configs/berlin_surrogate.json");
  const auto j = config_to_json(c);
  const auto again = config_to_json(config_from_json(j));
  EXPECT_EQ(j, again);
}

TEST_F(Config, AllShippedConfigsLoad) {
  for (const auto& e : fs::directory_iterator(std::string(EPICAL_SOURCE_DIR) + "/configs")) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
  }
}

TEST_F(Config, UnknownSchemaRejected) {
  const auto p = write("c.json", R"({"schema": "something-else/9", "model": {"name": "sir"}})");
  EXPECT_THROW(load_config(p), ConfigError);
}

TEST_F(Config, SplitDateOutsideDataRejected) {
  auto c = load_config(std::string(EPICAL_SOURCE_DIR) + "/configs/berlin_surrogate.json");
  c.split_date = "2021-06-01";
  EXPECT_THROW(build_scenario(c), ConfigError);
}
