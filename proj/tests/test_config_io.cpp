#include "conic/config.hpp"
#include "conic/io.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

using namespace conic;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("conic_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void expect_config_error(const std::string& text, int line, const std::string& fragment) {
  try {
    parse_config(text);
    ADD_FAILURE() << "no error for: " << text;
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), line) << e.what();
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Config, EmptyTextGivesDefaults) {
  EXPECT_EQ(parse_config(""), ExperimentConfig{});
  EXPECT_EQ(parse_config("# only a comment\n\n"), ExperimentConfig{});
}

TEST(Config, NegativeAngleNamesFieldAndLine) {
  expect_config_error("[model]\nresolution = 32\nalpha = -1\n", 3, "model.alpha");
}

TEST(Config, UnknownKeyAndTypeMismatch) {
  expect_config_error("[flow]\nt_end = 5\nbogus = 1\n", 3, "bogus");
  expect_config_error("[model]\nresolution = \"many\"\n", 2, "resolution");
  expect_config_error("[nowhere]\nx = 1\n", 1, "nowhere");
  expect_config_error("[flow]\nt_end = 5\nt_end = 6\n", 3, "t_end");
}

TEST(Config, ShippedAcceptanceConfigRoundTrips) {
  const ExperimentConfig cfg = load_config(CONIC_SOURCE_DIR "/configs/acceptance.toml");
  EXPECT_EQ(cfg.model.resolution, 96);
  EXPECT_EQ(cfg.flow.t_end, 50.0);
  EXPECT_TRUE(cfg.flow.track_potential);
  EXPECT_EQ(parse_config(serialize_config(cfg)), cfg);
}

TEST(Config, OverridesApplyAndValidate) {
  ExperimentConfig cfg;
  apply_override(cfg, "flow.t_end=12.5");
  EXPECT_EQ(cfg.flow.t_end, 12.5);
  apply_override(cfg, "diagnostics.checks=[\"bounds\", \"harnack\"]");
  EXPECT_EQ(cfg.diagnostics.checks, (std::vector<std::string>{"bounds", "harnack"}));
  EXPECT_THROW(apply_override(cfg, "flow.dt_initial=-1"), ConfigError);
  EXPECT_EQ(cfg.flow.dt_initial, ExperimentConfig{}.flow.dt_initial);
  EXPECT_THROW(apply_override(cfg, "nodot=1"), ConfigError);
}

TEST(Config, SnapshotTimesClippedToEnd) {
  ExperimentConfig cfg;
  cfg.flow.t_end = 3.0;
  cfg.output.snapshot_schedule = {0.5, 2.0, 7.0};
  EXPECT_EQ(snapshot_times(cfg), (std::vector<double>{0.5, 2.0}));
}

TEST(ArrayIo, RoundTripIsBitExact) {
  const fs::path d = temp_dir("array");
  const std::vector<double> v{0.1, -2.5e-300, std::numeric_limits<double>::max(), 1.0 / 3.0,
                              -0.0, 7.0};
  write_array(d / "a.cric", v, {2, 3});
  const ArrayFile a = read_array(d / "a.cric");
  EXPECT_EQ(a.dims, (std::vector<std::uint64_t>{2, 3}));
  ASSERT_EQ(a.values.size(), v.size());
  EXPECT_EQ(std::memcmp(a.values.data(), v.data(), v.size() * sizeof(double)), 0);

  const std::string bytes = slurp(d / "a.cric");
  EXPECT_EQ(bytes.substr(0, 4), "CRIC");
  EXPECT_EQ(bytes.size(), 4u + 4u + 4u + 2u * 8u + v.size() * 8u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), kSnapshotVersion);
}

TEST(ArrayIo, TruncatedFileIsError) {
  const fs::path d = temp_dir("trunc");
  write_array(d / "a.cric", {1.0, 2.0, 3.0});
  fs::resize_file(d / "a.cric", fs::file_size(d / "a.cric") - 3);
  EXPECT_THROW(read_array(d / "a.cric"), FormatError);
  std::ofstream(d / "bad.cric") << "NOPE";
  EXPECT_THROW(read_array(d / "bad.cric"), FormatError);
}

TEST(Metadata, RoundTrip) {
  const fs::path d = temp_dir("meta");
  Metadata m{{"time", format_double(0.1)}, {"mode", "raw"}};
  write_metadata(d / "m.meta", m);
  const Metadata r = read_metadata(d / "m.meta");
  EXPECT_EQ(r, m);
  EXPECT_EQ(parse_double(r.at("time")), 0.1);
  EXPECT_THROW(parse_double("0.1x"), FormatError);
}

TEST(Checksum, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Manifest, DetectsTampering) {
  const fs::path d = temp_dir("manifest");
  write_array(d / "x.cric", {1.0, 2.0});
  std::ofstream(d / "notes.txt") << "hello";
  write_manifest(d, {"x.cric", "notes.txt"}, true);
  const Manifest m = read_manifest(d);
  EXPECT_TRUE(m.complete);
  ASSERT_EQ(m.files.size(), 2u);
  EXPECT_EQ(m.files[1].checksum, fnv1a64("hello"));
  EXPECT_NO_THROW(verify_manifest(d, m));

  std::ofstream(d / "notes.txt") << "hellO";
  EXPECT_THROW(verify_manifest(d, m), FormatError);
  fs::remove(d / "notes.txt");
  EXPECT_THROW(verify_manifest(d, m), FormatError);
}

TEST(Csv, EscapesAndReadsBack) {
  EXPECT_EQ(csv_escape("plain"), "plain");
  EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_escape("two\nlines"), "\"two\nlines\"");

  const fs::path d = temp_dir("csv");
  {
    CsvWriter w(d / "s.csv", {"name", "value"});
    w.row(std::vector<std::string>{"a,b", "1"});
    w.row(std::vector<std::string>{"q\"x", "2"});
  }
  EXPECT_EQ(slurp(d / "s.csv"), "name,value\r\n\"a,b\",1\r\n\"q\"\"x\",2\r\n");
  const auto rows = read_csv(d / "s.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][0], "a,b");
  EXPECT_EQ(rows[2][0], "q\"x");
}
