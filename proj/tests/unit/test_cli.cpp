#include "model_cache.hpp"

#include "xai/cli/cli.hpp"
#include "xai/io/blob.hpp"

#include <gtest/gtest.h>
#include <json.hpp>
#include <zlib.h>

#include <filesystem>
#include <map>
#include <random>
#include <sstream>

using namespace xai;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("xai_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::uint32_t crc(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome xaibench(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> files_under(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = io::read_file(e.path());
  return files;
}

// Shared cheap fixture: the cached model on disk and one small simulated study.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    model_ = (dir_->path / "model.bin").string();
    save_model(xai::testing::bias_model(), model_);
    study_ = (dir_->path / "study").string();
    const auto r = xaibench(study_args(study_));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static std::vector<std::string> study_args(const std::string& out) {
    return {"simulate-study", "--model", model_, "--seed", "1", "--participants", "3", "--n", "160",
            "--ig-steps", "4", "--smoothgrad-samples", "2", "--out", out};
  }

  static inline TempDir* dir_ = nullptr;
  static inline std::string model_, study_;
};

}  // namespace

TEST(CliExit, UsageErrors) {
  EXPECT_EQ(xaibench({}).code, cli::kUsage);
  EXPECT_EQ(xaibench({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(xaibench({"train", "--epochs"}).code, cli::kUsage);
  TempDir tmp;
  const fs::path out = tmp.path / "never";
  EXPECT_EQ(xaibench({"analyze", "--out", out.string()}).code, cli::kUsage);  // no records
  EXPECT_FALSE(fs::exists(out));
  const auto help = xaibench({"--help"});
  EXPECT_EQ(help.code, cli::kOk);
  EXPECT_NE(help.out.find("simulate-study"), std::string::npos);
}

TEST(CliExit, DataErrors) {
  TempDir tmp;
  EXPECT_EQ(xaibench({"analyze", "--records", (tmp.path / "missing.csv").string(), "--out", tmp.path.string()}).code,
            cli::kDataError);
  io::write_file(tmp.path / "bad.json", R"({"dataset":{"n":8},"colour":"blue"})");
  EXPECT_EQ(xaibench({"gen-data", "--config", (tmp.path / "bad.json").string(), "--out", tmp.path.string()}).code,
            cli::kDataError);
  io::write_file(tmp.path / "broken.json", "{");
  EXPECT_EQ(xaibench({"gen-data", "--config", (tmp.path / "broken.json").string(), "--out", tmp.path.string()}).code,
            cli::kDataError);
  EXPECT_EQ(xaibench({"gen-data", "--n", "0", "--out", tmp.path.string()}).code, cli::kDataError);
}

TEST(CliGenData, WritesDatasetAndManifest) {
  TempDir tmp;
  const auto r = xaibench({"gen-data", "--n", "12", "--beta", "0.5", "--seed", "4", "--out", tmp.path.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = json::parse(io::read_file(tmp.path / "manifest.json"));
  EXPECT_EQ(m.at("kind"), "xaibench_manifest");
  EXPECT_EQ(m.at("command"), "gen-data");
  EXPECT_EQ(m.at("config").at("dataset").at("n"), 12);
  EXPECT_EQ(m.at("seeds").at("dataset"), 4);
  const auto ds = load_dataset(tmp.path / "dataset");
  EXPECT_EQ(ds.size(), 12u);
  EXPECT_EQ(ds.config.beta, 0.5);
}

TEST_F(CliTest, SimulateStudyIsByteReproducible) {
  // Same seed, same out path: every file including the manifest is identical.
  const fs::path again = dir_->path / "again";
  ASSERT_EQ(xaibench(study_args(again.string())).code, 0);
  const auto first = files_under(again);
  ASSERT_EQ(xaibench(study_args(again.string())).code, 0);
  EXPECT_EQ(files_under(again), first);

  auto original = files_under(study_);
  auto copy = first;
  original.erase("manifest.json");
  copy.erase("manifest.json");
  EXPECT_EQ(copy, original);

  // The recorded crc32s match the written bytes.
  const json m = json::parse(first.at("manifest.json"));
  for (const auto& o : m.at("outputs"))
    EXPECT_EQ(o.at("crc32").get<std::uint32_t>(), crc(first.at(o.at("path").get<std::string>())));
}

TEST_F(CliTest, RerunFromManifestReproducesOutputs) {
  const fs::path rerun = dir_->path / "rerun";
  const auto r = xaibench({"simulate-study", "--config", study_ + "/manifest.json", "--out", rerun.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto a = files_under(study_);
  auto b = files_under(rerun);
  const json ma = json::parse(a.at("manifest.json")), mb = json::parse(b.at("manifest.json"));
  EXPECT_EQ(ma.at("seeds"), mb.at("seeds"));
  EXPECT_EQ(ma.at("outputs"), mb.at("outputs"));
  a.erase("manifest.json");
  b.erase("manifest.json");
  EXPECT_EQ(a, b);
  // A manifest from one command does not configure another.
  EXPECT_EQ(xaibench({"train", "--config", study_ + "/manifest.json", "--out", rerun.string()}).code, cli::kUsage);
}

TEST_F(CliTest, TableHasEveryConditionAndSession) {
  const std::string table = io::read_file(fs::path(study_) / "table.csv");
  std::istringstream in(table);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "condition,session_1,session_2,session_3,utility");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line.substr(0, line.find(',')));
  const std::vector<std::string> expected = {"baseline", "control", "saliency", "integrated_gradients",
                                             "smoothgrad", "gradcam", "occlusion", "gradient_input"};
  EXPECT_EQ(rows, expected);
  const json m = json::parse(io::read_file(fs::path(study_) / "manifest.json"));
  EXPECT_EQ(m.at("config").at("stimuli").at("beta"), 0.0);
  EXPECT_EQ(m.at("config").at("design").at("methods").at("integrated_gradients_steps"), 4);
  EXPECT_EQ(m.at("model").at("source"), model_);
}

TEST_F(CliTest, AnalyzeReproducesTheSimulationAnalysis) {
  for (const char* records : {"records.csv", "records.jsonl"}) {
    const fs::path out = dir_->path / (std::string("analyze_") + records);
    const auto r = xaibench({"analyze", "--records", study_ + "/" + records, "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(io::read_file(out / "analysis.json"), io::read_file(fs::path(study_) / "analysis.json"));
    EXPECT_EQ(io::read_file(out / "table.csv"), io::read_file(fs::path(study_) / "table.csv"));
    EXPECT_NE(r.out.find("Tukey HSD"), std::string::npos);
  }
  // The manifest may stand in for the design.
  const fs::path out = dir_->path / "analyze_manifest";
  ASSERT_EQ(xaibench({"analyze", "--records", study_ + "/records.csv", "--design", study_ + "/manifest.json", "--out",
                      out.string()})
                .code,
            0);
  EXPECT_EQ(io::read_file(out / "analysis.json"), io::read_file(fs::path(study_) / "analysis.json"));
}

TEST_F(CliTest, MetricCommandsFeedTheReport) {
  const fs::path cx = dir_->path / "complexity";
  auto r = xaibench({"complexity", "--model", model_, "--n", "6", "--method", "saliency,gradcam,control", "--out",
                     cx.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path report = dir_->path / "report";
  r = xaibench({"report", "--from", study_, "--metrics", (cx / "metrics.json").string(), "--out", report.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string scatter = io::read_file(report / "scatter_complexity.csv");
  std::istringstream in(scatter);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "method,dataset,utility,complexity");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
  EXPECT_EQ(io::read_file(report / "table.csv"), io::read_file(fs::path(study_) / "table.csv"));

  EXPECT_EQ(xaibench({"report", "--from", study_, "--metrics", study_ + "/design.json", "--out", report.string()}).code,
            cli::kDataError);
  EXPECT_EQ(xaibench({"complexity", "--model", model_, "--n", "2", "--method", "lime", "--out", cx.string()}).code,
            cli::kUsage);
}

TEST_F(CliTest, ExplainRecordsMethodDefaults) {
  const fs::path out = dir_->path / "explain";
  const auto r = xaibench({"explain", "--model", model_, "--n", "2", "--method", "smoothgrad", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = json::parse(io::read_file(out / "manifest.json"));
  const json& mc = m.at("config").at("method_config");
  EXPECT_EQ(mc.at("smoothgrad_samples"), 80);
  EXPECT_DOUBLE_EQ(mc.at("smoothgrad_sigma").get<double>(), 0.2);
  EXPECT_TRUE(fs::exists(out / "maps" / "smoothgrad" / "0.png"));
  EXPECT_TRUE(fs::exists(out / "maps" / "smoothgrad" / "1_overlay.png"));
  const auto map = io::read_file(out / "maps" / "smoothgrad" / "0.bin");
  EXPECT_FALSE(map.empty());
}
