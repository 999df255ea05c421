#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nfwpo/cli.hpp"

namespace fs = std::filesystem;
using namespace nfwpo;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nfwpo_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "nfwpo");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

fs::path write_config(const fs::path& dir) {
  const auto path = dir / "config.json";
  std::ofstream(path) << R"({
    "train": {"episodes": 6, "updates_per_episode": 1, "batch_size": 8, "hidden": [8, 8], "n_ctus": 6,
              "grid": {"min_tenths": -30, "max_tenths": 30, "step_tenths": 5}},
    "frames": {"count": 3, "n_ctus": 6},
    "checkpoint_every": 2
  })";
  return path;
}

}  // namespace

TEST_CASE("cli: missing seed and bad values are config errors") {
  const auto dir = scratch("errors");
  const auto cfg = write_config(dir);
  CHECK(run({"gen-frames", "--config", cfg.string(), "--out", dir.string()}) == cli::kExitConfig);
  CHECK(run({"train", "--seed", "1", "--agent", "ppo", "--out", dir.string()}) == cli::kExitConfig);
  CHECK(run({"eval", "--seed", "1", "--out", (dir / "nothing").string()}) == cli::kExitConfig);
  CHECK(run({"frobnicate"}) == cli::kExitConfig);
  std::ofstream(dir / "broken.json") << "{";
  CHECK(run({"train", "--seed", "1", "--config", (dir / "broken.json").string()}) == cli::kExitConfig);
}

TEST_CASE("cli: frame generation is deterministic and keeps content across rate points") {
  const auto a = scratch("frames_a"), b = scratch("frames_b");
  const auto cfg = write_config(a);
  REQUIRE(run({"gen-frames", "--config", cfg.string(), "--seed", "7", "--out", a.string()}) == 0);
  REQUIRE(run({"gen-frames", "--config", cfg.string(), "--seed", "7", "--out", b.string()}) == 0);
  CHECK(slurp(a / "frames.json") == slurp(b / "frames.json"));
  CHECK(fs::exists(a / "frames.config.json"));

  const auto frames = env::load_frames((a / "frames.json").string());
  CHECK(frames.size() == 3 * 3 * 4);
  // regular frames at QP 22 and 27 share their content
  CHECK(frames[0].ctus == frames[3].ctus);
  CHECK(frames[0].qp_l == 22.0);
  CHECK(frames[3].qp_l == 27.0);
  // small and large layouts are complements
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 6; ++i) CHECK(frames[12 + k].ctus[i].roi != frames[24 + k].ctus[i].roi);
}

TEST_CASE("cli: empty frame set is valid") {
  const auto dir = scratch("empty");
  std::ofstream(dir / "config.json") << R"({"frames": {"count": 0}})";
  REQUIRE(run({"gen-frames", "--config", (dir / "config.json").string(), "--seed", "1", "--out", dir.string()}) == 0);
  CHECK(env::load_frames((dir / "frames.json").string()).empty());
}

TEST_CASE("cli: fixed-QP evaluation has zero deviation and consistent bits") {
  const auto dir = scratch("fixed");
  const auto cfg = write_config(dir);
  REQUIRE(run({"gen-frames", "--config", cfg.string(), "--seed", "3", "--out", dir.string()}) == 0);
  REQUIRE(run({"eval", "--config", cfg.string(), "--seed", "3", "--agent", "fixed-qp", "--out", dir.string()}) == 0);
  std::ifstream in(dir / "fixed-qp" / "eval.csv");
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    REQUIRE(f.size() == 13);
    CHECK(std::stod(f[6]) == 0.0);
    CHECK(std::stod(f[5]) == doctest::Approx(std::stod(f[4])).epsilon(1e-9));
  }
  CHECK(rows == 36);
}

TEST_CASE("cli: training, evaluation and reports rerun byte-identically") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  const auto cfg = write_config(a);
  for (const auto& dir : {a, b}) {
    REQUIRE(run({"gen-frames", "--config", cfg.string(), "--seed", "11", "--out", dir.string()}) == 0);
    REQUIRE(run({"train", "--config", cfg.string(), "--seed", "11", "--agent", "nfwpo", "--out", dir.string()}) == 0);
    REQUIRE(run({"eval", "--config", cfg.string(), "--seed", "11", "--agent", "nfwpo", "--out", dir.string()}) == 0);
    REQUIRE(run({"eval", "--config", cfg.string(), "--seed", "11", "--agent", "fixed-qp", "--out", dir.string()}) ==
            0);
    REQUIRE(run({"report", "--config", cfg.string(), "--seed", "11", "--out", dir.string()}) == 0);
  }
  for (const char* f : {"nfwpo/checkpoint.bin", "nfwpo/train.csv", "nfwpo/eval.csv", "report.json", "report.txt",
                        "heatmap.csv"}) {
    CAPTURE(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
}

TEST_CASE("cli: interrupted and resumed training equals an uninterrupted run") {
  const auto a = scratch("resume_a"), b = scratch("resume_b");
  const auto cfg = write_config(a);
  REQUIRE(run({"train", "--config", cfg.string(), "--seed", "4", "--agent", "dual", "--out", a.string()}) == 0);
  REQUIRE(run({"train", "--config", cfg.string(), "--seed", "4", "--agent", "dual", "--out", b.string(),
               "--stop-after", "3"}) == 0);
  CHECK(slurp(a / "dual/checkpoint.bin") != slurp(b / "dual/checkpoint.bin"));
  REQUIRE(run({"train", "--config", cfg.string(), "--seed", "4", "--agent", "dual", "--out", b.string(),
               "--resume"}) == 0);
  CHECK(slurp(a / "dual/checkpoint.bin") == slurp(b / "dual/checkpoint.bin"));
  CHECK(slurp(a / "dual/train.csv") == slurp(b / "dual/train.csv"));

  CHECK(run({"train", "--config", cfg.string(), "--seed", "5", "--agent", "dual", "--out", b.string(),
             "--resume"}) == cli::kExitConfig);
}

TEST_CASE("cli: self comparison gives zero BD-rate") {
  const auto dir = scratch("self");
  std::ofstream(dir / "config.json") << R"({"frames": {"count": 2, "n_ctus": 6}, "compare_agents": ["fixed-qp"]})";
  std::string text;
  REQUIRE(run({"compare", "--config", (dir / "config.json").string(), "--seed", "2", "--out", dir.string()}, &text) ==
          0);
  const auto rep = slurp(dir / "report.json");
  CHECK(rep.find("\"bd_rate_pct\": 0.0") != std::string::npos);
  CHECK(text.find("fixed-qp") != std::string::npos);
}
