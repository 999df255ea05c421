#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nfwpo/codec_env.hpp"
#include "nfwpo/metrics.hpp"
#include "nfwpo/trainer.hpp"

namespace nfwpo::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Held-out evaluation set layout.
struct FrameSetSpec {
  std::size_t count = 100;  // frames per (ROI setting, rate point)
  int n_ctus = env::kDefaultCtusPerFrame;
  std::vector<env::RoiPolicy> roi_policies{env::RoiPolicy::Regular, env::RoiPolicy::Small, env::RoiPolicy::Large};
};

struct RunConfig {
  std::string command;
  train::AgentKind agent = train::AgentKind::Nfwpo;
  std::optional<std::uint64_t> seed;
  fs::path out_dir = "out";
  bool resume = false;
  std::optional<std::uint64_t> stop_after;  // stop (and checkpoint) once this many episodes are done

  train::TrainConfig train;
  FrameSetSpec frames;
  std::optional<fs::path> frames_path;  // default: <out>/frames.json
  /// One agent for all rate points, or one agent per rate point.
  bool shared_agent = true;
  std::uint64_t checkpoint_every = 100;
  std::vector<train::AgentKind> compare_agents{train::AgentKind::FixedQp, train::AgentKind::SingleCritic,
                                               train::AgentKind::DualCritic, train::AgentKind::ProjectionDdpg,
                                               train::AgentKind::Nfwpo};
  metrics::BdVariant bd_variant = metrics::BdVariant::CubicFit;
  double deadband = metrics::kDefaultDeadband;

  std::uint64_t require_seed() const;
  [[nodiscard]] fs::path frame_set_path() const;
  [[nodiscard]] fs::path agent_dir(train::AgentKind kind) const;
};

/// Reads the structured config file; every field is optional.
RunConfig load_run_config(const fs::path& path);
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& config);

/// Training groups: either all rate points together or one per rate point.
std::vector<std::vector<double>> training_groups(const RunConfig& config);
std::string checkpoint_name(const RunConfig& config, const std::vector<double>& group);

/// Writes the held-out frame set. Frame k shares its content across rate
/// points so per-frame R-D curves can be formed.
fs::path cmd_gen_frames(const RunConfig& config);
std::vector<env::Frame> make_eval_frames(const FrameSetSpec& spec, const std::vector<double>& rate_points,
                                         std::uint64_t seed);

/// Trains `config.agent`, writing checkpoint bundles and train CSV logs under
/// the agent directory. Returns false when stopped early by `stop_after`.
bool cmd_train(const RunConfig& config, std::ostream& status);

/// Rolls out the greedy policy over the frame set and writes eval.csv.
fs::path cmd_eval(const RunConfig& config);
/// Evaluates every configured agent (training missing ones first) and reports.
void cmd_compare(const RunConfig& config, std::ostream& status);
/// Aggregates every eval.csv under the output directory.
metrics::RunReport cmd_report(const RunConfig& config);

/// Loads the trained policy stored in the agent directory for one rate point.
train::Policy load_policy(const RunConfig& config, train::AgentKind kind, double qp_l);

/// Parses flags and dispatches. Returns the process exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace nfwpo::cli
