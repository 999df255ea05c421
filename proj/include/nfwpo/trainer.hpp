#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nfwpo/acrl.hpp"
#include "nfwpo/codec_env.hpp"
#include "nfwpo/nfwpo.hpp"
#include "nfwpo/nn.hpp"

namespace nfwpo::train {

enum class AgentKind { Nfwpo, SingleCritic, DualCritic, ProjectionDdpg, FixedQp };

AgentKind parse_agent_kind(const std::string& name);
std::string to_string(AgentKind kind);

/// Every knob of a training run. Defaults follow the reference settings:
/// alpha 0.05, w 10, learning rate 1e-3, 3-step targets, epsilon -0.05.
struct TrainConfig {
  AgentKind agent = AgentKind::Nfwpo;
  std::uint64_t episodes = 1000;
  int updates_per_episode = 1;
  std::size_t batch_size = 64;
  std::size_t buffer_capacity = 100000;
  double gamma = 0.99;
  int n_step = 3;
  double tau = 0.005;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  std::vector<int> hidden{128, 128};
  double noise_sigma = 2.0;
  double noise_decay = 0.995;
  double distortion_reward_scale = 1e-3;
  double roi_weight = env::kDefaultRoiWeight;
  int n_ctus = env::kDefaultCtusPerFrame;
  std::vector<double> rate_points{22, 27, 32, 37};
  bool integer_qp = false;
  fw::NfwpoConfig nfwpo;
  double lambda = 100.0;         // single-critic mixing weight
  double dual_tolerance = 0.05;  // dual-critic rate satisfaction band

  void validate() const;
};

std::string config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& text);

struct AgentNets {
  nn::MlpNet actor, actor_target;
  nn::MlpNet critic_d, critic_d_target;  // single-critic agents keep their combined critic here
  nn::MlpNet critic_r, critic_r_target;
  nn::AdamState actor_opt, critic_d_opt, critic_r_opt;

  static AgentNets create(const TrainConfig& config, std::mt19937_64& rng);
  friend bool operator==(const AgentNets&, const AgentNets&) = default;
};

/// Builds the frame for a training episode from the trainer's frame stream.
using FrameFactory = std::function<env::Frame(std::mt19937_64& rng, std::uint64_t episode)>;

/// Cycles through the configured rate points, drawing fresh content and a
/// uniform ROI layout each episode.
FrameFactory default_frame_factory(const TrainConfig& config);

struct UpdateStats {
  bool updated = false;
  double critic_d_loss = 0.0;
  double critic_r_loss = 0.0;
  double actor_loss = 0.0;
};

/// CSV sink for per-step training rows.
class TrainLog {
 public:
  explicit TrainLog(std::ostream& out, bool write_header = true);
  void episode(const std::vector<rl::Transition>& steps, double qp_l, const UpdateStats& stats);
  static const char* header();

 private:
  std::ostream& out_;
};

/// Replay-based actor-critic training for every agent kind. One episode is
/// rollout, store, then `updates_per_episode` rounds of critic and actor
/// updates followed by soft target updates.
class Trainer {
 public:
  Trainer(TrainConfig config, std::uint64_t seed, FrameFactory factory = {});

  UpdateStats run_episode(TrainLog* log = nullptr);
  /// Runs episodes until `episodes_done() == until` (or the config total).
  void run(std::optional<std::uint64_t> until = std::nullopt, TrainLog* log = nullptr,
           const std::function<void(const Trainer&)>& after_episode = {});
  /// One round of critic + actor updates; not-ready buffers leave everything unchanged.
  UpdateStats update_round();

  [[nodiscard]] std::uint64_t episodes_done() const { return episodes_done_; }
  [[nodiscard]] const TrainConfig& config() const { return config_; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] const AgentNets& nets() const { return nets_; }
  AgentNets& nets() { return nets_; }
  [[nodiscard]] const rl::ReplayBuffer& buffer() const { return buffer_; }
  [[nodiscard]] double last_episode_deviation() const { return last_deviation_; }

  /// Full training state: networks, optimizers, replay, RNG streams.
  void save(std::ostream& out, std::uint64_t log_bytes = 0) const;
  /// Restores a bundle. `log_bytes` receives the training-log size recorded
  /// with it, so a caller can drop rows written after the checkpoint.
  static Trainer load(std::istream& in, FrameFactory factory = {}, std::uint64_t* log_bytes = nullptr);

 private:
  TrainConfig config_;
  std::uint64_t seed_;
  FrameFactory factory_;
  AgentNets nets_;
  rl::ReplayBuffer buffer_;
  std::mt19937_64 frame_rng_, noise_rng_, sample_rng_;
  std::uint64_t episodes_done_ = 0;
  double last_deviation_ = 0.0;
};

/// Trains an NFWPO agent.
Trainer train(TrainConfig config, std::uint64_t seed, FrameFactory factory = {}, TrainLog* log = nullptr);
Trainer train_single_critic(TrainConfig config, std::uint64_t seed, FrameFactory factory = {},
                            TrainLog* log = nullptr);
Trainer train_dual_critic(TrainConfig config, std::uint64_t seed, FrameFactory factory = {},
                          TrainLog* log = nullptr);
Trainer train_projection_ddpg(TrainConfig config, std::uint64_t seed, FrameFactory factory = {},
                              TrainLog* log = nullptr);

/// A trained (or trivial) agent used at evaluation time, noise-free.
struct Policy {
  AgentKind kind = AgentKind::FixedQp;
  TrainConfig config;
  std::optional<AgentNets> nets;

  static Policy fixed_qp();
  static Policy from_trainer(const Trainer& trainer);

  /// Raw actor QP (before any projection) and the QP actually coded.
  struct Decision {
    double raw = 0.0;
    double qp = 0.0;
  };
  [[nodiscard]] Decision decide(const env::EnvState& state, const env::Frame& frame) const;
};

struct EvalEpisode {
  env::EpisodeOutcome outcome;
  std::vector<double> raw_qps;
};

EvalEpisode evaluate_frame(const Policy& policy, const env::Frame& frame);

}  // namespace nfwpo::train
