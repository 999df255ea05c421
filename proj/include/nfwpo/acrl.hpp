#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nfwpo/codec_env.hpp"
#include "nfwpo/nn.hpp"

namespace nfwpo::rl {

inline constexpr double kDeltaQpMin = -10.0;
inline constexpr double kDeltaQpMax = 10.0;
// Critics see the delta QP divided by its range so every input is O(1).
inline constexpr double kActionInputScale = 0.1;
inline constexpr int kCriticInputSize = static_cast<int>(env::kStateSize) + 1;

using env::StateVec;

struct Transition {
  StateVec state{};
  double action = 0.0;  // delta QP
  double r_distortion = 0.0;
  double r_rate = 0.0;
  std::optional<StateVec> next_state;
  bool done = false;
  std::uint64_t episode = 0;
  std::uint32_t step = 0;
  // |sum R - R_f| / R_f of the episode the transition belongs to.
  double episode_deviation = 0.0;

  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Rewards of up to n consecutive same-episode steps plus the state to
/// bootstrap from (absent when the window reaches the end of the episode).
struct NStepWindow {
  std::vector<const Transition*> steps;
  std::optional<StateVec> bootstrap_state;
};

/// FIFO ring of transitions with seeded uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  void push_episode(const std::vector<Transition>& episode);

  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  /// Logical index: 0 is the oldest stored transition.
  [[nodiscard]] const Transition& at(std::size_t i) const;

  /// `n` consecutive transitions starting at logical index `i`, stopping at
  /// the end of its episode.
  [[nodiscard]] NStepWindow window(std::size_t i, int n) const;

  friend bool operator==(const ReplayBuffer&, const ReplayBuffer&);

  void write(io::BinaryWriter& out) const;
  static ReplayBuffer read(io::BinaryReader& in);

 private:
  std::vector<Transition> data_;
  std::size_t capacity_;
  std::size_t head_ = 0;  // physical slot of the oldest item
  std::size_t size_ = 0;
};

/// Uniform sample without replacement; empty when the buffer holds fewer
/// than `batch_size` transitions.
std::optional<std::vector<std::size_t>> sample_batch(const ReplayBuffer& buffer, std::size_t batch_size,
                                                     std::mt19937_64& rng);

/// Gaussian exploration noise whose scale decays geometrically per episode.
struct NoiseProcess {
  double sigma = 2.0;
  double decay = 0.995;

  [[nodiscard]] double scale(std::uint64_t episode) const;
  /// Adds one noise draw and clips into the delta-QP range.
  [[nodiscard]] double perturb(double action, std::uint64_t episode, std::mt19937_64& rng) const;
};

double clip_delta(double delta);

Eigen::VectorXd critic_input(const StateVec& state, double delta);
Eigen::MatrixXd state_matrix(std::span<const StateVec> states);
/// Columns are [state; delta * scale] for each pair.
Eigen::MatrixXd critic_inputs(std::span<const StateVec> states, std::span<const double> deltas);

/// Actor output for one state (delta QP).
double actor_delta(const nn::MlpNet& actor, const StateVec& state);

/// One episode with actions clip(actor(s) + noise).
std::vector<Transition> rollout(env::CodecEnv& env, const nn::MlpNet& actor, const NoiseProcess& noise,
                                std::mt19937_64& rng, std::uint64_t episode);

enum class RewardChannel { Distortion, Rate, Combined };

/// Which reward a critic regresses on. Distortion rewards are multiplied by
/// `distortion_scale` before use.
struct RewardSpec {
  RewardChannel channel = RewardChannel::Distortion;
  double distortion_scale = 1.0;
  double lambda = 0.0;

  [[nodiscard]] double value(const Transition& t) const;
};

/// sum_k gamma^k r_k (+ gamma^m * bootstrap when present).
double n_step_target(std::span<const double> rewards, double gamma, std::optional<double> bootstrap_value);

/// Targets for buffer items `indices` using target actor and critic for the
/// bootstrap term.
std::vector<double> n_step_targets(const ReplayBuffer& buffer, std::span<const std::size_t> indices, int n,
                                   double gamma, const nn::MlpNet& target_critic, const nn::MlpNet& target_actor,
                                   const RewardSpec& reward);

/// One optimizer step on mean squared error; returns the loss before the step.
double critic_update(nn::MlpNet& critic, nn::AdamState& optimizer, double learning_rate,
                     const Eigen::MatrixXd& inputs, std::span<const double> targets);

}  // namespace nfwpo::rl
