#pragma once

#include <span>
#include <vector>

#include "nfwpo/codec_env.hpp"
#include "nfwpo/nfwpo.hpp"
#include "nfwpo/nn.hpp"

namespace nfwpo::baselines {

using env::StateVec;

/// r_D + lambda * r_R.
double combined_reward(double r_distortion, double r_rate, double lambda);

enum class CriticTag { Distortion, Rate };

/// Distortion critic when the episode met the rate tolerance (inclusive),
/// rate critic otherwise.
CriticTag dual_critic_select(double episode_deviation, double tolerance);

/// Deterministic policy gradient of -mean(gate_i * Q_i) given dQ/da per
/// sample; samples with a zero gate contribute nothing.
nn::GradRecord policy_gradient(const nn::MlpNet& actor, std::span<const StateVec> states,
                               std::span<const double> dq_da, std::span<const double> gates);

struct ProjectionStep {
  std::vector<double> projected;  // absolute QP after the clamp
  std::vector<double> gates;      // 1 strictly inside the interval, else 0
  nn::GradRecord grads;
};

/// Actor gradient with a projection layer on the actor output: the action is
/// clamped to [min, max] of its feasible set and the critic gradient flows
/// back through the clamp.
ProjectionStep projection_layer_gradient(const nn::MlpNet& actor, const nn::MlpNet& distortion_critic,
                                         std::span<const StateVec> states,
                                         std::span<const fw::FeasibleSet> feasible);

/// Same QP for every unit; the anchor of the comparisons.
env::EpisodeOutcome fixed_qp_allocate(const env::Frame& frame, double qp);

}  // namespace nfwpo::baselines
