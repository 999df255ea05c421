#include "nfwpo/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "nfwpo/acrl.hpp"
#include "nfwpo/errors.hpp"

namespace nfwpo::baselines {

double combined_reward(double r_distortion, double r_rate, double lambda) { return r_distortion + lambda * r_rate; }

CriticTag dual_critic_select(double episode_deviation, double tolerance) {
  return std::abs(episode_deviation) <= tolerance ? CriticTag::Distortion : CriticTag::Rate;
}

nn::GradRecord policy_gradient(const nn::MlpNet& actor, std::span<const StateVec> states,
                               std::span<const double> dq_da, std::span<const double> gates) {
  if (states.empty()) throw ConfigError("policy gradient needs a non-empty batch");
  if (dq_da.size() != states.size() || gates.size() != states.size())
    throw ShapeError("policy gradient inputs differ in length");
  const auto trace = nn::forward_trace(actor, rl::state_matrix(states));
  const auto batch = static_cast<double>(states.size());
  Eigen::MatrixXd grad(1, static_cast<Eigen::Index>(states.size()));
  for (std::size_t c = 0; c < states.size(); ++c)
    grad(0, static_cast<Eigen::Index>(c)) = -dq_da[c] * gates[c] / batch;
  auto grads = nn::GradRecord::zeros_like(actor);
  nn::backward(actor, trace, grad, &grads);
  return grads;
}

ProjectionStep projection_layer_gradient(const nn::MlpNet& actor, const nn::MlpNet& distortion_critic,
                                         std::span<const StateVec> states,
                                         std::span<const fw::FeasibleSet> feasible) {
  if (feasible.size() != states.size()) throw ShapeError("one feasible set per state expected");
  const Eigen::MatrixXd raw = nn::forward_batch(actor, rl::state_matrix(states));
  ProjectionStep step;
  std::vector<double> deltas(states.size());
  for (std::size_t s = 0; s < states.size(); ++s) {
    const auto& fs = feasible[s];
    const double base = fs.grid.base_qp;
    const double a = base + raw(0, static_cast<Eigen::Index>(s));
    const double lo = fs.min(), hi = fs.max();
    const double clamped = std::clamp(a, lo, hi);
    step.projected.push_back(clamped);
    step.gates.push_back((a > lo && a < hi) ? 1.0 : 0.0);
    deltas[s] = clamped - base;
  }
  const auto dq = fw::action_gradients(distortion_critic, states, deltas);
  step.grads = policy_gradient(actor, states, dq, step.gates);
  return step;
}

env::EpisodeOutcome fixed_qp_allocate(const env::Frame& frame, double qp) {
  return env::run_episode(frame, [qp](const env::EnvState&) { return qp; });
}

}  // namespace nfwpo::baselines
