#pragma once

#include <optional>
#include <span>
#include <vector>

#include "nfwpo/acrl.hpp"
#include "nfwpo/nn.hpp"

namespace nfwpo::fw {

using env::StateVec;

/// Candidate QPs base + delta for delta on a uniform decimal grid. Deltas are
/// held in tenths so membership and values never drift: delta(i) is
/// (min_tenths + i * step_tenths) / 10.
struct QpGrid {
  double base_qp = 0.0;
  int min_tenths = -100;
  int max_tenths = 100;
  int step_tenths = 1;

  static QpGrid standard(double base_qp) { return QpGrid{base_qp, -100, 100, 1}; }

  void validate() const;
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] double delta(std::size_t i) const;
  [[nodiscard]] double qp(std::size_t i) const { return base_qp + delta(i); }
  [[nodiscard]] std::vector<double> qps() const;
  [[nodiscard]] std::vector<double> deltas() const;
  /// Grid index of `qp` by decimal rounding, empty when off the grid.
  [[nodiscard]] std::optional<std::size_t> index_of(double qp) const;

  friend bool operator==(const QpGrid&, const QpGrid&) = default;
};

/// Ordered subset of a grid admitted by the rate critic.
struct FeasibleSet {
  QpGrid grid;
  std::vector<std::size_t> members;  // ascending grid indices, never empty
  double epsilon = 0.0;
  bool fallback = false;  // true when no grid point cleared the threshold

  [[nodiscard]] std::size_t size() const { return members.size(); }
  [[nodiscard]] double min() const { return grid.qp(members.front()); }
  [[nodiscard]] double max() const { return grid.qp(members.back()); }
  [[nodiscard]] double at(std::size_t k) const { return grid.qp(members[k]); }
  [[nodiscard]] std::vector<double> qps() const;
  [[nodiscard]] bool contains(double qp) const;
};

/// Keeps grid points whose predicted rate reward-to-go is >= epsilon. When
/// none qualifies, falls back to the single best-scoring point.
FeasibleSet feasible_set(const QpGrid& grid, std::span<const double> rate_values, double epsilon);

/// Predicted rate reward-to-go for every grid point of one state.
std::vector<double> rate_values(const nn::MlpNet& rate_critic, const StateVec& state, const QpGrid& grid);

FeasibleSet feasible_set(const nn::MlpNet& rate_critic, const StateVec& state, const QpGrid& grid,
                         double epsilon);

/// One feasible set per state, evaluated as a single batched forward pass.
std::vector<FeasibleSet> feasible_sets(const nn::MlpNet& rate_critic, std::span<const StateVec> states,
                                       std::span<const QpGrid> grids, double epsilon);

/// Nearest member to `action`; an equidistant pair resolves to the lower QP.
double project(double action, const FeasibleSet& fs);

/// Linear maximization of <c, grad> over the set: its largest member for a
/// positive gradient, its smallest for a negative one, `projected` when zero.
double fw_direction(double grad_qp, const FeasibleSet& fs, double projected);

/// projected + alpha * (direction - projected).
double reference_action(double projected, double direction, double alpha);

/// d critic / d delta for each (state, delta) pair.
std::vector<double> action_gradients(const nn::MlpNet& critic, std::span<const StateVec> states,
                                     std::span<const double> deltas);

/// One optimizer step on mean (actor(s) - target)^2 over the batch, with
/// targets in delta-QP units. Returns the loss before the step.
double actor_update(nn::MlpNet& actor, nn::AdamState& optimizer, double learning_rate,
                    std::span<const StateVec> states, std::span<const double> reference_deltas);

/// Gradient of the actor regression loss without stepping.
nn::GradRecord actor_loss_grad(const nn::MlpNet& actor, std::span<const StateVec> states,
                               std::span<const double> reference_deltas);

struct NfwpoConfig {
  double epsilon = -0.05;
  double alpha = 0.05;
  QpGrid grid;  // base_qp ignored; taken from each frame

  void validate() const;
};

/// Per-state intermediate values of one Frank-Wolfe actor step, all in
/// absolute QP except `reference_delta`.
struct ReferencePoint {
  double raw = 0.0;
  double projected = 0.0;
  double gradient = 0.0;
  double direction = 0.0;
  double reference = 0.0;
  double reference_delta = 0.0;
  bool fallback = false;
};

/// Feasible set, projection, direction and reference action for each state.
/// `base_qps` gives the base QP of the frame each state came from.
std::vector<ReferencePoint> reference_points(const nn::MlpNet& actor, const nn::MlpNet& distortion_critic,
                                             const nn::MlpNet& rate_critic, std::span<const StateVec> states,
                                             std::span<const double> base_qps, const NfwpoConfig& config);

/// Evaluation-time action: actor output projected onto the feasible set.
double act_greedy(const nn::MlpNet& actor, const nn::MlpNet& rate_critic, const StateVec& state,
                  const QpGrid& grid, double epsilon);

/// Base QP recovered from the state's base-QP feature.
double base_qp_of(const StateVec& state);

}  // namespace nfwpo::fw
