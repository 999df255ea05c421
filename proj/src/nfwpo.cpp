#include "nfwpo/nfwpo.hpp"

#include <algorithm>
#include <cmath>

#include "nfwpo/errors.hpp"

namespace nfwpo::fw {

void QpGrid::validate() const {
  if (step_tenths <= 0) throw ConfigError("QP grid step must be positive");
  if (max_tenths < min_tenths) throw ConfigError("QP grid range is empty");
  if ((max_tenths - min_tenths) % step_tenths != 0)
    throw ConfigError("QP grid range is not a whole number of steps");
  if (!std::isfinite(base_qp)) throw ConfigError("QP grid base is not finite");
}

std::size_t QpGrid::size() const {
  return static_cast<std::size_t>((max_tenths - min_tenths) / step_tenths + 1);
}

double QpGrid::delta(std::size_t i) const {
  return static_cast<double>(min_tenths + static_cast<int>(i) * step_tenths) / 10.0;
}

std::vector<double> QpGrid::qps() const {
  std::vector<double> v(size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = qp(i);
  return v;
}

std::vector<double> QpGrid::deltas() const {
  std::vector<double> v(size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = delta(i);
  return v;
}

std::optional<std::size_t> QpGrid::index_of(double value) const {
  const double tenths = (value - base_qp) * 10.0;
  const double rounded = std::round(tenths);
  if (!std::isfinite(tenths) || std::abs(tenths - rounded) > 1e-6) return std::nullopt;
  const long offset = static_cast<long>(rounded) - min_tenths;
  if (offset < 0 || offset % step_tenths != 0) return std::nullopt;
  const auto i = static_cast<std::size_t>(offset / step_tenths);
  if (i >= size()) return std::nullopt;
  return i;
}

std::vector<double> FeasibleSet::qps() const {
  std::vector<double> v;
  v.reserve(members.size());
  for (auto m : members) v.push_back(grid.qp(m));
  return v;
}

bool FeasibleSet::contains(double value) const {
  const auto i = grid.index_of(value);
  return i && std::binary_search(members.begin(), members.end(), *i);
}

FeasibleSet feasible_set(const QpGrid& grid, std::span<const double> rate_values, double epsilon) {
  grid.validate();
  if (rate_values.size() != grid.size()) throw ShapeError("one rate value per grid point expected");
  FeasibleSet fs;
  fs.grid = grid;
  fs.epsilon = epsilon;
  std::size_t best = 0;
  for (std::size_t i = 0; i < rate_values.size(); ++i) {
    const double q = rate_values[i];
    if (!std::isfinite(q)) throw NumericError("rate critic produced a non-finite value");
    if (q >= epsilon) fs.members.push_back(i);
    if (q > rate_values[best]) best = i;
  }
  if (fs.members.empty()) {
    fs.members.push_back(best);
    fs.fallback = true;
  }
  return fs;
}

namespace {

Eigen::MatrixXd grid_inputs(std::span<const StateVec> states, std::span<const QpGrid> grids) {
  std::size_t cols = 0;
  for (const auto& g : grids) cols += g.size();
  Eigen::MatrixXd x(rl::kCriticInputSize, static_cast<Eigen::Index>(cols));
  Eigen::Index c = 0;
  for (std::size_t s = 0; s < states.size(); ++s) {
    const auto& g = grids[s];
    for (std::size_t i = 0; i < g.size(); ++i, ++c) {
      for (std::size_t k = 0; k < env::kStateSize; ++k) x(static_cast<Eigen::Index>(k), c) = states[s][k];
      x(rl::kCriticInputSize - 1, c) = g.delta(i) * rl::kActionInputScale;
    }
  }
  return x;
}

}  // namespace

std::vector<double> rate_values(const nn::MlpNet& rate_critic, const StateVec& state, const QpGrid& grid) {
  grid.validate();
  const StateVec states[1] = {state};
  const QpGrid grids[1] = {grid};
  const Eigen::MatrixXd q = nn::forward_batch(rate_critic, grid_inputs(states, grids));
  return {q.data(), q.data() + q.size()};
}

FeasibleSet feasible_set(const nn::MlpNet& rate_critic, const StateVec& state, const QpGrid& grid,
                         double epsilon) {
  const auto values = rate_values(rate_critic, state, grid);
  return feasible_set(grid, values, epsilon);
}

std::vector<FeasibleSet> feasible_sets(const nn::MlpNet& rate_critic, std::span<const StateVec> states,
                                       std::span<const QpGrid> grids, double epsilon) {
  if (states.size() != grids.size()) throw ShapeError("one grid per state expected");
  for (const auto& g : grids) g.validate();
  const Eigen::MatrixXd q = nn::forward_batch(rate_critic, grid_inputs(states, grids));
  std::vector<FeasibleSet> out;
  out.reserve(states.size());
  const double* p = q.data();
  for (const auto& g : grids) {
    out.push_back(feasible_set(g, std::span<const double>(p, g.size()), epsilon));
    p += g.size();
  }
  return out;
}

double project(double action, const FeasibleSet& fs) {
  if (fs.members.empty()) throw ConfigError("projection onto an empty feasible set");
  if (!std::isfinite(action)) throw NumericError("cannot project a non-finite action");
  const auto it = std::partition_point(fs.members.begin(), fs.members.end(),
                                       [&](std::size_t m) { return fs.grid.qp(m) < action; });
  if (it == fs.members.begin()) return fs.grid.qp(*it);
  if (it == fs.members.end()) return fs.grid.qp(fs.members.back());
  const double above = fs.grid.qp(*it);
  const double below = fs.grid.qp(*std::prev(it));
  return (action - below <= above - action) ? below : above;
}

double fw_direction(double grad_qp, const FeasibleSet& fs, double projected) {
  if (fs.members.empty()) throw ConfigError("direction over an empty feasible set");
  if (!std::isfinite(grad_qp)) throw NumericError("non-finite critic gradient");
  if (grad_qp > 0.0) return fs.max();
  if (grad_qp < 0.0) return fs.min();
  return projected;
}

double reference_action(double projected, double direction, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("Frank-Wolfe step must lie in (0, 1]");
  return projected + alpha * (direction - projected);
}

std::vector<double> action_gradients(const nn::MlpNet& critic, std::span<const StateVec> states,
                                     std::span<const double> deltas) {
  const auto inputs = rl::critic_inputs(states, deltas);
  const auto trace = nn::forward_trace(critic, inputs);
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, inputs.cols());
  const Eigen::MatrixXd g = nn::backward(critic, trace, ones, nullptr);
  std::vector<double> out(states.size());
  for (std::size_t c = 0; c < out.size(); ++c)
    out[c] = g(rl::kCriticInputSize - 1, static_cast<Eigen::Index>(c)) * rl::kActionInputScale;
  return out;
}

nn::GradRecord actor_loss_grad(const nn::MlpNet& actor, std::span<const StateVec> states,
                               std::span<const double> reference_deltas) {
  if (states.empty()) throw ConfigError("actor update needs a non-empty batch");
  if (states.size() != reference_deltas.size()) throw ShapeError("states and reference actions differ in count");
  const auto trace = nn::forward_trace(actor, rl::state_matrix(states));
  const auto batch = static_cast<double>(states.size());
  Eigen::MatrixXd grad(1, trace.output().cols());
  double loss = 0.0;
  for (Eigen::Index c = 0; c < grad.cols(); ++c) {
    const double residual = trace.output()(0, c) - reference_deltas[static_cast<std::size_t>(c)];
    loss += residual * residual;
    grad(0, c) = 2.0 * residual / batch;
  }
  auto grads = nn::GradRecord::zeros_like(actor);
  nn::backward(actor, trace, grad, &grads);
  grads.loss = loss / batch;
  return grads;
}

double actor_update(nn::MlpNet& actor, nn::AdamState& optimizer, double learning_rate,
                    std::span<const StateVec> states, std::span<const double> reference_deltas) {
  const auto grads = actor_loss_grad(actor, states, reference_deltas);
  if (!grads.all_finite()) throw NumericError("non-finite actor gradient");
  nn::optimizer_step(actor, grads, optimizer, learning_rate);
  return grads.loss;
}

void NfwpoConfig::validate() const {
  if (!(epsilon < 0.0)) throw ConfigError("rate threshold epsilon must be negative");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("Frank-Wolfe step alpha must lie in (0, 1]");
  grid.validate();
}

std::vector<ReferencePoint> reference_points(const nn::MlpNet& actor, const nn::MlpNet& distortion_critic,
                                             const nn::MlpNet& rate_critic, std::span<const StateVec> states,
                                             std::span<const double> base_qps, const NfwpoConfig& config) {
  if (states.size() != base_qps.size()) throw ShapeError("one base QP per state expected");
  const auto n = states.size();
  const Eigen::MatrixXd raw = nn::forward_batch(actor, rl::state_matrix(states));

  std::vector<QpGrid> grids(n, config.grid);
  for (std::size_t s = 0; s < n; ++s) grids[s].base_qp = base_qps[s];
  const auto sets = feasible_sets(rate_critic, states, grids, config.epsilon);

  std::vector<ReferencePoint> points(n);
  std::vector<double> projected_deltas(n);
  for (std::size_t s = 0; s < n; ++s) {
    auto& p = points[s];
    p.raw = base_qps[s] + raw(0, static_cast<Eigen::Index>(s));
    p.projected = project(p.raw, sets[s]);
    p.fallback = sets[s].fallback;
    projected_deltas[s] = p.projected - base_qps[s];
  }
  // Gradient at the projected action; the projection itself is never differentiated.
  const auto grads = action_gradients(distortion_critic, states, projected_deltas);
  for (std::size_t s = 0; s < n; ++s) {
    auto& p = points[s];
    p.gradient = grads[s];
    p.direction = fw_direction(p.gradient, sets[s], p.projected);
    p.reference = reference_action(p.projected, p.direction, config.alpha);
    p.reference_delta = p.reference - base_qps[s];
  }
  return points;
}

double act_greedy(const nn::MlpNet& actor, const nn::MlpNet& rate_critic, const StateVec& state,
                  const QpGrid& grid, double epsilon) {
  const auto fs = feasible_set(rate_critic, state, grid, epsilon);
  return project(grid.base_qp + rl::actor_delta(actor, state), fs);
}

double base_qp_of(const StateVec& state) { return std::round(state[6] * env::kMaxHevcQp * 10.0) / 10.0; }

}  // namespace nfwpo::fw
