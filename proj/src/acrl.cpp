#include "nfwpo/acrl.hpp"

#include <algorithm>
#include <cmath>
#include <ranges>

#include "nfwpo/binary_io.hpp"
#include "nfwpo/errors.hpp"

namespace nfwpo::rl {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
  data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (!(t.action >= kDeltaQpMin && t.action <= kDeltaQpMax))
    throw ConfigError("transition action outside the delta-QP range");
  if (!std::isfinite(t.r_distortion) || !std::isfinite(t.r_rate))
    throw NumericError("transition reward is not finite");
  if (size_ < capacity_) {
    data_.push_back(std::move(t));
    ++size_;
  } else {
    data_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
}

void ReplayBuffer::push_episode(const std::vector<Transition>& episode) {
  for (const auto& t : episode) push(t);
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("replay index out of range");
  return data_[(head_ + i) % capacity_];
}

NStepWindow ReplayBuffer::window(std::size_t i, int n) const {
  if (n < 1) throw ConfigError("n-step horizon must be at least 1");
  NStepWindow w;
  const auto& first = at(i);
  for (int k = 0; k < n && i + k < size_; ++k) {
    const auto& t = at(i + k);
    if (t.episode != first.episode || t.step != first.step + static_cast<std::uint32_t>(k)) break;
    w.steps.push_back(&t);
    if (t.done) break;
  }
  const auto* last = w.steps.back();
  if (!last->done) w.bootstrap_state = last->next_state;
  return w;
}

bool operator==(const ReplayBuffer& a, const ReplayBuffer& b) {
  if (a.capacity_ != b.capacity_ || a.size_ != b.size_) return false;
  for (std::size_t i = 0; i < a.size_; ++i)
    if (!(a.at(i) == b.at(i))) return false;
  return true;
}

namespace {

void write_state(io::BinaryWriter& out, const StateVec& s) {
  for (double v : s) out.f64(v);
}

StateVec read_state(io::BinaryReader& in) {
  StateVec s{};
  for (auto& v : s) v = in.f64();
  return s;
}

}  // namespace

void ReplayBuffer::write(io::BinaryWriter& out) const {
  out.str("replay/1");
  out.u64(capacity_);
  out.u64(size_);
  for (std::size_t i = 0; i < size_; ++i) {
    const auto& t = at(i);
    write_state(out, t.state);
    out.f64(t.action);
    out.f64(t.r_distortion);
    out.f64(t.r_rate);
    out.u8(t.next_state ? 1 : 0);
    if (t.next_state) write_state(out, *t.next_state);
    out.u8(t.done ? 1 : 0);
    out.u64(t.episode);
    out.u32(t.step);
    out.f64(t.episode_deviation);
  }
}

ReplayBuffer ReplayBuffer::read(io::BinaryReader& in) {
  in.expect_tag("replay/1");
  const auto capacity = in.u64();
  const auto size = in.u64();
  if (size > capacity || capacity > (std::uint64_t{1} << 32)) throw FormatError("replay buffer header corrupt");
  ReplayBuffer buf(capacity);
  for (std::uint64_t i = 0; i < size; ++i) {
    Transition t;
    t.state = read_state(in);
    t.action = in.f64();
    t.r_distortion = in.f64();
    t.r_rate = in.f64();
    if (in.u8()) t.next_state = read_state(in);
    t.done = in.u8() != 0;
    t.episode = in.u64();
    t.step = in.u32();
    t.episode_deviation = in.f64();
    buf.push(std::move(t));
  }
  return buf;
}

std::optional<std::vector<std::size_t>> sample_batch(const ReplayBuffer& buffer, std::size_t batch_size,
                                                     std::mt19937_64& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (buffer.size() < batch_size) return std::nullopt;
  std::vector<std::size_t> out(batch_size);
  auto population = std::views::iota(std::size_t{0}, buffer.size());
  std::ranges::sample(population, out.begin(), static_cast<std::ptrdiff_t>(batch_size), rng);
  return out;
}

double NoiseProcess::scale(std::uint64_t episode) const {
  return sigma * std::pow(decay, static_cast<double>(episode));
}

double NoiseProcess::perturb(double action, std::uint64_t episode, std::mt19937_64& rng) const {
  const double s = scale(episode);
  if (s <= 0.0) return clip_delta(action);
  // Fresh distribution per draw: no cached variate survives between calls,
  // so the engine state alone determines the stream.
  std::normal_distribution<double> gauss(0.0, s);
  return clip_delta(action + gauss(rng));
}

double clip_delta(double delta) { return std::clamp(delta, kDeltaQpMin, kDeltaQpMax); }

Eigen::VectorXd critic_input(const StateVec& state, double delta) {
  Eigen::VectorXd x(kCriticInputSize);
  for (std::size_t k = 0; k < env::kStateSize; ++k) x[static_cast<Eigen::Index>(k)] = state[k];
  x[kCriticInputSize - 1] = delta * kActionInputScale;
  return x;
}

Eigen::MatrixXd state_matrix(std::span<const StateVec> states) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(env::kStateSize), static_cast<Eigen::Index>(states.size()));
  for (std::size_t c = 0; c < states.size(); ++c)
    for (std::size_t k = 0; k < env::kStateSize; ++k)
      m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = states[c][k];
  return m;
}

Eigen::MatrixXd critic_inputs(std::span<const StateVec> states, std::span<const double> deltas) {
  if (states.size() != deltas.size()) throw ShapeError("states and actions differ in count");
  Eigen::MatrixXd m(kCriticInputSize, static_cast<Eigen::Index>(states.size()));
  for (std::size_t c = 0; c < states.size(); ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    for (std::size_t k = 0; k < env::kStateSize; ++k) m(static_cast<Eigen::Index>(k), col) = states[c][k];
    m(kCriticInputSize - 1, col) = deltas[c] * kActionInputScale;
  }
  return m;
}

double actor_delta(const nn::MlpNet& actor, const StateVec& state) {
  const Eigen::Map<const Eigen::VectorXd> x(state.data(), static_cast<Eigen::Index>(state.size()));
  return nn::forward(actor, x)[0];
}

std::vector<Transition> rollout(env::CodecEnv& env, const nn::MlpNet& actor, const NoiseProcess& noise,
                                std::mt19937_64& rng, std::uint64_t episode) {
  if (actor.input_size() != static_cast<int>(env::kStateSize))
    throw ShapeError("actor input size does not match the state size");
  std::vector<Transition> out;
  out.reserve(env.frame().size());
  auto state = env.reset();
  const double base = env.frame().base_qp;
  while (true) {
    Transition t;
    t.state = state.features;
    t.action = noise.perturb(actor_delta(actor, state.features), episode, rng);
    t.episode = episode;
    t.step = static_cast<std::uint32_t>(state.index);
    const auto outcome = env.step(base + t.action);
    t.r_distortion = outcome.r_distortion;
    t.r_rate = outcome.r_rate;
    t.done = outcome.done;
    if (outcome.next) t.next_state = outcome.next->features;
    out.push_back(t);
    if (outcome.done) break;
    state = *outcome.next;
  }
  const double deviation = std::abs(env.state().bits_spent - env.frame().budget) / env.frame().budget;
  for (auto& t : out) t.episode_deviation = deviation;
  return out;
}

double RewardSpec::value(const Transition& t) const {
  switch (channel) {
    case RewardChannel::Distortion: return t.r_distortion * distortion_scale;
    case RewardChannel::Rate: return t.r_rate;
    case RewardChannel::Combined: return t.r_distortion * distortion_scale + lambda * t.r_rate;
  }
  return 0.0;
}

double n_step_target(std::span<const double> rewards, double gamma, std::optional<double> bootstrap_value) {
  double y = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    y += discount * r;
    discount *= gamma;
  }
  if (bootstrap_value) y += discount * *bootstrap_value;
  return y;
}

std::vector<double> n_step_targets(const ReplayBuffer& buffer, std::span<const std::size_t> indices, int n,
                                   double gamma, const nn::MlpNet& target_critic, const nn::MlpNet& target_actor,
                                   const RewardSpec& reward) {
  if (n < 1) throw ConfigError("n-step horizon must be at least 1");
  std::vector<NStepWindow> windows;
  windows.reserve(indices.size());
  std::vector<StateVec> boot_states;
  for (auto i : indices) {
    windows.push_back(buffer.window(i, n));
    if (windows.back().bootstrap_state) boot_states.push_back(*windows.back().bootstrap_state);
  }

  std::vector<double> boot_values;
  if (!boot_states.empty() && gamma != 0.0) {
    const Eigen::MatrixXd actions = nn::forward_batch(target_actor, state_matrix(boot_states));
    std::vector<double> deltas(boot_states.size());
    for (std::size_t c = 0; c < deltas.size(); ++c) deltas[c] = actions(0, static_cast<Eigen::Index>(c));
    const Eigen::MatrixXd q = nn::forward_batch(target_critic, critic_inputs(boot_states, deltas));
    boot_values.assign(q.data(), q.data() + q.size());
  }

  std::vector<double> targets;
  targets.reserve(indices.size());
  std::size_t next_boot = 0;
  std::vector<double> rewards;
  for (const auto& w : windows) {
    rewards.clear();
    for (const auto* t : w.steps) rewards.push_back(reward.value(*t));
    std::optional<double> boot;
    if (w.bootstrap_state) {
      if (gamma != 0.0) boot = boot_values[next_boot];
      ++next_boot;
    }
    targets.push_back(n_step_target(rewards, gamma, boot));
  }
  return targets;
}

double critic_update(nn::MlpNet& critic, nn::AdamState& optimizer, double learning_rate,
                     const Eigen::MatrixXd& inputs, std::span<const double> targets) {
  if (inputs.cols() == 0) throw ConfigError("critic update needs a non-empty batch");
  if (static_cast<std::size_t>(inputs.cols()) != targets.size())
    throw ShapeError("critic batch and targets differ in size");
  const auto trace = nn::forward_trace(critic, inputs);
  const auto batch = static_cast<double>(targets.size());
  Eigen::MatrixXd grad(1, inputs.cols());
  double loss = 0.0;
  for (Eigen::Index c = 0; c < inputs.cols(); ++c) {
    const double residual = trace.output()(0, c) - targets[static_cast<std::size_t>(c)];
    loss += residual * residual;
    grad(0, c) = 2.0 * residual / batch;
  }
  loss /= batch;
  auto grads = nn::GradRecord::zeros_like(critic);
  nn::backward(critic, trace, grad, &grads);
  grads.loss = loss;
  if (!grads.all_finite()) throw NumericError("non-finite critic gradient");
  nn::optimizer_step(critic, grads, optimizer, learning_rate);
  return loss;
}

}  // namespace nfwpo::rl
