#include "nfwpo/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "nfwpo/baselines.hpp"
#include "nfwpo/binary_io.hpp"
#include "nfwpo/errors.hpp"

namespace nfwpo::train {

using json = nlohmann::json;

namespace {

constexpr const char* kBundleMagic = "nfwpo-checkpoint";
constexpr std::uint32_t kBundleVersion = 1;
// Output layers start near zero so early actions sit at the base QP and
// early critic estimates stay small.
constexpr double kOutputInitRange = 3e-3;

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
  return std::mt19937_64(seq);
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream ss(state);
  ss >> rng;
  if (!ss) throw FormatError("corrupt RNG state in checkpoint");
}

struct Batch {
  std::vector<std::size_t> indices;
  std::vector<rl::StateVec> states;
  std::vector<double> actions;
  std::vector<double> base_qps;
  std::vector<double> deviations;
};

Batch gather(const rl::ReplayBuffer& buffer, std::vector<std::size_t> indices) {
  Batch b;
  b.indices = std::move(indices);
  for (auto i : b.indices) {
    const auto& t = buffer.at(i);
    b.states.push_back(t.state);
    b.actions.push_back(t.action);
    b.base_qps.push_back(fw::base_qp_of(t.state));
    b.deviations.push_back(t.episode_deviation);
  }
  return b;
}

}  // namespace

AgentKind parse_agent_kind(const std::string& name) {
  if (name == "nfwpo") return AgentKind::Nfwpo;
  if (name == "single") return AgentKind::SingleCritic;
  if (name == "dual") return AgentKind::DualCritic;
  if (name == "proj-ddpg") return AgentKind::ProjectionDdpg;
  if (name == "fixed-qp") return AgentKind::FixedQp;
  throw ConfigError("unknown agent kind '" + name + "' (expected nfwpo, single, dual, proj-ddpg or fixed-qp)");
}

std::string to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::Nfwpo: return "nfwpo";
    case AgentKind::SingleCritic: return "single";
    case AgentKind::DualCritic: return "dual";
    case AgentKind::ProjectionDdpg: return "proj-ddpg";
    case AgentKind::FixedQp: return "fixed-qp";
  }
  return "nfwpo";
}

void TrainConfig::validate() const {
  if (updates_per_episode < 0) throw ConfigError("updates_per_episode must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (buffer_capacity < batch_size) throw ConfigError("buffer_capacity must hold at least one batch");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (n_step < 1) throw ConfigError("n_step must be at least 1");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("learning rates must be positive");
  for (int h : hidden)
    if (h <= 0) throw ConfigError("hidden layer widths must be positive");
  if (!(noise_sigma >= 0.0) || !(noise_decay > 0.0 && noise_decay <= 1.0))
    throw ConfigError("noise sigma must be >= 0 and decay in (0, 1]");
  if (!(distortion_reward_scale > 0.0)) throw ConfigError("distortion_reward_scale must be positive");
  if (!(roi_weight >= 1.0)) throw ConfigError("roi_weight must be at least 1");
  if (n_ctus < 1) throw ConfigError("n_ctus must be positive");
  if (rate_points.empty()) throw ConfigError("at least one rate point is required");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(dual_tolerance > 0.0)) throw ConfigError("dual_tolerance must be positive");
  nfwpo.validate();
}

std::string config_to_json(const TrainConfig& c) {
  json j;
  j["agent"] = to_string(c.agent);
  j["episodes"] = c.episodes;
  j["updates_per_episode"] = c.updates_per_episode;
  j["batch_size"] = c.batch_size;
  j["buffer_capacity"] = c.buffer_capacity;
  j["gamma"] = c.gamma;
  j["n_step"] = c.n_step;
  j["tau"] = c.tau;
  j["actor_lr"] = c.actor_lr;
  j["critic_lr"] = c.critic_lr;
  j["hidden"] = c.hidden;
  j["noise_sigma"] = c.noise_sigma;
  j["noise_decay"] = c.noise_decay;
  j["distortion_reward_scale"] = c.distortion_reward_scale;
  j["roi_weight"] = c.roi_weight;
  j["n_ctus"] = c.n_ctus;
  j["rate_points"] = c.rate_points;
  j["integer_qp"] = c.integer_qp;
  j["epsilon"] = c.nfwpo.epsilon;
  j["alpha"] = c.nfwpo.alpha;
  j["grid"] = {{"min_tenths", c.nfwpo.grid.min_tenths},
               {"max_tenths", c.nfwpo.grid.max_tenths},
               {"step_tenths", c.nfwpo.grid.step_tenths}};
  j["lambda"] = c.lambda;
  j["dual_tolerance"] = c.dual_tolerance;
  return j.dump(2);
}

TrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("training config is not valid JSON: ") + e.what());
  }
  TrainConfig c;
  try {
    if (j.contains("agent")) c.agent = parse_agent_kind(j["agent"].get<std::string>());
    c.episodes = j.value("episodes", c.episodes);
    c.updates_per_episode = j.value("updates_per_episode", c.updates_per_episode);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
    c.gamma = j.value("gamma", c.gamma);
    c.n_step = j.value("n_step", c.n_step);
    c.tau = j.value("tau", c.tau);
    c.actor_lr = j.value("actor_lr", c.actor_lr);
    c.critic_lr = j.value("critic_lr", c.critic_lr);
    c.hidden = j.value("hidden", c.hidden);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.noise_decay = j.value("noise_decay", c.noise_decay);
    c.distortion_reward_scale = j.value("distortion_reward_scale", c.distortion_reward_scale);
    c.roi_weight = j.value("roi_weight", c.roi_weight);
    c.n_ctus = j.value("n_ctus", c.n_ctus);
    c.rate_points = j.value("rate_points", c.rate_points);
    c.integer_qp = j.value("integer_qp", c.integer_qp);
    c.nfwpo.epsilon = j.value("epsilon", c.nfwpo.epsilon);
    c.nfwpo.alpha = j.value("alpha", c.nfwpo.alpha);
    if (j.contains("grid")) {
      const auto& g = j["grid"];
      c.nfwpo.grid.min_tenths = g.value("min_tenths", c.nfwpo.grid.min_tenths);
      c.nfwpo.grid.max_tenths = g.value("max_tenths", c.nfwpo.grid.max_tenths);
      c.nfwpo.grid.step_tenths = g.value("step_tenths", c.nfwpo.grid.step_tenths);
    }
    c.lambda = j.value("lambda", c.lambda);
    c.dual_tolerance = j.value("dual_tolerance", c.dual_tolerance);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad training config field: ") + e.what());
  }
  c.validate();
  return c;
}

AgentNets AgentNets::create(const TrainConfig& config, std::mt19937_64& rng) {
  std::vector<int> actor_sizes{static_cast<int>(env::kStateSize)};
  std::vector<int> critic_sizes{rl::kCriticInputSize};
  for (int h : config.hidden) {
    actor_sizes.push_back(h);
    critic_sizes.push_back(h);
  }
  actor_sizes.push_back(1);
  critic_sizes.push_back(1);

  AgentNets n;
  n.actor = nn::MlpNet::random(actor_sizes, nn::Activation::BoundedTanh, rl::kDeltaQpMax, rng, kOutputInitRange);
  n.critic_d = nn::MlpNet::random(critic_sizes, nn::Activation::Identity, 1.0, rng, kOutputInitRange);
  n.critic_r = nn::MlpNet::random(critic_sizes, nn::Activation::Identity, 1.0, rng, kOutputInitRange);
  n.actor_target = n.actor;
  n.critic_d_target = n.critic_d;
  n.critic_r_target = n.critic_r;
  n.actor_opt = nn::AdamState::for_net(n.actor);
  n.critic_d_opt = nn::AdamState::for_net(n.critic_d);
  n.critic_r_opt = nn::AdamState::for_net(n.critic_r);
  return n;
}

FrameFactory default_frame_factory(const TrainConfig& config) {
  const auto rate_points = config.rate_points;
  const int n_ctus = config.n_ctus;
  return [rate_points, n_ctus](std::mt19937_64& rng, std::uint64_t episode) {
    const double qp_l = rate_points[episode % rate_points.size()];
    return env::sample_training_frame(rng, n_ctus, qp_l);
  };
}

TrainLog::TrainLog(std::ostream& out, bool write_header) : out_(out) {
  if (write_header) out_ << header() << '\n';
}

const char* TrainLog::header() {
  return "episode,step,qp_l,action,r_distortion,r_rate,critic_d_loss,critic_r_loss,actor_loss,episode_deviation";
}

void TrainLog::episode(const std::vector<rl::Transition>& steps, double qp_l, const UpdateStats& stats) {
  char buf[512];
  for (const auto& t : steps) {
    if (stats.updated) {
      std::snprintf(buf, sizeof buf, "%" PRIu64 ",%u,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", t.episode,
                    t.step, qp_l, t.action, t.r_distortion, t.r_rate, stats.critic_d_loss, stats.critic_r_loss,
                    stats.actor_loss, t.episode_deviation);
    } else {
      std::snprintf(buf, sizeof buf, "%" PRIu64 ",%u,%.10g,%.10g,%.10g,%.10g,,,,%.10g\n", t.episode, t.step, qp_l,
                    t.action, t.r_distortion, t.r_rate, t.episode_deviation);
    }
    out_ << buf;
  }
}

Trainer::Trainer(TrainConfig config, std::uint64_t seed, FrameFactory factory)
    : config_(std::move(config)),
      seed_(seed),
      factory_(factory ? std::move(factory) : default_frame_factory(config_)),
      buffer_(config_.buffer_capacity),
      frame_rng_(stream(seed, 1)),
      noise_rng_(stream(seed, 2)),
      sample_rng_(stream(seed, 3)) {
  config_.validate();
  auto init_rng = stream(seed, 0);
  nets_ = AgentNets::create(config_, init_rng);
}

UpdateStats Trainer::run_episode(TrainLog* log) {
  const auto episode = episodes_done_;
  env::CodecEnv env(factory_(frame_rng_, episode), env::EnvOptions{config_.roi_weight, config_.integer_qp});
  const rl::NoiseProcess noise{config_.noise_sigma, config_.noise_decay};
  const auto steps = rl::rollout(env, nets_.actor, noise, noise_rng_, episode);
  buffer_.push_episode(steps);
  last_deviation_ = steps.back().episode_deviation;

  UpdateStats stats;
  if (config_.agent != AgentKind::FixedQp)
    for (int k = 0; k < config_.updates_per_episode; ++k) {
      const auto s = update_round();
      if (s.updated) stats = s;
    }
  if (log) log->episode(steps, env.frame().qp_l, stats);
  ++episodes_done_;
  return stats;
}

void Trainer::run(std::optional<std::uint64_t> until, TrainLog* log,
                  const std::function<void(const Trainer&)>& after_episode) {
  const auto stop = std::min(until.value_or(config_.episodes), config_.episodes);
  while (episodes_done_ < stop) {
    try {
      run_episode(log);
    } catch (const std::exception& e) {
      throw std::runtime_error("training failed in episode " + std::to_string(episodes_done_) + ": " + e.what());
    }
    if (after_episode) after_episode(*this);
  }
}

UpdateStats Trainer::update_round() {
  UpdateStats stats;
  auto picked = rl::sample_batch(buffer_, config_.batch_size, sample_rng_);
  if (!picked) return stats;
  const auto batch = gather(buffer_, std::move(*picked));
  stats.updated = true;

  const bool single = config_.agent == AgentKind::SingleCritic;
  const auto inputs = rl::critic_inputs(batch.states, batch.actions);

  // Critic regression on n-step targets.
  rl::RewardSpec d_reward{single ? rl::RewardChannel::Combined : rl::RewardChannel::Distortion,
                          config_.distortion_reward_scale, config_.lambda};
  const auto y_d = rl::n_step_targets(buffer_, batch.indices, config_.n_step, config_.gamma, nets_.critic_d_target,
                                      nets_.actor_target, d_reward);
  stats.critic_d_loss = rl::critic_update(nets_.critic_d, nets_.critic_d_opt, config_.critic_lr, inputs, y_d);
  if (!single) {
    rl::RewardSpec r_reward{rl::RewardChannel::Rate, 1.0, 0.0};
    const auto y_r = rl::n_step_targets(buffer_, batch.indices, config_.n_step, config_.gamma,
                                        nets_.critic_r_target, nets_.actor_target, r_reward);
    stats.critic_r_loss = rl::critic_update(nets_.critic_r, nets_.critic_r_opt, config_.critic_lr, inputs, y_r);
  }

  // Actor step.
  switch (config_.agent) {
    case AgentKind::Nfwpo: {
      const auto points = fw::reference_points(nets_.actor, nets_.critic_d, nets_.critic_r, batch.states,
                                               batch.base_qps, config_.nfwpo);
      std::vector<double> targets;
      targets.reserve(points.size());
      for (const auto& p : points) targets.push_back(p.reference_delta);
      stats.actor_loss = fw::actor_update(nets_.actor, nets_.actor_opt, config_.actor_lr, batch.states, targets);
      break;
    }
    case AgentKind::SingleCritic:
    case AgentKind::DualCritic: {
      const Eigen::MatrixXd pi = nn::forward_batch(nets_.actor, rl::state_matrix(batch.states));
      const std::vector<double> deltas(pi.data(), pi.data() + pi.size());
      auto dq = fw::action_gradients(nets_.critic_d, batch.states, deltas);
      const Eigen::MatrixXd q = nn::forward_batch(nets_.critic_d, rl::critic_inputs(batch.states, deltas));
      double objective = q.mean();
      if (config_.agent == AgentKind::DualCritic) {
        const auto dq_r = fw::action_gradients(nets_.critic_r, batch.states, deltas);
        const Eigen::MatrixXd q_r = nn::forward_batch(nets_.critic_r, rl::critic_inputs(batch.states, deltas));
        objective = 0.0;
        for (std::size_t s = 0; s < dq.size(); ++s) {
          const bool rate = baselines::dual_critic_select(batch.deviations[s], config_.dual_tolerance) ==
                            baselines::CriticTag::Rate;
          if (rate) dq[s] = dq_r[s];
          objective += rate ? q_r(0, static_cast<Eigen::Index>(s)) : q(0, static_cast<Eigen::Index>(s));
        }
        objective /= static_cast<double>(dq.size());
      }
      const std::vector<double> gates(dq.size(), 1.0);
      auto grads = baselines::policy_gradient(nets_.actor, batch.states, dq, gates);
      nn::optimizer_step(nets_.actor, grads, nets_.actor_opt, config_.actor_lr);
      stats.actor_loss = -objective;
      break;
    }
    case AgentKind::ProjectionDdpg: {
      std::vector<fw::QpGrid> grids(batch.states.size(), config_.nfwpo.grid);
      for (std::size_t s = 0; s < grids.size(); ++s) grids[s].base_qp = batch.base_qps[s];
      const auto sets = fw::feasible_sets(nets_.critic_r, batch.states, grids, config_.nfwpo.epsilon);
      auto step = baselines::projection_layer_gradient(nets_.actor, nets_.critic_d, batch.states, sets);
      nn::optimizer_step(nets_.actor, step.grads, nets_.actor_opt, config_.actor_lr);
      std::vector<double> deltas(step.projected.size());
      for (std::size_t s = 0; s < deltas.size(); ++s) deltas[s] = step.projected[s] - batch.base_qps[s];
      stats.actor_loss = -nn::forward_batch(nets_.critic_d, rl::critic_inputs(batch.states, deltas)).mean();
      break;
    }
    case AgentKind::FixedQp:
      break;
  }

  nn::soft_update(nets_.actor_target, nets_.actor, config_.tau);
  nn::soft_update(nets_.critic_d_target, nets_.critic_d, config_.tau);
  if (!single) nn::soft_update(nets_.critic_r_target, nets_.critic_r, config_.tau);
  return stats;
}

void Trainer::save(std::ostream& out, std::uint64_t log_bytes) const {
  io::BinaryWriter w(out);
  w.str(kBundleMagic);
  w.u32(kBundleVersion);
  w.str(to_string(config_.agent));
  w.str(config_to_json(config_));
  w.u64(seed_);
  w.u64(episodes_done_);
  w.f64(last_deviation_);
  w.u64(log_bytes);
  w.str(rng_state(frame_rng_));
  w.str(rng_state(noise_rng_));
  w.str(rng_state(sample_rng_));
  for (const auto* net : {&nets_.actor, &nets_.actor_target, &nets_.critic_d, &nets_.critic_d_target,
                          &nets_.critic_r, &nets_.critic_r_target})
    nn::write(w, *net);
  for (const auto* opt : {&nets_.actor_opt, &nets_.critic_d_opt, &nets_.critic_r_opt}) nn::write(w, *opt);
  buffer_.write(w);
  if (!out) throw FormatError("failed writing checkpoint");
}

Trainer Trainer::load(std::istream& in, FrameFactory factory, std::uint64_t* log_bytes) {
  io::BinaryReader r(in);
  if (r.str() != kBundleMagic) throw FormatError("not a checkpoint bundle");
  const auto version = r.u32();
  if (version != kBundleVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto kind = parse_agent_kind(r.str());
  auto config = config_from_json(r.str());
  if (config.agent != kind) throw FormatError("checkpoint agent tag disagrees with its config");
  const auto seed = r.u64();
  Trainer t(std::move(config), seed, std::move(factory));
  t.episodes_done_ = r.u64();
  t.last_deviation_ = r.f64();
  const auto bytes = r.u64();
  if (log_bytes) *log_bytes = bytes;
  restore_rng(t.frame_rng_, r.str());
  restore_rng(t.noise_rng_, r.str());
  restore_rng(t.sample_rng_, r.str());
  auto& n = t.nets_;
  for (auto* net : {&n.actor, &n.actor_target, &n.critic_d, &n.critic_d_target, &n.critic_r, &n.critic_r_target}) {
    auto loaded = nn::read_net(r);
    if (!loaded.same_architecture(*net)) throw FormatError("checkpoint network shape disagrees with its config");
    *net = std::move(loaded);
  }
  for (auto* opt : {&n.actor_opt, &n.critic_d_opt, &n.critic_r_opt}) *opt = nn::read_adam(r);
  t.buffer_ = rl::ReplayBuffer::read(r);
  return t;
}

namespace {

Trainer train_as(AgentKind kind, TrainConfig config, std::uint64_t seed, FrameFactory factory, TrainLog* log) {
  config.agent = kind;
  Trainer t(std::move(config), seed, std::move(factory));
  t.run(std::nullopt, log);
  return t;
}

}  // namespace

Trainer train(TrainConfig config, std::uint64_t seed, FrameFactory factory, TrainLog* log) {
  return train_as(AgentKind::Nfwpo, std::move(config), seed, std::move(factory), log);
}

Trainer train_single_critic(TrainConfig config, std::uint64_t seed, FrameFactory factory, TrainLog* log) {
  return train_as(AgentKind::SingleCritic, std::move(config), seed, std::move(factory), log);
}

Trainer train_dual_critic(TrainConfig config, std::uint64_t seed, FrameFactory factory, TrainLog* log) {
  return train_as(AgentKind::DualCritic, std::move(config), seed, std::move(factory), log);
}

Trainer train_projection_ddpg(TrainConfig config, std::uint64_t seed, FrameFactory factory, TrainLog* log) {
  return train_as(AgentKind::ProjectionDdpg, std::move(config), seed, std::move(factory), log);
}

Policy Policy::fixed_qp() { return Policy{}; }

Policy Policy::from_trainer(const Trainer& trainer) {
  Policy p;
  p.kind = trainer.config().agent;
  p.config = trainer.config();
  if (p.kind != AgentKind::FixedQp) p.nets = trainer.nets();
  return p;
}

Policy::Decision Policy::decide(const env::EnvState& state, const env::Frame& frame) const {
  if (kind == AgentKind::FixedQp || !nets) return {frame.qp_l, frame.qp_l};
  const double base = frame.base_qp;
  const double raw = base + rl::clip_delta(rl::actor_delta(nets->actor, state.features));
  switch (kind) {
    case AgentKind::Nfwpo:
    case AgentKind::ProjectionDdpg: {
      auto grid = config.nfwpo.grid;
      grid.base_qp = base;
      const auto fs = fw::feasible_set(nets->critic_r, state.features, grid, config.nfwpo.epsilon);
      const double qp = kind == AgentKind::Nfwpo ? fw::project(raw, fs) : std::clamp(raw, fs.min(), fs.max());
      return {raw, qp};
    }
    default:
      return {raw, raw};
  }
}

EvalEpisode evaluate_frame(const Policy& policy, const env::Frame& frame) {
  EvalEpisode e;
  e.outcome = env::run_episode(
      frame,
      [&](const env::EnvState& s) {
        const auto d = policy.decide(s, frame);
        e.raw_qps.push_back(d.raw);
        return d.qp;
      },
      env::EnvOptions{policy.config.roi_weight, policy.config.integer_qp});
  return e;
}

}  // namespace nfwpo::train
