#include "nfwpo/codec_env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "nfwpo/errors.hpp"

namespace nfwpo::env {

using json = nlohmann::json;

namespace {

// Content statistics of the synthetic frames.
constexpr double kVarianceMin = 50.0;
constexpr double kVarianceMax = 5000.0;
constexpr double kGradientRho = 1.0;
constexpr double kRateScaleGain = 400.0;
constexpr double kRateScalePower = 0.75;
constexpr int kSmallRoiMax = 5;

std::vector<std::size_t> pick_positions(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  return idx;
}

}  // namespace

double qstep(double qp) { return std::exp2((qp - 4.0) / 6.0); }

EncodeResult encode_ctu(const CtuModel& ctu, double qp) {
  if (!std::isfinite(qp)) throw NumericError("QP must be finite");
  const double step = qstep(qp);
  EncodeResult r;
  r.bits = std::max(kRateFloorBits, ctu.rate_scale * std::pow(step, -ctu.rate_exponent));
  r.mse = std::min(ctu.variance, ctu.distortion_scale * step * step / 12.0);
  return r;
}

std::size_t Frame::roi_count() const {
  return static_cast<std::size_t>(std::count_if(ctus.begin(), ctus.end(), [](const CtuModel& c) { return c.roi; }));
}

double frame_budget(std::span<const CtuModel> ctus, double qp_l) {
  double total = 0.0;
  for (const auto& c : ctus) total += encode_ctu(c, qp_l).bits;
  return total;
}

Frame make_frame(std::vector<CtuModel> ctus, double qp_l, std::string roi_setting) {
  if (ctus.empty()) throw ConfigError("a frame needs at least one coding unit");
  for (const auto& c : ctus)
    if (!(c.rate_scale > 0.0) || !(c.variance > 0.0))
      throw ConfigError("coding unit needs positive rate scale and variance");
  Frame f;
  f.budget = frame_budget(ctus, qp_l);
  f.ctus = std::move(ctus);
  f.qp_l = qp_l;
  f.base_qp = qp_l - 3.0;
  f.roi_setting = std::move(roi_setting);
  return f;
}

RoiPolicy parse_roi_policy(const std::string& name) {
  if (name == "regular") return RoiPolicy::Regular;
  if (name == "small") return RoiPolicy::Small;
  if (name == "large") return RoiPolicy::Large;
  throw ConfigError("unknown ROI policy '" + name + "' (expected regular, small or large)");
}

std::string to_string(RoiPolicy policy) {
  switch (policy) {
    case RoiPolicy::Regular: return "regular";
    case RoiPolicy::Small: return "small";
    case RoiPolicy::Large: return "large";
  }
  return "regular";
}

std::vector<CtuModel> sample_content(std::mt19937_64& rng, int n_ctus) {
  if (n_ctus < 1) throw ConfigError("frames need at least one coding unit");
  std::uniform_real_distribution<double> log_var(std::log(kVarianceMin), std::log(kVarianceMax));
  std::uniform_real_distribution<double> grad_u(0.5, 1.5);
  std::uniform_real_distribution<double> rate_u(0.8, 1.25);
  std::uniform_real_distribution<double> exponent(0.8, 1.4);
  std::uniform_real_distribution<double> kappa(0.5, 2.0);
  std::vector<CtuModel> ctus(static_cast<std::size_t>(n_ctus));
  for (auto& c : ctus) {
    c.variance = std::exp(log_var(rng));
    c.gradient = kGradientRho * std::sqrt(c.variance) * grad_u(rng);
    c.rate_scale = kRateScaleGain * std::pow(c.variance, kRateScalePower) * rate_u(rng);
    c.rate_exponent = exponent(rng);
    c.distortion_scale = kappa(rng);
  }
  return ctus;
}

Frame sample_training_frame(std::mt19937_64& rng, int n_ctus, double qp_l) {
  auto ctus = sample_content(rng, n_ctus);
  std::uniform_int_distribution<int> count_dist(0, n_ctus);
  const auto k = static_cast<std::size_t>(count_dist(rng));
  for (auto i : pick_positions(rng, ctus.size(), k)) ctus[i].roi = true;
  return make_frame(std::move(ctus), qp_l, "regular");
}

std::vector<Frame> generate_frames(const FrameGenOptions& options) {
  if (options.roi_policy != RoiPolicy::Regular && options.n_ctus <= kSmallRoiMax)
    throw ConfigError("small/large ROI policies need more than 5 coding units per frame");
  std::mt19937_64 rng(options.seed);
  std::vector<Frame> frames;
  frames.reserve(options.count);
  for (std::size_t f = 0; f < options.count; ++f) {
    auto ctus = sample_content(rng, options.n_ctus);
    const auto n = ctus.size();
    // Every policy consumes the same draws in the same order.
    std::uniform_int_distribution<int> regular_count(0, options.n_ctus);
    const auto regular = pick_positions(rng, n, static_cast<std::size_t>(regular_count(rng)));
    std::uniform_int_distribution<int> small_count(1, kSmallRoiMax);
    const auto small = pick_positions(rng, n, static_cast<std::size_t>(small_count(rng)));

    switch (options.roi_policy) {
      case RoiPolicy::Regular:
        for (auto i : regular) ctus[i].roi = true;
        break;
      case RoiPolicy::Small:
        for (auto i : small) ctus[i].roi = true;
        break;
      case RoiPolicy::Large:
        for (auto& c : ctus) c.roi = true;
        for (auto i : small) ctus[i].roi = false;
        break;
    }
    frames.push_back(make_frame(std::move(ctus), options.qp_l, to_string(options.roi_policy)));
  }
  return frames;
}

EncodeResult SimulatedEncoder::encode(std::size_t ctu_id, double qp) {
  if (ctu_id >= frame_->size()) throw ProtocolError("coding unit index out of range");
  return encode_ctu(frame_->ctus[ctu_id], qp);
}

double distortion_reward(double mse, bool roi, double roi_weight) { return roi ? -mse * roi_weight : -mse; }

double rate_reward(double total_bits, double budget) { return -std::abs(budget - total_bits) / budget; }

CodecEnv::CodecEnv(Frame frame, EnvOptions options) : CodecEnv(std::move(frame), nullptr, options) {}

CodecEnv::CodecEnv(Frame frame, std::unique_ptr<EncoderAdapter> encoder, EnvOptions options)
    : frame_(std::move(frame)), encoder_(std::move(encoder)), options_(options) {
  if (frame_.ctus.empty()) throw ConfigError("a frame needs at least one coding unit");
  if (!(frame_.budget > 0.0)) throw ConfigError("frame budget must be positive");
  if (!encoder_) encoder_ = std::make_unique<SimulatedEncoder>(frame_);
  budget_reference_ = frame_budget(frame_.ctus, kReferenceQp);

  const auto n = frame_.ctus.size();
  suffix_variance_.assign(n + 1, 0.0);
  suffix_gradient_.assign(n + 1, 0.0);
  suffix_roi_.assign(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    suffix_variance_[i] = suffix_variance_[i + 1] + frame_.ctus[i].variance;
    suffix_gradient_[i] = suffix_gradient_[i + 1] + frame_.ctus[i].gradient;
    suffix_roi_[i] = suffix_roi_[i + 1] + (frame_.ctus[i].roi ? 1.0 : 0.0);
  }
}

StateVec CodecEnv::features_at(std::size_t i, double bits_spent) const {
  const auto n = static_cast<double>(frame_.ctus.size());
  const auto& ctu = frame_.ctus[i];
  const double remaining = n - static_cast<double>(i);
  StateVec s{};
  s[0] = ctu.variance / kFeatureVarianceScale;
  s[1] = ctu.gradient / kFeatureVarianceScale;
  s[2] = suffix_variance_[i] / remaining / kFeatureVarianceScale;
  s[3] = suffix_gradient_[i] / remaining / kFeatureVarianceScale;
  s[4] = std::clamp((frame_.budget - bits_spent) / frame_.budget, 0.0, kMaxOutstandingFraction);
  s[5] = remaining / n;
  s[6] = frame_.base_qp / kMaxHevcQp;
  s[7] = frame_.budget / budget_reference_;
  s[8] = ctu.roi ? 1.0 : 0.0;
  s[9] = suffix_roi_[i] / n;
  return s;
}

const EnvState& CodecEnv::reset() {
  state_ = EnvState{};
  state_.features = features_at(0, 0.0);
  started_ = true;
  done_ = false;
  qps_.clear();
  results_.clear();
  return state_;
}

StepOutcome CodecEnv::step(double qp) {
  if (!started_) throw ProtocolError("step() called before reset()");
  if (done_) throw ProtocolError("step() called on a finished episode");
  if (!std::isfinite(qp)) throw NumericError("non-finite QP passed to step()");
  if (options_.integer_qp) qp = std::round(qp);

  const auto i = state_.index;
  const auto coded = encoder_->encode(i, qp);
  qps_.push_back(qp);
  results_.push_back(coded);

  StepOutcome out;
  out.bits = coded.bits;
  out.mse = coded.mse;
  out.r_distortion = distortion_reward(coded.mse, frame_.ctus[i].roi, options_.roi_weight);
  state_.bits_spent += coded.bits;
  state_.index = i + 1;
  if (state_.index == frame_.ctus.size()) {
    done_ = true;
    out.done = true;
    out.r_rate = rate_reward(state_.bits_spent, frame_.budget);
  } else {
    state_.features = features_at(state_.index, state_.bits_spent);
    out.next = state_;
  }
  return out;
}

double EpisodeOutcome::weighted_distortion(double roi_weight) const {
  double d = 0.0;
  for (std::size_t i = 0; i < units.size(); ++i) d += roi[i] ? units[i].mse * roi_weight : units[i].mse;
  return d;
}

EpisodeOutcome run_episode(const Frame& frame, const QpPolicy& policy, EnvOptions options) {
  CodecEnv env(frame, options);
  auto state = env.reset();
  while (true) {
    const auto out = env.step(policy(state));
    if (out.done) break;
    state = *out.next;
  }
  EpisodeOutcome o;
  o.qps = env.qps();
  o.units = env.results();
  for (const auto& c : frame.ctus) o.roi.push_back(c.roi);
  o.total_bits = env.state().bits_spent;
  o.budget = frame.budget;
  o.qp_l = frame.qp_l;
  o.roi_setting = frame.roi_setting;
  return o;
}

OracleResult oracle_allocate(const Frame& frame, std::span<const double> qp_grid, double epsilon,
                             double roi_weight) {
  const auto n = frame.size();
  if (n == 0) throw ConfigError("oracle needs a non-empty frame");
  if (n > kOracleMaxUnits) throw ConfigError("exhaustive oracle limited to 6 coding units");
  if (qp_grid.empty()) throw ConfigError("oracle needs a non-empty QP grid");
  const auto g = qp_grid.size();
  const double tolerance = std::abs(epsilon);

  // Per-unit, per-grid-point costs.
  std::vector<double> bits(n * g), wdist(n * g);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < g; ++j) {
      const auto r = encode_ctu(frame.ctus[i], qp_grid[j]);
      bits[i * g + j] = r.bits;
      wdist[i * g + j] = frame.ctus[i].roi ? r.mse * roi_weight : r.mse;
    }

  OracleResult best;
  std::vector<std::size_t> choice(n, 0), best_choice;
  auto lex_less = [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    for (std::size_t i = 0; i < n; ++i)
      if (qp_grid[a[i]] != qp_grid[b[i]]) return qp_grid[a[i]] < qp_grid[b[i]];
    return false;
  };
  while (true) {
    double total_bits = 0.0, total_dist = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total_bits += bits[i * g + choice[i]];
      total_dist += wdist[i * g + choice[i]];
    }
    if (std::abs(total_bits - frame.budget) / frame.budget <= tolerance) {
      const bool better = !best.feasible || total_dist < best.weighted_distortion ||
                          (total_dist == best.weighted_distortion &&
                           (total_bits < best.total_bits ||
                            (total_bits == best.total_bits && lex_less(choice, best_choice))));
      if (better) {
        best.feasible = true;
        best.weighted_distortion = total_dist;
        best.total_bits = total_bits;
        best_choice = choice;
      }
    }
    std::size_t k = n;
    while (k > 0 && ++choice[k - 1] == g) choice[--k] = 0;
    if (k == 0) break;
  }
  if (best.feasible)
    for (auto j : best_choice) best.qps.push_back(qp_grid[j]);
  return best;
}

std::string frames_to_json(const std::vector<Frame>& frames) {
  json doc;
  doc["format"] = "nfwpo-frameset";
  doc["version"] = kFrameSetVersion;
  doc["frames"] = json::array();
  for (const auto& f : frames) {
    json jf;
    jf["qp_l"] = f.qp_l;
    jf["base_qp"] = f.base_qp;
    jf["budget"] = f.budget;
    jf["roi_setting"] = f.roi_setting;
    jf["ctus"] = json::array();
    for (const auto& c : f.ctus) {
      jf["ctus"].push_back({{"variance", c.variance},
                            {"gradient", c.gradient},
                            {"rate_scale", c.rate_scale},
                            {"rate_exponent", c.rate_exponent},
                            {"distortion_scale", c.distortion_scale},
                            {"roi", c.roi}});
    }
    doc["frames"].push_back(std::move(jf));
  }
  return doc.dump(1) + "\n";
}

std::vector<Frame> frames_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("frame set is not valid JSON: ") + e.what());
  }
  if (doc.value("format", "") != "nfwpo-frameset") throw FormatError("not a frame-set file");
  if (doc.value("version", 0) != kFrameSetVersion)
    throw FormatError("unsupported frame-set version " + std::to_string(doc.value("version", 0)));
  std::vector<Frame> frames;
  try {
    for (const auto& jf : doc.at("frames")) {
      Frame f;
      f.qp_l = jf.at("qp_l").get<double>();
      f.base_qp = jf.at("base_qp").get<double>();
      f.budget = jf.at("budget").get<double>();
      f.roi_setting = jf.value("roi_setting", "");
      for (const auto& jc : jf.at("ctus")) {
        CtuModel c;
        c.variance = jc.at("variance").get<double>();
        c.gradient = jc.at("gradient").get<double>();
        c.rate_scale = jc.at("rate_scale").get<double>();
        c.rate_exponent = jc.at("rate_exponent").get<double>();
        c.distortion_scale = jc.at("distortion_scale").get<double>();
        c.roi = jc.at("roi").get<bool>();
        f.ctus.push_back(c);
      }
      if (f.ctus.empty() || !(f.budget > 0.0)) throw FormatError("frame-set entry has no units or no budget");
      frames.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed frame-set entry: ") + e.what());
  }
  return frames;
}

void save_frames(const std::string& path, const std::vector<Frame>& frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << frames_to_json(frames);
  if (!out) throw FormatError("failed writing '" + path + "'");
}

std::vector<Frame> load_frames(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open frame set '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return frames_from_json(ss.str());
}

}  // namespace nfwpo::env
