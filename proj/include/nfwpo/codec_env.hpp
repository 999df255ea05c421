#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace nfwpo::env {

inline constexpr std::size_t kStateSize = 10;
inline constexpr double kRateFloorBits = 64.0;
inline constexpr double kDefaultRoiWeight = 10.0;
inline constexpr int kDefaultCtusPerFrame = 40;
inline constexpr double kMaxHevcQp = 51.0;
inline constexpr double kFeatureVarianceScale = 5000.0;
inline constexpr double kReferenceQp = 22.0;
inline constexpr double kMaxOutstandingFraction = 2.0;

using StateVec = std::array<double, kStateSize>;

/// Quantizer step size, 2^((qp - 4) / 6).
double qstep(double qp);

/// Synthetic rate/distortion model of one coding unit.
struct CtuModel {
  double variance = 100.0;          // luma MSE units
  double gradient = 10.0;           // mean absolute spatial gradient
  double rate_scale = 1000.0;       // bits at qstep 1
  double rate_exponent = 1.0;       // in [0.8, 1.4]
  double distortion_scale = 1.0;    // in [0.5, 2.0]
  bool roi = false;

  friend bool operator==(const CtuModel&, const CtuModel&) = default;
};

struct EncodeResult {
  double bits = 0.0;
  double mse = 0.0;
};

/// bits = max(floor, a * qstep^-b), mse = min(variance, kappa * qstep^2 / 12).
EncodeResult encode_ctu(const CtuModel& ctu, double qp);

struct Frame {
  std::vector<CtuModel> ctus;
  double budget = 0.0;  // R_f in bits
  double base_qp = 0.0;
  double qp_l = 27.0;   // rate point
  std::string roi_setting;

  [[nodiscard]] std::size_t size() const { return ctus.size(); }
  [[nodiscard]] std::size_t roi_count() const;
  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Sum of per-unit bits when every unit is coded at `qp_l`.
double frame_budget(std::span<const CtuModel> ctus, double qp_l);

/// Builds a frame at rate point `qp_l`: budget from fixed-QP coding and base
/// QP = qp_l - 3.
Frame make_frame(std::vector<CtuModel> ctus, double qp_l, std::string roi_setting = {});

enum class RoiPolicy { Regular, Small, Large };

RoiPolicy parse_roi_policy(const std::string& name);
std::string to_string(RoiPolicy policy);

struct FrameGenOptions {
  std::uint64_t seed = 0;
  std::size_t count = 1;
  int n_ctus = kDefaultCtusPerFrame;
  RoiPolicy roi_policy = RoiPolicy::Regular;
  double qp_l = 27.0;
};

/// Draws the content of one frame (no ROI yet) from `rng`.
std::vector<CtuModel> sample_content(std::mt19937_64& rng, int n_ctus);

/// Draws a training frame: content plus a uniform ROI count in [0, n] at
/// uniformly chosen positions.
Frame sample_training_frame(std::mt19937_64& rng, int n_ctus, double qp_l);

/// Deterministic frame set. Content and the small-ROI draw do not depend on
/// the policy, so `large` on a seed is the exact complement of `small`.
std::vector<Frame> generate_frames(const FrameGenOptions& options);

/// Extension point for attaching a real encoder in place of the simulator.
class EncoderAdapter {
 public:
  virtual ~EncoderAdapter() = default;
  virtual EncodeResult encode(std::size_t ctu_id, double qp) = 0;
};

/// Adapter that encodes with the frame's parametric models.
class SimulatedEncoder final : public EncoderAdapter {
 public:
  explicit SimulatedEncoder(const Frame& frame) : frame_(&frame) {}
  EncodeResult encode(std::size_t ctu_id, double qp) override;

 private:
  const Frame* frame_;
};

struct EnvState {
  StateVec features{};
  std::size_t index = 0;     // unit about to be coded
  double bits_spent = 0.0;
};

struct StepOutcome {
  std::optional<EnvState> next;  // empty once the frame is finished
  double bits = 0.0;
  double mse = 0.0;
  double r_distortion = 0.0;
  double r_rate = 0.0;
  bool done = false;
};

struct EnvOptions {
  double roi_weight = kDefaultRoiWeight;
  bool integer_qp = false;
};

/// One frame, coded unit by unit. Owns the episode bookkeeping.
class CodecEnv {
 public:
  explicit CodecEnv(Frame frame, EnvOptions options = {});
  CodecEnv(Frame frame, std::unique_ptr<EncoderAdapter> encoder, EnvOptions options = {});

  const EnvState& reset();
  StepOutcome step(double qp);

  [[nodiscard]] const Frame& frame() const { return frame_; }
  [[nodiscard]] const EnvState& state() const { return state_; }
  [[nodiscard]] bool done() const { return done_; }
  [[nodiscard]] const EnvOptions& options() const { return options_; }
  [[nodiscard]] const std::vector<double>& qps() const { return qps_; }
  [[nodiscard]] const std::vector<EncodeResult>& results() const { return results_; }

 private:
  [[nodiscard]] StateVec features_at(std::size_t index, double bits_spent) const;

  Frame frame_;
  std::unique_ptr<EncoderAdapter> encoder_;
  EnvOptions options_;
  double budget_reference_ = 1.0;
  // Suffix sums so each state costs O(1).
  std::vector<double> suffix_variance_, suffix_gradient_, suffix_roi_;
  EnvState state_;
  bool started_ = false;
  bool done_ = false;
  std::vector<double> qps_;
  std::vector<EncodeResult> results_;
};

/// Distortion reward of one unit: -mse * w for ROI units, -mse otherwise.
double distortion_reward(double mse, bool roi, double roi_weight);

/// Terminal rate reward: -|R_f - total| / R_f.
double rate_reward(double total_bits, double budget);

/// Per-unit trace of one fully coded frame.
struct EpisodeOutcome {
  std::vector<double> qps;
  std::vector<EncodeResult> units;
  std::vector<bool> roi;
  double total_bits = 0.0;
  double budget = 0.0;
  double qp_l = 0.0;
  std::string roi_setting;

  /// sum of w * mse over ROI units plus mse over the rest.
  [[nodiscard]] double weighted_distortion(double roi_weight = kDefaultRoiWeight) const;
};

using QpPolicy = std::function<double(const EnvState&)>;

/// Codes a whole frame with `policy` choosing the absolute QP of each unit.
EpisodeOutcome run_episode(const Frame& frame, const QpPolicy& policy, EnvOptions options = {});

struct OracleResult {
  bool feasible = false;
  std::vector<double> qps;
  double total_bits = 0.0;
  double weighted_distortion = 0.0;
};

inline constexpr std::size_t kOracleMaxUnits = 6;

/// Exhaustive search over `qp_grid`^N for the minimum ROI-weighted distortion
/// among assignments with |sum R - R_f| / R_f <= |epsilon|. Ties go to fewer
/// bits, then the lexicographically smaller QP vector.
OracleResult oracle_allocate(const Frame& frame, std::span<const double> qp_grid, double epsilon,
                             double roi_weight = kDefaultRoiWeight);

/// Frame-set file (versioned JSON).
inline constexpr int kFrameSetVersion = 1;
std::string frames_to_json(const std::vector<Frame>& frames);
std::vector<Frame> frames_from_json(const std::string& text);
void save_frames(const std::string& path, const std::vector<Frame>& frames);
std::vector<Frame> load_frames(const std::string& path);

}  // namespace nfwpo::env
