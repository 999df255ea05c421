#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "nfwpo/codec_env.hpp"

namespace nfwpo::metrics {

inline constexpr double kDefaultDeadband = 0.05;
inline constexpr double kReportRoiWeight = 10.0;
inline constexpr double kPeak8Bit = 255.0;

/// Percentage |actual - target| / target, reported as 0 inside the deadband
/// (boundary included).
double rate_deviation(double actual_bits, double target_bits, double deadband = kDefaultDeadband);

/// (roi_sum * w + nroi_sum) / (n_roi * w + n_nroi).
double roi_weighted_mse(double mse_roi_sum, std::size_t n_roi, double mse_nroi_sum, std::size_t n_nroi,
                        double w = kReportRoiWeight);
double roi_weighted_mse(const env::EpisodeOutcome& outcome, double w = kReportRoiWeight);

/// 10 log10(peak^2 / mse); +infinity (with a warning on stderr) for mse <= 0.
double psnr_from_mse(double mse, double peak = kPeak8Bit);

struct RdPoint {
  double bits = 0.0;
  double quality = 0.0;  // dB
};

enum class BdVariant { CubicFit, PiecewiseCubic };

class NoOverlapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bjontegaard delta rate of `test` against `anchor` in percent (negative
/// means fewer bits at equal quality). Needs at least 4 points per curve.
double bd_rate(std::vector<RdPoint> anchor, std::vector<RdPoint> test, BdVariant variant = BdVariant::CubicFit);

/// One evaluated frame of one agent.
struct EpisodeRecord {
  std::string agent;
  std::string roi_setting;
  double qp_l = 0.0;
  std::size_t frame = 0;  // index within its (setting, rate point) group
  double total_bits = 0.0;
  double budget = 0.0;
  double roi_mse = 0.0;
};

EpisodeRecord make_record(const std::string& agent, std::size_t frame, const env::EpisodeOutcome& outcome);

struct GroupStat {
  std::string agent;
  std::string roi_setting;
  double qp_l = 0.0;
  std::size_t frames = 0;
  double mean_deviation = 0.0;      // deadbanded, %
  double mean_raw_deviation = 0.0;  // no deadband, %
  double mean_bits = 0.0;
  double mean_roi_mse = 0.0;
  double mean_psnr = 0.0;  // PSNR of the mean ROI-weighted MSE
};

struct BdStat {
  std::string agent;
  std::string roi_setting;
  double bd_rate = 0.0;  // mean over frames, %
  std::size_t frames_used = 0;
  std::size_t frames_skipped = 0;
};

struct RunReport {
  std::vector<GroupStat> groups;   // sorted by (agent, roi_setting, qp_l)
  std::vector<BdStat> bd;          // sorted by (agent, roi_setting)
  std::vector<std::string> notes;
  double deadband = kDefaultDeadband;
  std::string anchor;

  /// Mean deadbanded deviation of an agent over all rate points of a setting.
  [[nodiscard]] double mean_deviation(const std::string& agent, const std::string& roi_setting) const;
  [[nodiscard]] const BdStat* find_bd(const std::string& agent, const std::string& roi_setting) const;
};

/// Groups records by (agent, ROI setting, rate point) and computes per-frame
/// BD-rates of every agent against `anchor` across the rate points.
RunReport aggregate(const std::vector<EpisodeRecord>& records, const std::string& anchor = "fixed-qp",
                    double deadband = kDefaultDeadband, BdVariant variant = BdVariant::CubicFit);

std::string report_to_json(const RunReport& report);
/// Aligned plain-text table: ROI setting rows, per-agent deviation and
/// BD-rate columns.
std::string report_to_table(const RunReport& report);

}  // namespace nfwpo::metrics
