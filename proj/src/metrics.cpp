#include "nfwpo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <Eigen/Dense>
#include <json.hpp>

#include "nfwpo/errors.hpp"

namespace nfwpo::metrics {

double rate_deviation(double actual_bits, double target_bits, double deadband) {
  if (!(target_bits > 0.0)) throw ConfigError("rate deviation needs a positive target");
  const double d = std::abs(actual_bits - target_bits) / target_bits;
  return d <= deadband ? 0.0 : 100.0 * d;
}

double roi_weighted_mse(double mse_roi_sum, std::size_t n_roi, double mse_nroi_sum, std::size_t n_nroi, double w) {
  if (n_roi + n_nroi == 0) throw ConfigError("ROI-weighted MSE of an empty frame");
  return (mse_roi_sum * w + mse_nroi_sum) / (static_cast<double>(n_roi) * w + static_cast<double>(n_nroi));
}

double roi_weighted_mse(const env::EpisodeOutcome& o, double w) {
  double roi_sum = 0.0, nroi_sum = 0.0;
  std::size_t n_roi = 0, n_nroi = 0;
  for (std::size_t i = 0; i < o.units.size(); ++i) {
    if (o.roi[i]) {
      roi_sum += o.units[i].mse;
      ++n_roi;
    } else {
      nroi_sum += o.units[i].mse;
      ++n_nroi;
    }
  }
  return roi_weighted_mse(roi_sum, n_roi, nroi_sum, n_nroi, w);
}

double psnr_from_mse(double mse, double peak) {
  if (!(mse > 0.0)) {
    std::cerr << "warning: PSNR of non-positive MSE reported as infinite quality\n";
    return std::numeric_limits<double>::infinity();
  }
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

void check_curve(const std::vector<RdPoint>& c, const char* which) {
  if (c.size() < 4) throw ConfigError(std::string("BD-rate needs at least 4 points on the ") + which + " curve");
  for (const auto& p : c)
    if (!(p.bits > 0.0) || !std::isfinite(p.quality))
      throw ConfigError(std::string("BD-rate point on the ") + which + " curve has non-positive bits or bad quality");
}

// Least-squares cubic in x = quality - center, coefficients low to high.
Eigen::Vector4d fit_cubic(const std::vector<RdPoint>& c, double center) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(c.size()), 4);
  Eigen::VectorXd y(static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double x = c[i].quality - center;
    const auto r = static_cast<Eigen::Index>(i);
    a(r, 0) = 1.0;
    a(r, 1) = x;
    a(r, 2) = x * x;
    a(r, 3) = x * x * x;
    y[r] = std::log10(c[i].bits);
  }
  return a.colPivHouseholderQr().solve(y);
}

double integrate_cubic(const Eigen::Vector4d& p, double center, double lo, double hi) {
  auto antiderivative = [&](double q) {
    const double x = q - center;
    return x * (p[0] + x * (p[1] / 2.0 + x * (p[2] / 3.0 + x * p[3] / 4.0)));
  };
  return antiderivative(hi) - antiderivative(lo);
}

// Monotone piecewise-cubic Hermite interpolant of log10(bits) over quality.
double integrate_pchip(std::vector<RdPoint> c, double lo, double hi) {
  std::sort(c.begin(), c.end(), [](const RdPoint& a, const RdPoint& b) { return a.quality < b.quality; });
  const std::size_t n = c.size();
  std::vector<double> x(n), y(n), h(n - 1), s(n - 1), d(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = c[i].quality;
    y[i] = std::log10(c[i].bits);
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = x[i + 1] - x[i];
    if (!(h[i] > 0.0)) throw ConfigError("piecewise BD-rate needs distinct quality values");
    s[i] = (y[i + 1] - y[i]) / h[i];
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (s[i - 1] * s[i] <= 0.0) {
      d[i] = 0.0;
    } else {
      const double w1 = 2.0 * h[i] + h[i - 1], w2 = h[i] + 2.0 * h[i - 1];
      d[i] = (w1 + w2) / (w1 / s[i - 1] + w2 / s[i]);
    }
  }
  auto end_slope = [](double h0, double h1, double s0, double s1) {
    double v = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if (v * s0 <= 0.0) return 0.0;
    if (s0 * s1 <= 0.0 && std::abs(v) > std::abs(3.0 * s0)) return 3.0 * s0;
    return v;
  };
  if (n == 2) {
    d[0] = d[1] = s[0];
  } else {
    d[0] = end_slope(h[0], h[1], s[0], s[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
  }
  auto eval = [&](std::size_t i, double q) {
    const double t = (q - x[i]) / h[i];
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y[i] + (t3 - 2 * t2 + t) * h[i] * d[i] + (-2 * t3 + 3 * t2) * y[i + 1] +
           (t3 - t2) * h[i] * d[i + 1];
  };
  // Two-point Gauss-Legendre is exact for cubics.
  const double g = 1.0 / std::sqrt(3.0);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double a = std::max(lo, x[i]), b = std::min(hi, x[i + 1]);
    if (b <= a) continue;
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    total += half * (eval(i, mid - half * g) + eval(i, mid + half * g));
  }
  return total;
}

std::pair<double, double> quality_range(const std::vector<RdPoint>& c) {
  const auto [lo, hi] = std::minmax_element(c.begin(), c.end(),
                                            [](const RdPoint& a, const RdPoint& b) { return a.quality < b.quality; });
  return {lo->quality, hi->quality};
}

double mean_quality(const std::vector<RdPoint>& c) {
  double s = 0.0;
  for (const auto& p : c) s += p.quality;
  return s / static_cast<double>(c.size());
}

}  // namespace

double bd_rate(std::vector<RdPoint> anchor, std::vector<RdPoint> test, BdVariant variant) {
  check_curve(anchor, "anchor");
  check_curve(test, "test");
  const auto [a_lo, a_hi] = quality_range(anchor);
  const auto [t_lo, t_hi] = quality_range(test);
  const double lo = std::max(a_lo, t_lo), hi = std::min(a_hi, t_hi);
  if (!(hi > lo)) throw NoOverlapError("rate-quality curves do not overlap in quality");

  double int_anchor = 0.0, int_test = 0.0;
  if (variant == BdVariant::CubicFit) {
    const double ca = mean_quality(anchor), ct = mean_quality(test);
    int_anchor = integrate_cubic(fit_cubic(anchor, ca), ca, lo, hi);
    int_test = integrate_cubic(fit_cubic(test, ct), ct, lo, hi);
  } else {
    int_anchor = integrate_pchip(anchor, lo, hi);
    int_test = integrate_pchip(test, lo, hi);
  }
  const double avg = (int_test - int_anchor) / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

EpisodeRecord make_record(const std::string& agent, std::size_t frame, const env::EpisodeOutcome& o) {
  EpisodeRecord r;
  r.agent = agent;
  r.roi_setting = o.roi_setting;
  r.qp_l = o.qp_l;
  r.frame = frame;
  r.total_bits = o.total_bits;
  r.budget = o.budget;
  r.roi_mse = roi_weighted_mse(o);
  return r;
}

double RunReport::mean_deviation(const std::string& agent, const std::string& roi_setting) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups)
    if (g.agent == agent && g.roi_setting == roi_setting) {
      sum += g.mean_deviation * static_cast<double>(g.frames);
      n += g.frames;
    }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

const BdStat* RunReport::find_bd(const std::string& agent, const std::string& roi_setting) const {
  for (const auto& b : bd)
    if (b.agent == agent && b.roi_setting == roi_setting) return &b;
  return nullptr;
}

RunReport aggregate(const std::vector<EpisodeRecord>& records, const std::string& anchor, double deadband,
                    BdVariant variant) {
  RunReport report;
  report.deadband = deadband;
  report.anchor = anchor;

  using GroupKey = std::tuple<std::string, std::string, double>;
  std::map<GroupKey, std::vector<const EpisodeRecord*>> groups;
  for (const auto& r : records) groups[{r.agent, r.roi_setting, r.qp_l}].push_back(&r);

  for (const auto& [key, members] : groups) {
    GroupStat g;
    std::tie(g.agent, g.roi_setting, g.qp_l) = key;
    g.frames = members.size();
    for (const auto* r : members) {
      g.mean_deviation += rate_deviation(r->total_bits, r->budget, deadband);
      g.mean_raw_deviation += rate_deviation(r->total_bits, r->budget, 0.0);
      g.mean_bits += r->total_bits;
      g.mean_roi_mse += r->roi_mse;
    }
    const auto n = static_cast<double>(g.frames);
    g.mean_deviation /= n;
    g.mean_raw_deviation /= n;
    g.mean_bits /= n;
    g.mean_roi_mse /= n;
    g.mean_psnr = psnr_from_mse(g.mean_roi_mse);
    report.groups.push_back(g);
  }

  // Per-frame R-D curves across rate points: (agent, setting, frame) -> points.
  using CurveKey = std::tuple<std::string, std::string, std::size_t>;
  std::map<CurveKey, std::vector<RdPoint>> curves;
  for (const auto& r : records)
    curves[{r.agent, r.roi_setting, r.frame}].push_back({r.total_bits, psnr_from_mse(r.roi_mse)});

  std::set<std::pair<std::string, std::string>> agent_settings;
  for (const auto& r : records) agent_settings.insert({r.agent, r.roi_setting});
  bool have_anchor = false;
  for (const auto& [agent, setting] : agent_settings) have_anchor |= agent == anchor;
  if (!have_anchor && !records.empty()) report.notes.push_back("anchor '" + anchor + "' absent; BD-rates omitted");

  for (const auto& [agent, setting] : agent_settings) {
    if (!have_anchor) break;
    BdStat b;
    b.agent = agent;
    b.roi_setting = setting;
    double sum = 0.0;
    for (const auto& [key, points] : curves) {
      if (std::get<0>(key) != agent || std::get<1>(key) != setting) continue;
      const auto a = curves.find({anchor, setting, std::get<2>(key)});
      if (a == curves.end()) {
        ++b.frames_skipped;
        continue;
      }
      try {
        sum += bd_rate(a->second, points, variant);
        ++b.frames_used;
      } catch (const NoOverlapError&) {
        ++b.frames_skipped;
      } catch (const ConfigError&) {
        ++b.frames_skipped;
      }
    }
    if (b.frames_used == 0) {
      report.notes.push_back("no BD-rate for " + agent + " / " + setting + " (no overlapping curves)");
      continue;
    }
    b.bd_rate = sum / static_cast<double>(b.frames_used);
    if (b.frames_skipped > 0)
      report.notes.push_back(agent + " / " + setting + ": " + std::to_string(b.frames_skipped) +
                             " frame(s) without quality overlap skipped in BD-rate");
    report.bd.push_back(b);
  }
  return report;
}

std::string report_to_json(const RunReport& report) {
  nlohmann::json j;
  j["format"] = "nfwpo-report";
  j["version"] = 1;
  j["anchor"] = report.anchor;
  j["deadband"] = report.deadband;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : report.groups)
    j["groups"].push_back({{"agent", g.agent},
                           {"roi_setting", g.roi_setting},
                           {"qp_l", g.qp_l},
                           {"frames", g.frames},
                           {"mean_deviation_pct", g.mean_deviation},
                           {"mean_raw_deviation_pct", g.mean_raw_deviation},
                           {"mean_bits", g.mean_bits},
                           {"mean_roi_mse", g.mean_roi_mse},
                           {"mean_psnr_db", g.mean_psnr}});
  j["bd_rate"] = nlohmann::json::array();
  for (const auto& b : report.bd)
    j["bd_rate"].push_back({{"agent", b.agent},
                            {"roi_setting", b.roi_setting},
                            {"bd_rate_pct", b.bd_rate},
                            {"frames_used", b.frames_used},
                            {"frames_skipped", b.frames_skipped}});
  j["notes"] = report.notes;
  return j.dump(2) + "\n";
}

std::string report_to_table(const RunReport& report) {
  std::vector<std::string> agents, settings;
  std::set<double> rate_points;
  for (const auto& g : report.groups) {
    if (std::find(agents.begin(), agents.end(), g.agent) == agents.end()) agents.push_back(g.agent);
    if (std::find(settings.begin(), settings.end(), g.roi_setting) == settings.end())
      settings.push_back(g.roi_setting);
    rate_points.insert(g.qp_l);
  }
  std::ostringstream out;
  char cell[64];
  auto pad = [](const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); };
  const std::size_t w0 = 10, w = 12;

  out << "Rate deviation (%, deadband " << report.deadband * 100.0 << "%) and BD-rate (%) vs " << report.anchor
      << "\n\n";
  out << pad("ROI", w0) << "| ";
  for (const auto& a : agents) out << pad("dev:" + a, w);
  out << "| ";
  for (const auto& a : agents) out << pad("bd:" + a, w);
  out << "\n" << std::string(w0 + 4 + 2 * w * agents.size(), '-') << "\n";
  for (const auto& s : settings) {
    out << pad(s, w0) << "| ";
    for (const auto& a : agents) {
      std::snprintf(cell, sizeof cell, "%.2f", report.mean_deviation(a, s));
      out << pad(cell, w);
    }
    out << "| ";
    for (const auto& a : agents) {
      const auto* b = report.find_bd(a, s);
      if (b) {
        std::snprintf(cell, sizeof cell, "%.2f", b->bd_rate);
        out << pad(cell, w);
      } else {
        out << pad("n/a", w);
      }
    }
    out << "\n";
  }

  out << "\nPer rate point deviation (%)\n\n" << pad("ROI", w0) << pad("QP_l", 6) << "| ";
  for (const auto& a : agents) out << pad(a, w);
  out << "\n" << std::string(w0 + 8 + w * agents.size(), '-') << "\n";
  for (const auto& s : settings)
    for (double qp : rate_points) {
      std::snprintf(cell, sizeof cell, "%g", qp);
      out << pad(s, w0) << pad(cell, 6) << "| ";
      for (const auto& a : agents) {
        const auto it = std::find_if(report.groups.begin(), report.groups.end(), [&](const GroupStat& g) {
          return g.agent == a && g.roi_setting == s && g.qp_l == qp;
        });
        if (it == report.groups.end()) {
          out << pad("-", w);
        } else {
          std::snprintf(cell, sizeof cell, "%.2f", it->mean_deviation);
          out << pad(cell, w);
        }
      }
      out << "\n";
    }
  for (const auto& n : report.notes) out << "note: " << n << "\n";
  return out.str();
}

}  // namespace nfwpo::metrics
