#include <sstream>

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "nfwpo/cli.hpp"
#include "nfwpo/codec_env.hpp"
#include "nfwpo/errors.hpp"
#include "nfwpo/metrics.hpp"
#include "nfwpo/nfwpo.hpp"
#include "nfwpo/runtime.hpp"
#include "nfwpo/trainer.hpp"

namespace py = pybind11;
using namespace nfwpo;

PYBIND11_MODULE(_core, m) {
  m.doc() = "CTU-level QP allocation with Frank-Wolfe policy optimization";
  tune_allocator();

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ProtocolError>(m, "ProtocolError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<metrics::NoOverlapError>(m, "NoOverlapError", PyExc_ValueError);

  // Simulator.
  m.def("qstep", &env::qstep, py::arg("qp"));
  py::class_<env::CtuModel>(m, "CtuModel")
      .def(py::init<>())
      .def_readwrite("variance", &env::CtuModel::variance)
      .def_readwrite("gradient", &env::CtuModel::gradient)
      .def_readwrite("rate_scale", &env::CtuModel::rate_scale)
      .def_readwrite("rate_exponent", &env::CtuModel::rate_exponent)
      .def_readwrite("distortion_scale", &env::CtuModel::distortion_scale)
      .def_readwrite("roi", &env::CtuModel::roi);
  py::class_<env::EncodeResult>(m, "EncodeResult")
      .def_readonly("bits", &env::EncodeResult::bits)
      .def_readonly("mse", &env::EncodeResult::mse);
  m.def("encode_ctu", &env::encode_ctu, py::arg("ctu"), py::arg("qp"));
  py::class_<env::Frame>(m, "Frame")
      .def_readonly("ctus", &env::Frame::ctus)
      .def_readonly("budget", &env::Frame::budget)
      .def_readonly("base_qp", &env::Frame::base_qp)
      .def_readonly("qp_l", &env::Frame::qp_l)
      .def_readonly("roi_setting", &env::Frame::roi_setting)
      .def("roi_count", &env::Frame::roi_count)
      .def("__len__", &env::Frame::size);
  m.def("make_frame", &env::make_frame, py::arg("ctus"), py::arg("qp_l"), py::arg("roi_setting") = "");
  m.def(
      "generate_frames",
      [](std::uint64_t seed, std::size_t count, int n_ctus, const std::string& roi_policy, double qp_l) {
        return env::generate_frames({seed, count, n_ctus, env::parse_roi_policy(roi_policy), qp_l});
      },
      py::arg("seed"), py::arg("count"), py::arg("n_ctus") = env::kDefaultCtusPerFrame,
      py::arg("roi_policy") = "regular", py::arg("qp_l") = 27.0);
  m.def("frames_to_json", &env::frames_to_json);
  m.def("frames_from_json", &env::frames_from_json);

  py::class_<env::EpisodeOutcome>(m, "EpisodeOutcome")
      .def_readonly("qps", &env::EpisodeOutcome::qps)
      .def_readonly("units", &env::EpisodeOutcome::units)
      .def_readonly("roi", &env::EpisodeOutcome::roi)
      .def_readonly("total_bits", &env::EpisodeOutcome::total_bits)
      .def_readonly("budget", &env::EpisodeOutcome::budget)
      .def_readonly("qp_l", &env::EpisodeOutcome::qp_l)
      .def("weighted_distortion", &env::EpisodeOutcome::weighted_distortion,
           py::arg("roi_weight") = env::kDefaultRoiWeight);
  m.def(
      "run_episode",
      [](const env::Frame& frame, const std::function<double(std::vector<double>)>& policy) {
        return env::run_episode(frame, [&](const env::EnvState& s) {
          return policy(std::vector<double>(s.features.begin(), s.features.end()));
        });
      },
      py::arg("frame"), py::arg("policy"), "Codes a frame; policy maps the state features to an absolute QP.");

  py::class_<env::OracleResult>(m, "OracleResult")
      .def_readonly("feasible", &env::OracleResult::feasible)
      .def_readonly("qps", &env::OracleResult::qps)
      .def_readonly("total_bits", &env::OracleResult::total_bits)
      .def_readonly("weighted_distortion", &env::OracleResult::weighted_distortion);
  m.def(
      "oracle_allocate",
      [](const env::Frame& frame, const std::vector<double>& grid, double epsilon, double w) {
        return env::oracle_allocate(frame, grid, epsilon, w);
      },
      py::arg("frame"), py::arg("qp_grid"), py::arg("epsilon"), py::arg("roi_weight") = env::kDefaultRoiWeight);

  // Frank-Wolfe kernel on explicit rate values.
  py::class_<fw::FeasibleSet>(m, "FeasibleSet")
      .def("qps", &fw::FeasibleSet::qps)
      .def("min", &fw::FeasibleSet::min)
      .def("max", &fw::FeasibleSet::max)
      .def("contains", &fw::FeasibleSet::contains)
      .def_readonly("fallback", &fw::FeasibleSet::fallback)
      .def("__len__", &fw::FeasibleSet::size);
  m.def(
      "feasible_set",
      [](double base_qp, const std::vector<double>& rate_values, double epsilon, int min_tenths, int max_tenths,
         int step_tenths) {
        return fw::feasible_set(fw::QpGrid{base_qp, min_tenths, max_tenths, step_tenths}, rate_values, epsilon);
      },
      py::arg("base_qp"), py::arg("rate_values"), py::arg("epsilon"), py::arg("min_tenths") = -100,
      py::arg("max_tenths") = 100, py::arg("step_tenths") = 1);
  m.def("project", &fw::project, py::arg("action"), py::arg("feasible"));
  m.def("fw_direction", &fw::fw_direction, py::arg("grad_qp"), py::arg("feasible"), py::arg("projected"));
  m.def("reference_action", &fw::reference_action, py::arg("projected"), py::arg("direction"), py::arg("alpha"));

  // Metrics.
  m.def("rate_deviation", &metrics::rate_deviation, py::arg("actual_bits"), py::arg("target_bits"),
        py::arg("deadband") = metrics::kDefaultDeadband);
  m.def("roi_weighted_mse",
        py::overload_cast<double, std::size_t, double, std::size_t, double>(&metrics::roi_weighted_mse),
        py::arg("mse_roi_sum"), py::arg("n_roi"), py::arg("mse_nroi_sum"), py::arg("n_nroi"),
        py::arg("w") = metrics::kReportRoiWeight);
  m.def("psnr_from_mse", &metrics::psnr_from_mse, py::arg("mse"), py::arg("peak") = metrics::kPeak8Bit);
  m.def(
      "bd_rate",
      [](const std::vector<std::pair<double, double>>& anchor, const std::vector<std::pair<double, double>>& test,
         const std::string& variant) {
        auto conv = [](const std::vector<std::pair<double, double>>& v) {
          std::vector<metrics::RdPoint> out;
          for (auto [b, q] : v) out.push_back({b, q});
          return out;
        };
        const auto var = variant == "pchip" ? metrics::BdVariant::PiecewiseCubic : metrics::BdVariant::CubicFit;
        return metrics::bd_rate(conv(anchor), conv(test), var);
      },
      py::arg("anchor"), py::arg("test"), py::arg("variant") = "cubic",
      "Curves are lists of (bits, quality_db) pairs.");

  // Training and evaluation.
  py::class_<train::Trainer>(m, "Trainer")
      .def(py::init([](const std::string& config_json, std::uint64_t seed) {
             return train::Trainer(train::config_from_json(config_json), seed);
           }),
           py::arg("config_json"), py::arg("seed"))
      .def("run", [](train::Trainer& t, std::optional<std::uint64_t> until) { t.run(until); },
           py::arg("until") = py::none(), py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("episodes_done", &train::Trainer::episodes_done)
      .def_property_readonly("last_episode_deviation", &train::Trainer::last_episode_deviation)
      .def("config_json", [](const train::Trainer& t) { return train::config_to_json(t.config()); })
      .def("checkpoint",
           [](const train::Trainer& t) {
             std::ostringstream out;
             t.save(out);
             return py::bytes(out.str());
           })
      .def_static("restore", [](const py::bytes& data) {
        std::istringstream in{std::string(data)};
        return train::Trainer::load(in);
      });
  m.def("default_config_json", [] { return train::config_to_json(train::TrainConfig{}); });

  py::class_<train::EvalEpisode>(m, "EvalEpisode")
      .def_readonly("outcome", &train::EvalEpisode::outcome)
      .def_readonly("raw_qps", &train::EvalEpisode::raw_qps);
  m.def(
      "evaluate",
      [](const train::Trainer& t, const env::Frame& frame) {
        return train::evaluate_frame(train::Policy::from_trainer(t), frame);
      },
      py::arg("trainer"), py::arg("frame"), "Greedy, noise-free rollout of a trained agent.");
  m.def(
      "evaluate_fixed_qp", [](const env::Frame& frame) { return train::evaluate_frame(train::Policy::fixed_qp(), frame); },
      py::arg("frame"));

  m.def(
      "cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "nfwpo");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        std::ostringstream out, err;
        const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
