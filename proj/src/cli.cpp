#include "nfwpo/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nfwpo/errors.hpp"
#include "nfwpo/runtime.hpp"

namespace nfwpo::cli {

using json = nlohmann::json;

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x6e66u, tag};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ';';
    s += fmt_g(v[i]);
  }
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("write failed for " + path.string());
}

void write_echo(const RunConfig& config, const fs::path& output) {
  auto echo = output;
  echo.replace_extension();
  write_file(echo.string() + ".config.json", run_config_to_json(config));
}

std::string bd_variant_name(metrics::BdVariant v) {
  return v == metrics::BdVariant::CubicFit ? "cubic" : "pchip";
}

metrics::BdVariant parse_bd_variant(const std::string& s) {
  if (s == "cubic") return metrics::BdVariant::CubicFit;
  if (s == "pchip") return metrics::BdVariant::PiecewiseCubic;
  throw ConfigError("unknown bd_variant '" + s + "' (expected cubic or pchip)");
}

train::TrainConfig group_config(const RunConfig& config, const std::vector<double>& group) {
  auto c = config.train;
  c.agent = config.agent;
  c.rate_points = group;
  return c;
}

std::uint64_t group_seed(const RunConfig& config, std::size_t index) {
  const auto seed = config.require_seed();
  return config.shared_agent ? seed : derive_seed(seed, 0x100u + static_cast<std::uint32_t>(index));
}

std::string log_name(const RunConfig& config, const std::vector<double>& group) {
  auto name = checkpoint_name(config, group);
  return "train" + name.substr(std::string("checkpoint").size(), name.size() - 14) + ".csv";
}

void save_checkpoint(const train::Trainer& trainer, const fs::path& path, std::uint64_t log_bytes) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    trainer.save(out, log_bytes);
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

struct EvalRow {
  metrics::EpisodeRecord record;
  std::vector<double> qps;
  std::string roi_mask;
};

std::vector<EvalRow> read_eval_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EvalRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 13) throw FormatError("malformed row in " + path.string());
    EvalRow r;
    try {
      r.record.agent = f[0];
      r.record.roi_setting = f[1];
      r.record.qp_l = std::stod(f[2]);
      r.record.frame = std::stoul(f[3]);
      r.record.budget = std::stod(f[4]);
      r.record.total_bits = std::stod(f[5]);
      r.record.roi_mse = std::stod(f[8]);
      for (const auto& q : split(f[10], ';')) r.qps.push_back(std::stod(q));
    } catch (const std::logic_error&) {
      throw FormatError("malformed number in " + path.string());
    }
    r.roi_mask = f[12];
    rows.push_back(std::move(r));
  }
  return rows;
}

constexpr const char* kEvalHeader =
    "agent,roi_setting,qp_l,frame,budget,total_bits,deviation_pct,raw_deviation_pct,roi_weighted_mse,psnr_db,qps,"
    "raw_qps,roi_mask";

}  // namespace

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ConfigError("a seed is required (--seed <u64>)");
  return *seed;
}

fs::path RunConfig::frame_set_path() const { return frames_path ? *frames_path : out_dir / "frames.json"; }

fs::path RunConfig::agent_dir(train::AgentKind kind) const { return out_dir / train::to_string(kind); }

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  try {
    if (j.contains("train")) c.train = train::config_from_json(j["train"].dump());
    c.agent = c.train.agent;
    if (j.contains("agent")) c.agent = train::parse_agent_kind(j["agent"].get<std::string>());
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out")) c.out_dir = j["out"].get<std::string>();
    if (j.contains("frames")) {
      const auto& f = j["frames"];
      c.frames.count = f.value("count", c.frames.count);
      c.frames.n_ctus = f.value("n_ctus", c.frames.n_ctus);
      if (f.contains("roi_policies")) {
        c.frames.roi_policies.clear();
        for (const auto& p : f["roi_policies"]) c.frames.roi_policies.push_back(env::parse_roi_policy(p));
      }
      if (f.contains("path")) c.frames_path = f["path"].get<std::string>();
    }
    c.shared_agent = j.value("shared_agent", c.shared_agent);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("compare_agents")) {
      c.compare_agents.clear();
      for (const auto& a : j["compare_agents"]) c.compare_agents.push_back(train::parse_agent_kind(a));
    }
    if (j.contains("bd_variant")) c.bd_variant = parse_bd_variant(j["bd_variant"].get<std::string>());
    c.deadband = j.value("deadband", c.deadband);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config field: ") + e.what());
  }
  c.train.agent = c.agent;
  if (c.frames.n_ctus < 1) throw ConfigError("frames.n_ctus must be positive");
  if (c.frames.roi_policies.empty()) throw ConfigError("frames.roi_policies must not be empty");
  if (c.checkpoint_every == 0) throw ConfigError("checkpoint_every must be positive");
  if (!(c.deadband >= 0.0)) throw ConfigError("deadband must be non-negative");
  return c;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_file(path)); }

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["command"] = c.command;
  j["agent"] = train::to_string(c.agent);
  if (c.seed) j["seed"] = *c.seed;
  j["out"] = c.out_dir.string();
  j["train"] = json::parse(train::config_to_json(c.train));
  json roi = json::array();
  for (auto p : c.frames.roi_policies) roi.push_back(env::to_string(p));
  j["frames"] = {{"count", c.frames.count}, {"n_ctus", c.frames.n_ctus}, {"roi_policies", roi}};
  if (c.frames_path) j["frames"]["path"] = c.frames_path->string();
  j["shared_agent"] = c.shared_agent;
  j["checkpoint_every"] = c.checkpoint_every;
  json agents = json::array();
  for (auto a : c.compare_agents) agents.push_back(train::to_string(a));
  j["compare_agents"] = agents;
  j["bd_variant"] = bd_variant_name(c.bd_variant);
  j["deadband"] = c.deadband;
  return j.dump(2) + "\n";
}

std::vector<std::vector<double>> training_groups(const RunConfig& config) {
  if (config.shared_agent) return {config.train.rate_points};
  std::vector<std::vector<double>> groups;
  for (double qp : config.train.rate_points) groups.push_back({qp});
  return groups;
}

std::string checkpoint_name(const RunConfig& config, const std::vector<double>& group) {
  if (config.shared_agent) return "checkpoint.bin";
  return "checkpoint_qp" + fmt_g(group.front()) + ".bin";
}

std::vector<env::Frame> make_eval_frames(const FrameSetSpec& spec, const std::vector<double>& rate_points,
                                         std::uint64_t seed) {
  std::vector<env::Frame> frames;
  // One content seed for every setting and rate point: frame k is the same
  // picture under each ROI layout and budget.
  const auto content_seed = derive_seed(seed, 0x200u);
  for (auto policy : spec.roi_policies) {
    for (double qp : rate_points) {
      env::FrameGenOptions o;
      o.seed = content_seed;
      o.count = spec.count;
      o.n_ctus = spec.n_ctus;
      o.roi_policy = policy;
      o.qp_l = qp;
      auto part = env::generate_frames(o);
      frames.insert(frames.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
  }
  return frames;
}

fs::path cmd_gen_frames(const RunConfig& config) {
  const auto frames = make_eval_frames(config.frames, config.train.rate_points, config.require_seed());
  const auto path = config.frame_set_path();
  write_file(path, env::frames_to_json(frames));
  write_echo(config, path);
  return path;
}

bool cmd_train(const RunConfig& config, std::ostream& status) {
  const auto dir = config.agent_dir(config.agent);
  fs::create_directories(dir);
  write_file(dir / "train.config.json", run_config_to_json(config));
  if (config.agent == train::AgentKind::FixedQp) {
    status << "fixed-qp has nothing to train\n";
    return true;
  }
  bool finished = true;
  const auto groups = training_groups(config);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto tcfg = group_config(config, groups[g]);
    const auto seed = group_seed(config, g);
    const auto ckpt = dir / checkpoint_name(config, groups[g]);
    const auto log_path = dir / log_name(config, groups[g]);

    std::optional<train::Trainer> trainer;
    std::ofstream log_file;
    if (config.resume && fs::exists(ckpt)) {
      std::ifstream in(ckpt, std::ios::binary);
      std::uint64_t log_bytes = 0;
      trainer.emplace(train::Trainer::load(in, {}, &log_bytes));
      if (train::config_to_json(trainer->config()) != train::config_to_json(tcfg) || trainer->seed() != seed)
        throw ConfigError("checkpoint " + ckpt.string() + " was written with a different config or seed");
      if (fs::exists(log_path)) fs::resize_file(log_path, log_bytes);
      log_file.open(log_path, std::ios::binary | std::ios::app);
    } else {
      trainer.emplace(tcfg, seed);
      log_file.open(log_path, std::ios::binary | std::ios::trunc);
    }
    if (!log_file) throw std::runtime_error("cannot write " + log_path.string());
    train::TrainLog log(log_file, fs::file_size(log_path) == 0);

    auto checkpoint = [&](const train::Trainer& t) {
      log_file.flush();
      save_checkpoint(t, ckpt, fs::file_size(log_path));
    };
    const auto total = tcfg.episodes;
    const auto until = config.stop_after ? std::min(*config.stop_after, total) : total;
    trainer->run(until, &log, [&](const train::Trainer& t) {
      if (t.episodes_done() % config.checkpoint_every == 0) checkpoint(t);
    });
    checkpoint(*trainer);
    status << train::to_string(config.agent) << " [" << join(groups[g]) << "]: " << trainer->episodes_done() << "/"
           << total << " episodes\n";
    if (trainer->episodes_done() < total) finished = false;
  }
  return finished;
}

train::Policy load_policy(const RunConfig& config, train::AgentKind kind, double qp_l) {
  if (kind == train::AgentKind::FixedQp) return train::Policy::fixed_qp();
  auto c = config;
  c.agent = kind;
  const auto groups = training_groups(c);
  const auto it = std::find_if(groups.begin(), groups.end(), [&](const std::vector<double>& g) {
    return std::find(g.begin(), g.end(), qp_l) != g.end();
  });
  if (it == groups.end()) throw ConfigError("no trained agent covers rate point " + fmt_g(qp_l));
  const auto ckpt = c.agent_dir(kind) / checkpoint_name(c, *it);
  if (!fs::exists(ckpt)) throw ConfigError("missing checkpoint " + ckpt.string() + " (run train first)");
  std::ifstream in(ckpt, std::ios::binary);
  const auto trainer = train::Trainer::load(in);
  if (trainer.config().agent != kind) throw ConfigError("checkpoint " + ckpt.string() + " holds a different agent");
  return train::Policy::from_trainer(trainer);
}

fs::path cmd_eval(const RunConfig& config) {
  config.require_seed();
  const auto frames_path = config.frame_set_path();
  if (!fs::exists(frames_path)) throw ConfigError("missing frame set " + frames_path.string() + " (run gen-frames)");
  const auto frames = env::load_frames(frames_path.string());

  std::map<double, train::Policy> policies;
  std::map<std::pair<std::string, double>, std::size_t> counters;
  std::ostringstream csv;
  csv << kEvalHeader << '\n';
  const auto agent = train::to_string(config.agent);
  for (const auto& frame : frames) {
    auto p = policies.find(frame.qp_l);
    if (p == policies.end()) p = policies.emplace(frame.qp_l, load_policy(config, config.agent, frame.qp_l)).first;
    const auto e = train::evaluate_frame(p->second, frame);
    const auto& o = e.outcome;
    const auto index = counters[{o.roi_setting, o.qp_l}]++;
    const double mse = metrics::roi_weighted_mse(o);
    std::string mask;
    for (bool r : o.roi) mask += r ? '1' : '0';
    csv << agent << ',' << o.roi_setting << ',' << fmt_g(o.qp_l) << ',' << index << ',' << fmt_g(o.budget) << ','
        << fmt_g(o.total_bits) << ',' << fmt_g(metrics::rate_deviation(o.total_bits, o.budget, config.deadband))
        << ',' << fmt_g(metrics::rate_deviation(o.total_bits, o.budget, 0.0)) << ',' << fmt_g(mse) << ','
        << fmt_g(metrics::psnr_from_mse(mse)) << ',' << join(o.qps) << ',' << join(e.raw_qps) << ',' << mask
        << '\n';
  }
  const auto path = config.agent_dir(config.agent) / "eval.csv";
  write_file(path, csv.str());
  write_echo(config, path);
  return path;
}

metrics::RunReport cmd_report(const RunConfig& config) {
  std::vector<fs::path> inputs;
  if (fs::exists(config.out_dir))
    for (const auto& entry : fs::directory_iterator(config.out_dir))
      if (entry.is_directory() && fs::exists(entry.path() / "eval.csv")) inputs.push_back(entry.path() / "eval.csv");
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) throw ConfigError("no eval.csv found under " + config.out_dir.string() + " (run eval)");

  std::vector<metrics::EpisodeRecord> records;
  std::ostringstream heat;
  heat << "agent,roi_setting,qp_l,frame,ctu,roi,qp\n";
  for (const auto& path : inputs)
    for (const auto& row : read_eval_csv(path)) {
      const auto& r = row.record;
      for (std::size_t i = 0; i < row.qps.size(); ++i)
        heat << r.agent << ',' << r.roi_setting << ',' << fmt_g(r.qp_l) << ',' << r.frame << ',' << i << ','
             << (i < row.roi_mask.size() ? row.roi_mask[i] : '0') << ',' << fmt_g(row.qps[i]) << '\n';
      records.push_back(r);
    }
  auto report = metrics::aggregate(records, train::to_string(train::AgentKind::FixedQp), config.deadband,
                                   config.bd_variant);
  write_file(config.out_dir / "report.json", metrics::report_to_json(report));
  write_file(config.out_dir / "report.txt", metrics::report_to_table(report));
  write_file(config.out_dir / "heatmap.csv", heat.str());
  write_echo(config, config.out_dir / "report.json");
  return report;
}

void cmd_compare(const RunConfig& config, std::ostream& status) {
  if (!fs::exists(config.frame_set_path())) cmd_gen_frames(config);
  for (auto kind : config.compare_agents) {
    auto c = config;
    c.agent = kind;
    c.train.agent = kind;
    bool trained = true;
    for (const auto& g : training_groups(c))
      trained &= kind == train::AgentKind::FixedQp || fs::exists(c.agent_dir(kind) / checkpoint_name(c, g));
    if (!trained || c.resume) cmd_train(c, status);
    cmd_eval(c);
  }
  cmd_report(config);
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  tune_allocator();
  CLI::App app{"ROI bit allocation with Frank-Wolfe policy optimization"};
  app.require_subcommand(1);

  std::string config_path, agent, out_dir;
  std::optional<std::uint64_t> seed, stop_after;
  bool resume = false;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "random seed (required)");
    sub->add_option("--agent", agent, "nfwpo | single | dual | proj-ddpg | fixed-qp");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_flag("--resume", resume, "continue from existing checkpoints");
    sub->add_option("--stop-after", stop_after, "stop training after this many episodes");
  };
  for (const char* name : {"gen-frames", "train", "eval", "compare", "report"}) {
    auto* sub = app.add_subcommand(name);
    add_common(sub);
  }
  app.get_subcommand("gen-frames")->description("write the held-out frame set");
  app.get_subcommand("train")->description("train one agent");
  app.get_subcommand("eval")->description("evaluate one agent on the frame set");
  app.get_subcommand("compare")->description("train/evaluate every configured agent and report");
  app.get_subcommand("report")->description("aggregate eval logs into tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    config.command = app.get_subcommands().front()->get_name();
    if (seed) config.seed = seed;
    if (!agent.empty()) config.agent = train::parse_agent_kind(agent);
    config.train.agent = config.agent;
    if (!out_dir.empty()) config.out_dir = out_dir;
    config.resume = resume;
    config.stop_after = stop_after;
    config.require_seed();
    config.train.validate();

    const auto& cmd = config.command;
    if (cmd == "gen-frames") {
      out << cmd_gen_frames(config).string() << '\n';
    } else if (cmd == "train") {
      cmd_train(config, out);
    } else if (cmd == "eval") {
      out << cmd_eval(config).string() << '\n';
    } else if (cmd == "compare") {
      cmd_compare(config, out);
      out << read_file(config.out_dir / "report.txt");
    } else {
      cmd_report(config);
      out << read_file(config.out_dir / "report.txt");
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace nfwpo::cli
