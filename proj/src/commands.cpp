#include "chyll/commands.hpp"

#include "chyll/control.hpp"
#include "chyll/error.hpp"
#include "chyll/evaluation.hpp"
#include "chyll/hybrid_sim.hpp"
#include "chyll/io.hpp"
#include "chyll/tda.hpp"
#include "chyll/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <set>
#include <sstream>

namespace chyll::cmd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads keys out of a command section and rejects whatever is left over.
class Section {
 public:
  Section(const json& j, std::string name) : name_(std::move(name)) {
    if (j.is_null()) return;
    if (!j.is_object()) throw ConfigError(name_ + ": config must be a JSON object");
    j_ = j;
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    used_.insert(key);
    if (!has(key)) throw ConfigError(name_ + ": missing required key '" + key + "'");
    return convert<T>(key);
  }

  json raw(const std::string& key) {
    used_.insert(key);
    return has(key) ? j_.at(key) : json();
  }

  // Everything not consumed so far, for delegation to a nested schema.
  json rest() {
    json out = json::object();
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) out[k] = v;
    for (const auto& [k, v] : out.items()) used_.insert(k);
    return out;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ConfigError(name_ + ": unknown key '" + k + "'");
  }

 private:
  template <typename T>
  T convert(const std::string& key) const {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(name_ + ": key '" + key + "': " + e.what());
    }
  }

  std::string name_;
  json j_ = json::object();
  std::set<std::string> used_;
};

void say(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::is_regular_file(path)) throw ConfigError(what + " '" + path + "' does not exist");
}

void require_bundle(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("model bundle '" + dir + "' does not exist");
  for (const char* part : {"meta.json", "field.json"}) {
    if (!fs::is_regular_file(fs::path(dir) / part)) {
      throw EvaluationError("model bundle '" + dir + "' is missing " + part);
    }
  }
}

void prepare_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("output directory must not be empty");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir + "'");
}

void prepare_parent(const std::string& file) {
  if (file.empty()) throw ConfigError("output path must not be empty");
  const fs::path parent = fs::path(file).parent_path();
  if (!parent.empty()) prepare_dir(parent.string());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_json(const std::string& path, const json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

json run_generate(const json& cfg, const LogFn& log) {
  Section s(cfg, "generate");
  const std::string system = s.require<std::string>("system");
  sim::GenerateOptions opts;
  opts.count = s.get("n", opts.count);
  opts.dt = s.get("dt", opts.dt);
  opts.steps = s.get("steps", opts.steps);
  opts.seed = s.get<std::uint64_t>("seed", opts.seed);
  opts.train_fraction = s.get("train_fraction", opts.train_fraction);
  const json params_json = s.raw("params");
  const std::string out = s.require<std::string>("out");
  s.finish();

  const auto kind = sim::system_from_string(system);
  const sim::SystemParams params = params_json.is_null() ? sim::SystemParams{} : sim::SystemParams::from_json(params_json);
  if (opts.count < 2) throw ConfigError("generate: split impossible with fewer than 2 trajectories");
  if (!(opts.dt > 0)) throw ConfigError("generate: dt must be positive");
  if (opts.steps < 1) throw ConfigError("generate: steps must be >= 1");
  prepare_parent(out);

  const json effective = {{"system", sim::to_string(kind)}, {"n", opts.count},   {"dt", opts.dt},
                          {"steps", opts.steps},            {"seed", opts.seed}, {"train_fraction", opts.train_fraction},
                          {"params", params.to_json()},     {"out", out}};
  const auto spec = sim::make_system(kind, params);
  const auto t0 = std::chrono::steady_clock::now();
  const sim::Dataset ds = sim::generate_dataset(spec, opts);
  sim::save_dataset(ds, out);
  write_json(out + ".config.json", effective);

  std::size_t resets = 0;
  for (const auto& t : ds.trajectories)
    for (bool b : t.transitions) resets += b ? 1 : 0;
  json summary = {{"trajectories", ds.trajectories.size()},
                  {"train", ds.train_ids.size()},
                  {"test", ds.test_ids.size()},
                  {"resets", resets},
                  {"out", out}};
  std::ostringstream os;
  os << "generate: " << ds.trajectories.size() << " " << sim::to_string(kind) << " trajectories (" << ds.train_ids.size()
     << " train / " << ds.test_ids.size() << " test), " << resets << " resets, " << seconds_since(t0) << " s";
  say(log, os.str());
  return summary;
}

json run_train(const json& cfg, const LogFn& log) {
  Section s(cfg, "train");
  const std::string dataset = s.require<std::string>("dataset");
  const std::string out = s.require<std::string>("out");
  const std::string baseline = s.get<std::string>("baseline", "none");
  model::TrainConfig tc = model::TrainConfig::from_json(s.rest());
  s.finish();
  if (baseline == "node") tc.model = model::ModelKind::neural_ode;
  else if (baseline != "none") throw ConfigError("train: baseline must be 'none' or 'node'");
  tc.validate();
  require_file(dataset, "dataset");
  prepare_dir(out);

  const sim::Dataset ds = sim::load_dataset(dataset);
  const auto t0 = std::chrono::steady_clock::now();
  const model::ProgressFn progress = [&](const model::LogRow& row) {
    if (row.step % 100 != 0) return;
    std::ostringstream os;
    os << "train: step " << row.step << " stage " << row.stage << " loss " << row.total << " (dyn " << row.dynamics
       << ", glue " << row.gluing << ", conf " << row.conformal << ", collapse " << row.collapse << ")";
    say(log, os.str());
  };
  const model::TrainOutcome result = model::train(ds, tc, progress);

  result.model.save(out);
  io::write_file_atomic(join(out, "train_log.csv"), result.log.to_csv());
  io::write_file_atomic(join(out, "decoder_log.csv"), result.log.decoder_csv());
  write_json(join(out, "transitions.json"), result.transitions.to_json());
  json effective = result.config.to_json();
  effective["dataset"] = dataset;
  effective["out"] = out;
  effective["baseline"] = baseline;
  write_json(join(out, "config.json"), effective);

  json summary = {{"model", model::to_string(result.model.kind)},
                  {"steps", result.log.rows.size()},
                  {"retries", result.log.retries},
                  {"transitions", result.transitions.total()},
                  {"out", out}};
  if (!result.log.rows.empty()) summary["final_loss"] = result.log.rows.back().total;
  if (!result.log.decoder_loss.empty()) summary["final_decoder_loss"] = result.log.decoder_loss.back();
  std::ostringstream os;
  os << "train: done in " << seconds_since(t0) << " s, " << result.transitions.total() << " flagged transitions, "
     << result.log.retries << " retries";
  say(log, os.str());
  return summary;
}

json run_eval(const json& cfg, const LogFn& log) {
  Section s(cfg, "eval");
  const std::string model_dir = s.get<std::string>("model", "");
  const bool oracle = s.get("oracle", false);
  const std::string dataset = s.require<std::string>("dataset");
  const std::string out = s.require<std::string>("out");
  const std::string compare = s.get<std::string>("compare", "");
  model::EvalOptions opts;
  opts.horizon_mult = s.get("horizon_mult", opts.horizon_mult);
  opts.substeps = s.get("substeps", opts.substeps);
  opts.max_trajectories = s.get("max_trajectories", opts.max_trajectories);
  const std::string mode = s.get<std::string>("decode_mode", "lm");
  const json lm_json = s.raw("lm");
  const int training_horizon = s.get("training_horizon", 40);
  s.finish();

  opts.run_lm = model::decode_mode_from_string(mode) == model::DecodeMode::lm;
  if (!lm_json.is_null()) opts.lm = lm::LmConfig::from_json(lm_json);
  if (!(opts.horizon_mult > 0)) throw ConfigError("eval: horizon_mult must be positive");
  if (opts.substeps < 1) throw ConfigError("eval: substeps must be >= 1");
  if (oracle == !model_dir.empty()) throw ConfigError("eval: give exactly one of 'model' or 'oracle'");
  require_file(dataset, "dataset");
  if (!model_dir.empty()) require_bundle(model_dir);
  if (!compare.empty()) require_bundle(compare);
  prepare_dir(out);

  const sim::Dataset ds = sim::load_dataset(dataset);
  const auto t0 = std::chrono::steady_clock::now();
  model::EvalReport primary;
  if (oracle) {
    primary = model::evaluate_simulator(ds, opts, training_horizon);
  } else {
    const auto m = model::LatentModel::load(model_dir);
    if (m.system != ds.system) {
      throw ConfigError("eval: model was trained on '" + m.system + "' but the dataset is '" + ds.system + "'");
    }
    primary = model::evaluate(m, ds, opts);
  }
  json metrics = {{"model", primary.to_json()}};
  metrics["model"]["source"] = oracle ? "oracle" : model_dir;
  io::write_file_atomic(join(out, "per_trajectory.csv"), primary.to_csv());
  say(log, "eval: " + primary.model_kind + " mse_decoder " + std::to_string(primary.mse_decoder) +
               (primary.has_lm ? " mse_lm " + std::to_string(primary.mse_lm) : ""));
  if (primary.lm_fallbacks > 0) {
    say(log, "eval: warning: " + std::to_string(primary.lm_fallbacks) + " LM projections did not converge");
  }

  if (!compare.empty()) {
    const auto m = model::LatentModel::load(compare);
    const model::EvalReport other = model::evaluate(m, ds, opts);
    metrics["compare"] = other.to_json();
    metrics["compare"]["source"] = compare;
    io::write_file_atomic(join(out, "compare_per_trajectory.csv"), other.to_csv());
    say(log, "eval: compare " + other.model_kind + " mse_decoder " + std::to_string(other.mse_decoder));
  }
  write_json(join(out, "metrics.json"), metrics);

  json effective = {{"dataset", dataset},     {"out", out},         {"horizon_mult", opts.horizon_mult},
                    {"substeps", opts.substeps}, {"decode_mode", mode}, {"lm", opts.lm.to_json()},
                    {"max_trajectories", opts.max_trajectories}};
  if (oracle) {
    effective["oracle"] = true;
    effective["training_horizon"] = training_horizon;
  } else {
    effective["model"] = model_dir;
  }
  if (!compare.empty()) effective["compare"] = compare;
  write_json(join(out, "config.json"), effective);
  say(log, "eval: done in " + std::to_string(seconds_since(t0)) + " s");
  return metrics;
}

namespace {

int parse_mesh(const json& v) {
  if (v.is_null()) return 40;
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_string()) {
    const std::string text = v.get<std::string>();
    const auto x = text.find('x');
    try {
      if (x == std::string::npos) return std::stoi(text);
      const int a = std::stoi(text.substr(0, x));
      const int b = std::stoi(text.substr(x + 1));
      if (a != b) throw ConfigError("tda: mesh must be square, got '" + text + "'");
      return a;
    } catch (const std::logic_error&) {
      throw ConfigError("tda: cannot parse mesh '" + text + "'");
    }
  }
  throw ConfigError("tda: mesh must be an integer or a string like \"40x40\"");
}

}  // namespace

json run_tda(const json& cfg, const LogFn& log) {
  Section s(cfg, "tda");
  const std::string model_dir = s.get<std::string>("model", "");
  const std::string dataset = s.get<std::string>("dataset", "");
  const std::string analytic = s.get<std::string>("analytic", "");
  const std::string out = s.require<std::string>("out");
  const int mesh = parse_mesh(s.raw("mesh"));
  std::vector<int> fields = s.get<std::vector<int>>("fields", {2});
  const double lifetime_ratio = s.get("lifetime_ratio", 5.0);
  const int default_points = analytic == "circle" ? 60 : 400;
  const int points = s.get("points", default_points);
  const int max_points = s.get("max_points", analytic.empty() ? 300 : points);
  const double noise = s.get("noise", 0.0);
  const std::uint64_t seed = s.get<std::uint64_t>("seed", 0);
  tda::RipsOptions rips;
  rips.max_filtration = s.get("max_filtration", rips.max_filtration);
  rips.auto_factor = s.get("auto_factor", rips.auto_factor);
  rips.max_points = s.get("max_rips_points", rips.max_points);
  s.finish();

  const int sources = (model_dir.empty() ? 0 : 1) + (dataset.empty() ? 0 : 1) + (analytic.empty() ? 0 : 1);
  if (sources != 1) throw ConfigError("tda: give exactly one of 'model', 'dataset' or 'analytic'");
  if (fields.empty()) throw ConfigError("tda: fields must not be empty");
  if (!(lifetime_ratio > 0)) throw ConfigError("tda: lifetime_ratio must be positive");
  if (max_points < 2 || points < 2) throw ConfigError("tda: need at least 2 points");
  if (mesh < 2) throw ConfigError("tda: mesh must be >= 2");
  if (!analytic.empty() && analytic != "torus" && analytic != "circle") {
    throw ConfigError("tda: analytic source must be 'torus' or 'circle'");
  }
  if (!model_dir.empty()) require_bundle(model_dir);
  if (!dataset.empty()) require_file(dataset, "dataset");
  prepare_dir(out);

  std::vector<tda::Point> cloud;
  std::string source;
  if (!analytic.empty()) {
    source = "analytic:" + analytic;
    cloud = analytic == "torus" ? tda::sample_torus(points, seed) : tda::sample_circle(points, noise, seed);
  } else if (!dataset.empty()) {
    source = "dataset:" + dataset;
    const sim::Dataset ds = sim::load_dataset(dataset);
    for (int id : ds.train_ids)
      for (const auto& x : ds.by_id(id).states) cloud.push_back(x);
  } else {
    source = "model:" + model_dir;
    const auto m = model::LatentModel::load(model_dir);
    if (!m.has_encoder()) throw EvaluationError("tda: the model has no encoder");
    if (m.state_lo.size() != m.state_dim) throw EvaluationError("tda: model bundle has no state bounds");
    if (m.state_dim != 2) throw EvaluationError("tda: mesh sampling supports 2-D state spaces");
    model::Matrix X(mesh * mesh, 2);
    for (int a = 0; a < mesh; ++a) {
      for (int b = 0; b < mesh; ++b) {
        X(a * mesh + b, 0) = m.state_lo[0] + (m.state_hi[0] - m.state_lo[0]) * a / (mesh - 1);
        X(a * mesh + b, 1) = m.state_lo[1] + (m.state_hi[1] - m.state_lo[1]) * b / (mesh - 1);
      }
    }
    const model::Matrix Z = m.encode(X);
    for (Eigen::Index r = 0; r < Z.rows(); ++r) cloud.push_back(Z.row(r).transpose());
  }
  if (cloud.empty()) throw EvaluationError("tda: empty point cloud");
  if (static_cast<int>(cloud.size()) > max_points) {
    std::vector<tda::Point> sub;
    for (int i : tda::farthest_point_sample(cloud, max_points)) sub.push_back(cloud[static_cast<std::size_t>(i)]);
    cloud = std::move(sub);
  }

  const auto t0 = std::chrono::steady_clock::now();
  const double eps = tda::resolve_max_filtration(cloud, rips);
  tda::RipsOptions resolved = rips;
  resolved.max_filtration = eps;
  const auto filt = tda::rips_complex(cloud, resolved);
  std::ostringstream os;
  os << "tda: " << cloud.size() << " points, " << filt.size() << " simplices up to scale " << eps;
  say(log, os.str());

  json per_field = json::object();
  json first_betti;
  for (int p : fields) {
    const auto diagram = tda::compute_persistence(filt, p);
    const auto betti = tda::betti_estimate(diagram, lifetime_ratio);
    const std::string tag = "z" + std::to_string(p);
    io::write_file_atomic(join(out, "diagram_" + tag + ".csv"), diagram.to_csv());
    io::write_file_atomic(join(out, "diagram_" + tag + ".svg"), tda::diagram_svg(diagram));
    json entry = betti.to_json();
    entry["bars"] = {diagram.bars[0].size(), diagram.bars[1].size(), diagram.bars[2].size()};
    per_field[std::to_string(p)] = entry;
    if (first_betti.is_null()) first_betti = entry["betti"];
    say(log, "tda: Z/" + std::to_string(p) + " betti " + entry["betti"].dump());
  }
  json result = {{"source", source},          {"points", cloud.size()}, {"simplices", filt.size()},
                 {"max_filtration", eps},     {"betti", first_betti},   {"fields", per_field},
                 {"lifetime_ratio", lifetime_ratio}};
  write_json(join(out, "betti.json"), result);

  json effective = {{"out", out},           {"mesh", mesh},      {"fields", fields},
                    {"lifetime_ratio", lifetime_ratio}, {"points", points},  {"max_points", max_points},
                    {"noise", noise},       {"seed", seed},      {"max_filtration", rips.max_filtration},
                    {"auto_factor", rips.auto_factor},  {"max_rips_points", rips.max_points}};
  if (!analytic.empty()) effective["analytic"] = analytic;
  if (!dataset.empty()) effective["dataset"] = dataset;
  if (!model_dir.empty()) effective["model"] = model_dir;
  write_json(join(out, "config.json"), effective);
  say(log, "tda: done in " + std::to_string(seconds_since(t0)) + " s");
  return result;
}

json run_control(const json& cfg, const LogFn& log) {
  Section s(cfg, "control");
  const std::string model_dir = s.get<std::string>("model", "");
  const bool oracle = s.get("oracle", false);
  const int trials = s.get("trials", 10);
  const std::uint64_t seed = s.get<std::uint64_t>("seed", 0);
  const double duration = s.get("duration", 10.0);
  const int substeps = s.get("substeps", 1);
  const bool zero_baseline = s.get("zero_baseline", true);
  const json params_json = s.raw("params");
  const json mppi_json = s.raw("mppi");
  const std::string out = s.require<std::string>("out");
  s.finish();

  if (oracle == !model_dir.empty()) throw ConfigError("control: give exactly one of 'model' or 'oracle'");
  if (trials < 1) throw ConfigError("control: trials must be >= 1");
  if (!(duration > 0)) throw ConfigError("control: duration must be positive");
  if (substeps < 1) throw ConfigError("control: substeps must be >= 1");
  const sim::SystemParams plant = params_json.is_null() ? sim::SystemParams{} : sim::SystemParams::from_json(params_json);
  const control::MppiConfig base =
      mppi_json.is_null() ? control::MppiConfig{} : control::MppiConfig::from_json(mppi_json);
  base.validate();
  if (!model_dir.empty()) require_bundle(model_dir);
  prepare_dir(out);

  std::unique_ptr<control::ControlledModel> planner_model;
  if (oracle) {
    planner_model = std::make_unique<control::SimulatorModel>(plant);
  } else {
    auto m = model::LatentModel::load(model_dir);
    if (m.state_dim != 4 || m.action_dim != 1) {
      throw ConfigError("control: model '" + model_dir + "' is not a juggler model (state 4, action 1)");
    }
    planner_model = std::make_unique<control::LearnedModel>(std::move(m), substeps);
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::uint64_t> seeds;
  std::vector<control::EpisodeResult> episodes;
  std::vector<control::EpisodeResult> zero;
  for (int i = 0; i < trials; ++i) {
    const std::uint64_t trial_seed = seed + static_cast<std::uint64_t>(i);
    control::MppiConfig mc = base;
    mc.seed = trial_seed;
    const Eigen::VectorXd x0 = control::trial_initial_state(trial_seed);
    auto ep = control::closed_loop_run(plant, planner_model.get(), control::Planner::mppi, mc, duration, x0);
    const std::string tag = std::to_string(trial_seed);
    io::write_file_atomic(join(out, "episode_" + tag + ".csv"), ep.to_csv());
    if (ep.aborted) say(log, "control: warning: trial " + tag + " aborted: " + ep.error);
    if (ep.degenerate_plans > 0) {
      say(log, "control: warning: trial " + tag + " had " + std::to_string(ep.degenerate_plans) +
                   " plans with no finite rollout");
    }
    std::ostringstream os;
    os << "control: trial " << tag << " cost " << ep.total_cost << " mean |energy error| " << ep.mean_abs_energy_err;
    if (zero_baseline) {
      auto z = control::closed_loop_run(plant, nullptr, control::Planner::zero_action, mc, duration, x0);
      io::write_file_atomic(join(out, "zero_" + tag + ".csv"), z.to_csv());
      os << " (zero action " << z.mean_abs_energy_err << ")";
      zero.push_back(std::move(z));
    }
    say(log, os.str());
    seeds.push_back(trial_seed);
    episodes.push_back(std::move(ep));
  }

  const auto summary = control::summarize(seeds, episodes);
  json result = summary.to_json();
  result["planner"] = oracle ? "oracle" : "learned";
  double err = 0.0;
  int aborted = 0;
  for (const auto& e : episodes) {
    err += e.mean_abs_energy_err;
    aborted += e.aborted ? 1 : 0;
  }
  err /= static_cast<double>(episodes.size());
  result["mean_abs_energy_err"] = err;
  result["aborted"] = aborted;
  if (zero_baseline) {
    const auto zs = control::summarize(seeds, zero);
    double zerr = 0.0;
    for (const auto& e : zero) zerr += e.mean_abs_energy_err;
    zerr /= static_cast<double>(zero.size());
    result["zero_action"] = zs.to_json();
    result["zero_action"]["mean_abs_energy_err"] = zerr;
    result["energy_err_reduction"] = zerr > 0 ? 1.0 - err / zerr : 0.0;
  }
  write_json(join(out, "summary.json"), result);

  json effective = {{"trials", trials},     {"seed", seed},  {"duration", duration},
                    {"substeps", substeps}, {"zero_baseline", zero_baseline}, {"params", plant.to_json()},
                    {"mppi", base.to_json()}, {"out", out}};
  if (oracle) effective["oracle"] = true;
  else effective["model"] = model_dir;
  write_json(join(out, "config.json"), effective);
  say(log, "control: done in " + std::to_string(seconds_since(t0)) + " s");
  return result;
}

json run_command(const std::string& name, const json& cfg, const LogFn& log) {
  if (name == "generate") return run_generate(cfg, log);
  if (name == "train") return run_train(cfg, log);
  if (name == "eval") return run_eval(cfg, log);
  if (name == "tda") return run_tda(cfg, log);
  if (name == "control") return run_control(cfg, log);
  throw ConfigError("unknown command '" + name + "'");
}

}  // namespace chyll::cmd
