#include "chyll/latent_model.hpp"

#include "chyll/error.hpp"
#include "chyll/io.hpp"

#include <cmath>
#include <filesystem>

namespace chyll::model {

std::string to_string(ModelKind kind) { return kind == ModelKind::chyll ? "chyll" : "node"; }

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "chyll") return ModelKind::chyll;
  if (name == "node") return ModelKind::neural_ode;
  throw ConfigError("unknown model kind '" + name + "' (expected chyll|node)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", to_string(model)},
          {"latent_dim", latent_dim},
          {"encoder_hidden", encoder_hidden},
          {"field_hidden", field_hidden},
          {"decoder_hidden", decoder_hidden},
          {"node_field_hidden", node_field_hidden},
          {"activation", ad::to_string(activation)},
          {"w_dyn", w_dyn},
          {"w_glue", w_glue},
          {"w_conf", w_conf},
          {"w_collapse", w_collapse},
          {"collapse_floor", collapse_floor},
          {"curriculum", curriculum},
          {"steps_per_length", steps_per_length},
          {"final_stage_steps", final_stage_steps},
          {"batch", batch},
          {"lr", lr},
          {"decoder_steps", decoder_steps},
          {"decoder_batch", decoder_batch},
          {"decoder_noise", decoder_noise},
          {"decoder_lr", decoder_lr},
          {"lipschitz_sigma_mult", lipschitz_sigma_mult},
          {"transition_dims", transition_dims},
          {"rk4_substeps", rk4_substeps},
          {"conformal_samples", conformal_samples},
          {"theta_c_init", theta_c_init},
          {"train_theta_c", train_theta_c},
          {"max_retries", max_retries},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c = base;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "model") c.model = model_kind_from_string(v.get<std::string>());
      else if (key == "latent_dim") c.latent_dim = v.get<int>();
      else if (key == "encoder_hidden") c.encoder_hidden = v.get<std::vector<int>>();
      else if (key == "field_hidden") c.field_hidden = v.get<std::vector<int>>();
      else if (key == "decoder_hidden") c.decoder_hidden = v.get<std::vector<int>>();
      else if (key == "node_field_hidden") c.node_field_hidden = v.get<std::vector<int>>();
      else if (key == "activation") c.activation = ad::activation_from_string(v.get<std::string>());
      else if (key == "w_dyn") c.w_dyn = v.get<double>();
      else if (key == "w_glue") c.w_glue = v.get<double>();
      else if (key == "w_conf") c.w_conf = v.get<double>();
      else if (key == "w_collapse") c.w_collapse = v.get<double>();
      else if (key == "collapse_floor") c.collapse_floor = v.get<double>();
      else if (key == "curriculum") c.curriculum = v.get<std::vector<int>>();
      else if (key == "steps_per_length") c.steps_per_length = v.get<int>();
      else if (key == "final_stage_steps") c.final_stage_steps = v.get<int>();
      else if (key == "batch") c.batch = v.get<int>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "decoder_steps") c.decoder_steps = v.get<int>();
      else if (key == "decoder_batch") c.decoder_batch = v.get<int>();
      else if (key == "decoder_noise") c.decoder_noise = v.get<double>();
      else if (key == "decoder_lr") c.decoder_lr = v.get<double>();
      else if (key == "lipschitz_sigma_mult") c.lipschitz_sigma_mult = v.get<double>();
      else if (key == "transition_dims") c.transition_dims = v.get<std::vector<int>>();
      else if (key == "rk4_substeps") c.rk4_substeps = v.get<int>();
      else if (key == "conformal_samples") c.conformal_samples = v.get<int>();
      else if (key == "theta_c_init") c.theta_c_init = v.get<double>();
      else if (key == "train_theta_c") c.train_theta_c = v.get<bool>();
      else if (key == "max_retries") c.max_retries = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown train config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (curriculum.empty()) throw ConfigError("curriculum must not be empty");
  for (std::size_t i = 0; i < curriculum.size(); ++i) {
    if (curriculum[i] < 1 || (i > 0 && curriculum[i] <= curriculum[i - 1])) {
      throw ConfigError("curriculum must be strictly increasing positive step counts");
    }
  }
  if (w_dyn < 0 || w_glue < 0 || w_conf < 0 || w_collapse < 0) throw ConfigError("loss weights must be >= 0");
  if (collapse_floor < 0) throw ConfigError("collapse_floor must be >= 0");
  if (decoder_noise < 0) throw ConfigError("decoder_noise must be >= 0");
  if (steps_per_length < 0 || final_stage_steps < 0 || decoder_steps < 0) throw ConfigError("step counts must be >= 0");
  if (batch < 1 || decoder_batch < 1) throw ConfigError("batch sizes must be >= 1");
  if (lr < 0 || decoder_lr < 0) throw ConfigError("learning rates must be >= 0");
  if (rk4_substeps < 1) throw ConfigError("rk4_substeps must be >= 1");
  if (latent_dim < 0) throw ConfigError("latent_dim must be >= 0");
  if (!(theta_c_init > 0)) throw ConfigError("theta_c_init must be positive");
  if (lipschitz_sigma_mult < 0) throw ConfigError("lipschitz_sigma_mult must be >= 0");
  if (conformal_samples < 0 || max_retries < 0) throw ConfigError("conformal_samples/max_retries must be >= 0");
}

int TrainConfig::stage_steps(std::size_t stage) const {
  if (stage + 1 == curriculum.size() && final_stage_steps > 0) return final_stage_steps;
  return steps_per_length;
}

LatentModel LatentModel::create(int state_dim, int action_dim, const TrainConfig& cfg, std::mt19937_64& rng) {
  if (state_dim < 1 || action_dim < 0) throw ConfigError("model: bad state/action dimension");
  LatentModel m;
  m.kind = cfg.model;
  m.state_dim = state_dim;
  m.action_dim = action_dim;
  m.theta_c_trainable = cfg.train_theta_c;
  m.log_theta_c = ad::Tensor(Matrix::Constant(1, 1, std::log(cfg.theta_c_init)));
  m.train_config = cfg.to_json();
  if (cfg.model == ModelKind::neural_ode) {
    m.latent_dim = state_dim;
    m.field = ad::Mlp::make(state_dim + action_dim, cfg.node_field_hidden, state_dim, cfg.activation, rng);
    return m;
  }
  m.latent_dim = cfg.latent_dim > 0 ? cfg.latent_dim : 2 * state_dim;
  m.encoder = ad::Mlp::make(state_dim, cfg.encoder_hidden, m.latent_dim, cfg.activation, rng);
  m.field = ad::Mlp::make(m.latent_dim + action_dim, cfg.field_hidden, m.latent_dim, cfg.activation, rng);
  m.decoder = ad::Mlp::make(m.latent_dim, cfg.decoder_hidden, state_dim, cfg.activation, rng);
  return m;
}

double LatentModel::theta_c() const { return std::exp(log_theta_c.value(0, 0)); }

Matrix LatentModel::encode(const Matrix& x) const { return has_encoder() ? encoder.eval(x) : x; }

Eigen::VectorXd LatentModel::encode(const Eigen::VectorXd& x) const {
  return has_encoder() ? encoder.eval(x) : x;
}

Matrix LatentModel::decode(const Matrix& z) const { return has_encoder() ? decoder.eval(z) : z; }

Matrix LatentModel::field_eval(const Matrix& z, const Matrix* actions) const {
  if (action_dim == 0) return field.eval(z);
  if (actions == nullptr || actions->cols() != action_dim || actions->rows() != z.rows()) {
    throw NumericError("field_eval: actions missing or mis-shaped");
  }
  Matrix in(z.rows(), z.cols() + action_dim);
  in << z, *actions;
  return field.eval(in);
}

ad::Var LatentModel::encode(ad::Tape& tape, const ad::Var& x) { return has_encoder() ? encoder.forward(tape, x) : x; }

ad::Var LatentModel::field_forward(ad::Tape& tape, const ad::Var& z, const Matrix* actions) {
  if (action_dim == 0) return field.forward(tape, z);
  if (actions == nullptr || actions->cols() != action_dim || actions->rows() != z.rows()) {
    throw NumericError("field_forward: actions missing or mis-shaped");
  }
  return field.forward(tape, ad::concat_cols(z, tape.constant(*actions)));
}

ad::Var LatentModel::theta_c(ad::Tape& tape) {
  if (theta_c_trainable) return ad::exp(tape.bind(log_theta_c));
  return tape.constant(theta_c());
}

std::vector<ad::Tensor*> LatentModel::continuous_parameters() {
  std::vector<ad::Tensor*> params;
  if (has_encoder()) params = encoder.parameters();
  for (auto* p : field.parameters()) params.push_back(p);
  if (has_encoder() && theta_c_trainable) params.push_back(&log_theta_c);
  return params;
}

std::vector<ad::Tensor*> LatentModel::decoder_parameters() {
  if (!has_encoder()) return {};
  return decoder.parameters();
}

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

ad::Mlp load_mlp(const std::filesystem::path& path, const std::string& expected_role) {
  if (!std::filesystem::exists(path)) throw EvaluationError("model bundle is missing " + path.filename().string());
  std::string role;
  ad::Mlp mlp = ad::Mlp::from_json(nlohmann::json::parse(io::read_file(path.string())), &role);
  if (role != expected_role) throw ConfigError(path.string() + ": role '" + role + "', expected '" + expected_role + "'");
  return mlp;
}

}  // namespace

void LatentModel::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  if (has_encoder()) {
    io::write_file_atomic((root / "encoder.json").string(), encoder.to_json("encoder").dump());
    io::write_file_atomic((root / "decoder.json").string(), decoder.to_json("decoder").dump());
  }
  io::write_file_atomic((root / "field.json").string(), field.to_json("field").dump());
  nlohmann::json meta = {{"latent_dim", latent_dim},
                         {"theta_c", theta_c()},
                         {"log_theta_c", log_theta_c.value(0, 0)},
                         {"theta_c_trainable", theta_c_trainable},
                         {"state_dim", state_dim},
                         {"action_dim", action_dim},
                         {"system", system},
                         {"kind", to_string(kind)},
                         {"dt", dt},
                         {"state_lo", to_vec(state_lo)},
                         {"state_hi", to_vec(state_hi)},
                         {"train_config", train_config}};
  io::write_file_atomic((root / "meta.json").string(), meta.dump(2));
}

LatentModel LatentModel::load(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::exists(root / "meta.json")) throw EvaluationError("model bundle '" + dir + "' has no meta.json");
  try {
    const auto meta = nlohmann::json::parse(io::read_file((root / "meta.json").string()));
    LatentModel m;
    m.kind = model_kind_from_string(meta.value("kind", "chyll"));
    m.latent_dim = meta.at("latent_dim").get<int>();
    m.state_dim = meta.at("state_dim").get<int>();
    m.action_dim = meta.value("action_dim", 0);
    m.system = meta.at("system").get<std::string>();
    m.dt = meta.value("dt", 0.0);
    m.theta_c_trainable = meta.value("theta_c_trainable", true);
    const double log_theta =
        meta.contains("log_theta_c") ? meta.at("log_theta_c").get<double>() : std::log(meta.at("theta_c").get<double>());
    m.log_theta_c = ad::Tensor(Matrix::Constant(1, 1, log_theta));
    if (meta.contains("state_lo")) m.state_lo = from_vec(meta.at("state_lo").get<std::vector<double>>());
    if (meta.contains("state_hi")) m.state_hi = from_vec(meta.at("state_hi").get<std::vector<double>>());
    m.train_config = meta.value("train_config", nlohmann::json::object());
    m.field = load_mlp(root / "field.json", "field");
    if (m.has_encoder()) {
      m.encoder = load_mlp(root / "encoder.json", "encoder");
      m.decoder = load_mlp(root / "decoder.json", "decoder");
      if (m.encoder.in_dim() != m.state_dim || m.encoder.out_dim() != m.latent_dim ||
          m.decoder.in_dim() != m.latent_dim || m.decoder.out_dim() != m.state_dim) {
        throw ConfigError("model bundle: encoder/decoder dims disagree with meta.json");
      }
    }
    if (m.field.in_dim() != m.latent_dim + m.action_dim || m.field.out_dim() != m.latent_dim) {
      throw ConfigError("model bundle: field dims disagree with meta.json");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model bundle '" + dir + "': " + e.what());
  }
}

// ---- rollout -----------------------------------------------------------

namespace {

void check_grid(std::span<const double> t_grid) {
  if (t_grid.empty()) throw NumericError("latent_rollout: empty time grid");
  for (std::size_t k = 1; k < t_grid.size(); ++k) {
    if (!(t_grid[k] > t_grid[k - 1])) throw NumericError("latent_rollout: time grid must be increasing");
  }
}

}  // namespace

std::vector<Matrix> latent_rollout(const LatentModel& model, const Matrix& z0, std::span<const double> t_grid,
                                   int substeps, const std::vector<Matrix>* actions) {
  check_grid(t_grid);
  if (substeps < 1) throw NumericError("latent_rollout: substeps must be >= 1");
  std::vector<Matrix> out;
  out.reserve(t_grid.size());
  out.push_back(z0);
  Matrix z = z0;
  for (std::size_t k = 0; k + 1 < t_grid.size(); ++k) {
    const Matrix* a = actions != nullptr ? &(*actions)[k] : nullptr;
    const double h = (t_grid[k + 1] - t_grid[k]) / substeps;
    for (int s = 0; s < substeps; ++s) {
      const Matrix k1 = model.field_eval(z, a);
      const Matrix k2 = model.field_eval(z + 0.5 * h * k1, a);
      const Matrix k3 = model.field_eval(z + 0.5 * h * k2, a);
      const Matrix k4 = model.field_eval(z + h * k3, a);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!z.allFinite()) throw NumericError("latent_rollout: non-finite latent state at step " + std::to_string(k + 1));
    out.push_back(z);
  }
  return out;
}

std::vector<ad::Var> latent_rollout(ad::Tape& tape, LatentModel& model, const ad::Var& z0,
                                    std::span<const double> t_grid, int substeps, const std::vector<Matrix>* actions) {
  check_grid(t_grid);
  if (substeps < 1) throw NumericError("latent_rollout: substeps must be >= 1");
  std::vector<ad::Var> out;
  out.reserve(t_grid.size());
  out.push_back(z0);
  ad::Var z = z0;
  for (std::size_t k = 0; k + 1 < t_grid.size(); ++k) {
    const Matrix* a = actions != nullptr ? &(*actions)[k] : nullptr;
    const double h = (t_grid[k + 1] - t_grid[k]) / substeps;
    try {
      for (int s = 0; s < substeps; ++s) {
        const ad::Var k1 = model.field_forward(tape, z, a);
        const ad::Var k2 = model.field_forward(tape, ad::axpy(z, 0.5 * h, k1), a);
        const ad::Var k3 = model.field_forward(tape, ad::axpy(z, 0.5 * h, k2), a);
        const ad::Var k4 = model.field_forward(tape, ad::axpy(z, h, k3), a);
        ad::Var acc = ad::add(ad::axpy(ad::axpy(k1, 2.0, k2), 2.0, k3), k4);
        z = ad::axpy(z, h / 6.0, acc);
      }
    } catch (const NumericError& e) {
      throw NumericError("latent_rollout: step " + std::to_string(k + 1) + ": " + e.what());
    }
    out.push_back(z);
  }
  return out;
}

}  // namespace chyll::model
