#include "chyll/chyll.h"

#include "chyll/commands.hpp"
#include "chyll/error.hpp"
#include "chyll/evaluation.hpp"
#include "chyll/hybrid_sim.hpp"
#include "chyll/latent_model.hpp"
#include "chyll/lm_refine.hpp"

#include <cstring>
#include <new>
#include <string>

struct chyll_dataset {
  chyll::sim::Dataset ds;
};

struct chyll_model {
  chyll::model::LatentModel model;
};

namespace {

thread_local std::string g_last_error;

chyll_status fail(chyll_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

// Maps the library's exception hierarchy onto status codes.
template <typename F>
chyll_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return CHYLL_OK;
  } catch (const chyll::ConfigError& e) {
    return fail(CHYLL_ERR_CONFIG, e.what());
  } catch (const chyll::SimulationError& e) {
    return fail(CHYLL_ERR_SIMULATION, e.what());
  } catch (const chyll::TrainingError& e) {
    return fail(CHYLL_ERR_TRAINING, e.what());
  } catch (const chyll::NumericError& e) {
    return fail(CHYLL_ERR_TRAINING, e.what());
  } catch (const chyll::EvaluationError& e) {
    return fail(CHYLL_ERR_EVALUATION, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(CHYLL_ERR_CONFIG, std::string("json: ") + e.what());
  } catch (const std::ios_base::failure& e) {
    return fail(CHYLL_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(CHYLL_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(CHYLL_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(CHYLL_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

using chyll::model::Matrix;

Matrix rows_in(const double* data, std::size_t rows, int cols) {
  Matrix m(static_cast<Eigen::Index>(rows), cols);
  std::memcpy(m.data(), data, rows * static_cast<std::size_t>(cols) * sizeof(double));
  return m;
}

void rows_out(const Matrix& m, double* out) {
  std::memcpy(out, m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
}

}  // namespace

extern "C" {

const char* chyll_version(void) { return "1.0.0"; }

const char* chyll_last_error(void) { return g_last_error.c_str(); }

void chyll_string_free(char* s) { delete[] s; }

chyll_status chyll_run_command(const char* command, const char* config_json, chyll_log_fn log, void* user,
                               char** result_json) {
  if (command == nullptr || config_json == nullptr) return fail(CHYLL_ERR_INVALID_ARGUMENT, "null argument");
  if (result_json != nullptr) *result_json = nullptr;
  return guarded([&] {
    nlohmann::json cfg;
    try {
      cfg = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::parse_error& e) {
      throw chyll::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    chyll::cmd::LogFn sink;
    if (log != nullptr) sink = [log, user](const std::string& line) { log(line.c_str(), user); };
    const auto result = chyll::cmd::run_command(command, cfg, sink);
    if (result_json != nullptr) *result_json = dup_string(result.dump(2));
  });
}

chyll_status chyll_dataset_load(const char* path, chyll_dataset** out) {
  if (path == nullptr || out == nullptr) return fail(CHYLL_ERR_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new chyll_dataset{chyll::sim::load_dataset(path)}; });
}

void chyll_dataset_free(chyll_dataset* ds) { delete ds; }

chyll_status chyll_dataset_info(const chyll_dataset* ds, int* trajectories, int* state_dim, int* action_dim,
                                double* dt) {
  if (ds == nullptr) return fail(CHYLL_ERR_INVALID_ARGUMENT, "null dataset");
  return guarded([&] {
    if (trajectories) *trajectories = static_cast<int>(ds->ds.trajectories.size());
    if (state_dim) *state_dim = ds->ds.state_dim();
    if (action_dim) *action_dim = ds->ds.action_dim();
    if (dt) *dt = ds->ds.dt;
  });
}

chyll_status chyll_dataset_states(const chyll_dataset* ds, int index, double* buf, size_t capacity, size_t* rows) {
  if (ds == nullptr || rows == nullptr) return fail(CHYLL_ERR_INVALID_ARGUMENT, "null argument");
  if (index < 0 || static_cast<std::size_t>(index) >= ds->ds.trajectories.size()) {
    return fail(CHYLL_ERR_INVALID_ARGUMENT, "trajectory index out of range");
  }
  const auto& t = ds->ds.trajectories[static_cast<std::size_t>(index)];
  *rows = t.states.size();
  if (buf == nullptr) return CHYLL_OK;
  const std::size_t n = static_cast<std::size_t>(ds->ds.state_dim());
  if (capacity < t.states.size() * n) return fail(CHYLL_ERR_INVALID_ARGUMENT, "buffer too small");
  for (std::size_t k = 0; k < t.states.size(); ++k)
    for (std::size_t i = 0; i < n; ++i) buf[k * n + i] = t.states[k][static_cast<Eigen::Index>(i)];
  return CHYLL_OK;
}

chyll_status chyll_model_load(const char* bundle_dir, chyll_model** out) {
  if (bundle_dir == nullptr || out == nullptr) return fail(CHYLL_ERR_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new chyll_model{chyll::model::LatentModel::load(bundle_dir)}; });
}

void chyll_model_free(chyll_model* m) { delete m; }

chyll_status chyll_model_dims(const chyll_model* m, int* state_dim, int* latent_dim, int* action_dim) {
  if (m == nullptr) return fail(CHYLL_ERR_INVALID_ARGUMENT, "null model");
  if (state_dim) *state_dim = m->model.state_dim;
  if (latent_dim) *latent_dim = m->model.latent_dim;
  if (action_dim) *action_dim = m->model.action_dim;
  return CHYLL_OK;
}

chyll_status chyll_model_encode(const chyll_model* m, const double* x, size_t rows, double* z) {
  if (m == nullptr || x == nullptr || z == nullptr) return fail(CHYLL_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] { rows_out(m->model.encode(rows_in(x, rows, m->model.state_dim)), z); });
}

chyll_status chyll_model_decode(const chyll_model* m, const double* z, size_t rows, double* x) {
  if (m == nullptr || z == nullptr || x == nullptr) return fail(CHYLL_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] { rows_out(m->model.decode(rows_in(z, rows, m->model.latent_dim)), x); });
}

chyll_status chyll_model_project(const chyll_model* m, const double* z, size_t rows, double* x, double* residual) {
  if (m == nullptr || z == nullptr || x == nullptr) return fail(CHYLL_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const Matrix Z = rows_in(z, rows, m->model.latent_dim);
    Matrix X = m->model.decode(Z);
    if (m->model.has_encoder()) {
      const chyll::lm::LmConfig cfg;
      for (Eigen::Index r = 0; r < Z.rows(); ++r) {
        const auto res = chyll::lm::lm_project(m->model.encoder, Z.row(r).transpose(), X.row(r).transpose(), cfg);
        X.row(r) = res.x.transpose();
        if (residual) residual[r] = res.residual;
      }
    } else if (residual) {
      for (Eigen::Index r = 0; r < Z.rows(); ++r) residual[r] = 0.0;
    }
    rows_out(X, x);
  });
}

chyll_status chyll_model_predict(const chyll_model* m, const double* x0, int steps, double dt, const double* actions,
                                 chyll_decode_mode mode, double* out) {
  if (m == nullptr || x0 == nullptr || out == nullptr) return fail(CHYLL_ERR_INVALID_ARGUMENT, "null argument");
  if (steps < 0 || !(dt > 0)) return fail(CHYLL_ERR_INVALID_ARGUMENT, "steps must be >= 0 and dt > 0");
  if (m->model.action_dim > 0 && actions == nullptr && steps > 0) {
    return fail(CHYLL_ERR_INVALID_ARGUMENT, "controlled model needs an action sequence");
  }
  return guarded([&] {
    const int n = m->model.state_dim;
    const int p = m->model.action_dim;
    std::vector<double> grid(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) grid[static_cast<std::size_t>(k)] = k * dt;
    std::vector<Eigen::VectorXd> start{Eigen::Map<const Eigen::VectorXd>(x0, n)};
    std::vector<std::vector<chyll::sim::State>> acts;
    if (p > 0) {
      acts.emplace_back();
      for (int k = 0; k < steps; ++k)
        acts[0].push_back(Eigen::Map<const Eigen::VectorXd>(actions + static_cast<std::ptrdiff_t>(k) * p, p));
    }
    chyll::model::PredictOptions opts;
    opts.mode = mode == CHYLL_DECODE_LM ? chyll::model::DecodeMode::lm : chyll::model::DecodeMode::decoder;
    const auto pred = chyll::model::predict(m->model, start, grid, opts, p > 0 ? &acts : nullptr);
    for (std::size_t k = 0; k < pred[0].states.size(); ++k)
      for (int i = 0; i < n; ++i) out[k * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)] = pred[0].states[k][i];
  });
}

}  // extern "C"
