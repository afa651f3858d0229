#include "chyll/trainer.hpp"

#include "chyll/adam.hpp"
#include "chyll/error.hpp"
#include "chyll/losses.hpp"

#include <cmath>
#include <sstream>

namespace chyll::model {

std::string TrainingLog::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "step,stage,loss_total,loss_dyn,loss_glue,loss_conf,loss_collapse\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.stage << ',' << r.total << ',' << r.dynamics << ',' << r.gluing << ',' << r.conformal << ','
       << r.collapse << '\n';
  }
  return os.str();
}

std::string TrainingLog::decoder_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "step,loss\n";
  for (std::size_t i = 0; i < decoder_loss.size(); ++i) os << i << ',' << decoder_loss[i] << '\n';
  return os.str();
}

TrainConfig effective_config(const sim::Dataset& ds, TrainConfig cfg) {
  if (cfg.transition_dims.empty() && ds.system == "juggler") cfg.transition_dims = {0, 1};
  if (cfg.model == ModelKind::neural_ode) {
    cfg.w_glue = 0.0;
    cfg.w_conf = 0.0;
    cfg.w_collapse = 0.0;
    cfg.decoder_steps = 0;
  }
  cfg.validate();
  return cfg;
}

TransitionSet detect_training_transitions(const sim::Dataset& ds, const TrainConfig& cfg) {
  return detect_transitions(ds, ds.train_ids, cfg.lipschitz_sigma_mult, cfg.transition_dims);
}

namespace {

struct Checkpoint {
  std::vector<Matrix> params;
  ad::AdamState adam;
};

Checkpoint snapshot(const std::vector<ad::Tensor*>& params, const ad::Adam& opt) {
  Checkpoint c;
  for (const auto* p : params) c.params.push_back(p->value);
  c.adam = opt.state();
  return c;
}

void restore(const Checkpoint& c, const std::vector<ad::Tensor*>& params, ad::Adam& opt) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = c.params[i];
  const double lr = opt.state().lr;
  opt.state() = c.adam;
  opt.state().lr = lr;
}

bool finite(const LossTerms& t) {
  return std::isfinite(t.total.item()) && std::isfinite(t.dynamics.item()) && std::isfinite(t.gluing.item()) &&
         std::isfinite(t.conformal.item()) && std::isfinite(t.collapse.item());
}

void record_bounds(LatentModel& model, const sim::Dataset& ds) {
  const int n = ds.state_dim();
  model.state_lo = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  model.state_hi = Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity());
  for (int id : ds.train_ids) {
    for (const auto& x : ds.by_id(id).states) {
      model.state_lo = model.state_lo.cwiseMin(x);
      model.state_hi = model.state_hi.cwiseMax(x);
    }
  }
}

constexpr int kCheckpointEvery = 50;

}  // namespace

void train_phase1(LatentModel& model, const sim::Dataset& ds, const TransitionSet& transitions,
                  const TrainConfig& cfg, std::mt19937_64& rng, TrainingLog& log, const ProgressFn& progress) {
  if (ds.train_ids.empty()) throw ConfigError("train_phase1: dataset has no training split");
  auto params = model.continuous_parameters();
  ad::Adam opt(params, cfg.lr);
  Checkpoint last = snapshot(params, opt);
  ad::Tape tape;
  int global = 0;
  for (std::size_t stage = 0; stage < cfg.curriculum.size(); ++stage) {
    const int steps = cfg.stage_steps(stage);
    for (int s = 0; s < steps; ++s, ++global) {
      if (global % kCheckpointEvery == 0) last = snapshot(params, opt);
      const WindowBatch batch = sample_windows(ds, ds.train_ids, transitions, cfg.curriculum[stage], cfg.batch, rng);
      tape.reset();
      LogRow row{global, static_cast<int>(stage)};
      bool ok = true;
      try {
        const LossTerms terms = continuous_loss(tape, model, batch, cfg, rng);
        ok = finite(terms);
        if (ok) {
          row.total = terms.total.item();
          row.dynamics = terms.dynamics.item();
          row.gluing = terms.gluing.item();
          row.conformal = terms.conformal.item();
          row.collapse = terms.collapse.item();
          opt.zero_grad();
          tape.backward(terms.total);
          for (const auto* p : params) {
            if (p->has_grad() && !p->grad.allFinite()) ok = false;
          }
        }
      } catch (const NumericError&) {
        ok = false;
      }
      if (!ok) {
        restore(last, params, opt);
        if (++log.retries > cfg.max_retries) {
          throw TrainingError("non-finite loss at step " + std::to_string(global) + " (stage " +
                              std::to_string(stage) + ") after " + std::to_string(cfg.max_retries) +
                              " retries; parameters restored to the last finite checkpoint");
        }
        opt.state().lr *= 0.5;
        continue;
      }
      opt.step();
      log.rows.push_back(row);
      if (progress) progress(row);
    }
  }
  tape.reset();
}

void train_phase2(LatentModel& model, const sim::Dataset& ds, const TrainConfig& cfg, std::mt19937_64& rng,
                  TrainingLog& log) {
  if (!model.has_encoder() || cfg.decoder_steps == 0) return;
  std::vector<const sim::State*> pool;
  for (int id : ds.train_ids)
    for (const auto& x : ds.by_id(id).states) pool.push_back(&x);
  if (pool.empty()) throw ConfigError("train_phase2: no training states");
  const int n = model.state_dim;
  auto params = model.decoder_parameters();
  ad::Adam opt(params, cfg.decoder_lr);
  Checkpoint last = snapshot(params, opt);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  ad::Tape tape;
  int retries = 0;
  for (int step = 0; step < cfg.decoder_steps; ++step) {
    if (step % kCheckpointEvery == 0) last = snapshot(params, opt);
    Matrix x(cfg.decoder_batch, n);
    for (int r = 0; r < cfg.decoder_batch; ++r) {
      x.row(r) = pool[pick(rng)]->transpose();
      for (int i = 0; i < n; ++i) x(r, i) += cfg.decoder_noise * noise(rng);
    }
    const Matrix z = model.encoder.eval(x);
    tape.reset();
    bool ok = true;
    try {
      const ad::Var loss = ad::mse(model.decoder.forward(tape, tape.constant(z)), tape.constant(x));
      ok = std::isfinite(loss.item());
      if (ok) {
        opt.zero_grad();
        tape.backward(loss);
        log.decoder_loss.push_back(loss.item());
      }
    } catch (const NumericError&) {
      ok = false;
    }
    if (!ok) {
      restore(last, params, opt);
      if (++retries > cfg.max_retries) throw TrainingError("decoder training diverged at step " + std::to_string(step));
      opt.state().lr *= 0.5;
      continue;
    }
    opt.step();
  }
}

TrainOutcome train(const sim::Dataset& ds, const TrainConfig& cfg_in, const ProgressFn& progress) {
  TrainOutcome out;
  out.config = effective_config(ds, cfg_in);
  std::mt19937_64 rng(out.config.seed);
  out.model = LatentModel::create(ds.state_dim(), ds.action_dim(), out.config, rng);
  out.model.system = ds.system;
  out.model.dt = ds.dt;
  out.model.train_config = out.config.to_json();
  record_bounds(out.model, ds);
  if (out.config.model == ModelKind::chyll) out.transitions = detect_training_transitions(ds, out.config);
  train_phase1(out.model, ds, out.transitions, out.config, rng, out.log, progress);
  train_phase2(out.model, ds, out.config, rng, out.log);
  return out;
}

TrainOutcome train_baseline_node(const sim::Dataset& ds, TrainConfig cfg, const ProgressFn& progress) {
  cfg.model = ModelKind::neural_ode;
  return train(ds, cfg, progress);
}

}  // namespace chyll::model
