#include "chyll/mlp.hpp"

#include "chyll/error.hpp"

#include <cmath>

namespace chyll::ad {

Activation activation_from_string(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
    case Activation::identity:
      return "identity";
  }
  return "identity";
}

namespace {

Var apply(Tape& tape, Activation a, const Var& x) {
  (void)tape;
  switch (a) {
    case Activation::tanh:
      return tanh(x);
    case Activation::relu:
      return relu(x);
    case Activation::identity:
      return x;
  }
  return x;
}

void apply_inplace(Activation a, Matrix& x) {
  switch (a) {
    case Activation::tanh:
      x = x.array().tanh().matrix();
      break;
    case Activation::relu:
      x = x.cwiseMax(0.0);
      break;
    case Activation::identity:
      break;
  }
}

// Derivative of the activation given pre-activation a and post-activation h.
Eigen::ArrayXd derivative(Activation act, const Eigen::VectorXd& pre, const Eigen::VectorXd& post) {
  switch (act) {
    case Activation::tanh:
      return 1.0 - post.array().square();
    case Activation::relu:
      return (pre.array() > 0.0).cast<double>();
    case Activation::identity:
      return Eigen::ArrayXd::Ones(pre.size());
  }
  return Eigen::ArrayXd::Ones(pre.size());
}

}  // namespace

Mlp::Mlp(std::vector<int> dims, std::vector<Activation> activations, std::mt19937_64& rng) {
  if (dims.size() < 2 || activations.size() != dims.size() - 1) {
    throw ConfigError("Mlp: need dims.size() >= 2 and one activation per layer");
  }
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    if (in <= 0 || out <= 0) throw ConfigError("Mlp: layer dims must be positive");
    Layer layer;
    layer.weight = Tensor(out, in);
    layer.bias = Tensor(1, out);
    layer.activation = activations[l];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> uni(-limit, limit);
    for (auto& w : layer.weight.data()) w = uni(rng);
    layers_.push_back(std::move(layer));
  }
}

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

Mlp Mlp::make(int in_dim, const std::vector<int>& hidden, int out_dim, Activation hidden_activation,
              std::mt19937_64& rng) {
  std::vector<int> dims{in_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out_dim);
  std::vector<Activation> acts(dims.size() - 1, hidden_activation);
  acts.back() = Activation::identity;
  return Mlp(std::move(dims), std::move(acts), rng);
}

void Mlp::validate() const {
  if (layers_.empty()) throw ConfigError("Mlp: no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.rows() != 1 || layer.bias.cols() != layer.weight.rows()) {
      throw ConfigError("Mlp: bias shape does not match weight rows in layer " + std::to_string(l));
    }
    if (l > 0 && layers_[l - 1].weight.rows() != layer.weight.cols()) {
      throw ConfigError("Mlp: layer " + std::to_string(l) + " input does not chain with previous output");
    }
  }
}

int Mlp::in_dim() const { return layers_.empty() ? 0 : layers_.front().weight.cols(); }
int Mlp::out_dim() const { return layers_.empty() ? 0 : layers_.back().weight.rows(); }

std::vector<int> Mlp::dims() const {
  std::vector<int> d;
  if (layers_.empty()) return d;
  d.push_back(in_dim());
  for (const auto& l : layers_) d.push_back(l.weight.rows());
  return d;
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.value.size() + l.bias.value.size());
  return n;
}

Var Mlp::forward(Tape& tape, const Var& x) {
  if (x.cols() != in_dim()) {
    throw NumericError("Mlp::forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                       std::to_string(in_dim()));
  }
  Var h = x;
  for (auto& layer : layers_) {
    h = linear(h, tape.bind(layer.weight), tape.bind(layer.bias));
    h = apply(tape, layer.activation, h);
  }
  return h;
}

TangentForward Mlp::forward_with_tangents(Tape& tape, const Var& x) {
  if (x.cols() != in_dim()) throw NumericError("Mlp::forward_with_tangents: input width mismatch");
  const int rows = x.rows();
  const int n = in_dim();
  Var h = x;
  std::vector<Var> tangents;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& layer = layers_[l];
    Var w = tape.bind(layer.weight);
    Var pre = linear(h, w, tape.bind(layer.bias));
    std::vector<Var> dpre;
    dpre.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      dpre.push_back(l == 0 ? col_broadcast(w, j, rows) : matmul_nt(tangents[static_cast<std::size_t>(j)], w));
    }
    switch (layer.activation) {
      case Activation::tanh: {
        h = tanh(pre);
        Var slope = one_minus_square(h);
        for (auto& t : dpre) t = mul(slope, t);
        break;
      }
      case Activation::relu: {
        h = relu(pre);
        // Second derivative of relu is zero a.e., so the mask is a constant.
        Var mask = tape.constant((pre.value().array() > 0.0).cast<double>().matrix());
        for (auto& t : dpre) t = mul(mask, t);
        break;
      }
      case Activation::identity:
        h = pre;
        break;
    }
    tangents = std::move(dpre);
  }
  return {h, std::move(tangents)};
}

Matrix Mlp::eval(const Matrix& x) const {
  if (x.cols() != in_dim()) throw NumericError("Mlp::eval: input width mismatch");
  Matrix h = x;
  for (const auto& layer : layers_) {
    Matrix next = h * layer.weight.value.transpose();
    next.rowwise() += layer.bias.value.row(0);
    apply_inplace(layer.activation, next);
    h = std::move(next);
  }
  if (!h.allFinite()) throw NumericError("Mlp::eval: non-finite output");
  return h;
}

Eigen::VectorXd Mlp::eval(const Eigen::VectorXd& x) const {
  Matrix row = x.transpose();
  return eval(row).row(0).transpose();
}

Eigen::MatrixXd Mlp::jacobian(const Eigen::VectorXd& x) const {
  if (x.size() != in_dim()) throw NumericError("Mlp::jacobian: input size mismatch");
  Eigen::VectorXd h = x;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(in_dim(), in_dim());
  for (const auto& layer : layers_) {
    const Eigen::MatrixXd w = layer.weight.value;
    Eigen::VectorXd pre = w * h + layer.bias.value.row(0).transpose();
    Eigen::VectorXd post = pre;
    switch (layer.activation) {
      case Activation::tanh:
        post = pre.array().tanh();
        break;
      case Activation::relu:
        post = pre.cwiseMax(0.0);
        break;
      case Activation::identity:
        break;
    }
    jac = derivative(layer.activation, pre, post).matrix().asDiagonal() * (w * jac);
    h = std::move(post);
  }
  if (!jac.allFinite()) throw NumericError("Mlp::jacobian: non-finite value");
  return jac;
}

nlohmann::json Mlp::to_json(const std::string& role) const {
  nlohmann::json j;
  j["version"] = 1;
  j["role"] = role;
  j["dims"] = dims();
  auto acts = nlohmann::json::array();
  auto weights = nlohmann::json::array();
  auto biases = nlohmann::json::array();
  for (const auto& l : layers_) {
    acts.push_back(to_string(l.activation));
    weights.push_back(std::vector<double>(l.weight.data().begin(), l.weight.data().end()));
    biases.push_back(std::vector<double>(l.bias.data().begin(), l.bias.data().end()));
  }
  j["activations"] = acts;
  j["weights"] = weights;
  j["biases"] = biases;
  return j;
}

Mlp Mlp::from_json(const nlohmann::json& j, std::string* role) {
  try {
    if (j.at("version").get<int>() != 1) throw ConfigError("checkpoint: unsupported version");
    const auto dims = j.at("dims").get<std::vector<int>>();
    const auto acts = j.at("activations").get<std::vector<std::string>>();
    const auto weights = j.at("weights").get<std::vector<std::vector<double>>>();
    const auto biases = j.at("biases").get<std::vector<std::vector<double>>>();
    const std::size_t nl = dims.size() < 2 ? 0 : dims.size() - 1;
    if (nl == 0 || acts.size() != nl || weights.size() != nl || biases.size() != nl) {
      throw ConfigError("checkpoint: dims/activations/weights/biases disagree in layer count");
    }
    std::vector<Layer> layers;
    for (std::size_t l = 0; l < nl; ++l) {
      const int in = dims[l];
      const int out = dims[l + 1];
      if (weights[l].size() != static_cast<std::size_t>(in) * static_cast<std::size_t>(out) ||
          biases[l].size() != static_cast<std::size_t>(out)) {
        throw ConfigError("checkpoint: layer " + std::to_string(l) + " array sizes do not match dims");
      }
      Layer layer;
      layer.weight = Tensor(Eigen::Map<const Matrix>(weights[l].data(), out, in));
      layer.bias = Tensor(Eigen::Map<const Matrix>(biases[l].data(), 1, out));
      layer.activation = activation_from_string(acts[l]);
      layers.push_back(std::move(layer));
    }
    if (role != nullptr) *role = j.at("role").get<std::string>();
    return Mlp(std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace chyll::ad
