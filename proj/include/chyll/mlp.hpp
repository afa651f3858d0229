#pragma once

#include "chyll/autodiff.hpp"

#include "json.hpp"

#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace chyll::ad {

enum class Activation { tanh, relu, identity };

Activation activation_from_string(std::string_view name);
std::string to_string(Activation a);

// Fully connected layer; weight is (out x in), bias is (1 x out).
struct Layer {
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::tanh;
};

// Forward result carrying per-input-direction tangents (columns of the
// Jacobian for every batch row), recorded on the tape so they can be
// differentiated with respect to the weights.
struct TangentForward {
  Var output;
  std::vector<Var> tangents;  // tangents[j] is rows x out_dim = dOutput/dx_j
};

class Mlp {
 public:
  Mlp() = default;
  // dims = {in, hidden..., out}; one activation per layer. Weights are
  // Xavier-uniform, biases zero.
  Mlp(std::vector<int> dims, std::vector<Activation> activations, std::mt19937_64& rng);
  explicit Mlp(std::vector<Layer> layers);

  // Hidden layers use `hidden_activation`, the output layer is identity.
  static Mlp make(int in_dim, const std::vector<int>& hidden, int out_dim, Activation hidden_activation,
                  std::mt19937_64& rng);

  int in_dim() const;
  int out_dim() const;
  std::vector<int> dims() const;
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  std::vector<Tensor*> parameters();
  std::size_t parameter_count() const;

  // Batched forward on the tape; x is (batch x in_dim).
  Var forward(Tape& tape, const Var& x);
  TangentForward forward_with_tangents(Tape& tape, const Var& x);

  // Tape-free inference.
  Matrix eval(const Matrix& x) const;
  Eigen::VectorXd eval(const Eigen::VectorXd& x) const;
  // Exact Jacobian (out_dim x in_dim) at a single point by forward-mode columns.
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const;

  // Checkpoint format: {"version":1,"role":..,"dims":[..],"activations":[..],
  // "weights":[[row-major out x in]..],"biases":[[..]..]}
  nlohmann::json to_json(const std::string& role) const;
  static Mlp from_json(const nlohmann::json& j, std::string* role = nullptr);

 private:
  void validate() const;
  std::vector<Layer> layers_;
};

}  // namespace chyll::ad
