#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace nfwpo::io {
class BinaryWriter;
class BinaryReader;
}  // namespace nfwpo::io

namespace nfwpo::nn {

enum class Activation : std::uint8_t {
  Identity = 0,
  Relu = 1,
  // scale * tanh(z); the scale lives on the network.
  BoundedTanh = 2,
};

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::Identity;
};

/// Dense feed-forward network. Hidden layers use ReLU, the output layer uses
/// whatever activation the caller picked. Batched calls take one sample per
/// column.
class MlpNet {
 public:
  MlpNet() = default;

  /// Zero-initialized network with ReLU hidden layers.
  MlpNet(std::vector<int> sizes, Activation output_activation, double output_scale = 1.0);

  /// Hidden and output layers drawn uniformly from +-1/sqrt(fan_in); the
  /// output layer can be narrowed with `output_init_range` (> 0).
  static MlpNet random(std::vector<int> sizes, Activation output_activation, double output_scale,
                       std::mt19937_64& rng, double output_init_range = 0.0);

  [[nodiscard]] const std::vector<int>& sizes() const { return sizes_; }
  [[nodiscard]] int input_size() const { return sizes_.front(); }
  [[nodiscard]] int output_size() const { return sizes_.back(); }
  [[nodiscard]] double output_scale() const { return output_scale_; }
  [[nodiscard]] std::size_t parameter_count() const;

  [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  [[nodiscard]] bool same_architecture(const MlpNet& other) const;

  friend bool operator==(const MlpNet& a, const MlpNet& b);

 private:
  std::vector<int> sizes_;
  std::vector<Layer> layers_;
  double output_scale_ = 1.0;
};

/// Parameter count implied by a list of layer sizes.
std::size_t parameter_count(const std::vector<int>& sizes);

struct GradRecord {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
  double loss = 0.0;

  static GradRecord zeros_like(const MlpNet& net);
  [[nodiscard]] bool all_finite() const;
  [[nodiscard]] double max_abs() const;
};

/// Activations kept from a batched forward pass for the backward pass.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> pre;   // per layer, before activation
  std::vector<Eigen::MatrixXd> post;  // post[0] is the input
  [[nodiscard]] const Eigen::MatrixXd& output() const { return post.back(); }
};

Eigen::VectorXd forward(const MlpNet& net, const Eigen::VectorXd& input);
Eigen::MatrixXd forward_batch(const MlpNet& net, const Eigen::MatrixXd& inputs);
ForwardTrace forward_trace(const MlpNet& net, const Eigen::MatrixXd& inputs);

/// Backward pass for a batch. `output_grads` holds dL/d(output) per column.
/// Accumulates parameter gradients (summed over columns) into `param_grads`
/// when non-null and returns dL/d(input) per column.
Eigen::MatrixXd backward(const MlpNet& net, const ForwardTrace& trace,
                         const Eigen::MatrixXd& output_grads, GradRecord* param_grads);

/// d output[output_index] / d input.
Eigen::VectorXd backprop_input_grad(const MlpNet& net, const Eigen::VectorXd& input,
                                    int output_index = 0);

/// Gradient of a scalar loss w.r.t. every parameter given dL/d(output).
GradRecord backprop_param_grad(const MlpNet& net, const Eigen::VectorXd& input,
                               const Eigen::VectorXd& loss_grad_at_output);

/// Adaptive-moment optimizer state, one moment pair per parameter tensor.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<Eigen::MatrixXd> m_weight, v_weight;
  std::vector<Eigen::VectorXd> m_bias, v_bias;

  static AdamState for_net(const MlpNet& net);
  friend bool operator==(const AdamState& a, const AdamState& b);
};

void optimizer_step(MlpNet& net, const GradRecord& grads, AdamState& state, double learning_rate);

/// target <- (1 - tau) * target + tau * online.
void soft_update(MlpNet& target, const MlpNet& online, double tau);

void write(io::BinaryWriter& out, const MlpNet& net);
MlpNet read_net(io::BinaryReader& in);
void write(io::BinaryWriter& out, const AdamState& state);
AdamState read_adam(io::BinaryReader& in);

}  // namespace nfwpo::nn
