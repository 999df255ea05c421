#include "nfwpo/nn.hpp"

#include <cmath>
#include <string>

#include "nfwpo/binary_io.hpp"
#include "nfwpo/errors.hpp"

namespace nfwpo::nn {

namespace {

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw ShapeError("network needs at least an input and an output size");
  for (int s : sizes)
    if (s <= 0) throw ShapeError("layer sizes must be positive");
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation act, double scale) {
  switch (act) {
    case Activation::Identity:
      return z;
    case Activation::Relu:
      return z.cwiseMax(0.0);
    case Activation::BoundedTanh:
      return scale * z.array().tanh().matrix();
  }
  return z;
}

// Element-wise d(activation)/dz, evaluated from the pre-activation.
Eigen::MatrixXd activation_slope(const Eigen::MatrixXd& z, Activation act, double scale) {
  switch (act) {
    case Activation::Identity:
      return Eigen::MatrixXd::Ones(z.rows(), z.cols());
    case Activation::Relu:
      return (z.array() > 0.0).cast<double>().matrix();
    case Activation::BoundedTanh: {
      const Eigen::ArrayXXd t = z.array().tanh();
      return (scale * (1.0 - t.square())).matrix();
    }
  }
  return Eigen::MatrixXd::Ones(z.rows(), z.cols());
}

}  // namespace

std::size_t parameter_count(const std::vector<int>& sizes) {
  std::size_t n = 0;
  for (std::size_t k = 1; k < sizes.size(); ++k)
    n += static_cast<std::size_t>(sizes[k]) * static_cast<std::size_t>(sizes[k - 1] + 1);
  return n;
}

MlpNet::MlpNet(std::vector<int> sizes, Activation output_activation, double output_scale)
    : sizes_(std::move(sizes)), output_scale_(output_scale) {
  check_sizes(sizes_);
  if (!(output_scale_ > 0.0) || !std::isfinite(output_scale_))
    throw ShapeError("output scale must be positive and finite");
  for (std::size_t k = 1; k < sizes_.size(); ++k) {
    Layer layer;
    layer.weight = Eigen::MatrixXd::Zero(sizes_[k], sizes_[k - 1]);
    layer.bias = Eigen::VectorXd::Zero(sizes_[k]);
    layer.activation = (k + 1 == sizes_.size()) ? output_activation : Activation::Relu;
    layers_.push_back(std::move(layer));
  }
}

MlpNet MlpNet::random(std::vector<int> sizes, Activation output_activation, double output_scale,
                      std::mt19937_64& rng, double output_init_range) {
  MlpNet net(std::move(sizes), output_activation, output_scale);
  for (std::size_t k = 0; k < net.layers_.size(); ++k) {
    auto& layer = net.layers_[k];
    double range = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    if (k + 1 == net.layers_.size() && output_init_range > 0.0) range = output_init_range;
    std::uniform_real_distribution<double> dist(-range, range);
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = dist(rng);
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = dist(rng);
  }
  return net;
}

std::size_t MlpNet::parameter_count() const { return nn::parameter_count(sizes_); }

bool MlpNet::same_architecture(const MlpNet& other) const {
  if (sizes_ != other.sizes_ || layers_.size() != other.layers_.size()) return false;
  for (std::size_t k = 0; k < layers_.size(); ++k)
    if (layers_[k].activation != other.layers_[k].activation) return false;
  return output_scale_ == other.output_scale_;
}

bool operator==(const MlpNet& a, const MlpNet& b) {
  if (!a.same_architecture(b)) return false;
  for (std::size_t k = 0; k < a.layers_.size(); ++k) {
    if (a.layers_[k].weight != b.layers_[k].weight) return false;
    if (a.layers_[k].bias != b.layers_[k].bias) return false;
  }
  return true;
}

GradRecord GradRecord::zeros_like(const MlpNet& net) {
  GradRecord g;
  for (const auto& layer : net.layers()) {
    g.weight.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
  }
  return g;
}

bool GradRecord::all_finite() const {
  for (const auto& w : weight)
    if (!w.allFinite()) return false;
  for (const auto& b : bias)
    if (!b.allFinite()) return false;
  return std::isfinite(loss);
}

double GradRecord::max_abs() const {
  double m = 0.0;
  for (const auto& w : weight)
    if (w.size() > 0) m = std::max(m, w.cwiseAbs().maxCoeff());
  for (const auto& b : bias)
    if (b.size() > 0) m = std::max(m, b.cwiseAbs().maxCoeff());
  return m;
}

ForwardTrace forward_trace(const MlpNet& net, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != net.input_size())
    throw ShapeError("input has " + std::to_string(inputs.rows()) + " rows, network expects " +
                     std::to_string(net.input_size()));
  ForwardTrace trace;
  trace.post.reserve(net.layers().size() + 1);
  trace.pre.reserve(net.layers().size());
  trace.post.push_back(inputs);
  for (const auto& layer : net.layers()) {
    Eigen::MatrixXd z = layer.weight * trace.post.back();
    z.colwise() += layer.bias;
    trace.post.push_back(activate(z, layer.activation, net.output_scale()));
    trace.pre.push_back(std::move(z));
  }
  if (!trace.output().allFinite()) throw NumericError("network produced a non-finite output");
  return trace;
}

Eigen::MatrixXd forward_batch(const MlpNet& net, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != net.input_size())
    throw ShapeError("input has " + std::to_string(inputs.rows()) + " rows, network expects " +
                     std::to_string(net.input_size()));
  Eigen::MatrixXd x = inputs;
  for (const auto& layer : net.layers()) {
    Eigen::MatrixXd z = layer.weight * x;
    z.colwise() += layer.bias;
    x = activate(z, layer.activation, net.output_scale());
  }
  if (!x.allFinite()) throw NumericError("network produced a non-finite output");
  return x;
}

Eigen::VectorXd forward(const MlpNet& net, const Eigen::VectorXd& input) {
  return forward_batch(net, input);
}

Eigen::MatrixXd backward(const MlpNet& net, const ForwardTrace& trace,
                         const Eigen::MatrixXd& output_grads, GradRecord* param_grads) {
  const auto& layers = net.layers();
  if (output_grads.rows() != net.output_size() || output_grads.cols() != trace.output().cols())
    throw ShapeError("output gradient shape does not match the forward trace");
  if (param_grads && (param_grads->weight.size() != layers.size() || param_grads->bias.size() != layers.size()))
    throw ShapeError("gradient record does not match the network");

  Eigen::MatrixXd delta = output_grads;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& layer = layers[k];
    delta = delta.cwiseProduct(activation_slope(trace.pre[k], layer.activation, net.output_scale()));
    if (param_grads) {
      param_grads->weight[k].noalias() += delta * trace.post[k].transpose();
      param_grads->bias[k] += delta.rowwise().sum();
    }
    delta = layer.weight.transpose() * delta;
  }
  if (!delta.allFinite()) throw NumericError("non-finite gradient during backpropagation");
  return delta;
}

Eigen::VectorXd backprop_input_grad(const MlpNet& net, const Eigen::VectorXd& input, int output_index) {
  if (output_index < 0 || output_index >= net.output_size())
    throw ShapeError("output index out of range");
  const auto trace = forward_trace(net, input);
  Eigen::MatrixXd seed = Eigen::MatrixXd::Zero(net.output_size(), 1);
  seed(output_index, 0) = 1.0;
  return backward(net, trace, seed, nullptr);
}

GradRecord backprop_param_grad(const MlpNet& net, const Eigen::VectorXd& input,
                               const Eigen::VectorXd& loss_grad_at_output) {
  const auto trace = forward_trace(net, input);
  auto grads = GradRecord::zeros_like(net);
  backward(net, trace, loss_grad_at_output, &grads);
  return grads;
}

AdamState AdamState::for_net(const MlpNet& net) {
  AdamState s;
  for (const auto& layer : net.layers()) {
    s.m_weight.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
    s.v_weight.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
    s.m_bias.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
    s.v_bias.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
  }
  return s;
}

bool operator==(const AdamState& a, const AdamState& b) {
  return a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.epsilon == b.epsilon && a.step == b.step &&
         a.m_weight == b.m_weight && a.v_weight == b.v_weight && a.m_bias == b.m_bias &&
         a.v_bias == b.v_bias;
}

void optimizer_step(MlpNet& net, const GradRecord& grads, AdamState& state, double learning_rate) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size() || state.m_weight.size() != layers.size())
    throw ShapeError("gradient/optimizer state does not match the network");
  if (!grads.all_finite()) throw NumericError("non-finite gradient passed to the optimizer");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    if (g.rows() != param.rows() || g.cols() != param.cols())
      throw ShapeError("gradient tensor shape does not match its parameter");
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    param.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  };
  for (std::size_t k = 0; k < layers.size(); ++k) {
    update(layers[k].weight, grads.weight[k], state.m_weight[k], state.v_weight[k]);
    update(layers[k].bias, grads.bias[k], state.m_bias[k], state.v_bias[k]);
  }
}

void soft_update(MlpNet& target, const MlpNet& online, double tau) {
  if (!target.same_architecture(online)) throw ShapeError("soft update between different architectures");
  auto& t = target.layers();
  const auto& o = online.layers();
  for (std::size_t k = 0; k < t.size(); ++k) {
    t[k].weight = (1.0 - tau) * t[k].weight + tau * o[k].weight;
    t[k].bias = (1.0 - tau) * t[k].bias + tau * o[k].bias;
  }
}

void write(io::BinaryWriter& out, const MlpNet& net) {
  out.str("mlp/1");
  out.u64(net.sizes().size());
  for (int s : net.sizes()) out.u64(static_cast<std::uint64_t>(s));
  out.f64(net.output_scale());
  for (const auto& layer : net.layers()) {
    out.u8(static_cast<std::uint8_t>(layer.activation));
    out.mat(layer.weight);
    out.vec(layer.bias);
  }
}

MlpNet read_net(io::BinaryReader& in) {
  in.expect_tag("mlp/1");
  const auto n = in.u64();
  if (n < 2 || n > 64) throw FormatError("implausible layer count in checkpoint");
  std::vector<int> sizes(n);
  for (auto& s : sizes) s = static_cast<int>(in.u64());
  const double scale = in.f64();
  MlpNet net(sizes, Activation::Identity, scale);
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    auto& layer = net.layers()[k];
    const auto act = in.u8();
    if (act > 2) throw FormatError("unknown activation tag in checkpoint");
    layer.activation = static_cast<Activation>(act);
    auto w = in.mat();
    auto b = in.vec();
    if (w.rows() != layer.weight.rows() || w.cols() != layer.weight.cols() || b.size() != layer.bias.size())
      throw FormatError("layer shape in checkpoint disagrees with declared sizes");
    layer.weight = std::move(w);
    layer.bias = std::move(b);
  }
  return net;
}

void write(io::BinaryWriter& out, const AdamState& s) {
  out.str("adam/1");
  out.f64(s.beta1);
  out.f64(s.beta2);
  out.f64(s.epsilon);
  out.i64(s.step);
  out.u64(s.m_weight.size());
  for (std::size_t k = 0; k < s.m_weight.size(); ++k) {
    out.mat(s.m_weight[k]);
    out.mat(s.v_weight[k]);
    out.vec(s.m_bias[k]);
    out.vec(s.v_bias[k]);
  }
}

AdamState read_adam(io::BinaryReader& in) {
  in.expect_tag("adam/1");
  AdamState s;
  s.beta1 = in.f64();
  s.beta2 = in.f64();
  s.epsilon = in.f64();
  s.step = in.i64();
  const auto n = in.u64();
  if (n > 64) throw FormatError("implausible layer count in optimizer state");
  for (std::size_t k = 0; k < n; ++k) {
    s.m_weight.push_back(in.mat());
    s.v_weight.push_back(in.mat());
    s.m_bias.push_back(in.vec());
    s.v_bias.push_back(in.vec());
  }
  return s;
}

}  // namespace nfwpo::nn
