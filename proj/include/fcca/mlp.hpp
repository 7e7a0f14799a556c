#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fcca/params.hpp"
#include "fcca/rng.hpp"
#include "fcca/tensor.hpp"

namespace fcca {

struct DenseLayer {
  Tensor weight;  // {out, in}
  Tensor bias;    // {out}

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
};

// Sequential perceptron: ReLU after every hidden layer, identity on the output.
struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_width() const;
  std::size_t output_width() const;

  std::vector<std::span<double>> views();
  std::vector<std::span<const double>> views() const;
};

// Gradients carry the parameter layout.
using MlpGradients = MlpParams;

enum class OutputInit { glorot, zero };

// widths = {in, hidden..., out}. Glorot-uniform weights, zero biases.
MlpParams make_mlp(std::span<const std::size_t> widths, Rng& rng, OutputInit output = OutputInit::glorot);
MlpParams zero_mlp(std::span<const std::size_t> widths);

Tensor mlp_forward(const MlpParams& params, const Tensor& input);

// Activations retained for the backward pass. inputs[l] is what layer l saw.
struct MlpTrace {
  std::vector<Tensor> inputs;
  Tensor output;
};

MlpTrace mlp_trace(const MlpParams& params, const Tensor& input);

// Accumulates dL/dparams into `grads` and, when requested, writes dL/dinput.
void mlp_backward(const MlpParams& params, const MlpTrace& trace, const Tensor& grad_output,
                  MlpGradients& grads, Tensor* grad_input = nullptr);

// Computes a scalar loss of the network output and fills its gradient.
using LossDefinition = std::function<double(const Tensor& output, Tensor& grad_output)>;

struct Backprop {
  double loss = 0.0;
  MlpGradients grads;
};

Backprop backprop(const MlpParams& params, const Tensor& input, const LossDefinition& loss);

// -log softmax(logits)[label], max-shifted.
double softmax_cross_entropy(std::span<const double> logits, std::size_t label);
std::vector<double> softmax(std::span<const double> logits);

// Mean cross-entropy over a batch with its gradient w.r.t. the logits.
double softmax_cross_entropy_batch(const Tensor& logits, std::span<const std::size_t> labels,
                                   Tensor& grad_logits);

std::size_t argmax(std::span<const double> values);

}  // namespace fcca
