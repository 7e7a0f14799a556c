#include "fcca/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fcca {

std::size_t MlpParams::input_width() const {
  if (layers.empty()) throw ShapeError("empty MLP has no input width");
  return layers.front().in();
}

std::size_t MlpParams::output_width() const {
  if (layers.empty()) throw ShapeError("empty MLP has no output width");
  return layers.back().out();
}

std::vector<std::span<double>> MlpParams::views() {
  std::vector<std::span<double>> out;
  out.reserve(layers.size() * 2);
  for (auto& l : layers) {
    out.push_back(l.weight.values());
    out.push_back(l.bias.values());
  }
  return out;
}

std::vector<std::span<const double>> MlpParams::views() const {
  std::vector<std::span<const double>> out;
  out.reserve(layers.size() * 2);
  for (const auto& l : layers) {
    out.push_back(l.weight.values());
    out.push_back(l.bias.values());
  }
  return out;
}

MlpParams zero_mlp(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw ShapeError("an MLP needs at least input and output widths");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    p.layers.push_back({Tensor::matrix(widths[l + 1], widths[l]), Tensor({widths[l + 1]})});
  }
  return p;
}

MlpParams make_mlp(std::span<const std::size_t> widths, Rng& rng, OutputInit output) {
  MlpParams p = zero_mlp(widths);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    if (l + 1 == p.layers.size() && output == OutputInit::zero) break;
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in() + layer.out()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : layer.weight.values()) w = dist(rng);
  }
  return p;
}

namespace {

void dense_forward(const DenseLayer& layer, const Tensor& x, Tensor& y, bool relu) {
  const std::size_t n_in = layer.in();
  const std::size_t n_out = layer.out();
  if (x.cols() != n_in) {
    throw ShapeError("layer expects width " + std::to_string(n_in) + ", got " + shape_string(x.shape()));
  }
  y = Tensor::matrix(x.rows(), n_out);
  const double* w = layer.weight.values().data();
  const double* b = layer.bias.values().data();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = x.row(r).data();
    double* yr = y.row(r).data();
    for (std::size_t o = 0; o < n_out; ++o) {
      const double* wo = w + o * n_in;
      double s = b[o];
      for (std::size_t i = 0; i < n_in; ++i) s += wo[i] * xr[i];
      yr[o] = relu ? std::max(s, 0.0) : s;
    }
  }
}

Tensor as_batch(const Tensor& input) {
  if (input.shape().size() == 1) return Tensor({1, input.size()}, std::vector<double>(input.values().begin(), input.values().end()));
  return input;
}

}  // namespace

MlpTrace mlp_trace(const MlpParams& params, const Tensor& input) {
  if (params.layers.empty()) throw ShapeError("empty MLP");
  MlpTrace trace;
  trace.inputs.reserve(params.layers.size());
  trace.inputs.push_back(as_batch(input));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const bool last = l + 1 == params.layers.size();
    Tensor y;
    dense_forward(params.layers[l], trace.inputs.back(), y, !last);
    if (last) {
      trace.output = std::move(y);
    } else {
      trace.inputs.push_back(std::move(y));
    }
  }
  return trace;
}

Tensor mlp_forward(const MlpParams& params, const Tensor& input) {
  if (params.layers.empty()) throw ShapeError("empty MLP");
  Tensor x = as_batch(input);
  Tensor y;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    dense_forward(params.layers[l], x, y, l + 1 != params.layers.size());
    std::swap(x, y);
  }
  if (input.shape().size() == 1) return Tensor({x.cols()}, std::move(x.storage()));
  return x;
}

void mlp_backward(const MlpParams& params, const MlpTrace& trace, const Tensor& grad_output,
                  MlpGradients& grads, Tensor* grad_input) {
  if (grads.layers.size() != params.layers.size()) throw ShapeError("gradient layout mismatch");
  Tensor g = grad_output;
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& layer = params.layers[li];
    auto& gl = grads.layers[li];
    const Tensor& x = trace.inputs[li];
    const std::size_t n_in = layer.in();
    const std::size_t n_out = layer.out();
    if (g.rows() != x.rows() || g.cols() != n_out) throw ShapeError("gradient shape mismatch in backward");

    const bool need_input_grad = li > 0 || grad_input != nullptr;
    Tensor gx = need_input_grad ? Tensor::matrix(x.rows(), n_in) : Tensor();
    const double* w = layer.weight.values().data();
    double* gw = gl.weight.values().data();
    double* gb = gl.bias.values().data();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double* xr = x.row(r).data();
      const double* gr = g.row(r).data();
      double* gxr = need_input_grad ? gx.row(r).data() : nullptr;
      for (std::size_t o = 0; o < n_out; ++o) {
        const double go = gr[o];
        if (go == 0.0) continue;
        gb[o] += go;
        double* gwo = gw + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) gwo[i] += go * xr[i];
        if (gxr) {
          const double* wo = w + o * n_in;
          for (std::size_t i = 0; i < n_in; ++i) gxr[i] += go * wo[i];
        }
      }
    }
    if (li > 0) {
      // ReLU mask: the layer input is the post-activation of the previous layer.
      auto xv = x.values();
      auto gv = gx.values();
      for (std::size_t k = 0; k < gv.size(); ++k) {
        if (xv[k] <= 0.0) gv[k] = 0.0;
      }
    }
    if (li == 0) {
      if (grad_input) *grad_input = std::move(gx);
    } else {
      g = std::move(gx);
    }
  }
}

Backprop backprop(const MlpParams& params, const Tensor& input, const LossDefinition& loss) {
  MlpTrace trace = mlp_trace(params, input);
  Tensor grad_out = Tensor::matrix(trace.output.rows(), trace.output.cols());
  Backprop result;
  result.loss = loss(trace.output, grad_out);
  result.grads = zeros_like(params);
  mlp_backward(params, trace, grad_out, result.grads);
  return result;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax of an empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

double softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw std::out_of_range("label " + std::to_string(label) + " outside " +
                            std::to_string(logits.size()) + " classes");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  return -(logits[label] - m - std::log(z));
}

double softmax_cross_entropy_batch(const Tensor& logits, std::span<const std::size_t> labels,
                                   Tensor& grad_logits) {
  if (labels.size() != logits.rows()) throw ShapeError("one label per logit row required");
  grad_logits = Tensor::matrix(logits.rows(), logits.cols());
  if (labels.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    total += softmax_cross_entropy(row, labels[r]);
    auto p = softmax(row);
    auto gr = grad_logits.row(r);
    for (std::size_t c = 0; c < p.size(); ++c) gr[c] = p[c] * inv_n;
    gr[labels[r]] -= inv_n;
  }
  return total * inv_n;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::distance(values.begin(), std::max_element(values.begin(), values.end())));
}

}  // namespace fcca
