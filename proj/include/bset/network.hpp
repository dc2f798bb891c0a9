#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bset/kernels.hpp"
#include "bset/rng.hpp"
#include "bset/tensor.hpp"

namespace bset {

enum class LayerKind : std::uint8_t {
  convolution = 0,
  dense = 1,
  relu = 2,
  maxpool = 3,
  flatten = 4,
  dropout = 5,
  softmax = 6,
};

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::uint32_t units = 0;    // output channels (convolution) or units (dense)
  std::uint32_t kernel = 0;   // convolution kernel extent
  std::uint32_t padding = 0;  // convolution zero padding
  std::uint32_t pool = 0;     // maxpool window and stride
  double rate = 0.0;          // dropout drop probability

  static LayerSpec convolution(std::uint32_t channels, std::uint32_t kernel,
                               std::optional<std::uint32_t> padding = std::nullopt);
  static LayerSpec dense(std::uint32_t units);
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec maxpool(std::uint32_t size);
  static LayerSpec flatten() { return {LayerKind::flatten}; }
  static LayerSpec dropout(double rate);
  static LayerSpec softmax() { return {LayerKind::softmax}; }

  bool has_parameters() const {
    return kind == LayerKind::convolution || kind == LayerKind::dense;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Per-sample input shape plus the layer stack.
struct Architecture {
  Shape input;
  std::vector<LayerSpec> layers;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// Per-sample output shape of every layer. Throws ShapeError naming the first
// offending layer, or when the stack does not end in exactly one softmax.
std::vector<Shape> validate_architecture(const Architecture& arch);

std::size_t class_count(const Architecture& arch);

// conv(3x3, 8) relu pool(2) conv(3x3, 16) relu pool(2) flatten dense(hidden)
// relu dropout dense(classes) softmax.
Architecture desk_cnn(const Shape& input, std::size_t classes, double dropout_rate = 0.5,
                      std::uint32_t hidden = 64);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Weights and biases in layer order, addressed by unique name.
class ModelParameters {
 public:
  void add(std::string name, Tensor tensor);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  NamedTensor& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor& operator[](std::size_t i) const { return entries_[i]; }
  const NamedTensor* find(const std::string& name) const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const;

  friend bool operator==(const ModelParameters& a, const ModelParameters& b);

 private:
  std::vector<NamedTensor> entries_;
};

using Gradients = std::vector<Tensor>;

// A layered classifier whose dropout layers can stay stochastic at inference.
struct Model {
  Architecture arch;
  ModelParameters params;
  std::vector<double> dropout_rates;  // one per dropout layer, in order

  // He-normal weights, zero biases.
  static Model initialize(Architecture arch, SeededRng& rng);
  // Wraps explicit parameters; names and shapes must match what initialize()
  // would create for the architecture.
  static Model from_parameters(Architecture arch, ModelParameters params);

  std::size_t classes() const { return class_count(arch); }
  // Index of the first dropout layer, or the layer count when there is none.
  std::size_t first_stochastic_layer() const;
};

enum class Mode { train, mc_stochastic, deterministic };

// Class probabilities. `input` is one sample shaped like arch.input (output
// shape {C}) or a batch {N, arch.input...} (output {N, C}). Dropout draws one
// mask element per activation from `rng` in row-major order.
Tensor forward(const Model& model, const Tensor& input, Mode mode, SeededRng& rng,
               kernels::Backend backend = kernels::default_backend());

// Runs layers [begin, end) on a batched activation. Used to share a
// deterministic prefix across many stochastic passes.
Tensor forward_layers(const Model& model, const Tensor& activation, std::size_t begin,
                      std::size_t end, Mode mode, SeededRng& rng,
                      kernels::Backend backend = kernels::default_backend());

struct LossValue {
  double loss = 0.0;
  Tensor input_gradient;
};

// Cross-entropy of one sample and its gradient with respect to the input.
LossValue loss_and_input_gradient(const Model& model, const Tensor& input, std::size_t label,
                                  SeededRng& rng, Mode mode = Mode::deterministic,
                                  kernels::Backend backend = kernels::default_backend());

struct BatchGradients {
  double loss = 0.0;         // mean cross-entropy
  std::size_t correct = 0;   // argmax hits in this forward pass
  Gradients grads;           // aligned with model.params, batch-mean
};

BatchGradients parameter_gradients(const Model& model, const Tensor& batch,
                                   std::span<const std::size_t> labels, SeededRng& rng,
                                   Mode mode = Mode::train,
                                   kernels::Backend backend = kernels::default_backend());

// Pre-softmax scores of one sample and the gradient of each score with
// respect to the input (deterministic mode).
struct LogitJacobian {
  std::vector<double> logits;
  std::vector<Tensor> gradients;
};

LogitJacobian logit_input_jacobian(const Model& model, const Tensor& input,
                                   kernels::Backend backend = kernels::default_backend());

std::size_t argmax(std::span<const double> values);

}  // namespace bset
