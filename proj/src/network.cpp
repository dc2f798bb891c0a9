#include "bset/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "bset/error.hpp"

namespace bset {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::convolution: return "convolution";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dropout: return "dropout";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

LayerSpec LayerSpec::convolution(std::uint32_t channels, std::uint32_t kernel,
                                 std::optional<std::uint32_t> padding) {
  LayerSpec s{LayerKind::convolution};
  s.units = channels;
  s.kernel = kernel;
  s.padding = padding.value_or(kernel / 2);
  return s;
}

LayerSpec LayerSpec::dense(std::uint32_t units) {
  LayerSpec s{LayerKind::dense};
  s.units = units;
  return s;
}

LayerSpec LayerSpec::maxpool(std::uint32_t size) {
  LayerSpec s{LayerKind::maxpool};
  s.pool = size;
  return s;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec s{LayerKind::dropout};
  s.rate = rate;
  return s;
}

namespace {

[[noreturn]] void layer_error(std::size_t index, const LayerSpec& layer, const std::string& what) {
  throw ShapeError("layer " + std::to_string(index) + " (" + layer_kind_name(layer.kind) +
                   "): " + what);
}

}  // namespace

std::vector<Shape> validate_architecture(const Architecture& arch) {
  if (arch.input.empty() || shape_size(arch.input) == 0) {
    throw ShapeError("architecture input shape " + shape_string(arch.input) + " is empty");
  }
  if (arch.layers.empty() || arch.layers.back().kind != LayerKind::softmax) {
    throw ShapeError("architecture must end with a softmax layer");
  }
  std::vector<Shape> shapes;
  Shape cur = arch.input;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    switch (l.kind) {
      case LayerKind::convolution: {
        if (cur.size() != 3) layer_error(i, l, "expects a (channels, height, width) input, got " + shape_string(cur));
        if (l.units == 0 || l.kernel == 0) layer_error(i, l, "channel count and kernel extent must be positive");
        if (cur[1] + 2 * l.padding < l.kernel || cur[2] + 2 * l.padding < l.kernel) {
          layer_error(i, l, "kernel " + std::to_string(l.kernel) + " larger than padded input " + shape_string(cur));
        }
        cur = {l.units, cur[1] + 2 * l.padding - l.kernel + 1, cur[2] + 2 * l.padding - l.kernel + 1};
        break;
      }
      case LayerKind::dense:
        if (cur.size() != 1) layer_error(i, l, "expects a flat input, got " + shape_string(cur));
        if (l.units == 0) layer_error(i, l, "unit count must be positive");
        cur = {l.units};
        break;
      case LayerKind::relu:
        break;
      case LayerKind::dropout:
        if (!(l.rate >= 0.0 && l.rate < 1.0)) layer_error(i, l, "rate must lie in [0, 1)");
        break;
      case LayerKind::maxpool:
        if (cur.size() != 3) layer_error(i, l, "expects a (channels, height, width) input, got " + shape_string(cur));
        if (l.pool == 0) layer_error(i, l, "window must be positive");
        if (cur[1] < l.pool || cur[2] < l.pool) layer_error(i, l, "window larger than input " + shape_string(cur));
        cur = {cur[0], cur[1] / l.pool, cur[2] / l.pool};
        break;
      case LayerKind::flatten:
        cur = {shape_size(cur)};
        break;
      case LayerKind::softmax:
        if (i + 1 != arch.layers.size()) layer_error(i, l, "softmax must be the terminal layer");
        if (cur.size() != 1) layer_error(i, l, "expects a flat input, got " + shape_string(cur));
        if (cur[0] < 2) layer_error(i, l, "needs at least two classes");
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

std::size_t class_count(const Architecture& arch) { return validate_architecture(arch).back()[0]; }

Architecture desk_cnn(const Shape& input, std::size_t classes, double dropout_rate,
                      std::uint32_t hidden) {
  Architecture arch;
  arch.input = input;
  arch.layers = {LayerSpec::convolution(8, 3),
                 LayerSpec::relu(),
                 LayerSpec::maxpool(2),
                 LayerSpec::convolution(16, 3),
                 LayerSpec::relu(),
                 LayerSpec::maxpool(2),
                 LayerSpec::flatten(),
                 LayerSpec::dense(hidden),
                 LayerSpec::relu(),
                 LayerSpec::dropout(dropout_rate),
                 LayerSpec::dense(static_cast<std::uint32_t>(classes)),
                 LayerSpec::softmax()};
  validate_architecture(arch);
  return arch;
}

void ModelParameters::add(std::string name, Tensor tensor) {
  if (find(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(tensor)});
}

const NamedTensor* ModelParameters::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::size_t ModelParameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

bool operator==(const ModelParameters& a, const ModelParameters& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || !(a[i].tensor == b[i].tensor)) return false;
  }
  return true;
}

namespace {

struct ParamLayout {
  std::string name;
  Shape shape;
  double init_std;
};

std::vector<ParamLayout> parameter_layout(const Architecture& arch) {
  const auto shapes = validate_architecture(arch);
  std::vector<ParamLayout> out;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const Shape& in = i == 0 ? arch.input : shapes[i - 1];
    const std::string prefix = "layer" + std::to_string(i);
    if (l.kind == LayerKind::convolution) {
      const double fan_in = static_cast<double>(in[0] * l.kernel * l.kernel);
      out.push_back({prefix + ".weight", {l.units, in[0], l.kernel, l.kernel}, std::sqrt(2.0 / fan_in)});
      out.push_back({prefix + ".bias", {l.units}, 0.0});
    } else if (l.kind == LayerKind::dense) {
      out.push_back({prefix + ".weight", {l.units, in[0]}, std::sqrt(2.0 / static_cast<double>(in[0]))});
      out.push_back({prefix + ".bias", {l.units}, 0.0});
    }
  }
  return out;
}

std::vector<double> collect_dropout_rates(const Architecture& arch) {
  std::vector<double> rates;
  for (const auto& l : arch.layers) {
    if (l.kind == LayerKind::dropout) rates.push_back(l.rate);
  }
  return rates;
}

}  // namespace

Model Model::initialize(Architecture arch, SeededRng& rng) {
  Model m;
  for (const auto& p : parameter_layout(arch)) {
    Tensor t(p.shape);
    if (p.init_std > 0.0) {
      for (auto& v : t.values()) v = p.init_std * rng.normal();
    }
    m.params.add(p.name, std::move(t));
  }
  m.dropout_rates = collect_dropout_rates(arch);
  m.arch = std::move(arch);
  return m;
}

Model Model::from_parameters(Architecture arch, ModelParameters params) {
  const auto layout = parameter_layout(arch);
  if (layout.size() != params.size()) {
    throw ShapeError("architecture needs " + std::to_string(layout.size()) + " parameter tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params[i].name != layout[i].name || params[i].tensor.shape() != layout[i].shape) {
      throw ShapeError("parameter " + std::to_string(i) + " should be " + layout[i].name + " " +
                       shape_string(layout[i].shape) + ", got " + params[i].name + " " +
                       shape_string(params[i].tensor.shape()));
    }
    if (!params[i].tensor.all_finite()) throw NumericError("parameter " + params[i].name + " is not finite");
  }
  Model m;
  m.params = std::move(params);
  m.dropout_rates = collect_dropout_rates(arch);
  m.arch = std::move(arch);
  return m;
}

std::size_t Model::first_stochastic_layer() const {
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (arch.layers[i].kind == LayerKind::dropout && arch.layers[i].rate > 0.0) return i;
  }
  return arch.layers.size();
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

namespace {

// Activations recorded during a forward pass for the backward sweep.
struct Tape {
  std::vector<Tensor> inputs;                         // input of each layer
  std::vector<std::vector<std::uint32_t>> argmax;     // maxpool winners
  std::vector<std::vector<double>> masks;             // dropout scale factors
  Tensor output;
};

Shape batched(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

// Index of the weight tensor of every parameterised layer.
std::vector<std::size_t> param_slots(const Architecture& arch) {
  std::vector<std::size_t> slots(arch.layers.size(), 0);
  std::size_t next = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (arch.layers[i].has_parameters()) {
      slots[i] = next;
      next += 2;
    }
  }
  return slots;
}

void softmax_rows(std::span<double> values, std::size_t cols) {
  for (std::size_t r = 0; r < values.size() / cols; ++r) {
    auto row = values.subspan(r * cols, cols);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
}

Tape run(const Model& model, Tensor x, std::size_t begin, std::size_t end, Mode mode,
         SeededRng& rng, kernels::Backend backend, bool record) {
  const auto& layers = model.arch.layers;
  const auto& k = kernels::table(backend);
  const auto slots = param_slots(model.arch);
  Tape tape;
  if (record) {
    tape.inputs.resize(layers.size());
    tape.argmax.resize(layers.size());
    tape.masks.resize(layers.size());
  }
  for (std::size_t i = begin; i < end; ++i) {
    const auto& l = layers[i];
    const std::size_t n = x.shape()[0];
    Tensor y;
    switch (l.kind) {
      case LayerKind::convolution: {
        const auto& w = model.params[slots[i]].tensor;
        const auto& b = model.params[slots[i] + 1].tensor;
        kernels::ConvDims d{n, x.shape()[1], x.shape()[2], x.shape()[3], l.units, l.kernel, l.padding};
        y = Tensor({n, d.out_channels, d.out_height(), d.out_width()});
        k.conv2d_forward(d, x.values(), w.values(), b.values(), y.values());
        break;
      }
      case LayerKind::dense: {
        const auto& w = model.params[slots[i]].tensor;
        const auto& b = model.params[slots[i] + 1].tensor;
        kernels::DenseDims d{n, x.shape()[1], l.units};
        y = Tensor({n, d.out_features});
        k.dense_forward(d, x.values(), w.values(), b.values(), y.values());
        break;
      }
      case LayerKind::relu: {
        y = x;
        for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
        break;
      }
      case LayerKind::maxpool: {
        kernels::PoolDims d{n, x.shape()[1], x.shape()[2], x.shape()[3], l.pool};
        y = Tensor({n, d.channels, d.out_height(), d.out_width()});
        std::vector<std::uint32_t> winners(y.size());
        k.maxpool_forward(d, x.values(), y.values(), winners);
        if (record) tape.argmax[i] = std::move(winners);
        break;
      }
      case LayerKind::flatten:
        y = x.reshaped({n, x.size() / n});
        break;
      case LayerKind::dropout: {
        y = x;
        if (mode != Mode::deterministic && l.rate > 0.0) {
          // Inverted dropout: survivors are scaled so the expectation matches
          // the deterministic pass.
          const double keep_scale = 1.0 / (1.0 - l.rate);
          std::vector<double> mask(y.size());
          for (std::size_t j = 0; j < y.size(); ++j) {
            mask[j] = rng.uniform() < l.rate ? 0.0 : keep_scale;
            y[j] *= mask[j];
          }
          if (record) tape.masks[i] = std::move(mask);
        }
        break;
      }
      case LayerKind::softmax:
        y = x;
        softmax_rows(y.values(), y.shape()[1]);
        break;
    }
    if (record) tape.inputs[i] = std::move(x);
    x = std::move(y);
  }
  tape.output = std::move(x);
  return tape;
}

// Reverse sweep from d(loss)/d(logits). Fills `grads` (if non-null) and
// returns d(loss)/d(network input) when requested.
Tensor backward(const Model& model, const Tape& tape, Tensor d_out, bool want_input_grad,
                Gradients* grads, kernels::Backend backend) {
  const auto& layers = model.arch.layers;
  const auto& k = kernels::table(backend);
  const auto slots = param_slots(model.arch);
  const std::size_t last = layers.size() - 1;  // softmax, folded into d_out
  if (grads) {
    grads->clear();
    for (const auto& p : model.params) grads->emplace_back(p.tensor.shape());
  }
  for (std::size_t ii = last; ii-- > 0;) {
    const auto& l = layers[ii];
    const Tensor& x = tape.inputs[ii];
    const std::size_t n = x.shape()[0];
    const bool need_din = ii > 0 || want_input_grad;
    Tensor d_in;
    switch (l.kind) {
      case LayerKind::convolution: {
        const auto& w = model.params[slots[ii]].tensor;
        kernels::ConvDims d{n, x.shape()[1], x.shape()[2], x.shape()[3], l.units, l.kernel, l.padding};
        Tensor dw(w.shape()), db({l.units});
        if (need_din) d_in = Tensor(x.shape());
        k.conv2d_backward(d, x.values(), w.values(), d_out.values(),
                          need_din ? d_in.values() : std::span<double>{}, dw.values(), db.values());
        if (grads) {
          (*grads)[slots[ii]] = std::move(dw);
          (*grads)[slots[ii] + 1] = std::move(db);
        }
        break;
      }
      case LayerKind::dense: {
        const auto& w = model.params[slots[ii]].tensor;
        kernels::DenseDims d{n, x.shape()[1], l.units};
        Tensor dw(w.shape()), db({l.units});
        if (need_din) d_in = Tensor(x.shape());
        k.dense_backward(d, x.values(), w.values(), d_out.values(),
                         need_din ? d_in.values() : std::span<double>{}, dw.values(), db.values());
        if (grads) {
          (*grads)[slots[ii]] = std::move(dw);
          (*grads)[slots[ii] + 1] = std::move(db);
        }
        break;
      }
      case LayerKind::relu:
        d_in = std::move(d_out);
        for (std::size_t j = 0; j < d_in.size(); ++j) {
          if (!(x[j] > 0.0)) d_in[j] = 0.0;
        }
        break;
      case LayerKind::maxpool: {
        kernels::PoolDims d{n, x.shape()[1], x.shape()[2], x.shape()[3], l.pool};
        d_in = Tensor(x.shape());
        k.maxpool_backward(d, d_out.values(), tape.argmax[ii], d_in.values());
        break;
      }
      case LayerKind::flatten:
        d_in = d_out.reshaped(x.shape());
        break;
      case LayerKind::dropout:
        d_in = std::move(d_out);
        if (!tape.masks[ii].empty()) {
          for (std::size_t j = 0; j < d_in.size(); ++j) d_in[j] *= tape.masks[ii][j];
        }
        break;
      case LayerKind::softmax:
        throw ShapeError("softmax must be the terminal layer");
    }
    if (!need_din) return {};
    d_out = std::move(d_in);
  }
  return d_out;
}

// Returns the batch size, or 0 for a single un-batched sample.
std::size_t check_input(const Model& model, const Tensor& input) {
  const Shape& want = model.arch.input;
  if (!input.all_finite()) throw NumericError("non-finite value in network input");
  if (input.shape() == want) return 0;
  if (input.rank() == want.size() + 1 && std::equal(want.begin(), want.end(), input.shape().begin() + 1)) {
    return input.shape()[0];
  }
  throw ShapeError("input shape " + shape_string(input.shape()) + " does not match layer 0 (" +
                   layer_kind_name(model.arch.layers.front().kind) + ") expecting " +
                   shape_string(want) + " or a batch thereof");
}

Tensor as_batch(const Model& model, const Tensor& input, std::size_t n) {
  return n == 0 ? input.reshaped(batched(1, model.arch.input)) : input;
}

void check_output(const Tensor& out) {
  if (!out.all_finite()) throw NumericError("network produced a non-finite output");
}

}  // namespace

Tensor forward(const Model& model, const Tensor& input, Mode mode, SeededRng& rng,
               kernels::Backend backend) {
  const std::size_t n = check_input(model, input);
  Tape tape = run(model, as_batch(model, input, n), 0, model.arch.layers.size(), mode, rng, backend, false);
  check_output(tape.output);
  if (n == 0) return tape.output.reshaped({tape.output.shape()[1]});
  return std::move(tape.output);
}

Tensor forward_layers(const Model& model, const Tensor& activation, std::size_t begin,
                      std::size_t end, Mode mode, SeededRng& rng, kernels::Backend backend) {
  if (begin > end || end > model.arch.layers.size()) {
    throw ArgumentError("layer range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of bounds");
  }
  if (begin == 0) check_input(model, activation);
  Tape tape = run(model, activation, begin, end, mode, rng, backend, false);
  check_output(tape.output);
  return std::move(tape.output);
}

LossValue loss_and_input_gradient(const Model& model, const Tensor& input, std::size_t label,
                                  SeededRng& rng, Mode mode, kernels::Backend backend) {
  const std::size_t classes = model.classes();
  if (label >= classes) {
    throw ArgumentError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(classes) + " classes");
  }
  const std::size_t n = check_input(model, input);
  if (n > 1) throw ShapeError("loss_and_input_gradient takes a single sample");
  Tape tape = run(model, as_batch(model, input, n), 0, model.arch.layers.size(), mode, rng, backend, true);
  check_output(tape.output);
  const Tensor& logits = tape.inputs.back();
  const double mx = *std::max_element(logits.values().begin(), logits.values().end());
  double sum = 0.0;
  for (double z : logits.values()) sum += std::exp(z - mx);
  LossValue out;
  out.loss = std::log(sum) + mx - logits[label];
  Tensor d_logits = tape.output;  // p - onehot
  d_logits[label] -= 1.0;
  Tensor g = backward(model, tape, std::move(d_logits), true, nullptr, backend);
  if (!g.all_finite()) throw NumericError("non-finite input gradient");
  out.input_gradient = g.reshaped(input.shape());
  return out;
}

BatchGradients parameter_gradients(const Model& model, const Tensor& batch,
                                   std::span<const std::size_t> labels, SeededRng& rng, Mode mode,
                                   kernels::Backend backend) {
  if (labels.empty()) throw ArgumentError("empty batch");
  const std::size_t classes = model.classes();
  std::size_t n = check_input(model, batch);
  if (n == 0) n = 1;
  if (n != labels.size()) {
    throw ShapeError("batch has " + std::to_string(n) + " samples but " + std::to_string(labels.size()) + " labels");
  }
  for (auto y : labels) {
    if (y >= classes) throw ArgumentError("label " + std::to_string(y) + " out of range");
  }
  Tape tape = run(model, batch.reshaped(batched(n, model.arch.input)), 0, model.arch.layers.size(), mode,
                  rng, backend, true);
  check_output(tape.output);
  const Tensor& logits = tape.inputs.back();
  BatchGradients out;
  Tensor d_logits = tape.output;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto z = logits.values().subspan(r * classes, classes);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    out.loss += (std::log(sum) + mx - z[labels[r]]) * inv_n;
    auto p = tape.output.values().subspan(r * classes, classes);
    if (argmax(p) == labels[r]) ++out.correct;
    d_logits[r * classes + labels[r]] -= 1.0;
  }
  for (auto& v : d_logits.values()) v *= inv_n;
  backward(model, tape, std::move(d_logits), false, &out.grads, backend);
  return out;
}

LogitJacobian logit_input_jacobian(const Model& model, const Tensor& input, kernels::Backend backend) {
  const std::size_t n = check_input(model, input);
  if (n > 1) throw ShapeError("logit_input_jacobian takes a single sample");
  SeededRng unused(0);
  Tape tape = run(model, as_batch(model, input, n), 0, model.arch.layers.size(), Mode::deterministic,
                  unused, backend, true);
  check_output(tape.output);
  const Tensor& logits = tape.inputs.back();
  LogitJacobian out;
  out.logits.assign(logits.values().begin(), logits.values().end());
  for (std::size_t c = 0; c < out.logits.size(); ++c) {
    Tensor seed(logits.shape());
    seed[c] = 1.0;
    Tensor g = backward(model, tape, std::move(seed), true, nullptr, backend);
    if (!g.all_finite()) throw NumericError("non-finite logit gradient");
    out.gradients.push_back(g.reshaped(input.shape()));
  }
  return out;
}

}  // namespace bset
