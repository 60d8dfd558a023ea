#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "scrl/env.hpp"
#include "scrl/kernels/geometry.hpp"
#include "scrl/random.hpp"
#include "scrl/tensor.hpp"

namespace scrl::nn {

struct Dense {
  size_t in = 0, out = 0;
};
struct Conv {
  kernels::ConvGeometry geom;
};
struct LayerNorm {
  size_t dim = 0;
};
struct Relu {
  size_t dim = 0;
};
// Appends the side input (e.g. an action) to the running activation.
struct ConcatSide {
  size_t in = 0, side = 0;
};
using LayerSpec = std::variant<Dense, Conv, LayerNorm, Relu, ConcatSide>;

size_t layer_output_dim(const LayerSpec& layer);
size_t layer_param_count(const LayerSpec& layer);

struct Architecture {
  size_t input_dim = 0;
  size_t side_dim = 0;
  std::vector<LayerSpec> layers;

  size_t output_dim() const;
  // Canonical one-line description; checkpoints compare these verbatim.
  std::string describe() const;
  void validate() const;
};

// A fixed stack of layers with a flat parameter vector and a flat gradient
// vector of the same length. Forward is const; activations needed by backward
// live in a caller-owned Tape, so one network can serve several forward
// passes before a single optimizer step.
template <class T>
class BasicNetwork {
 public:
  struct Tape {
    size_t batch = 0;
    std::vector<Tensor<T>> inputs;                  // input of each layer
    std::vector<std::vector<double>> mean, rstd;    // layer norm statistics
    std::vector<std::vector<T>> cols;               // conv patches
  };
  struct InputGrads {
    Tensor<T> input;
    Tensor<T> side;
  };
  struct BackwardOptions {
    bool param_grads = true;
    bool input_grad = true;
  };

  BasicNetwork() = default;
  explicit BasicNetwork(Architecture arch);

  const Architecture& arch() const { return arch_; }
  size_t input_dim() const { return arch_.input_dim; }
  size_t side_dim() const { return arch_.side_dim; }
  size_t output_dim() const { return arch_.output_dim(); }
  size_t num_params() const { return params_.size(); }

  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  std::span<T> grads() { return grads_; }
  std::span<const T> grads() const { return grads_; }
  void zero_grad();

  // Offset of layer i's parameters in the flat vector.
  size_t param_offset(size_t layer) const { return offsets_.at(layer); }
  // Index of the last Dense layer, or -1.
  long last_dense() const;

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>* side = nullptr,
                    Tape* tape = nullptr) const;
  // Accumulates parameter gradients (unless disabled) and returns the input
  // and side gradients. With param_grads and without input_grad, propagation
  // stops at the first parameterized layer and the side gradient is left
  // empty. `tape` must come from forward on this network.
  InputGrads backward(const Tape& tape, const Tensor<T>& dy, BackwardOptions opts);
  InputGrads backward(const Tape& tape, const Tensor<T>& dy) { return backward(tape, dy, {}); }
  // Side gradient (and the input gradient if asked); parameter gradients are
  // left untouched.
  InputGrads input_gradients(const Tape& tape, const Tensor<T>& dy,
                             bool with_input = false) const {
    return backward_impl(tape, dy, with_input, nullptr);
  }

  // Overwrites parameters from a float blob (checkpoint restore).
  void load_params(std::span<const float> values);

  template <class U>
  BasicNetwork<U> cast() const {
    BasicNetwork<U> out(arch_);
    for (size_t i = 0; i < params_.size(); ++i) out.params()[i] = static_cast<U>(params_[i]);
    return out;
  }

 private:
  InputGrads backward_impl(const Tape& tape, const Tensor<T>& dy, bool input_grad,
                           T* grads) const;

  Architecture arch_;
  std::vector<size_t> offsets_;
  std::vector<T> params_, grads_;
};

using Network = BasicNetwork<float>;

// ---------------------------------------------------------------- builders

struct CnnSpec {
  std::array<size_t, 3> channels{32, 64, 64};
  std::array<size_t, 3> kernels{8, 4, 3};
  std::array<size_t, 3> strides{4, 2, 1};
  std::array<size_t, 3> pads{2, 1, 1};
};

struct EncoderSpec {
  bool cnn = false;
  CnnSpec cnn_spec;
  size_t mlp_width = 1024;
  size_t mlp_depth = 4;
  bool layer_norm = true;
};

// [cnn3 ->] concat(side) -> [dense -> layer norm -> relu] x depth -> dense(out).
// Image observations require the CNN; vector observations forbid it.
Architecture build_encoder(const EncoderSpec& spec, const env::ObsSpec& obs, size_t side_dim,
                           size_t output_dim);

// Fan-in uniform init, bound sqrt(1 / fan_in), for every dense and conv
// layer; layer-norm gains 1 and biases 0.
template <class T>
void fan_in_init(BasicNetwork<T>& net, Rng& rng);

// Final dense layer weights ~ Unif[-range, range]; the bias keeps its
// fan-in initialization. Throws if there is no dense layer.
template <class T>
void cold_init(BasicNetwork<T>& net, double range, Rng& rng);

// Reference scalar layer norm on one vector (eps = 1e-5).
std::vector<double> layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                                       std::span<const double> bias);

// ---------------------------------------------------------------- Adam

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<float> m, v;
  uint64_t t = 0;

  explicit AdamState(size_t n = 0) : m(n, 0.0f), v(n, 0.0f) {}
};

// Bias-corrected Adam. Throws TrainingDivergence on a non-finite gradient.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state,
               const AdamOptions& opts);

// Cosine similarity; two exactly-zero vectors count as perfectly aligned (1),
// one zero vector against a nonzero one gives 0.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
  std::string descriptor;
  uint64_t step = 0;
  std::vector<std::pair<std::string, std::vector<float>>> blobs;

  const std::vector<float>& blob(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

// "SCRLCKPT", u32 version, descriptor, step, named float32 blobs, CRC32.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace scrl::nn
