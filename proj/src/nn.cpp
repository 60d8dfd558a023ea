#include "scrl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "scrl/errors.hpp"
#include "scrl/io.hpp"
#include "scrl/kernels/parallel.hpp"

namespace scrl::nn {

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace

size_t layer_output_dim(const LayerSpec& layer) {
  return std::visit(overloaded{
                        [](const Dense& d) { return d.out; },
                        [](const Conv& c) { return c.geom.out_size(); },
                        [](const LayerNorm& l) { return l.dim; },
                        [](const Relu& r) { return r.dim; },
                        [](const ConcatSide& c) { return c.in + c.side; },
                    },
                    layer);
}

size_t layer_param_count(const LayerSpec& layer) {
  return std::visit(overloaded{
                        [](const Dense& d) { return d.in * d.out + d.out; },
                        [](const Conv& c) { return c.geom.patch() * c.geom.out_c + c.geom.out_c; },
                        [](const LayerNorm& l) { return 2 * l.dim; },
                        [](const Relu&) { return size_t{0}; },
                        [](const ConcatSide&) { return size_t{0}; },
                    },
                    layer);
}

size_t Architecture::output_dim() const {
  return layers.empty() ? input_dim : layer_output_dim(layers.back());
}

std::string Architecture::describe() const {
  std::ostringstream os;
  os << "in=" << input_dim << " side=" << side_dim << " |";
  for (const auto& layer : layers) {
    std::visit(overloaded{
                   [&](const Dense& d) { os << " dense(" << d.in << "," << d.out << ")"; },
                   [&](const Conv& c) {
                     const auto& g = c.geom;
                     os << " conv(" << g.in_h << "x" << g.in_w << "x" << g.in_c << ",k" << g.kernel
                        << ",s" << g.stride << ",p" << g.pad << "," << g.out_c << ")";
                   },
                   [&](const LayerNorm& l) { os << " ln(" << l.dim << ")"; },
                   [&](const Relu& r) { os << " relu(" << r.dim << ")"; },
                   [&](const ConcatSide& c) { os << " concat(" << c.in << "+" << c.side << ")"; },
               },
               layer);
  }
  return os.str();
}

void Architecture::validate() const {
  size_t cur = input_dim;
  bool side_used = false;
  for (const auto& layer : layers) {
    const size_t expected_in = std::visit(
        overloaded{
            [](const Dense& d) { return d.in; },
            [](const Conv& c) { return c.geom.in_size(); },
            [](const LayerNorm& l) { return l.dim; },
            [](const Relu& r) { return r.dim; },
            [&](const ConcatSide& c) {
              if (side_used || c.side != side_dim) throw InvalidArgument("architecture: bad concat");
              side_used = true;
              return c.in;
            },
        },
        layer);
    if (expected_in != cur) {
      throw InvalidArgument("architecture: layer input " + std::to_string(expected_in) +
                            " does not match activation width " + std::to_string(cur));
    }
    if (const auto* c = std::get_if<Conv>(&layer)) {
      const auto& g = c->geom;
      if (g.kernel == 0 || g.stride == 0 || g.in_h + 2 * g.pad < g.kernel ||
          g.in_w + 2 * g.pad < g.kernel) {
        throw InvalidArgument("architecture: convolution does not fit its input");
      }
    }
    cur = layer_output_dim(layer);
  }
  if (side_dim > 0 && !side_used) throw InvalidArgument("architecture: side input never used");
}

// ---------------------------------------------------------------- network

template <class T>
BasicNetwork<T>::BasicNetwork(Architecture arch) : arch_(std::move(arch)) {
  arch_.validate();
  size_t total = 0;
  for (const auto& layer : arch_.layers) {
    offsets_.push_back(total);
    total += layer_param_count(layer);
  }
  params_.assign(total, T(0));
  grads_.assign(total, T(0));
}

template <class T>
void BasicNetwork<T>::zero_grad() {
  std::fill(grads_.begin(), grads_.end(), T(0));
}

template <class T>
long BasicNetwork<T>::last_dense() const {
  for (long i = static_cast<long>(arch_.layers.size()) - 1; i >= 0; --i) {
    if (std::holds_alternative<Dense>(arch_.layers[static_cast<size_t>(i)])) return i;
  }
  return -1;
}

template <class T>
Tensor<T> BasicNetwork<T>::forward(const Tensor<T>& x, const Tensor<T>* side, Tape* tape) const {
  if (x.rank() != 2 || x.cols() != arch_.input_dim) {
    throw InvalidArgument("forward: expected [batch, " + std::to_string(arch_.input_dim) +
                          "] input");
  }
  const size_t batch = x.rows();
  if (arch_.side_dim > 0) {
    if (!side || side->rows() != batch || side->cols() != arch_.side_dim) {
      throw InvalidArgument("forward: expected [batch, " + std::to_string(arch_.side_dim) +
                            "] side input");
    }
  }
  if (tape) {
    *tape = Tape{};
    tape->batch = batch;
    tape->inputs.reserve(arch_.layers.size());
    tape->mean.resize(arch_.layers.size());
    tape->rstd.resize(arch_.layers.size());
    tape->cols.resize(arch_.layers.size());
  }

  Tensor<T> cur = x;
  std::vector<double> mean, rstd;
  std::vector<T> cols;
  for (size_t i = 0; i < arch_.layers.size(); ++i) {
    const T* p = params_.data() + offsets_[i];
    const auto& layer = arch_.layers[i];
    Tensor<T> out = Tensor<T>::matrix(batch, layer_output_dim(layer));
    std::visit(overloaded{
                   [&](const Dense& d) {
                     kernels::dense_forward(cur.data(), p, p + d.in * d.out, out.data(), batch,
                                            d.in, d.out);
                   },
                   [&](const Conv& c) {
                     auto& buf = tape ? tape->cols[i] : cols;
                     kernels::conv2d_forward(cur.data(), p, p + c.geom.patch() * c.geom.out_c,
                                             out.data(), batch, c.geom, buf);
                   },
                   [&](const LayerNorm& l) {
                     auto& m = tape ? tape->mean[i] : mean;
                     auto& r = tape ? tape->rstd[i] : rstd;
                     m.resize(batch);
                     r.resize(batch);
                     kernels::layer_norm_forward(cur.data(), p, p + l.dim, out.data(), m.data(),
                                                 r.data(), batch, l.dim);
                   },
                   [&](const Relu& r) { kernels::relu_forward(cur.data(), out.data(), batch * r.dim); },
                   [&](const ConcatSide& c) {
                     for (size_t b = 0; b < batch; ++b) {
                       std::copy_n(cur.data() + b * c.in, c.in, out.data() + b * (c.in + c.side));
                       std::copy_n(side->data() + b * c.side, c.side,
                                   out.data() + b * (c.in + c.side) + c.in);
                     }
                   },
               },
               layer);
    if (tape) {
      tape->inputs.push_back(std::move(cur));
    }
    cur = std::move(out);
  }
  return cur;
}

template <class T>
typename BasicNetwork<T>::InputGrads BasicNetwork<T>::backward(const Tape& tape,
                                                               const Tensor<T>& dy,
                                                               BackwardOptions opts) {
  return backward_impl(tape, dy, opts.input_grad, opts.param_grads ? grads_.data() : nullptr);
}

template <class T>
void BasicNetwork<T>::load_params(std::span<const float> values) {
  if (values.size() != params_.size()) {
    throw IncompatibleCheckpoint("parameter count " + std::to_string(values.size()) +
                                 " does not match network (" + std::to_string(params_.size()) +
                                 ")");
  }
  for (size_t i = 0; i < values.size(); ++i) params_[i] = static_cast<T>(values[i]);
}

template <class T>
typename BasicNetwork<T>::InputGrads BasicNetwork<T>::backward_impl(const Tape& tape,
                                                                    const Tensor<T>& dy,
                                                                    bool input_grad,
                                                                    T* grads) const {
  const bool param_grads = grads != nullptr;
  if (tape.inputs.size() != arch_.layers.size()) {
    throw InvalidArgument("backward: tape does not belong to this network");
  }
  const size_t batch = tape.batch;
  if (dy.rows() != batch || dy.cols() != output_dim()) {
    throw InvalidArgument("backward: upstream gradient shape mismatch");
  }
  // Propagation stops at the lowest layer that still needs its output
  // gradient: the first parameterized layer, or the side input.
  size_t lowest = 0;
  if (!input_grad) {
    lowest = arch_.layers.size();
    for (size_t ii = 0; ii < arch_.layers.size(); ++ii) {
      const auto& layer = arch_.layers[ii];
      const bool has_params = !std::holds_alternative<Relu>(layer) && !std::holds_alternative<ConcatSide>(layer);
      if (param_grads ? has_params : std::holds_alternative<ConcatSide>(layer)) {
        lowest = ii;
        break;
      }
    }
  }
  InputGrads result;
  Tensor<T> grad = dy;
  for (size_t ii = arch_.layers.size(); ii-- > 0;) {
    const auto& layer = arch_.layers[ii];
    const Tensor<T>& in = tape.inputs[ii];
    const T* p = params_.data() + offsets_[ii];
    T* g = param_grads ? grads + offsets_[ii] : nullptr;
    const bool need_dx = input_grad || ii > lowest;
    Tensor<T> dx;
    if (need_dx) dx = Tensor<T>::matrix(batch, in.cols());

    std::visit(overloaded{
                   [&](const Dense& d) {
                     if (param_grads) {
                       kernels::dense_backward_params(in.data(), grad.data(), g, g + d.in * d.out,
                                                      batch, d.in, d.out);
                     }
                     if (need_dx) {
                       kernels::dense_backward_input(grad.data(), p, dx.data(), batch, d.in,
                                                     d.out);
                     }
                   },
                   [&](const Conv& c) {
                     const auto& geom = c.geom;
                     const size_t rows = batch * geom.out_h() * geom.out_w();
                     if (param_grads) {
                       kernels::dense_backward_params(tape.cols[ii].data(), grad.data(), g,
                                                      g + geom.patch() * geom.out_c, rows,
                                                      geom.patch(), geom.out_c);
                     }
                     if (need_dx) {
                       std::vector<T> dcols(rows * geom.patch());
                       kernels::dense_backward_input(grad.data(), p, dcols.data(), rows,
                                                     geom.patch(), geom.out_c);
                       kernels::col2im(dcols.data(), dx.data(), batch, geom);
                     }
                   },
                   [&](const LayerNorm& l) {
                     std::vector<T> scratch;
                     T* dgain = g;
                     T* dbias = g + l.dim;
                     if (!param_grads) {
                       scratch.assign(2 * l.dim, T(0));
                       dgain = scratch.data();
                       dbias = scratch.data() + l.dim;
                     }
                     Tensor<T> tmp;
                     T* dst = need_dx ? dx.data() : (tmp = Tensor<T>::matrix(batch, l.dim)).data();
                     kernels::layer_norm_backward(in.data(), grad.data(), p, tape.mean[ii].data(),
                                                  tape.rstd[ii].data(), dst, dgain, dbias, batch,
                                                  l.dim);
                   },
                   [&](const Relu& r) {
                     if (need_dx) kernels::relu_backward(in.data(), grad.data(), dx.data(), batch * r.dim);
                   },
                   [&](const ConcatSide& c) {
                     result.side = Tensor<T>::matrix(batch, c.side);
                     for (size_t b = 0; b < batch; ++b) {
                       const T* src = grad.data() + b * (c.in + c.side);
                       if (need_dx) std::copy_n(src, c.in, dx.data() + b * c.in);
                       std::copy_n(src + c.in, c.side, result.side.data() + b * c.side);
                     }
                   },
               },
               layer);
    if (!need_dx) break;
    grad = std::move(dx);
  }
  if (input_grad) result.input = std::move(grad);
  return result;
}

template class BasicNetwork<float>;
template class BasicNetwork<double>;

// ---------------------------------------------------------------- builders

Architecture build_encoder(const EncoderSpec& spec, const env::ObsSpec& obs, size_t side_dim,
                           size_t output_dim) {
  const bool image = obs.kind == env::ObsKind::image;
  if (image && !spec.cnn) throw InvalidArgument("build_encoder: image inputs need the CNN");
  if (!image && spec.cnn) throw InvalidArgument("build_encoder: CNN needs image inputs");
  if (output_dim == 0) throw InvalidArgument("build_encoder: output dim must be positive");

  Architecture a;
  a.input_dim = obs.dim;
  a.side_dim = side_dim;
  size_t cur = obs.dim;
  if (image) {
    kernels::ConvGeometry g{obs.height, obs.width, obs.channels, 0, 0, 0, 0};
    for (size_t i = 0; i < 3; ++i) {
      g.kernel = spec.cnn_spec.kernels[i];
      g.stride = spec.cnn_spec.strides[i];
      g.pad = spec.cnn_spec.pads[i];
      g.out_c = spec.cnn_spec.channels[i];
      if (g.in_h + 2 * g.pad < g.kernel || g.in_w + 2 * g.pad < g.kernel) {
        throw InvalidArgument("build_encoder: image too small for the CNN");
      }
      a.layers.emplace_back(Conv{g});
      cur = g.out_size();
      if (spec.layer_norm) a.layers.emplace_back(LayerNorm{cur});
      a.layers.emplace_back(Relu{cur});
      g = kernels::ConvGeometry{g.out_h(), g.out_w(), g.out_c, 0, 0, 0, 0};
    }
  }
  if (side_dim > 0) {
    a.layers.emplace_back(ConcatSide{cur, side_dim});
    cur += side_dim;
  }
  for (size_t i = 0; i < spec.mlp_depth; ++i) {
    a.layers.emplace_back(Dense{cur, spec.mlp_width});
    cur = spec.mlp_width;
    if (spec.layer_norm) a.layers.emplace_back(LayerNorm{cur});
    a.layers.emplace_back(Relu{cur});
  }
  a.layers.emplace_back(Dense{cur, output_dim});
  a.validate();
  return a;
}

template <class T>
void fan_in_init(BasicNetwork<T>& net, Rng& rng) {
  auto params = net.params();
  const auto& layers = net.arch().layers;
  for (size_t i = 0; i < layers.size(); ++i) {
    T* p = params.data() + net.param_offset(i);
    const size_t n = layer_param_count(layers[i]);
    if (const auto* l = std::get_if<LayerNorm>(&layers[i])) {
      std::fill_n(p, l->dim, T(1));
      std::fill_n(p + l->dim, l->dim, T(0));
      continue;
    }
    size_t fan_in = 0;
    if (const auto* d = std::get_if<Dense>(&layers[i])) fan_in = d->in;
    if (const auto* c = std::get_if<Conv>(&layers[i])) fan_in = c->geom.patch();
    if (fan_in == 0) continue;
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (size_t k = 0; k < n; ++k) p[k] = static_cast<T>(u(rng));
  }
}

template <class T>
void cold_init(BasicNetwork<T>& net, double range, Rng& rng) {
  const long last = net.last_dense();
  if (last < 0) throw InvalidArgument("cold_init: network has no dense layer");
  if (!(range >= 0.0)) throw InvalidArgument("cold_init: range must be >= 0");
  const auto& d = std::get<Dense>(net.arch().layers[static_cast<size_t>(last)]);
  T* w = net.params().data() + net.param_offset(static_cast<size_t>(last));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (size_t k = 0; k < d.in * d.out; ++k) w[k] = static_cast<T>(range * u(rng));
}

template void fan_in_init(BasicNetwork<float>&, Rng&);
template void fan_in_init(BasicNetwork<double>&, Rng&);
template void cold_init(BasicNetwork<float>&, double, Rng&);
template void cold_init(BasicNetwork<double>&, double, Rng&);

std::vector<double> layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                                       std::span<const double> bias) {
  if (x.empty()) throw InvalidArgument("layer_norm_forward: empty input");
  if (gain.size() != x.size() || bias.size() != x.size()) {
    throw InvalidArgument("layer_norm_forward: gain/bias size mismatch");
  }
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double denom = std::sqrt(var + kernels::kLayerNormEps);
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * (x[i] - mean) / denom + bias[i];
  return y;
}

// ---------------------------------------------------------------- Adam

template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state,
               const AdamOptions& opts) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw InvalidArgument("adam_step: parameter, gradient and state sizes differ");
  }
  for (const T g : grads) {
    if (!std::isfinite(static_cast<double>(g))) throw TrainingDivergence("non-finite gradient");
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = opts.beta1 * state.m[i] + (1.0 - opts.beta1) * g;
    const double v = opts.beta2 * state.v[i] + (1.0 - opts.beta2) * g * g;
    state.m[i] = static_cast<float>(m);
    state.v[i] = static_cast<float>(v);
    const double step = opts.lr * (m / c1) / (std::sqrt(v / c2) + opts.eps);
    params[i] = static_cast<T>(params[i] - step);
  }
}

template void adam_step(std::span<float>, std::span<const float>, AdamState&, const AdamOptions&);
template void adam_step(std::span<double>, std::span<const double>, AdamState&,
                        const AdamOptions&);

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: size mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------- checkpoints

const std::vector<float>& Checkpoint::blob(const std::string& name) const {
  for (const auto& [n, v] : blobs) {
    if (n == name) return v;
  }
  throw IncompatibleCheckpoint("checkpoint has no '" + name + "' section");
}

namespace {
constexpr char kCkptMagic[8] = {'S', 'C', 'R', 'L', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.raw(kCkptMagic, 8);
  w.u32(kCkptVersion);
  w.str(ckpt.descriptor);
  w.u64(ckpt.step);
  w.u32(static_cast<uint32_t>(ckpt.blobs.size()));
  for (const auto& [name, values] : ckpt.blobs) {
    w.str(name);
    w.u64(values.size());
    w.f32s(values);
  }
  w.finish(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  io::ByteReader r(path);
  r.expect_bytes(kCkptMagic, 8);
  if (r.u32() != kCkptVersion) throw CorruptFile(path.string() + ": unsupported version");
  Checkpoint ckpt;
  ckpt.descriptor = r.str();
  ckpt.step = r.u64();
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    std::vector<float> values(r.u64());
    r.f32s(values);
    ckpt.blobs.emplace_back(std::move(name), std::move(values));
  }
  if (!r.at_end()) throw CorruptFile(path.string() + ": trailing bytes");
  return ckpt;
}

}  // namespace scrl::nn
