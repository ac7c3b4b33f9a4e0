#pragma once

#include <cmath>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "dtam/numcore/ops.hpp"

namespace dtam {

enum class Activation { Identity, Relu, Tanh, Softplus };

enum class CellKind { Gru, Lstm };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);
std::string to_string(CellKind c);
CellKind parse_cell_kind(const std::string& s);

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <typename S>
Mat<S> glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Mat<S> m(fan_in, fan_out);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<S>(u(rng));
  return m;
}

template <typename S>
Var<S> activate(Var<S> x, Activation a) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return relu(x);
    case Activation::Tanh: return tanh(x);
    case Activation::Softplus: return softplus(x);
  }
  return x;
}

// Feed-forward stack: hidden layers use `activation` then dropout; the output
// layer is affine.
template <typename S>
struct MlpParams {
  std::vector<Param<S>> weights;  // (in_l x out_l)
  std::vector<Param<S>> biases;   // (1 x out_l)
  Activation activation = Activation::Relu;
  double dropout = 0.0;

  MlpParams() = default;

  // sizes = {input, hidden..., output}
  static MlpParams init(const std::vector<int>& sizes, Activation act, double dropout, std::mt19937_64& rng) {
    if (sizes.size() < 2) throw DimensionError("MlpParams: need at least input and output size");
    if (dropout < 0.0 || dropout >= 1.0) throw DomainError("MlpParams: dropout rate must be in [0,1)");
    MlpParams p;
    p.activation = act;
    p.dropout = dropout;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      p.weights.emplace_back(glorot_uniform<S>(sizes[l], sizes[l + 1], rng));
      p.biases.emplace_back(Mat<S>::Zero(1, sizes[l + 1]));
    }
    return p;
  }

  static MlpParams zeros(const std::vector<int>& sizes, Activation act = Activation::Relu) {
    MlpParams p;
    p.activation = act;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      p.weights.emplace_back(Mat<S>::Zero(sizes[l], sizes[l + 1]));
      p.biases.emplace_back(Mat<S>::Zero(1, sizes[l + 1]));
    }
    return p;
  }

  Eigen::Index input_size() const { return weights.front().rows(); }
  Eigen::Index output_size() const { return weights.back().cols(); }
  std::size_t layers() const { return weights.size(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      f(prefix + "." + std::to_string(l) + ".weight", weights[l]);
      f(prefix + "." + std::to_string(l) + ".bias", biases[l]);
    }
  }
};

template <typename S>
Var<S> mlp_apply(Tape<S>& t, MlpParams<S>& p, Var<S> x) {
  require_dims(!p.weights.empty(), "mlp_apply: empty network");
  require_dims(x.cols() == p.input_size(),
               "mlp_apply: input width " + std::to_string(x.cols()) + " != " + std::to_string(p.input_size()));
  Var<S> h = x;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    h = add_rowwise(matmul(h, t.param(p.weights[l])), t.param(p.biases[l]));
    if (l + 1 < p.weights.size()) h = dropout(activate(h, p.activation), p.dropout);
  }
  return h;
}

// Value-level convenience (evaluation mode, no gradients kept).
template <typename S>
Mat<S> mlp_apply(MlpParams<S> p, const std::type_identity_t<Mat<S>>& x) {
  Tape<S> t;
  return mlp_apply(t, p, t.constant(x)).value();
}

// One recurrent layer. Gate blocks are packed along columns:
// GRU -> [reset | update | candidate], LSTM -> [input | forget | cell | output].
template <typename S>
struct RecurrentLayer {
  Param<S> w_input;   // (in x G*H)
  Param<S> w_hidden;  // (H x G*H)
  Param<S> b_input;   // (1 x G*H)
  Param<S> b_hidden;  // (1 x G*H)

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w_input", w_input);
    f(prefix + ".w_hidden", w_hidden);
    f(prefix + ".b_input", b_input);
    f(prefix + ".b_hidden", b_hidden);
  }
};

inline int gate_count(CellKind k) { return k == CellKind::Gru ? 3 : 4; }

// Stacked GRU or LSTM. `dropout` applies between layers in training mode.
template <typename S>
struct RecurrentParams {
  CellKind kind = CellKind::Gru;
  Eigen::Index input_size = 0;
  Eigen::Index hidden_size = 0;
  double dropout = 0.0;
  std::vector<RecurrentLayer<S>> layers;

  static RecurrentParams init(CellKind kind, Eigen::Index input, Eigen::Index hidden, int n_layers, double dropout,
                              std::mt19937_64& rng) {
    if (n_layers < 1) throw DimensionError("RecurrentParams: need at least one layer");
    RecurrentParams p;
    p.kind = kind;
    p.input_size = input;
    p.hidden_size = hidden;
    p.dropout = dropout;
    const int G = gate_count(kind);
    for (int l = 0; l < n_layers; ++l) {
      const Eigen::Index in = l == 0 ? input : hidden;
      RecurrentLayer<S> layer;
      Mat<S> wi(in, G * hidden), wh(hidden, G * hidden);
      for (int g = 0; g < G; ++g) {
        wi.middleCols(g * hidden, hidden) = glorot_uniform<S>(in, hidden, rng);
        wh.middleCols(g * hidden, hidden) = glorot_uniform<S>(hidden, hidden, rng);
      }
      layer.w_input = Param<S>(std::move(wi));
      layer.w_hidden = Param<S>(std::move(wh));
      layer.b_input = Param<S>(Mat<S>::Zero(1, G * hidden));
      layer.b_hidden = Param<S>(Mat<S>::Zero(1, G * hidden));
      p.layers.push_back(std::move(layer));
    }
    return p;
  }

  static RecurrentParams zeros(CellKind kind, Eigen::Index input, Eigen::Index hidden, int n_layers) {
    RecurrentParams p;
    p.kind = kind;
    p.input_size = input;
    p.hidden_size = hidden;
    const int G = gate_count(kind);
    for (int l = 0; l < n_layers; ++l) {
      const Eigen::Index in = l == 0 ? input : hidden;
      p.layers.push_back(RecurrentLayer<S>{Param<S>(Mat<S>::Zero(in, G * hidden)), Param<S>(Mat<S>::Zero(hidden, G * hidden)),
                                           Param<S>(Mat<S>::Zero(1, G * hidden)), Param<S>(Mat<S>::Zero(1, G * hidden))});
    }
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].visit(prefix + "." + std::to_string(l), f);
  }
};

template <typename S>
using GruParams = RecurrentParams<S>;

// Runs the stack over a step-major packed batch.
//   inputs : (steps*B x input_size); row j*B + b is step j of sequence b
//   lengths: optional per-sequence valid length; past it the state is frozen
//   h0     : optional (B x H) initial hidden state of the first layer (zeros otherwise)
// Returns the top layer's hidden states packed the same way (steps*B x H).
template <typename S>
Var<S> recurrent_run(Tape<S>& t, RecurrentParams<S>& p, Var<S> inputs, Eigen::Index batch,
                     const std::vector<int>& lengths = {}, const Var<S>* h0 = nullptr) {
  require_dims(batch > 0 && inputs.rows() % batch == 0, "recurrent_run: rows not a multiple of batch");
  require_dims(inputs.cols() == p.input_size, "recurrent_run: input width " + std::to_string(inputs.cols()) +
                                                  " != " + std::to_string(p.input_size));
  require_dims(lengths.empty() || static_cast<Eigen::Index>(lengths.size()) == batch, "recurrent_run: lengths size mismatch");
  const Eigen::Index steps = inputs.rows() / batch;
  const Eigen::Index H = p.hidden_size;
  if (h0) require_dims(h0->rows() == batch && h0->cols() == H, "recurrent_run: h0 shape mismatch");

  std::vector<Var<S>> masks;
  if (!lengths.empty()) {
    masks.reserve(steps);
    for (Eigen::Index j = 0; j < steps; ++j) {
      Mat<S> m(batch, 1);
      for (Eigen::Index b = 0; b < batch; ++b) m(b, 0) = j < lengths[b] ? S(1) : S(0);
      masks.push_back(t.constant(std::move(m)));
    }
  }

  Var<S> layer_in = inputs;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    if (l > 0) layer_in = dropout(layer_in, p.dropout);
    Var<S> gx_all = add_rowwise(matmul(layer_in, t.param(L.w_input)), t.param(L.b_input));
    Var<S> wh = t.param(L.w_hidden);
    Var<S> bh = t.param(L.b_hidden);
    Var<S> h = (l == 0 && h0) ? *h0 : t.constant(Mat<S>::Zero(batch, H));
    Var<S> c = t.constant(Mat<S>::Zero(batch, H));
    std::vector<Var<S>> outs;
    outs.reserve(steps);
    for (Eigen::Index j = 0; j < steps; ++j) {
      Var<S> gx = steps == 1 ? gx_all : slice_rows(gx_all, j * batch, batch);
      Var<S> gh = add_rowwise(matmul(h, wh), bh);
      Var<S> h_new = h;
      Var<S> c_new = c;
      if (p.kind == CellKind::Gru) {
        Var<S> r = sigmoid(slice_cols(gx, 0, H) + slice_cols(gh, 0, H));
        Var<S> z = sigmoid(slice_cols(gx, H, H) + slice_cols(gh, H, H));
        Var<S> n = tanh(slice_cols(gx, 2 * H, H) + cmul(r, slice_cols(gh, 2 * H, H)));
        h_new = n + cmul(z, h - n);
      } else {
        Var<S> g = gx + gh;
        Var<S> i = sigmoid(slice_cols(g, 0, H));
        Var<S> f = sigmoid(slice_cols(g, H, H));
        Var<S> cand = tanh(slice_cols(g, 2 * H, H));
        Var<S> o = sigmoid(slice_cols(g, 3 * H, H));
        c_new = cmul(f, c) + cmul(i, cand);
        h_new = cmul(o, tanh(c_new));
      }
      if (!masks.empty()) {
        h = h + cmul_colwise(h_new - h, masks[j]);
        if (p.kind == CellKind::Lstm) c = c + cmul_colwise(c_new - c, masks[j]);
      } else {
        h = h_new;
        c = c_new;
      }
      outs.push_back(h);
    }
    layer_in = steps == 1 ? outs.front() : vstack(outs);
  }
  return layer_in;
}

// Unbatched GRU/LSTM over a list of input vectors; returns h_1..h_M.
template <typename S>
std::vector<Vec<S>> gru_sequence(RecurrentParams<S> p, const std::type_identity_t<std::vector<Vec<S>>>& inputs,
                                 const std::type_identity_t<Vec<S>>& h0) {
  require_dims(h0.size() == p.hidden_size, "gru_sequence: h0 size mismatch");
  if (inputs.empty()) return {};
  Mat<S> packed(static_cast<Eigen::Index>(inputs.size()), p.input_size);
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    require_dims(inputs[j].size() == p.input_size, "gru_sequence: input size mismatch");
    packed.row(static_cast<Eigen::Index>(j)) = inputs[j].transpose();
  }
  Tape<S> t;
  Var<S> h0v = t.constant(Mat<S>(h0.transpose()));
  Mat<S> out = recurrent_run(t, p, t.constant(packed), 1, {}, &h0v).value();
  std::vector<Vec<S>> hs;
  for (Eigen::Index j = 0; j < out.rows(); ++j) hs.push_back(out.row(j).transpose());
  return hs;
}

}  // namespace dtam
