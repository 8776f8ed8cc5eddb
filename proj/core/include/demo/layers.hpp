#pragma once

#include <string>
#include <vector>

#include "demo/params.hpp"
#include "demo/rng.hpp"
#include "demo/tensor.hpp"

namespace demo {

enum class Activation { None, Relu, Gelu, Tanh, Sigmoid };

Tensor apply_activation(const Tensor& x, Activation act);

/// Affine weights drawn uniform(+-1/sqrt(fan_in)), biases zero.
std::vector<double> uniform_init(int fan_in, std::size_t count, Rng& rng);

struct Linear {
  Param* weight = nullptr;  // [in, out]
  Param* bias = nullptr;    // [1, out]

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out,
         Rng& rng);

  Tensor forward(Tape& tape, const Tensor& x) const;
  int in_dim() const { return weight->shape[0]; }
  int out_dim() const { return weight->shape[1]; }
};

/// Affine chain with an activation between layers; the final activation is
/// configurable (Activation::None for a linear head).
struct Mlp {
  std::vector<Linear> layers;
  Activation hidden_act = Activation::Gelu;
  Activation final_act = Activation::None;

  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name,
      const std::vector<int>& dims, Rng& rng,
      Activation hidden = Activation::Gelu,
      Activation final = Activation::None);

  Tensor forward(Tape& tape, const Tensor& x) const;
};

struct GluLayer {
  Linear value_path;
  Linear gate_path;

  GluLayer() = default;
  GluLayer(ParamStore& store, const std::string& name, int in, int out,
           Rng& rng);

  Tensor forward(Tape& tape, const Tensor& x) const;
};

struct LayerNormLayer {
  Param* gain = nullptr;
  Param* bias = nullptr;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore& store, const std::string& name, int dim);

  Tensor forward(Tape& tape, const Tensor& x) const;
};

/// Update/reset/candidate gating:
///   z = sigmoid(xWz + hUz + bz), r = sigmoid(xWr + hUr + br),
///   c = tanh(xWc + (r.h)Uc + bc), h' = (1-z).h + z.c
/// The update bias starts at -2.197 so a fresh cell retains ~0.9 of its
/// state per step.
struct GruCell {
  Linear in_update, in_reset, in_cand;    // x projections (bias carried here)
  Param* rec_update = nullptr;            // [d, d]
  Param* rec_reset = nullptr;
  Param* rec_cand = nullptr;

  GruCell() = default;
  GruCell(ParamStore& store, const std::string& name, int in, int dim,
          Rng& rng);

  Tensor forward(Tape& tape, const Tensor& x, const Tensor& h) const;
  int dim() const { return rec_update->shape[0]; }
};

/// Stack of GRU cells run over a time-major sequence of [V, in] frames;
/// returns the top layer's final hidden state [V, d].
struct GruStack {
  std::vector<GruCell> cells;

  GruStack() = default;
  GruStack(ParamStore& store, const std::string& name, int in, int dim,
           int layers, Rng& rng);

  Tensor forward(Tape& tape, std::span<const Tensor> frames) const;
};

/// Diagonal selective state-space scan. Per step (everything [V, d],
/// elementwise over channels):
///   delta_t = x_t Wd + bd          (selection)
///   B_t = x_t Wb + bb,  C_t = x_t Wc + bc
///   h_t = exp(-softplus(delta_t) . A) . h_{t-1} + delta_t . B_t . x_t
///   y_t = C_t . h_t
/// A starts at 1 and the delta bias at softplus^-1(-ln 0.9), so the initial
/// per-step state decay is ~0.9.
struct SelectiveSsm {
  Param* decay = nullptr;  // A, [1, d]
  Linear sel_delta, sel_b, sel_c;

  SelectiveSsm() = default;
  SelectiveSsm(ParamStore& store, const std::string& name, int dim, Rng& rng);

  std::vector<Tensor> forward(Tape& tape,
                              std::span<const Tensor> frames) const;
};

/// softmax(score_mlp(Q K^T / sqrt(scale_dim)) + mask) * value_mlp(V).
/// The score MLP is an entrywise scalar map (shared 1->hidden->1), so rows
/// of identical scores stay identical and softmax over equal keys stays
/// uniform. The value MLP is an ordinary row MLP. Both belong to the head.
struct AttentionHead {
  // The entrywise score map has no output bias: softmax is invariant to a
  // constant shift, so that bias could never receive gradient.
  Param* score_w1 = nullptr;  // [1, hidden]
  Param* score_b1 = nullptr;  // [1, hidden]
  Param* score_w2 = nullptr;  // [1, hidden]
  Mlp value_mlp;

  AttentionHead() = default;
  AttentionHead(ParamStore& store, const std::string& name, int score_hidden,
                int value_dim, Rng& rng);

  /// mask, when defined, is added to the transformed scores pre-softmax
  /// (use ~-1e30 entries to disable padded keys).
  Tensor forward(Tape& tape, const Tensor& q, const Tensor& k,
                 const Tensor& v, double scale_dim,
                 const Tensor& mask = {}) const;
};

/// Symmetric-normalized graph convolution D^-1/2 (A+I) D^-1/2 X W with an
/// activation. `norm_adj` is the pre-normalized operator as a constant.
Tensor graph_conv(Tape& tape, const Tensor& node_feats,
                  const Tensor& norm_adj, const Tensor& weight,
                  Activation act = Activation::Relu);

/// Row-normalized adjacency values for graph_conv: fully connected over the
/// flagged nodes, self-loops everywhere, D^-1/2 (A+I) D^-1/2.
std::vector<double> normalized_adjacency(const std::vector<bool>& connected);

/// Post-norm self-attention encoder block:
///   x = LN1(x + W_o softmax(QK^T/sqrt(d)) V);  x = LN2(x + FFN(x)).
struct TransformerBlock {
  Linear proj_q, proj_k, proj_v, proj_o;
  LayerNormLayer norm1, norm2;
  Linear ffn1, ffn2;

  TransformerBlock() = default;
  TransformerBlock(ParamStore& store, const std::string& name, int dim,
                   int ffn_hidden, Rng& rng);

  Tensor forward(Tape& tape, const Tensor& x, const Tensor& mask = {}) const;
};

}  // namespace demo
