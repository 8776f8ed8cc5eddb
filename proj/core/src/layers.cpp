#include "demo/layers.hpp"

#include <cmath>

namespace demo {

Tensor apply_activation(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::None: return x;
    case Activation::Relu: return relu(x);
    case Activation::Gelu: return gelu(x);
    case Activation::Tanh: return tanh_t(x);
    case Activation::Sigmoid: return sigmoid(x);
  }
  throw UsageError("unknown activation");
}

std::vector<double> uniform_init(int fan_in, std::size_t count, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(count);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out,
               Rng& rng) {
  weight = &store.create(name + ".w", {in, out},
                         uniform_init(in, static_cast<std::size_t>(in) * out,
                                      rng));
  bias = &store.create(name + ".b", {1, out},
                       std::vector<double>(static_cast<std::size_t>(out), 0.0));
}

Tensor Linear::forward(Tape& tape, const Tensor& x) const {
  return add_rowvec(matmul(x, tape.lease(*weight)), tape.lease(*bias));
}

Mlp::Mlp(ParamStore& store, const std::string& name,
         const std::vector<int>& dims, Rng& rng, Activation hidden,
         Activation final)
    : hidden_act(hidden), final_act(final) {
  if (dims.size() < 2) throw UsageError("Mlp needs at least two dims");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    layers.emplace_back(store, name + ".l" + std::to_string(i), dims[i],
                        dims[i + 1], rng);
}

Tensor Mlp::forward(Tape& tape, const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(tape, h);
    h = apply_activation(h, i + 1 < layers.size() ? hidden_act : final_act);
  }
  return h;
}

GluLayer::GluLayer(ParamStore& store, const std::string& name, int in, int out,
                   Rng& rng)
    : value_path(store, name + ".val", in, out, rng),
      gate_path(store, name + ".gate", in, out, rng) {}

Tensor GluLayer::forward(Tape& tape, const Tensor& x) const {
  return glu(x, tape.lease(*value_path.weight), tape.lease(*value_path.bias),
             tape.lease(*gate_path.weight), tape.lease(*gate_path.bias));
}

LayerNormLayer::LayerNormLayer(ParamStore& store, const std::string& name,
                               int dim) {
  gain = &store.create(name + ".gain", {1, dim},
                       std::vector<double>(static_cast<std::size_t>(dim), 1.0));
  bias = &store.create(name + ".bias", {1, dim},
                       std::vector<double>(static_cast<std::size_t>(dim), 0.0));
}

Tensor LayerNormLayer::forward(Tape& tape, const Tensor& x) const {
  return layer_norm(x, tape.lease(*gain), tape.lease(*bias));
}

namespace {

constexpr double kRetainPoint9Bias = -2.1972245773362196;  // logit(0.1)

}  // namespace

GruCell::GruCell(ParamStore& store, const std::string& name, int in, int dim,
                 Rng& rng)
    : in_update(store, name + ".xz", in, dim, rng),
      in_reset(store, name + ".xr", in, dim, rng),
      in_cand(store, name + ".xc", in, dim, rng) {
  rec_update = &store.create(
      name + ".hz", {dim, dim},
      uniform_init(dim, static_cast<std::size_t>(dim) * dim, rng));
  rec_reset = &store.create(
      name + ".hr", {dim, dim},
      uniform_init(dim, static_cast<std::size_t>(dim) * dim, rng));
  rec_cand = &store.create(
      name + ".hc", {dim, dim},
      uniform_init(dim, static_cast<std::size_t>(dim) * dim, rng));
  for (double& b : in_update.bias->value) b = kRetainPoint9Bias;
}

Tensor GruCell::forward(Tape& tape, const Tensor& x, const Tensor& h) const {
  const Tensor z = sigmoid(
      add(in_update.forward(tape, x), matmul(h, tape.lease(*rec_update))));
  const Tensor r = sigmoid(
      add(in_reset.forward(tape, x), matmul(h, tape.lease(*rec_reset))));
  const Tensor cand = tanh_t(add(in_cand.forward(tape, x),
                                 matmul(mul(r, h), tape.lease(*rec_cand))));
  const Tensor keep = mul(sub(tape.full(z.shape(), 1.0), z), h);
  return add(keep, mul(z, cand));
}

GruStack::GruStack(ParamStore& store, const std::string& name, int in, int dim,
                   int layers, Rng& rng) {
  for (int l = 0; l < layers; ++l)
    cells.emplace_back(store, name + ".layer" + std::to_string(l),
                       l == 0 ? in : dim, dim, rng);
}

Tensor GruStack::forward(Tape& tape, std::span<const Tensor> frames) const {
  if (frames.empty()) throw EmptySequence();
  const int v = frames[0].rows();
  std::vector<Tensor> seq(frames.begin(), frames.end());
  Tensor last;
  for (const GruCell& cell : cells) {
    Tensor h = tape.zeros({v, cell.dim()});
    for (Tensor& frame : seq) {
      h = cell.forward(tape, frame, h);
      frame = h;
    }
    last = h;
  }
  return last;
}

SelectiveSsm::SelectiveSsm(ParamStore& store, const std::string& name, int dim,
                           Rng& rng)
    : sel_delta(store, name + ".delta", dim, dim, rng),
      sel_b(store, name + ".b", dim, dim, rng),
      sel_c(store, name + ".c", dim, dim, rng) {
  decay = &store.create(name + ".a", {1, dim},
                        std::vector<double>(static_cast<std::size_t>(dim),
                                            1.0));
  // softplus(bias) = -ln(0.9) so exp(-softplus(delta) * A) starts near 0.9.
  const double bias0 = std::log(std::expm1(-std::log(0.9)));
  for (double& b : sel_delta.bias->value) b = bias0;
}

std::vector<Tensor> SelectiveSsm::forward(
    Tape& tape, std::span<const Tensor> frames) const {
  if (frames.empty()) throw EmptySequence();
  const int v = frames[0].rows();
  const int d = sel_delta.out_dim();
  const Tensor a = tape.lease(*decay);
  Tensor h = tape.zeros({v, d});
  std::vector<Tensor> out;
  out.reserve(frames.size());
  for (const Tensor& x : frames) {
    const Tensor delta = sel_delta.forward(tape, x);
    const Tensor b_sel = sel_b.forward(tape, x);
    const Tensor c_sel = sel_c.forward(tape, x);
    const Tensor gate = exp_t(neg(mul_rowvec(softplus(delta), a)));
    h = add(mul(gate, h), mul(mul(delta, b_sel), x));
    out.push_back(mul(c_sel, h));
  }
  return out;
}

AttentionHead::AttentionHead(ParamStore& store, const std::string& name,
                             int score_hidden, int value_dim, Rng& rng) {
  score_w1 = &store.create(
      name + ".sw1", {1, score_hidden},
      uniform_init(1, static_cast<std::size_t>(score_hidden), rng));
  score_b1 = &store.create(
      name + ".sb1", {1, score_hidden},
      std::vector<double>(static_cast<std::size_t>(score_hidden), 0.0));
  score_w2 = &store.create(
      name + ".sw2", {1, score_hidden},
      uniform_init(score_hidden, static_cast<std::size_t>(score_hidden), rng));
  value_mlp = Mlp(store, name + ".val", {value_dim, value_dim, value_dim}, rng,
                  Activation::Gelu, Activation::None);
  // Start as a near-identity score map so fresh heads behave like plain
  // scaled dot-product attention.
  score_w1->value[0] = 1.0;
  score_w2->value[0] = 1.0;
}

Tensor AttentionHead::forward(Tape& tape, const Tensor& q, const Tensor& k,
                              const Tensor& v, double scale_dim,
                              const Tensor& mask) const {
  if (q.cols() != k.cols())
    throw ShapeMismatch("attention: Q " + shape_str(q.shape()) + " vs K " +
                        shape_str(k.shape()));
  if (k.rows() != v.rows())
    throw ShapeMismatch("attention: K " + shape_str(k.shape()) + " vs V " +
                        shape_str(v.shape()));
  const Tensor raw =
      scale(matmul(q, transpose(k)), 1.0 / std::sqrt(scale_dim));

  // Entrywise scalar MLP over the score matrix.
  const Tensor w1 = tape.lease(*score_w1);
  const Tensor b1 = tape.lease(*score_b1);
  const Tensor w2 = tape.lease(*score_w2);
  const int hidden = score_w1->shape[1];
  Tensor mapped;
  for (int j = 0; j < hidden; ++j) {
    const Tensor term = mul_scalar_t(
        gelu(add_scalar_t(mul_scalar_t(raw, slice_cols(w1, j, 1)),
                          slice_cols(b1, j, 1))),
        slice_cols(w2, j, 1));
    mapped = mapped.defined() ? add(mapped, term) : term;
  }

  Tensor scores = mask.defined() ? add(mapped, mask) : mapped;
  return matmul(softmax(scores), value_mlp.forward(tape, v));
}

Tensor graph_conv(Tape& , const Tensor& node_feats, const Tensor& norm_adj,
                  const Tensor& weight, Activation act) {
  if (norm_adj.rows() != norm_adj.cols() ||
      norm_adj.rows() != node_feats.rows())
    throw ShapeMismatch("graph_conv adjacency " + shape_str(norm_adj.shape()) +
                        " vs features " + shape_str(node_feats.shape()));
  return apply_activation(matmul(matmul(norm_adj, node_feats), weight), act);
}

std::vector<double> normalized_adjacency(const std::vector<bool>& connected) {
  const std::size_t n = connected.size();
  std::vector<double> adj(n * n, 0.0);
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const bool edge =
          (i == j) || (connected[i] && connected[j]);  // self-loops always
      if (edge) {
        adj[i * n + j] = 1.0;
        degree[i] += 1.0;
      }
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (adj[i * n + j] != 0.0)
        adj[i * n + j] /= std::sqrt(degree[i] * degree[j]);
  return adj;
}

TransformerBlock::TransformerBlock(ParamStore& store, const std::string& name,
                                   int dim, int ffn_hidden, Rng& rng)
    : proj_q(store, name + ".q", dim, dim, rng),
      proj_k(store, name + ".k", dim, dim, rng),
      proj_v(store, name + ".v", dim, dim, rng),
      proj_o(store, name + ".o", dim, dim, rng),
      norm1(store, name + ".ln1", dim),
      norm2(store, name + ".ln2", dim),
      ffn1(store, name + ".ffn1", dim, ffn_hidden, rng),
      ffn2(store, name + ".ffn2", ffn_hidden, dim, rng) {}

Tensor TransformerBlock::forward(Tape& tape, const Tensor& x,
                                 const Tensor& mask) const {
  const Tensor q = proj_q.forward(tape, x);
  const Tensor k = proj_k.forward(tape, x);
  const Tensor v = proj_v.forward(tape, x);
  Tensor scores =
      scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(x.cols())));
  if (mask.defined()) scores = add(scores, mask);
  const Tensor attended = proj_o.forward(tape, matmul(softmax(scores), v));
  const Tensor mid = norm1.forward(tape, add(x, attended));
  const Tensor ff = ffn2.forward(tape, gelu(ffn1.forward(tape, mid)));
  return norm2.forward(tape, add(mid, ff));
}

}  // namespace demo
