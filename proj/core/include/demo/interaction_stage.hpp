#pragma once

#include <span>
#include <vector>

#include "demo/layers.hpp"
#include "demo/rng.hpp"
#include "demo/tensor.hpp"

namespace demo {

struct InteractionConfig {
  int d_model = 64;
  int fusion_blocks = 2;  // N
  int fusion_heads = 1;
  int vehicle_slots = 9;  // target + n_max, fixed per model
  int map_slots = 4;      // padded polyline token count
  bool use_map = false;   // false: map features are the vehicle features
  int ffn_hidden = 128;
  int gru_layers = 2;
  int map_points = 10;    // resampled points per polyline
};

/// Row 0 of every vehicle-indexed tensor is the target vehicle.
struct FeatureBundle {
  std::vector<Tensor> vehicle_frames;  // T frames [V, d], temporally aware
  Tensor map_feats;                    // [P, d]; undefined when mapless
  Tensor dyn_feats;                    // [V, d]
};

/// Per-scene constant masks and graph structure.
struct SceneMasks {
  Tensor vehicle_col;   // [V, 1], 1 present / 0 padded
  Tensor vehicle_attn;  // [V, V], 0 or -1e30 on padded key columns
  Tensor map_attn;      // [V, P], same for map keys (defined when use_map)
  Tensor map_pool;      // [1, P], masked-mean weights over map tokens
  Tensor norm_adj;      // [V, V], normalized graph operator
};

class InteractionStage {
 public:
  InteractionStage() = default;
  InteractionStage(ParamStore& store, const InteractionConfig& cfg, Rng& rng);

  /// sigmoid(FC(scan(LN(hist || short)))) per frame; input frames are [V, 4]
  /// raw states, output frames [V, d] in (0,1). Padded rows are re-zeroed.
  std::vector<Tensor> temporal_encode(Tape& tape,
                                      std::span<const Tensor> frames,
                                      const Tensor& vehicle_mask) const;

  /// Encode padded polyline tokens ([P, points*2] constant) to [P, d].
  Tensor encode_map(Tape& tape, const Tensor& polyline_tokens,
                    const Tensor& map_mask_col) const;

  /// Three parameter-independent GLU+GELU embeddings, frame by frame.
  FeatureBundle spatial_embed(Tape& tape, const FeatureBundle& in,
                              const SceneMasks& masks) const;

  /// Dual-channel cross-modal attention blocks accumulated into H_e [V, d].
  Tensor cross_modal_attention(Tape& tape, const FeatureBundle& hat,
                               const SceneMasks& masks) const;

  /// 4 affine layers, ReLU after the first three.
  Tensor regression_head(Tape& tape, const Tensor& h_e) const;

  /// GRU over the vehicle frames in parallel with a two-layer graph
  /// convolution over F_c; concatenated, fused and refined by one
  /// self-attention encoder block.
  Tensor spatio_temporal_encode(Tape& tape,
                                std::span<const Tensor> vehicle_frames,
                                const Tensor& cross_feats,
                                const SceneMasks& masks) const;

  const InteractionConfig& config() const { return cfg_; }

 private:
  struct Channel {
    Mlp mlp_q, mlp_k, mlp_v;
    Linear w_q, w_k, w_v;
    std::vector<AttentionHead> heads;
  };
  struct Block {
    Channel target;
    Channel surrounding;
    LayerNormLayer norm;
    Mlp out_mlp;
  };

  Tensor channel_attention(Tape& tape, const Channel& ch, const Tensor& q_in,
                           const Tensor& k_in, const Tensor& v_in,
                           const Tensor& attn_mask) const;

  InteractionConfig cfg_;
  LayerNormLayer input_norm;  // over the 4 raw state features
  Linear scan_in;             // 4 -> d
  SelectiveSsm scan;
  Linear scan_fc;             // d -> d
  GluLayer glu_vehicle, glu_map, glu_dyn;
  Mlp map_encoder;            // points*2 -> d -> d
  std::vector<Block> blocks;
  Mlp regression;             // d -> d -> d -> d -> d, ReLU x3
  GruStack gru;
  Param* gcn_w1 = nullptr;
  Param* gcn_w2 = nullptr;
  Linear fuse;                // 2d -> d
  TransformerBlock refiner;
};

}  // namespace demo
