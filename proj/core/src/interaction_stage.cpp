#include "demo/interaction_stage.hpp"

#include <array>

namespace demo {

InteractionStage::InteractionStage(ParamStore& store,
                                   const InteractionConfig& cfg, Rng& rng)
    : cfg_(cfg),
      input_norm(store, "ia.te.norm", 4),
      scan_in(store, "ia.te.in", 4, cfg.d_model, rng),
      scan(store, "ia.te.scan", cfg.d_model, rng),
      scan_fc(store, "ia.te.fc", cfg.d_model, cfg.d_model, rng),
      glu_vehicle(store, "ia.embed.vehicle", cfg.d_model, cfg.d_model, rng),
      glu_map(store, "ia.embed.map", cfg.d_model, cfg.d_model, rng),
      glu_dyn(store, "ia.embed.dyn", cfg.d_model, cfg.d_model, rng),
      map_encoder(store, "ia.map",
                  {cfg.map_points * 2, cfg.d_model, cfg.d_model}, rng,
                  Activation::Gelu, Activation::None),
      regression(store, "ia.reg",
                 {cfg.d_model, cfg.d_model, cfg.d_model, cfg.d_model,
                  cfg.d_model},
                 rng, Activation::Relu, Activation::None),
      gru(store, "ia.gru", cfg.d_model, cfg.d_model, cfg.gru_layers, rng),
      fuse(store, "ia.fuse", 2 * cfg.d_model, cfg.d_model, rng),
      refiner(store, "ia.refine", cfg.d_model, cfg.ffn_hidden, rng) {
  if (cfg.d_model % cfg.fusion_heads != 0)
    throw UsageError("fusion_heads must divide d_model");
  const int key_slots = cfg.use_map ? cfg.map_slots : cfg.vehicle_slots;
  const int head_dim = cfg.d_model / cfg.fusion_heads;
  for (int i = 0; i < cfg.fusion_blocks; ++i) {
    Block block;
    const std::string base = "ia.fusion" + std::to_string(i);
    for (const char* channel : {"t", "s"}) {
      Channel ch;
      const std::string cb = base + "." + channel;
      ch.mlp_q = Mlp(store, cb + ".mq", {cfg.d_model, cfg.d_model}, rng,
                     Activation::Gelu, Activation::Gelu);
      ch.mlp_k = Mlp(store, cb + ".mk", {cfg.d_model, cfg.d_model}, rng,
                     Activation::Gelu, Activation::Gelu);
      ch.mlp_v = Mlp(store, cb + ".mv", {cfg.d_model, cfg.d_model}, rng,
                     Activation::Gelu, Activation::Gelu);
      ch.w_q = Linear(store, cb + ".wq", cfg.d_model, cfg.d_model, rng);
      ch.w_k = Linear(store, cb + ".wk", cfg.d_model, cfg.d_model, rng);
      ch.w_v = Linear(store, cb + ".wv", cfg.d_model, cfg.d_model, rng);
      for (int h = 0; h < cfg.fusion_heads; ++h)
        ch.heads.emplace_back(store, cb + ".head" + std::to_string(h),
                              key_slots, head_dim, rng);
      (channel[0] == 't' ? block.target : block.surrounding) = std::move(ch);
    }
    block.norm = LayerNormLayer(store, base + ".ln", cfg.d_model);
    block.out_mlp = Mlp(store, base + ".out", {cfg.d_model, cfg.d_model}, rng,
                        Activation::Gelu, Activation::None);
    blocks.push_back(std::move(block));
  }
  gcn_w1 = &store.create(
      "ia.gcn.w1", {cfg.d_model, cfg.d_model},
      uniform_init(cfg.d_model,
                   static_cast<std::size_t>(cfg.d_model) * cfg.d_model, rng));
  gcn_w2 = &store.create(
      "ia.gcn.w2", {cfg.d_model, cfg.d_model},
      uniform_init(cfg.d_model,
                   static_cast<std::size_t>(cfg.d_model) * cfg.d_model, rng));
}

std::vector<Tensor> InteractionStage::temporal_encode(
    Tape& tape, std::span<const Tensor> frames,
    const Tensor& vehicle_mask) const {
  if (frames.empty()) throw EmptySequence();
  std::vector<Tensor> normalized;
  normalized.reserve(frames.size());
  for (const Tensor& f : frames) {
    if (f.cols() != 4)
      throw LengthMismatch("temporal_encode frame of shape " +
                           shape_str(f.shape()));
    normalized.push_back(scan_in.forward(tape, input_norm.forward(tape, f)));
  }
  const std::vector<Tensor> scanned = scan.forward(tape, normalized);
  std::vector<Tensor> out;
  out.reserve(scanned.size());
  for (const Tensor& s : scanned) {
    Tensor f = sigmoid(scan_fc.forward(tape, s));
    if (vehicle_mask.defined()) f = mul_colvec(f, vehicle_mask);
    out.push_back(f);
  }
  return out;
}

Tensor InteractionStage::encode_map(Tape& tape, const Tensor& polyline_tokens,
                                    const Tensor& map_mask_col) const {
  Tensor enc = map_encoder.forward(tape, polyline_tokens);
  if (map_mask_col.defined()) enc = mul_colvec(enc, map_mask_col);
  return enc;
}

FeatureBundle InteractionStage::spatial_embed(Tape& tape,
                                              const FeatureBundle& in,
                                              const SceneMasks& masks) const {
  FeatureBundle out;
  out.vehicle_frames.reserve(in.vehicle_frames.size());
  for (const Tensor& f : in.vehicle_frames)
    out.vehicle_frames.push_back(
        mul_colvec(gelu(glu_vehicle.forward(tape, f)), masks.vehicle_col));
  if (in.map_feats.defined())
    out.map_feats = gelu(glu_map.forward(tape, in.map_feats));
  out.dyn_feats =
      mul_colvec(gelu(glu_dyn.forward(tape, in.dyn_feats)), masks.vehicle_col);
  return out;
}

Tensor InteractionStage::channel_attention(Tape& tape, const Channel& ch,
                                           const Tensor& q_in,
                                           const Tensor& k_in,
                                           const Tensor& v_in,
                                           const Tensor& attn_mask) const {
  const Tensor q = ch.w_q.forward(tape, q_in);
  const Tensor k = ch.w_k.forward(tape, k_in);
  const Tensor v = ch.w_v.forward(tape, v_in);
  const int head_dim = cfg_.d_model / cfg_.fusion_heads;
  std::vector<Tensor> outs;
  outs.reserve(ch.heads.size());
  for (std::size_t h = 0; h < ch.heads.size(); ++h) {
    const int off = static_cast<int>(h) * head_dim;
    outs.push_back(ch.heads[h].forward(
        tape, slice_cols(q, off, head_dim), slice_cols(k, off, head_dim),
        slice_cols(v, off, head_dim), static_cast<double>(head_dim),
        attn_mask));
  }
  return outs.size() == 1 ? outs[0] : concat_cols(outs);
}

Tensor InteractionStage::cross_modal_attention(Tape& tape,
                                               const FeatureBundle& hat,
                                               const SceneMasks& masks) const {
  if (hat.vehicle_frames.empty()) throw EmptySequence();
  // Pool the temporally-aware features into one row per vehicle.
  Tensor pooled;
  for (const Tensor& f : hat.vehicle_frames)
    pooled = pooled.defined() ? add(pooled, f) : f;
  pooled = scale(pooled, 1.0 / static_cast<double>(hat.vehicle_frames.size()));
  const int v = pooled.rows();

  // Partition into target (row 0) and surrounding rows by masking.
  std::vector<double> tsel(static_cast<std::size_t>(v), 0.0);
  tsel[0] = 1.0;
  std::vector<double> ssel(static_cast<std::size_t>(v), 1.0);
  ssel[0] = 0.0;
  const Tensor target_sel = tape.constant({v, 1}, std::move(tsel));
  const Tensor surr_sel = tape.constant({v, 1}, std::move(ssel));
  const Tensor feat_target = mul_colvec(pooled, target_sel);
  const Tensor feat_surr = mul_colvec(pooled, surr_sel);

  const bool map_keys = cfg_.use_map && hat.map_feats.defined();
  const Tensor key_src = map_keys ? hat.map_feats : pooled;
  const Tensor attn_mask = map_keys ? masks.map_attn : masks.vehicle_attn;

  // Residual map term, pooled to vehicle rows when shapes differ.
  Tensor map_residual;
  if (map_keys) {
    const Tensor mean_map = matmul(masks.map_pool, hat.map_feats);  // [1, d]
    map_residual = matmul(tape.full({v, 1}, 1.0), mean_map);
  } else {
    map_residual = pooled;
  }

  Tensor h_e;
  for (const Block& block : blocks) {
    Tensor h_channels;
    for (const Channel* ch : {&block.target, &block.surrounding}) {
      const Tensor q_in =
          add(ch->mlp_q.forward(tape, pooled), hat.dyn_feats);
      Tensor k_in = ch->mlp_k.forward(tape, key_src);
      if (map_keys) {
        // A single dynamic-feature vector is needed per map token; use the
        // target vehicle's row.
        k_in = add_rowvec(k_in, slice_rows(hat.dyn_feats, 0, 1));
      } else {
        k_in = add(k_in, hat.dyn_feats);
      }
      Tensor v_in;
      const Tensor& value_feats =
          (ch == &block.target) ? feat_target : feat_surr;
      if (map_keys) {
        // Lift the channel's vehicle content into key-row space.
        const Tensor pooled_value = (ch == &block.target)
                                        ? slice_rows(pooled, 0, 1)
                                        : mean_rows(feat_surr);
        v_in = ch->mlp_v.forward(
            tape, matmul(tape.full({key_src.rows(), 1}, 1.0), pooled_value));
      } else {
        v_in = ch->mlp_v.forward(tape, value_feats);
      }
      const Tensor h =
          channel_attention(tape, *ch, q_in, k_in, v_in, attn_mask);
      h_channels = h_channels.defined() ? add(h_channels, h) : h;
    }
    const Tensor with_residual = add(h_channels, map_residual);
    const Tensor term = add(
        block.out_mlp.forward(tape, block.norm.forward(tape, with_residual)),
        with_residual);
    h_e = h_e.defined() ? add(h_e, term) : term;
  }
  return h_e;
}

Tensor InteractionStage::regression_head(Tape& tape, const Tensor& h_e) const {
  return regression.forward(tape, h_e);
}

Tensor InteractionStage::spatio_temporal_encode(
    Tape& tape, std::span<const Tensor> vehicle_frames,
    const Tensor& cross_feats, const SceneMasks& masks) const {
  const Tensor temporal = gru.forward(tape, vehicle_frames);
  const Tensor g1 = graph_conv(tape, cross_feats, masks.norm_adj,
                               tape.lease(*gcn_w1), Activation::Relu);
  const Tensor g2 = graph_conv(tape, g1, masks.norm_adj, tape.lease(*gcn_w2),
                               Activation::Relu);
  const std::array<Tensor, 2> joined = {temporal, g2};
  const Tensor fused = fuse.forward(tape, concat_cols(joined));
  return refiner.forward(tape, fused, masks.vehicle_attn);
}

}  // namespace demo
