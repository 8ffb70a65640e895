#pragma once

#include <map>
#include <string>

#include "macdiff/autograd.hpp"
#include "macdiff/masking.hpp"
#include "macdiff/mat.hpp"
#include "macdiff/skeleton.hpp"

namespace macdiff {

struct ModelConfig {
  int embed_dim = 256;  // C
  int mlp_dim = 1024;
  int heads = 8;
  int encoder_layers = 8;
  int decoder_layers = 5;
  int patch_len = 4;  // l
  int frames = 120;   // T0
  int joints = 25;    // V
  double condition_dropout = 0.1;

  int patches() const { return frames / patch_len; }
  int patch_dim() const { return patch_len * 3; }
  int tokens() const { return patches() * joints; }
  void validate() const;
};

// Named parameter tensors. std::map keeps iteration order stable, which fixes
// the checkpoint layout and the optimizer update order.
struct ParamStore {
  std::map<std::string, Mat> tensors;

  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

// Enumerates every tensor shape implied by the config, in checkpoint order.
void for_each_param_shape(const ModelConfig& cfg,
                          const std::function<void(const std::string&, int, int)>& fn);

// Total scalar parameter count; a pure function of the config.
std::size_t param_count(const ModelConfig& cfg);

// Fresh parameters: normal(0, 0.02) weights, zero biases, unit LayerNorm
// gains. AdaLN projections start at identity modulation (zero weights, bias
// scale 1 / shift 0) and the decoder output projection starts at zero, so an
// untrained decoder predicts zero noise.
ParamStore init_params(const ModelConfig& cfg, Rng& rng);

// Tape leaves for every parameter tensor of one forward pass.
struct Binding {
  ag::Tape* tape = nullptr;
  std::map<std::string, ag::Var> vars;

  static Binding bind(ag::Tape& tape, const ParamStore& params, bool trainable);
  // selective variant, e.g. for freezing the encoder during fine-tuning
  static Binding bind_filtered(ag::Tape& tape, const ParamStore& params,
                               const std::function<bool(const std::string&)>& trainable);
  ag::Var operator()(const std::string& name) const;
  // gradient of a bound tensor after Tape::backward; errors name the tensor
  const Mat& grad(const std::string& name) const;
};

enum class ConditionMode { assembled, global_only, null_token };
const char* condition_mode_name(ConditionMode m);
ConditionMode condition_mode_from_name(const std::string& name);

// Per-position conditioning tensor for the decoder: tokens() rows of width C.
struct ConditionTokens {
  Mat z;
  ConditionMode source = ConditionMode::assembled;
};

// --- tape-level building blocks (training path) ---

// linear patch projection plus broadcast spatial/temporal positional
// embeddings; prefix is "enc" or "dec"
ag::Var embed_tokens(ag::Tape& t, const Binding& p, const Mat& grid_values,
                     const std::string& prefix, const ModelConfig& cfg);

// pre-LN transformer stack with final LayerNorm; throws NumericError naming
// the offending layer if activations go non-finite
ag::Var encoder_forward(ag::Tape& t, const Binding& p, ag::Var tokens_kept,
                        const ModelConfig& cfg);

ag::Var pool(ag::Tape& t, ag::Var z_local);

// sinusoidal timestep encoding (interleaved sin/cos) mapped through the
// 2-layer embedding MLP
Mat sinusoid_embedding(int t, int dim);
ag::Var timestep_embed(ag::Tape& t, const Binding& p, int step, const ModelConfig& cfg);

// AdaLN(h, z, t) = z_s * (t_s * LN(h) + t_b) + z_b with (z_s, z_b) from a
// per-token projection of cond and (t_s, t_b) from a projection of t_emb
ag::Var adaln(ag::Tape& t, const Binding& p, ag::Var h, ag::Var cond, ag::Var t_emb,
              const std::string& prefix);

ag::Var assemble_condition(ag::Tape& t, const Binding& p, ag::Var z_local,
                           const Mask& mask, ag::Var z_global, ConditionMode mode,
                           int total_tokens);

// decides per sample whether to replace the condition with the learned null
// token; never drops outside training
ag::Var condition_dropout(ag::Tape& t, const Binding& p, ag::Var cond, double p_drop,
                          Rng& rng, bool training);

// AdaLN-conditioned transformer over the full noisy token grid; returns noise
// prediction in token layout ((Tp*V) x patch_dim)
ag::Var decoder_forward(ag::Tape& t, const Binding& p, const Mat& xt_tokens, int step,
                        ag::Var cond, const ModelConfig& cfg);

// --- frozen-parameter inference helpers (no gradients) ---

// encoder run over the kept tokens of `mask`; z_global is the pooled mean
struct EncodeResult {
  Mat z_local;   // K x C
  Mat z_global;  // 1 x C
};
EncodeResult encode(const ParamStore& params, const ModelConfig& cfg,
                    const TokenGrid& grid, const Mask& mask);

// full-grid (r = 0) condition of the requested mode
ConditionTokens encode_condition(const ParamStore& params, const ModelConfig& cfg,
                                 const TokenGrid& grid, ConditionMode mode);
ConditionTokens encode_condition(const ParamStore& params, const ModelConfig& cfg,
                                 const TokenGrid& grid, const Mask& mask,
                                 ConditionMode mode);
ConditionTokens null_condition(const ParamStore& params, const ModelConfig& cfg);

// noise prediction for sampling: skeleton-shaped in, skeleton-shaped out
SkeletonSequence predict_eps(const ParamStore& params, const ModelConfig& cfg,
                             const SkeletonSequence& xt, int step,
                             const ConditionTokens& cond);

}  // namespace macdiff
