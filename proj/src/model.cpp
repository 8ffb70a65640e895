#include "macdiff/model.hpp"

#include <cmath>

namespace macdiff {

void ModelConfig::validate() const {
  if (embed_dim < 2 || embed_dim % 2 != 0)
    throw ConfigError("ModelConfig: embed_dim must be even and >= 2");
  if (heads < 1 || embed_dim % heads != 0)
    throw ConfigError("ModelConfig: embed_dim must be divisible by heads");
  if (mlp_dim < 1) throw ConfigError("ModelConfig: mlp_dim must be positive");
  if (encoder_layers < 0 || decoder_layers < 0)
    throw ConfigError("ModelConfig: negative layer count");
  if (patch_len < 1 || frames < 1 || joints < 1)
    throw ConfigError("ModelConfig: bad geometry");
  if (frames % patch_len != 0)
    throw ConfigError("ModelConfig: frames must be divisible by patch_len");
  if (!(condition_dropout >= 0.0 && condition_dropout < 1.0))
    throw ConfigError("ModelConfig: condition_dropout must be in [0, 1)");
}

Mat& ParamStore::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ValueError("ParamStore: unknown tensor '" + name + "'");
  return it->second;
}

const Mat& ParamStore::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ValueError("ParamStore: unknown tensor '" + name + "'");
  return it->second;
}

void for_each_param_shape(const ModelConfig& cfg,
                          const std::function<void(const std::string&, int, int)>& fn) {
  const int c = cfg.embed_dim;
  const int pd = cfg.patch_dim();

  auto attn = [&](const std::string& prefix) {
    for (const char* nm : {"wq", "wk", "wv", "wo"}) fn(prefix + ".attn." + nm, c, c);
    for (const char* nm : {"bq", "bk", "bv", "bo"}) fn(prefix + ".attn." + nm, 1, c);
  };
  auto mlp = [&](const std::string& prefix) {
    fn(prefix + ".mlp.w1", c, cfg.mlp_dim);
    fn(prefix + ".mlp.b1", 1, cfg.mlp_dim);
    fn(prefix + ".mlp.w2", cfg.mlp_dim, c);
    fn(prefix + ".mlp.b2", 1, c);
  };
  auto ln = [&](const std::string& prefix) {
    fn(prefix + ".g", 1, c);
    fn(prefix + ".b", 1, c);
  };
  auto ada = [&](const std::string& prefix) {
    fn(prefix + ".z.w", c, 2 * c);
    fn(prefix + ".z.b", 1, 2 * c);
    fn(prefix + ".t.w", c, 2 * c);
    fn(prefix + ".t.b", 1, 2 * c);
  };

  fn("enc.embed.w", pd, c);
  fn("enc.embed.b", 1, c);
  fn("enc.pos.spatial", cfg.joints, c);
  fn("enc.pos.temporal", cfg.patches(), c);
  for (int i = 0; i < cfg.encoder_layers; ++i) {
    const std::string prefix = "enc.l" + std::to_string(i);
    ln(prefix + ".ln1");
    attn(prefix);
    ln(prefix + ".ln2");
    mlp(prefix);
  }
  ln("enc.final_ln");

  fn("dec.embed.w", pd, c);
  fn("dec.embed.b", 1, c);
  fn("dec.pos.spatial", cfg.joints, c);
  fn("dec.pos.temporal", cfg.patches(), c);
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    const std::string prefix = "dec.l" + std::to_string(i);
    ada(prefix + ".ada1");
    attn(prefix);
    ada(prefix + ".ada2");
    mlp(prefix);
  }
  ada("dec.final_ada");
  fn("dec.out.w", c, pd);
  fn("dec.out.b", 1, pd);

  fn("temb.w1", c, c);
  fn("temb.b1", 1, c);
  fn("temb.w2", c, c);
  fn("temb.b2", 1, c);

  fn("null_token", 1, c);
}

std::size_t param_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for_each_param_shape(cfg, [&](const std::string&, int r, int co) {
    n += static_cast<std::size_t>(r) * co;
  });
  return n;
}

ParamStore init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamStore store;
  for_each_param_shape(cfg, [&](const std::string& name, int r, int co) {
    store.tensors.emplace(name, Mat(r, co));
  });
  const int c = cfg.embed_dim;
  // map iteration order is alphabetical; initialize in that fixed order
  for (auto& [name, m] : store.tensors) {
    const bool is_weight = name.ends_with(".w") || name.ends_with(".w1") ||
                           name.ends_with(".w2") || name.ends_with("wq") ||
                           name.ends_with("wk") || name.ends_with("wv") ||
                           name.ends_with("wo");
    const bool is_ada = name.find(".ada") != std::string::npos ||
                        name.find("final_ada") != std::string::npos;
    const bool is_out = name.starts_with("dec.out.");
    if (is_ada) {
      // zero weights; bias gives scale 1 / shift 0
      if (name.ends_with(".b")) {
        for (int j = 0; j < c; ++j) m.at(0, j) = 1.0;
      }
      continue;
    }
    if (is_out) continue;  // zero output projection
    if (name.ends_with(".g")) {
      m.fill(1.0);
      continue;
    }
    if (name == "null_token" || name.find(".pos.") != std::string::npos || is_weight) {
      for (auto& x : m.d) x = 0.02 * rng.normal();
    }
    // biases and LayerNorm shifts stay zero
  }
  for (auto& [name, m] : store.tensors) m.quantize_f32();
  return store;
}

Binding Binding::bind(ag::Tape& tape, const ParamStore& params, bool trainable) {
  Binding b;
  b.tape = &tape;
  for (const auto& [name, m] : params.tensors) b.vars.emplace(name, tape.leaf(m, trainable));
  return b;
}

Binding Binding::bind_filtered(ag::Tape& tape, const ParamStore& params,
                               const std::function<bool(const std::string&)>& trainable) {
  Binding b;
  b.tape = &tape;
  for (const auto& [name, m] : params.tensors)
    b.vars.emplace(name, tape.leaf(m, trainable(name)));
  return b;
}

ag::Var Binding::operator()(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw ValueError("Binding: unknown tensor '" + name + "'");
  return it->second;
}

const Mat& Binding::grad(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw ValueError("Binding::grad: unknown tensor '" + name + "'");
  if (!it->second->requires_grad || it->second->grad.empty())
    throw ValueError("Binding::grad: no gradient path recorded for tensor '" + name + "'");
  return it->second->grad;
}

const char* condition_mode_name(ConditionMode m) {
  switch (m) {
    case ConditionMode::assembled: return "assembled";
    case ConditionMode::global_only: return "global_only";
    case ConditionMode::null_token: return "null";
  }
  return "?";
}

ConditionMode condition_mode_from_name(const std::string& name) {
  for (ConditionMode m : {ConditionMode::assembled, ConditionMode::global_only,
                          ConditionMode::null_token}) {
    if (name == condition_mode_name(m)) return m;
  }
  throw ConfigError("unknown condition mode: " + name);
}

namespace {

// positional embedding broadcast: token (p, v) gets spatial[v] + temporal[p]
ag::Var add_pos_embeddings(ag::Tape& t, ag::Var x, ag::Var spatial, ag::Var temporal,
                           int patches, int joints) {
  std::vector<int> sidx(static_cast<std::size_t>(patches) * joints);
  std::vector<int> tidx(sidx.size());
  for (int p = 0; p < patches; ++p) {
    for (int v = 0; v < joints; ++v) {
      sidx[static_cast<std::size_t>(p) * joints + v] = v;
      tidx[static_cast<std::size_t>(p) * joints + v] = p;
    }
  }
  return t.add(x, t.add(t.gather_rows(spatial, sidx), t.gather_rows(temporal, tidx)));
}

void check_layer_finite(ag::Var h, const char* stack, int layer) {
  if (!h->value.finite())
    throw NumericError(std::string(stack) + " layer " + std::to_string(layer) +
                       " produced non-finite activations");
}

ag::Var attention_block(ag::Tape& t, const Binding& p, ag::Var x,
                        const std::string& prefix, int heads) {
  ag::Var q = t.linear(x, p(prefix + ".attn.wq"), p(prefix + ".attn.bq"));
  ag::Var k = t.linear(x, p(prefix + ".attn.wk"), p(prefix + ".attn.bk"));
  ag::Var v = t.linear(x, p(prefix + ".attn.wv"), p(prefix + ".attn.bv"));
  ag::Var a = t.attention(q, k, v, heads);
  return t.linear(a, p(prefix + ".attn.wo"), p(prefix + ".attn.bo"));
}

ag::Var mlp_block(ag::Tape& t, const Binding& p, ag::Var x, const std::string& prefix) {
  ag::Var h = t.gelu(t.linear(x, p(prefix + ".mlp.w1"), p(prefix + ".mlp.b1")));
  return t.linear(h, p(prefix + ".mlp.w2"), p(prefix + ".mlp.b2"));
}

}  // namespace

ag::Var embed_tokens(ag::Tape& t, const Binding& p, const Mat& grid_values,
                     const std::string& prefix, const ModelConfig& cfg) {
  if (grid_values.rows != cfg.tokens() || grid_values.cols != cfg.patch_dim())
    throw ShapeError("embed_tokens: grid shape does not match config");
  ag::Var x = t.linear(t.constant(grid_values), p(prefix + ".embed.w"), p(prefix + ".embed.b"));
  return add_pos_embeddings(t, x, p(prefix + ".pos.spatial"), p(prefix + ".pos.temporal"),
                            cfg.patches(), cfg.joints);
}

ag::Var encoder_forward(ag::Tape& t, const Binding& p, ag::Var tokens_kept,
                        const ModelConfig& cfg) {
  if (tokens_kept->value.rows < 1) throw ShapeError("encoder_forward: no tokens");
  ag::Var h = tokens_kept;
  for (int i = 0; i < cfg.encoder_layers; ++i) {
    const std::string prefix = "enc.l" + std::to_string(i);
    ag::Var n1 = t.layernorm_affine(h, p(prefix + ".ln1.g"), p(prefix + ".ln1.b"));
    h = t.add(h, attention_block(t, p, n1, prefix, cfg.heads));
    ag::Var n2 = t.layernorm_affine(h, p(prefix + ".ln2.g"), p(prefix + ".ln2.b"));
    h = t.add(h, mlp_block(t, p, n2, prefix));
    check_layer_finite(h, "encoder", i);
  }
  return t.layernorm_affine(h, p("enc.final_ln.g"), p("enc.final_ln.b"));
}

ag::Var pool(ag::Tape& t, ag::Var z_local) {
  if (z_local->value.rows < 1) throw ShapeError("pool: empty input");
  return t.mean_rows(z_local);
}

Mat sinusoid_embedding(int t, int dim) {
  Mat out(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * (2.0 * i / dim));
    out.at(0, 2 * i) = std::sin(t * freq);
    out.at(0, 2 * i + 1) = std::cos(t * freq);
  }
  return out;
}

ag::Var timestep_embed(ag::Tape& t, const Binding& p, int step, const ModelConfig& cfg) {
  ag::Var s = t.constant(sinusoid_embedding(step, cfg.embed_dim));
  ag::Var h = t.gelu(t.linear(s, p("temb.w1"), p("temb.b1")));
  return t.linear(h, p("temb.w2"), p("temb.b2"));
}

ag::Var adaln(ag::Tape& t, const Binding& p, ag::Var h, ag::Var cond, ag::Var t_emb,
              const std::string& prefix) {
  const int c = h->value.cols;
  ag::Var zproj = t.linear(cond, p(prefix + ".z.w"), p(prefix + ".z.b"));
  ag::Var tproj = t.linear(t_emb, p(prefix + ".t.w"), p(prefix + ".t.b"));
  ag::Var zs = t.slice_cols(zproj, 0, c);
  ag::Var zb = t.slice_cols(zproj, c, 2 * c);
  ag::Var ts = t.slice_cols(tproj, 0, c);
  ag::Var tb = t.slice_cols(tproj, c, 2 * c);
  ag::Var inner = t.add_rowvec(t.mul_rowvec(t.layernorm(h), ts), tb);
  return t.add(t.hadamard(zs, inner), zb);
}

ag::Var assemble_condition(ag::Tape& t, const Binding& p, ag::Var z_local,
                           const Mask& mask, ag::Var z_global, ConditionMode mode,
                           int total_tokens) {
  switch (mode) {
    case ConditionMode::assembled:
      if (mask.total() != total_tokens)
        throw ShapeError("assemble_condition: mask grid does not match token count");
      return t.assemble_rows(z_local, z_global, mask);
    case ConditionMode::global_only:
      return t.broadcast_row(z_global, total_tokens);
    case ConditionMode::null_token:
      return t.broadcast_row(p("null_token"), total_tokens);
  }
  throw ValueError("assemble_condition: unknown mode");
}

ag::Var condition_dropout(ag::Tape& t, const Binding& p, ag::Var cond, double p_drop,
                          Rng& rng, bool training) {
  if (!(p_drop >= 0.0 && p_drop < 1.0))
    throw ValueError("condition_dropout: p_drop must be in [0, 1)");
  if (!training || p_drop == 0.0) return cond;
  if (rng.uniform() < p_drop)
    return t.broadcast_row(p("null_token"), cond->value.rows);
  return cond;
}

ag::Var decoder_forward(ag::Tape& t, const Binding& p, const Mat& xt_tokens, int step,
                        ag::Var cond, const ModelConfig& cfg) {
  if (cond->value.rows != cfg.tokens() || cond->value.cols != cfg.embed_dim)
    throw ShapeError("decoder_forward: condition shape does not match config");
  ag::Var h = embed_tokens(t, p, xt_tokens, "dec", cfg);
  ag::Var t_emb = timestep_embed(t, p, step, cfg);
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    const std::string prefix = "dec.l" + std::to_string(i);
    ag::Var n1 = adaln(t, p, h, cond, t_emb, prefix + ".ada1");
    h = t.add(h, attention_block(t, p, n1, prefix, cfg.heads));
    ag::Var n2 = adaln(t, p, h, cond, t_emb, prefix + ".ada2");
    h = t.add(h, mlp_block(t, p, n2, prefix));
    check_layer_finite(h, "decoder", i);
  }
  ag::Var hf = adaln(t, p, h, cond, t_emb, "dec.final_ada");
  return t.linear(hf, p("dec.out.w"), p("dec.out.b"));
}

EncodeResult encode(const ParamStore& params, const ModelConfig& cfg,
                    const TokenGrid& grid, const Mask& mask) {
  ag::Tape tape(false);
  Binding p = Binding::bind(tape, params, false);
  ag::Var tokens = embed_tokens(tape, p, grid.values, "enc", cfg);
  ag::Var kept = tape.gather_rows(tokens, mask.kept_indices);
  ag::Var z_local = encoder_forward(tape, p, kept, cfg);
  ag::Var z_global = pool(tape, z_local);
  return {z_local->value, z_global->value};
}

ConditionTokens encode_condition(const ParamStore& params, const ModelConfig& cfg,
                                 const TokenGrid& grid, const Mask& mask,
                                 ConditionMode mode) {
  if (mode == ConditionMode::null_token) return null_condition(params, cfg);
  EncodeResult enc = encode(params, cfg, grid, mask);
  ConditionTokens cond;
  cond.source = mode;
  if (mode == ConditionMode::assembled) {
    cond.z = unshuffle(enc.z_local, mask, enc.z_global.d);
  } else {
    cond.z = Mat(cfg.tokens(), cfg.embed_dim);
    for (int i = 0; i < cond.z.rows; ++i)
      std::copy(enc.z_global.d.begin(), enc.z_global.d.end(), &cond.z.at(i, 0));
  }
  return cond;
}

ConditionTokens encode_condition(const ParamStore& params, const ModelConfig& cfg,
                                 const TokenGrid& grid, ConditionMode mode) {
  return encode_condition(params, cfg, grid, Mask::all_kept(grid.patches, grid.joints), mode);
}

ConditionTokens null_condition(const ParamStore& params, const ModelConfig& cfg) {
  ConditionTokens cond;
  cond.source = ConditionMode::null_token;
  const Mat& null_tok = params.at("null_token");
  cond.z = Mat(cfg.tokens(), cfg.embed_dim);
  for (int i = 0; i < cond.z.rows; ++i)
    std::copy(null_tok.d.begin(), null_tok.d.end(), &cond.z.at(i, 0));
  return cond;
}

SkeletonSequence predict_eps(const ParamStore& params, const ModelConfig& cfg,
                             const SkeletonSequence& xt, int step,
                             const ConditionTokens& cond) {
  if (xt.frames != cfg.frames || xt.joints != cfg.joints)
    throw ShapeError("predict_eps: sequence shape does not match config");
  const TokenGrid grid = patchify(xt, cfg.patch_len);
  ag::Tape tape(false);
  Binding p = Binding::bind(tape, params, false);
  ag::Var c = tape.constant(cond.z);
  ag::Var eps_tokens = decoder_forward(tape, p, grid.values, step, c, cfg);
  TokenGrid out = grid;
  out.values = eps_tokens->value;
  return unpatchify(out);
}

}  // namespace macdiff
