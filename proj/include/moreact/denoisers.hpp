/**
 * @file denoisers.hpp
 * @brief Conditional transformer denoisers: the trajectory model, the
 *        full-body model and the single-stage/joint-pair variants, plus the
 *        actor encoder, text embedder and condition dropout.
 *
 * Architecture: motion frames are projected to the latent width and carry
 * sinusoidal positions.  Each block applies, in order, self-attention,
 * cross-attention to the text tokens, cross-attention to the actor memory,
 * optionally cross-attention to the trajectory tokens, and a feed-forward —
 * every sublayer pre-normalized with an adaptive layer norm whose scale and
 * shift are produced from a composite feature (projected sinusoidal timestep
 * embedding plus the most salient text embedding).  Residual output
 * projections, the adaptive modulations and the final head start at zero so
 * a fresh model is the zero map.
 */
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "moreact/autodiff.hpp"
#include "moreact/common.hpp"
#include "moreact/nn.hpp"

namespace moreact {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DenoiserConfig {
  int blocks = 4;          ///< transformer blocks (paper-scale uses 8)
  int latent_dim = 128;    ///< token width (paper-scale uses 1024)
  int heads = 8;
  int ff_mult = 2;         ///< feed-forward expansion factor
  int input_dim = kFeatureDim;
  int vocab_size = 4096;   ///< hashed text vocabulary
  bool use_text = true;
  bool use_actor = true;
  bool use_traj = false;
  int actor_dim = kFeatureDim;  ///< per-frame width of the actor stream

  void validate() const {
    if (blocks < 1) throw ConfigError("denoiser needs at least one block");
    if (latent_dim < heads || latent_dim % heads != 0)
      throw ConfigError("latent_dim must be a positive multiple of heads");
    if (ff_mult < 1 || input_dim < 1 || vocab_size < 2)
      throw ConfigError("bad denoiser config");
  }

  nlohmann::json to_json() const {
    return {{"blocks", blocks},     {"latent_dim", latent_dim},
            {"heads", heads},       {"ff_mult", ff_mult},
            {"input_dim", input_dim}, {"vocab_size", vocab_size},
            {"use_text", use_text}, {"use_actor", use_actor},
            {"use_traj", use_traj}, {"actor_dim", actor_dim}};
  }

  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.blocks = j.at("blocks").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ff_mult = j.at("ff_mult").get<int>();
    c.input_dim = j.at("input_dim").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.use_text = j.at("use_text").get<bool>();
    c.use_actor = j.at("use_actor").get<bool>();
    c.use_traj = j.at("use_traj").get<bool>();
    c.actor_dim = j.value("actor_dim", kFeatureDim);
    c.validate();
    return c;
  }
};

/// Preset model shapes used by the pipelines.
enum class ModelKind { kTrajectory, kFullBody, kSingleStage, kPairJoint };

inline DenoiserConfig preset_config(ModelKind kind, int blocks = 4,
                                    int latent_dim = 128, int heads = 8) {
  DenoiserConfig c;
  c.blocks = blocks;
  c.latent_dim = latent_dim;
  c.heads = heads;
  switch (kind) {
    case ModelKind::kTrajectory:
      c.input_dim = kTrajectoryDims;
      break;
    case ModelKind::kFullBody:
      c.input_dim = kFeatureDim;
      c.use_traj = true;
      break;
    case ModelKind::kSingleStage:
      c.input_dim = kFeatureDim;
      break;
    case ModelKind::kPairJoint:
      // Joint two-person generation: reactor and actor features side by side,
      // conditioned on text alone (the partner enters through inpainting).
      c.input_dim = 2 * kFeatureDim;
      c.use_actor = false;
      break;
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Condition dropout
// ---------------------------------------------------------------------------

struct DropoutRates {
  double text = 0.1;
  double actor = 0.1;
  double traj = 0.1;

  void validate() const {
    for (double r : {text, actor, traj})
      if (r < 0.0 || r > 1.0) throw ConfigError("dropout rates must be in [0,1]");
  }
};

struct DropFlags {
  bool text = false;
  bool actor = false;
  bool traj = false;

  static DropFlags all() { return {true, true, true}; }
};

/// Samples independent per-condition drop decisions.
inline DropFlags sample_condition_dropout(const DropoutRates& rates,
                                          RandomStream& rng) {
  rates.validate();
  DropFlags f;
  f.text = rng.uniform() < rates.text;
  f.actor = rng.uniform() < rates.actor;
  f.traj = rng.uniform() < rates.traj;
  return f;
}

// ---------------------------------------------------------------------------
// Condition bundle
// ---------------------------------------------------------------------------

/// Conditioning streams for one forward pass, living on the tape so that the
/// text table and actor encoder train jointly with the denoiser.
template <typename Scalar>
struct ConditionBundle {
  using Var = typename Tape<Scalar>::Var;
  Var text_tokens;                ///< L x d (a single null row when dropped)
  Var salient;                    ///< 1 x d pooled text feature
  std::optional<Var> actor_tokens;  ///< T x d memory
  std::optional<Var> traj_tokens;   ///< T x d memory
  DropFlags dropped;
};

// ---------------------------------------------------------------------------
// Denoiser model
// ---------------------------------------------------------------------------

template <typename Scalar>
class DenoiserModel {
 public:
  using M = Mat<Scalar>;
  using Var = typename Tape<Scalar>::Var;
  using Binding = TapeBinding<Scalar>;

  DenoiserModel(DenoiserConfig config, std::uint64_t seed)
      : config_(config), seed_(seed) {
    config_.validate();
    declare_params();
  }

  /// Rebuilds a model around parameters loaded from a checkpoint.
  DenoiserModel(DenoiserConfig config, const std::map<std::string, Matf>& arrays)
      : DenoiserModel(config, /*seed=*/0) {
    for (auto& [name, value] : params_) {
      auto it = arrays.find(name);
      if (it == arrays.end())
        throw IoError("checkpoint is missing parameter " + name);
      if (it->second.rows() != value.rows() || it->second.cols() != value.cols())
        throw IoError("checkpoint shape mismatch for " + name);
      value = it->second.template cast<Scalar>();
    }
  }

  const DenoiserConfig& config() const { return config_; }
  ParamSet<Scalar>& params() { return params_; }
  const ParamSet<Scalar>& params() const { return params_; }

  // ---- Conditions -----------------------------------------------------------

  /**
   * Embeds hashed token ids: a table lookup plus sinusoidal positions, with
   * the salient feature max-pooled over tokens.  Empty input (or a drop flag)
   * produces the learned null text token.
   */
  std::pair<Var, Var> embed_text(Binding& bind, const std::vector<int>& tokens,
                                 bool dropped = false) const {
    auto& t = bind.tape();
    if (dropped || tokens.empty()) {
      const Var null_tok = bind("null.text");
      return {null_tok, null_tok};
    }
    for (int id : tokens)
      if (id < 0 || id >= config_.vocab_size)
        throw ConfigError("text token id outside vocabulary");
    const Var raw = t.gather_rows(bind("text.table"), tokens);
    // The salient feature pools the raw embeddings so it is invariant to
    // token order; the attention memory gets positions on top.
    const Var tok = t.add_constant(
        raw, sinusoidal_position_table(static_cast<int>(tokens.size()),
                                       config_.latent_dim)
                 .template cast<Scalar>());
    return {tok, t.max_rows(raw)};
  }

  /// Two-block transformer encoder over the actor's frames -> T x d memory.
  Var encode_actor(Binding& bind, const M& actor_features) const {
    if (!config_.use_actor)
      throw ConfigError("this model has no actor stream");
    if (actor_features.cols() != config_.actor_dim)
      throw ConfigError("actor features have wrong width");
    auto& t = bind.tape();
    Var x = linear(bind, "enc.in", t.input(actor_features));
    x = t.add_constant(
        x, sinusoidal_position_table(static_cast<int>(actor_features.rows()),
                                     config_.latent_dim)
               .template cast<Scalar>());
    for (int b = 0; b < 2; ++b) {
      const std::string p = "enc.b" + std::to_string(b);
      const Var n = t.layernorm_rows(x);
      x = t.add(x, attention(bind, p + ".sa", n, n, config_.heads));
      const Var h = t.gelu(linear(bind, p + ".ff.l1", t.layernorm_rows(x)));
      x = t.add(x, linear(bind, p + ".ff.l2", h));
    }
    return x;
  }

  /// Per-frame projection of a T x 4 trajectory into memory tokens.
  Var encode_trajectory(Binding& bind, const M& traj) const {
    if (!config_.use_traj)
      throw ConfigError("this model has no trajectory stream");
    if (traj.cols() != kTrajectoryDims)
      throw ConfigError("trajectory must have 4 columns");
    auto& t = bind.tape();
    Var x = linear(bind, "traj.in", t.input(traj));
    return t.add_constant(
        x, sinusoidal_position_table(static_cast<int>(traj.rows()),
                                     config_.latent_dim)
               .template cast<Scalar>());
  }

  /// Assembles the full condition bundle, honoring drop flags.
  ConditionBundle<Scalar> build_conditions(Binding& bind,
                                           const std::vector<int>& text_tokens,
                                           const M* actor_features,
                                           const M* trajectory,
                                           DropFlags flags = {}) const {
    ConditionBundle<Scalar> bundle;
    bundle.dropped = flags;
    auto [tok, salient] = embed_text(bind, text_tokens, flags.text);
    bundle.text_tokens = tok;
    bundle.salient = salient;
    if (config_.use_actor) {
      if (flags.actor || actor_features == nullptr)
        bundle.actor_tokens = bind("null.actor");
      else
        bundle.actor_tokens = encode_actor(bind, *actor_features);
    }
    if (config_.use_traj) {
      if (flags.traj || trajectory == nullptr)
        bundle.traj_tokens = bind("null.traj");
      else
        bundle.traj_tokens = encode_trajectory(bind, *trajectory);
    }
    return bundle;
  }

  /// The fully nulled bundle used for the classifier-free guidance pass.
  ConditionBundle<Scalar> null_conditions(Binding& bind) const {
    return build_conditions(bind, {}, nullptr, nullptr, DropFlags::all());
  }

  // ---- Forward pass ---------------------------------------------------------

  /**
   * Denoises one sequence already on the tape.  x_t is T x input_dim; the
   * returned variable has the same shape and carries the model's output in
   * whatever parameterization the surrounding pipeline trains it for.
   */
  Var forward(Binding& bind, int t_step, Var x_t,
              const ConditionBundle<Scalar>& bundle) const {
    auto& t = bind.tape();
    if (t.value(x_t).cols() != config_.input_dim)
      throw ConfigError("denoiser input has wrong width");
    if (config_.use_traj != bundle.traj_tokens.has_value())
      throw ConfigError("bundle trajectory stream does not match the model");
    if (config_.use_actor != bundle.actor_tokens.has_value())
      throw ConfigError("bundle actor stream does not match the model");

    // Composite modulation feature: projected timestep + salient text.
    const Matd emb =
        sinusoidal_embedding(static_cast<double>(t_step), config_.latent_dim);
    Var comp = linear(bind, "time.l1", t.input(emb.template cast<Scalar>()));
    comp = linear(bind, "time.l2", t.gelu(comp));
    comp = t.add(comp, bundle.salient);

    Var x = linear(bind, "in", x_t);
    x = t.add_constant(
        x, sinusoidal_position_table(
               static_cast<int>(t.value(x_t).rows()), config_.latent_dim)
               .template cast<Scalar>());

    for (int b = 0; b < config_.blocks; ++b) {
      const std::string p = "b" + std::to_string(b);
      Var h = adaln(bind, p + ".sa", x, comp);
      x = t.add(x, attention(bind, p + ".sa", h, h, config_.heads));
      x = t.add(x, attention(bind, p + ".ct", adaln(bind, p + ".ct", x, comp),
                             bundle.text_tokens, config_.heads));
      if (config_.use_actor)
        x = t.add(x, attention(bind, p + ".ca", adaln(bind, p + ".ca", x, comp),
                               *bundle.actor_tokens, config_.heads));
      if (config_.use_traj)
        x = t.add(x, attention(bind, p + ".cg", adaln(bind, p + ".cg", x, comp),
                               *bundle.traj_tokens, config_.heads));
      const Var ff = t.gelu(linear(bind, p + ".ff.l1",
                                   adaln(bind, p + ".ff", x, comp)));
      x = t.add(x, linear(bind, p + ".ff.l2", ff));
    }
    return linear(bind, "out", t.layernorm_rows(x));
  }

  /// As above, but taking a plain matrix input.
  Var forward(Binding& bind, int t_step, const M& x_t,
              const ConditionBundle<Scalar>& bundle) const {
    return forward(bind, t_step, bind.tape().input(x_t), bundle);
  }

  /// Convenience eval-mode pass: fresh tape, returns plain values.
  M denoise(int t_step, const M& x_t, const std::vector<int>& text_tokens,
            const M* actor_features, const M* trajectory,
            bool conditioned = true) const {
    Tape<Scalar> tape;
    // params() is morally const here: binding only reads parameter values.
    Binding bind(tape, const_cast<ParamSet<Scalar>&>(params_));
    const auto bundle =
        conditioned ? build_conditions(bind, text_tokens, actor_features, trajectory)
                    : null_conditions(bind);
    return tape.value(forward(bind, t_step, x_t, bundle));
  }

  /// Closed-form parameter count implied by the configuration.
  std::int64_t expected_param_count() const {
    const std::int64_t d = config_.latent_dim;
    const std::int64_t f = config_.ff_mult * d;
    auto linear_count = [](std::int64_t in, std::int64_t out) {
      return in * out + out;
    };
    const std::int64_t attn = 4 * linear_count(d, d);
    const std::int64_t adaln_mod = linear_count(d, 2 * d);
    const std::int64_t ffn = linear_count(d, f) + linear_count(f, d);

    std::int64_t n = 0;
    n += linear_count(config_.input_dim, d);        // input projection
    n += 2 * linear_count(d, d);                    // timestep MLP
    n += linear_count(d, config_.input_dim);        // output head
    n += static_cast<std::int64_t>(config_.vocab_size) * d;  // text table
    n += d;                                         // null text token
    int sublayers = 3;                              // sa, ct, ff
    std::int64_t cross = attn;                      // text cross-attention
    if (config_.use_actor) {
      n += d;                                       // null actor token
      n += linear_count(config_.actor_dim, d);      // encoder input
      n += 2 * (attn + ffn);                        // two encoder blocks
      sublayers += 1;
      cross += attn;
    }
    if (config_.use_traj) {
      n += d;                                       // null trajectory token
      n += linear_count(kTrajectoryDims, d);        // trajectory projection
      sublayers += 1;
      cross += attn;
    }
    n += static_cast<std::int64_t>(config_.blocks) *
         (attn + cross + ffn + sublayers * adaln_mod);
    return n;
  }

 private:
  /// Pre-norm with learned, composite-feature-driven scale/shift.
  Var adaln(Binding& bind, const std::string& prefix, Var x, Var comp) const {
    auto& t = bind.tape();
    const Var mod = linear(bind, prefix + ".mod", comp);  // 1 x 2d, zero-init
    const Var scale = t.slice_cols(mod, 0, config_.latent_dim);
    const Var shift = t.slice_cols(mod, config_.latent_dim, config_.latent_dim);
    const Var normed = t.layernorm_rows(x);
    const Var scaled = t.add(
        normed, t.mul_row_broadcast(normed, scale));  // normed * (1 + scale)
    return t.add_row_broadcast(scaled, shift);
  }

  void declare_params() {
    const int d = config_.latent_dim;
    declare_linear(params_, "in", config_.input_dim, d, seed_);
    declare_linear(params_, "time.l1", d, d, seed_);
    declare_linear(params_, "time.l2", d, d, seed_);
    declare_linear(params_, "out", d, config_.input_dim, seed_, /*zero_init=*/true);

    auto& table = params_.add("text.table", config_.vocab_size, d);
    RandomStream trng(seed_, "init.text.table");
    init_normal(table, trng, 0.02);
    auto& null_text = params_.add("null.text", 1, d);
    RandomStream nrng(seed_, "init.null.text");
    init_normal(null_text, nrng, 0.02);

    if (config_.use_actor) {
      auto& null_actor = params_.add("null.actor", 1, d);
      RandomStream arng(seed_, "init.null.actor");
      init_normal(null_actor, arng, 0.02);
      declare_linear(params_, "enc.in", config_.actor_dim, d, seed_);
      for (int b = 0; b < 2; ++b) {
        const std::string p = "enc.b" + std::to_string(b);
        declare_attention(params_, p + ".sa", d, seed_);
        declare_linear(params_, p + ".ff.l1", d, config_.ff_mult * d, seed_);
        declare_linear(params_, p + ".ff.l2", config_.ff_mult * d, d, seed_,
                       /*zero_init=*/true);
      }
    }
    if (config_.use_traj) {
      auto& null_traj = params_.add("null.traj", 1, d);
      RandomStream grng(seed_, "init.null.traj");
      init_normal(null_traj, grng, 0.02);
      declare_linear(params_, "traj.in", kTrajectoryDims, d, seed_);
    }

    for (int b = 0; b < config_.blocks; ++b) {
      const std::string p = "b" + std::to_string(b);
      declare_attention(params_, p + ".sa", d, seed_);
      declare_linear(params_, p + ".sa.mod", d, 2 * d, seed_, /*zero_init=*/true);
      declare_attention(params_, p + ".ct", d, seed_);
      declare_linear(params_, p + ".ct.mod", d, 2 * d, seed_, /*zero_init=*/true);
      if (config_.use_actor) {
        declare_attention(params_, p + ".ca", d, seed_);
        declare_linear(params_, p + ".ca.mod", d, 2 * d, seed_, /*zero_init=*/true);
      }
      if (config_.use_traj) {
        declare_attention(params_, p + ".cg", d, seed_);
        declare_linear(params_, p + ".cg.mod", d, 2 * d, seed_, /*zero_init=*/true);
      }
      declare_linear(params_, p + ".ff.l1", d, config_.ff_mult * d, seed_);
      declare_linear(params_, p + ".ff.l2", config_.ff_mult * d, d, seed_,
                     /*zero_init=*/true);
      declare_linear(params_, p + ".ff.mod", d, 2 * d, seed_, /*zero_init=*/true);
    }
  }

  DenoiserConfig config_;
  std::uint64_t seed_;
  ParamSet<Scalar> params_;
};

// ---------------------------------------------------------------------------
// Named entry points for the two trained stages
// ---------------------------------------------------------------------------

/**
 * Trajectory-stage evaluation: predicts the noise component of a noisy T x 4
 * trajectory, conditioned on text and the actor's motion.
 */
template <typename Scalar>
Mat<Scalar> traj_denoise(const DenoiserModel<Scalar>& model, int t_step,
                         const Mat<Scalar>& g_t,
                         const std::vector<int>& text_tokens,
                         const Mat<Scalar>& actor_features,
                         bool conditioned = true) {
  if (model.config().input_dim != kTrajectoryDims || model.config().use_traj)
    throw ConfigError("traj_denoise expects a trajectory-stage model");
  return model.denoise(t_step, g_t, text_tokens, &actor_features, nullptr,
                       conditioned);
}

/**
 * Full-body-stage evaluation: predicts the clean T x 263 motion from its
 * noisy version, conditioned on text, the actor's motion and the reactor
 * trajectory produced by the first stage.
 */
template <typename Scalar>
Mat<Scalar> full_denoise(const DenoiserModel<Scalar>& model, int t_step,
                         const Mat<Scalar>& x_t,
                         const std::vector<int>& text_tokens,
                         const Mat<Scalar>& actor_features,
                         const Mat<Scalar>& trajectory,
                         bool conditioned = true) {
  if (model.config().input_dim != kFeatureDim || !model.config().use_traj)
    throw ConfigError("full_denoise expects a full-body-stage model");
  return model.denoise(t_step, x_t, text_tokens, &actor_features, &trajectory,
                       conditioned);
}

/// Applies condition dropout to an already-built bundle (the dropped streams
/// are replaced by the model's learned null tokens).
template <typename Scalar>
ConditionBundle<Scalar> condition_dropout(const ConditionBundle<Scalar>& bundle,
                                          const DropoutRates& rates,
                                          RandomStream& rng,
                                          const DenoiserModel<Scalar>& model,
                                          TapeBinding<Scalar>& bind) {
  const DropFlags flags = sample_condition_dropout(rates, rng);
  ConditionBundle<Scalar> out = bundle;
  if (flags.text) {
    out.text_tokens = bind("null.text");
    out.salient = out.text_tokens;
    out.dropped.text = true;
  }
  if (flags.actor && model.config().use_actor) {
    out.actor_tokens = bind("null.actor");
    out.dropped.actor = true;
  }
  if (flags.traj && model.config().use_traj) {
    out.traj_tokens = bind("null.traj");
    out.dropped.traj = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model checkpoints
// ---------------------------------------------------------------------------

/// Serializes a model plus run metadata (normalization stats, step counts,
/// optimizer/EMA state) into the container format from nn.hpp.
inline void save_denoiser_checkpoint(
    const std::filesystem::path& path, const DenoiserModel<float>& model,
    nlohmann::json extra,
    const std::vector<std::pair<std::string, Matf>>& optimizer_arrays = {},
    const std::map<std::string, Matf>& ema_shadow = {}) {
  nlohmann::json config = std::move(extra);
  config["denoiser"] = model.config().to_json();
  std::vector<std::pair<std::string, Matf>> arrays;
  for (const auto& [name, value] : model.params())
    arrays.emplace_back(name, value);
  for (const auto& [name, value] : optimizer_arrays) arrays.emplace_back(name, value);
  for (const auto& [name, value] : ema_shadow)
    arrays.emplace_back("ema." + name, value);
  save_checkpoint(path, config, arrays);
}

struct LoadedDenoiser {
  DenoiserModel<float> model;
  nlohmann::json config;                  ///< full config JSON (with metadata)
  std::map<std::string, Matf> optimizer;  ///< "opt.*" arrays
  std::map<std::string, Matf> ema;        ///< shadow values (prefix stripped)
};

/// Loads a model checkpoint; prefer_ema swaps in EMA weights when present.
inline LoadedDenoiser load_denoiser_checkpoint(const std::filesystem::path& path,
                                               bool prefer_ema = false) {
  CheckpointData data = load_checkpoint(path);
  if (!data.config.contains("denoiser"))
    throw IoError("checkpoint has no denoiser config: " + path.string());
  const DenoiserConfig config = DenoiserConfig::from_json(data.config["denoiser"]);

  std::map<std::string, Matf> weights, opt, ema;
  for (auto& [name, m] : data.arrays) {
    if (name.rfind("opt.", 0) == 0)
      opt.emplace(name, std::move(m));
    else if (name.rfind("ema.", 0) == 0)
      ema.emplace(name.substr(4), std::move(m));
    else
      weights.emplace(name, std::move(m));
  }
  if (prefer_ema && !ema.empty())
    for (auto& [name, m] : ema) weights[name] = m;

  return LoadedDenoiser{DenoiserModel<float>(config, weights),
                        std::move(data.config), std::move(opt), std::move(ema)};
}

}  // namespace moreact
