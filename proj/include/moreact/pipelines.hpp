/**
 * @file pipelines.hpp
 * @brief Training and inference pipelines: feature normalization, the
 *        denoiser training loops (trajectory stage, full-body stage, the
 *        single-stage ablation and the joint-pair baseline) and the seeded
 *        generators that combine them — two-stage generation with trajectory
 *        inpainting, direct single-stage generation, and actor-infilling on
 *        a joint two-person model.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moreact/common.hpp"
#include "moreact/denoisers.hpp"
#include "moreact/diffusion.hpp"
#include "moreact/kinematics.hpp"
#include "moreact/losses.hpp"
#include "moreact/motion_io.hpp"
#include "moreact/nn.hpp"
#include "moreact/synthdata.hpp"

namespace moreact {

// ---------------------------------------------------------------------------
// Feature normalization
// ---------------------------------------------------------------------------

/// Width of the joint two-person representation: reactor and actor feature
/// rows side by side, reactor first.
inline constexpr int kPairDims = 2 * kFeatureDim;

/// Per-dimension mask selecting the actor half of the joint representation.
inline Vecd pair_actor_mask() {
  Vecd m = Vecd::Zero(kPairDims);
  for (int d = kFeatureDim; d < kPairDims; ++d) m[d] = 1.0;
  return m;
}

/// Per-dimension z-score statistics of the canonicalized feature matrices.
/// Models train and sample in normalized units; everything that leaves a
/// pipeline is mapped back through these.
struct FeatureStats {
  Vecd mean;
  Vecd stddev;

  int dims() const { return static_cast<int>(mean.size()); }

  void validate() const {
    if (mean.size() == 0 || mean.size() != stddev.size())
      throw ConfigError("feature stats: mean/stddev size mismatch");
    if (!all_finite(mean) || !all_finite(stddev))
      throw ConfigError("feature stats contain non-finite values");
    for (Eigen::Index d = 0; d < stddev.size(); ++d)
      if (!(stddev[d] > 0.0))
        throw ConfigError("feature stats need positive stddev");
  }

  /**
   * The leading n dimensions.  The trajectory model shares the full model's
   * statistics through this slice, which is what makes the de-normalization
   * arithmetic of the two stages identical on the trajectory dims.
   */
  FeatureStats head(int n) const {
    if (n < 1 || n > dims()) throw ConfigError("stats slice out of range");
    return FeatureStats{mean.head(n), stddev.head(n)};
  }

  bool operator==(const FeatureStats& o) const {
    return mean.size() == o.mean.size() &&
           (mean.array() == o.mean.array()).all() &&
           (stddev.array() == o.stddev.array()).all();
  }

  nlohmann::json to_json() const {
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"stddev",
             std::vector<double>(stddev.data(), stddev.data() + stddev.size())}};
  }

  static FeatureStats from_json(const nlohmann::json& j) {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto s = j.at("stddev").get<std::vector<double>>();
    FeatureStats out;
    out.mean = Eigen::Map<const Vecd>(m.data(), static_cast<Eigen::Index>(m.size()));
    out.stddev = Eigen::Map<const Vecd>(s.data(), static_cast<Eigen::Index>(s.size()));
    out.validate();
    return out;
  }
};

/// Accumulates per-dimension first and second moments across feature blocks.
class StatsAccumulator {
 public:
  void add(const Matd& features) {
    if (count_ == 0) {
      sum_ = Vecd::Zero(features.cols());
      sumsq_ = Vecd::Zero(features.cols());
    } else if (features.cols() != sum_.size()) {
      throw ConfigError("stats blocks disagree on feature width");
    }
    sum_ += features.colwise().sum().transpose();
    sumsq_ += features.array().square().colwise().sum().matrix().transpose();
    count_ += features.rows();
  }

  /// Population statistics; stddev is floored so constant dimensions stay
  /// invertible (their normalized values are simply pinned near zero).
  FeatureStats finish(double std_floor = 1e-4) const {
    if (count_ == 0) throw ConfigError("no feature rows accumulated");
    FeatureStats s;
    s.mean = sum_ / static_cast<double>(count_);
    s.stddev.resize(sum_.size());
    for (Eigen::Index d = 0; d < sum_.size(); ++d) {
      const double var =
          sumsq_[d] / static_cast<double>(count_) - s.mean[d] * s.mean[d];
      s.stddev[d] = std::max(std::sqrt(std::max(var, 0.0)), std_floor);
    }
    s.validate();
    return s;
  }

 private:
  std::int64_t count_ = 0;
  Vecd sum_;
  Vecd sumsq_;
};

/// Statistics over a dataset: every pair is canonicalized and both agents'
/// feature rows are pooled, so one set of numbers serves the reactor, the
/// actor-conditioning stream and both halves of the joint representation.
inline FeatureStats compute_feature_stats(
    const std::vector<InteractionSample>& dataset, double std_floor = 1e-4) {
  if (dataset.empty())
    throw ConfigError("cannot compute feature stats on an empty dataset");
  StatsAccumulator acc;
  for (const auto& s : dataset) {
    const CanonicalPair pair = canonicalize_pair(s.actor, s.reactor);
    acc.add(pair.actor.features);
    acc.add(pair.reactor.features);
  }
  return acc.finish(std_floor);
}

/// (features - mean) / stddev, column by column.
template <typename Scalar>
Mat<Scalar> normalize_features(const Matd& features, const FeatureStats& stats) {
  stats.validate();
  if (features.cols() != stats.dims())
    throw ConfigError("normalize_features: width does not match the stats");
  Mat<Scalar> out(features.rows(), features.cols());
  for (Eigen::Index d = 0; d < features.cols(); ++d)
    out.col(d) = ((features.col(d).array() - stats.mean[d]) / stats.stddev[d])
                     .matrix()
                     .template cast<Scalar>();
  return out;
}

/**
 * Inverse of normalize_features.  Column d depends on column d alone, so
 * applying this to a leading slice (with the matching stats slice) is
 * bit-identical to slicing after the full-width call; the exactness of the
 * two-stage trajectory projection rests on that.
 */
template <typename Scalar>
Matd denormalize_features(const Mat<Scalar>& x, const FeatureStats& stats) {
  stats.validate();
  if (x.cols() != stats.dims())
    throw ConfigError("denormalize_features: width does not match the stats");
  Matd out(x.rows(), x.cols());
  for (Eigen::Index d = 0; d < x.cols(); ++d)
    out.col(d) = (x.col(d).template cast<double>().array() * stats.stddev[d] +
                  stats.mean[d])
                     .matrix();
  return out;
}

/// Applies a ground-plane transform to a bare T x 4 trajectory block with the
/// same arithmetic RigidTransform2D::apply_to_motion uses for those dims.
inline Matd transform_trajectory(const RigidTransform2D& tf, const Matd& traj) {
  if (traj.cols() != kTrajectoryDims)
    throw ConfigError("transform_trajectory: expected 4 columns");
  Matd out = traj;
  const Mat3 r = rot_y(tf.yaw);
  for (Eigen::Index t = 0; t < traj.rows(); ++t) {
    out(t, 0) += tf.yaw;
    const Vec3 p =
        r * Vec3(traj(t, 1), traj(t, 2), traj(t, 3)) + tf.translation;
    out.block<1, 3>(t, 1) = p.transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset preparation
// ---------------------------------------------------------------------------

/// Row-slices both agents of a sample to frames [start, start + frames).
inline InteractionSample crop_sample(const InteractionSample& s, int start,
                                     int frames) {
  const int total = s.reactor.frames();
  if (s.actor.frames() != total)
    throw InvalidMotionError("crop_sample: pair lengths differ");
  if (frames < 2)
    throw MotionTooShortError("crop must keep at least two frames");
  if (start < 0 || start + frames > total)
    throw ConfigError("crop window out of range");
  InteractionSample out = s;
  out.actor.features = Matd(s.actor.features.middleRows(start, frames));
  out.reactor.features = Matd(s.reactor.features.middleRows(start, frames));
  return out;
}

/// A canonicalized (optionally cropped) training example with hashed text.
struct PreparedSample {
  MotionSequence actor;    ///< canonical frame
  MotionSequence reactor;  ///< canonical frame
  std::vector<int> tokens;
};

/**
 * Crops a sample and re-canonicalizes at the crop's first actor frame, so
 * every training window looks exactly like an inference request: the actor
 * starting at the origin facing +z.
 */
inline PreparedSample prepare_sample(const InteractionSample& s, int crop_start,
                                     int frames) {
  const InteractionSample crop = crop_sample(s, crop_start, frames);
  const CanonicalPair pair = canonicalize_pair(crop.actor, crop.reactor);
  return PreparedSample{pair.actor, pair.reactor, tokenize(s.text)};
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

/// Which denoiser a training run produces.
enum class TrainStage { kTrajectory, kFullBody, kSingleStage, kPairJoint };

inline std::string train_stage_to_string(TrainStage s) {
  switch (s) {
    case TrainStage::kTrajectory: return "trajectory";
    case TrainStage::kFullBody: return "fullbody";
    case TrainStage::kSingleStage: return "single";
    case TrainStage::kPairJoint: return "pair";
  }
  throw ConfigError("unknown training stage");
}

inline TrainStage train_stage_from_string(const std::string& s) {
  if (s == "trajectory") return TrainStage::kTrajectory;
  if (s == "fullbody") return TrainStage::kFullBody;
  if (s == "single") return TrainStage::kSingleStage;
  if (s == "pair") return TrainStage::kPairJoint;
  throw ConfigError("unknown training stage: " + s);
}

struct TrainConfig {
  // Optimization.
  double lr = 1e-4;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  ///< global gradient clip; 0 disables
  int batch_size = 16;     ///< desk default (reference setting: 32)
  int epochs = 200;        ///< desk default for the trajectory stage; use 300 for full body
  std::uint64_t seed = 0;

  /// Fixed-length bucketing: clips longer than this many frames are randomly
  /// cropped to exactly `window` each epoch; shorter clips are used whole.
  int window = 60;

  // Diffusion.
  int schedule_steps = 1000;
  ScheduleKind schedule = ScheduleKind::kCosine;
  /// Output parameterization of the trajectory stage.  The full-body stages
  /// always predict the clean signal.
  Parameterization traj_parameterization = Parameterization::kEps;

  // Conditioning.
  DropoutRates dropout;

  // Model shape.
  int blocks = 4;
  int latent_dim = 128;
  int heads = 8;

  // Objective (full-body stages).
  LossWeights loss_weights;

  // Weight averaging.
  bool use_ema = true;
  double ema_decay = 0.999;

  // Run management.
  std::filesystem::path out_dir = "runs";
  int checkpoint_every = 0;  ///< epochs between periodic checkpoints; 0 = final only
  std::filesystem::path resume_from;  ///< optional checkpoint to continue from

  void validate() const {
    if (!(lr > 0.0) || weight_decay < 0.0 || clip_norm < 0.0)
      throw ConfigError("bad optimizer settings");
    if (batch_size < 1 || epochs < 1)
      throw ConfigError("batch size and epochs must be positive");
    if (window < 2) throw ConfigError("window must cover at least two frames");
    if (schedule_steps < 2) throw ConfigError("schedule needs at least 2 steps");
    if (blocks < 1 || latent_dim < 1 || heads < 1)
      throw ConfigError("bad model shape");
    if (checkpoint_every < 0)
      throw ConfigError("checkpoint cadence must be nonnegative");
    if (use_ema && !(ema_decay > 0.0 && ema_decay < 1.0))
      throw ConfigError("ema decay must lie in (0, 1)");
    dropout.validate();
    loss_weights.validate(schedule_steps);
  }

  nlohmann::json to_json() const {
    return {{"lr", lr},
            {"weight_decay", weight_decay},
            {"clip_norm", clip_norm},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"seed", seed},
            {"window", window},
            {"schedule",
             {{"kind", schedule_kind_to_string(schedule)}, {"steps", schedule_steps}}},
            {"traj_parameterization",
             parameterization_to_string(traj_parameterization)},
            {"dropout",
             {{"text", dropout.text}, {"actor", dropout.actor}, {"traj", dropout.traj}}},
            {"blocks", blocks},
            {"latent_dim", latent_dim},
            {"heads", heads},
            {"loss_weights", loss_weights.to_json()},
            {"use_ema", use_ema},
            {"ema_decay", ema_decay},
            {"out_dir", out_dir.string()},
            {"checkpoint_every", checkpoint_every},
            {"resume_from", resume_from.string()}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.window = j.value("window", c.window);
    if (j.contains("schedule")) {
      c.schedule = schedule_kind_from_string(
          j.at("schedule").value("kind", schedule_kind_to_string(c.schedule)));
      c.schedule_steps = j.at("schedule").value("steps", c.schedule_steps);
    }
    c.traj_parameterization = parameterization_from_string(j.value(
        "traj_parameterization", parameterization_to_string(c.traj_parameterization)));
    if (j.contains("dropout")) {
      c.dropout.text = j.at("dropout").value("text", c.dropout.text);
      c.dropout.actor = j.at("dropout").value("actor", c.dropout.actor);
      c.dropout.traj = j.at("dropout").value("traj", c.dropout.traj);
    }
    c.blocks = j.value("blocks", c.blocks);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.heads = j.value("heads", c.heads);
    if (j.contains("loss_weights"))
      c.loss_weights = LossWeights::from_json(j.at("loss_weights"));
    c.use_ema = j.value("use_ema", c.use_ema);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.out_dir = j.value("out_dir", c.out_dir.string());
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.resume_from = j.value("resume_from", c.resume_from.string());
    c.validate();
    return c;
  }
};

/// Summary of one training run.
struct TrainResult {
  std::filesystem::path checkpoint;     ///< final checkpoint
  std::filesystem::path metrics;        ///< JSON-lines metrics file
  std::vector<double> epoch_loss;       ///< mean total loss per epoch
  std::vector<nlohmann::json> records;  ///< one entry per optimizer step
  double final_eval_loss = 0.0;  ///< deterministic scoring pass on the final weights
  int steps = 0;                 ///< optimizer steps taken (across resumes)
};

// ---------------------------------------------------------------------------
// Checkpoint metadata
// ---------------------------------------------------------------------------

/// A denoiser checkpoint plus everything a pipeline needs to drive it.
struct LoadedStage {
  DenoiserModel<float> model;
  TrainStage stage;
  Parameterization param;
  FeatureStats stats;
  ScheduleKind schedule_kind;
  int schedule_steps;
  LossWeights weights;
  int epoch = 0;
  int step = 0;
  std::map<std::string, Matf> optimizer;
  std::map<std::string, Matf> ema;
};

/// Loads a stage checkpoint; prefer_ema swaps in the averaged weights.
inline LoadedStage load_stage_checkpoint(const std::filesystem::path& path,
                                         bool prefer_ema = false) {
  LoadedDenoiser raw = load_denoiser_checkpoint(path, prefer_ema);
  const nlohmann::json& j = raw.config;
  if (!j.contains("stage"))
    throw IoError("checkpoint carries no stage tag: " + path.string());
  return LoadedStage{
      std::move(raw.model),
      train_stage_from_string(j.at("stage").get<std::string>()),
      parameterization_from_string(j.at("parameterization").get<std::string>()),
      FeatureStats::from_json(j.at("stats")),
      schedule_kind_from_string(j.at("schedule").at("kind").get<std::string>()),
      j.at("schedule").at("steps").get<int>(),
      LossWeights::from_json(j.at("loss_weights")),
      j.at("progress").at("epoch").get<int>(),
      j.at("progress").at("step").get<int>(),
      std::move(raw.optimizer),
      std::move(raw.ema)};
}

inline void require_stage(const LoadedStage& loaded, TrainStage expected) {
  if (loaded.stage != expected)
    throw ConfigError("checkpoint stage mismatch: expected " +
                      train_stage_to_string(expected) + ", found " +
                      train_stage_to_string(loaded.stage));
}

// ---------------------------------------------------------------------------
// Training internals
// ---------------------------------------------------------------------------

namespace detail {

inline ModelKind stage_model_kind(TrainStage s) {
  switch (s) {
    case TrainStage::kTrajectory: return ModelKind::kTrajectory;
    case TrainStage::kFullBody: return ModelKind::kFullBody;
    case TrainStage::kSingleStage: return ModelKind::kSingleStage;
    case TrainStage::kPairJoint: return ModelKind::kPairJoint;
  }
  throw ConfigError("unknown training stage");
}

inline Parameterization stage_parameterization(TrainStage s,
                                               const TrainConfig& c) {
  return s == TrainStage::kTrajectory ? c.traj_parameterization
                                      : Parameterization::kX0;
}

/// One example pushed through the model with its objective on the tape.
struct StageLoss {
  Tape<float>::Var total{};
  LossComponents components;  ///< plain values for logging (zero when inactive)
  double value = 0.0;
};

/**
 * Builds the stage objective for one prepared sample.  The trajectory stage
 * noises the 4-d trajectory block and regresses the target of its
 * parameterization; the full-body stages noise all 263 dims, predict the
 * clean signal and add the gated kinematic/interaction terms on globally
 * decoded joint positions; the pair baseline noises both agents side by side
 * and trains on reconstruction alone.  Gated groups are omitted from the
 * tape entirely when the timestep sits above the threshold or their weight
 * is zero, so their gradient contribution is exactly zero.
 */
inline StageLoss build_stage_loss(TrainStage stage, Tape<float>& tape,
                                  TapeBinding<float>& bind,
                                  const DenoiserModel<float>& model,
                                  const PreparedSample& ps,
                                  const FeatureStats& stats,
                                  const DiffusionSchedule& sched,
                                  Parameterization param,
                                  const LossWeights& weights, int t,
                                  RandomStream& noise_rng, DropFlags flags) {
  const int frames = ps.reactor.frames();
  const Matf r_norm = normalize_features<float>(ps.reactor.features, stats);
  const Matf a_norm = normalize_features<float>(ps.actor.features, stats);
  const Matf gt_traj = r_norm.leftCols(kTrajectoryDims);

  Matf x0;
  switch (stage) {
    case TrainStage::kTrajectory:
      x0 = gt_traj;
      break;
    case TrainStage::kFullBody:
    case TrainStage::kSingleStage:
      x0 = r_norm;
      break;
    case TrainStage::kPairJoint:
      x0.resize(frames, kPairDims);
      x0 << r_norm, a_norm;
      break;
  }

  const Matf noise =
      noise_rng.normal_matrix<float>(frames, static_cast<int>(x0.cols()));
  const Matf x_t = q_sample(x0, t, noise, sched);

  const Matf* actor_ptr = model.config().use_actor ? &a_norm : nullptr;
  const Matf* traj_ptr = model.config().use_traj ? &gt_traj : nullptr;
  const auto bundle =
      model.build_conditions(bind, ps.tokens, actor_ptr, traj_ptr, flags);
  const auto pred = model.forward(bind, t, x_t, bundle);

  const Matf& target = param == Parameterization::kEps ? noise : x0;
  const auto recon = mse_to_target(tape, pred, target);

  StageLoss out;
  out.components.recon = static_cast<double>(tape.value(recon)(0, 0));

  const bool fullbody_losses =
      stage == TrainStage::kFullBody || stage == TrainStage::kSingleStage;
  std::optional<KinematicLossNodes<float>> kin;
  std::optional<InteractionLossNodes<float>> inter;
  if (fullbody_losses && t <= weights.gate_threshold &&
      (weights.lambda_kin > 0.0 || weights.lambda_inter > 0.0)) {
    // De-normalize the prediction on the tape and decode global joint
    // positions; the auxiliary terms act in real units.
    Matf scale(frames, kFeatureDim), shift(frames, kFeatureDim);
    for (int d = 0; d < kFeatureDim; ++d) {
      scale.col(d).setConstant(static_cast<float>(stats.stddev[d]));
      shift.col(d).setConstant(static_cast<float>(stats.mean[d]));
    }
    const auto x_real =
        tape.add_constant(tape.mul_constant(pred, scale), shift);
    const auto gen_pos = tape.decoded_positions(x_real);
    const auto gen_yaw = tape.slice_cols(x_real, kYawDim, 1);

    const Matf gt_pos = decode(ps.reactor).cast<float>();
    const Matf gt_yaw = ps.reactor.features.col(kYawDim).cast<float>();
    const double fps = ps.reactor.fps;
    const auto& feet = smpl22().foot_joints;

    if (weights.lambda_kin > 0.0) {
      const Matf contacts = foot_contact_mask<float>(
          tape.value(gen_pos), feet, fps, weights.gamma_v, weights.gamma_h);
      kin = kinematic_loss_nodes<float>(tape, gen_pos, gen_yaw, gt_pos, gt_yaw,
                                        contacts, feet, weights, fps);
    }
    if (weights.lambda_inter > 0.0) {
      const Matf actor_pos = decode(ps.actor).cast<float>();
      const auto gt_graph = interaction_graph<float>(gt_pos, actor_pos);
      inter = interaction_loss_nodes<float>(tape, gen_pos, actor_pos, gt_graph,
                                            weights.contact_radius,
                                            weights.distance_floor);
    }
  }

  if (stage == TrainStage::kTrajectory) {
    // The trajectory objective is the plain denoising MSE.
    out.total = recon;
  } else {
    out.total = total_full_loss_node<float>(tape, t, weights, recon, kin, inter);
  }

  if (kin) {
    out.components.foot = static_cast<double>(tape.value(kin->foot)(0, 0));
    out.components.vel = static_cast<double>(tape.value(kin->vel)(0, 0));
    out.components.rot = static_cast<double>(tape.value(kin->rot)(0, 0));
    out.components.traj_pos =
        static_cast<double>(tape.value(kin->traj_pos)(0, 0));
  }
  if (inter) {
    out.components.inter_pos =
        static_cast<double>(tape.value(inter->position)(0, 0));
    out.components.inter_vel =
        static_cast<double>(tape.value(inter->velocity)(0, 0));
  }
  out.value = static_cast<double>(tape.value(out.total)(0, 0));
  return out;
}

/// Deterministic scoring pass: full clips, no dropout, one seeded timestep
/// and noise draw per sample.
inline double evaluate_model_loss(const DenoiserModel<float>& model,
                                  TrainStage stage, const FeatureStats& stats,
                                  const DiffusionSchedule& sched,
                                  Parameterization param,
                                  const LossWeights& weights,
                                  const std::vector<InteractionSample>& dataset,
                                  std::uint64_t seed) {
  if (dataset.empty()) throw ConfigError("evaluation needs at least one sample");
  double total = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    RandomStream t_rng(seed, "pipeline.eval.t", i);
    RandomStream noise_rng(seed, "pipeline.eval.noise", i);
    const InteractionSample& s = dataset[i];
    const PreparedSample ps = prepare_sample(s, 0, s.reactor.frames());
    const int t = t_rng.uniform_int(sched.steps());
    Tape<float> tape;
    // Binding only reads parameter values; the pass never mutates them.
    TapeBinding<float> bind(tape, const_cast<ParamSet<float>&>(model.params()));
    const StageLoss sl = build_stage_loss(stage, tape, bind, model, ps, stats,
                                          sched, param, weights, t, noise_rng,
                                          DropFlags{});
    total += sl.value;
  }
  return total / static_cast<double>(dataset.size());
}

/**
 * The shared training engine.  Gradient accumulation over `batch_size`
 * samples stands in for minibatching: each sample runs its own tape and the
 * averaged gradients feed one optimizer step, so determinism is exact on a
 * single thread.  All randomness comes from per-epoch named streams, which
 * makes a resumed run consume exactly what the uninterrupted run would have.
 */
inline TrainResult train_denoiser(TrainStage stage,
                                  const std::vector<InteractionSample>& dataset,
                                  const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw ConfigError("training needs at least one sample");
  const std::string name = train_stage_to_string(stage);
  const Parameterization param = stage_parameterization(stage, config);
  const DiffusionSchedule sched =
      make_schedule(config.schedule, config.schedule_steps);
  const DenoiserConfig shape = preset_config(
      stage_model_kind(stage), config.blocks, config.latent_dim, config.heads);

  AdamW<float> opt(AdamWConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay,
                               config.clip_norm});
  Ema<float> ema(config.ema_decay);
  std::optional<DenoiserModel<float>> model;
  FeatureStats stats;
  int start_epoch = 0;
  int global_step = 0;

  if (!config.resume_from.empty()) {
    LoadedStage prev = load_stage_checkpoint(config.resume_from, false);
    require_stage(prev, stage);
    if (prev.model.config().to_json() != shape.to_json())
      throw ConfigError("resume checkpoint disagrees with the configured model shape");
    model.emplace(std::move(prev.model));
    opt.restore(prev.optimizer);
    if (!prev.ema.empty()) ema.restore(prev.ema);
    stats = std::move(prev.stats);
    start_epoch = prev.epoch;
    global_step = prev.step;
    if (start_epoch >= config.epochs)
      throw ConfigError("resume checkpoint already reached the epoch budget");
  } else {
    model.emplace(shape, config.seed);
    stats = compute_feature_stats(dataset);
  }

  std::filesystem::create_directories(config.out_dir);
  const std::filesystem::path ckpt_path = config.out_dir / (name + ".ckpt");
  const std::filesystem::path metrics_path =
      config.out_dir / (name + "_metrics.jsonl");
  std::ofstream metrics(metrics_path, config.resume_from.empty()
                                          ? std::ios::trunc
                                          : std::ios::app);
  if (!metrics)
    throw IoError("cannot open metrics file: " + metrics_path.string());

  TrainResult result;
  result.checkpoint = ckpt_path;
  result.metrics = metrics_path;

  const auto save = [&](const std::filesystem::path& p, int epochs_done) {
    nlohmann::json extra{
        {"stage", name},
        {"parameterization", parameterization_to_string(param)},
        {"schedule",
         {{"kind", schedule_kind_to_string(config.schedule)},
          {"steps", config.schedule_steps}}},
        {"stats", stats.to_json()},
        {"loss_weights", config.loss_weights.to_json()},
        {"progress", {{"epoch", epochs_done}, {"step", global_step}}},
        {"train_config", config.to_json()}};
    std::map<std::string, Matf> shadow;
    if (config.use_ema) shadow = ema.shadow();
    save_denoiser_checkpoint(p, *model, std::move(extra), opt.serialize(), shadow);
  };

  const int n = static_cast<int>(dataset.size());
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    RandomStream shuffle_rng(config.seed, "pipeline." + name + ".shuffle", epoch);
    RandomStream crop_rng(config.seed, "pipeline." + name + ".crop", epoch);
    RandomStream t_rng(config.seed, "pipeline." + name + ".t", epoch);
    RandomStream noise_rng(config.seed, "pipeline." + name + ".noise", epoch);
    RandomStream drop_rng(config.seed, "pipeline." + name + ".drop", epoch);

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[shuffle_rng.uniform_int(i + 1)]);

    double epoch_sum = 0.0;
    int epoch_batches = 0;
    for (int begin = 0; begin < n; begin += config.batch_size) {
      const int count = std::min(config.batch_size, n - begin);
      const float inv = 1.0f / static_cast<float>(count);
      const double invd = 1.0 / static_cast<double>(count);
      std::map<std::string, Matf> acc;
      double mean_loss = 0.0;
      LossComponents mean_comp;

      for (int k = 0; k < count; ++k) {
        const InteractionSample& s =
            dataset[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + k)])];
        const int total_frames = s.reactor.frames();
        const int len = std::min(config.window, total_frames);
        const int crop_start =
            total_frames > len ? crop_rng.uniform_int(total_frames - len + 1) : 0;
        const PreparedSample ps = prepare_sample(s, crop_start, len);
        const int t = t_rng.uniform_int(config.schedule_steps);
        const DropFlags flags = sample_condition_dropout(config.dropout, drop_rng);

        Tape<float> tape;
        TapeBinding<float> bind(tape, model->params());
        StageLoss sl;
        try {
          // The tape rejects any non-finite value, so a diverged model (or a
          // diverged update from the previous step) surfaces right here.
          sl = build_stage_loss(stage, tape, bind, *model, ps, stats, sched,
                                param, config.loss_weights, t, noise_rng, flags);
        } catch (const SamplingDivergedError& e) {
          throw TrainingFailedError(
              "training diverged (stage " + name + ", epoch " +
              std::to_string(epoch) + ", step " + std::to_string(global_step + 1) +
              ", t=" + std::to_string(t) + "): " + e.what());
        }
        tape.backward(sl.total);
        for (auto& [pname, g] : bind.grads()) {
          const auto it = acc.find(pname);
          if (it == acc.end())
            acc.emplace(pname, Matf(g * inv));
          else
            it->second += g * inv;
        }
        mean_loss += sl.value * invd;
        mean_comp.recon += sl.components.recon * invd;
        mean_comp.foot += sl.components.foot * invd;
        mean_comp.vel += sl.components.vel * invd;
        mean_comp.rot += sl.components.rot * invd;
        mean_comp.traj_pos += sl.components.traj_pos * invd;
        mean_comp.inter_pos += sl.components.inter_pos * invd;
        mean_comp.inter_vel += sl.components.inter_vel * invd;
      }

      double norm_sq = 0.0;
      for (const auto& [pname, g] : acc)
        norm_sq += g.cast<double>().squaredNorm();
      opt.step(model->params(), acc);
      if (config.use_ema) ema.update(model->params());
      ++global_step;

      nlohmann::json rec{{"step", global_step},
                         {"epoch", epoch},
                         {"loss", mean_loss},
                         {"grad_norm", std::sqrt(norm_sq)}};
      if (stage != TrainStage::kTrajectory) {
        rec["recon"] = mean_comp.recon;
        rec["foot"] = mean_comp.foot;
        rec["vel"] = mean_comp.vel;
        rec["rot"] = mean_comp.rot;
        rec["traj_pos"] = mean_comp.traj_pos;
        rec["inter_pos"] = mean_comp.inter_pos;
        rec["inter_vel"] = mean_comp.inter_vel;
      }
      metrics << rec.dump() << "\n";
      result.records.push_back(std::move(rec));
      epoch_sum += mean_loss;
      ++epoch_batches;
    }
    result.epoch_loss.push_back(epoch_sum / epoch_batches);

    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 &&
        epoch + 1 < config.epochs)
      save(config.out_dir / (name + "_epoch" + std::to_string(epoch + 1) + ".ckpt"),
           epoch + 1);
  }
  metrics.flush();

  save(ckpt_path, config.epochs);
  result.steps = global_step;
  result.final_eval_loss =
      evaluate_model_loss(*model, stage, stats, sched, param,
                          config.loss_weights, dataset, config.seed);
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training entry points
// ---------------------------------------------------------------------------

/// Trains the 4-d trajectory denoiser (noise prediction by default) with
/// text and actor condition dropout.
inline TrainResult train_trajectory(const std::vector<InteractionSample>& dataset,
                                    const TrainConfig& config) {
  return detail::train_denoiser(TrainStage::kTrajectory, dataset, config);
}

/// Trains the full-body denoiser: clean-signal prediction over all 263 dims,
/// triple independent condition dropout (text, actor, ground-truth
/// trajectory) and the threshold-gated kinematic/interaction terms.
inline TrainResult train_fullbody(const std::vector<InteractionSample>& dataset,
                                  const TrainConfig& config) {
  return detail::train_denoiser(TrainStage::kFullBody, dataset, config);
}

/// Ablation twin of train_fullbody without the trajectory condition stream.
inline TrainResult train_single_stage(
    const std::vector<InteractionSample>& dataset, const TrainConfig& config) {
  return detail::train_denoiser(TrainStage::kSingleStage, dataset, config);
}

/// Trains the joint two-person generator behind the actor-infilling
/// baseline: both agents' features side by side, text conditioning only,
/// reconstruction objective.
inline TrainResult train_pair(const std::vector<InteractionSample>& dataset,
                              const TrainConfig& config) {
  return detail::train_denoiser(TrainStage::kPairJoint, dataset, config);
}

/// Deterministic evaluation loss of a saved checkpoint on a dataset; the same
/// seed always scores the same checkpoint to the same value.
inline double evaluate_checkpoint_loss(const std::filesystem::path& checkpoint,
                                       const std::vector<InteractionSample>& dataset,
                                       std::uint64_t seed = 0,
                                       bool use_ema = false) {
  const LoadedStage ls = load_stage_checkpoint(checkpoint, use_ema);
  const DiffusionSchedule sched = make_schedule(ls.schedule_kind, ls.schedule_steps);
  return detail::evaluate_model_loss(ls.model, ls.stage, ls.stats, sched,
                                     ls.param, ls.weights, dataset, seed);
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

enum class GenerationMode { kTwoStage, kSingleStage, kActorInfill };

inline std::string generation_mode_to_string(GenerationMode m) {
  switch (m) {
    case GenerationMode::kTwoStage: return "two_stage";
    case GenerationMode::kSingleStage: return "single_stage";
    case GenerationMode::kActorInfill: return "actor_infill_baseline";
  }
  throw ConfigError("unknown generation mode");
}

inline GenerationMode generation_mode_from_string(const std::string& s) {
  if (s == "two_stage") return GenerationMode::kTwoStage;
  if (s == "single_stage") return GenerationMode::kSingleStage;
  if (s == "actor_infill_baseline") return GenerationMode::kActorInfill;
  throw ConfigError("unknown generation mode: " + s);
}

struct GenerationRequest {
  MotionSequence actor;
  std::string text;
  SamplerConfig sampler;  ///< parameterization/inpainting are set per stage
  std::uint64_t seed = 0;
  GenerationMode mode = GenerationMode::kTwoStage;
  int frames = 0;      ///< output length; 0 = match the actor
  bool use_ema = true; ///< sample averaged weights when the checkpoint has them

  void validate() const {
    validate_motion(actor);
    if (frames < 0) throw ConfigError("frames must be nonnegative");
  }
};

/// Checkpoint locations for the dispatcher; only the paths a mode needs are
/// consulted.
struct CheckpointSet {
  std::filesystem::path trajectory;
  std::filesystem::path fullbody;
  std::filesystem::path single_stage;
  std::filesystem::path pair;
};

struct GenerationResult {
  MotionSequence reactor;            ///< generated reaction, world frame
  Matd trajectory;                   ///< T x 4 world-frame root track driving it
  MotionSequence canonical_reactor;  ///< the same motion in the actor's canonical frame
  Matf canonical_sample;  ///< raw normalized sampler output (model width)
  RigidTransform2D to_canonical;  ///< transform that took the actor to canonical
};

namespace detail {

/// Maps a finished sample back to world units: de-normalize, clamp the
/// contact channels into [0, 1], de-canonicalize, and run the trajectory
/// block through the identical column arithmetic so it matches the motion's
/// leading dims bit for bit.
inline GenerationResult finish_generation(Matf sample, const Matf& reactor_norm,
                                          const Matf& traj_norm,
                                          const FeatureStats& stats,
                                          const RigidTransform2D& to_canonical,
                                          double fps) {
  Matd feats = denormalize_features(reactor_norm, stats);
  for (int d = kContactOffset; d < kContactOffset + kContactDims; ++d)
    feats.col(d) = feats.col(d).cwiseMax(0.0).cwiseMin(1.0);

  GenerationResult out;
  out.canonical_reactor = MotionSequence{std::move(feats), fps};
  const RigidTransform2D from_canonical = to_canonical.inverse();
  out.reactor = from_canonical.apply_to_motion(out.canonical_reactor);
  out.trajectory = transform_trajectory(
      from_canonical,
      denormalize_features(traj_norm, stats.head(kTrajectoryDims)));
  out.canonical_sample = std::move(sample);
  out.to_canonical = to_canonical;
  validate_motion(out.reactor);
  return out;
}

}  // namespace detail

/**
 * Two-stage generation.  Stage 1 samples the 4-d root trajectory; stage 2
 * samples the full body with the trajectory block fused into the clean-
 * sample estimate at every denoising step, so the output's leading dims
 * equal the stage-1 trajectory exactly.  Both checkpoints must have been
 * trained over the same feature statistics.
 */
inline GenerationResult generate_two_stage(
    const GenerationRequest& request,
    const std::filesystem::path& trajectory_checkpoint,
    const std::filesystem::path& fullbody_checkpoint) {
  request.validate();
  const LoadedStage s1 = load_stage_checkpoint(trajectory_checkpoint, request.use_ema);
  const LoadedStage s2 = load_stage_checkpoint(fullbody_checkpoint, request.use_ema);
  require_stage(s1, TrainStage::kTrajectory);
  require_stage(s2, TrainStage::kFullBody);
  if (!(s1.stats == s2.stats))
    throw ConfigError(
        "stage checkpoints disagree on feature statistics; train both stages "
        "on the same data");

  const RigidTransform2D tf = compute_canonical_transform(request.actor);
  const MotionSequence actor_c = tf.apply_to_motion(request.actor);
  const int frames = request.frames > 0 ? request.frames : actor_c.frames();
  const std::vector<int> tokens = tokenize(request.text);
  // The statistics match, so one normalized actor serves both stages.
  const Matf a_norm = normalize_features<float>(actor_c.features, s2.stats);

  // Stage 1: root trajectory.
  SamplerConfig cfg1 = request.sampler;
  cfg1.parameterization = s1.param;
  cfg1.inpaint_mask.reset();
  const DiffusionSchedule sched1 = make_schedule(s1.schedule_kind, s1.schedule_steps);
  RandomStream rng1(request.seed, "pipeline.sample.trajectory");
  const DenoiseFn<float> fn1 = [&](const Matf& x_t, int t, bool conditioned) {
    return traj_denoise(s1.model, t, x_t, tokens, a_norm, conditioned);
  };
  const Matf g = ddim_sample<float>(fn1, frames, kTrajectoryDims, cfg1, sched1, rng1);

  // Stage 2: full body, trajectory inpainted at every step.
  SamplerConfig cfg2 = request.sampler;
  cfg2.parameterization = s2.param;
  cfg2.inpaint_mask = trajectory_mask(kFeatureDim);
  Matf target = Matf::Zero(frames, kFeatureDim);
  target.leftCols(kTrajectoryDims) = g;
  const DiffusionSchedule sched2 = make_schedule(s2.schedule_kind, s2.schedule_steps);
  RandomStream rng2(request.seed, "pipeline.sample.fullbody");
  const DenoiseFn<float> fn2 = [&](const Matf& x_t, int t, bool conditioned) {
    return full_denoise(s2.model, t, x_t, tokens, a_norm, g, conditioned);
  };
  const Matf x0 =
      ddim_sample<float>(fn2, frames, kFeatureDim, cfg2, sched2, rng2, &target);

  return detail::finish_generation(x0, x0, g, s2.stats, tf, request.actor.fps);
}

/// Direct single-stage generation: one denoising pass over the full feature
/// set, no trajectory conditioning and no inpainting.
inline GenerationResult generate_single_stage(
    const GenerationRequest& request, const std::filesystem::path& checkpoint) {
  request.validate();
  const LoadedStage ls = load_stage_checkpoint(checkpoint, request.use_ema);
  require_stage(ls, TrainStage::kSingleStage);
  if (ls.model.config().use_traj)
    throw ConfigError("single-stage checkpoint must not consume a trajectory stream");

  const RigidTransform2D tf = compute_canonical_transform(request.actor);
  const MotionSequence actor_c = tf.apply_to_motion(request.actor);
  const int frames = request.frames > 0 ? request.frames : actor_c.frames();
  const std::vector<int> tokens = tokenize(request.text);
  const Matf a_norm = normalize_features<float>(actor_c.features, ls.stats);

  SamplerConfig cfg = request.sampler;
  cfg.parameterization = ls.param;
  cfg.inpaint_mask.reset();
  const DiffusionSchedule sched = make_schedule(ls.schedule_kind, ls.schedule_steps);
  RandomStream rng(request.seed, "pipeline.sample.single");
  const DenoiseFn<float> fn = [&](const Matf& x_t, int t, bool conditioned) {
    return ls.model.denoise(t, x_t, tokens, &a_norm, nullptr, conditioned);
  };
  const Matf x0 = ddim_sample<float>(fn, frames, kFeatureDim, cfg, sched, rng);

  return detail::finish_generation(x0, x0, Matf(x0.leftCols(kTrajectoryDims)),
                                   ls.stats, tf, request.actor.fps);
}

/**
 * Actor-infilling baseline on the joint two-person generator: the actor half
 * of the clean-sample estimate is overwritten with the known actor features
 * before every denoising update, and the reactor half is returned.  The
 * final joint sample's actor half therefore equals the conditioning exactly.
 */
inline GenerationResult generate_actor_infill_baseline(
    const GenerationRequest& request, const std::filesystem::path& checkpoint) {
  request.validate();
  const LoadedStage ls = load_stage_checkpoint(checkpoint, request.use_ema);
  require_stage(ls, TrainStage::kPairJoint);
  if (request.frames > 0 && request.frames != request.actor.frames())
    throw ConfigError("the infill baseline generates at the actor's length");

  const RigidTransform2D tf = compute_canonical_transform(request.actor);
  const MotionSequence actor_c = tf.apply_to_motion(request.actor);
  const int frames = actor_c.frames();
  const std::vector<int> tokens = tokenize(request.text);
  const Matf y = normalize_features<float>(actor_c.features, ls.stats);

  SamplerConfig cfg = request.sampler;
  cfg.parameterization = ls.param;
  cfg.inpaint_mask = pair_actor_mask();
  Matf target = Matf::Zero(frames, kPairDims);
  target.rightCols(kFeatureDim) = y;
  const DiffusionSchedule sched = make_schedule(ls.schedule_kind, ls.schedule_steps);
  RandomStream rng(request.seed, "pipeline.sample.pair");
  const DenoiseFn<float> fn = [&](const Matf& x_t, int t, bool conditioned) {
    return ls.model.denoise(t, x_t, tokens, nullptr, nullptr, conditioned);
  };
  const Matf z =
      ddim_sample<float>(fn, frames, kPairDims, cfg, sched, rng, &target);

  return detail::finish_generation(z, Matf(z.leftCols(kFeatureDim)),
                                   Matf(z.leftCols(kTrajectoryDims)), ls.stats,
                                   tf, request.actor.fps);
}

/// Routes a request to the pipeline its mode names.
inline GenerationResult generate(const GenerationRequest& request,
                                 const CheckpointSet& checkpoints) {
  switch (request.mode) {
    case GenerationMode::kTwoStage:
      return generate_two_stage(request, checkpoints.trajectory,
                                checkpoints.fullbody);
    case GenerationMode::kSingleStage:
      return generate_single_stage(request, checkpoints.single_stage);
    case GenerationMode::kActorInfill:
      return generate_actor_infill_baseline(request, checkpoints.pair);
  }
  throw ConfigError("unknown generation mode");
}

}  // namespace moreact
