/**
 * @file evalharness.hpp
 * @brief Desk-scale quantitative evaluation: a scenario-classification
 *        motion embedder, Frechet / diversity / recognition metrics, foot
 *        skating and contact-alignment diagnostics, the masked-noise
 *        perturbation study, and a bootstrap evaluation report.
 */
#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moreact/common.hpp"
#include "moreact/diffusion.hpp"
#include "moreact/kinematics.hpp"
#include "moreact/motion_io.hpp"
#include "moreact/nn.hpp"
#include "moreact/pipelines.hpp"
#include "moreact/plotting.hpp"
#include "moreact/synthdata.hpp"

namespace moreact {

// ---------------------------------------------------------------------------
// Embedder configuration
// ---------------------------------------------------------------------------

/**
 * Architecture and training knobs of the evaluation embedder.  The defaults
 * train in minutes on synthdata while leaving the pair embedding wide enough
 * (64) for a stable Frechet distance.
 */
struct EmbedderConfig {
  int embedding_dim = 64;       ///< pair-embedding width used for FID
  int traj_embedding_dim = 16;  ///< trajectory-head embedding width
  int latent_dim = 64;          ///< encoder token width
  int blocks = 2;               ///< transformer blocks per tower
  int heads = 4;
  int ff_mult = 4;

  double lr = 1e-3;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  ///< global gradient clip (0 disables)
  int batch_size = 16;
  int epochs = 60;
  double holdout_fraction = 0.25;    ///< per-scenario validation share
  double accuracy_threshold = 0.95;  ///< minimum held-out accuracy
  std::uint64_t seed = 0;

  void validate() const {
    if (embedding_dim < 1 || traj_embedding_dim < 1)
      throw ConfigError("embedding dims must be positive");
    if (latent_dim < 1 || blocks < 1 || heads < 1 || ff_mult < 1)
      throw ConfigError("encoder shape fields must be positive");
    if (latent_dim % heads != 0)
      throw ConfigError("latent_dim must be divisible by heads");
    if (!(lr > 0.0) || weight_decay < 0.0 || clip_norm < 0.0)
      throw ConfigError("bad embedder optimizer settings");
    if (batch_size < 1 || epochs < 1)
      throw ConfigError("batch_size and epochs must be positive");
    if (!(holdout_fraction > 0.0) || !(holdout_fraction < 1.0))
      throw ConfigError("holdout_fraction must lie strictly between 0 and 1");
    if (!(accuracy_threshold > 0.0) || accuracy_threshold > 1.0)
      throw ConfigError("accuracy_threshold must lie in (0, 1]");
  }

  nlohmann::json to_json() const {
    return {{"embedding_dim", embedding_dim},
            {"traj_embedding_dim", traj_embedding_dim},
            {"latent_dim", latent_dim},
            {"blocks", blocks},
            {"heads", heads},
            {"ff_mult", ff_mult},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"clip_norm", clip_norm},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"holdout_fraction", holdout_fraction},
            {"accuracy_threshold", accuracy_threshold},
            {"seed", seed}};
  }

  static EmbedderConfig from_json(const nlohmann::json& j) {
    EmbedderConfig c;
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.traj_embedding_dim = j.value("traj_embedding_dim", c.traj_embedding_dim);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.blocks = j.value("blocks", c.blocks);
    c.heads = j.value("heads", c.heads);
    c.ff_mult = j.value("ff_mult", c.ff_mult);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
    c.accuracy_threshold = j.value("accuracy_threshold", c.accuracy_threshold);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// MotionEmbedder
// ---------------------------------------------------------------------------

/**
 * Sequence encoder mapping an interaction pair to a fixed-width embedding.
 *
 * The pair tower consumes the concatenated world-space joint positions of
 * both agents in the pair's shared canonical frame (T x 132).  Realism lives
 * in world space: a corrupted root trajectory displaces every joint of the
 * body, while root-relative features would confine that damage to a handful
 * of columns and hide it from the embedding.  A second, independent tower
 * embeds a bare trajectory (T x 4) for trajectory-level comparisons.  Both
 * towers share one architecture — in-projection, pre-norm transformer
 * blocks, mean pooling over frames — and carry a detachable linear
 * classification head over the scenario labels; embeddings never pass
 * through the heads, so detaching them is a no-op for FID work.  Evaluation
 * passes are deterministic (the model has no stochastic layers).
 */
class MotionEmbedder {
 public:
  using Var = Tape<float>::Var;
  using Binding = TapeBinding<float>;

  /// Pair-tower input width: world xyz of every joint, both agents.
  static constexpr int kPairInputDims = 2 * 3 * kJoints;

  /// Fresh, seeded initialization.  `stats` are full-width feature statistics
  /// (used by the trajectory tower); `position_stats` cover one agent's
  /// decoded world positions (3 * kJoints dims).
  MotionEmbedder(EmbedderConfig config, std::vector<std::string> labels,
                 FeatureStats stats, FeatureStats position_stats,
                 std::uint64_t init_seed)
      : config_(std::move(config)),
        labels_(std::move(labels)),
        stats_(std::move(stats)),
        position_stats_(std::move(position_stats)),
        seed_(init_seed) {
    config_.validate();
    stats_.validate();
    position_stats_.validate();
    if (stats_.dims() != kFeatureDim)
      throw ConfigError("embedder stats must cover the full feature width");
    if (position_stats_.dims() != 3 * kJoints)
      throw ConfigError("embedder position stats must cover 3*J dims");
    if (labels_.size() < 2)
      throw ConfigError("embedder needs at least two scenario labels");
    for (size_t i = 1; i < labels_.size(); ++i)
      if (labels_[i - 1] >= labels_[i])
        throw ConfigError("embedder labels must be sorted and unique");
    declare_params();
  }

  /// Rebuild from checkpoint arrays; every declared parameter must be present.
  MotionEmbedder(EmbedderConfig config, std::vector<std::string> labels,
                 FeatureStats stats, FeatureStats position_stats,
                 const std::map<std::string, Matf>& arrays)
      : MotionEmbedder(std::move(config), std::move(labels), std::move(stats),
                       std::move(position_stats), 0) {
    for (auto& [name, value] : params_) {
      const auto it = arrays.find(name);
      if (it == arrays.end())
        throw IoError("embedder checkpoint misses parameter " + name);
      if (it->second.rows() != value.rows() || it->second.cols() != value.cols())
        throw IoError("embedder checkpoint shape mismatch for " + name);
      value = it->second;
    }
  }

  const EmbedderConfig& config() const { return config_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const FeatureStats& stats() const { return stats_; }
  const FeatureStats& position_stats() const { return position_stats_; }
  ParamSet<float>& params() { return params_; }
  const ParamSet<float>& params() const { return params_; }
  int num_labels() const { return static_cast<int>(labels_.size()); }

  /// Index of a scenario label; unknown labels are a configuration error.
  int label_index(std::string_view scenario) const {
    for (size_t i = 0; i < labels_.size(); ++i)
      if (labels_[i] == scenario) return static_cast<int>(i);
    throw ConfigError("scenario not covered by the embedder: " +
                      std::string(scenario));
  }

  /// Pair-tower input for an already-canonicalized pair: per frame, the
  /// normalized world positions of the actor's joints then the reactor's.
  Matf pair_input(const MotionSequence& canonical_actor,
                  const MotionSequence& canonical_reactor) const {
    if (canonical_actor.frames() != canonical_reactor.frames())
      throw InvalidMotionError("embedder pair has mismatched frame counts");
    const Matf a =
        normalize_features<float>(decode(canonical_actor), position_stats_);
    const Matf r =
        normalize_features<float>(decode(canonical_reactor), position_stats_);
    Matf joint(a.rows(), kPairInputDims);
    joint << a, r;
    return joint;
  }

  // ---- Tape-level passes (training) -----------------------------------------

  /// Pair embedding of a prepared pair_input block -> 1 x embedding_dim.
  Var embed_pair_node(Binding& bind, const Matf& pair_block) const {
    if (pair_block.cols() != kPairInputDims)
      throw ConfigError("embedder pair input must be 2*3*J wide");
    return encode(bind, "", pair_block);
  }

  /// Trajectory embedding of a normalized T x 4 block -> 1 x traj_embedding_dim.
  Var embed_trajectory_node(Binding& bind, const Matf& traj_norm) const {
    if (traj_norm.cols() != kTrajectoryDims)
      throw ConfigError("embedder trajectory input must have 4 columns");
    return encode(bind, "traj.", traj_norm);
  }

  /// Scenario logits from a pair embedding (the detachable head).
  Var classify_node(Binding& bind, Var embedding) const {
    return linear(bind, "cls", embedding);
  }

  /// Scenario logits from a trajectory embedding.
  Var classify_trajectory_node(Binding& bind, Var embedding) const {
    return linear(bind, "traj.cls", embedding);
  }

  // ---- Eval-mode passes ------------------------------------------------------

  /// Embeds one prepared pair_input block on a fresh tape.
  Vecd embed_pair_prepared(const Matf& pair_block) const {
    Tape<float> tape;
    // Evaluation passes are morally const: binding only reads parameters.
    Binding bind(tape, const_cast<ParamSet<float>&>(params_));
    const Var e = embed_pair_node(bind, pair_block);
    return tape.value(e).row(0).transpose().cast<double>();
  }

  /// Canonicalizes the pair (actor at origin facing +z) and embeds it.
  Vecd embed_pair(const MotionSequence& actor,
                  const MotionSequence& reactor) const {
    const CanonicalPair canon = canonicalize_pair(actor, reactor);
    return embed_pair_prepared(pair_input(canon.actor, canon.reactor));
  }

  /// Embeds a normalized T x 4 trajectory on a fresh tape.
  Vecd embed_trajectory_normalized(const Matf& traj_norm) const {
    Tape<float> tape;
    Binding bind(tape, const_cast<ParamSet<float>&>(params_));
    const Var e = embed_trajectory_node(bind, traj_norm);
    return tape.value(e).row(0).transpose().cast<double>();
  }

  /// Embeds a canonical-frame trajectory, normalizing with the stored stats.
  Vecd embed_trajectory(const Matd& traj_canonical) const {
    return embed_trajectory_normalized(normalize_features<float>(
        traj_canonical, stats_.head(kTrajectoryDims)));
  }

  /// Top-1 scenario prediction for a pair (index into labels()).
  int classify(const MotionSequence& actor, const MotionSequence& reactor) const {
    const CanonicalPair canon = canonicalize_pair(actor, reactor);
    Tape<float> tape;
    Binding bind(tape, const_cast<ParamSet<float>&>(params_));
    const Var logits = classify_node(
        bind,
        embed_pair_node(bind, pair_input(canon.actor, canon.reactor)));
    return argmax(tape.value(logits));
  }

  /// Top-1 scenario prediction from a canonical-frame trajectory.
  int classify_trajectory(const Matd& traj_canonical) const {
    Tape<float> tape;
    Binding bind(tape, const_cast<ParamSet<float>&>(params_));
    const Var logits = classify_trajectory_node(
        bind, embed_trajectory_node(
                  bind, normalize_features<float>(
                            traj_canonical, stats_.head(kTrajectoryDims))));
    return argmax(tape.value(logits));
  }

 private:
  static int argmax(const Matf& logits) {
    Eigen::Index best = 0;
    logits.row(0).maxCoeff(&best);
    return static_cast<int>(best);
  }

  /// Shared tower: in-projection + positions, pre-norm blocks, mean pooling.
  Var encode(Binding& bind, const std::string& ns, const Matf& features) const {
    auto& t = bind.tape();
    Var x = linear(bind, ns + "in", t.input(features));
    x = t.add_constant(
        x, sinusoidal_position_table(static_cast<int>(features.rows()),
                                     config_.latent_dim)
               .cast<float>());
    for (int b = 0; b < config_.blocks; ++b) {
      const std::string p = ns + "b" + std::to_string(b);
      const Var n = t.layernorm_rows(x);
      x = t.add(x, attention(bind, p + ".sa", n, n, config_.heads));
      const Var h = t.gelu(linear(bind, p + ".ff.l1", t.layernorm_rows(x)));
      x = t.add(x, linear(bind, p + ".ff.l2", h));
    }
    return t.mean_rows(linear(bind, ns + "out", t.layernorm_rows(x)));
  }

  void declare_tower(const std::string& ns, int input_dim, int out_dim) {
    const int d = config_.latent_dim;
    declare_linear(params_, ns + "in", input_dim, d, seed_);
    for (int b = 0; b < config_.blocks; ++b) {
      const std::string p = ns + "b" + std::to_string(b);
      declare_attention(params_, p + ".sa", d, seed_);
      declare_linear(params_, p + ".ff.l1", d, config_.ff_mult * d, seed_);
      declare_linear(params_, p + ".ff.l2", config_.ff_mult * d, d, seed_,
                     /*zero_init=*/true);
    }
    declare_linear(params_, ns + "out", d, out_dim, seed_);
    declare_linear(params_, ns + "cls", out_dim, num_labels(), seed_);
  }

  void declare_params() {
    declare_tower("", kPairInputDims, config_.embedding_dim);
    declare_tower("traj.", kTrajectoryDims, config_.traj_embedding_dim);
  }

  EmbedderConfig config_;
  std::vector<std::string> labels_;
  FeatureStats stats_;           ///< full-width feature statistics
  FeatureStats position_stats_;  ///< one agent's world-position statistics
  std::uint64_t seed_ = 0;
  ParamSet<float> params_;
};

// ---------------------------------------------------------------------------
// Embedder checkpoints
// ---------------------------------------------------------------------------

inline void save_embedder_checkpoint(const std::filesystem::path& path,
                                     const MotionEmbedder& embedder,
                                     nlohmann::json extra = {}) {
  nlohmann::json config = std::move(extra);
  config["embedder"] = embedder.config().to_json();
  config["labels"] = embedder.labels();
  config["stats"] = embedder.stats().to_json();
  config["position_stats"] = embedder.position_stats().to_json();
  std::vector<std::pair<std::string, Matf>> arrays;
  for (const auto& [name, value] : embedder.params())
    arrays.emplace_back(name, value);
  save_checkpoint(path, config, arrays);
}

inline MotionEmbedder load_embedder_checkpoint(
    const std::filesystem::path& path) {
  const CheckpointData data = load_checkpoint(path);
  if (!data.config.contains("embedder"))
    throw IoError("not an embedder checkpoint: " + path.string());
  const EmbedderConfig config = EmbedderConfig::from_json(data.config["embedder"]);
  std::vector<std::string> labels;
  try {
    labels = data.config.at("labels").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad embedder labels in " + path.string() + ": " + e.what());
  }
  const FeatureStats stats = FeatureStats::from_json(data.config.at("stats"));
  const FeatureStats position_stats =
      FeatureStats::from_json(data.config.at("position_stats"));
  return MotionEmbedder(config, std::move(labels), stats, position_stats,
                        data.arrays);
}

// ---------------------------------------------------------------------------
// Embedder training
// ---------------------------------------------------------------------------

struct EmbedderTrainResult {
  MotionEmbedder embedder;
  double holdout_accuracy = 0.0;       ///< pair head, held-out split
  double traj_holdout_accuracy = 0.0;  ///< trajectory head, same split
  std::vector<nlohmann::json> records; ///< one entry per epoch
};

/**
 * Trains the embedder with a scenario-classification objective (both towers
 * share one cross-entropy sum) on canonicalized samples.  The split holds
 * out a per-scenario fraction; training is bitwise deterministic given
 * (dataset, config).  Throws TrainingFailedError when the held-out
 * pair-head accuracy misses config.accuracy_threshold — an evaluator that
 * cannot recognize real data is unusable for FID or recognition scores.
 */
inline EmbedderTrainResult train_embedder(
    const std::vector<InteractionSample>& dataset,
    const EmbedderConfig& config) {
  config.validate();
  if (dataset.empty())
    throw ConfigError("train_embedder needs a non-empty dataset");
  for (const auto& s : dataset)
    if (s.scenario.empty())
      throw ConfigError("train_embedder: a sample is missing its scenario label");

  std::vector<std::string> labels;
  for (const auto& s : dataset) labels.push_back(s.scenario);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  if (labels.size() < 2)
    throw ConfigError("train_embedder needs at least two scenario classes");

  // One pass canonicalizes every pair and accumulates both statistics
  // (features pooled over agents, world positions pooled over agents).
  std::vector<CanonicalPair> canon;
  canon.reserve(dataset.size());
  StatsAccumulator feat_acc, pos_acc;
  std::vector<std::pair<Matd, Matd>> positions;  // decoded (actor, reactor)
  positions.reserve(dataset.size());
  for (const auto& s : dataset) {
    canon.push_back(canonicalize_pair(s.actor, s.reactor));
    const CanonicalPair& c = canon.back();
    feat_acc.add(c.actor.features);
    feat_acc.add(c.reactor.features);
    positions.emplace_back(decode(c.actor), decode(c.reactor));
    pos_acc.add(positions.back().first);
    pos_acc.add(positions.back().second);
  }
  const FeatureStats stats = feat_acc.finish();
  const FeatureStats position_stats = pos_acc.finish();
  MotionEmbedder embedder(config, labels, stats, position_stats, config.seed);

  struct Prepared {
    Matf pair, traj;
    int label = 0;
  };
  std::vector<Prepared> prep;
  prep.reserve(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) {
    Prepared p;
    const Matf a = normalize_features<float>(positions[i].first, position_stats);
    const Matf r = normalize_features<float>(positions[i].second, position_stats);
    p.pair.resize(a.rows(), MotionEmbedder::kPairInputDims);
    p.pair << a, r;
    p.traj = normalize_features<float>(
        Matd(canon[i].reactor.features.leftCols(kTrajectoryDims)),
        stats.head(kTrajectoryDims));
    p.label = embedder.label_index(dataset[i].scenario);
    prep.push_back(std::move(p));
  }

  // Stratified split: shuffle within each scenario, hold out the front.
  std::map<std::string, std::vector<int>> by_label;
  for (size_t i = 0; i < dataset.size(); ++i)
    by_label[dataset[i].scenario].push_back(static_cast<int>(i));
  std::vector<int> train_idx, hold_idx;
  for (auto& [label, idx] : by_label) {
    RandomStream rng(config.seed, "eval.embedder.split." + label);
    for (size_t i = idx.size() - 1; i > 0; --i)
      std::swap(idx[i], idx[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
    const int n = static_cast<int>(idx.size());
    int hold = n >= 2 ? static_cast<int>(std::lround(config.holdout_fraction * n))
                      : 0;
    hold = std::clamp(hold, n >= 2 ? 1 : 0, n - 1);
    for (int i = 0; i < n; ++i)
      (i < hold ? hold_idx : train_idx).push_back(idx[static_cast<size_t>(i)]);
  }
  if (hold_idx.empty())
    throw ConfigError(
        "train_embedder cannot hold out a validation split; "
        "need at least two samples of some scenario");

  AdamW<float> opt(AdamWConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay,
                               config.clip_norm});
  std::vector<nlohmann::json> records;
  const int n_train = static_cast<int>(train_idx.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    RandomStream shuffle_rng(config.seed, "eval.embedder.shuffle",
                             static_cast<std::uint64_t>(epoch));
    for (int i = n_train - 1; i > 0; --i)
      std::swap(train_idx[static_cast<size_t>(i)],
                train_idx[shuffle_rng.uniform_int(i + 1)]);

    double epoch_loss = 0.0, epoch_pair = 0.0, epoch_traj = 0.0;
    int batches = 0;
    for (int begin = 0; begin < n_train; begin += config.batch_size) {
      const int count = std::min(config.batch_size, n_train - begin);
      const float inv = 1.0f / static_cast<float>(count);
      const double invd = 1.0 / static_cast<double>(count);
      std::map<std::string, Matf> acc;
      double pair_loss = 0.0, traj_loss = 0.0;
      for (int k = 0; k < count; ++k) {
        const Prepared& p =
            prep[static_cast<size_t>(train_idx[static_cast<size_t>(begin + k)])];
        Tape<float> tape;
        TapeBinding<float> bind(tape, embedder.params());
        const auto ce_pair = tape.cross_entropy_rows(
            embedder.classify_node(bind, embedder.embed_pair_node(bind, p.pair)),
            {p.label});
        const auto ce_traj = tape.cross_entropy_rows(
            embedder.classify_trajectory_node(
                bind, embedder.embed_trajectory_node(bind, p.traj)),
            {p.label});
        const auto loss = tape.add(ce_pair, ce_traj);
        tape.backward(loss);
        for (auto& [pname, g] : bind.grads()) {
          const auto it = acc.find(pname);
          if (it == acc.end())
            acc.emplace(pname, Matf(g * inv));
          else
            it->second += g * inv;
        }
        pair_loss += static_cast<double>(tape.value(ce_pair)(0, 0)) * invd;
        traj_loss += static_cast<double>(tape.value(ce_traj)(0, 0)) * invd;
      }
      opt.step(embedder.params(), acc);
      epoch_pair += pair_loss;
      epoch_traj += traj_loss;
      epoch_loss += pair_loss + traj_loss;
      ++batches;
    }
    records.push_back({{"epoch", epoch},
                       {"loss", epoch_loss / batches},
                       {"pair_loss", epoch_pair / batches},
                       {"traj_loss", epoch_traj / batches}});
  }

  // Held-out accuracy of both heads.
  int correct = 0, traj_correct = 0;
  for (const int i : hold_idx) {
    const auto& s = dataset[static_cast<size_t>(i)];
    const int want = prep[static_cast<size_t>(i)].label;
    correct += embedder.classify(s.actor, s.reactor) == want;
    traj_correct += embedder.classify_trajectory(Matd(
                        canon[static_cast<size_t>(i)].reactor.features.leftCols(
                            kTrajectoryDims))) == want;
  }
  const double accuracy = static_cast<double>(correct) / hold_idx.size();
  const double traj_accuracy =
      static_cast<double>(traj_correct) / hold_idx.size();
  if (accuracy + 1e-12 < config.accuracy_threshold)
    throw TrainingFailedError(
        "embedder held-out accuracy " + std::to_string(accuracy) +
        " is below the required " + std::to_string(config.accuracy_threshold));
  return EmbedderTrainResult{std::move(embedder), accuracy, traj_accuracy,
                             std::move(records)};
}

// ---------------------------------------------------------------------------
// Frechet distance
// ---------------------------------------------------------------------------

namespace detail {

/// Symmetric PSD square root; roundoff-negative eigenvalues clamp to zero.
inline Matd sqrt_psd(const Matd& m) {
  Eigen::SelfAdjointEigenSolver<Matd> es(m);
  if (es.info() != Eigen::Success)
    throw ConfigError("covariance eigendecomposition failed");
  const Vecd ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

/// Sample mean and (eps-regularized) unbiased covariance, rows as samples.
inline void gaussian_moments(const Matd& x, double eps, Vecd& mean, Matd& cov) {
  mean = x.colwise().mean().transpose();
  const Matd centered = x.rowwise() - mean.transpose();
  cov = centered.transpose() * centered /
        static_cast<double>(x.rows() - 1);
  cov += eps * Matd::Identity(x.cols(), x.cols());
}

}  // namespace detail

/**
 * Frechet distance between Gaussians fit to two embedding sets (rows are
 * samples): ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)).  Both
 * covariances carry an eps*I ridge, and the cross term is evaluated through
 * the symmetric-PSD root tr((S1^(1/2) S2 S1^(1/2))^(1/2)).  Tiny negative
 * results from roundoff (identical sets) clamp to zero.
 */
inline double fid(const Matd& real_embeddings, const Matd& gen_embeddings,
                  double eps = 1e-6) {
  if (real_embeddings.cols() != gen_embeddings.cols())
    throw ConfigError("fid: embedding widths differ");
  const Eigen::Index d = real_embeddings.cols();
  if (d < 1) throw ConfigError("fid: embeddings are empty");
  if (real_embeddings.rows() < d + 1 || gen_embeddings.rows() < d + 1)
    throw ConfigError("fid needs at least dim+1 samples on each side");
  if (!all_finite(real_embeddings) || !all_finite(gen_embeddings))
    throw ConfigError("fid: embeddings contain non-finite values");

  Vecd m1, m2;
  Matd c1, c2;
  detail::gaussian_moments(real_embeddings, eps, m1, c1);
  detail::gaussian_moments(gen_embeddings, eps, m2, c2);

  const Matd s1 = detail::sqrt_psd(c1);
  Matd inner = s1 * c2 * s1;
  inner = 0.5 * (inner + inner.transpose());  // symmetrize roundoff
  Eigen::SelfAdjointEigenSolver<Matd> es(inner, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw ConfigError("covariance eigendecomposition failed");
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double value =
      (m1 - m2).squaredNorm() + c1.trace() + c2.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

// ---------------------------------------------------------------------------
// Diversity / recognition
// ---------------------------------------------------------------------------

/**
 * Mean Euclidean distance over `pairs` seeded random distinct index pairs
 * (i < j, no pair repeated).  `pairs` must not exceed n(n-1)/2.
 */
inline double diversity(const Matd& embeddings, int pairs, std::uint64_t seed) {
  const Eigen::Index n = embeddings.rows();
  if (n < 2) throw ConfigError("diversity needs at least two embeddings");
  const std::uint64_t total =
      static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n - 1) / 2;
  if (pairs < 1 || static_cast<std::uint64_t>(pairs) > total)
    throw ConfigError("diversity: pairs must lie in [1, n(n-1)/2]");

  RandomStream rng(seed, "eval.diversity");
  double sum = 0.0;
  if (total <= (1u << 21)) {
    // Dense regime: enumerate all pairs, draw a partial Fisher-Yates prefix.
    std::vector<std::pair<int, int>> all;
    all.reserve(static_cast<size_t>(total));
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) all.emplace_back(i, j);
    for (int k = 0; k < pairs; ++k) {
      const std::uint64_t pick =
          static_cast<std::uint64_t>(k) + rng.uniform_int(total - k);
      std::swap(all[static_cast<size_t>(k)], all[static_cast<size_t>(pick)]);
      const auto [i, j] = all[static_cast<size_t>(k)];
      sum += (embeddings.row(i) - embeddings.row(j)).norm();
    }
  } else {
    // Sparse regime: rejection-sample distinct pairs.
    std::unordered_set<std::uint64_t> seen;
    while (seen.size() < static_cast<size_t>(pairs)) {
      std::uint64_t i = rng.uniform_int(static_cast<std::uint64_t>(n));
      std::uint64_t j = rng.uniform_int(static_cast<std::uint64_t>(n));
      if (i == j) continue;
      if (i > j) std::swap(i, j);
      if (!seen.insert(i * static_cast<std::uint64_t>(n) + j).second) continue;
      sum += (embeddings.row(static_cast<Eigen::Index>(i)) -
              embeddings.row(static_cast<Eigen::Index>(j)))
                 .norm();
    }
  }
  return sum / static_cast<double>(pairs);
}

/// Embeds every pair of a sample set into one rows-are-samples matrix.
inline Matd embed_pairs(const MotionEmbedder& embedder,
                        const std::vector<InteractionSample>& samples) {
  if (samples.empty()) throw ConfigError("embed_pairs needs samples");
  Matd out(static_cast<Eigen::Index>(samples.size()),
           embedder.config().embedding_dim);
  for (size_t i = 0; i < samples.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) =
        embedder.embed_pair(samples[i].actor, samples[i].reactor).transpose();
  return out;
}

/// Top-1 accuracy of the classification head against the samples' labels.
inline double recognition_accuracy(const std::vector<InteractionSample>& samples,
                                   const MotionEmbedder& embedder) {
  if (samples.empty()) throw ConfigError("recognition_accuracy needs samples");
  int correct = 0;
  for (const auto& s : samples)
    correct += embedder.classify(s.actor, s.reactor) ==
               embedder.label_index(s.scenario);
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Foot skating / contact alignment
// ---------------------------------------------------------------------------

/**
 * Mean horizontal foot speed (m/s) over detected contact steps; 0 when no
 * contact is detected.  Contact here is height-only (both ends of a frame
 * step within `max_height` of the ground): gating on low velocity the way
 * the training-time detector does would exclude exactly the sliding frames
 * this diagnostic exists to expose.
 */
inline double foot_skate_metric(const MotionSequence& motion,
                                double max_height = ContactThresholds{}.gamma_h) {
  const Matd positions = decode(motion);
  const Skeleton& skel = smpl22();
  double sum = 0.0;
  long count = 0;
  for (const int joint : skel.foot_joints) {
    for (int k = 0; k + 1 < motion.frames(); ++k) {
      const Vec3 a = positions.block<1, 3>(k, 3 * joint).transpose();
      const Vec3 b = positions.block<1, 3>(k + 1, 3 * joint).transpose();
      if (a.y() > max_height || b.y() > max_height) continue;
      sum += std::hypot(b.x() - a.x(), b.z() - a.z()) * motion.fps;
      ++count;
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

/// Joint-pair distance threshold that counts as contact for alignment scoring.
inline constexpr double kContactAlignmentRadius = 0.15;

/**
 * Fraction of declared contact-window frames whose named joint pair sits
 * within `radius` metres.  Scenarios without declared windows are vacuously
 * aligned (1.0); real synthdata scores exactly 1.0 by generator contract.
 */
inline double contact_alignment(const InteractionSample& sample,
                                double radius = kContactAlignmentRadius) {
  const ScenarioSpec& spec = find_scenario(sample.scenario);
  if (spec.contact_windows.empty()) return 1.0;
  if (sample.actor.frames() != sample.reactor.frames())
    throw InvalidMotionError("contact_alignment: frame counts differ");
  const Matd pa = decode(sample.actor);
  const Matd pr = decode(sample.reactor);
  const int frames = sample.actor.frames();
  long hit = 0, total = 0;
  for (const ContactWindow& w : spec.contact_windows) {
    for (int k = w.first_frame(frames); k <= w.last_frame(frames); ++k) {
      const Vec3 a = pa.block<1, 3>(k, 3 * w.actor_joint).transpose();
      const Vec3 b = pr.block<1, 3>(k, 3 * w.reactor_joint).transpose();
      hit += (a - b).norm() <= radius;
      ++total;
    }
  }
  return total > 0 ? static_cast<double>(hit) / static_cast<double>(total) : 1.0;
}

// ---------------------------------------------------------------------------
// Perturbation study
// ---------------------------------------------------------------------------

enum class PerturbMode { kGlobal, kLocal, kFull };

inline std::string perturb_mode_to_string(PerturbMode mode) {
  switch (mode) {
    case PerturbMode::kGlobal: return "global";
    case PerturbMode::kLocal: return "local";
    case PerturbMode::kFull: return "full";
  }
  throw ConfigError("unknown perturbation mode");
}

inline PerturbMode perturb_mode_from_string(std::string_view s) {
  if (s == "global") return PerturbMode::kGlobal;
  if (s == "local") return PerturbMode::kLocal;
  if (s == "full") return PerturbMode::kFull;
  throw ConfigError("unknown perturbation mode: " + std::string(s));
}

/// Mask of noised feature dims (1 = replaced by the diffused value): global
/// covers the 4 trajectory dims, local the remaining 259, full everything.
inline Vecd perturb_mask(PerturbMode mode, int dims = kFeatureDim) {
  if (dims <= kTrajectoryDims)
    throw ConfigError("perturb_mask needs more than the trajectory dims");
  Vecd mask = Vecd::Zero(dims);
  switch (mode) {
    case PerturbMode::kGlobal: mask.head(kTrajectoryDims).setOnes(); break;
    case PerturbMode::kLocal: mask.tail(dims - kTrajectoryDims).setOnes(); break;
    case PerturbMode::kFull: mask.setOnes(); break;
  }
  return mask;
}

struct PerturbationCurve {
  PerturbMode mode = PerturbMode::kGlobal;
  std::vector<double> fid;  ///< parallel to the study's t_grid
};

struct PerturbationStudy {
  std::vector<int> t_grid;
  std::vector<PerturbationCurve> curves;

  nlohmann::json to_json() const {
    nlohmann::json j{{"t_grid", t_grid}};
    auto& c = j["curves"] = nlohmann::json::object();
    for (const auto& curve : curves)
      c[perturb_mode_to_string(curve.mode)] = curve.fid;
    return j;
  }
};

/**
 * Masked-noise realism study.  For every grid step t and mode, each reactor
 * is replaced by (1-M) * x0 + M * x_t in the normalized canonical feature
 * space the models train in, where x_t = q_sample(x0, t) and M selects the
 * mode's dims; the fused features are decoded back to a motion whose pair
 * embedding against the clean actor enters an FID against the clean
 * embeddings.  Step 0 keeps clips untouched (the schedule's first entry
 * already carries noise), so its FID is the identical-set baseline.  One
 * noise draw is shared by all modes at a fixed (sample, t), making the full
 * mask perturb a strict superset of either partial mask.  Writes an SVG
 * curve plot unless plot_path is empty.
 */
inline PerturbationStudy perturbation_study(
    const std::vector<InteractionSample>& dataset,
    const MotionEmbedder& embedder, const DiffusionSchedule& sched,
    const std::vector<int>& t_grid, std::uint64_t seed,
    const std::filesystem::path& plot_path = {},
    const std::vector<PerturbMode>& modes = {PerturbMode::kGlobal,
                                             PerturbMode::kLocal,
                                             PerturbMode::kFull}) {
  if (dataset.empty()) throw ConfigError("perturbation_study needs samples");
  if (t_grid.empty()) throw ConfigError("perturbation_study needs a t grid");
  if (modes.empty()) throw ConfigError("perturbation_study needs modes");
  const int steps = static_cast<int>(sched.alpha_bar.size());
  for (const int t : t_grid)
    if (t < 0 || t >= steps)
      throw ConfigError("perturbation grid step outside the schedule");

  const Eigen::Index n = static_cast<Eigen::Index>(dataset.size());
  struct Prepared {
    MotionSequence actor;  ///< canonical actor, reused for every fusion
    Matf x0;               ///< normalized canonical reactor features
    double fps = 0.0;
  };
  std::vector<Prepared> prep;
  prep.reserve(dataset.size());
  Matd real_emb(n, embedder.config().embedding_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = dataset[static_cast<size_t>(i)];
    CanonicalPair canon = canonicalize_pair(s.actor, s.reactor);
    real_emb.row(i) =
        embedder.embed_pair(canon.actor, canon.reactor).transpose();
    Prepared p;
    p.x0 = normalize_features<float>(canon.reactor.features, embedder.stats());
    p.fps = canon.reactor.fps;
    p.actor = std::move(canon.actor);
    prep.push_back(std::move(p));
  }

  PerturbationStudy study;
  study.t_grid = t_grid;
  for (const PerturbMode mode : modes)
    study.curves.push_back({mode, std::vector<double>(t_grid.size(), 0.0)});

  std::vector<Matd> noised(modes.size(),
                           Matd(n, embedder.config().embedding_dim));
  for (size_t ti = 0; ti < t_grid.size(); ++ti) {
    const int t = t_grid[ti];
    for (Eigen::Index i = 0; i < n; ++i) {
      const Prepared& p = prep[static_cast<size_t>(i)];
      Matf x_t = p.x0;
      if (t > 0) {
        RandomStream rng(seed, "eval.perturb.t" + std::to_string(t),
                         static_cast<std::uint64_t>(i));
        const Matf noise = rng.normal_matrix<float>(p.x0.rows(), p.x0.cols());
        x_t = q_sample(p.x0, t, noise, sched);
      }
      for (size_t mi = 0; mi < modes.size(); ++mi) {
        const Vecd mask = perturb_mask(modes[mi]);
        Matf fused = p.x0;
        for (int d = 0; d < kFeatureDim; ++d)
          if (mask[d] != 0.0) fused.col(d) = x_t.col(d);
        MotionSequence reactor;
        reactor.features = denormalize_features(fused, embedder.stats());
        reactor.fps = p.fps;
        noised[mi].row(i) =
            embedder.embed_pair(p.actor, reactor).transpose();
      }
    }
    for (size_t mi = 0; mi < modes.size(); ++mi)
      study.curves[mi].fid[ti] = fid(real_emb, noised[mi]);
  }

  if (!plot_path.empty()) {
    std::vector<PlotSeries> series;
    for (const auto& curve : study.curves) {
      PlotSeries s;
      s.name = perturb_mode_to_string(curve.mode);
      for (const int t : t_grid) s.x.push_back(static_cast<double>(t));
      s.y = curve.fid;
      series.push_back(std::move(s));
    }
    write_line_plot_svg(plot_path, "masked-noise perturbation",
                        "diffusion step", "FID", series);
  }
  return study;
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;

  void validate() const {
    if (!std::isfinite(lo) || !std::isfinite(hi))
      throw ConfigError("confidence bounds must be finite");
    if (lo > hi) throw ConfigError("confidence bounds out of order");
  }
};

/// A point estimate with its bootstrap 95% interval (value +- 1.96 sd).
struct MetricSummary {
  double value = 0.0;
  ConfidenceInterval ci;

  void validate() const {
    if (!std::isfinite(value)) throw ConfigError("metric value must be finite");
    ci.validate();
  }

  nlohmann::json to_json() const {
    return {{"value", value}, {"ci", {ci.lo, ci.hi}}};
  }

  static MetricSummary from_json(const nlohmann::json& j) {
    MetricSummary m;
    m.value = j.at("value").get<double>();
    m.ci.lo = j.at("ci").at(0).get<double>();
    m.ci.hi = j.at("ci").at(1).get<double>();
    return m;
  }
};

struct EvalReport {
  MetricSummary fid;
  MetricSummary diversity;
  MetricSummary recognition_accuracy;
  MetricSummary foot_skate;         ///< m/s over detected contacts
  MetricSummary contact_alignment;  ///< fraction in [0, 1]
  std::uint64_t seed = 0;
  int bootstrap_resamples = 0;
  nlohmann::json metadata;  ///< caller-supplied: seeds, checkpoint ids, ...

  void validate() const {
    fid.validate();
    diversity.validate();
    recognition_accuracy.validate();
    foot_skate.validate();
    contact_alignment.validate();
    if (bootstrap_resamples < 2)
      throw ConfigError("report needs at least two bootstrap resamples");
  }

  nlohmann::json to_json() const {
    return {{"fid", fid.to_json()},
            {"diversity", diversity.to_json()},
            {"recognition_accuracy", recognition_accuracy.to_json()},
            {"foot_skate", foot_skate.to_json()},
            {"contact_alignment", contact_alignment.to_json()},
            {"seed", seed},
            {"bootstrap_resamples", bootstrap_resamples},
            {"metadata", metadata.is_null() ? nlohmann::json::object()
                                            : metadata}};
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    r.fid = MetricSummary::from_json(j.at("fid"));
    r.diversity = MetricSummary::from_json(j.at("diversity"));
    r.recognition_accuracy =
        MetricSummary::from_json(j.at("recognition_accuracy"));
    r.foot_skate = MetricSummary::from_json(j.at("foot_skate"));
    r.contact_alignment = MetricSummary::from_json(j.at("contact_alignment"));
    r.seed = j.at("seed").get<std::uint64_t>();
    r.bootstrap_resamples = j.at("bootstrap_resamples").get<int>();
    r.metadata = j.value("metadata", nlohmann::json::object());
    r.validate();
    return r;
  }
};

inline void save_eval_report(const std::filesystem::path& path,
                             const EvalReport& report) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << report.to_json().dump(2) << "\n";
  if (!out) throw IoError("failed writing report " + path.string());
}

inline EvalReport load_eval_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad report JSON in " + path.string() + ": " + e.what());
  }
  return EvalReport::from_json(j);
}

struct EvalOptions {
  int diversity_pairs = 300;  ///< clamped to the available pair count
  int bootstrap_resamples = 20;
  double contact_radius = kContactAlignmentRadius;
  nlohmann::json metadata;  ///< copied into the report verbatim
};

/**
 * Full metric sweep of a generated set against a real reference set.  FID
 * compares embedding clouds (the real side stays fixed); diversity,
 * recognition accuracy, foot skating, and contact alignment describe the
 * generated set.  Every metric carries a 95% bootstrap interval from
 * `bootstrap_resamples` seeded resamples of the generated set, reported as
 * value +- 1.96 bootstrap standard deviations.
 */
inline EvalReport evaluate(const std::vector<InteractionSample>& gen_set,
                           const std::vector<InteractionSample>& real_set,
                           const MotionEmbedder& embedder, std::uint64_t seed,
                           const EvalOptions& opts = {}) {
  if (gen_set.empty() || real_set.empty())
    throw ConfigError("evaluate needs non-empty sample sets");
  if (opts.bootstrap_resamples < 2)
    throw ConfigError("evaluate needs at least two bootstrap resamples");
  if (opts.diversity_pairs < 1)
    throw ConfigError("evaluate needs a positive diversity pair budget");

  const Matd real_emb = embed_pairs(embedder, real_set);
  const Matd gen_emb = embed_pairs(embedder, gen_set);
  const Eigen::Index n = gen_emb.rows();

  Vecd correct(n), skate(n), align(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = gen_set[static_cast<size_t>(i)];
    correct[i] = embedder.classify(s.actor, s.reactor) ==
                         embedder.label_index(s.scenario)
                     ? 1.0
                     : 0.0;
    skate[i] = foot_skate_metric(s.reactor);
    align[i] = contact_alignment(s, opts.contact_radius);
  }

  const std::uint64_t total_pairs =
      static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n - 1) / 2;
  const int pairs = static_cast<int>(std::min<std::uint64_t>(
      static_cast<std::uint64_t>(opts.diversity_pairs), total_pairs));

  EvalReport report;
  report.fid.value = fid(real_emb, gen_emb);
  report.diversity.value = diversity(gen_emb, pairs, seed);
  report.recognition_accuracy.value = correct.mean();
  report.foot_skate.value = skate.mean();
  report.contact_alignment.value = align.mean();
  report.seed = seed;
  report.bootstrap_resamples = opts.bootstrap_resamples;
  report.metadata =
      opts.metadata.is_null() ? nlohmann::json::object() : opts.metadata;

  // Bootstrap: resample the generated set with replacement.
  const int b_count = opts.bootstrap_resamples;
  Matd stats(b_count, 5);
  Matd res_emb(n, gen_emb.cols());
  for (int b = 0; b < b_count; ++b) {
    RandomStream rng(seed, "eval.bootstrap", static_cast<std::uint64_t>(b));
    double acc = 0.0, fs = 0.0, ca = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index pick = static_cast<Eigen::Index>(
          rng.uniform_int(static_cast<std::uint64_t>(n)));
      res_emb.row(i) = gen_emb.row(pick);
      acc += correct[pick];
      fs += skate[pick];
      ca += align[pick];
    }
    const std::uint64_t div_seed = rng.engine()();
    stats(b, 0) = fid(real_emb, res_emb);
    stats(b, 1) = diversity(res_emb, pairs, div_seed);
    stats(b, 2) = acc / static_cast<double>(n);
    stats(b, 3) = fs / static_cast<double>(n);
    stats(b, 4) = ca / static_cast<double>(n);
  }
  auto half_width = [&](int col) {
    const double mean = stats.col(col).mean();
    const double var = (stats.col(col).array() - mean).square().sum() /
                       static_cast<double>(b_count - 1);
    return 1.96 * std::sqrt(var);
  };
  MetricSummary* fields[] = {&report.fid, &report.diversity,
                             &report.recognition_accuracy, &report.foot_skate,
                             &report.contact_alignment};
  for (int c = 0; c < 5; ++c) {
    const double h = half_width(c);
    fields[c]->ci = {fields[c]->value - h, fields[c]->value + h};
  }
  report.validate();
  return report;
}

}  // namespace moreact
