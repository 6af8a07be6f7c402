/**
 * @file losses.hpp
 * @brief Training objectives: noise/reconstruction terms, the kinematic
 *        sub-losses (foot skating, velocity, rotation, root trajectory) and
 *        the distance-weighted interaction losses between the two agents,
 *        plus the threshold-gated assembly of the full-body objective.
 *
 * Every squared-norm loss is a mean over the included elements (single
 * scalars for element-wise terms, squared 3-vector norms for joint terms) so
 * that the weights transfer across sequence lengths.  Each loss comes in two
 * flavors: a plain value function used for metrics, and a tape variant that
 * builds the same quantity as autodiff nodes for training.
 */
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "moreact/autodiff.hpp"
#include "moreact/common.hpp"
#include "moreact/skeleton.hpp"

namespace moreact {

// ---------------------------------------------------------------------------
// Weights and thresholds
// ---------------------------------------------------------------------------

struct LossWeights {
  double lambda_recon = 7.0;      ///< reconstruction term
  double lambda_kin = 1.0;        ///< kinematic group
  double lambda_inter = 1.0;      ///< interaction group
  double lambda_foot = 300.0;     ///< foot-skating subterm
  double lambda_vel = 110.0;      ///< joint-velocity subterm
  double lambda_rot = 1.5;        ///< root-rotation subterm
  double lambda_traj = 10.0;      ///< root-position subterm
  double lambda_inter_pos = 5.0;  ///< position interaction subterm
  double lambda_inter_vel = 25.0; ///< velocity interaction subterm
  int gate_threshold = 700;       ///< apply kinematic/interaction terms for t <= this
  double contact_radius = 0.5;    ///< joint-pair distance (m) that activates interaction terms
  double gamma_v = 0.10;          ///< foot-contact speed threshold (m/s)
  double gamma_h = 0.08;          ///< foot-contact height threshold (m)
  double distance_floor = 1e-3;   ///< clamp for inverse-distance weights (m)

  void validate(int schedule_steps = 1000) const {
    const double all[] = {lambda_recon,     lambda_kin,  lambda_inter,
                          lambda_foot,      lambda_vel,  lambda_rot,
                          lambda_traj,      lambda_inter_pos, lambda_inter_vel};
    for (double w : all)
      if (!(w >= 0.0)) throw ConfigError("loss weights must be nonnegative");
    if (gate_threshold < 0 || gate_threshold > schedule_steps)
      throw ConfigError("gate threshold must lie within the schedule");
    if (!(contact_radius > 0.0)) throw ConfigError("contact radius must be positive");
    if (!(distance_floor > 0.0)) throw ConfigError("distance floor must be positive");
    if (!(gamma_v > 0.0) || !(gamma_h > 0.0))
      throw ConfigError("contact thresholds must be positive");
  }

  nlohmann::json to_json() const {
    return {{"lambda_recon", lambda_recon},
            {"lambda_kin", lambda_kin},
            {"lambda_inter", lambda_inter},
            {"lambda_foot", lambda_foot},
            {"lambda_vel", lambda_vel},
            {"lambda_rot", lambda_rot},
            {"lambda_traj", lambda_traj},
            {"lambda_inter_pos", lambda_inter_pos},
            {"lambda_inter_vel", lambda_inter_vel},
            {"gate_threshold", gate_threshold},
            {"contact_radius", contact_radius},
            {"gamma_v", gamma_v},
            {"gamma_h", gamma_h},
            {"distance_floor", distance_floor}};
  }

  static LossWeights from_json(const nlohmann::json& j) {
    LossWeights w;
    w.lambda_recon = j.value("lambda_recon", w.lambda_recon);
    w.lambda_kin = j.value("lambda_kin", w.lambda_kin);
    w.lambda_inter = j.value("lambda_inter", w.lambda_inter);
    w.lambda_foot = j.value("lambda_foot", w.lambda_foot);
    w.lambda_vel = j.value("lambda_vel", w.lambda_vel);
    w.lambda_rot = j.value("lambda_rot", w.lambda_rot);
    w.lambda_traj = j.value("lambda_traj", w.lambda_traj);
    w.lambda_inter_pos = j.value("lambda_inter_pos", w.lambda_inter_pos);
    w.lambda_inter_vel = j.value("lambda_inter_vel", w.lambda_inter_vel);
    w.gate_threshold = j.value("gate_threshold", w.gate_threshold);
    w.contact_radius = j.value("contact_radius", w.contact_radius);
    w.gamma_v = j.value("gamma_v", w.gamma_v);
    w.gamma_h = j.value("gamma_h", w.gamma_h);
    w.distance_floor = j.value("distance_floor", w.distance_floor);
    return w;
  }
};

// ---------------------------------------------------------------------------
// Element-wise reconstruction terms
// ---------------------------------------------------------------------------

/// Mean squared error between the true and predicted noise.
template <typename Scalar>
double loss_traj(const Mat<Scalar>& eps, const Mat<Scalar>& eps_hat) {
  if (eps.rows() != eps_hat.rows() || eps.cols() != eps_hat.cols())
    throw ConfigError("loss_traj: shape mismatch");
  return static_cast<double>((eps - eps_hat).squaredNorm()) / eps.size();
}

/// Mean squared error between the clean features and their reconstruction.
template <typename Scalar>
double loss_recon(const Mat<Scalar>& x0, const Mat<Scalar>& x0_hat) {
  return loss_traj(x0, x0_hat);
}

/// Tape variant: mean squared difference to a constant target.
template <typename Scalar>
typename Tape<Scalar>::Var mse_to_target(Tape<Scalar>& tape,
                                         typename Tape<Scalar>::Var pred,
                                         const Mat<Scalar>& target) {
  const auto diff = tape.add_constant(pred, -target);
  return tape.mean_all(tape.mul(diff, diff));
}

// ---------------------------------------------------------------------------
// Foot contacts
// ---------------------------------------------------------------------------

/**
 * Contact mask derived from a motion's own global joint positions: a foot
 * joint counts as planted at frame k (k < T-1) when its speed into the next
 * frame is at most gamma_v and its height is at most gamma_h.  Returns
 * (T-1) x |foot_joints| zeros and ones.
 */
template <typename Scalar>
Mat<Scalar> foot_contact_mask(const Mat<Scalar>& positions,
                              std::span<const int> foot_joints, double fps,
                              double gamma_v, double gamma_h) {
  const Eigen::Index frames = positions.rows();
  if (frames < 2) throw MotionTooShortError("contact mask needs two frames");
  Mat<Scalar> mask = Mat<Scalar>::Zero(frames - 1, foot_joints.size());
  for (Eigen::Index k = 0; k + 1 < frames; ++k)
    for (size_t f = 0; f < foot_joints.size(); ++f) {
      const int j = foot_joints[f];
      const auto p0 = positions.row(k).segment(3 * j, 3);
      const auto p1 = positions.row(k + 1).segment(3 * j, 3);
      const double speed = (p1 - p0).norm() * fps;
      const double height = positions(k, 3 * j + 1);
      if (speed <= gamma_v && height <= gamma_h) mask(k, f) = Scalar(1);
    }
  return mask;
}

// ---------------------------------------------------------------------------
// Kinematic losses
// ---------------------------------------------------------------------------

struct KinematicBreakdown {
  double foot = 0.0;      ///< mean squared planted-foot speed
  double vel = 0.0;       ///< mean squared joint-velocity error
  double rot = 0.0;       ///< mean squared root-yaw error
  double traj_pos = 0.0;  ///< mean squared root-position error
  double total = 0.0;     ///< internally weighted sum of the four terms
};

/**
 * Kinematic loss over decoded global positions (T x 3J) and root yaw
 * (T x 1).  The foot term penalizes the generated foot speed on frames the
 * generated motion itself marks as contacts; it is zero when there are none.
 */
template <typename Scalar>
KinematicBreakdown kinematic_loss(
    const Mat<Scalar>& gen_pos, const Mat<Scalar>& gt_pos,
    const Mat<Scalar>& gen_yaw, const Mat<Scalar>& gt_yaw,
    const LossWeights& weights, double fps,
    std::span<const int> foot_joints = smpl22().foot_joints) {
  const Eigen::Index frames = gen_pos.rows();
  const Eigen::Index joints = gen_pos.cols() / 3;
  if (frames < 2) throw MotionTooShortError("kinematic loss needs two frames");
  if (gt_pos.rows() != frames || gt_pos.cols() != gen_pos.cols() ||
      gen_yaw.rows() != frames || gt_yaw.rows() != frames)
    throw ConfigError("kinematic loss: shape mismatch");

  KinematicBreakdown out;
  const Mat<Scalar> gen_vel =
      (gen_pos.bottomRows(frames - 1) - gen_pos.topRows(frames - 1)) *
      static_cast<Scalar>(fps);
  const Mat<Scalar> gt_vel =
      (gt_pos.bottomRows(frames - 1) - gt_pos.topRows(frames - 1)) *
      static_cast<Scalar>(fps);

  out.vel = static_cast<double>((gen_vel - gt_vel).squaredNorm()) /
            (static_cast<double>(joints) * (frames - 1));
  out.rot = static_cast<double>((gen_yaw - gt_yaw).squaredNorm()) / frames;
  out.traj_pos = static_cast<double>(
                     (gen_pos.leftCols(3) - gt_pos.leftCols(3)).squaredNorm()) /
                 frames;

  const Mat<Scalar> contacts = foot_contact_mask(
      gen_pos, foot_joints, fps, weights.gamma_v, weights.gamma_h);
  double planted = 0.0, skate = 0.0;
  for (Eigen::Index k = 0; k + 1 < frames; ++k)
    for (size_t f = 0; f < foot_joints.size(); ++f)
      if (contacts(k, f) != Scalar(0)) {
        planted += 1.0;
        skate += static_cast<double>(
            gen_vel.row(k).segment(3 * foot_joints[f], 3).squaredNorm());
      }
  out.foot = planted > 0.0 ? skate / planted : 0.0;

  out.total = weights.lambda_foot * out.foot + weights.lambda_vel * out.vel +
              weights.lambda_rot * out.rot + weights.lambda_traj * out.traj_pos;
  return out;
}

// ---------------------------------------------------------------------------
// Interaction graph
// ---------------------------------------------------------------------------

/**
 * Joint-pair geometry between the two agents.  Pair (i, j) — reactor joint i,
 * actor joint j — lives at flat index i*J + j.  rel_pos(k, pair) is the
 * 3-vector from the reactor's joint to the actor's joint at frame k; dist is
 * its norm; rel_vel is the per-frame difference of rel_pos.
 */
template <typename Scalar>
struct InteractionGraphT {
  Mat<Scalar> rel_pos;  ///< T x (J*J*3)
  Mat<Scalar> dist;     ///< T x (J*J)
  Mat<Scalar> rel_vel;  ///< (T-1) x (J*J*3)
  int joints = 0;
};
using InteractionGraph = InteractionGraphT<double>;

template <typename Scalar>
InteractionGraphT<Scalar> interaction_graph(const Mat<Scalar>& reactor_pos,
                                            const Mat<Scalar>& actor_pos) {
  if (reactor_pos.rows() != actor_pos.rows() ||
      reactor_pos.cols() != actor_pos.cols() || reactor_pos.cols() % 3 != 0)
    throw ConfigError("interaction graph: agents must share T x 3J shape");
  const Eigen::Index frames = reactor_pos.rows();
  const int joints = static_cast<int>(reactor_pos.cols() / 3);

  InteractionGraphT<Scalar> g;
  g.joints = joints;
  g.rel_pos.resize(frames, static_cast<Eigen::Index>(joints) * joints * 3);
  g.dist.resize(frames, static_cast<Eigen::Index>(joints) * joints);
  for (Eigen::Index k = 0; k < frames; ++k)
    for (int i = 0; i < joints; ++i)
      for (int j = 0; j < joints; ++j) {
        const Eigen::Index pair = static_cast<Eigen::Index>(i) * joints + j;
        const Eigen::Matrix<Scalar, 1, 3> rel =
            actor_pos.row(k).segment(3 * j, 3) -
            reactor_pos.row(k).segment(3 * i, 3);
        g.rel_pos.row(k).segment(3 * pair, 3) = rel;
        g.dist(k, pair) = rel.norm();
      }
  g.rel_vel = g.rel_pos.bottomRows(frames - 1) - g.rel_pos.topRows(frames - 1);
  return g;
}

/// Row-wise softmax over the joint-pair axis (one distribution per frame).
template <typename Scalar>
Mat<Scalar> pair_softmax(const Mat<Scalar>& dist) {
  Mat<Scalar> out(dist.rows(), dist.cols());
  for (Eigen::Index k = 0; k < dist.rows(); ++k) {
    const Scalar m = dist.row(k).maxCoeff();
    out.row(k) = (dist.row(k).array() - m).exp();
    out.row(k) /= out.row(k).sum();
  }
  return out;
}

namespace detail {
/// Active joint pairs: distances in the ground-truth graph within the contact
/// radius.  Returned as a 0/1 mask of the same shape as dist.
template <typename Scalar>
Mat<Scalar> active_pairs(const Mat<Scalar>& gt_dist, double radius) {
  return (gt_dist.array() <= static_cast<Scalar>(radius))
      .template cast<Scalar>()
      .matrix();
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Interaction losses
// ---------------------------------------------------------------------------

/**
 * Position interaction loss: over joint pairs that the ground truth brings
 * within the contact radius, the squared relative-position error weighted by
 * pair salience — softmax of distances per frame plus inverse distances,
 * both evaluated on generated and ground-truth graphs symmetrically.
 */
template <typename Scalar>
double position_interaction_loss(const InteractionGraphT<Scalar>& gen,
                                 const InteractionGraphT<Scalar>& gt,
                                 double contact_radius, double distance_floor) {
  const Mat<Scalar> active = detail::active_pairs(gt.dist, contact_radius);
  const double count = static_cast<double>(active.sum());
  if (count == 0.0) return 0.0;

  const Mat<Scalar> sm_gen = pair_softmax(gen.dist);
  const Mat<Scalar> sm_gt = pair_softmax(gt.dist);
  double total = 0.0;
  for (Eigen::Index k = 0; k < gt.dist.rows(); ++k)
    for (Eigen::Index p = 0; p < gt.dist.cols(); ++p) {
      if (active(k, p) == Scalar(0)) continue;
      const double inv_gen =
          1.0 / std::max<double>(gen.dist(k, p), distance_floor);
      const double inv_gt =
          1.0 / std::max<double>(gt.dist(k, p), distance_floor);
      const double weight =
          (static_cast<double>(sm_gen(k, p)) + sm_gt(k, p)) * (inv_gen + inv_gt);
      const double sq = (gen.rel_pos.row(k).segment(3 * p, 3) -
                         gt.rel_pos.row(k).segment(3 * p, 3))
                            .squaredNorm();
      total += weight * sq;
    }
  return total / count;
}

/**
 * Velocity interaction loss: same active set restricted to frames that have
 * a velocity sample, weighted by the softmax salience alone.
 */
template <typename Scalar>
double velocity_interaction_loss(const InteractionGraphT<Scalar>& gen,
                                 const InteractionGraphT<Scalar>& gt,
                                 double contact_radius, double distance_floor) {
  (void)distance_floor;  // the velocity weight carries no inverse-distance factor
  const Eigen::Index vel_frames = gt.rel_vel.rows();
  const Mat<Scalar> active =
      detail::active_pairs(Mat<Scalar>(gt.dist.topRows(vel_frames)),
                           contact_radius);
  const double count = static_cast<double>(active.sum());
  if (count == 0.0) return 0.0;

  const Mat<Scalar> sm_gen = pair_softmax(gen.dist);
  const Mat<Scalar> sm_gt = pair_softmax(gt.dist);
  double total = 0.0;
  for (Eigen::Index k = 0; k < vel_frames; ++k)
    for (Eigen::Index p = 0; p < gt.dist.cols(); ++p) {
      if (active(k, p) == Scalar(0)) continue;
      const double weight =
          static_cast<double>(sm_gen(k, p)) + static_cast<double>(sm_gt(k, p));
      const double sq = (gen.rel_vel.row(k).segment(3 * p, 3) -
                         gt.rel_vel.row(k).segment(3 * p, 3))
                            .squaredNorm();
      total += weight * sq;
    }
  return total / count;
}

// ---------------------------------------------------------------------------
// Gated assembly
// ---------------------------------------------------------------------------

struct LossComponents {
  double recon = 0.0;
  double foot = 0.0;
  double vel = 0.0;
  double rot = 0.0;
  double traj_pos = 0.0;
  double inter_pos = 0.0;
  double inter_vel = 0.0;
};

/// Full-body objective: reconstruction always, kinematic and interaction
/// groups only while the timestep is at or below the gate threshold.
inline double total_full_loss(int t, const LossWeights& w,
                              const LossComponents& c) {
  double total = w.lambda_recon * c.recon;
  if (t <= w.gate_threshold) {
    const double kin = w.lambda_foot * c.foot + w.lambda_vel * c.vel +
                       w.lambda_rot * c.rot + w.lambda_traj * c.traj_pos;
    const double inter =
        w.lambda_inter_pos * c.inter_pos + w.lambda_inter_vel * c.inter_vel;
    total += w.lambda_inter * inter + w.lambda_kin * kin;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Tape variants (for training)
// ---------------------------------------------------------------------------

template <typename Scalar>
struct InteractionLossNodes {
  typename Tape<Scalar>::Var position;
  typename Tape<Scalar>::Var velocity;
};

/**
 * Builds both interaction losses as autodiff nodes.  gen_positions is the
 * generated reactor's decoded global positions (T x 3J) on the tape; the
 * actor positions and the ground-truth graph are constants.  Gradients flow
 * through the error terms and through the generated-graph saliences.
 */
template <typename Scalar>
InteractionLossNodes<Scalar> interaction_loss_nodes(
    Tape<Scalar>& tape, typename Tape<Scalar>::Var gen_positions,
    const Mat<Scalar>& actor_positions, const InteractionGraphT<Scalar>& gt,
    double contact_radius, double distance_floor) {
  using M = Mat<Scalar>;
  const Eigen::Index frames = gt.dist.rows();

  const auto rel_pos = tape.pairwise_diff(gen_positions, actor_positions);
  const auto dist = tape.safe_sqrt(tape.sqnorm_groups(rel_pos, 3));
  const auto sm_gen = tape.row_softmax(dist);
  const M sm_gt = pair_softmax(gt.dist);

  InteractionLossNodes<Scalar> out;

  // Position term.
  const M active_p = detail::active_pairs(gt.dist, contact_radius);
  const double count_p = static_cast<double>(active_p.sum());
  if (count_p == 0.0) {
    out.position = tape.input(M::Zero(1, 1));
  } else {
    const auto inv_gen = tape.reciprocal_clamped(dist, distance_floor);
    M inv_gt(frames, gt.dist.cols());
    for (Eigen::Index k = 0; k < frames; ++k)
      for (Eigen::Index p = 0; p < gt.dist.cols(); ++p)
        inv_gt(k, p) = static_cast<Scalar>(
            1.0 / std::max<double>(gt.dist(k, p), distance_floor));
    const auto weight = tape.mul(tape.add_constant(sm_gen, sm_gt),
                                 tape.add_constant(inv_gen, inv_gt));
    const auto err = tape.sqnorm_groups(
        tape.add_constant(rel_pos, M(-gt.rel_pos)), 3);
    const auto masked = tape.mul_constant(tape.mul(weight, err), active_p);
    out.position = tape.scalar_mul(tape.sum_all(masked),
                                   static_cast<Scalar>(1.0 / count_p));
  }

  // Velocity term.
  const Eigen::Index vel_frames = gt.rel_vel.rows();
  const M active_v = detail::active_pairs(
      M(gt.dist.topRows(vel_frames)), contact_radius);
  const double count_v = static_cast<double>(active_v.sum());
  if (count_v == 0.0) {
    out.velocity = tape.input(M::Zero(1, 1));
  } else {
    const auto sm_gen_head = tape.slice_rows(sm_gen, 0, vel_frames);
    const auto weight =
        tape.add_constant(sm_gen_head, M(sm_gt.topRows(vel_frames)));
    const auto rel_vel = tape.frame_diff(rel_pos, Scalar(1));
    const auto err = tape.sqnorm_groups(
        tape.add_constant(rel_vel, M(-gt.rel_vel)), 3);
    const auto masked = tape.mul_constant(tape.mul(weight, err), active_v);
    out.velocity = tape.scalar_mul(tape.sum_all(masked),
                                   static_cast<Scalar>(1.0 / count_v));
  }
  return out;
}

template <typename Scalar>
struct KinematicLossNodes {
  typename Tape<Scalar>::Var foot;
  typename Tape<Scalar>::Var vel;
  typename Tape<Scalar>::Var rot;
  typename Tape<Scalar>::Var traj_pos;
  typename Tape<Scalar>::Var total;  ///< internally weighted sum
};

/**
 * Tape variant of the kinematic loss.  The contact mask is precomputed from
 * the generated motion's values (see foot_contact_mask) and enters as a
 * constant, so contact decisions do not carry gradients.
 */
template <typename Scalar>
KinematicLossNodes<Scalar> kinematic_loss_nodes(
    Tape<Scalar>& tape, typename Tape<Scalar>::Var gen_positions,
    typename Tape<Scalar>::Var gen_yaw, const Mat<Scalar>& gt_pos,
    const Mat<Scalar>& gt_yaw, const Mat<Scalar>& contacts,
    std::span<const int> foot_joints, const LossWeights& weights,
    double fps) {
  using M = Mat<Scalar>;
  const Eigen::Index frames = gt_pos.rows();
  const Eigen::Index joints = gt_pos.cols() / 3;
  if (frames < 2) throw MotionTooShortError("kinematic loss needs two frames");

  KinematicLossNodes<Scalar> out;
  const auto gen_vel = tape.frame_diff(gen_positions, static_cast<Scalar>(fps));
  const M gt_vel = (gt_pos.bottomRows(frames - 1) - gt_pos.topRows(frames - 1)) *
                   static_cast<Scalar>(fps);

  const auto vel_err =
      tape.sqnorm_groups(tape.add_constant(gen_vel, M(-gt_vel)), 3);
  out.vel = tape.mean_all(vel_err);

  const auto yaw_err = tape.add_constant(gen_yaw, M(-gt_yaw));
  out.rot = tape.mean_all(tape.mul(yaw_err, yaw_err));

  const auto root = tape.slice_cols(gen_positions, 0, 3);
  const auto root_err =
      tape.sqnorm_groups(tape.add_constant(root, M(-gt_pos.leftCols(3))), 3);
  out.traj_pos = tape.mean_all(root_err);

  // Spread the per-foot contact mask over the full joint axis.
  M selector = M::Zero(frames - 1, joints);
  for (Eigen::Index k = 0; k + 1 < frames; ++k)
    for (size_t f = 0; f < foot_joints.size(); ++f)
      selector(k, foot_joints[f]) = contacts(k, f);
  const double planted = static_cast<double>(selector.sum());
  if (planted > 0.0) {
    const auto speeds = tape.sqnorm_groups(gen_vel, 3);
    out.foot = tape.scalar_mul(tape.sum_all(tape.mul_constant(speeds, selector)),
                               static_cast<Scalar>(1.0 / planted));
  } else {
    out.foot = tape.input(M::Zero(1, 1));
  }

  out.total = tape.add(
      tape.add(tape.scalar_mul(out.foot, static_cast<Scalar>(weights.lambda_foot)),
               tape.scalar_mul(out.vel, static_cast<Scalar>(weights.lambda_vel))),
      tape.add(tape.scalar_mul(out.rot, static_cast<Scalar>(weights.lambda_rot)),
               tape.scalar_mul(out.traj_pos,
                               static_cast<Scalar>(weights.lambda_traj))));
  return out;
}

/**
 * Assembles the training objective on the tape.  When the timestep is above
 * the gate threshold the kinematic/interaction nodes are simply not
 * connected, so their gradient contribution is exactly zero.
 */
template <typename Scalar>
typename Tape<Scalar>::Var total_full_loss_node(
    Tape<Scalar>& tape, int t, const LossWeights& w,
    typename Tape<Scalar>::Var recon,
    const std::optional<KinematicLossNodes<Scalar>>& kin,
    const std::optional<InteractionLossNodes<Scalar>>& inter) {
  auto total = tape.scalar_mul(recon, static_cast<Scalar>(w.lambda_recon));
  if (t > w.gate_threshold) return total;
  if (inter) {
    const auto group = tape.add(
        tape.scalar_mul(inter->position, static_cast<Scalar>(w.lambda_inter_pos)),
        tape.scalar_mul(inter->velocity, static_cast<Scalar>(w.lambda_inter_vel)));
    total = tape.add(total,
                     tape.scalar_mul(group, static_cast<Scalar>(w.lambda_inter)));
  }
  if (kin)
    total = tape.add(
        total, tape.scalar_mul(kin->total, static_cast<Scalar>(w.lambda_kin)));
  return total;
}

}  // namespace moreact
