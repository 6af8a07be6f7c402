/**
 * @file kinematics.hpp
 * @brief Forward kinematics, the pose <-> feature-vector codec, foot contact
 *        labelling and canonical alignment of interaction pairs.
 */
#pragma once

#include <utility>
#include <vector>

#include "moreact/common.hpp"
#include "moreact/skeleton.hpp"

namespace moreact {

// ---------------------------------------------------------------------------
// 6-d rotation representation
// ---------------------------------------------------------------------------

/**
 * Reconstructs a rotation matrix from its 6-d encoding (the first two columns)
 * by Gram-Schmidt orthonormalization; the third column is their cross product.
 * Throws InvalidPoseError when the two vectors are (nearly) parallel or zero.
 */
inline Mat3 rot6d_to_matrix(const Eigen::Matrix<double, 6, 1>& r6) {
  const Vec3 a = r6.head<3>();
  const Vec3 b = r6.tail<3>();
  constexpr double eps = 1e-8;
  const double na = a.norm();
  if (na < eps) throw InvalidPoseError("degenerate 6-d rotation: zero first axis");
  const Vec3 c0 = a / na;
  Vec3 c1 = b - c0.dot(b) * c0;
  const double n1 = c1.norm();
  if (n1 < eps)
    throw InvalidPoseError("degenerate 6-d rotation: axes are parallel");
  c1 /= n1;
  Mat3 r;
  r.col(0) = c0;
  r.col(1) = c1;
  r.col(2) = c0.cross(c1);
  return r;
}

/// First two columns of R, flattened to [c0; c1].
inline Eigen::Matrix<double, 6, 1> matrix_to_rot6d(const Mat3& r) {
  Eigen::Matrix<double, 6, 1> out;
  out.head<3>() = r.col(0);
  out.tail<3>() = r.col(1);
  return out;
}

// ---------------------------------------------------------------------------
// Forward kinematics
// ---------------------------------------------------------------------------

/**
 * Global joint positions of one pose as a J x 3 matrix.
 *
 * The root's global rotation is R_y(root_yaw); every other joint composes its
 * parent's global rotation with its own local rotation, and sits at
 * parent_position + parent_rotation * offset.  Row 0 equals pose.root_pos.
 */
inline Matd forward_kinematics(const Skeleton& skel, const Pose& pose) {
  pose.validate(skel);
  const int j = skel.joint_count();
  Matd positions(j, 3);
  std::vector<Mat3> global_rot(static_cast<size_t>(j));

  global_rot[0] = rot_y(pose.root_yaw);
  positions.row(0) = pose.root_pos.transpose();
  for (int i = 1; i < j; ++i) {
    const int p = skel.parents[i];
    const Mat3 local = rot6d_to_matrix(pose.joint_rot6d.row(i - 1).transpose());
    global_rot[i] = global_rot[p] * local;
    const Vec3 pos = positions.row(p).transpose() +
                     global_rot[p] * skel.offsets.row(i).transpose();
    positions.row(i) = pos.transpose();
  }
  return positions;
}

// ---------------------------------------------------------------------------
// Velocities and foot contacts
// ---------------------------------------------------------------------------

/// Forward differences scaled to m/s: (T-1) x 3J from T x 3J positions.
inline Matd compute_velocities(const Matd& positions, double fps) {
  if (positions.rows() < 2)
    throw MotionTooShortError("need at least two frames for velocities");
  if (!(fps > 0.0)) throw InvalidMotionError("fps must be positive");
  return (positions.bottomRows(positions.rows() - 1) -
          positions.topRows(positions.rows() - 1)) *
         fps;
}

struct ContactThresholds {
  double gamma_v = 0.10;  ///< max foot speed for contact (m/s)
  double gamma_h = 0.08;  ///< max foot height for contact (m)
};

/**
 * Binary contact labels (T x 4) for the skeleton's foot joints, ordered
 * {l_ankle, r_ankle, l_foot, r_foot}.  Frame k is in contact when the foot's
 * speed between frames k and k+1 is at most gamma_v and its height at frame k
 * is at most gamma_h; the last frame copies its predecessor.
 */
inline Matd foot_contact_labels(const Matd& positions, const Skeleton& skel,
                                double fps, const ContactThresholds& thr = {}) {
  const int t = static_cast<int>(positions.rows());
  if (t < 2) throw MotionTooShortError("need at least two frames for contacts");
  if (positions.cols() != 3 * skel.joint_count())
    throw InvalidMotionError("positions have wrong width for skeleton");
  Matd contacts = Matd::Zero(t, kContactDims);
  for (int f = 0; f < kContactDims; ++f) {
    const int joint = skel.foot_joints[static_cast<size_t>(f)];
    for (int k = 0; k + 1 < t; ++k) {
      const Vec3 a = positions.block<1, 3>(k, 3 * joint).transpose();
      const Vec3 b = positions.block<1, 3>(k + 1, 3 * joint).transpose();
      const double speed = (b - a).norm() * fps;
      const double height = a.y();
      contacts(k, f) = (speed <= thr.gamma_v && height <= thr.gamma_h) ? 1.0 : 0.0;
    }
    contacts(t - 1, f) = contacts(t - 2, f);
  }
  return contacts;
}

// ---------------------------------------------------------------------------
// Pose sequence -> feature matrix (encode) and back
// ---------------------------------------------------------------------------

/**
 * Encodes a pose sequence into the T x 263 feature representation described
 * in common.hpp.  Yaw is stored unwrapped: the first frame lies in (-pi, pi]
 * and later frames accumulate wrapped frame-to-frame deltas, so the channel
 * is continuous even when the character spins past +-pi.
 */
inline MotionSequence encode(const Skeleton& skel, const std::vector<Pose>& poses,
                             double fps, const ContactThresholds& thr = {}) {
  const int t = static_cast<int>(poses.size());
  if (t < 2) throw MotionTooShortError("need at least two poses to encode");
  if (!(fps > 0.0) || !std::isfinite(fps))
    throw InvalidMotionError("fps must be positive and finite");

  // Forward kinematics for every frame, flattened to T x 3J.
  const int j = skel.joint_count();
  Matd positions(t, 3 * j);
  for (int k = 0; k < t; ++k) {
    const Matd p = forward_kinematics(skel, poses[static_cast<size_t>(k)]);
    for (int i = 0; i < j; ++i) positions.block<1, 3>(k, 3 * i) = p.row(i);
  }

  MotionSequence m;
  m.fps = fps;
  m.features = Matd::Zero(t, kFeatureDim);

  // Unwrapped yaw channel.
  double yaw = wrap_to_pi(poses[0].root_yaw);
  m.features(0, kYawDim) = yaw;
  for (int k = 1; k < t; ++k) {
    yaw += wrap_to_pi(poses[static_cast<size_t>(k)].root_yaw -
                      poses[static_cast<size_t>(k - 1)].root_yaw);
    m.features(k, kYawDim) = yaw;
  }

  const Matd velocities = compute_velocities(positions, fps);
  for (int k = 0; k < t; ++k) {
    const Mat3 unrotate = rot_y(-m.features(k, kYawDim));
    const Vec3 root = positions.block<1, 3>(k, 0).transpose();
    m.features.block<1, 3>(k, kRootPosOffset) = root.transpose();

    for (int i = 1; i < j; ++i) {
      const Vec3 local =
          unrotate * (positions.block<1, 3>(k, 3 * i).transpose() - root);
      m.features.block<1, 3>(k, local_pos_dim(i)) = local.transpose();

      // Re-orthonormalize so stored rotation features are always valid.
      const Mat3 r = rot6d_to_matrix(
          poses[static_cast<size_t>(k)].joint_rot6d.row(i - 1).transpose());
      m.features.block<1, 6>(k, rot6d_dim(i)) = matrix_to_rot6d(r).transpose();
    }

    if (k < t - 1) {
      for (int i = 0; i < j; ++i) {
        const Vec3 v = unrotate * velocities.block<1, 3>(k, 3 * i).transpose();
        m.features.block<1, 3>(k, velocity_dim(i)) = v.transpose();
      }
    } else {
      // Last frame repeats its predecessor's stored (root-frame) row.
      m.features.row(k).segment(kVelocityOffset, 3 * j) =
          m.features.row(k - 1).segment(kVelocityOffset, 3 * j);
    }
  }

  m.features.rightCols<kContactDims>() =
      foot_contact_labels(positions, skel, fps, thr);
  validate_motion(m);
  return m;
}

/**
 * Recovers global joint positions (T x 3J) from the feature representation:
 * joint 0 is the stored root position, every other joint is its local
 * position rotated by the frame's yaw and offset by the root.  Rotation,
 * velocity and contact channels do not participate.
 */
inline Matd decode(const MotionSequence& m) {
  validate_motion(m);
  const int t = m.frames();
  Matd positions(t, 3 * kJoints);
  for (int k = 0; k < t; ++k) {
    const Mat3 rotate = rot_y(m.features(k, kYawDim));
    const Vec3 root = m.root_pos(k);
    positions.block<1, 3>(k, 0) = root.transpose();
    for (int i = 1; i < kJoints; ++i) {
      const Vec3 local = m.features.block<1, 3>(k, local_pos_dim(i)).transpose();
      positions.block<1, 3>(k, 3 * i) = (rotate * local + root).transpose();
    }
  }
  return positions;
}

/// Rebuilds per-frame poses (yaw wrapped back to (-pi, pi]) for export paths.
inline std::vector<Pose> decode_poses(const MotionSequence& m, const Skeleton& skel) {
  validate_motion(m);
  if (skel.joint_count() != kJoints)
    throw InvalidMotionError("feature layout is fixed to 22 joints");
  std::vector<Pose> poses(static_cast<size_t>(m.frames()));
  for (int k = 0; k < m.frames(); ++k) {
    Pose& p = poses[static_cast<size_t>(k)];
    p.root_yaw = wrap_to_pi(m.yaw(k));
    p.root_pos = m.root_pos(k);
    p.joint_rot6d = Matd(kJoints - 1, 6);
    for (int i = 1; i < kJoints; ++i) {
      // Orthonormalize on the way out; generated features are only
      // approximately on the rotation manifold.
      const Mat3 r = rot6d_to_matrix(
          m.features.block<1, 6>(k, rot6d_dim(i)).transpose());
      p.joint_rot6d.row(i - 1) = matrix_to_rot6d(r).transpose();
    }
  }
  return poses;
}

// ---------------------------------------------------------------------------
// Canonical alignment
// ---------------------------------------------------------------------------

/**
 * The ground-plane transform that moves this motion's first frame to the
 * canonical pose: root over the origin (x = z = 0, height preserved) and
 * yaw zero (facing +z).
 */
inline RigidTransform2D compute_canonical_transform(const MotionSequence& m) {
  validate_motion(m);
  RigidTransform2D tf;
  tf.yaw = -m.yaw(0);
  const Vec3 p0 = m.root_pos(0);
  tf.translation = Vec3(0.0, p0.y(), 0.0) - rot_y(tf.yaw) * p0;
  return tf;
}

struct CanonicalPair {
  MotionSequence actor;
  MotionSequence reactor;
  RigidTransform2D transform;  ///< what was applied to both motions
};

/**
 * Rigidly moves an interaction pair so the actor starts at the origin facing
 * +z.  One shared transform is applied to both people, so all relative
 * geometry (distances, contacts) is exactly preserved.
 */
inline CanonicalPair canonicalize_pair(const MotionSequence& actor,
                                       const MotionSequence& reactor) {
  validate_motion(reactor);
  CanonicalPair out;
  out.transform = compute_canonical_transform(actor);
  out.actor = out.transform.apply_to_motion(actor);
  out.reactor = out.transform.apply_to_motion(reactor);
  return out;
}

}  // namespace moreact
