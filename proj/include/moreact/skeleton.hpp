/**
 * @file skeleton.hpp
 * @brief Skeleton description, poses, motion container and the planar rigid
 *        transform used to canonicalize two-person interactions.
 *
 * Conventions: y is up, the world is right-handed, and a character with zero
 * root yaw faces +z (its left side points to +x).  Yaw is a rotation about +y,
 * positive counter-clockwise when seen from above (from +y looking down).
 */
#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "moreact/common.hpp"

namespace moreact {

/// Rotation about the +y axis by angle a (radians).
inline Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, 0, s,
       0, 1, 0,
      -s, 0, c;
  return r;
}

// ---------------------------------------------------------------------------
// Skeleton
// ---------------------------------------------------------------------------

/// A kinematic tree with fixed per-joint offsets (metres, rest pose).
struct Skeleton {
  std::vector<std::string> joint_names;
  std::vector<int> parents;        ///< parents[0] == -1; parents[j] < j
  Matd offsets;                    ///< J x 3, offset from parent in parent frame
  std::array<int, 4> foot_joints;  ///< {l_ankle, r_ankle, l_foot, r_foot}

  int joint_count() const { return static_cast<int>(parents.size()); }

  /// Checks tree shape, topological parent order and offset finiteness.
  void validate() const {
    const int j = joint_count();
    if (j < 2) throw InvalidPoseError("skeleton needs at least two joints");
    if (static_cast<int>(joint_names.size()) != j || offsets.rows() != j ||
        offsets.cols() != 3)
      throw InvalidPoseError("skeleton arrays disagree on joint count");
    if (parents[0] != -1) throw InvalidPoseError("joint 0 must be the root");
    for (int i = 1; i < j; ++i)
      if (parents[i] < 0 || parents[i] >= i)
        throw InvalidPoseError("parents must come before children");
    if (!all_finite(offsets))
      throw InvalidPoseError("non-finite skeleton offsets");
    for (int f : foot_joints)
      if (f <= 0 || f >= j) throw InvalidPoseError("bad foot joint index");
  }
};

/**
 * The 22-joint body used throughout:
 *
 *   0 pelvis   1 l_hip     2 r_hip     3 spine1   4 l_knee    5 r_knee
 *   6 spine2   7 l_ankle   8 r_ankle   9 spine3  10 l_foot   11 r_foot
 *  12 neck    13 l_collar 14 r_collar 15 head    16 l_shoulder
 *  17 r_shoulder 18 l_elbow 19 r_elbow 20 l_wrist 21 r_wrist
 *
 * Offsets put the pelvis of a standing character at y ~= 0.94 m (set through
 * root position, the root offset itself is zero), ankles at 0.07 m and toes
 * at 0.01 m.  The rest pose has the arms hanging down along the body.
 */
inline const Skeleton& smpl22() {
  static const Skeleton skel = [] {
    Skeleton s;
    s.joint_names = {
        "pelvis", "l_hip",      "r_hip",      "spine1", "l_knee",  "r_knee",
        "spine2", "l_ankle",    "r_ankle",    "spine3", "l_foot",  "r_foot",
        "neck",   "l_collar",   "r_collar",   "head",   "l_shoulder",
        "r_shoulder", "l_elbow", "r_elbow",   "l_wrist", "r_wrist"};
    s.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};
    s.offsets = Matd::Zero(kJoints, 3);
    auto set = [&s](int j, double x, double y, double z) {
      s.offsets.row(j) << x, y, z;
    };
    set(1, 0.09, -0.06, 0.0);    // l_hip
    set(2, -0.09, -0.06, 0.0);   // r_hip
    set(3, 0.0, 0.11, 0.0);      // spine1
    set(4, 0.0, -0.40, 0.0);     // l_knee
    set(5, 0.0, -0.40, 0.0);     // r_knee
    set(6, 0.0, 0.12, 0.0);      // spine2
    set(7, 0.0, -0.41, 0.0);     // l_ankle
    set(8, 0.0, -0.41, 0.0);     // r_ankle
    set(9, 0.0, 0.12, 0.0);      // spine3
    set(10, 0.0, -0.06, 0.12);   // l_foot
    set(11, 0.0, -0.06, 0.12);   // r_foot
    set(12, 0.0, 0.14, 0.0);     // neck
    set(13, 0.07, 0.10, 0.0);    // l_collar
    set(14, -0.07, 0.10, 0.0);   // r_collar
    set(15, 0.0, 0.12, 0.0);     // head
    set(16, 0.11, 0.0, 0.0);     // l_shoulder
    set(17, -0.11, 0.0, 0.0);    // r_shoulder
    set(18, 0.0, -0.27, 0.0);    // l_elbow
    set(19, 0.0, -0.27, 0.0);    // r_elbow
    set(20, 0.0, -0.25, 0.0);    // l_wrist
    set(21, 0.0, -0.25, 0.0);    // r_wrist
    s.foot_joints = {7, 8, 10, 11};
    s.validate();
    return s;
  }();
  return skel;
}

/// Pelvis height of an upright, standing smpl22 character (metres).
inline constexpr double kStandingRootHeight = 0.94;

// ---------------------------------------------------------------------------
// Pose
// ---------------------------------------------------------------------------

/// One frame of articulation: root yaw + root position + per-joint local
/// rotations in the 6-d representation (first two rotation-matrix columns,
/// stored as [c0x c0y c0z c1x c1y c1z]).
struct Pose {
  double root_yaw = 0.0;  ///< wrapped to (-pi, pi]
  Vec3 root_pos = Vec3::Zero();
  Matd joint_rot6d;  ///< (J-1) x 6, row j-1 belongs to joint j

  static Pose rest(const Skeleton& skel) {
    Pose p;
    p.joint_rot6d = Matd::Zero(skel.joint_count() - 1, 6);
    for (int r = 0; r < p.joint_rot6d.rows(); ++r) {
      p.joint_rot6d(r, 0) = 1.0;  // identity: columns (1,0,0) and (0,1,0)
      p.joint_rot6d(r, 4) = 1.0;
    }
    return p;
  }

  void validate(const Skeleton& skel) const {
    if (joint_rot6d.rows() != skel.joint_count() - 1 || joint_rot6d.cols() != 6)
      throw InvalidPoseError("joint_rot6d has wrong shape");
    if (!std::isfinite(root_yaw) || !all_finite(root_pos) || !all_finite(joint_rot6d))
      throw InvalidPoseError("non-finite pose values");
    if (root_yaw <= -M_PI - 1e-12 || root_yaw > M_PI + 1e-12)
      throw InvalidPoseError("root yaw outside (-pi, pi]");
  }
};

// ---------------------------------------------------------------------------
// MotionSequence
// ---------------------------------------------------------------------------

/// A motion clip: T frames of kFeatureDim features plus playback metadata.
struct MotionSequence {
  Matd features;  ///< T x kFeatureDim
  double fps = 20.0;
  std::string skeleton_id = "smpl22";

  int frames() const { return static_cast<int>(features.rows()); }
  double duration() const { return frames() / fps; }

  double yaw(int t) const { return features(t, kYawDim); }
  Vec3 root_pos(int t) const {
    return features.block<1, 3>(t, kRootPosOffset).transpose();
  }
};

/// Throws InvalidMotionError unless m is a well-formed feature matrix.
inline void validate_motion(const MotionSequence& m) {
  if (m.features.cols() != kFeatureDim)
    throw InvalidMotionError("motion must have " + std::to_string(kFeatureDim) +
                             " feature columns, got " +
                             std::to_string(m.features.cols()));
  if (m.features.rows() < 1) throw InvalidMotionError("motion has no frames");
  if (!(m.fps > 0.0) || !std::isfinite(m.fps))
    throw InvalidMotionError("fps must be positive and finite");
  if (!all_finite(m.features))
    throw InvalidMotionError("motion contains non-finite values");
}

// ---------------------------------------------------------------------------
// RigidTransform2D
// ---------------------------------------------------------------------------

/// A ground-plane rigid motion p' = R_y(yaw) * p + t with t.y == 0.
/// Heights are never changed, which keeps foot contacts intact.
struct RigidTransform2D {
  double yaw = 0.0;
  Vec3 translation = Vec3::Zero();

  static RigidTransform2D identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rot_y(yaw) * p + translation; }

  /// this ∘ other: apply(other.apply(p)).
  RigidTransform2D compose(const RigidTransform2D& other) const {
    RigidTransform2D out;
    out.yaw = yaw + other.yaw;
    out.translation = rot_y(yaw) * other.translation + translation;
    return out;
  }

  RigidTransform2D inverse() const {
    RigidTransform2D out;
    out.yaw = -yaw;
    out.translation = -(rot_y(-yaw) * translation);
    return out;
  }

  /**
   * Applies the transform to a motion in feature space.  Only the trajectory
   * dims change: yaw gets a constant added (preserving temporal continuity of
   * the unwrapped angle) and the root position is rotated and translated.
   * Root-relative blocks (local positions, rotations, velocities, contacts)
   * are invariant by construction.
   */
  MotionSequence apply_to_motion(const MotionSequence& m) const {
    MotionSequence out = m;
    const Mat3 r = rot_y(yaw);
    for (int t = 0; t < out.frames(); ++t) {
      out.features(t, kYawDim) += yaw;
      const Vec3 p = r * m.root_pos(t) + translation;
      out.features.block<1, 3>(t, kRootPosOffset) = p.transpose();
    }
    return out;
  }
};

}  // namespace moreact
