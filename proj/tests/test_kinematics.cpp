// Kinematics tests: forward kinematics against an independent homogeneous
// matrix-chain oracle, the 6-d rotation codec, the feature encode/decode
// round trip, foot contact labelling and canonical pair alignment.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "moreact/common.hpp"
#include "moreact/kinematics.hpp"
#include "moreact/skeleton.hpp"

using namespace moreact;

namespace {

// Independent oracle: chain 4x4 homogeneous transforms down the tree.
Matd fk_oracle(const Skeleton& skel, const Pose& pose) {
  const int j = skel.joint_count();
  std::vector<Eigen::Matrix4d> world(static_cast<size_t>(j));
  Eigen::Matrix4d root = Eigen::Matrix4d::Identity();
  root.topLeftCorner<3, 3>() = rot_y(pose.root_yaw);
  root.topRightCorner<3, 1>() = pose.root_pos;
  world[0] = root;
  for (int i = 1; i < j; ++i) {
    Eigen::Matrix4d local = Eigen::Matrix4d::Identity();
    local.topLeftCorner<3, 3>() =
        rot6d_to_matrix(pose.joint_rot6d.row(i - 1).transpose());
    local.topRightCorner<3, 1>() = skel.offsets.row(i).transpose();
    world[static_cast<size_t>(i)] = world[static_cast<size_t>(skel.parents[i])] * local;
  }
  Matd out(j, 3);
  for (int i = 0; i < j; ++i)
    out.row(i) = world[static_cast<size_t>(i)].topRightCorner<3, 1>().transpose();
  return out;
}

Mat3 random_rotation(RandomStream& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

Pose random_pose(const Skeleton& skel, RandomStream& rng, double joint_scale = 1.0) {
  Pose p = Pose::rest(skel);
  p.root_yaw = wrap_to_pi(rng.normal() * 2.0);
  p.root_pos = Vec3(rng.normal(), 0.9 + 0.1 * rng.uniform(), rng.normal());
  for (int i = 0; i < p.joint_rot6d.rows(); ++i) {
    Mat3 r = random_rotation(rng);
    if (joint_scale < 1.0) {
      // Blend towards identity for "small" articulation.
      Eigen::AngleAxisd aa(r);
      r = Eigen::AngleAxisd(aa.angle() * joint_scale, aa.axis()).toRotationMatrix();
    }
    p.joint_rot6d.row(i) = matrix_to_rot6d(r).transpose();
  }
  return p;
}

std::vector<Pose> random_pose_sequence(const Skeleton& skel, int frames,
                                       std::uint64_t seed) {
  RandomStream rng(seed, "test.pose_sequence");
  std::vector<Pose> poses;
  Pose p = random_pose(skel, rng, 0.4);
  for (int k = 0; k < frames; ++k) {
    // Smooth drift so the sequence resembles motion rather than noise.
    p.root_yaw = wrap_to_pi(p.root_yaw + 0.05 * rng.normal());
    p.root_pos += 0.02 * Vec3(rng.normal(), 0.2 * rng.normal(), rng.normal());
    for (int i = 0; i < p.joint_rot6d.rows(); ++i) {
      const Mat3 r = rot6d_to_matrix(p.joint_rot6d.row(i).transpose());
      const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
      const Mat3 delta = Eigen::AngleAxisd(0.03 * rng.normal(), axis).toRotationMatrix();
      p.joint_rot6d.row(i) = matrix_to_rot6d(r * delta).transpose();
    }
    poses.push_back(p);
  }
  return poses;
}

}  // namespace

TEST_CASE("rot_y follows the y-up right-handed convention") {
  // yaw = pi/2 turns the character's +x axis towards -z.
  const Vec3 v = rot_y(M_PI / 2.0) * Vec3(1, 0, 0);
  CHECK(v.x() == Catch::Approx(0.0).margin(1e-15));
  CHECK(v.y() == Catch::Approx(0.0).margin(1e-15));
  CHECK(v.z() == Catch::Approx(-1.0).margin(1e-15));
  // Determinant +1, orthonormal.
  const Mat3 r = rot_y(0.7123);
  CHECK((r * r.transpose() - Mat3::Identity()).norm() < 1e-14);
  CHECK(r.determinant() == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("wrap_to_pi lands in the half-open interval (-pi, pi]") {
  CHECK(wrap_to_pi(0.0) == 0.0);
  CHECK(wrap_to_pi(M_PI) == Catch::Approx(M_PI));
  CHECK(wrap_to_pi(-M_PI) == Catch::Approx(M_PI));
  CHECK(wrap_to_pi(3.0 * M_PI / 2.0) == Catch::Approx(-M_PI / 2.0));
  CHECK(wrap_to_pi(-3.0 * M_PI / 2.0) == Catch::Approx(M_PI / 2.0));
  RandomStream rng(11, "test.wrap");
  for (int i = 0; i < 1000; ++i) {
    const double a = 50.0 * (rng.uniform() - 0.5);
    const double w = wrap_to_pi(a);
    CHECK(w > -M_PI);
    CHECK(w <= M_PI);
    // Same angle modulo 2*pi.
    CHECK(std::remainder(a - w, 2.0 * M_PI) == Catch::Approx(0.0).margin(1e-9));
  }
}

TEST_CASE("6-d rotation codec round-trips and orthonormalizes") {
  RandomStream rng(7, "test.rot6d");
  for (int i = 0; i < 200; ++i) {
    const Mat3 r = random_rotation(rng);
    const Mat3 back = rot6d_to_matrix(matrix_to_rot6d(r));
    CHECK((back - r).cwiseAbs().maxCoeff() < 1e-12);
  }
  // Noisy features still produce a proper rotation.
  for (int i = 0; i < 200; ++i) {
    Eigen::Matrix<double, 6, 1> noisy = rng.normal_matrix<double>(6, 1);
    const Mat3 r = rot6d_to_matrix(noisy);
    CHECK((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.determinant() == Catch::Approx(1.0).epsilon(1e-10));
    // First column direction is preserved by Gram-Schmidt.
    const Vec3 a = noisy.head<3>().normalized();
    CHECK((r.col(0) - a).norm() < 1e-12);
  }
}

TEST_CASE("degenerate 6-d rotations are rejected") {
  Eigen::Matrix<double, 6, 1> zero_first = Eigen::Matrix<double, 6, 1>::Zero();
  zero_first.tail<3>() << 0, 1, 0;
  CHECK_THROWS_AS(rot6d_to_matrix(zero_first), InvalidPoseError);

  Eigen::Matrix<double, 6, 1> parallel;
  parallel << 1, 2, 3, 2, 4, 6;
  CHECK_THROWS_AS(rot6d_to_matrix(parallel), InvalidPoseError);
}

TEST_CASE("smpl22 skeleton validates and has sane rest geometry") {
  const Skeleton& skel = smpl22();
  REQUIRE(skel.joint_count() == kJoints);
  skel.validate();

  Pose rest = Pose::rest(skel);
  rest.root_pos = Vec3(0.0, kStandingRootHeight, 0.0);
  const Matd p = forward_kinematics(skel, rest);

  // Root exactly at root_pos.
  CHECK((p.row(0).transpose() - rest.root_pos).norm() == 0.0);
  // Left/right symmetry across the x = 0 plane.
  CHECK(p(1, 0) == Catch::Approx(-p(2, 0)));
  CHECK(p(20, 0) == Catch::Approx(-p(21, 0)));
  // Feet near the ground, head on top.
  CHECK(p(7, 1) == Catch::Approx(0.07));   // l_ankle height
  CHECK(p(10, 1) == Catch::Approx(0.01));  // l_foot height
  CHECK(p(15, 1) > 1.4);                   // head
  // Hanging arms: left wrist at (0.18, 0.87, 0).
  CHECK(p(20, 0) == Catch::Approx(0.18));
  CHECK(p(20, 1) == Catch::Approx(0.87));

  Skeleton broken = skel;
  broken.parents[3] = 5;  // parent after child
  CHECK_THROWS_AS(broken.validate(), InvalidPoseError);
}

TEST_CASE("forward kinematics matches the homogeneous matrix-chain oracle") {
  const Skeleton& skel = smpl22();
  RandomStream rng(7, "test.fk");
  for (int trial = 0; trial < 50; ++trial) {
    const Pose pose = random_pose(skel, rng);
    const Matd ours = forward_kinematics(skel, pose);
    const Matd oracle = fk_oracle(skel, pose);
    REQUIRE((ours - oracle).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward kinematics is equivariant under yaw rotation about the root") {
  const Skeleton& skel = smpl22();
  RandomStream rng(13, "test.fk_equiv");
  for (int trial = 0; trial < 20; ++trial) {
    Pose pose = random_pose(skel, rng);
    const Matd base = forward_kinematics(skel, pose);
    const double delta = 2.0 * (rng.uniform() - 0.5);
    Pose turned = pose;
    turned.root_yaw = wrap_to_pi(pose.root_yaw + delta);
    const Matd rotated = forward_kinematics(skel, turned);
    const Mat3 r = rot_y(delta);
    for (int i = 0; i < kJoints; ++i) {
      const Vec3 expected =
          r * (base.row(i).transpose() - pose.root_pos) + pose.root_pos;
      CHECK((rotated.row(i).transpose() - expected).norm() < 1e-12);
    }
  }
}

TEST_CASE("encode/decode reproduces forward kinematics positions") {
  const Skeleton& skel = smpl22();
  const auto poses = random_pose_sequence(skel, 24, 42);
  const MotionSequence m = encode(skel, poses, 20.0);
  REQUIRE(m.frames() == 24);
  REQUIRE(m.features.cols() == kFeatureDim);

  const Matd decoded = decode(m);
  for (int k = 0; k < m.frames(); ++k) {
    const Matd ref = forward_kinematics(skel, poses[static_cast<size_t>(k)]);
    for (int i = 0; i < kJoints; ++i) {
      const Vec3 d = decoded.block<1, 3>(k, 3 * i).transpose() -
                     ref.row(i).transpose();
      REQUIRE(d.norm() < 1e-9);
    }
  }
}

TEST_CASE("decode_poses round-trips articulation") {
  const Skeleton& skel = smpl22();
  const auto poses = random_pose_sequence(skel, 10, 99);
  const MotionSequence m = encode(skel, poses, 20.0);
  const auto back = decode_poses(m, skel);
  REQUIRE(back.size() == poses.size());
  for (size_t k = 0; k < poses.size(); ++k) {
    CHECK(wrap_to_pi(back[k].root_yaw - poses[k].root_yaw) ==
          Catch::Approx(0.0).margin(1e-9));
    CHECK((back[k].root_pos - poses[k].root_pos).norm() < 1e-12);
    CHECK((back[k].joint_rot6d - poses[k].joint_rot6d).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("encoded yaw channel stays continuous through the +-pi boundary") {
  const Skeleton& skel = smpl22();
  std::vector<Pose> poses;
  Pose p = Pose::rest(skel);
  p.root_pos = Vec3(0, kStandingRootHeight, 0);
  // Spin two full turns; wrapped yaw crosses the boundary four times.
  const int t = 80;
  for (int k = 0; k < t; ++k) {
    p.root_yaw = wrap_to_pi(4.0 * M_PI * k / t);
    poses.push_back(p);
  }
  const MotionSequence m = encode(skel, poses, 20.0);
  for (int k = 1; k < t; ++k) {
    const double step = m.yaw(k) - m.yaw(k - 1);
    CHECK(std::abs(step) < 0.5);  // no 2*pi jumps
  }
  CHECK(m.yaw(t - 1) == Catch::Approx(4.0 * M_PI * (t - 1) / t).margin(1e-9));
}

TEST_CASE("velocity channel uses forward differences with repeated last frame") {
  const Skeleton& skel = smpl22();
  // Constant world velocity, constant articulation, zero yaw.
  std::vector<Pose> poses;
  Pose p = Pose::rest(skel);
  const Vec3 v(0.6, 0.0, 1.2);
  const double fps = 20.0;
  for (int k = 0; k < 12; ++k) {
    p.root_pos = Vec3(0, kStandingRootHeight, 0) + v * (k / fps);
    poses.push_back(p);
  }
  const MotionSequence m = encode(skel, poses, fps);
  for (int k = 0; k < m.frames(); ++k) {
    for (int j = 0; j < kJoints; ++j) {
      const Vec3 vel = m.features.block<1, 3>(k, velocity_dim(j)).transpose();
      CHECK((vel - v).norm() < 1e-9);  // yaw = 0, so local == global
    }
  }
  // Last frame must copy its predecessor even for varying motion.
  const auto wobble = random_pose_sequence(skel, 9, 5);
  const MotionSequence w = encode(skel, wobble, fps);
  CHECK((w.features.row(8).segment(kVelocityOffset, 3 * kJoints) -
         w.features.row(7).segment(kVelocityOffset, 3 * kJoints))
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("velocities are expressed in the root frame") {
  const Skeleton& skel = smpl22();
  std::vector<Pose> poses;
  Pose p = Pose::rest(skel);
  const double yaw = M_PI / 2.0;
  const Vec3 v(1.0, 0.0, 0.0);  // world +x
  for (int k = 0; k < 6; ++k) {
    p.root_yaw = yaw;
    p.root_pos = Vec3(0, kStandingRootHeight, 0) + v * (k / 20.0);
    poses.push_back(p);
  }
  const MotionSequence m = encode(skel, poses, 20.0);
  // World +x seen from a yaw of +pi/2 is local (0, 0, 1):
  // rot_y(-pi/2) * (1,0,0) = (0,0,1).
  const Vec3 local = m.features.block<1, 3>(0, velocity_dim(0)).transpose();
  CHECK((local - Vec3(0, 0, 1)).norm() < 1e-9);
}

TEST_CASE("foot contact labels react to speed and height thresholds") {
  const Skeleton& skel = smpl22();
  const int t = 6;
  Matd pos = Matd::Zero(t, 3 * kJoints);
  // Keep all joints high by default so only the probed foot can be in contact.
  for (int k = 0; k < t; ++k)
    for (int j = 0; j < kJoints; ++j) pos(k, 3 * j + 1) = 1.0;

  const int lankle = skel.foot_joints[0];
  for (int k = 0; k < t; ++k) pos(k, 3 * lankle + 1) = 0.05;  // low and static

  Matd c = foot_contact_labels(pos, skel, 20.0, {0.10, 0.08});
  for (int k = 0; k < t; ++k) {
    CHECK(c(k, 0) == 1.0);
    CHECK(c(k, 1) == 0.0);  // other feet are high
  }

  // Fast foot: 0.02 m per frame at 20 fps = 0.4 m/s > gamma_v.
  Matd pos2 = pos;
  for (int k = 0; k < t; ++k) pos2(k, 3 * lankle + 0) = 0.02 * k;
  c = foot_contact_labels(pos2, skel, 20.0, {0.10, 0.08});
  for (int k = 0; k < t; ++k) CHECK(c(k, 0) == 0.0);

  // Speed exactly at the threshold still counts as contact.
  Matd pos3 = pos;
  for (int k = 0; k < t; ++k) pos3(k, 3 * lankle + 0) = 0.005 * k;  // 0.10 m/s
  c = foot_contact_labels(pos3, skel, 20.0, {0.10, 0.08});
  CHECK(c(0, 0) == 1.0);

  // High foot never contacts regardless of speed.
  Matd pos4 = pos;
  for (int k = 0; k < t; ++k) pos4(k, 3 * lankle + 1) = 0.5;
  c = foot_contact_labels(pos4, skel, 20.0, {0.10, 0.08});
  for (int k = 0; k < t; ++k) CHECK(c(k, 0) == 0.0);

  // Last row copies its predecessor.
  Matd pos5 = pos;
  pos5(t - 1, 3 * lankle + 1) = 2.0;  // only affects the (t-1) window
  c = foot_contact_labels(pos5, skel, 20.0, {0.10, 0.08});
  CHECK(c(t - 1, 0) == c(t - 2, 0));
}

TEST_CASE("too-short inputs are rejected") {
  const Skeleton& skel = smpl22();
  CHECK_THROWS_AS(compute_velocities(Matd::Zero(1, 3 * kJoints), 20.0),
                  MotionTooShortError);
  CHECK_THROWS_AS(foot_contact_labels(Matd::Zero(1, 3 * kJoints), skel, 20.0),
                  MotionTooShortError);
  std::vector<Pose> one{Pose::rest(skel)};
  CHECK_THROWS_AS(encode(skel, one, 20.0), MotionTooShortError);
}

TEST_CASE("validate_motion rejects malformed inputs") {
  MotionSequence m;
  m.features = Matd::Zero(4, kFeatureDim);
  m.fps = 20.0;
  CHECK_NOTHROW(validate_motion(m));

  MotionSequence bad_cols = m;
  bad_cols.features = Matd::Zero(4, 100);
  CHECK_THROWS_AS(validate_motion(bad_cols), InvalidMotionError);

  MotionSequence bad_fps = m;
  bad_fps.fps = 0.0;
  CHECK_THROWS_AS(validate_motion(bad_fps), InvalidMotionError);

  MotionSequence with_nan = m;
  with_nan.features(2, 7) = std::nan("");
  CHECK_THROWS_AS(validate_motion(with_nan), InvalidMotionError);
}

TEST_CASE("canonical transform sends the first actor frame to the origin") {
  const Skeleton& skel = smpl22();
  const auto poses = random_pose_sequence(skel, 16, 21);
  const MotionSequence m = encode(skel, poses, 20.0);
  const RigidTransform2D tf = compute_canonical_transform(m);
  CHECK(tf.translation.y() == 0.0);
  const MotionSequence c = tf.apply_to_motion(m);
  CHECK(std::abs(c.yaw(0)) < 1e-12);
  CHECK(std::abs(c.root_pos(0).x()) < 1e-12);
  CHECK(std::abs(c.root_pos(0).z()) < 1e-12);
  CHECK(c.root_pos(0).y() == Catch::Approx(m.root_pos(0).y()));
}

TEST_CASE("canonicalizing a pair preserves relative geometry and heights") {
  const Skeleton& skel = smpl22();
  const auto pa = random_pose_sequence(skel, 12, 31);
  const auto pb = random_pose_sequence(skel, 12, 32);
  const MotionSequence actor = encode(skel, pa, 20.0);
  const MotionSequence reactor = encode(skel, pb, 20.0);

  const CanonicalPair pair = canonicalize_pair(actor, reactor);
  const Matd a0 = decode(actor), b0 = decode(reactor);
  const Matd a1 = decode(pair.actor), b1 = decode(pair.reactor);

  for (int k = 0; k < actor.frames(); ++k) {
    for (int i = 0; i < kJoints; ++i) {
      // Heights unchanged.
      CHECK(a1(k, 3 * i + 1) == Catch::Approx(a0(k, 3 * i + 1)).margin(1e-12));
      CHECK(b1(k, 3 * i + 1) == Catch::Approx(b0(k, 3 * i + 1)).margin(1e-12));
      // Cross-person distances preserved.
      const Vec3 da = a0.block<1, 3>(k, 3 * i).transpose() -
                      b0.block<1, 3>(k, 3 * i).transpose();
      const Vec3 db = a1.block<1, 3>(k, 3 * i).transpose() -
                      b1.block<1, 3>(k, 3 * i).transpose();
      CHECK(da.norm() == Catch::Approx(db.norm()).margin(1e-9));
    }
  }

  // Root-relative feature blocks are untouched by the rigid move.
  const int body_cols = kFeatureDim - kTrajectoryDims;
  CHECK((pair.reactor.features.rightCols(body_cols) -
         reactor.features.rightCols(body_cols))
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("feature-space transform agrees with transforming decoded positions") {
  const Skeleton& skel = smpl22();
  const auto poses = random_pose_sequence(skel, 10, 77);
  const MotionSequence m = encode(skel, poses, 20.0);

  RigidTransform2D tf;
  tf.yaw = 1.234;
  tf.translation = Vec3(0.5, 0.0, -2.0);

  const Matd direct = decode(tf.apply_to_motion(m));
  const Matd reference = decode(m);
  for (int k = 0; k < m.frames(); ++k)
    for (int i = 0; i < kJoints; ++i) {
      const Vec3 expected = tf.apply(reference.block<1, 3>(k, 3 * i).transpose());
      CHECK((direct.block<1, 3>(k, 3 * i).transpose() - expected).norm() < 1e-9);
    }
}

TEST_CASE("rigid transforms compose and invert") {
  RandomStream rng(3, "test.rigid");
  for (int trial = 0; trial < 30; ++trial) {
    RigidTransform2D a, b;
    a.yaw = 6.0 * (rng.uniform() - 0.5);
    a.translation = Vec3(rng.normal(), 0.0, rng.normal());
    b.yaw = 6.0 * (rng.uniform() - 0.5);
    b.translation = Vec3(rng.normal(), 0.0, rng.normal());
    const Vec3 p(rng.normal(), rng.normal(), rng.normal());

    CHECK((a.compose(b).apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
    CHECK((a.inverse().apply(a.apply(p)) - p).norm() < 1e-12);
    CHECK((a.compose(a.inverse()).apply(p) - p).norm() < 1e-12);
  }
}
