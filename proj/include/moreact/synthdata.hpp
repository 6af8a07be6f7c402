/**
 * @file synthdata.hpp
 * @brief Procedural generator of two-person interaction clips.
 *
 * Five scripted scenarios (handshake, wave_response, push_fall,
 * approach_retreat, follow_walk) are built from closed-form root paths, a
 * phase-locked gait that plants stance feet exactly, and analytic two-bone
 * limb IK.  Each clip comes with a text label drawn from a small set of
 * paraphrases, and a hashing tokenizer turns labels into ids.  The module
 * also writes datasets (binary motions + JSON manifests) with a
 * deterministic train/test split.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "moreact/common.hpp"
#include "moreact/kinematics.hpp"
#include "moreact/motion_io.hpp"
#include "moreact/skeleton.hpp"

namespace moreact {

/// Token ids produced by tokenize() live in [0, kTextVocabSize).
inline constexpr int kTextVocabSize = 4096;

// ---------------------------------------------------------------------------
// Rotation helpers
// ---------------------------------------------------------------------------

/// Rotation about the +x axis by angle a (radians); +y tilts toward +z.
inline Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << 1, 0, 0,
       0, c, -s,
       0, s, c;
  return r;
}

/**
 * The minimal rotation taking direction a onto direction b (inputs need not
 * be normalized).  Uses Rodrigues' formula about a x b; antiparallel inputs
 * fall back to a half-turn about an arbitrary perpendicular axis.
 */
inline Mat3 rotation_between(Vec3 a, Vec3 b) {
  a.normalize();
  b.normalize();
  const Vec3 v = a.cross(b);
  const double s = v.norm();
  const double c = a.dot(b);
  if (s < 1e-12) {
    if (c > 0.0) return Mat3::Identity();
    Vec3 axis = a.cross(Vec3::UnitX());
    if (axis.squaredNorm() < 1e-12) axis = a.cross(Vec3::UnitY());
    axis.normalize();
    return 2.0 * axis * axis.transpose() - Mat3::Identity();
  }
  const Vec3 k = v / s;
  Mat3 kx;
  kx << 0, -k.z(), k.y(),
        k.z(), 0, -k.x(),
        -k.y(), k.x(), 0;
  return c * Mat3::Identity() + s * kx + (1.0 - c) * (k * k.transpose());
}

// ---------------------------------------------------------------------------
// Two-bone inverse kinematics
// ---------------------------------------------------------------------------

struct TwoBoneSolution {
  Mat3 upper;  ///< global rotation of the upper bone's joint
  Mat3 lower;  ///< global rotation of the lower bone's joint
  Vec3 mid;    ///< world position of the middle joint (knee / elbow)
};

/**
 * Closed-form two-bone IK.  Both bones rest along (0,-1,0) in their local
 * frames, which holds for this skeleton's arms and legs.  The middle joint
 * bends toward `pole` (projected off the base->target axis); targets outside
 * the reachable annulus are clamped onto it, so the solver is total.  For
 * reachable targets the chain lands on the target exactly, which is what lets
 * stance feet stay planted to machine precision.
 */
inline TwoBoneSolution two_bone_ik(const Vec3& base, const Vec3& target,
                                   const Vec3& pole, double len_upper,
                                   double len_lower) {
  if (!(len_upper > 0.0) || !(len_lower > 0.0))
    throw ConfigError("two_bone_ik needs positive bone lengths");
  Vec3 d = target - base;
  double reach = d.norm();
  if (reach < 1e-12) {
    d = Vec3(0.0, -1.0, 0.0);  // aim straight down when base == target
    reach = 1.0;
  }
  const double lo = std::abs(len_upper - len_lower) + 1e-6;
  const double hi = len_upper + len_lower - 1e-6;
  const double len = std::clamp(reach, lo, hi);
  const Vec3 axis = d / reach;
  Vec3 bend = pole - pole.dot(axis) * axis;
  if (bend.squaredNorm() < 1e-12) {
    bend = axis.cross(Vec3::UnitX());
    if (bend.squaredNorm() < 1e-12) bend = axis.cross(Vec3::UnitZ());
  }
  bend.normalize();
  const double cos_upper =
      std::clamp((len_upper * len_upper + len * len - len_lower * len_lower) /
                     (2.0 * len_upper * len),
                 -1.0, 1.0);
  const double sin_upper = std::sqrt(1.0 - cos_upper * cos_upper);
  const Vec3 upper_dir = cos_upper * axis + sin_upper * bend;
  TwoBoneSolution out;
  out.mid = base + len_upper * upper_dir;
  out.upper = rotation_between(Vec3(0.0, -1.0, 0.0), upper_dir);
  out.lower = rotation_between(Vec3(0.0, -1.0, 0.0),
                               (base + len * axis - out.mid).normalized());
  return out;
}

// ---------------------------------------------------------------------------
// Pose chain helpers
// ---------------------------------------------------------------------------

/// Writes a local rotation matrix into the pose's 6-d row for `joint`.
inline void set_local_rotation(Pose& pose, int joint, const Mat3& r) {
  pose.joint_rot6d.row(joint - 1) = matrix_to_rot6d(r).transpose();
}

/// Global rotation of `joint` by composing locals down the ancestor chain.
inline Mat3 global_rotation_of(const Skeleton& skel, const Pose& pose, int joint) {
  if (joint < 0 || joint >= skel.joint_count())
    throw InvalidPoseError("joint index out of range");
  std::vector<int> chain;
  for (int j = joint; j != -1; j = skel.parents[static_cast<size_t>(j)])
    chain.push_back(j);
  Mat3 rot = rot_y(pose.root_yaw);
  for (auto it = chain.rbegin() + 1; it != chain.rend(); ++it)
    rot = rot * rot6d_to_matrix(pose.joint_rot6d.row(*it - 1).transpose());
  return rot;
}

/// Global position of `joint` under the pose's articulation.
inline Vec3 global_position_of(const Skeleton& skel, const Pose& pose, int joint) {
  if (joint < 0 || joint >= skel.joint_count())
    throw InvalidPoseError("joint index out of range");
  std::vector<int> chain;
  for (int j = joint; j != -1; j = skel.parents[static_cast<size_t>(j)])
    chain.push_back(j);
  Mat3 rot = rot_y(pose.root_yaw);
  Vec3 pos = pose.root_pos;
  for (auto it = chain.rbegin() + 1; it != chain.rend(); ++it) {
    pos += rot * skel.offsets.row(*it).transpose();
    rot = rot * rot6d_to_matrix(pose.joint_rot6d.row(*it - 1).transpose());
  }
  return pos;
}

/**
 * Places one leg so the ankle lands on `ankle_target` with the knee bending
 * toward the foot's heading.  The ankle's own rotation is set so the foot
 * stays level and points along `foot_yaw` however the leg folds, keeping toes
 * near the ground during stance.
 */
inline void solve_leg(const Skeleton& skel, Pose& pose, bool left,
                      const Vec3& ankle_target, double foot_yaw) {
  const int hip = left ? 1 : 2;
  const int knee = left ? 4 : 5;
  const int ankle = left ? 7 : 8;
  const Mat3 pelvis = rot_y(pose.root_yaw);
  const Vec3 hip_pos =
      pose.root_pos + pelvis * skel.offsets.row(hip).transpose();
  const Vec3 pole = rot_y(foot_yaw) * Vec3(0.0, 0.0, 1.0);
  const TwoBoneSolution ik =
      two_bone_ik(hip_pos, ankle_target, pole, skel.offsets.row(knee).norm(),
                  skel.offsets.row(ankle).norm());
  set_local_rotation(pose, hip, pelvis.transpose() * ik.upper);
  set_local_rotation(pose, knee, ik.upper.transpose() * ik.lower);
  set_local_rotation(pose, ankle, ik.lower.transpose() * rot_y(foot_yaw));
}

/**
 * Places one arm so the wrist lands on `wrist_target`, elbow pointing
 * outward, down and slightly forward.  Call after any spine articulation is
 * final; the shoulder's parent rotation is read off the current pose.
 */
inline void solve_arm(const Skeleton& skel, Pose& pose, bool left,
                      const Vec3& wrist_target) {
  const int collar = left ? 13 : 14;
  const int shoulder = left ? 16 : 17;
  const int elbow = left ? 18 : 19;
  const int wrist = left ? 20 : 21;
  const Mat3 parent = global_rotation_of(skel, pose, collar);
  const Vec3 shoulder_pos = global_position_of(skel, pose, shoulder);
  const Vec3 pole =
      rot_y(pose.root_yaw) * Vec3(left ? 0.7 : -0.7, -0.5, 0.15).normalized();
  const TwoBoneSolution ik =
      two_bone_ik(shoulder_pos, wrist_target, pole,
                  skel.offsets.row(elbow).norm(), skel.offsets.row(wrist).norm());
  set_local_rotation(pose, shoulder, parent.transpose() * ik.upper);
  set_local_rotation(pose, elbow, ik.upper.transpose() * ik.lower);
}

// ---------------------------------------------------------------------------
// Scenario catalog
// ---------------------------------------------------------------------------

/// A span of the clip during which two named joints stay within contact
/// distance.  Spans are stored as fractions so they scale with clip length.
struct ContactWindow {
  double begin = 0.0;     ///< fraction of the clip, 0 <= begin < end <= 1
  double end = 0.0;
  int actor_joint = 0;    ///< joint index on the actor
  int reactor_joint = 0;  ///< joint index on the reactor

  /// First / last frame of the realized window for a T-frame clip.
  int first_frame(int frames) const {
    return static_cast<int>(std::ceil(begin * (frames - 1)));
  }
  int last_frame(int frames) const {
    return static_cast<int>(std::floor(end * (frames - 1)));
  }
};

struct ScenarioSpec {
  std::string name;
  int min_frames = 2;  ///< inclusive clip-length range accepted by generate()
  int max_frames = 2;
  std::vector<ContactWindow> contact_windows;
  std::vector<std::string> templates;  ///< text paraphrases, at least three
};

/// The five built-in interaction scenarios.
inline const std::vector<ScenarioSpec>& scenario_catalog() {
  static const std::vector<ScenarioSpec> catalog = {
      {"handshake",
       40,
       140,
       {{0.35, 0.75, 21, 21}},  // right wrists clasped through mid-clip
       {"the person reaches out and shakes the offered right hand",
        "a person extends an arm and exchanges a firm handshake",
        "someone clasps the other's right hand in greeting",
        "the person accepts the handshake with a short shake"}},
      {"wave_response",
       40,
       140,
       {},
       {"the person waves back in response to a distant greeting",
        "someone raises a hand and returns the wave",
        "a person answers the greeting with a friendly wave"}},
      {"push_fall",
       50,
       140,
       {{0.15, 0.28, 21, 6}},  // the pushing hand rests on the chest
       {"the person is shoved in the chest and falls backward",
        "after a hard push the person collapses to the ground",
        "someone gets pushed over and drops onto their back"}},
      {"approach_retreat",
       50,
       160,
       {},
       {"the person backs away from the approaching stranger",
        "someone retreats step by step as the other closes in",
        "the person cautiously walks backward to keep distance"}},
      {"follow_walk",
       50,
       160,
       {},
       {"the person follows closely behind the other while walking",
        "someone trails the walker along a curving path",
        "the person walks after the leader keeping pace"}},
  };
  return catalog;
}

/// Looks a scenario up by name; throws ConfigError for unknown names.
inline const ScenarioSpec& find_scenario(std::string_view name) {
  for (const auto& spec : scenario_catalog())
    if (spec.name == name) return spec;
  throw ConfigError("unknown scenario: " + std::string(name));
}

// ---------------------------------------------------------------------------
// Gait machinery
// ---------------------------------------------------------------------------

namespace detail {

inline double smoothstep01(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

/// Trapezoid profile over clip fractions: rises 0->1 on [a,b], holds 1, and
/// falls back to 0 on [c,d].
inline double hold_profile(double f, double a, double b, double c, double d) {
  const double up = smoothstep01((f - a) / std::max(1e-9, b - a));
  const double down = smoothstep01((d - f) / std::max(1e-9, d - c));
  return std::min(up, down);
}

inline double uniform_in(RandomStream& rng, double lo, double hi) {
  return lo + (hi - lo) * rng.uniform();
}

struct GaitParams {
  double cycle_period = 0.6;    ///< full two-step cycle (s)
  double swing_lift = 0.06;     ///< peak extra ankle height mid-swing (m)
  double arm_swing = 0.25;      ///< shoulder swing amplitude (rad), 0 = arms at rest
  double lateral = 0.09;        ///< stance offset from the midline (m)
  double stance_height = 0.07;  ///< planted ankle height (skeleton rest value)
  double plant_merge = 0.02;    ///< plants closer than this keep the foot down (m)
};

/**
 * Builds T frames of locomotion along an arbitrary root path.  `root_path`
 * maps time (s) to the full root position (height included) and must be
 * defined slightly outside [0, T/fps] because foot plants are sampled around
 * frame times; `heading` gives the continuous facing angle.
 *
 * Feet alternate 50% stance / 50% swing phases in antiphase.  A stance foot
 * is pinned to one world-space plant for the whole phase, so its measured
 * speed is zero and contact labels fire; when consecutive plants coincide
 * (standing still) the swing is suppressed and the foot simply stays down.
 */
inline std::vector<Pose> walk_poses(const Skeleton& skel, int frames, double fps,
                                    const std::function<Vec3(double)>& root_path,
                                    const std::function<double(double)>& heading,
                                    const GaitParams& gait) {
  std::vector<Pose> poses(static_cast<size_t>(frames), Pose::rest(skel));
  const double period = gait.cycle_period;
  for (int k = 0; k < frames; ++k) {
    Pose& p = poses[static_cast<size_t>(k)];
    const double t = k / fps;
    p.root_pos = root_path(t);
    p.root_yaw = wrap_to_pi(heading(t));
    if (gait.arm_swing != 0.0) {
      // Arms swing against their own side's leg, as in a natural walk.
      const double a = gait.arm_swing * std::sin(2.0 * M_PI * t / period);
      set_local_rotation(p, 16, rot_x(a));
      set_local_rotation(p, 17, rot_x(-a));
    }
    for (int side = 0; side < 2; ++side) {
      const bool left = side == 0;
      const double offset = left ? 0.0 : 0.5;
      const double u = t / period + offset;
      const double cycle = std::floor(u);
      const double phase = u - cycle;
      const auto plant = [&](double index) {
        const double mid = (index - offset + 0.25) * period;
        const double yaw = heading(mid);
        Vec3 pos = root_path(mid);
        pos.y() = gait.stance_height;
        pos += rot_y(yaw) * Vec3(left ? gait.lateral : -gait.lateral, 0.0, 0.0);
        return std::make_pair(pos, yaw);
      };
      const auto [plant_pos, plant_yaw] = plant(cycle);
      Vec3 ankle = plant_pos;
      double foot_yaw = plant_yaw;
      if (phase >= 0.5) {
        const auto [next_pos, next_yaw] = plant(cycle + 1.0);
        if ((next_pos - plant_pos).norm() >= gait.plant_merge) {
          const double s = (phase - 0.5) * 2.0;
          const double blend = smoothstep01(s);
          ankle = plant_pos + (next_pos - plant_pos) * blend;
          ankle.y() += gait.swing_lift * std::sin(M_PI * s);
          foot_yaw = plant_yaw + wrap_to_pi(next_yaw - plant_yaw) * blend;
        }
      }
      solve_leg(skel, p, left, ankle, foot_yaw);
    }
  }
  return poses;
}

/// Pitches the torso forward (positive) or back by distributing the angle
/// over the three spine joints.
inline void pitch_spine(Pose& pose, double angle) {
  const Mat3 r = rot_x(angle / 3.0);
  set_local_rotation(pose, 3, r);
  set_local_rotation(pose, 6, r);
  set_local_rotation(pose, 9, r);
}

struct AgentPoses {
  std::vector<Pose> actor;
  std::vector<Pose> reactor;
};

// Two people face each other over a small gap, lean in and clasp right
// hands at a shared grip point; both hands follow the same vertical shake,
// so their separation stays constant through the contact window.
inline AgentPoses make_handshake(std::uint64_t seed, int frames, double fps) {
  RandomStream rng(seed, "synthdata.handshake");
  const double gap = uniform_in(rng, 0.62, 0.68);
  const double grip_x = uniform_in(rng, -0.02, 0.02);
  const double grip_y = uniform_in(rng, 0.95, 0.99);
  const double shake_hz = uniform_in(rng, 1.2, 1.8);
  const double shake_amp = uniform_in(rng, 0.010, 0.015);
  const Skeleton& skel = smpl22();
  const double span = (frames - 1) / fps;
  GaitParams gait;
  gait.arm_swing = 0.0;

  AgentPoses out;
  for (int agent = 0; agent < 2; ++agent) {
    const bool is_actor = agent == 0;
    const double side = is_actor ? 1.0 : -1.0;  // actor stands on +z
    const Vec3 root(0.0, 0.91, side * gap / 2.0);
    const double yaw = is_actor ? M_PI : 0.0;
    auto poses = walk_poses(
        skel, frames, fps, [root](double) { return root; },
        [yaw](double) { return yaw; }, gait);
    for (int k = 0; k < frames; ++k) {
      Pose& p = poses[static_cast<size_t>(k)];
      const double f = k / static_cast<double>(frames - 1);
      const double lift = hold_profile(f, 0.0, 0.35, 0.75, 1.0);
      pitch_spine(p, 0.55 * lift);
      const Vec3 shoulder = global_position_of(skel, p, 17);
      const Vec3 hang = shoulder + rot_y(p.root_yaw) * Vec3(0.0, -0.46, 0.10);
      const double gate = smoothstep01((f - 0.35) / 0.05) *
                          smoothstep01((0.75 - f) / 0.05);
      const double wobble =
          shake_amp * gate *
          std::sin(2.0 * M_PI * shake_hz * (k / fps - 0.35 * span));
      const Vec3 grip(grip_x, grip_y + wobble, side * 0.02);
      solve_arm(skel, p, false, hang + (grip - hang) * lift);
    }
    (is_actor ? out.actor : out.reactor) = std::move(poses);
  }
  return out;
}

// Two people greet from a distance; the actor waves first, the reactor
// answers after a beat.  Wrist targets stay in each waver's own frame.
inline AgentPoses make_wave(std::uint64_t seed, int frames, double fps) {
  RandomStream rng(seed, "synthdata.wave_response");
  const double gap = uniform_in(rng, 2.2, 2.8);
  const double wave_hz = uniform_in(rng, 1.2, 2.0);
  const double amp = uniform_in(rng, 0.09, 0.14);
  const double raise_y = uniform_in(rng, 0.66, 0.72);
  const Skeleton& skel = smpl22();
  const double span = (frames - 1) / fps;
  GaitParams gait;
  gait.arm_swing = 0.0;

  struct Timing {
    double up_start, up_end, down_start;
  };
  AgentPoses out;
  for (int agent = 0; agent < 2; ++agent) {
    const bool is_actor = agent == 0;
    const Timing tm = is_actor ? Timing{0.0, 0.20, 0.80} : Timing{0.30, 0.50, 0.90};
    const double side = is_actor ? 1.0 : -1.0;
    const Vec3 root(0.0, 0.91, side * gap / 2.0);
    const double yaw = is_actor ? M_PI : 0.0;
    auto poses = walk_poses(
        skel, frames, fps, [root](double) { return root; },
        [yaw](double) { return yaw; }, gait);
    for (int k = 0; k < frames; ++k) {
      Pose& p = poses[static_cast<size_t>(k)];
      const double f = k / static_cast<double>(frames - 1);
      const double lift = hold_profile(f, tm.up_start, tm.up_end, tm.down_start, 1.0);
      const Vec3 shoulder = global_position_of(skel, p, 17);
      const Vec3 hang = shoulder + rot_y(p.root_yaw) * Vec3(0.0, -0.46, 0.10);
      const double osc =
          amp * lift *
          std::sin(2.0 * M_PI * wave_hz * (k / fps - tm.up_end * span));
      const Vec3 raised =
          p.root_pos + rot_y(p.root_yaw) * Vec3(-0.25 + osc, raise_y, 0.18);
      solve_arm(skel, p, false, hang + (raised - hang) * lift);
    }
    (is_actor ? out.actor : out.reactor) = std::move(poses);
  }
  return out;
}

// The actor plants a hand on the reactor's chest; the reactor's trajectory
// then drops to a fraction of standing height while sliding backward, the
// torso tips back and the arms swing up - the legs fold over planted feet.
inline AgentPoses make_push_fall(std::uint64_t seed, int frames, double fps) {
  RandomStream rng(seed, "synthdata.push_fall");
  const double gap = uniform_in(rng, 0.48, 0.55);
  const double fall_start = uniform_in(rng, 0.28, 0.34);
  const double fall_end = uniform_in(rng, 0.70, 0.78);
  const double end_height = uniform_in(rng, 0.26, 0.34);
  const double slide = uniform_in(rng, 0.20, 0.30);
  const Skeleton& skel = smpl22();
  const double span = (frames - 1) / fps;
  GaitParams gait;
  gait.arm_swing = 0.0;

  const auto fall = [=](double t) {
    return smoothstep01((t / span - fall_start) / (fall_end - fall_start));
  };
  AgentPoses out;
  out.reactor = walk_poses(
      skel, frames, fps,
      [=](double t) {
        const double s = fall(t);
        return Vec3(0.0, 0.91 + (end_height - 0.91) * s, slide * s);
      },
      [](double) { return M_PI; }, gait);
  for (int k = 0; k < frames; ++k) {
    Pose& p = out.reactor[static_cast<size_t>(k)];
    const double s = fall(k / fps);
    pitch_spine(p, -0.55 * s);
    set_local_rotation(p, 16, rot_x(-1.1 * s));
    set_local_rotation(p, 17, rot_x(-1.1 * s));
  }

  const Vec3 actor_root(0.0, 0.91, -gap);
  out.actor = walk_poses(
      skel, frames, fps, [actor_root](double) { return actor_root; },
      [](double) { return 0.0; }, gait);
  for (int k = 0; k < frames; ++k) {
    Pose& p = out.actor[static_cast<size_t>(k)];
    const double f = k / static_cast<double>(frames - 1);
    const double push = hold_profile(f, 0.05, 0.15, 0.28, 0.43);
    pitch_spine(p, 0.55 * push);
    const Vec3 shoulder = global_position_of(skel, p, 17);
    const Vec3 hang = shoulder + rot_y(p.root_yaw) * Vec3(0.0, -0.46, 0.10);
    const Vec3 chest =
        global_position_of(skel, out.reactor[static_cast<size_t>(k)], 6) +
        Vec3(0.0, 0.0, -0.06);
    solve_arm(skel, p, false, hang + (chest - hang) * push);
  }
  return out;
}

// The actor keeps walking toward the reactor, who stands for a moment and
// then backs away (still facing the actor) fast enough to hold distance.
inline AgentPoses make_approach_retreat(std::uint64_t seed, int frames, double fps) {
  RandomStream rng(seed, "synthdata.approach_retreat");
  const double start_gap = uniform_in(rng, 2.6, 3.0);
  const double actor_speed = uniform_in(rng, 0.35, 0.45);
  const double retreat_speed = uniform_in(rng, 0.40, 0.50);
  const double stand_frac = uniform_in(rng, 0.25, 0.35);
  const Skeleton& skel = smpl22();
  const double t0 = stand_frac * (frames - 1) / fps;
  GaitParams gait;

  AgentPoses out;
  out.actor = walk_poses(
      skel, frames, fps,
      [=](double t) { return Vec3(0.0, 0.87, -start_gap + actor_speed * t); },
      [](double) { return 0.0; }, gait);
  out.reactor = walk_poses(
      skel, frames, fps,
      [=](double t) {
        return Vec3(0.0, 0.87, retreat_speed * std::max(0.0, t - t0));
      },
      [](double) { return M_PI; }, gait);
  return out;
}

// Leader and follower walk the same constant-curvature arc; the follower's
// path is the leader's delayed by a fixed arc length, so it stays behind.
inline AgentPoses make_follow_walk(std::uint64_t seed, int frames, double fps) {
  RandomStream rng(seed, "synthdata.follow_walk");
  const double speed = uniform_in(rng, 0.68, 0.82);
  const double gap = uniform_in(rng, 1.05, 1.35);
  double curvature = uniform_in(rng, 0.08, 0.18);
  if (rng.uniform() < 0.5) curvature = -curvature;
  const Skeleton& skel = smpl22();
  const double omega = curvature * speed;
  const double radius = 1.0 / curvature;
  const double lag = gap / speed;
  const auto arc = [=](double t) {
    return Vec3(radius * (1.0 - std::cos(omega * t)), 0.87,
                radius * std::sin(omega * t));
  };
  const auto heading = [=](double t) { return omega * t; };
  GaitParams gait;

  AgentPoses out;
  out.actor = walk_poses(skel, frames, fps, arc, heading, gait);
  out.reactor = walk_poses(
      skel, frames, fps, [=](double t) { return arc(t - lag); },
      [=](double t) { return heading(t - lag); }, gait);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sample generation
// ---------------------------------------------------------------------------

/**
 * Generates one two-person clip of `frames` frames at `fps`.  Deterministic
 * in (scenario, seed, frames, fps); the text label is drawn from the
 * scenario's paraphrases by seed.  Throws ConfigError when `frames` is
 * outside the scenario's accepted range or `fps` is not positive.
 */
inline InteractionSample generate(const ScenarioSpec& spec, std::uint64_t seed,
                                  int frames, double fps = 20.0) {
  if (frames < spec.min_frames || frames > spec.max_frames)
    throw ConfigError(spec.name + " clips take " +
                      std::to_string(spec.min_frames) + ".." +
                      std::to_string(spec.max_frames) + " frames, got " +
                      std::to_string(frames));
  if (!(fps > 0.0) || !std::isfinite(fps))
    throw ConfigError("fps must be positive and finite");

  detail::AgentPoses poses;
  if (spec.name == "handshake")
    poses = detail::make_handshake(seed, frames, fps);
  else if (spec.name == "wave_response")
    poses = detail::make_wave(seed, frames, fps);
  else if (spec.name == "push_fall")
    poses = detail::make_push_fall(seed, frames, fps);
  else if (spec.name == "approach_retreat")
    poses = detail::make_approach_retreat(seed, frames, fps);
  else if (spec.name == "follow_walk")
    poses = detail::make_follow_walk(seed, frames, fps);
  else
    throw ConfigError("unknown scenario: " + spec.name);

  InteractionSample sample;
  sample.actor = encode(smpl22(), poses.actor, fps);
  sample.reactor = encode(smpl22(), poses.reactor, fps);
  RandomStream text_rng(seed, "synthdata.text");
  sample.text = spec.templates[static_cast<size_t>(
      text_rng.uniform_int(spec.templates.size()))];
  sample.scenario = spec.name;
  return sample;
}

// ---------------------------------------------------------------------------
// Scenario recognition
// ---------------------------------------------------------------------------

/// Handcrafted features that separate the five scenarios by construction.
struct ScenarioFeatures {
  double min_hand_distance = 0.0;   ///< min over frames, actor vs reactor r_wrist (m)
  double final_height_ratio = 0.0;  ///< reactor root height, last over first frame
  double mean_root_speed = 0.0;     ///< reactor average root speed (m/s)
};

inline ScenarioFeatures scenario_features(const InteractionSample& sample) {
  const Matd actor = decode(sample.actor);
  const Matd reactor = decode(sample.reactor);
  const int frames = sample.reactor.frames();
  ScenarioFeatures f;
  f.min_hand_distance = std::numeric_limits<double>::infinity();
  for (int k = 0; k < frames; ++k) {
    const Vec3 a = actor.block<1, 3>(k, 3 * 21).transpose();
    const Vec3 r = reactor.block<1, 3>(k, 3 * 21).transpose();
    f.min_hand_distance = std::min(f.min_hand_distance, (a - r).norm());
  }
  f.final_height_ratio =
      sample.reactor.root_pos(frames - 1).y() / sample.reactor.root_pos(0).y();
  double path = 0.0;
  for (int k = 0; k + 1 < frames; ++k)
    path += (sample.reactor.root_pos(k + 1) - sample.reactor.root_pos(k)).norm();
  f.mean_root_speed = path * sample.reactor.fps / std::max(1, frames - 1);
  return f;
}

/**
 * Recovers the scenario label from the handcrafted features with a short
 * decision list.  Every rule sits far from the values the generators can
 * produce: fallen reactors end below half height, clasped hands pass within
 * centimetres while all other scenarios keep them apart by at least half a
 * metre, and the three remaining classes are separated by reactor speed
 * (roughly 0.75, 0.3 and 0 m/s).
 */
inline std::string classify_scenario(const ScenarioFeatures& f) {
  if (f.final_height_ratio < 0.5) return "push_fall";
  if (f.min_hand_distance < 0.15) return "handshake";
  if (f.mean_root_speed > 0.5) return "follow_walk";
  if (f.mean_root_speed > 0.12) return "approach_retreat";
  return "wave_response";
}

inline std::string classify_scenario(const InteractionSample& sample) {
  return classify_scenario(scenario_features(sample));
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

/**
 * Lowercases, splits on anything that is not a letter or digit, and hashes
 * each word into [0, kTextVocabSize).  The empty string maps to no tokens.
 */
inline std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  std::string word;
  const auto flush = [&] {
    if (word.empty()) return;
    ids.push_back(static_cast<int>(fnv1a64(word) %
                                   static_cast<std::uint64_t>(kTextVocabSize)));
    word.clear();
  };
  for (const char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u))
      word.push_back(static_cast<char>(std::tolower(u)));
    else
      flush();
  }
  flush();
  return ids;
}

// ---------------------------------------------------------------------------
// Dataset builder
// ---------------------------------------------------------------------------

struct DatasetPaths {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
};

/**
 * Generates `counts[i]` samples of `specs[i]`, saves the motions as binary
 * files under out_dir/motions, and writes train.json / test.json manifests.
 * The split is per scenario: the first round(count * split_ratio) samples go
 * to train (clamped so neither side is empty when count >= 2).  Every sample
 * is seeded from (seed, scenario, index), so re-running with the same
 * arguments reproduces the files byte for byte.
 */
inline DatasetPaths build_dataset(const std::vector<ScenarioSpec>& specs,
                                  const std::vector<int>& counts,
                                  std::uint64_t seed, double split_ratio,
                                  const std::filesystem::path& out_dir,
                                  int frames = 64, double fps = 20.0) {
  if (specs.size() != counts.size())
    throw ConfigError("build_dataset needs one count per scenario");
  if (specs.empty()) throw ConfigError("build_dataset needs at least one scenario");
  if (!(split_ratio > 0.0) || !(split_ratio < 1.0))
    throw ConfigError("split_ratio must lie strictly between 0 and 1");
  for (const int c : counts)
    if (c < 1) throw ConfigError("scenario counts must be at least 1");

  DatasetManifest train, test;
  for (size_t si = 0; si < specs.size(); ++si) {
    const ScenarioSpec& spec = specs[si];
    const int count = counts[si];
    long train_count = std::lround(count * split_ratio);
    if (count >= 2) train_count = std::clamp<long>(train_count, 1, count - 1);
    for (int i = 0; i < count; ++i) {
      const std::uint64_t sample_seed =
          RandomStream(seed, "synthdata.dataset." + spec.name,
                       static_cast<std::uint64_t>(i))
              .engine()();
      const InteractionSample sample = generate(spec, sample_seed, frames, fps);
      SampleRef ref;
      ref.actor = "motions/" + spec.name + "_" + std::to_string(i) + "_actor.mrk";
      ref.reactor =
          "motions/" + spec.name + "_" + std::to_string(i) + "_reactor.mrk";
      ref.text = sample.text;
      ref.scenario = sample.scenario;
      save_motion(out_dir / ref.actor, sample.actor);
      save_motion(out_dir / ref.reactor, sample.reactor);
      (i < train_count ? train : test).samples.push_back(std::move(ref));
    }
  }
  DatasetPaths paths{out_dir / "train.json", out_dir / "test.json"};
  save_manifest(paths.train_manifest, train);
  save_manifest(paths.test_manifest, test);
  return paths;
}

}  // namespace moreact
