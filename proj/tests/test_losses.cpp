// Loss tests: hand values, independent loop oracles, softmax normalization,
// gate behavior and finite-difference gradient checks of the tape variants.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <array>
#include <vector>

#include "moreact/common.hpp"
#include "moreact/losses.hpp"
#include "moreact/skeleton.hpp"

using namespace moreact;

namespace {

Matd randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  RandomStream rng(seed, "test.losses");
  return rng.normal_matrix<double>(r, c);
}

// Independent re-implementation of the position interaction loss, recomputing
// the softmax and inverse-distance weights from scratch per active pair.
double oracle_position_loss(const InteractionGraph& gen,
                            const InteractionGraph& gt, double c,
                            double floor) {
  long active = 0;
  double sum = 0.0;
  for (Eigen::Index k = 0; k < gt.dist.rows(); ++k)
    for (Eigen::Index p = 0; p < gt.dist.cols(); ++p) {
      if (gt.dist(k, p) > c) continue;
      ++active;
      double z_gen = 0.0, z_gt = 0.0;
      for (Eigen::Index q = 0; q < gt.dist.cols(); ++q) {
        z_gen += std::exp(gen.dist(k, q));
        z_gt += std::exp(gt.dist(k, q));
      }
      const double sm = std::exp(gen.dist(k, p)) / z_gen +
                        std::exp(gt.dist(k, p)) / z_gt;
      const double inv = 1.0 / std::max(gen.dist(k, p), floor) +
                         1.0 / std::max(gt.dist(k, p), floor);
      sum += sm * inv *
             (gen.rel_pos.row(k).segment(3 * p, 3) -
              gt.rel_pos.row(k).segment(3 * p, 3))
                 .squaredNorm();
    }
  return active == 0 ? 0.0 : sum / active;
}

double oracle_velocity_loss(const InteractionGraph& gen,
                            const InteractionGraph& gt, double c) {
  long active = 0;
  double sum = 0.0;
  for (Eigen::Index k = 0; k < gt.rel_vel.rows(); ++k)
    for (Eigen::Index p = 0; p < gt.dist.cols(); ++p) {
      if (gt.dist(k, p) > c) continue;
      ++active;
      double z_gen = 0.0, z_gt = 0.0;
      for (Eigen::Index q = 0; q < gt.dist.cols(); ++q) {
        z_gen += std::exp(gen.dist(k, q));
        z_gt += std::exp(gt.dist(k, q));
      }
      const double sm = std::exp(gen.dist(k, p)) / z_gen +
                        std::exp(gt.dist(k, p)) / z_gt;
      sum += sm * (gen.rel_vel.row(k).segment(3 * p, 3) -
                   gt.rel_vel.row(k).segment(3 * p, 3))
                      .squaredNorm();
    }
  return active == 0 ? 0.0 : sum / active;
}

/// Joint clouds near each other so a healthy fraction of pairs is active.
std::pair<Matd, Matd> nearby_agents(int frames, int joints, std::uint64_t seed) {
  RandomStream rng(seed, "test.agents");
  Matd reactor(frames, 3 * joints), actor(frames, 3 * joints);
  for (int k = 0; k < frames; ++k)
    for (int j = 0; j < joints; ++j) {
      for (int c = 0; c < 3; ++c) {
        reactor(k, 3 * j + c) = 0.4 * rng.normal();
        actor(k, 3 * j + c) = reactor(k, 3 * j + c) + 0.25 * rng.normal();
      }
    }
  return {reactor, actor};
}

}  // namespace

TEST_CASE("element-wise losses follow the mean convention") {
  const int frames = 5;
  Matd eps = Matd::Zero(frames, kFeatureDim);
  Matd ones = Matd::Ones(frames, kFeatureDim);
  CHECK(loss_traj(eps, eps) == 0.0);
  CHECK(loss_traj(eps, ones) == 1.0);

  Matd x0 = randn(frames, kFeatureDim, 1);
  Matd hat = x0;
  hat(2, 40) += 1.0;  // a single element off by one
  CHECK(loss_recon(x0, hat) == Catch::Approx(1.0 / (frames * kFeatureDim)));
  hat = x0;
  hat.col(40).array() += 1.0;  // a whole channel off by one
  CHECK(loss_recon(x0, hat) == Catch::Approx(1.0 / kFeatureDim));

  const Matd a = randn(4, 7, 2), b = randn(4, 7, 3);
  double direct = 0.0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 7; ++c) direct += (a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
  CHECK(loss_traj(a, b) == Catch::Approx(direct / 28.0).epsilon(1e-12));
  CHECK_THROWS_AS(loss_traj(a, randn(4, 6, 4)), ConfigError);
}

TEST_CASE("foot contact mask applies inclusive thresholds") {
  const std::array<int, 1> feet = {0};
  const double fps = 10.0;
  Matd pos = Matd::Zero(3, 3);
  // Frame 0 -> 1: displacement exactly gamma_v / fps, height at gamma_h.
  pos(0, 1) = 0.08;
  pos(1, 0) = 0.01;
  pos(1, 1) = 0.08;
  pos(2, 0) = 0.5;  // fast into nothing beyond
  const Matd mask = foot_contact_mask(pos, feet, fps, 0.10, 0.08);
  REQUIRE(mask.rows() == 2);
  CHECK(mask(0, 0) == 1.0);  // speed 0.1 == gamma_v, height 0.08 == gamma_h
  CHECK(mask(1, 0) == 0.0);  // speed 4.9 m/s
  CHECK_THROWS_AS(foot_contact_mask(Matd(Matd::Zero(1, 3)), feet, fps, 0.1, 0.08),
                  MotionTooShortError);
}

TEST_CASE("kinematic loss vanishes on identical grounded motion") {
  const auto& skel = smpl22();
  const int frames = 6;
  Matd pos = Matd::Zero(frames, 3 * kJoints);
  for (int j = 0; j < kJoints; ++j)
    pos.col(3 * j + 1).setConstant(1.0);  // everything up high...
  for (int f : skel.foot_joints) pos.col(3 * f + 1).setConstant(0.02);  // ...feet planted
  const Matd yaw = Matd::Zero(frames, 1);
  const auto b = kinematic_loss(pos, pos, yaw, yaw, LossWeights{}, 20.0,
                                skel.foot_joints);
  CHECK(b.foot == 0.0);
  CHECK(b.vel == 0.0);
  CHECK(b.rot == 0.0);
  CHECK(b.traj_pos == 0.0);
  CHECK(b.total == 0.0);
}

TEST_CASE("gliding planted feet are charged their squared speed") {
  const auto& skel = smpl22();
  const int frames = 8;
  const double fps = 20.0;
  Matd pos = Matd::Zero(frames, 3 * kJoints);
  for (int j = 0; j < kJoints; ++j) pos.col(3 * j + 1).setConstant(1.0);
  for (int f : skel.foot_joints) {
    pos.col(3 * f + 1).setConstant(0.0);  // on the ground
    for (int k = 0; k < frames; ++k) pos(k, 3 * f) = 0.5 * k / fps;  // 0.5 m/s drift
  }
  LossWeights w;
  w.gamma_v = 0.6;  // wide enough that the drifting feet still count as planted
  const Matd yaw = Matd::Zero(frames, 1);
  const auto b = kinematic_loss(pos, pos, yaw, yaw, w, fps, skel.foot_joints);
  CHECK(b.foot == Catch::Approx(0.25).epsilon(1e-12));
  CHECK(b.vel == 0.0);  // generated equals ground truth
  CHECK(b.total == Catch::Approx(w.lambda_foot * 0.25).epsilon(1e-12));
}

TEST_CASE("kinematic loss matches a naive per-frame oracle") {
  const auto& skel = smpl22();
  const int frames = 7;
  const double fps = 2.0;  // slow capture so random motion still yields contacts
  Matd gen = randn(frames, 3 * kJoints, 10) * 0.3;
  Matd gt = gen + randn(frames, 3 * kJoints, 11) * 0.1;
  Matd gen_yaw = randn(frames, 1, 12);
  Matd gt_yaw = randn(frames, 1, 13);
  LossWeights w;
  w.gamma_v = 3.0;  // random data moves fast; keep some contacts active
  w.gamma_h = 0.5;
  const auto b = kinematic_loss(gen, gt, gen_yaw, gt_yaw, w, fps,
                                skel.foot_joints);

  // Oracle: everything with explicit loops.
  double vel = 0.0, rot = 0.0, traj = 0.0, skate = 0.0;
  int planted = 0;
  for (int k = 0; k + 1 < frames; ++k)
    for (int j = 0; j < kJoints; ++j) {
      Vec3 vg, vt;
      for (int c = 0; c < 3; ++c) {
        vg[c] = (gen(k + 1, 3 * j + c) - gen(k, 3 * j + c)) * fps;
        vt[c] = (gt(k + 1, 3 * j + c) - gt(k, 3 * j + c)) * fps;
      }
      vel += (vg - vt).squaredNorm();
    }
  vel /= kJoints * (frames - 1);
  for (int k = 0; k < frames; ++k) {
    rot += std::pow(gen_yaw(k, 0) - gt_yaw(k, 0), 2);
    traj += (gen.row(k).head(3) - gt.row(k).head(3)).squaredNorm();
  }
  rot /= frames;
  traj /= frames;
  for (int k = 0; k + 1 < frames; ++k)
    for (int f : skel.foot_joints) {
      Vec3 vg;
      for (int c = 0; c < 3; ++c)
        vg[c] = (gen(k + 1, 3 * f + c) - gen(k, 3 * f + c)) * fps;
      if (vg.norm() <= w.gamma_v && gen(k, 3 * f + 1) <= w.gamma_h) {
        ++planted;
        skate += vg.squaredNorm();
      }
    }
  const double foot = planted > 0 ? skate / planted : 0.0;
  REQUIRE(planted > 0);

  CHECK(b.vel == Catch::Approx(vel).epsilon(1e-9));
  CHECK(b.rot == Catch::Approx(rot).epsilon(1e-9));
  CHECK(b.traj_pos == Catch::Approx(traj).epsilon(1e-9));
  CHECK(b.foot == Catch::Approx(foot).epsilon(1e-9));
  const double total = w.lambda_foot * foot + w.lambda_vel * vel +
                       w.lambda_rot * rot + w.lambda_traj * traj;
  CHECK(b.total == Catch::Approx(total).epsilon(1e-9));
}

TEST_CASE("interaction graph geometry") {
  // Identical agents: the (i, i) diagonal is exactly zero.
  const Matd pos = randn(4, 3 * 5, 20);
  const auto self = interaction_graph(pos, pos);
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < 5; ++i) CHECK(self.dist(k, i * 5 + i) == 0.0);

  // Two static single-joint agents one meter apart.
  Matd a = Matd::Zero(3, 3), b = Matd::Zero(3, 3);
  b.col(0).setConstant(1.0);
  const auto g = interaction_graph(a, b);
  CHECK(g.joints == 1);
  CHECK((g.dist.array() == 1.0).all());
  CHECK(g.rel_vel.norm() == 0.0);
  CHECK(g.rel_pos(0, 0) == 1.0);  // points from reactor to actor

  // Random case against a brute-force triple loop.
  const auto [rx, ry] = nearby_agents(5, 4, 21);
  const auto graph = interaction_graph(rx, ry);
  for (int k = 0; k < 5; ++k)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        Vec3 rel;
        for (int c = 0; c < 3; ++c)
          rel[c] = ry(k, 3 * j + c) - rx(k, 3 * i + c);
        const int p = i * 4 + j;
        for (int c = 0; c < 3; ++c)
          CHECK(graph.rel_pos(k, 3 * p + c) == rel[c]);
        CHECK(graph.dist(k, p) == rel.norm());
      }
  CHECK_THROWS_AS(interaction_graph(rx, randn(5, 9, 22)), ConfigError);
}

TEST_CASE("pair softmax rows are normalized distributions") {
  const Matd dist = randn(6, 16, 30).array().abs();
  const Matd sm = pair_softmax(dist);
  for (int k = 0; k < 6; ++k) {
    CHECK(std::abs(sm.row(k).sum() - 1.0) < 1e-9);
    CHECK((sm.row(k).array() > 0.0).all());
  }
}

TEST_CASE("position interaction loss against a brute-force oracle") {
  const auto [rx, ry] = nearby_agents(6, 5, 40);
  const auto [gx, gy] = nearby_agents(6, 5, 41);
  const auto gt = interaction_graph(rx, ry);
  const auto gen = interaction_graph(gx, gy);

  // Equal graphs vanish regardless of the weights.
  CHECK(position_interaction_loss(gt, gt, 0.7, 1e-3) == 0.0);
  // A radius below every distance empties the active set.
  CHECK(position_interaction_loss(gen, gt, 1e-6, 1e-3) == 0.0);

  for (double c : {0.25, 0.5, 1.0}) {
    const double mine = position_interaction_loss(gen, gt, c, 1e-3);
    const double oracle = oracle_position_loss(gen, gt, c, 1e-3);
    CHECK(mine == Catch::Approx(oracle).epsilon(1e-9).margin(1e-12));
    CHECK(mine >= 0.0);
  }

  // Tiny hand case: one frame, two joints each.
  Matd hr(1, 6), ha(1, 6), hg(1, 6);
  hr << 0, 0, 0, 1, 0, 0;
  ha << 0, 0, 0.3, 1, 0, 0.4;
  hg << 0.05, 0, 0, 1.02, 0, 0;
  const auto hand_gt = interaction_graph(hr, ha);
  const auto hand_gen = interaction_graph(hg, ha);
  const double got = position_interaction_loss(hand_gen, hand_gt, 0.5, 1e-3);
  CHECK(got == Catch::Approx(oracle_position_loss(hand_gen, hand_gt, 0.5, 1e-3))
                   .epsilon(1e-9));
  CHECK(got > 0.0);
}

TEST_CASE("interaction weights are symmetric in the two graphs") {
  const auto [rx, ry] = nearby_agents(3, 3, 50);
  const auto [gx, gy] = nearby_agents(3, 3, 51);
  const auto a = interaction_graph(rx, ry);
  const auto b = interaction_graph(gx, gy);
  // W depends on (softmax_a + softmax_b) and (phi_a + phi_b); swapping the
  // graphs must leave every weight unchanged.
  const Matd w_ab = (pair_softmax(a.dist) + pair_softmax(b.dist));
  const Matd w_ba = (pair_softmax(b.dist) + pair_softmax(a.dist));
  CHECK((w_ab - w_ba).norm() == 0.0);
  for (int k = 0; k < a.dist.rows(); ++k)
    for (int p = 0; p < a.dist.cols(); ++p) {
      const double pa = 1.0 / std::max(a.dist(k, p), 1e-3) +
                        1.0 / std::max(b.dist(k, p), 1e-3);
      const double pb = 1.0 / std::max(b.dist(k, p), 1e-3) +
                        1.0 / std::max(a.dist(k, p), 1e-3);
      CHECK(pa == pb);
    }
}

TEST_CASE("velocity interaction loss against a brute-force oracle") {
  const auto [rx, ry] = nearby_agents(6, 4, 60);
  const auto [gx, gy] = nearby_agents(6, 4, 61);
  const auto gt = interaction_graph(rx, ry);
  const auto gen = interaction_graph(gx, gy);

  CHECK(velocity_interaction_loss(gt, gt, 0.7, 1e-3) == 0.0);

  // A static scene has zero relative velocity everywhere.
  Matd still_r = Matd::Zero(4, 6), still_a = Matd::Zero(4, 6);
  still_a.col(2).setConstant(0.2);
  const auto still = interaction_graph(still_r, still_a);
  CHECK(velocity_interaction_loss(still, still, 10.0, 1e-3) == 0.0);

  for (double c : {0.25, 0.5, 1.0}) {
    const double mine = velocity_interaction_loss(gen, gt, c, 1e-3);
    CHECK(mine ==
          Catch::Approx(oracle_velocity_loss(gen, gt, c)).epsilon(1e-9).margin(1e-12));
  }
}

TEST_CASE("total loss gates the kinematic and interaction groups") {
  LossWeights w;
  LossComponents c;
  c.recon = 1.0;
  c.foot = 1.0;
  c.vel = 1.0;
  c.rot = 1.0;
  c.traj_pos = 1.0;
  c.inter_pos = 1.0;
  c.inter_vel = 1.0;
  CHECK(total_full_loss(700, w, c) == 458.5);  // gate inclusive at the threshold
  CHECK(total_full_loss(701, w, c) == 7.0);    // reconstruction only above it
  CHECK(total_full_loss(0, w, c) == 458.5);

  c.recon = 0.37;
  CHECK(total_full_loss(900, w, c) == 7.0 * 0.37);
}

TEST_CASE("loss weights validate and round-trip through JSON") {
  LossWeights w;
  w.validate();
  const LossWeights back = LossWeights::from_json(w.to_json());
  CHECK(back.lambda_foot == w.lambda_foot);
  CHECK(back.gate_threshold == w.gate_threshold);
  CHECK(back.distance_floor == w.distance_floor);

  LossWeights bad;
  bad.lambda_vel = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = LossWeights{};
  bad.gate_threshold = 2000;
  CHECK_THROWS_AS(bad.validate(1000), ConfigError);
  bad = LossWeights{};
  bad.contact_radius = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("tape interaction losses equal the value implementation") {
  const auto [rx, ry] = nearby_agents(5, 6, 70);
  const auto [gx, unused] = nearby_agents(5, 6, 71);
  const auto gt = interaction_graph(rx, ry);
  const auto gen = interaction_graph(gx, ry);  // same actor on both sides

  Tape<double> tape;
  const auto pos = tape.input(gx);
  const auto nodes = interaction_loss_nodes(tape, pos, ry, gt, 0.6, 1e-3);
  CHECK(tape.value(nodes.position)(0, 0) ==
        Catch::Approx(position_interaction_loss(gen, gt, 0.6, 1e-3))
            .epsilon(1e-12));
  CHECK(tape.value(nodes.velocity)(0, 0) ==
        Catch::Approx(velocity_interaction_loss(gen, gt, 0.6, 1e-3))
            .epsilon(1e-12));

  // Empty active set produces constant-zero nodes.
  const auto empty = interaction_loss_nodes(tape, pos, ry, gt, 1e-9, 1e-3);
  CHECK(tape.value(empty.position)(0, 0) == 0.0);
  CHECK(tape.value(empty.velocity)(0, 0) == 0.0);
}

TEST_CASE("interaction gradients match finite differences at full scale") {
  const int frames = 8, joints = kJoints;
  const auto [rx, ry] = nearby_agents(frames, joints, 80);
  const auto [gx, unused] = nearby_agents(frames, joints, 81);
  const auto gt = interaction_graph(rx, ry);
  {
    const auto probe = interaction_graph(gx, ry);
    REQUIRE(detail::active_pairs(gt.dist, 0.6).sum() > 0.0);
    (void)probe;
  }

  Tape<double> tape;
  const auto pos = tape.input(gx);
  const auto nodes = interaction_loss_nodes(tape, pos, ry, gt, 0.6, 1e-3);
  tape.backward(tape.add(nodes.position, nodes.velocity));
  const Matd analytic = tape.grad(pos);

  auto value = [&](const Matd& x) {
    const auto g = interaction_graph(x, ry);
    return position_interaction_loss(g, gt, 0.6, 1e-3) +
           velocity_interaction_loss(g, gt, 0.6, 1e-3);
  };
  const Matd dir = randn(frames, 3 * joints, 82);
  const double h = 1e-6;
  const double fd = (value(gx + h * dir) - value(gx - h * dir)) / (2 * h);
  const double an = (analytic.array() * dir.array()).sum();
  CHECK(std::abs(fd - an) / std::max(1.0, std::abs(an)) < 1e-3);
}

TEST_CASE("kinematic tape nodes match values and finite differences") {
  const auto& skel = smpl22();
  const int frames = 8;
  const double fps = 20.0;
  RandomStream rng(90, "test.kin.tape");
  // Slow, grounded feet for a nontrivial contact mask.
  Matd gen = 0.05 * rng.normal_matrix<double>(frames, 3 * kJoints);
  for (int j = 0; j < kJoints; ++j) gen.col(3 * j + 1).array() += 0.9;
  for (int f : skel.foot_joints) {
    gen.col(3 * f + 1).setConstant(0.02);
    for (int k = 0; k < frames; ++k) {
      gen(k, 3 * f) = 0.001 * k;
      gen(k, 3 * f + 2) = 0.0005 * k;
    }
  }
  const Matd gt = gen + 0.03 * rng.normal_matrix<double>(frames, 3 * kJoints);
  const Matd gen_yaw = 0.2 * rng.normal_matrix<double>(frames, 1);
  const Matd gt_yaw = 0.2 * rng.normal_matrix<double>(frames, 1);
  LossWeights w;
  const Matd contacts =
      foot_contact_mask(gen, skel.foot_joints, fps, w.gamma_v, w.gamma_h);
  REQUIRE(contacts.sum() > 0.0);

  Tape<double> tape;
  const auto pos = tape.input(gen);
  const auto yaw = tape.input(gen_yaw);
  const auto nodes = kinematic_loss_nodes(tape, pos, yaw, gt, gt_yaw, contacts,
                                          skel.foot_joints, w, fps);
  const auto value_side =
      kinematic_loss(gen, gt, gen_yaw, gt_yaw, w, fps, skel.foot_joints);
  CHECK(tape.value(nodes.foot)(0, 0) == Catch::Approx(value_side.foot).epsilon(1e-12));
  CHECK(tape.value(nodes.vel)(0, 0) == Catch::Approx(value_side.vel).epsilon(1e-12));
  CHECK(tape.value(nodes.rot)(0, 0) == Catch::Approx(value_side.rot).epsilon(1e-12));
  CHECK(tape.value(nodes.traj_pos)(0, 0) ==
        Catch::Approx(value_side.traj_pos).epsilon(1e-12));
  CHECK(tape.value(nodes.total)(0, 0) ==
        Catch::Approx(value_side.total).epsilon(1e-12));

  tape.backward(nodes.total);
  const Matd grad_pos = tape.grad(pos);
  const Matd grad_yaw = tape.grad(yaw);

  // FD oracle holds the contact mask fixed, matching the detached-contacts
  // convention of the tape version.
  auto value = [&](const Matd& p, const Matd& y) {
    const Matd vel = (p.bottomRows(frames - 1) - p.topRows(frames - 1)) * fps;
    const Matd gt_vel = (gt.bottomRows(frames - 1) - gt.topRows(frames - 1)) * fps;
    double out = w.lambda_vel * (vel - gt_vel).squaredNorm() /
                 (kJoints * (frames - 1));
    out += w.lambda_rot * (y - gt_yaw).squaredNorm() / frames;
    out += w.lambda_traj * (p.leftCols(3) - gt.leftCols(3)).squaredNorm() / frames;
    double skate = 0.0;
    for (int k = 0; k + 1 < frames; ++k)
      for (size_t f = 0; f < skel.foot_joints.size(); ++f)
        if (contacts(k, f) != 0.0)
          skate += vel.row(k).segment(3 * skel.foot_joints[f], 3).squaredNorm();
    out += w.lambda_foot * skate / contacts.sum();
    return out;
  };
  const Matd dp = randn(frames, 3 * kJoints, 91);
  const Matd dy = randn(frames, 1, 92);
  const double h = 1e-6;
  const double fd = (value(gen + h * dp, gen_yaw + h * dy) -
                     value(gen - h * dp, gen_yaw - h * dy)) /
                    (2 * h);
  const double an =
      (grad_pos.array() * dp.array()).sum() + (grad_yaw.array() * dy.array()).sum();
  CHECK(std::abs(fd - an) / std::max(1.0, std::abs(an)) < 1e-3);
}

TEST_CASE("the gate cuts gradients exactly") {
  const auto [rx, ry] = nearby_agents(4, 3, 95);
  const auto [gx, unused] = nearby_agents(4, 3, 96);
  const auto gt = interaction_graph(rx, ry);
  LossWeights w;

  Tape<double> tape;
  const auto pos = tape.input(gx);
  const auto inter = interaction_loss_nodes(tape, pos, ry, gt, 0.6, 1e-3);
  const auto recon = tape.input(Matd::Constant(1, 1, 0.5));
  const auto total = total_full_loss_node<double>(tape, w.gate_threshold + 1, w,
                                                  recon, std::nullopt, {inter});
  CHECK(tape.value(total)(0, 0) == 7.0 * 0.5);
  tape.backward(total);
  CHECK(tape.grad(pos).norm() == 0.0);  // exactly zero, not merely small
  CHECK(tape.grad(recon)(0, 0) == 7.0);

  // At the threshold the groups participate.
  Tape<double> tape2;
  const auto pos2 = tape2.input(gx);
  const auto inter2 = interaction_loss_nodes(tape2, pos2, ry, gt, 0.6, 1e-3);
  const auto recon2 = tape2.input(Matd::Constant(1, 1, 0.5));
  const auto total2 = total_full_loss_node<double>(tape2, w.gate_threshold, w,
                                                   recon2, std::nullopt, {inter2});
  tape2.backward(total2);
  CHECK(tape2.grad(pos2).norm() > 0.0);
  const double expect = 7.0 * 0.5 +
                        w.lambda_inter_pos * tape2.value(inter2.position)(0, 0) +
                        w.lambda_inter_vel * tape2.value(inter2.velocity)(0, 0);
  CHECK(tape2.value(total2)(0, 0) == Catch::Approx(expect).epsilon(1e-12));
}
