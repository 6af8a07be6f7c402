// Autodiff engine tests: every op is checked against central finite
// differences in double precision, and the fused motion ops are checked
// against the plain kinematics implementations.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "moreact/autodiff.hpp"
#include "moreact/common.hpp"
#include "moreact/kinematics.hpp"

using namespace moreact;
using T = Tape<double>;
using Var = T::Var;

namespace {

using Builder = std::function<Var(T&, const std::vector<Var>&)>;

double eval_loss(const std::vector<Matd>& inputs, const Builder& build) {
  T tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& m : inputs) leaves.push_back(tape.input(m));
  return tape.value(build(tape, leaves))(0, 0);
}

// Central finite differences on every element of every input.
void check_gradients(std::vector<Matd> inputs, const Builder& build,
                     double tol = 1e-6, double h = 1e-6) {
  T tape;
  std::vector<Var> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.input(m));
  const Var loss = build(tape, leaves);
  tape.backward(loss);
  std::vector<Matd> analytic;
  for (const Var v : leaves) analytic.push_back(tape.grad(v));

  for (size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index e = 0; e < inputs[i].size(); ++e) {
      const double saved = inputs[i].data()[e];
      inputs[i].data()[e] = saved + h;
      const double up = eval_loss(inputs, build);
      inputs[i].data()[e] = saved - h;
      const double down = eval_loss(inputs, build);
      inputs[i].data()[e] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double got = analytic[i].data()[e];
      const double scale = std::max({1.0, std::abs(numeric), std::abs(got)});
      INFO("input " << i << " element " << e << ": analytic " << got
                    << " vs numeric " << numeric);
      REQUIRE(std::abs(got - numeric) / scale < tol);
    }
  }
}

Matd randm(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  RandomStream rng(seed, "test.autodiff");
  return rng.normal_matrix<double>(r, c);
}

}  // namespace

TEST_CASE("elementwise and scalar ops differentiate correctly") {
  const Matd a = randm(3, 4, 1), b = randm(3, 4, 2);

  check_gradients({a, b}, [](T& t, const std::vector<Var>& v) {
    return t.mean_all(t.add(v[0], v[1]));
  });
  check_gradients({a, b}, [](T& t, const std::vector<Var>& v) {
    return t.mean_all(t.sub(v[0], v[1]));
  });
  check_gradients({a, b}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.mul(v[0], v[1]));
  });
  check_gradients({a}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.scalar_mul(v[0], -2.5));
  });
  const Matd c = randm(3, 4, 3);
  check_gradients({a}, [c](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.mul_constant(t.add_constant(v[0], c), c));
  });
}

TEST_CASE("matrix products differentiate correctly") {
  const Matd a = randm(3, 5, 4), b = randm(5, 2, 5), bt = randm(4, 5, 6);

  check_gradients({a, b}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.matmul(v[0], v[1]));
  });
  check_gradients({a, bt}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.matmul_nt(v[0], v[1]));
  });
  const Matd k = randm(5, 3, 7);
  check_gradients({a}, [k](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.matmul_constant(v[0], k));
  });

  // Values match Eigen directly.
  T tape;
  const Var va = tape.input(a), vb = tape.input(b);
  CHECK((tape.value(tape.matmul(va, vb)) - a * b).cwiseAbs().maxCoeff() < 1e-14);
  const Var vbt = tape.input(bt);
  CHECK((tape.value(tape.matmul_nt(va, vbt)) - a * bt.transpose())
            .cwiseAbs()
            .maxCoeff() < 1e-14);
}

TEST_CASE("nonlinearities differentiate correctly") {
  const Matd a = randm(4, 6, 8);
  check_gradients({a}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.gelu(v[0]));
  });
  check_gradients({a}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.mul(t.row_softmax(v[0]), v[0]));
  });
  check_gradients({a}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.mul(t.layernorm_rows(v[0]), v[0]));
  }, 1e-5);

  // gelu point values.
  T tape;
  Matd x(1, 3);
  x << 0.0, 1.0, -10.0;
  const Matd y = tape.value(tape.gelu(tape.input(x)));
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == Catch::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(std::abs(y(0, 2)) < 1e-8);

  // softmax rows sum to one and match a manual evaluation.
  const Matd sm = tape.value(tape.row_softmax(tape.input(a)));
  for (int r = 0; r < sm.rows(); ++r) {
    CHECK(sm.row(r).sum() == Catch::Approx(1.0).epsilon(1e-12));
    const double denom = a.row(r).array().exp().sum();
    for (int c = 0; c < sm.cols(); ++c)
      CHECK(sm(r, c) == Catch::Approx(std::exp(a(r, c)) / denom).epsilon(1e-10));
  }

  // layernorm rows are standardized.
  const Matd ln = tape.value(tape.layernorm_rows(tape.input(a)));
  for (int r = 0; r < ln.rows(); ++r) {
    CHECK(std::abs(ln.row(r).mean()) < 1e-12);
    // Variance comes out as var/(var + eps), i.e. marginally below one.
    CHECK(ln.row(r).squaredNorm() / ln.cols() == Catch::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("broadcast ops differentiate correctly") {
  const Matd a = randm(5, 3, 9), row = randm(1, 3, 10);
  check_gradients({a, row}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.mul(t.add_row_broadcast(v[0], v[1]), v[0]));
  });
  check_gradients({a, row}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.mul_row_broadcast(v[0], v[1]));
  });
}

TEST_CASE("shape ops differentiate correctly") {
  const Matd a = randm(4, 3, 11), b = randm(4, 2, 12), c = randm(2, 3, 13);
  check_gradients({a, b}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.mul(t.concat_cols(v[0], v[1]),
                           t.concat_cols(v[0], v[1])));
  });
  check_gradients({a, c}, [](T& t, const std::vector<Var>& v) {
    const Var cat = t.concat_rows(v[0], v[1]);
    return t.sum_all(t.mul(cat, cat));
  });
  check_gradients({a}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.slice_cols(v[0], 1, 2));
  });
  check_gradients({a}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.slice_rows(v[0], 2, 2));
  });
  // Gather with a repeated index accumulates.
  const Matd table = randm(6, 3, 14);
  check_gradients({table}, [](T& t, const std::vector<Var>& v) {
    const Var g = t.gather_rows(v[0], {0, 3, 3, 5});
    return t.sum_all(t.mul(g, g));
  });

  T tape;
  const Var vt = tape.input(table);
  const Matd g = tape.value(tape.gather_rows(vt, {2, 2, 0}));
  CHECK((g.row(0) - table.row(2)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((g.row(2) - table.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(tape.gather_rows(vt, {7}), ConfigError);
}

TEST_CASE("reductions differentiate correctly") {
  const Matd a = randm(5, 4, 15);
  check_gradients({a}, [](T& t, const std::vector<Var>& v) {
    return t.mean_all(t.mul(v[0], v[0]));
  });
  check_gradients({a}, [](T& t, const std::vector<Var>& v) {
    const Var m = t.mean_rows(v[0]);
    return t.sum_all(t.mul(m, m));
  });
  check_gradients({a}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.max_rows(v[0]));
  });

  T tape;
  const Var va = tape.input(a);
  CHECK(tape.value(tape.mean_all(va))(0, 0) == Catch::Approx(a.mean()));
  const Matd mx = tape.value(tape.max_rows(va));
  for (int c = 0; c < a.cols(); ++c)
    CHECK(mx(0, c) == a.col(c).maxCoeff());
}

TEST_CASE("cross entropy matches a naive softmax loop and differentiates") {
  const Matd logits = 3.0 * randm(6, 5, 42);
  const std::vector<int> labels = {0, 3, 2, 4, 1, 3};

  // Value oracle: plain softmax + log, no max shift.
  double expected = 0.0;
  for (int r = 0; r < logits.rows(); ++r) {
    double z = 0.0;
    for (int c = 0; c < logits.cols(); ++c) z += std::exp(logits(r, c));
    expected -= std::log(std::exp(logits(r, labels[(size_t)r])) / z);
  }
  expected /= static_cast<double>(logits.rows());

  T tape;
  const Var v = tape.input(logits);
  CHECK(tape.value(tape.cross_entropy_rows(v, labels))(0, 0) ==
        Catch::Approx(expected).epsilon(1e-12));

  check_gradients({logits}, [labels](T& t, const std::vector<Var>& in) {
    return t.cross_entropy_rows(in[0], labels);
  });

  // The max shift keeps huge logits finite where the naive form overflows.
  Matd big = logits;
  big.array() += 800.0;
  T tape2;
  CHECK(std::isfinite(
      tape2.value(tape2.cross_entropy_rows(tape2.input(big), labels))(0, 0)));

  T tape3;
  const Var w = tape3.input(logits);
  CHECK_THROWS_AS(tape3.cross_entropy_rows(w, {0, 1}), ConfigError);
  CHECK_THROWS_AS(tape3.cross_entropy_rows(w, {0, 3, 2, 4, 1, 5}), ConfigError);
}

TEST_CASE("group norms, frame differences and guarded roots differentiate") {
  const Matd a = randm(4, 6, 16);
  check_gradients({a}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.sqnorm_groups(v[0], 3));
  });
  check_gradients({a}, [](T& t, const std::vector<Var>& v) {
    const Var d = t.frame_diff(v[0], 20.0);
    return t.sum_all(t.mul(d, d));
  });
  const Matd positive = (randm(3, 5, 17).array().abs() + 0.5).matrix();
  check_gradients({positive}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.safe_sqrt(v[0]));
  });
  check_gradients({positive}, [](T& t, const std::vector<Var>& v) {
    return t.sum_all(t.reciprocal_clamped(v[0], 1e-3));
  });

  // Value checks.
  T tape;
  const Var va = tape.input(a);
  const Matd sq = tape.value(tape.sqnorm_groups(va, 3));
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 2; ++k)
      CHECK(sq(r, k) ==
            Catch::Approx(a.row(r).segment(3 * k, 3).squaredNorm()).epsilon(1e-12));
  const Matd fd = tape.value(tape.frame_diff(va, 2.0));
  CHECK((fd - 2.0 * (a.bottomRows(3) - a.topRows(3))).cwiseAbs().maxCoeff() < 1e-14);

  // Clamped regions have zero derivative but finite value.
  Matd tiny(1, 2);
  tiny << 1e-15, 0.5;
  T tape2;
  const Var vt = tape2.input(tiny);
  const Var s = tape2.sum_all(tape2.safe_sqrt(vt, 1e-12));
  tape2.backward(s);
  CHECK(tape2.grad(vt)(0, 0) == 0.0);
  CHECK(tape2.grad(vt)(0, 1) == Catch::Approx(0.5 / std::sqrt(0.5)));
}

TEST_CASE("pairwise_diff matches a direct loop and differentiates") {
  const int joints = 4;
  const Matd x = randm(3, 3 * joints, 18);
  const Matd y = randm(3, 3 * joints, 19);

  T tape;
  const Var vx = tape.input(x);
  const Matd out = tape.value(tape.pairwise_diff(vx, y));
  REQUIRE(out.cols() == joints * joints * 3);
  for (int t = 0; t < 3; ++t)
    for (int i = 0; i < joints; ++i)
      for (int j = 0; j < joints; ++j)
        for (int c = 0; c < 3; ++c)
          CHECK(out(t, (i * joints + j) * 3 + c) ==
                Catch::Approx(y(t, 3 * j + c) - x(t, 3 * i + c)).margin(1e-14));

  check_gradients({x}, [y](T& t, const std::vector<Var>& v) {
    const Var d = t.pairwise_diff(v[0], y);
    return t.sum_all(t.mul(d, d));
  });
}

TEST_CASE("decoded_positions agrees with the kinematics decode") {
  // Build a genuine motion so features are realistic.
  const Skeleton& skel = smpl22();
  RandomStream rng(20, "test.ad_decode");
  std::vector<Pose> poses;
  Pose p = Pose::rest(skel);
  p.root_pos = Vec3(0.3, kStandingRootHeight, -0.2);
  for (int k = 0; k < 5; ++k) {
    p.root_yaw = wrap_to_pi(0.4 * k - 0.7);
    p.root_pos += Vec3(0.05, 0.0, -0.02);
    poses.push_back(p);
  }
  const MotionSequence m = encode(skel, poses, 20.0);

  T tape;
  const Var v = tape.input(m.features);
  const Matd got = tape.value(tape.decoded_positions(v));
  const Matd want = decode(m);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);

  // Gradient check through a position-space loss.
  check_gradients({m.features}, [](T& t, const std::vector<Var>& v2) {
    const Var pos = t.decoded_positions(v2[0]);
    return t.mean_all(t.mul(pos, pos));
  }, 1e-5);
}

TEST_CASE("a transformer-like composite graph passes the gradient check") {
  const int frames = 4, dim = 6;
  const Matd x = randm(frames, dim, 21);
  const Matd wq = 0.5 * randm(dim, dim, 22), wk = 0.5 * randm(dim, dim, 23),
             wv = 0.5 * randm(dim, dim, 24), wo = 0.5 * randm(dim, dim, 25);
  const Matd w1 = 0.5 * randm(dim, 2 * dim, 26), w2 = 0.5 * randm(2 * dim, dim, 27);
  const Matd bias = 0.1 * randm(1, dim, 28);

  const Builder attention = [](T& t, const std::vector<Var>& v) {
    const Var x = v[0];
    const Var q = t.matmul(t.layernorm_rows(x), v[1]);
    const Var k = t.matmul(x, v[2]);
    const Var val = t.matmul(x, v[3]);
    const Var scores = t.scalar_mul(t.matmul_nt(q, k), 1.0 / std::sqrt(6.0));
    const Var attn = t.matmul(t.row_softmax(scores), val);
    const Var res = t.add(x, t.matmul(attn, v[4]));
    const Var h = t.gelu(t.add_row_broadcast(t.matmul(res, v[5]), v[7]));
    const Var out = t.add(res, t.matmul(h, t.slice_rows(v[6], 0, 12)));
    return t.mean_all(t.mul(out, out));
  };

  Matd bias2 = Matd::Zero(1, 2 * dim);
  bias2 = 0.1 * randm(1, 2 * dim, 29);
  check_gradients({x, wq, wk, wv, wo, w1, w2, bias2}, attention, 1e-5);
}

TEST_CASE("tape guards misuse") {
  T tape;
  const Var a = tape.input(randm(2, 2, 30));
  CHECK_THROWS_AS(tape.backward(a), ConfigError);  // non-scalar loss

  Matd nanm(1, 1);
  nanm(0, 0) = std::nan("");
  CHECK_THROWS_AS(tape.input(nanm), SamplingDivergedError);

  const Var b = tape.input(randm(3, 2, 31));
  CHECK_THROWS_AS(tape.add(a, b), ConfigError);  // shape mismatch
  CHECK_THROWS_AS(tape.slice_cols(a, 1, 5), ConfigError);

  // Gradients accumulate across fan-out.
  T t2;
  Matd one(1, 1);
  one(0, 0) = 3.0;
  const Var x = t2.input(one);
  const Var y = t2.add(x, x);  // dy/dx = 2
  t2.backward(t2.sum_all(y));
  CHECK(t2.grad(x)(0, 0) == 2.0);
}
