/**
 * @file autodiff.hpp
 * @brief A small tape-based reverse-mode autodiff engine over row-major
 *        Eigen matrices.
 *
 * The engine is deliberately minimal: a Tape owns a flat list of nodes, each
 * op records a backward closure, and backward() walks the list in reverse.
 * Constants never enter the tape — ops that mix a variable with fixed data
 * capture the constant by value inside the closure.  The scalar type is a
 * template parameter so training can run in float while gradient checks run
 * the identical code in double.
 */
#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "moreact/common.hpp"
#include "moreact/skeleton.hpp"

namespace moreact {

template <typename Scalar>
class Tape {
 public:
  using M = Mat<Scalar>;

  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() { nodes_.reserve(1024); }

  /// Introduces a differentiable leaf (parameters, model inputs).
  Var input(M value) { return push(std::move(value), nullptr); }

  const M& value(Var v) const { return nodes_[check(v)].value; }
  const M& grad(Var v) const { return nodes_[check(v)].grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  /// Releases every node; outstanding Vars become invalid.
  void reset() { nodes_.clear(); }

  /**
   * Reverse pass from a 1x1 loss node.  Gradients of every node (leaves
   * included) are available afterwards via grad().
   */
  void backward(Var loss) {
    Node& top = nodes_[check(loss)];
    if (top.value.rows() != 1 || top.value.cols() != 1)
      throw ConfigError("backward() expects a scalar (1x1) loss node");
    for (auto& n : nodes_) n.grad = M::Zero(n.value.rows(), n.value.cols());
    top.grad(0, 0) = Scalar(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.backward) n.backward(*this);
    }
  }

  // -------------------------------------------------------------------------
  // Arithmetic
  // -------------------------------------------------------------------------

  Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    M out = value(a) + value(b);
    return push(std::move(out), [a, b, o = next_id()](Tape& t) {
      t.g(a) += t.g_out(o);
      t.g(b) += t.g_out(o);
    });
  }

  Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    M out = value(a) - value(b);
    return push(std::move(out), [a, b, o = next_id()](Tape& t) {
      t.g(a) += t.g_out(o);
      t.g(b) -= t.g_out(o);
    });
  }

  /// Elementwise product of two variables.
  Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    M out = value(a).cwiseProduct(value(b));
    return push(std::move(out), [a, b, o = next_id()](Tape& t) {
      t.g(a) += t.g_out(o).cwiseProduct(t.value(b));
      t.g(b) += t.g_out(o).cwiseProduct(t.value(a));
    });
  }

  Var scalar_mul(Var a, Scalar c) {
    M out = value(a) * c;
    return push(std::move(out), [a, c, o = next_id()](Tape& t) {
      t.g(a) += c * t.g_out(o);
    });
  }

  Var add_constant(Var a, M c) {
    if (c.rows() != value(a).rows() || c.cols() != value(a).cols())
      throw ConfigError("add_constant: shape mismatch");
    M out = value(a) + c;
    return push(std::move(out), [a, o = next_id()](Tape& t) {
      t.g(a) += t.g_out(o);
    });
  }

  Var mul_constant(Var a, M c) {
    if (c.rows() != value(a).rows() || c.cols() != value(a).cols())
      throw ConfigError("mul_constant: shape mismatch");
    M out = value(a).cwiseProduct(c);
    return push(std::move(out), [a, c = std::move(c), o = next_id()](Tape& t) {
      t.g(a) += t.g_out(o).cwiseProduct(c);
    });
  }

  // -------------------------------------------------------------------------
  // Matrix products
  // -------------------------------------------------------------------------

  /// C = A * B.
  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows())
      throw ConfigError("matmul: inner dimensions differ");
    M out = value(a) * value(b);
    return push(std::move(out), [a, b, o = next_id()](Tape& t) {
      t.g(a).noalias() += t.g_out(o) * t.value(b).transpose();
      t.g(b).noalias() += t.value(a).transpose() * t.g_out(o);
    });
  }

  /// C = A * B^T (saves materializing transposes in attention).
  Var matmul_nt(Var a, Var b) {
    if (value(a).cols() != value(b).cols())
      throw ConfigError("matmul_nt: inner dimensions differ");
    M out = value(a) * value(b).transpose();
    return push(std::move(out), [a, b, o = next_id()](Tape& t) {
      t.g(a).noalias() += t.g_out(o) * t.value(b);
      t.g(b).noalias() += t.g_out(o).transpose() * t.value(a);
    });
  }

  /// C = A * B with constant B.
  Var matmul_constant(Var a, M b) {
    if (value(a).cols() != b.rows())
      throw ConfigError("matmul_constant: inner dimensions differ");
    M out = value(a) * b;
    return push(std::move(out), [a, b = std::move(b), o = next_id()](Tape& t) {
      t.g(a).noalias() += t.g_out(o) * b.transpose();
    });
  }

  // -------------------------------------------------------------------------
  // Nonlinearities and normalization
  // -------------------------------------------------------------------------

  Var gelu(Var a) {
    const M& x = value(a);
    M out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = static_cast<double>(x.data()[i]);
      out.data()[i] = static_cast<Scalar>(v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2)));
    }
    return push(std::move(out), [a, o = next_id()](Tape& t) {
      const M& x = t.value(a);
      M& ga = t.g(a);
      const M& go = t.g_out(o);
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = static_cast<double>(x.data()[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        ga.data()[i] += go.data()[i] * static_cast<Scalar>(cdf + v * pdf);
      }
    });
  }

  /// Softmax along each row.
  Var row_softmax(Var a) {
    const M& x = value(a);
    M out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Scalar mx = x.row(r).maxCoeff();
      out.row(r) = (x.row(r).array() - mx).exp();
      out.row(r) /= out.row(r).sum();
    }
    return push(std::move(out), [a, o = next_id()](Tape& t) {
      const M& y = t.value(o_var(o));
      const M& go = t.g_out(o);
      M& ga = t.g(a);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const Scalar dot = go.row(r).cwiseProduct(y.row(r)).sum();
        ga.row(r) +=
            y.row(r).cwiseProduct((go.row(r).array() - dot).matrix());
      }
    });
  }

  /// Per-row standardization (x - mean) / sqrt(var + eps), no affine part.
  Var layernorm_rows(Var a, double eps = 1e-5) {
    const M& x = value(a);
    const Eigen::Index d = x.cols();
    M out(x.rows(), d);
    Vec<Scalar> inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Scalar mu = x.row(r).mean();
      const Scalar var = (x.row(r).array() - mu).square().mean();
      const Scalar is = Scalar(1) / std::sqrt(var + static_cast<Scalar>(eps));
      inv_std[r] = is;
      out.row(r) = (x.row(r).array() - mu) * is;
    }
    return push(std::move(out),
                [a, inv_std = std::move(inv_std), o = next_id()](Tape& t) {
                  const M& y = t.value(o_var(o));
                  const M& go = t.g_out(o);
                  M& ga = t.g(a);
                  const Scalar d = static_cast<Scalar>(y.cols());
                  for (Eigen::Index r = 0; r < y.rows(); ++r) {
                    const Scalar mean_g = go.row(r).mean();
                    const Scalar mean_gy = go.row(r).cwiseProduct(y.row(r)).sum() / d;
                    ga.row(r) += inv_std[r] *
                                 (go.row(r).array() - mean_g -
                                  y.row(r).array() * mean_gy)
                                     .matrix();
                  }
                });
  }

  // -------------------------------------------------------------------------
  // Broadcasts
  // -------------------------------------------------------------------------

  /// a (R x d) + b (1 x d) broadcast over rows.
  Var add_row_broadcast(Var a, Var b) {
    if (value(b).rows() != 1 || value(b).cols() != value(a).cols())
      throw ConfigError("add_row_broadcast: b must be 1 x cols(a)");
    M out = value(a).rowwise() + value(b).row(0);
    return push(std::move(out), [a, b, o = next_id()](Tape& t) {
      t.g(a) += t.g_out(o);
      t.g(b).row(0) += t.g_out(o).colwise().sum();
    });
  }

  /// a (R x d) .* b (1 x d) broadcast over rows.
  Var mul_row_broadcast(Var a, Var b) {
    if (value(b).rows() != 1 || value(b).cols() != value(a).cols())
      throw ConfigError("mul_row_broadcast: b must be 1 x cols(a)");
    M out = (value(a).array().rowwise() * value(b).row(0).array()).matrix();
    return push(std::move(out), [a, b, o = next_id()](Tape& t) {
      t.g(a) +=
          (t.g_out(o).array().rowwise() * t.value(b).row(0).array()).matrix();
      t.g(b).row(0) +=
          t.g_out(o).cwiseProduct(t.value(a)).colwise().sum();
    });
  }

  // -------------------------------------------------------------------------
  // Shape plumbing
  // -------------------------------------------------------------------------

  Var concat_cols(Var a, Var b) {
    if (value(a).rows() != value(b).rows())
      throw ConfigError("concat_cols: row counts differ");
    M out(value(a).rows(), value(a).cols() + value(b).cols());
    out.leftCols(value(a).cols()) = value(a);
    out.rightCols(value(b).cols()) = value(b);
    const Eigen::Index ca = value(a).cols();
    return push(std::move(out), [a, b, ca, o = next_id()](Tape& t) {
      t.g(a) += t.g_out(o).leftCols(ca);
      t.g(b) += t.g_out(o).rightCols(t.g_out(o).cols() - ca);
    });
  }

  Var concat_rows(Var a, Var b) {
    if (value(a).cols() != value(b).cols())
      throw ConfigError("concat_rows: column counts differ");
    M out(value(a).rows() + value(b).rows(), value(a).cols());
    out.topRows(value(a).rows()) = value(a);
    out.bottomRows(value(b).rows()) = value(b);
    const Eigen::Index ra = value(a).rows();
    return push(std::move(out), [a, b, ra, o = next_id()](Tape& t) {
      t.g(a) += t.g_out(o).topRows(ra);
      t.g(b) += t.g_out(o).bottomRows(t.g_out(o).rows() - ra);
    });
  }

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
    if (start < 0 || n < 1 || start + n > value(a).cols())
      throw ConfigError("slice_cols: range out of bounds");
    M out = value(a).middleCols(start, n);
    return push(std::move(out), [a, start, n, o = next_id()](Tape& t) {
      t.g(a).middleCols(start, n) += t.g_out(o);
    });
  }

  Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
    if (start < 0 || n < 1 || start + n > value(a).rows())
      throw ConfigError("slice_rows: range out of bounds");
    M out = value(a).middleRows(start, n);
    return push(std::move(out), [a, start, n, o = next_id()](Tape& t) {
      t.g(a).middleRows(start, n) += t.g_out(o);
    });
  }

  /// Row lookup (embedding gather); backward scatter-adds into the table.
  Var gather_rows(Var table, std::vector<int> idx) {
    const M& tbl = value(table);
    M out(static_cast<Eigen::Index>(idx.size()), tbl.cols());
    for (size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0 || idx[r] >= tbl.rows())
        throw ConfigError("gather_rows: index out of range");
      out.row(static_cast<Eigen::Index>(r)) = tbl.row(idx[r]);
    }
    return push(std::move(out), [table, idx = std::move(idx), o = next_id()](Tape& t) {
      for (size_t r = 0; r < idx.size(); ++r)
        t.g(table).row(idx[r]) += t.g_out(o).row(static_cast<Eigen::Index>(r));
    });
  }

  // -------------------------------------------------------------------------
  // Reductions
  // -------------------------------------------------------------------------

  Var sum_all(Var a) {
    M out(1, 1);
    out(0, 0) = value(a).sum();
    return push(std::move(out), [a, o = next_id()](Tape& t) {
      t.g(a).array() += t.g_out(o)(0, 0);
    });
  }

  Var mean_all(Var a) {
    M out(1, 1);
    out(0, 0) = value(a).mean();
    return push(std::move(out), [a, o = next_id()](Tape& t) {
      t.g(a).array() += t.g_out(o)(0, 0) / static_cast<Scalar>(t.value(a).size());
    });
  }

  /// Column-wise mean over rows -> 1 x d.
  Var mean_rows(Var a) {
    M out = value(a).colwise().mean();
    return push(std::move(out), [a, o = next_id()](Tape& t) {
      const Scalar inv = Scalar(1) / static_cast<Scalar>(t.value(a).rows());
      t.g(a) += inv * t.g_out(o).row(0).replicate(t.value(a).rows(), 1);
    });
  }

  /// Column-wise max over rows -> 1 x d; backward routes to the arg max.
  Var max_rows(Var a) {
    const M& x = value(a);
    M out(1, x.cols());
    std::vector<Eigen::Index> arg(static_cast<size_t>(x.cols()));
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      Eigen::Index best = 0;
      for (Eigen::Index r = 1; r < x.rows(); ++r)
        if (x(r, c) > x(best, c)) best = r;
      arg[static_cast<size_t>(c)] = best;
      out(0, c) = x(best, c);
    }
    return push(std::move(out), [a, arg = std::move(arg), o = next_id()](Tape& t) {
      for (Eigen::Index c = 0; c < t.g_out(o).cols(); ++c)
        t.g(a)(arg[static_cast<size_t>(c)], c) += t.g_out(o)(0, c);
    });
  }

  /**
   * Mean softmax cross-entropy of each row of `logits` against its integer
   * label (a column index) -> 1 x 1.  The forward pass shifts by the row
   * maximum before exponentiating so large logits stay finite.
   */
  Var cross_entropy_rows(Var logits, std::vector<int> labels) {
    const M& x = value(logits);
    if (static_cast<Eigen::Index>(labels.size()) != x.rows())
      throw ConfigError("cross_entropy_rows: one label per row required");
    for (const int c : labels)
      if (c < 0 || c >= x.cols())
        throw ConfigError("cross_entropy_rows: label outside logit columns");
    double total = 0.0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mx = static_cast<double>(x.row(r).maxCoeff());
      double sum = 0.0;
      for (Eigen::Index c = 0; c < x.cols(); ++c)
        sum += std::exp(static_cast<double>(x(r, c)) - mx);
      total += mx + std::log(sum) -
               static_cast<double>(x(r, labels[static_cast<size_t>(r)]));
    }
    M out(1, 1);
    out(0, 0) = static_cast<Scalar>(total / static_cast<double>(x.rows()));
    return push(std::move(out),
                [logits, labels = std::move(labels), o = next_id()](Tape& t) {
                  const M& x = t.value(logits);
                  M& ga = t.g(logits);
                  const Scalar go = t.g_out(o)(0, 0);
                  const Scalar inv = Scalar(1) / static_cast<Scalar>(x.rows());
                  for (Eigen::Index r = 0; r < x.rows(); ++r) {
                    const Scalar mx = x.row(r).maxCoeff();
                    M p = (x.row(r).array() - mx).exp().matrix();
                    p /= p.sum();
                    p(0, labels[static_cast<size_t>(r)]) -= Scalar(1);
                    ga.row(r) += go * inv * p.row(0);
                  }
                });
  }

  /// Squared norms of consecutive groups: (R x g*K) -> (R x K),
  /// out(r,k) = sum_c a(r, k*g + c)^2.
  Var sqnorm_groups(Var a, int group) {
    const M& x = value(a);
    if (group < 1 || x.cols() % group != 0)
      throw ConfigError("sqnorm_groups: columns not divisible by group");
    const Eigen::Index k = x.cols() / group;
    M out = M::Zero(x.rows(), k);
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index i = 0; i < k; ++i)
        out(r, i) = x.row(r).segment(i * group, group).squaredNorm();
    return push(std::move(out), [a, group, o = next_id()](Tape& t) {
      const M& x = t.value(a);
      const M& go = t.g_out(o);
      M& ga = t.g(a);
      const Eigen::Index k = go.cols();
      for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index i = 0; i < k; ++i)
          ga.row(r).segment(i * group, group) +=
              Scalar(2) * go(r, i) * x.row(r).segment(i * group, group);
    });
  }

  /// Scaled forward difference over rows: out.row(k) = s*(a.row(k+1)-a.row(k)).
  Var frame_diff(Var a, Scalar scale) {
    const M& x = value(a);
    if (x.rows() < 2) throw ConfigError("frame_diff: need at least two rows");
    M out = (x.bottomRows(x.rows() - 1) - x.topRows(x.rows() - 1)) * scale;
    return push(std::move(out), [a, scale, o = next_id()](Tape& t) {
      const M& go = t.g_out(o);
      M& ga = t.g(a);
      ga.topRows(go.rows()) -= scale * go;
      ga.bottomRows(go.rows()) += scale * go;
    });
  }

  /// sqrt(max(a, floor)); the derivative vanishes on the clamped region.
  Var safe_sqrt(Var a, double floor = 1e-12) {
    const M& x = value(a);
    M out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i)
      out.data()[i] = std::sqrt(std::max(x.data()[i], static_cast<Scalar>(floor)));
    return push(std::move(out), [a, floor, o = next_id()](Tape& t) {
      const M& x = t.value(a);
      const M& y = t.value(o_var(o));
      const M& go = t.g_out(o);
      M& ga = t.g(a);
      for (Eigen::Index i = 0; i < x.size(); ++i)
        if (x.data()[i] > static_cast<Scalar>(floor))
          ga.data()[i] += go.data()[i] * Scalar(0.5) / y.data()[i];
    });
  }

  /// 1 / max(a, eps); the derivative vanishes on the clamped region.
  Var reciprocal_clamped(Var a, double eps) {
    const M& x = value(a);
    M out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i)
      out.data()[i] = Scalar(1) / std::max(x.data()[i], static_cast<Scalar>(eps));
    return push(std::move(out), [a, eps, o = next_id()](Tape& t) {
      const M& x = t.value(a);
      const M& y = t.value(o_var(o));
      const M& go = t.g_out(o);
      M& ga = t.g(a);
      for (Eigen::Index i = 0; i < x.size(); ++i)
        if (x.data()[i] > static_cast<Scalar>(eps))
          ga.data()[i] -= go.data()[i] * y.data()[i] * y.data()[i];
    });
  }

  // -------------------------------------------------------------------------
  // Motion-specific fused ops
  // -------------------------------------------------------------------------

  /**
   * Relative position graph against a constant partner: given variable joint
   * positions x (T x 3J) and constant partner positions y (T x 3J), produces
   * T x (J*J*3) with out(t, (i*J + j)*3 + c) = y(t, j*3+c) - x(t, i*3+c),
   * i.e. the vector from this agent's joint i to the partner's joint j.
   */
  Var pairwise_diff(Var x, M partner) {
    const M& xp = value(x);
    if (partner.rows() != xp.rows() || partner.cols() != xp.cols())
      throw ConfigError("pairwise_diff: shape mismatch");
    const Eigen::Index j = xp.cols() / 3;
    M out(xp.rows(), j * j * 3);
    for (Eigen::Index t = 0; t < xp.rows(); ++t)
      for (Eigen::Index i = 0; i < j; ++i)
        for (Eigen::Index q = 0; q < j; ++q)
          out.row(t).segment((i * j + q) * 3, 3) =
              partner.row(t).segment(q * 3, 3) - xp.row(t).segment(i * 3, 3);
    return push(std::move(out), [x, j, o = next_id()](Tape& t) {
      const M& go = t.g_out(o);
      M& gx = t.g(x);
      for (Eigen::Index r = 0; r < gx.rows(); ++r)
        for (Eigen::Index i = 0; i < j; ++i)
          for (Eigen::Index q = 0; q < j; ++q)
            gx.row(r).segment(i * 3, 3) -= go.row(r).segment((i * j + q) * 3, 3);
    });
  }

  /**
   * Differentiable feature decode: maps real-unit features (T x 263) to
   * global joint positions (T x 3*22).  Gradients flow into the yaw, root
   * position and local position channels; the remaining channels do not
   * influence positions.
   */
  Var decoded_positions(Var features) {
    const M& x = value(features);
    if (x.cols() != kFeatureDim)
      throw ConfigError("decoded_positions: expected 263 feature columns");
    const Eigen::Index t_count = x.rows();
    M out(t_count, 3 * kJoints);
    for (Eigen::Index t = 0; t < t_count; ++t) {
      const double yaw = static_cast<double>(x(t, kYawDim));
      const double c = std::cos(yaw), s = std::sin(yaw);
      const Scalar rx = x(t, kRootPosOffset), ry = x(t, kRootPosOffset + 1),
                   rz = x(t, kRootPosOffset + 2);
      out(t, 0) = rx;
      out(t, 1) = ry;
      out(t, 2) = rz;
      for (int i = 1; i < kJoints; ++i) {
        const Scalar lx = x(t, local_pos_dim(i));
        const Scalar ly = x(t, local_pos_dim(i) + 1);
        const Scalar lz = x(t, local_pos_dim(i) + 2);
        // R_y(yaw) * l + root
        out(t, 3 * i + 0) = static_cast<Scalar>(c * lx + s * lz) + rx;
        out(t, 3 * i + 1) = ly + ry;
        out(t, 3 * i + 2) = static_cast<Scalar>(-s * lx + c * lz) + rz;
      }
    }
    return push(std::move(out), [features, o = next_id()](Tape& tp) {
      const M& x = tp.value(features);
      const M& go = tp.g_out(o);
      M& gx = tp.g(features);
      for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double yaw = static_cast<double>(x(t, kYawDim));
        const double c = std::cos(yaw), s = std::sin(yaw);
        Scalar gyaw = 0;
        // Root receives the sum of all joint gradients (identity Jacobian).
        Scalar grx = 0, gry = 0, grz = 0;
        for (int i = 0; i < kJoints; ++i) {
          grx += go(t, 3 * i + 0);
          gry += go(t, 3 * i + 1);
          grz += go(t, 3 * i + 2);
        }
        gx(t, kRootPosOffset) += grx;
        gx(t, kRootPosOffset + 1) += gry;
        gx(t, kRootPosOffset + 2) += grz;
        for (int i = 1; i < kJoints; ++i) {
          const Scalar lx = x(t, local_pos_dim(i));
          const Scalar lz = x(t, local_pos_dim(i) + 2);
          const Scalar gpx = go(t, 3 * i + 0);
          const Scalar gpy = go(t, 3 * i + 1);
          const Scalar gpz = go(t, 3 * i + 2);
          // d(out)/d(local) = R_y(yaw) => grad_local = R^T * grad_out.
          gx(t, local_pos_dim(i)) += static_cast<Scalar>(c) * gpx -
                                     static_cast<Scalar>(s) * gpz;
          gx(t, local_pos_dim(i) + 1) += gpy;
          gx(t, local_pos_dim(i) + 2) += static_cast<Scalar>(s) * gpx +
                                         static_cast<Scalar>(c) * gpz;
          // d(out)/d(yaw) = R'_y(yaw) * l.
          gyaw += gpx * static_cast<Scalar>(-s * lx + c * lz) +
                  gpz * static_cast<Scalar>(-c * lx - s * lz);
        }
        gx(t, kYawDim) += gyaw;
      }
    });
  }

 private:
  struct Node {
    M value;
    M grad;
    std::function<void(Tape&)> backward;
  };

  static Var o_var(int id) { return Var{id}; }
  int next_id() const { return static_cast<int>(nodes_.size()); }

  Var push(M value, std::function<void(Tape&)> backward) {
    if (!all_finite(value))
      throw SamplingDivergedError("non-finite value entered the tape");
    Node n;
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  int check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw ConfigError("autodiff variable is not on this tape");
    return v.id;
  }

  void require_same_shape(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw ConfigError(std::string(op) + ": shape mismatch");
  }

  M& g(Var v) { return nodes_[static_cast<size_t>(check(v))].grad; }
  const M& g_out(int id) { return nodes_[static_cast<size_t>(id)].grad; }

  std::vector<Node> nodes_;
};

}  // namespace moreact
