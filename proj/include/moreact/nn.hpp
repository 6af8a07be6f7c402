/**
 * @file nn.hpp
 * @brief Neural-network building blocks on top of the autodiff tape:
 *        parameter storage, initializers, linear/attention helpers, AdamW,
 *        EMA shadows, sinusoidal embeddings and checkpoint serialization.
 */
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moreact/autodiff.hpp"
#include "moreact/common.hpp"

namespace moreact {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Named master copies of model parameters.  std::map keeps iteration order
/// deterministic, which the optimizer and serialization rely on.
template <typename Scalar>
class ParamSet {
 public:
  using M = Mat<Scalar>;

  /// Declares a parameter; returns a mutable reference to its storage.
  M& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto [it, inserted] = params_.emplace(name, M::Zero(rows, cols));
    if (!inserted) throw ConfigError("duplicate parameter: " + name);
    return it->second;
  }

  M& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const M& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [name, m] : params_) n += m.size();
    return n;
  }

 private:
  std::map<std::string, M> params_;
};

// Initializers ---------------------------------------------------------------

/// Xavier/Glorot uniform, the default for linear layers.
template <typename Scalar>
void init_xavier(Mat<Scalar>& w, RandomStream& rng) {
  const double limit = std::sqrt(6.0 / (static_cast<double>(w.rows()) + w.cols()));
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w.data()[i] = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * limit);
}

template <typename Scalar>
void init_normal(Mat<Scalar>& w, RandomStream& rng, double std_dev) {
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w.data()[i] = static_cast<Scalar>(rng.normal() * std_dev);
}

// ---------------------------------------------------------------------------
// Tape binding
// ---------------------------------------------------------------------------

/**
 * Binds parameters onto a tape for one forward/backward pass.  Each named
 * parameter becomes a tape leaf on first use; after backward(), grads() hands
 * back the gradients of exactly the parameters that participated.
 */
template <typename Scalar>
class TapeBinding {
 public:
  using Var = typename Tape<Scalar>::Var;

  TapeBinding(Tape<Scalar>& tape, ParamSet<Scalar>& params)
      : tape_(tape), params_(params) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Var v = tape_.input(params_.at(name));
    bound_.emplace(name, v);
    return v;
  }

  Tape<Scalar>& tape() { return tape_; }

  /// Gradients of every bound parameter (call after tape.backward()).
  std::map<std::string, Mat<Scalar>> grads() const {
    std::map<std::string, Mat<Scalar>> out;
    for (const auto& [name, var] : bound_) out.emplace(name, tape_.grad(var));
    return out;
  }

 private:
  Tape<Scalar>& tape_;
  ParamSet<Scalar>& params_;
  std::map<std::string, Var> bound_;
};

// Layer helpers ---------------------------------------------------------------

/// Declares the weights of a linear layer (weight in x out, bias 1 x out).
template <typename Scalar>
void declare_linear(ParamSet<Scalar>& params, const std::string& prefix,
                    Eigen::Index in, Eigen::Index out, std::uint64_t seed,
                    bool zero_init = false) {
  auto& w = params.add(prefix + ".w", in, out);
  params.add(prefix + ".b", 1, out);
  if (!zero_init) {
    RandomStream rng(seed, "init." + prefix);
    init_xavier(w, rng);
  }
}

/// y = x * W + b.
template <typename Scalar>
typename Tape<Scalar>::Var linear(TapeBinding<Scalar>& bind,
                                  const std::string& prefix,
                                  typename Tape<Scalar>::Var x) {
  auto& t = bind.tape();
  return t.add_row_broadcast(t.matmul(x, bind(prefix + ".w")), bind(prefix + ".b"));
}

/**
 * Multi-head scaled dot-product attention.  Queries come from x (T x d),
 * keys/values from memory (L x d); the projection weights live under
 * `prefix`.  d must be divisible by the head count.
 */
template <typename Scalar>
void declare_attention(ParamSet<Scalar>& params, const std::string& prefix,
                       Eigen::Index dim, std::uint64_t seed) {
  declare_linear(params, prefix + ".q", dim, dim, seed);
  declare_linear(params, prefix + ".k", dim, dim, seed + 1);
  declare_linear(params, prefix + ".v", dim, dim, seed + 2);
  // Residual-branch output projections start at zero so a fresh network is
  // the identity map, which keeps early diffusion training stable.
  declare_linear(params, prefix + ".o", dim, dim, seed + 3, /*zero_init=*/true);
}

template <typename Scalar>
typename Tape<Scalar>::Var attention(TapeBinding<Scalar>& bind,
                                     const std::string& prefix,
                                     typename Tape<Scalar>::Var x,
                                     typename Tape<Scalar>::Var memory,
                                     int heads) {
  auto& t = bind.tape();
  const Eigen::Index dim = t.value(x).cols();
  if (heads < 1 || dim % heads != 0)
    throw ConfigError("attention: dim must be divisible by heads");
  const Eigen::Index hd = dim / heads;
  const auto q = linear(bind, prefix + ".q", x);
  const auto k = linear(bind, prefix + ".k", memory);
  const auto v = linear(bind, prefix + ".v", memory);
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(hd)));
  typename Tape<Scalar>::Var merged{};
  for (int h = 0; h < heads; ++h) {
    const auto qh = t.slice_cols(q, h * hd, hd);
    const auto kh = t.slice_cols(k, h * hd, hd);
    const auto vh = t.slice_cols(v, h * hd, hd);
    const auto scores = t.scalar_mul(t.matmul_nt(qh, kh), scale);
    const auto attn = t.matmul(t.row_softmax(scores), vh);
    merged = (h == 0) ? attn : t.concat_cols(merged, attn);
  }
  return linear(bind, prefix + ".o", merged);
}

// ---------------------------------------------------------------------------
// Sinusoidal embeddings
// ---------------------------------------------------------------------------

/// Classic fixed positional encoding table (length x dim).
inline Matd sinusoidal_position_table(int length, int dim) {
  Matd table(length, dim);
  for (int pos = 0; pos < length; ++pos)
    for (int i = 0; i < dim; ++i) {
      const double angle =
          pos / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(dim));
      table(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return table;
}

/// One-row sinusoidal embedding of a (possibly large) scalar position.
inline Matd sinusoidal_embedding(double pos, int dim) {
  Matd row(1, dim);
  for (int i = 0; i < dim; ++i) {
    const double angle =
        pos / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(dim));
    row(0, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return row;
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  ///< global gradient-norm clip; 0 disables
};

/// Decoupled-weight-decay Adam with per-parameter step counts (parameters
/// that received no gradient this step are left untouched).
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  const AdamWConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

  void step(ParamSet<Scalar>& params,
            std::map<std::string, Mat<Scalar>>& grads) {
    if (config_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& [name, g] : grads) sq += static_cast<double>(g.squaredNorm());
      const double norm = std::sqrt(sq);
      if (norm > config_.clip_norm) {
        const Scalar scale = static_cast<Scalar>(config_.clip_norm / norm);
        for (auto& [name, g] : grads) g *= scale;
      }
    }
    for (auto& [name, g] : grads) {
      Mat<Scalar>& p = params.at(name);
      if (g.rows() != p.rows() || g.cols() != p.cols())
        throw ConfigError("gradient shape mismatch for " + name);
      State& st = state_[name];
      if (st.m.size() == 0) {
        st.m = Mat<Scalar>::Zero(p.rows(), p.cols());
        st.v = Mat<Scalar>::Zero(p.rows(), p.cols());
      }
      st.t += 1;
      st.m = static_cast<Scalar>(config_.beta1) * st.m +
             static_cast<Scalar>(1.0 - config_.beta1) * g;
      st.v = static_cast<Scalar>(config_.beta2) * st.v +
             static_cast<Scalar>(1.0 - config_.beta2) * g.cwiseProduct(g);
      const double bc1 = 1.0 - std::pow(config_.beta1, st.t);
      const double bc2 = 1.0 - std::pow(config_.beta2, st.t);
      const Scalar lr = static_cast<Scalar>(config_.lr);
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double mhat = static_cast<double>(st.m.data()[i]) / bc1;
        const double vhat = static_cast<double>(st.v.data()[i]) / bc2;
        p.data()[i] -= lr * static_cast<Scalar>(
                                mhat / (std::sqrt(vhat) + config_.eps) +
                                config_.weight_decay * p.data()[i]);
      }
    }
  }

  /// Optimizer state flattened for checkpointing ("opt.m.<name>", ...).
  std::vector<std::pair<std::string, Mat<Scalar>>> serialize() const {
    std::vector<std::pair<std::string, Mat<Scalar>>> out;
    for (const auto& [name, st] : state_) {
      out.emplace_back("opt.m." + name, st.m);
      out.emplace_back("opt.v." + name, st.v);
      Mat<Scalar> tm(1, 1);
      tm(0, 0) = static_cast<Scalar>(st.t);
      out.emplace_back("opt.t." + name, tm);
    }
    return out;
  }

  void restore(const std::map<std::string, Mat<Scalar>>& arrays) {
    state_.clear();
    for (const auto& [key, m] : arrays) {
      if (key.rfind("opt.m.", 0) == 0)
        state_[key.substr(6)].m = m;
      else if (key.rfind("opt.v.", 0) == 0)
        state_[key.substr(6)].v = m;
      else if (key.rfind("opt.t.", 0) == 0)
        state_[key.substr(6)].t = static_cast<long>(m(0, 0));
    }
  }

 private:
  struct State {
    Mat<Scalar> m, v;
    long t = 0;
  };
  AdamWConfig config_;
  std::map<std::string, State> state_;
};

/// Exponential moving average of a parameter set.
template <typename Scalar>
class Ema {
 public:
  explicit Ema(double decay = 0.999) : decay_(decay) {}

  void update(const ParamSet<Scalar>& params) {
    const Scalar d = static_cast<Scalar>(decay_);
    for (const auto& [name, p] : params) {
      auto it = shadow_.find(name);
      if (it == shadow_.end())
        shadow_.emplace(name, p);
      else
        it->second = d * it->second + (Scalar(1) - d) * p;
    }
  }

  bool empty() const { return shadow_.empty(); }

  /// Overwrites params with the shadow values.
  void apply_to(ParamSet<Scalar>& params) const {
    for (auto& [name, p] : params) {
      auto it = shadow_.find(name);
      if (it != shadow_.end()) p = it->second;
    }
  }

  const std::map<std::string, Mat<Scalar>>& shadow() const { return shadow_; }
  void restore(std::map<std::string, Mat<Scalar>> shadow) {
    shadow_ = std::move(shadow);
  }
  double decay() const { return decay_; }

 private:
  double decay_;
  std::map<std::string, Mat<Scalar>> shadow_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Layout: magic "MRCK", uint32 version (1), uint32 config length, config JSON
// bytes, uint32 array count, then per array: uint16 name length, name bytes,
// uint32 rows, uint32 cols, rows*cols float32 little-endian row-major.

inline constexpr char kCheckpointMagic[4] = {'M', 'R', 'C', 'K'};

inline void save_checkpoint(
    const std::filesystem::path& path, const nlohmann::json& config,
    const std::vector<std::pair<std::string, Matf>>& arrays) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 4);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const std::string cfg = config.dump();
  const std::uint32_t cfg_len = static_cast<std::uint32_t>(cfg.size());
  out.write(reinterpret_cast<const char*>(&cfg_len), 4);
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const std::uint32_t count = static_cast<std::uint32_t>(arrays.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& [name, m] : arrays) {
    if (name.size() > 0xffff) throw IoError("parameter name too long: " + name);
    const std::uint16_t name_len = static_cast<std::uint16_t>(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 2);
    out.write(name.data(), name_len);
    const std::uint32_t rows = static_cast<std::uint32_t>(m.rows());
    const std::uint32_t cols = static_cast<std::uint32_t>(m.cols());
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float) * m.size()));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

struct CheckpointData {
  nlohmann::json config;
  std::map<std::string, Matf> arrays;
};

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  std::uint32_t version = 0, cfg_len = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&cfg_len), 4);
  if (!in || version != 1)
    throw IoError("unsupported checkpoint version in " + path.string());
  if (cfg_len > (1u << 24)) throw IoError("implausible config size");
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), cfg_len);
  CheckpointData data;
  try {
    data.config = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint config JSON: " + std::string(e.what()));
  }
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in || count > (1u << 20)) throw IoError("implausible array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 2);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    if (!in) throw IoError("truncated checkpoint " + path.string());
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28))
      throw IoError("implausible array size in checkpoint");
    Matf m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * m.size()));
    if (!in) throw IoError("truncated checkpoint " + path.string());
    data.arrays.emplace(std::move(name), std::move(m));
  }
  return data;
}

}  // namespace moreact
