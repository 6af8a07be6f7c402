/**
 * @file motion_io.hpp
 * @brief Serialization of motions and dataset manifests.
 *
 * Two motion formats are supported:
 *   - JSON (.json): {"fps": 20, "skeleton": "smpl22", "features": [[...], ...]}
 *   - binary (.mrk): magic "MRK1", then uint32 T, uint32 D, uint32 fps
 *     (little-endian), then T*D float32 values in row-major order.
 *
 * A dataset manifest is a JSON file {"samples": [{"actor": ..., "reactor":
 * ..., "text": ..., "scenario": ...}, ...]} with motion paths resolved
 * relative to the manifest's directory.
 */
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moreact/common.hpp"
#include "moreact/kinematics.hpp"
#include "moreact/skeleton.hpp"

namespace moreact {

namespace detail {

inline std::ifstream open_input(const std::filesystem::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path, bool binary) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// JSON motion format
// ---------------------------------------------------------------------------

inline void save_motion_json(const std::filesystem::path& path,
                             const MotionSequence& m) {
  validate_motion(m);
  nlohmann::json j;
  const double rounded = std::round(m.fps);
  if (rounded == m.fps)
    j["fps"] = static_cast<int>(rounded);
  else
    j["fps"] = m.fps;
  j["skeleton"] = m.skeleton_id;
  auto& rows = j["features"] = nlohmann::json::array();
  for (int t = 0; t < m.frames(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int d = 0; d < kFeatureDim; ++d) row.push_back(m.features(t, d));
    rows.push_back(std::move(row));
  }
  auto out = detail::open_output(path, false);
  out << j.dump();
  if (!out) throw IoError("failed writing " + path.string());
}

inline MotionSequence load_motion_json(const std::filesystem::path& path) {
  auto in = detail::open_input(path, false);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad JSON in " + path.string() + ": " + e.what());
  }
  MotionSequence m;
  try {
    m.fps = j.at("fps").get<double>();
    m.skeleton_id = j.value("skeleton", std::string("smpl22"));
    const auto& rows = j.at("features");
    if (!rows.is_array() || rows.empty())
      throw IoError("motion file has no feature rows: " + path.string());
    m.features.resize(static_cast<Eigen::Index>(rows.size()), kFeatureDim);
    Eigen::Index t = 0;
    for (const auto& row : rows) {
      if (!row.is_array() || static_cast<int>(row.size()) != kFeatureDim)
        throw IoError("feature row has wrong length in " + path.string());
      for (int d = 0; d < kFeatureDim; ++d)
        m.features(t, d) = row[static_cast<size_t>(d)].get<double>();
      ++t;
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad motion JSON in " + path.string() + ": " + e.what());
  }
  validate_motion(m);
  return m;
}

// ---------------------------------------------------------------------------
// Binary motion format ("MRK1")
// ---------------------------------------------------------------------------

inline constexpr char kMotionMagic[4] = {'M', 'R', 'K', '1'};

inline void save_motion_binary(const std::filesystem::path& path,
                               const MotionSequence& m) {
  validate_motion(m);
  const double rounded = std::round(m.fps);
  if (rounded != m.fps || rounded <= 0.0)
    throw IoError("binary motion format stores integer fps, got " +
                  std::to_string(m.fps));
  auto out = detail::open_output(path, true);
  out.write(kMotionMagic, 4);
  const std::uint32_t t = static_cast<std::uint32_t>(m.frames());
  const std::uint32_t d = static_cast<std::uint32_t>(kFeatureDim);
  const std::uint32_t fps = static_cast<std::uint32_t>(rounded);
  out.write(reinterpret_cast<const char*>(&t), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  out.write(reinterpret_cast<const char*>(&fps), 4);
  const Matf data = m.features.cast<float>();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(sizeof(float) * data.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline MotionSequence load_motion_binary(const std::filesystem::path& path) {
  auto in = detail::open_input(path, true);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMotionMagic, 4) != 0)
    throw IoError("not a binary motion file: " + path.string());
  std::uint32_t t = 0, d = 0, fps = 0;
  in.read(reinterpret_cast<char*>(&t), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  in.read(reinterpret_cast<char*>(&fps), 4);
  if (!in) throw IoError("truncated motion header: " + path.string());
  if (d != kFeatureDim)
    throw IoError("motion file has " + std::to_string(d) +
                  " feature dims, expected " + std::to_string(kFeatureDim));
  if (t == 0 || t > (1u << 22))
    throw IoError("implausible frame count in " + path.string());
  Matf data(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(sizeof(float) * data.size()));
  if (!in) throw IoError("truncated motion data: " + path.string());
  MotionSequence m;
  m.fps = static_cast<double>(fps);
  m.features = data.cast<double>();
  validate_motion(m);
  return m;
}

/// Saves by extension: ".json" -> JSON, anything else -> binary.
inline void save_motion(const std::filesystem::path& path, const MotionSequence& m) {
  if (path.extension() == ".json")
    save_motion_json(path, m);
  else
    save_motion_binary(path, m);
}

/// Loads by sniffing: binary magic wins, otherwise JSON.
inline MotionSequence load_motion(const std::filesystem::path& path) {
  {
    auto in = detail::open_input(path, true);
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    if (in && std::memcmp(magic, kMotionMagic, 4) == 0)
      return load_motion_binary(path);
  }
  return load_motion_json(path);
}

// ---------------------------------------------------------------------------
// BVH export
// ---------------------------------------------------------------------------

namespace detail {

/// Factors R = Rz(z) * Ry(y) * Rx(x) (intrinsic z-y-x), returning (z, y, x)
/// in radians.  At gimbal lock (|cos y| ~ 0) the x angle folds into z; the
/// result is always an equivalent rotation even when angles are not unique.
inline Vec3 euler_zyx_from_matrix(const Mat3& r) {
  const double sy = std::clamp(-r(2, 0), -1.0, 1.0);
  const double y = std::asin(sy);
  if (std::abs(sy) < 1.0 - 1e-9)
    return Vec3(std::atan2(r(1, 0), r(0, 0)), y, std::atan2(r(2, 1), r(2, 2)));
  return Vec3(std::atan2(-r(0, 1), r(1, 1)), y, 0.0);
}

inline std::string bvh_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline void write_bvh_joint(std::ostream& out, const Skeleton& skel,
                            const std::vector<std::vector<int>>& children,
                            std::vector<int>& channel_order, int joint,
                            int depth) {
  const std::string pad(static_cast<size_t>(2 * depth), ' ');
  out << pad << (joint == 0 ? "ROOT " : "JOINT ")
      << skel.joint_names[static_cast<size_t>(joint)] << "\n"
      << pad << "{\n";
  out << pad << "  OFFSET " << bvh_number(skel.offsets(joint, 0)) << " "
      << bvh_number(skel.offsets(joint, 1)) << " "
      << bvh_number(skel.offsets(joint, 2)) << "\n";
  out << pad << "  CHANNELS "
      << (joint == 0 ? "6 Xposition Yposition Zposition "
                       "Zrotation Yrotation Xrotation"
                     : "3 Zrotation Yrotation Xrotation")
      << "\n";
  channel_order.push_back(joint);
  if (children[static_cast<size_t>(joint)].empty()) {
    out << pad << "  End Site\n"
        << pad << "  {\n"
        << pad << "    OFFSET 0.000000 0.000000 0.000000\n"
        << pad << "  }\n";
  } else {
    for (const int c : children[static_cast<size_t>(joint)])
      write_bvh_joint(out, skel, children, channel_order, c, depth + 1);
  }
  out << pad << "}\n";
}

}  // namespace detail

/**
 * Writes the motion as a BVH clip for standard animation tooling.
 *
 * The hierarchy is the smpl22 rest skeleton with offsets in metres; leaf
 * joints close with zero-length End Sites.  The root carries six channels
 * (Xposition Yposition Zposition Zrotation Yrotation Xrotation), every
 * other joint three rotation channels (Zrotation Yrotation Xrotation).
 * Angles are degrees of the intrinsic factorization R = Rz * Ry * Rx: the
 * root's rotation comes from the yaw channel, joint rotations are recovered
 * from the 6-d feature blocks.  Frame Time is 1/fps.
 */
inline void export_bvh(const std::filesystem::path& path,
                       const MotionSequence& m) {
  const Skeleton& skel = smpl22();
  const std::vector<Pose> poses = decode_poses(m, skel);

  std::vector<std::vector<int>> children(
      static_cast<size_t>(skel.joint_count()));
  for (int i = 1; i < skel.joint_count(); ++i)
    children[static_cast<size_t>(skel.parents[static_cast<size_t>(i)])]
        .push_back(i);

  auto out = detail::open_output(path, false);
  out << "HIERARCHY\n";
  std::vector<int> channel_order;
  detail::write_bvh_joint(out, skel, children, channel_order, 0, 0);

  constexpr double kDeg = 180.0 / M_PI;
  out << "MOTION\n";
  out << "Frames: " << m.frames() << "\n";
  char frame_time[32];
  std::snprintf(frame_time, sizeof(frame_time), "%.8f", 1.0 / m.fps);
  out << "Frame Time: " << frame_time << "\n";
  for (const Pose& p : poses) {
    std::string line;
    const auto append = [&line](double v) {
      if (!line.empty()) line += ' ';
      line += detail::bvh_number(v);
    };
    for (const int joint : channel_order) {
      if (joint == 0) {
        append(p.root_pos.x());
        append(p.root_pos.y());
        append(p.root_pos.z());
        const Vec3 e = detail::euler_zyx_from_matrix(rot_y(p.root_yaw));
        append(e[0] * kDeg);
        append(e[1] * kDeg);
        append(e[2] * kDeg);
      } else {
        const Vec3 e = detail::euler_zyx_from_matrix(
            rot6d_to_matrix(p.joint_rot6d.row(joint - 1).transpose()));
        append(e[0] * kDeg);
        append(e[1] * kDeg);
        append(e[2] * kDeg);
      }
    }
    out << line << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Dataset manifests
// ---------------------------------------------------------------------------

struct SampleRef {
  std::string actor;    ///< motion path, relative to the manifest
  std::string reactor;  ///< motion path, relative to the manifest
  std::string text;     ///< reaction description
  std::string scenario; ///< scenario label (used by evaluation)
};

struct DatasetManifest {
  std::vector<SampleRef> samples;
};

inline void save_manifest(const std::filesystem::path& path,
                          const DatasetManifest& manifest) {
  nlohmann::json j;
  auto& arr = j["samples"] = nlohmann::json::array();
  for (const auto& s : manifest.samples)
    arr.push_back({{"actor", s.actor},
                   {"reactor", s.reactor},
                   {"text", s.text},
                   {"scenario", s.scenario}});
  auto out = detail::open_output(path, false);
  out << j.dump(2);
  if (!out) throw IoError("failed writing " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  auto in = detail::open_input(path, false);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad manifest JSON in " + path.string() + ": " + e.what());
  }
  DatasetManifest manifest;
  try {
    for (const auto& entry : j.at("samples")) {
      SampleRef s;
      s.actor = entry.at("actor").get<std::string>();
      s.reactor = entry.at("reactor").get<std::string>();
      s.text = entry.at("text").get<std::string>();
      s.scenario = entry.value("scenario", std::string());
      manifest.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad manifest in " + path.string() + ": " + e.what());
  }
  if (manifest.samples.empty())
    throw IoError("manifest has no samples: " + path.string());
  return manifest;
}

/// One fully loaded interaction sample.
struct InteractionSample {
  MotionSequence actor;
  MotionSequence reactor;
  std::string text;
  std::string scenario;
};

/// Loads every sample of a manifest, resolving motion paths relative to it.
inline std::vector<InteractionSample> load_dataset(
    const std::filesystem::path& manifest_path) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const std::filesystem::path base = manifest_path.parent_path();
  std::vector<InteractionSample> out;
  out.reserve(manifest.samples.size());
  for (const auto& ref : manifest.samples) {
    InteractionSample s;
    s.actor = load_motion(base / ref.actor);
    s.reactor = load_motion(base / ref.reactor);
    if (s.actor.frames() != s.reactor.frames())
      throw InvalidMotionError("actor/reactor frame counts differ for " +
                               ref.actor + " vs " + ref.reactor);
    s.text = ref.text;
    s.scenario = ref.scenario;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace moreact
