#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "touchbench/capture.hpp"
#include "touchbench/container.hpp"
#include "touchbench/core.hpp"
#include "touchbench/tactile.hpp"

// Episode directory + pressure archive -> one training container per
// trajectory, and back.

namespace tb::store {

namespace fs = std::filesystem;

struct ConversionReport {
  int converted = 0, skipped = 0, failed = 0;
  std::map<std::string, std::string> failures;  // trajectory id -> reason

  int inputs() const { return converted + skipped + failed; }
};

namespace detail {

inline int image_stream_length(const Episode& ep, ViewId view) {
  // index of the last frame carrying this view, plus one; leading frames
  // missing only because of warm-up latency do not shorten the stream
  for (int i = static_cast<int>(ep.frames.size()) - 1; i >= 0; --i)
    if (ep.frames[i].images.count(view)) return i + 1;
  return 0;
}

}  // namespace detail

/// Packs an in-memory episode plus its pressure archive. Frame count is the
/// minimum over the three image streams, the pose stream, and the archive;
/// the `aligned` flag records that truncation happened.
inline void convert_episode(const Episode& ep, const tactile::PressureArchive& ar,
                            const fs::path& out_file) {
  if (ar.frames.empty()) throw Error("convert: empty pressure archive");
  if (ep.frames.empty()) throw Error("convert: empty episode");

  const int len_ego = detail::image_stream_length(ep, ViewId::Ego);
  const int len_wl = detail::image_stream_length(ep, ViewId::WristLeft);
  const int len_wr = detail::image_stream_length(ep, ViewId::WristRight);
  const int len_pose = static_cast<int>(ep.frames.size());
  const int len_pressure = static_cast<int>(ar.frames.size());
  const int n = std::min({len_ego, len_wl, len_wr, len_pose, len_pressure});
  if (n < 1) {
    const char* which = len_ego < 1 ? "cam_ego" : len_wl < 1 ? "cam_wl" : "cam_wr";
    throw Error(std::string("convert: image stream ") + which + " is empty");
  }
  const bool truncated = n < std::max({len_ego, len_wl, len_wr, len_pose, len_pressure});

  int width = 0, height = 0;
  for (const auto& [view, img] : ep.frames[0].images) {
    width = img.width;
    height = img.height;
    break;
  }
  if (width == 0)
    for (const auto& f : ep.frames)
      if (!f.images.empty()) {
        width = f.images.begin()->second.width;
        height = f.images.begin()->second.height;
        break;
      }

  std::set<std::string> flags = ep.meta.flags;
  if (truncated) flags.insert("aligned");

  container::Writer w(out_file);

  nlohmann::json meta;
  meta["trajectory_id"] = ep.meta.episode_id;
  meta["task"] = ep.meta.task;
  meta["scenario"] = to_string(ep.meta.scenario);
  meta["object_id"] = ep.meta.object_id;
  meta["num_frames"] = n;
  meta["fps"] = ep.meta.fps;
  meta["resolution"] = {width, height};
  meta["quality_flags"] = flags;
  w.add_bytes("metadata", meta.dump());

  const std::int64_t px = std::int64_t(height) * width * 3;
  for (const auto& [name, view] :
       std::map<std::string, ViewId>{{"images/ego", ViewId::Ego},
                                     {"images/wl", ViewId::WristLeft},
                                     {"images/wr", ViewId::WristRight}}) {
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(n) * px, 0);
    for (int i = 0; i < n; ++i) {
      auto it = ep.frames[i].images.find(view);
      if (it == ep.frames[i].images.end()) continue;  // warm-up gap stays zero
      for (std::int64_t j = 0; j < px; ++j)
        buf[i * px + j] = static_cast<std::uint8_t>(
            std::lround(double(it->second.data[j]) * 255.0));
    }
    w.add_vec(name, container::DType::U8, {n, height, width, 3}, buf, true);
  }

  std::vector<double> ts(n), trackers(static_cast<std::size_t>(n) * 3 * 7);
  std::vector<double> joints(static_cast<std::size_t>(n) * kJoints * 3);
  std::vector<std::uint8_t> hand_valid(static_cast<std::size_t>(n) * 2);
  for (int i = 0; i < n; ++i) {
    const auto& f = ep.frames[i];
    ts[i] = f.ts.seconds;
    for (int r = 0; r < 3; ++r) {
      double* t = &trackers[(i * 3 + r) * 7];
      t[0] = f.trackers[r].trans[0];
      t[1] = f.trackers[r].trans[1];
      t[2] = f.trackers[r].trans[2];
      t[3] = f.trackers[r].rot.w;
      t[4] = f.trackers[r].rot.x;
      t[5] = f.trackers[r].rot.y;
      t[6] = f.trackers[r].rot.z;
    }
    for (int j = 0; j < kJoints; ++j)
      for (int d = 0; d < 3; ++d)
        joints[(i * kJoints + j) * 3 + d] = f.pose.joints[j][d];
    hand_valid[i * 2 + 0] = f.pose.valid[0];
    hand_valid[i * 2 + 1] = f.pose.valid[1];
  }
  w.add_vec("time/ts", container::DType::F64, {n}, ts);
  w.add_vec("poses/trackers", container::DType::F64, {n, 3, 7}, trackers, true);
  w.add_vec("hands/joints", container::DType::F64, {n, kJoints, 3}, joints, true);
  w.add_vec("hands/valid", container::DType::U8, {n, 2}, hand_valid);

  for (int h = 0; h < 2; ++h) {
    const char* grid_key = h == 0 ? "pressure/left" : "pressure/right";
    const char* mask_key = h == 0 ? "pressure/valid_left" : "pressure/valid_right";
    std::vector<double> grid(static_cast<std::size_t>(n) * kGridCells, 0.0);
    std::vector<std::uint8_t> mask(kGridCells);
    const HandGrid& g0 = ar.frames[0].hand(static_cast<HandSide>(h));
    for (int i = 0; i < kGridCells; ++i) mask[i] = g0.valid[i];
    for (int i = 0; i < n; ++i) {
      const HandGrid& g = ar.frames[i].hand(static_cast<HandSide>(h));
      if (!std::equal(mask.begin(), mask.end(), g.valid.begin(),
                      [](std::uint8_t a, bool b) { return (a != 0) == b; }))
        throw Error("convert: valid mask varies across frames");
      for (int c = 0; c < kGridCells; ++c)
        if (g.valid[c]) grid[i * kGridCells + c] = g.v[c];
    }
    w.add_vec(grid_key, container::DType::F64, {n, kGridCells}, grid, true);
    w.add_vec(mask_key, container::DType::U8, {kGridCells}, mask);
  }
  if (!ar.bending.empty() && !ar.bending[0][0].empty()) {
    const int nb = static_cast<int>(ar.bending[0][0].size());
    std::vector<double> bend(static_cast<std::size_t>(n) * 2 * nb);
    for (int i = 0; i < n; ++i)
      for (int h = 0; h < 2; ++h)
        for (int b = 0; b < nb; ++b)
          bend[(i * 2 + h) * nb + b] = ar.bending[i][h][b];
    w.add_vec("pressure/bending", container::DType::F64, {n, 2, nb}, bend, true);
  }
  std::vector<std::uint8_t> baseline = {
      static_cast<std::uint8_t>(ar.baseline_applied[0]),
      static_cast<std::uint8_t>(ar.baseline_applied[1])};
  w.add_vec("pressure/baseline_applied", container::DType::U8, {2}, baseline);
  std::vector<std::int32_t> gs = {ar.grid_size};
  w.add_vec("pressure/grid_size", container::DType::I32, {1}, gs);
  nlohmann::json norm;
  norm["tactile_max"] = ar.norm.tactile_max;
  norm["bending_max"] = ar.norm.bending_max;
  w.add_bytes("pressure/norm_meta", norm.dump());

  w.finish();
}

/// Reads an episode directory, preprocesses the glove stream, and packs the
/// container in one step.
inline void convert(const fs::path& episode_dir, const tactile::GridMapping& mapping,
                    const tactile::PreprocessConfig& cfg, const fs::path& out_file) {
  Episode ep = capture::read_episode_dir(episode_dir);
  std::vector<RawTactileFrame> raw;
  for (const auto& f : ep.frames) raw.push_back(f.raw_tactile);
  if (raw.empty()) throw Error("convert: no frames in " + episode_dir.string());
  auto ar = tactile::preprocess_episode(raw, mapping, cfg);
  convert_episode(ep, ar, out_file);
}

/// Standalone pressure archive container (same keys as the pressure group
/// of a full episode container).
inline void save_archive(const tactile::PressureArchive& ar, const fs::path& file) {
  if (ar.frames.empty()) throw Error("save_archive: empty archive");
  const int n = static_cast<int>(ar.frames.size());
  container::Writer w(file);
  for (int h = 0; h < 2; ++h) {
    const char* grid_key = h == 0 ? "left" : "right";
    const char* mask_key = h == 0 ? "valid_left" : "valid_right";
    std::vector<double> grid(static_cast<std::size_t>(n) * kGridCells, 0.0);
    std::vector<std::uint8_t> mask(kGridCells);
    const HandGrid& g0 = ar.frames[0].hand(static_cast<HandSide>(h));
    for (int i = 0; i < kGridCells; ++i) mask[i] = g0.valid[i];
    for (int i = 0; i < n; ++i) {
      const HandGrid& g = ar.frames[i].hand(static_cast<HandSide>(h));
      for (int c = 0; c < kGridCells; ++c)
        if (g.valid[c]) grid[i * kGridCells + c] = g.v[c];
    }
    w.add_vec(grid_key, container::DType::F64, {n, kGridCells}, grid, true);
    w.add_vec(mask_key, container::DType::U8, {kGridCells}, mask);
  }
  if (!ar.bending.empty() && !ar.bending[0][0].empty()) {
    const int nb = static_cast<int>(ar.bending[0][0].size());
    std::vector<double> bend(static_cast<std::size_t>(n) * 2 * nb);
    for (int i = 0; i < n; ++i)
      for (int h = 0; h < 2; ++h)
        for (int b = 0; b < nb; ++b)
          bend[(i * 2 + h) * nb + b] = ar.bending[i][h][b];
    w.add_vec("bending", container::DType::F64, {n, 2, nb}, bend, true);
  }
  w.add_vec("baseline_applied", container::DType::U8, {2},
            std::vector<std::uint8_t>{
                static_cast<std::uint8_t>(ar.baseline_applied[0]),
                static_cast<std::uint8_t>(ar.baseline_applied[1])});
  w.add_vec("grid_size", container::DType::I32, {1},
            std::vector<std::int32_t>{ar.grid_size});
  nlohmann::json norm;
  norm["tactile_max"] = ar.norm.tactile_max;
  norm["bending_max"] = ar.norm.bending_max;
  w.add_bytes("norm_meta", norm.dump());
  w.finish();
}

inline tactile::PressureArchive load_archive(const fs::path& file) {
  container::Reader r(file);
  tactile::PressureArchive ar;
  auto left = r.read_as<double>("left");
  auto right = r.read_as<double>("right");
  auto vl = r.read_as<std::uint8_t>("valid_left");
  auto vr = r.read_as<std::uint8_t>("valid_right");
  const int n = static_cast<int>(left.size() / kGridCells);
  ar.frames.resize(n);
  ar.bending.resize(n);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < kGridCells; ++c) {
      if (vl[c]) ar.frames[i].left.set(c / kGridSize, c % kGridSize,
                                       left[i * kGridCells + c]);
      if (vr[c]) ar.frames[i].right.set(c / kGridSize, c % kGridSize,
                                        right[i * kGridCells + c]);
    }
  if (r.has("bending")) {
    auto bend = r.read_as<double>("bending");
    const int nb = static_cast<int>(bend.size() / (std::size_t(n) * 2));
    for (int i = 0; i < n; ++i)
      for (int h = 0; h < 2; ++h)
        ar.bending[i][h].assign(bend.data() + std::size_t(i * 2 + h) * nb,
                                bend.data() + std::size_t(i * 2 + h + 1) * nb);
  }
  auto baseline = r.read_as<std::uint8_t>("baseline_applied");
  ar.baseline_applied = {baseline[0] != 0, baseline[1] != 0};
  ar.grid_size = r.read_as<std::int32_t>("grid_size").at(0);
  auto norm = nlohmann::json::parse(r.read_string("norm_meta"));
  ar.norm.tactile_max = norm.at("tactile_max").get<std::array<double, 2>>();
  ar.norm.bending_max = norm.at("bending_max").get<std::array<double, 2>>();
  return ar;
}

struct LoadedEpisode {
  Episode episode;  // canonical_pressure filled from the pressure group
  tactile::NormMeta norm;
  std::array<bool, 2> baseline_applied{};
  std::set<std::string> quality_flags;
};

inline LoadedEpisode load(const fs::path& file) {
  container::Reader r(file);
  for (const char* key :
       {"metadata", "images/ego", "images/wl", "images/wr", "poses/trackers",
        "hands/joints", "hands/valid", "pressure/left", "pressure/right",
        "pressure/valid_left", "pressure/valid_right", "time/ts"})
    r.info(key);  // schema check: throws naming the missing group

  LoadedEpisode out;
  auto meta = nlohmann::json::parse(r.read_string("metadata"));
  out.episode.meta.episode_id = meta.at("trajectory_id").get<std::string>();
  out.episode.meta.task = meta.value("task", "");
  out.episode.meta.scenario = parse_scenario(meta.value("scenario", "home"));
  out.episode.meta.object_id = meta.value("object_id", "");
  out.episode.meta.fps = meta.value("fps", kFps);
  const int n = meta.at("num_frames").get<int>();
  const int height = meta.at("resolution").at(1).get<int>();
  const int width = meta.at("resolution").at(0).get<int>();
  for (const auto& fl : meta.value("quality_flags", std::vector<std::string>{})) {
    out.quality_flags.insert(fl);
    out.episode.meta.flags.insert(fl);
  }

  auto ts = r.read_as<double>("time/ts");
  auto trackers = r.read_as<double>("poses/trackers");
  auto joints = r.read_as<double>("hands/joints");
  auto hand_valid = r.read_as<std::uint8_t>("hands/valid");
  std::array<std::vector<std::uint8_t>, 3> imgs = {r.read_as<std::uint8_t>("images/ego"),
                                                   r.read_as<std::uint8_t>("images/wl"),
                                                   r.read_as<std::uint8_t>("images/wr")};
  const std::int64_t px = std::int64_t(height) * width * 3;
  static const std::array<const char*, 3> roles = {"chest", "left_wrist",
                                                   "right_wrist"};
  for (int i = 0; i < n; ++i) {
    FrameRecord f;
    f.frame_index = i;
    f.ts = {ts[i]};
    for (int v = 0; v < 3; ++v) {
      ImageFrame img;
      img.view = static_cast<ViewId>(v);
      img.width = width;
      img.height = height;
      img.data.resize(px);
      for (std::int64_t j = 0; j < px; ++j)
        img.data[j] = imgs[v][i * px + j] / 255.0f;
      f.images[img.view] = std::move(img);
    }
    for (int rr = 0; rr < 3; ++rr) {
      const double* t = &trackers[(i * 3 + rr) * 7];
      f.trackers[rr].role = roles[rr];
      f.trackers[rr].trans = {t[0], t[1], t[2]};
      f.trackers[rr].rot = {t[3], t[4], t[5], t[6]};
    }
    for (int j = 0; j < kJoints; ++j)
      for (int d = 0; d < 3; ++d)
        f.pose.joints[j][d] = joints[(i * kJoints + j) * 3 + d];
    f.pose.valid = {hand_valid[i * 2] != 0, hand_valid[i * 2 + 1] != 0};
    out.episode.frames.push_back(std::move(f));
  }

  auto left = r.read_as<double>("pressure/left");
  auto right = r.read_as<double>("pressure/right");
  auto vl = r.read_as<std::uint8_t>("pressure/valid_left");
  auto vr = r.read_as<std::uint8_t>("pressure/valid_right");
  out.episode.canonical_pressure.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < kGridCells; ++c) {
      if (vl[c]) out.episode.canonical_pressure[i].left.v[c] = left[i * kGridCells + c];
      out.episode.canonical_pressure[i].left.valid[c] = vl[c] != 0;
      if (vr[c])
        out.episode.canonical_pressure[i].right.v[c] = right[i * kGridCells + c];
      out.episode.canonical_pressure[i].right.valid[c] = vr[c] != 0;
    }
  }
  auto baseline = r.read_as<std::uint8_t>("pressure/baseline_applied");
  out.baseline_applied = {baseline[0] != 0, baseline[1] != 0};
  auto norm = nlohmann::json::parse(r.read_string("pressure/norm_meta"));
  out.norm.tactile_max = norm.at("tactile_max").get<std::array<double, 2>>();
  out.norm.bending_max = norm.at("bending_max").get<std::array<double, 2>>();
  return out;
}

/// Converts every episode directory under root (identified by a
/// jq_pressure.json file). Output files land next to the directories as
/// <name>.tbc. Worker count affects scheduling only, never results.
inline ConversionReport batch_convert(const fs::path& root,
                                      const tactile::GridMapping& mapping,
                                      const tactile::PreprocessConfig& cfg,
                                      int workers, bool skip_existing,
                                      const std::optional<std::set<std::string>>&
                                          bad_list = std::nullopt) {
  if (!fs::exists(root)) throw IoError("batch_convert: no such root: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "jq_pressure.json"))
      dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());

  ConversionReport report;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= dirs.size()) return;
      const fs::path& dir = dirs[i];
      const std::string id = dir.filename().string();
      const fs::path out = dir.parent_path() / (id + ".tbc");
      if (bad_list && !bad_list->count(id)) {
        std::lock_guard lock(mu);
        ++report.skipped;
        continue;
      }
      if (skip_existing && !bad_list && fs::exists(out)) {
        std::lock_guard lock(mu);
        ++report.skipped;
        continue;
      }
      try {
        convert(dir, mapping, cfg, out);
        std::lock_guard lock(mu);
        ++report.converted;
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        ++report.failed;
        report.failures[id] = e.what();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return report;
}

}  // namespace tb::store
