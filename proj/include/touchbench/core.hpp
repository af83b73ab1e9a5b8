#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "touchbench/common.hpp"

namespace tb {

inline constexpr int kGridSize = 21;
inline constexpr int kGridCells = kGridSize * kGridSize;
inline constexpr int kJoints = 42;
inline constexpr int kRawChannels = 256;
inline constexpr double kFps = 30.0;

// ---------------------------------------------------------------------------
// Identities

enum class ViewId : int { Ego = 0, WristLeft = 1, WristRight = 2 };

inline constexpr std::array<ViewId, 3> kAllViews = {ViewId::Ego, ViewId::WristLeft,
                                                   ViewId::WristRight};

inline const char* to_string(ViewId v) {
  switch (v) {
    case ViewId::Ego: return "ego";
    case ViewId::WristLeft: return "wl";
    case ViewId::WristRight: return "wr";
  }
  return "?";
}

inline ViewId parse_view(std::string_view s) {
  if (s == "ego") return ViewId::Ego;
  if (s == "wl") return ViewId::WristLeft;
  if (s == "wr") return ViewId::WristRight;
  throw ParseError("unknown view id: " + std::string(s));
}

enum class HandSide : int { Left = 0, Right = 1 };

enum class Scenario : int { Home = 0, Workbench = 1, Office = 2, Retail = 3, Outdoor = 4 };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::Home: return "home";
    case Scenario::Workbench: return "workbench";
    case Scenario::Office: return "office";
    case Scenario::Retail: return "retail";
    case Scenario::Outdoor: return "outdoor";
  }
  return "?";
}

inline Scenario parse_scenario(std::string_view s) {
  if (s == "home") return Scenario::Home;
  if (s == "workbench") return Scenario::Workbench;
  if (s == "office") return Scenario::Office;
  if (s == "retail") return Scenario::Retail;
  if (s == "outdoor") return Scenario::Outdoor;
  throw ParseError("unknown scenario: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Frame-level records

struct Timestamp {
  double seconds = 0.0;
  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

struct ImageFrame {
  ViewId view = ViewId::Ego;
  int width = 0;
  int height = 0;
  std::vector<float> data;  // row-major HxWx3, values in [0,1]

  float& at(int y, int x, int c) { return data[(y * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(y * width + x) * 3 + c]; }
};

struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

struct TrackerPose {
  std::string role;  // chest | left_wrist | right_wrist
  std::array<double, 3> trans{};
  Quat rot;
};

struct HandPoseFrame {
  // joints 0..20 left hand, 21..41 right hand, meters in the scene frame
  std::array<std::array<double, 3>, kJoints> joints{};
  std::array<bool, 2> valid{false, false};
};

struct RawTactileFrame {
  std::array<int, kRawChannels> sensor_left{};
  std::array<int, kRawChannels> sensor_right{};
  Quat quat_left, quat_right;
};

/// One hand's pressure in the canonical left-hand-shaped 21x21 frame.
/// Invalid cells hold NaN and are false in the mask; no arithmetic may
/// read a value without consulting the mask.
struct HandGrid {
  std::array<double, kGridCells> v;
  std::array<bool, kGridCells> valid;

  HandGrid() {
    v.fill(std::numeric_limits<double>::quiet_NaN());
    valid.fill(false);
  }
  double& at(int r, int c) { return v[r * kGridSize + c]; }
  double at(int r, int c) const { return v[r * kGridSize + c]; }
  bool is_valid(int r, int c) const { return valid[r * kGridSize + c]; }
  void set(int r, int c, double x) {
    v[r * kGridSize + c] = x;
    valid[r * kGridSize + c] = true;
  }
};

struct CanonicalTactileGrid {
  HandGrid left, right;

  const HandGrid& hand(HandSide s) const { return s == HandSide::Left ? left : right; }
  HandGrid& hand(HandSide s) { return s == HandSide::Left ? left : right; }
};

struct FrameRecord {
  int frame_index = 0;
  Timestamp ts;
  std::map<ViewId, ImageFrame> images;
  HandPoseFrame pose;
  std::array<TrackerPose, 3> trackers;
  RawTactileFrame raw_tactile;
  std::map<std::string, Timestamp> source_ts;  // per-sensor origin timestamps
  std::set<std::string> absent_sensors;        // sensors with no reading yet
};

struct EpisodeMeta {
  std::string episode_id;
  std::string task;
  Scenario scenario = Scenario::Home;
  std::string object_id;
  double fps = kFps;
  std::set<std::string> flags;
};

struct Episode {
  EpisodeMeta meta;
  std::vector<FrameRecord> frames;
  std::vector<CanonicalTactileGrid> canonical_pressure;  // filled by preprocessing
};

/// A strided window into an episode; frame pointers stay valid only as
/// long as the source episode does.
struct Clip {
  std::vector<const FrameRecord*> frames;
  int stride = 1;
  const Episode* episode = nullptr;

  int length() const { return static_cast<int>(frames.size()); }
};

struct SplitSpec {
  std::set<std::string> train, val, test_seen, test_unseen;
};

// ---------------------------------------------------------------------------
// Operations

inline std::vector<std::string> validate_episode(const Episode& ep) {
  std::vector<std::string> out;
  auto note = [&](int frame, const std::string& field, const std::string& what) {
    out.push_back("frame " + std::to_string(frame) + ": " + field + ": " + what);
  };
  for (int i = 0; i < static_cast<int>(ep.frames.size()); ++i) {
    const FrameRecord& f = ep.frames[i];
    if (f.frame_index != i)
      note(i, "frame_index", "expected " + std::to_string(i) + ", got " +
                                 std::to_string(f.frame_index));
    if (!std::isfinite(f.ts.seconds) || f.ts.seconds < 0.0)
      note(i, "ts", "not a finite non-negative time");
    if (i > 0 && !(f.ts.seconds > ep.frames[i - 1].ts.seconds))
      note(i, "ts", "not strictly increasing");
    for (const auto& [name, st] : f.source_ts)
      if (st.seconds > f.ts.seconds) note(i, "source_ts/" + name, "later than frame ts");
    for (const auto& [view, img] : f.images) {
      if (static_cast<int>(img.data.size()) != img.width * img.height * 3)
        note(i, std::string("images/") + to_string(view), "pixel count mismatch");
    }
  }
  if (ep.meta.fps != kFps) out.push_back("meta: fps: expected 30");
  if (!ep.canonical_pressure.empty() &&
      ep.canonical_pressure.size() != ep.frames.size())
    out.push_back("canonical_pressure: frame count mismatch");
  return out;
}

inline std::vector<Clip> sample_clips(const Episode& ep, int T, int stride,
                                      std::uint64_t seed) {
  if (T < 1 || stride < 1) throw Error("sample_clips: T and stride must be >= 1");
  const int n = static_cast<int>(ep.frames.size());
  const int span = (T - 1) * stride + 1;
  if (n < span)
    throw Error("sample_clips: episode too short: " + std::to_string(n) +
                " frames, need " + std::to_string(span));
  const int max_start = n - span;
  std::vector<int> starts(max_start + 1);
  std::iota(starts.begin(), starts.end(), 0);
  Rng rng(mix_seed(seed, ep.meta.episode_id));
  std::shuffle(starts.begin(), starts.end(), rng);
  const int count = std::max(1, n / span);
  starts.resize(std::min<std::size_t>(starts.size(), count));
  std::sort(starts.begin(), starts.end());

  std::vector<Clip> clips;
  for (int s : starts) {
    Clip c;
    c.stride = stride;
    c.episode = &ep;
    for (int k = 0; k < T; ++k) c.frames.push_back(&ep.frames[s + k * stride]);
    clips.push_back(std::move(c));
  }
  return clips;
}

struct SplitRatios {
  double train = 0.8, val = 0.1, test = 0.1;
};

inline SplitSpec make_splits(const std::vector<EpisodeMeta>& episodes, SplitRatios ratios,
                             const std::set<std::string>& holdout_objects,
                             std::uint64_t seed) {
  if (holdout_objects.empty()) throw Error("make_splits: holdout object set is empty");
  SplitSpec spec;
  std::vector<std::string> rest;
  std::set<std::string> rest_objects;
  for (const auto& m : episodes) {
    if (m.object_id.empty()) throw Error("make_splits: episode without object_id");
    if (holdout_objects.count(m.object_id)) {
      spec.test_unseen.insert(m.episode_id);
    } else {
      rest.push_back(m.episode_id);
      rest_objects.insert(m.object_id);
    }
  }
  if (rest.empty()) throw Error("make_splits: holdout set covers every object");
  std::sort(rest.begin(), rest.end());
  Rng rng(mix_seed(seed, "splits"));
  std::shuffle(rest.begin(), rest.end(), rng);

  const int n = static_cast<int>(rest.size());
  const int n_val = static_cast<int>(ratios.val * n);
  const int n_test = static_cast<int>(ratios.test * n);
  // remainder goes to train
  for (int i = 0; i < n; ++i) {
    if (i < n_val)
      spec.val.insert(rest[i]);
    else if (i < n_val + n_test)
      spec.test_seen.insert(rest[i]);
    else
      spec.train.insert(rest[i]);
  }
  return spec;
}

}  // namespace tb
