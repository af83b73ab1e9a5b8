#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include <json.hpp>

#include "touchbench/core.hpp"
#include "touchbench/tactile.hpp"

// Synthetic interaction scenarios with an analytic pressure oracle. Every
// operation here is a pure function of (seed, config, frame), so the whole
// pipeline can be verified end-to-end without real capture hardware.

namespace tb::synth {

enum class GraspPhase : int { Approach = 0, Contact = 1, Press = 2, Release = 3 };

struct PhaseSpan {
  int start = 0, end = 0;  // [start, end)
  GraspPhase phase = GraspPhase::Approach;
};

struct ContactCell {
  int r = 0, c = 0;
  double gain = 1.0;  // in (0,1]
};

struct HandTrack {
  std::vector<PhaseSpan> phases;
  std::vector<double> force;  // per frame, [0,1], zero outside Contact/Press
  std::vector<ContactCell> contact_cells;
  double peak = 0.0;
};

struct ScenarioScript {
  std::uint64_t seed = 0;
  int duration_frames = 0;
  Scenario scenario = Scenario::Home;
  struct Object {
    std::array<double, 3> position{};
    double radius = 0.05;  // meters
    std::array<double, 3> color{};
  } object;
  std::array<HandTrack, 2> hands;
  std::array<bool, kGridCells> valid_mask{};  // canonical mask at generation time

  GraspPhase phase_at(HandSide h, int t) const {
    for (const auto& p : hands[static_cast<int>(h)].phases)
      if (t >= p.start && t < p.end) return p.phase;
    throw Error("phase_at: frame outside phase spans");
  }
};

struct GenConfig {
  int image_size = 56;
  int patch_size = 14;  // must divide image_size
  int min_frames = 30, max_frames = 60;
  std::map<Scenario, double> category_mix = {{Scenario::Home, 1.0},
                                             {Scenario::Workbench, 1.0},
                                             {Scenario::Office, 1.0},
                                             {Scenario::Retail, 1.0},
                                             {Scenario::Outdoor, 1.0}};
  bool occlusion = true;  // ego view hides the contact patch behind the hand
  double render_noise = 0.02;

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
      throw Error("GenConfig: image size must be divisible by patch size");
    if (min_frames < 8 || max_frames < min_frames)
      throw Error("GenConfig: bad episode length distribution");
  }
};

// ---------------------------------------------------------------------------

inline ScenarioScript generate_script(std::uint64_t seed, const GenConfig& cfg,
                                      const tactile::GridMapping& mapping =
                                          tactile::default_mapping()) {
  cfg.validate();
  Rng rng(mix_seed(seed, "script"));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  ScenarioScript s;
  s.seed = seed;
  s.duration_frames =
      cfg.min_frames +
      static_cast<int>(u01(rng) * (cfg.max_frames - cfg.min_frames + 1));
  s.duration_frames = std::min(s.duration_frames, cfg.max_frames);

  double mix_total = 0.0;
  for (const auto& [sc, w] : cfg.category_mix) mix_total += w;
  if (mix_total <= 0.0) throw Error("GenConfig: category mix sums to zero");
  double pick = u01(rng) * mix_total;
  for (const auto& [sc, w] : cfg.category_mix) {
    pick -= w;
    s.scenario = sc;
    if (pick <= 0.0) break;
  }

  s.object.position = {0.1 * (u01(rng) - 0.5), 0.1 * (u01(rng) - 0.5),
                       0.35 + 0.1 * u01(rng)};
  s.object.radius = 0.03 + 0.05 * u01(rng);
  s.object.color = {0.3 + 0.6 * u01(rng), 0.3 + 0.6 * u01(rng), 0.3 + 0.6 * u01(rng)};

  s.valid_mask = mapping.canonical_mask(HandSide::Left);
  std::vector<int> valid_cells;
  for (int i = 0; i < kGridCells; ++i)
    if (s.valid_mask[i]) valid_cells.push_back(i);

  for (int h = 0; h < 2; ++h) {
    HandTrack& tr = s.hands[h];
    const int n = s.duration_frames;
    // independent per-hand phase boundaries; phases tile [0, n) exactly
    const int a =
        std::clamp(static_cast<int>(n * (0.15 + 0.1 * u01(rng))), 1, n / 4);
    const int b = std::min(n - 2, a + std::max(1, static_cast<int>(n * 0.2)));
    const int c = std::min(n - 1, b + std::max(1, static_cast<int>(n * 0.35)));
    tr.phases = {{0, a, GraspPhase::Approach},
                 {a, b, GraspPhase::Contact},
                 {b, c, GraspPhase::Press},
                 {c, n, GraspPhase::Release}};

    tr.peak = u01(rng) < 0.3 ? 0.0 : 0.3 + 0.7 * u01(rng);
    tr.force.assign(n, 0.0);
    const int fall = std::max(1, (c - b) / 5);
    for (int t = a; t < b; ++t)  // linear rise
      tr.force[t] = tr.peak * double(t - a + 1) / double(b - a);
    for (int t = b; t < c; ++t) {  // hold, then linear fall inside Press
      if (t < c - fall)
        tr.force[t] = tr.peak;
      else
        tr.force[t] = tr.peak * double(c - t) / double(fall + 1);
    }

    // contact patch: a small blob of valid cells around a random center
    if (!valid_cells.empty()) {
      const int center = valid_cells[static_cast<int>(u01(rng) * valid_cells.size()) %
                                     valid_cells.size()];
      const int cr = center / kGridSize, cc = center % kGridSize;
      for (int i : valid_cells) {
        const int r = i / kGridSize, col = i % kGridSize;
        const int d = std::max(std::abs(r - cr), std::abs(col - cc));
        if (d <= 2) {
          const double gain = std::max(0.2, std::exp(-0.5 * d * d));
          tr.contact_cells.push_back({r, col, std::min(1.0, gain)});
        }
      }
    }
  }
  return s;
}

inline CanonicalTactileGrid oracle_pressure(const ScenarioScript& s, int t) {
  if (t < 0 || t >= s.duration_frames)
    throw Error("oracle_pressure: frame " + std::to_string(t) + " out of range");
  CanonicalTactileGrid g;
  for (int h = 0; h < 2; ++h) {
    HandGrid& hg = g.hand(static_cast<HandSide>(h));
    for (int i = 0; i < kGridCells; ++i)
      if (s.valid_mask[i]) {
        hg.v[i] = 0.0;
        hg.valid[i] = true;
      }
    const double f = s.hands[h].force[t];
    for (const auto& cc : s.hands[h].contact_cells) hg.at(cc.r, cc.c) = f * cc.gain;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Rendering. Deterministic rasters: scenario-tinted background, object
// disc, hand blobs. Wrist views show a contact patch whose brightness is
// affine in the instantaneous force; the occluded ego view never reads it.

namespace detail {

inline std::array<double, 3> scenario_tint(Scenario s) {
  switch (s) {
    case Scenario::Home: return {0.25, 0.2, 0.15};
    case Scenario::Workbench: return {0.2, 0.2, 0.25};
    case Scenario::Office: return {0.22, 0.25, 0.25};
    case Scenario::Retail: return {0.28, 0.22, 0.22};
    case Scenario::Outdoor: return {0.15, 0.25, 0.15};
  }
  return {0.2, 0.2, 0.2};
}

inline void fill_disc(ImageFrame& img, double cx, double cy, double radius,
                      const std::array<double, 3>& color) {
  const int S = img.width;
  const int x0 = std::max(0, static_cast<int>(cx - radius - 1));
  const int x1 = std::min(S - 1, static_cast<int>(cx + radius + 1));
  const int y0 = std::max(0, static_cast<int>(cy - radius - 1));
  const int y1 = std::min(S - 1, static_cast<int>(cy + radius + 1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius)
        for (int ch = 0; ch < 3; ++ch)
          img.at(y, x, ch) = static_cast<float>(color[ch]);
}

// hand blob geometry shared by rendering and glove-color augmentation;
// position depends on the phase (approach progress), never on force
inline void hand_geometry(const ScenarioScript& s, int t, ViewId view, int h, int S,
                          double& cx, double& cy, double& radius) {
  const GraspPhase ph = s.phase_at(static_cast<HandSide>(h), t);
  const auto& spans = s.hands[h].phases;
  double progress = 1.0;
  if (ph == GraspPhase::Approach) {
    const auto& span = spans[0];
    progress = double(t - span.start) / std::max(1, span.end - span.start);
  } else if (ph == GraspPhase::Release) {
    const auto& span = spans[3];
    progress = 1.0 - double(t - span.start) / std::max(1, span.end - span.start);
  }
  if (view == ViewId::Ego) {
    const double home_x = h == 0 ? S * 0.2 : S * 0.8;
    const double obj_x = S * 0.5 + s.object.position[0] * S;
    cx = home_x + (obj_x - home_x) * progress;
    cy = S * 0.75 - progress * S * 0.25 + s.object.position[1] * S * 0.5;
    radius = S * 0.14;
  } else {
    // close-up: hand fills the lower part of its wrist view
    cx = S * 0.5;
    cy = S * 0.8 - 0.1 * S * progress;
    radius = S * 0.3;
  }
}

}  // namespace detail

// Where a hand's contact patch is drawn in its wrist close-up: the image
// position tracks the contact-cell centroid on the canonical grid, so the
// close-up carries the contact location as well as its force.
inline void wrist_patch_center(const ScenarioScript& s, int h, int S,
                               double& cx, double& cy) {
  double r = 10.0, c = 10.0;
  const auto& cells = s.hands[h].contact_cells;
  if (!cells.empty()) {
    r = c = 0.0;
    for (const auto& cc : cells) {
      r += cc.r;
      c += cc.c;
    }
    r /= cells.size();
    c /= cells.size();
  }
  cx = S * (0.25 + 0.5 * c / (kGridSize - 1));
  cy = S * (0.30 + 0.5 * r / (kGridSize - 1));
}

inline ImageFrame render_frame(const ScenarioScript& s, int t, ViewId view,
                               const GenConfig& cfg) {
  if (t < 0 || t >= s.duration_frames) throw Error("render_frame: frame out of range");
  const int S = cfg.image_size;
  ImageFrame img;
  img.view = view;
  img.width = S;
  img.height = S;
  img.data.assign(static_cast<std::size_t>(S) * S * 3, 0.0f);

  const auto bg = detail::scenario_tint(s.scenario);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = static_cast<float>(bg[ch]);

  if (view == ViewId::Ego) {
    const double ox = S * 0.5 + s.object.position[0] * S;
    const double oy = S * 0.45 + s.object.position[1] * S;
    detail::fill_disc(img, ox, oy, s.object.radius * 4.0 * S, s.object.color);
    if (!cfg.occlusion) {
      // contact patches visible only when occlusion is disabled
      for (int h = 0; h < 2; ++h) {
        const double f = s.hands[h].force[t];
        if (f > 0.0) {
          const double b = 0.15 + 0.8 * f;
          detail::fill_disc(img, ox + (h == 0 ? -2.0 : 2.0), oy, S * 0.05,
                            {b, b * 0.6, b * 0.6});
        }
      }
    }
    for (int h = 0; h < 2; ++h) {
      double cx, cy, r;
      detail::hand_geometry(s, t, view, h, S, cx, cy, r);
      detail::fill_disc(img, cx, cy, r, {0.55, 0.45, 0.4});
    }
  } else {
    const int h = view == ViewId::WristLeft ? 0 : 1;
    // object fills the upper region of the close-up
    detail::fill_disc(img, S * 0.5, S * 0.2, S * 0.35, s.object.color);
    double cx, cy, r;
    detail::hand_geometry(s, t, view, h, S, cx, cy, r);
    detail::fill_disc(img, cx, cy, r, {0.55, 0.45, 0.4});
    const GraspPhase ph = s.phase_at(static_cast<HandSide>(h), t);
    if (ph == GraspPhase::Contact || ph == GraspPhase::Press) {
      const double f = s.hands[h].force[t];
      if (f > 0.0) {
        const double b = 0.15 + 0.8 * f;  // affine in force
        double px, py;
        wrist_patch_center(s, h, S, px, py);
        detail::fill_disc(img, px, py, S * 0.12, {b, b, b * 0.5});
      }
    }
  }

  if (cfg.render_noise > 0.0) {
    Rng rng(mix_seed(s.seed, std::string("render/") + to_string(view) + "/" +
                                 std::to_string(t)));
    std::uniform_real_distribution<double> u(-cfg.render_noise, cfg.render_noise);
    for (auto& px : img.data)
      px = std::clamp(px + static_cast<float>(u(rng)), 0.0f, 1.0f);
  }
  // pixels land on 8-bit steps so image streams round-trip bit-exactly
  for (auto& px : img.data)
    px = static_cast<float>(std::lround(double(px) * 255.0)) / 255.0f;
  return img;
}

/// Pixels covered by a hand blob in the given view, for glove-color
/// augmentation.
inline std::vector<int> hand_region_pixels(const ScenarioScript& s, int t, ViewId view,
                                           const GenConfig& cfg) {
  const int S = cfg.image_size;
  std::vector<int> out;
  for (int h = 0; h < 2; ++h) {
    if (view != ViewId::Ego && h != (view == ViewId::WristLeft ? 0 : 1)) continue;
    double cx, cy, r;
    detail::hand_geometry(s, t, view, h, S, cx, cy, r);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
          out.push_back(y * S + x);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Ground-truth sensor synthesis: the raw 256-vector is the inverse image of
// the oracle grid under the mapping, quantized to 8 bits.

struct SensorTruth {
  HandPoseFrame pose;
  RawTactileFrame raw;
  std::array<TrackerPose, 3> trackers;
};

inline SensorTruth synthesize_sensor_truth(const ScenarioScript& s, int t,
                                           const tactile::GridMapping& mapping) {
  if (t < 0 || t >= s.duration_frames)
    throw Error("synthesize_sensor_truth: frame out of range");
  SensorTruth out;
  const CanonicalTactileGrid oracle = oracle_pressure(s, t);

  for (int h = 0; h < 2; ++h) {
    const HandSide side = static_cast<HandSide>(h);
    const auto mask = mapping.canonical_mask(side);
    for (const auto& cc : s.hands[h].contact_cells)
      if (!mask[cc.r * kGridSize + cc.c])
        throw Error("synthesize_sensor_truth: contact cell (" + std::to_string(cc.r) +
                    "," + std::to_string(cc.c) + ") has no raw channel");

    auto& raw = h == 0 ? out.raw.sensor_left : out.raw.sensor_right;
    raw.fill(0);
    const auto& hg = oracle.hand(side);
    for (const auto& [cell, idx] : mapping.hand(side)) {
      if (mapping.klass[idx] != tactile::SensorClass::Tactile) continue;
      const int c =
          side == HandSide::Right ? kGridSize - 1 - cell.second : cell.second;
      raw[idx] = static_cast<int>(std::lround(255.0 * hg.at(cell.first, c)));
    }
    // bending channels track grasp closure, not contact force
    const GraspPhase ph = s.phase_at(side, t);
    const int closure = ph == GraspPhase::Press ? 180
                        : ph == GraspPhase::Contact ? 120
                        : ph == GraspPhase::Release ? 60
                                                    : 20;
    for (int idx : mapping.bending_indices()) raw[idx] = closure;
  }

  // joints: wrist plus 20 finger joints per hand, fingertips approaching
  // the object through Contact/Press
  for (int h = 0; h < 2; ++h) {
    const GraspPhase ph = s.phase_at(static_cast<HandSide>(h), t);
    const double near = (ph == GraspPhase::Contact || ph == GraspPhase::Press) ? 1.0
                        : ph == GraspPhase::Release ? 0.5
                                                    : 0.2;
    const double side_off = h == 0 ? -0.15 : 0.15;
    std::array<double, 3> wrist = {
        s.object.position[0] + side_off * (1.0 - 0.6 * near),
        s.object.position[1] - 0.1 * (1.0 - near), s.object.position[2]};
    for (int j = 0; j < 21; ++j) {
      const int joint = h * 21 + j;
      const double reach = j == 0 ? 0.0 : 0.02 + 0.004 * j;
      for (int d = 0; d < 3; ++d)
        out.pose.joints[joint][d] =
            wrist[d] + reach * (s.object.position[d] - wrist[d]) * near * 5.0;
    }
    out.pose.valid[h] = true;
  }

  out.trackers[0] = {"chest", {0.0, -0.3, 0.0}, Quat{}};
  out.trackers[1] = {"left_wrist",
                     {out.pose.joints[0][0], out.pose.joints[0][1],
                      out.pose.joints[0][2]},
                     Quat{}};
  out.trackers[2] = {"right_wrist",
                     {out.pose.joints[21][0], out.pose.joints[21][1],
                      out.pose.joints[21][2]},
                     Quat{}};
  return out;
}


// ---------------------------------------------------------------------------
// Script (de)serialization, used by the gen / capture-sim CLI boundary.

inline nlohmann::json script_to_json(const ScenarioScript& s) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["duration_frames"] = s.duration_frames;
  j["scenario"] = to_string(s.scenario);
  j["object"] = {{"position", s.object.position},
                 {"radius", s.object.radius},
                 {"color", s.object.color}};
  for (int h = 0; h < 2; ++h) {
    nlohmann::json hj;
    for (const auto& p : s.hands[h].phases)
      hj["phases"].push_back({p.start, p.end, static_cast<int>(p.phase)});
    hj["force"] = s.hands[h].force;
    hj["peak"] = s.hands[h].peak;
    for (const auto& c : s.hands[h].contact_cells)
      hj["contact_cells"].push_back({c.r, c.c, c.gain});
    j["hands"].push_back(hj);
  }
  std::vector<int> mask_cells;
  for (int i = 0; i < kGridCells; ++i)
    if (s.valid_mask[i]) mask_cells.push_back(i);
  j["valid_cells"] = mask_cells;
  return j;
}

inline ScenarioScript script_from_json(const nlohmann::json& j) {
  ScenarioScript s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.duration_frames = j.at("duration_frames").get<int>();
  s.scenario = parse_scenario(j.at("scenario").get<std::string>());
  s.object.position = j.at("object").at("position").get<std::array<double, 3>>();
  s.object.radius = j.at("object").at("radius").get<double>();
  s.object.color = j.at("object").at("color").get<std::array<double, 3>>();
  for (int h = 0; h < 2; ++h) {
    const auto& hj = j.at("hands").at(h);
    for (const auto& p : hj.at("phases"))
      s.hands[h].phases.push_back(
          {p.at(0).get<int>(), p.at(1).get<int>(),
           static_cast<GraspPhase>(p.at(2).get<int>())});
    s.hands[h].force = hj.at("force").get<std::vector<double>>();
    s.hands[h].peak = hj.at("peak").get<double>();
    if (hj.contains("contact_cells"))
      for (const auto& c : hj.at("contact_cells"))
        s.hands[h].contact_cells.push_back(
            {c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<double>()});
  }
  for (int i : j.at("valid_cells").get<std::vector<int>>()) s.valid_mask[i] = true;
  return s;
}

}  // namespace tb::synth
