#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "touchbench/core.hpp"

// Raw 256-channel glove vectors -> canonical 21x21 hand grids, plus the
// preprocessing chain: remap -> baseline -> column repair -> normalization.

namespace tb::tactile {

enum class SensorClass : int { Tactile = 0, Bending = 1 };

using Cell = std::pair<int, int>;  // (row, col)

struct GridMapping {
  // per hand: target cell -> raw channel index
  std::array<std::map<Cell, int>, 2> cells;
  // per raw channel: sensor class (shared by both hands)
  std::array<SensorClass, kRawChannels> klass{};

  const std::map<Cell, int>& hand(HandSide s) const {
    return cells[static_cast<int>(s)];
  }

  // canonical valid mask (right hand mirrored into the left-hand frame)
  std::array<bool, kGridCells> canonical_mask(HandSide s) const {
    std::array<bool, kGridCells> m{};
    for (const auto& [cell, raw] : hand(s)) {
      if (klass[raw] != SensorClass::Tactile) continue;
      const int c = s == HandSide::Right ? kGridSize - 1 - cell.second : cell.second;
      m[cell.first * kGridSize + c] = true;
    }
    return m;
  }

  std::vector<int> bending_indices() const {
    std::vector<int> out;
    for (int i = 0; i < kRawChannels; ++i)
      if (klass[i] == SensorClass::Bending) out.push_back(i);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Built-in glove layout: five two-column finger strips plus a palm block,
// 232 tactile channels mapped onto the grid and 24 bending channels.
// The right-hand mapping is the mirror image of the left, so both hands
// share one canonical mask after remapping.

inline std::vector<Cell> default_layout_cells() {
  std::vector<Cell> cells;
  for (int f = 0; f < 5; ++f) {  // fingers, thumb (f=0) shorter
    const int c0 = 1 + 4 * f;
    const int rows = f == 0 ? 6 : 10;
    const int r0 = f == 0 ? 5 : 0;
    for (int r = r0; r < r0 + rows; ++r) {
      cells.push_back({r, c0});
      cells.push_back({r, c0 + 1});
    }
  }
  for (int r = 11; r < 21; ++r)  // palm
    for (int c = 2; c < 16; ++c) cells.push_back({r, c});
  return cells;  // 12+80+140 = 232 cells
}

inline GridMapping default_mapping() {
  GridMapping m;
  const auto cells = default_layout_cells();
  for (int i = 0; i < static_cast<int>(cells.size()); ++i) {
    m.cells[0][cells[i]] = i;
    m.cells[1][{cells[i].first, kGridSize - 1 - cells[i].second}] = i;
  }
  for (int i = 0; i < kRawChannels; ++i)
    m.klass[i] = i < static_cast<int>(cells.size()) ? SensorClass::Tactile
                                                    : SensorClass::Bending;
  return m;
}

// ---------------------------------------------------------------------------
// Mapping files: per-hand JSON objects keyed by "(r,c)" strings, plus a
// sibling class file listing the bending raw indices.

inline Cell parse_cell_key(const std::string& key) {
  int r = 0, c = 0;
  if (std::sscanf(key.c_str(), "(%d,%d)", &r, &c) != 2)
    throw ParseError("mapping key is not \"(r,c)\": " + key);
  return {r, c};
}

inline std::map<Cell, int> parse_hand_mapping(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open mapping file: " + file.string());
  nlohmann::json j;
  in >> j;
  std::map<Cell, int> out;
  std::map<int, std::string> used_raw;
  for (const auto& [key, value] : j.items()) {
    const Cell cell = parse_cell_key(key);
    if (cell.first < 0 || cell.first >= kGridSize || cell.second < 0 ||
        cell.second >= kGridSize)
      throw ParseError("mapping cell out of range in " + file.string() + ": " + key);
    const int raw = value.get<int>();
    if (raw < 0 || raw >= kRawChannels)
      throw ParseError("raw index out of range in " + file.string() + ": " + key);
    if (auto it = used_raw.find(raw); it != used_raw.end())
      throw ParseError("duplicate raw index " + std::to_string(raw) + " in " +
                       file.string() + " (keys " + it->second + " and " + key + ")");
    used_raw[raw] = key;
    out[cell] = raw;
  }
  return out;
}

inline GridMapping load_mapping(const std::filesystem::path& dir) {
  GridMapping m;
  m.cells[0] = parse_hand_mapping(dir / "mapping_left.json");
  m.cells[1] = parse_hand_mapping(dir / "mapping_right.json");
  std::ifstream in(dir / "bending.json");
  if (!in) throw IoError("cannot open class file: " + (dir / "bending.json").string());
  nlohmann::json j;
  in >> j;
  for (auto& k : m.klass) k = SensorClass::Tactile;
  for (const auto& idx : j) {
    const int i = idx.get<int>();
    if (i < 0 || i >= kRawChannels)
      throw ParseError("bending index out of range: " + std::to_string(i));
    m.klass[i] = SensorClass::Bending;
  }
  return m;
}

inline void write_mapping(const GridMapping& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (int h = 0; h < 2; ++h) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [cell, raw] : m.cells[h])
      j["(" + std::to_string(cell.first) + "," + std::to_string(cell.second) + ")"] =
          raw;
    std::ofstream out(dir / (h == 0 ? "mapping_left.json" : "mapping_right.json"));
    out << j.dump(1) << "\n";
  }
  nlohmann::json bend = nlohmann::json::array();
  for (int i : m.bending_indices()) bend.push_back(i);
  std::ofstream out(dir / "bending.json");
  out << bend.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Stages

/// Tactile-class channels land in the grid (right hand mirrored into the
/// canonical frame); bending-class channels are kept apart.
inline HandGrid remap(const std::array<int, kRawChannels>& raw, const GridMapping& m,
                      HandSide side) {
  HandGrid g;
  for (const auto& [cell, idx] : m.hand(side)) {
    if (m.klass[idx] != SensorClass::Tactile) continue;
    const int c =
        side == HandSide::Right ? kGridSize - 1 - cell.second : cell.second;
    g.set(cell.first, c, static_cast<double>(raw[idx]));
  }
  return g;
}

inline std::vector<double> bending_values(const std::array<int, kRawChannels>& raw,
                                          const GridMapping& m) {
  std::vector<double> out;
  for (int i : m.bending_indices()) out.push_back(static_cast<double>(raw[i]));
  return out;
}

struct PreprocessConfig {
  double baseline_threshold = 10.0;  // raw units out of 255
  std::array<std::vector<int>, 2> broken_columns{};
  double eps = 1e-6;
  // per-episode annotation: first frame known contact-free
  std::optional<bool> first_frame_contact_free;
};

/// Subtracts the frame-0 grid when the episode starts contact-free, judged
/// by annotation first and the low-pressure threshold as fallback.
inline bool subtract_baseline(std::vector<HandGrid>& seq, const PreprocessConfig& cfg) {
  if (seq.empty()) throw Error("subtract_baseline: empty sequence");
  bool apply;
  if (cfg.first_frame_contact_free.has_value()) {
    apply = *cfg.first_frame_contact_free;
  } else {
    double mx = 0.0;
    for (int i = 0; i < kGridCells; ++i)
      if (seq[0].valid[i]) mx = std::max(mx, seq[0].v[i]);
    apply = mx < cfg.baseline_threshold;
  }
  if (!apply) return false;
  const HandGrid base = seq[0];
  for (auto& g : seq)
    for (int i = 0; i < kGridCells; ++i)
      if (g.valid[i]) g.v[i] = std::max(0.0, g.v[i] - base.v[i]);
  return true;
}

/// Linear interpolation across broken columns from the nearest valid
/// non-broken cells in the same row; edge columns copy the single neighbor.
inline void repair_columns(std::vector<HandGrid>& seq, const std::vector<int>& broken) {
  if (broken.empty()) return;
  std::array<bool, kGridSize> is_broken{};
  for (int c : broken) {
    if (c < 0 || c >= kGridSize)
      throw Error("repair_columns: column out of range: " + std::to_string(c));
    is_broken[c] = true;
  }
  for (auto& g : seq) {
    for (int r = 0; r < kGridSize; ++r) {
      for (int c = 0; c < kGridSize; ++c) {
        if (!is_broken[c] || !g.is_valid(r, c)) continue;
        int left = -1, right = -1;
        for (int k = c - 1; k >= 0; --k)
          if (!is_broken[k] && g.is_valid(r, k)) {
            left = k;
            break;
          }
        for (int k = c + 1; k < kGridSize; ++k)
          if (!is_broken[k] && g.is_valid(r, k)) {
            right = k;
            break;
          }
        if (left < 0 && right < 0)
          throw Error("repair_columns: row " + std::to_string(r) +
                      " has no valid non-broken cell");
        if (left < 0)
          g.at(r, c) = g.at(r, right);
        else if (right < 0)
          g.at(r, c) = g.at(r, left);
        else
          g.at(r, c) = g.at(r, left) + (g.at(r, right) - g.at(r, left)) *
                                           double(c - left) / double(right - left);
      }
    }
  }
}

struct NormMeta {
  // per hand, per class episode maxima used as divisors
  std::array<double, 2> tactile_max{1.0, 1.0};
  std::array<double, 2> bending_max{1.0, 1.0};
};

/// Per-episode, per-class maxima; classes scale independently.
inline void normalize_hand(std::vector<HandGrid>& grids,
                           std::vector<std::vector<double>>& bending, double eps,
                           double& tactile_max_out, double& bending_max_out) {
  double tmax = 0.0, bmax = 0.0;
  for (const auto& g : grids)
    for (int i = 0; i < kGridCells; ++i)
      if (g.valid[i]) tmax = std::max(tmax, g.v[i]);
  for (const auto& f : bending)
    for (double v : f) bmax = std::max(bmax, v);
  const double tdiv = std::max(eps, tmax);
  const double bdiv = std::max(eps, bmax);
  for (auto& g : grids)
    for (int i = 0; i < kGridCells; ++i)
      if (g.valid[i]) g.v[i] /= tdiv;
  for (auto& f : bending)
    for (double& v : f) v /= bdiv;
  tactile_max_out = tdiv;
  bending_max_out = bdiv;
}

struct PressureArchive {
  std::vector<CanonicalTactileGrid> frames;
  std::vector<std::array<std::vector<double>, 2>> bending;  // per frame, per hand
  std::array<bool, 2> baseline_applied{false, false};
  int grid_size = kGridSize;
  NormMeta norm;
};

/// remap -> subtract_baseline -> repair_columns -> normalize, per hand.
/// The stage order is normative; reordering changes broken-column results.
inline PressureArchive preprocess_episode(
    const std::vector<RawTactileFrame>& raw_frames, const GridMapping& mapping,
    const PreprocessConfig& cfg) {
  if (raw_frames.empty()) throw Error("preprocess_episode: no frames");
  PressureArchive ar;
  ar.frames.resize(raw_frames.size());
  ar.bending.resize(raw_frames.size());
  for (int h = 0; h < 2; ++h) {
    const HandSide side = static_cast<HandSide>(h);
    std::vector<HandGrid> grids;
    std::vector<std::vector<double>> bend;
    grids.reserve(raw_frames.size());
    for (const auto& f : raw_frames) {
      const auto& raw = h == 0 ? f.sensor_left : f.sensor_right;
      grids.push_back(remap(raw, mapping, side));
      bend.push_back(bending_values(raw, mapping));
    }
    ar.baseline_applied[h] = subtract_baseline(grids, cfg);
    repair_columns(grids, cfg.broken_columns[h]);
    normalize_hand(grids, bend, cfg.eps, ar.norm.tactile_max[h],
                   ar.norm.bending_max[h]);
    for (std::size_t i = 0; i < grids.size(); ++i) {
      ar.frames[i].hand(side) = grids[i];
      ar.bending[i][h] = std::move(bend[i]);
    }
  }
  return ar;
}

}  // namespace tb::tactile
