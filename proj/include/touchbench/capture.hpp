#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "touchbench/core.hpp"
#include "touchbench/synthgen.hpp"
#include "touchbench/tactile.hpp"

// Deterministic discrete-event simulation of the asynchronous acquisition
// rig, 30 Hz latest-valid-snapshot synchronization, and the episode
// directory layout (three JSON-Lines files plus per-view image streams).

namespace tb::capture {

namespace fs = std::filesystem;

struct SensorSpec {
  std::string name;
  double rate = 30.0;          // Hz
  double latency_mean = 0.0;   // seconds
  double latency_jitter = 0.0; // uniform +/- jitter around the mean
  double dropout_prob = 0.0;   // per reading

  void validate() const {
    if (rate <= 0.0) throw Error("SensorSpec " + name + ": rate must be > 0");
    if (latency_mean < 0.0) throw Error("SensorSpec " + name + ": negative latency");
    if (dropout_prob < 0.0 || dropout_prob >= 1.0)
      throw Error("SensorSpec " + name + ": dropout_prob must be in [0,1)");
  }
};

// sensor names the snapshot builder understands
inline const std::vector<std::string> kSensorNames = {"cam_ego", "cam_wl", "cam_wr",
                                                      "glove", "rokoko", "vive"};

inline std::vector<SensorSpec> default_sensors() {
  return {
      {"cam_ego", 30.0, 0.005, 0.002, 0.0},
      {"cam_wl", 30.0, 0.005, 0.002, 0.0},
      {"cam_wr", 30.0, 0.005, 0.002, 0.0},
      {"glove", 100.0, 0.002, 0.001, 0.01},
      {"rokoko", 60.0, 0.010, 0.005, 0.01},
      {"vive", 90.0, 0.004, 0.002, 0.0},
  };
}

inline std::vector<SensorSpec> ideal_sensors() {
  // every stream at exactly 30 Hz, zero latency: tick k sees script frame k
  std::vector<SensorSpec> out;
  for (const auto& n : kSensorNames) out.push_back({n, 30.0, 0.0, 0.0, 0.0});
  return out;
}

struct SensorEvent {
  std::string sensor;
  Timestamp produced_ts;
  Timestamp available_ts;
  int payload_frame = 0;  // script frame index the reading was taken from
};

inline std::vector<SensorEvent> simulate_streams(const synth::ScenarioScript& script,
                                                 const std::vector<SensorSpec>& sensors,
                                                 std::uint64_t seed) {
  if (sensors.empty()) throw Error("simulate_streams: no sensors");
  const double duration = script.duration_frames / kFps;
  std::vector<SensorEvent> events;
  for (const auto& spec : sensors) {
    spec.validate();
    Rng rng(mix_seed(seed, "sensor/" + spec.name));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const int readings = static_cast<int>(duration * spec.rate);
    for (int k = 0; k < readings; ++k) {
      const double produced = k / spec.rate;
      const double jitter =
          spec.latency_jitter > 0.0
              ? (2.0 * u01(rng) - 1.0) * spec.latency_jitter
              : 0.0;
      const bool dropped = spec.dropout_prob > 0.0 && u01(rng) < spec.dropout_prob;
      if (dropped) continue;
      SensorEvent ev;
      ev.sensor = spec.name;
      ev.produced_ts = {produced};
      ev.available_ts = {produced + std::max(0.0, spec.latency_mean + jitter)};
      ev.payload_frame = std::clamp(static_cast<int>(std::lround(produced * kFps)), 0,
                                    script.duration_frames - 1);
      events.push_back(ev);
    }
  }
  return events;
}

struct SnapshotChoice {
  Timestamp produced_ts;
  Timestamp available_ts;
  int payload_frame = 0;
};

struct SnapshotTick {
  int frame_index = 0;
  Timestamp ts;
  std::map<std::string, SnapshotChoice> sensors;  // absent sensors not present
};

struct SnapshotLog {
  std::vector<SnapshotTick> ticks;
  std::vector<std::string> sensor_names;
};

/// For each 30 Hz tick, keep each sensor's event with the greatest
/// available_ts <= tick time; sensors with nothing yet are left absent.
inline SnapshotLog synchronize(const std::vector<SensorEvent>& events,
                               int duration_frames, double rate = kFps) {
  if (rate <= 0.0) throw Error("synchronize: rate must be > 0");
  SnapshotLog log;
  std::map<std::string, std::vector<const SensorEvent*>> by_sensor;
  for (const auto& e : events) by_sensor[e.sensor].push_back(&e);
  for (auto& [name, evs] : by_sensor) {
    std::sort(evs.begin(), evs.end(), [](const SensorEvent* a, const SensorEvent* b) {
      return a->available_ts.seconds < b->available_ts.seconds;
    });
    log.sensor_names.push_back(name);
  }
  std::map<std::string, std::size_t> cursor;  // next unconsumed event per sensor
  std::map<std::string, const SensorEvent*> latest;
  for (int k = 0; k < duration_frames; ++k) {
    SnapshotTick tick;
    tick.frame_index = k;
    tick.ts = {k / rate};
    for (auto& [name, evs] : by_sensor) {
      auto& cur = cursor[name];
      while (cur < evs.size() && evs[cur]->available_ts.seconds <= tick.ts.seconds)
        latest[name] = evs[cur++];
      if (auto it = latest.find(name); it != latest.end())
        tick.sensors[name] = {it->second->produced_ts, it->second->available_ts,
                              it->second->payload_frame};
    }
    log.ticks.push_back(std::move(tick));
  }
  return log;
}

/// Materializes snapshot payloads from the script: renders camera frames,
/// synthesizes glove / pose / tracker readings.
inline Episode build_episode(const SnapshotLog& log, const synth::ScenarioScript& script,
                             const synth::GenConfig& cfg,
                             const tactile::GridMapping& mapping,
                             const std::string& episode_id) {
  Episode ep;
  ep.meta.episode_id = episode_id;
  ep.meta.task = "synthetic_grasp";
  ep.meta.scenario = script.scenario;
  ep.meta.object_id = "obj" + std::to_string(script.seed % 23);

  bool any_absent = false;
  for (const auto& tick : log.ticks) {
    FrameRecord f;
    f.frame_index = tick.frame_index;
    f.ts = tick.ts;
    auto choice = [&](const std::string& name) -> std::optional<SnapshotChoice> {
      auto it = tick.sensors.find(name);
      if (it == tick.sensors.end()) return std::nullopt;
      return it->second;
    };
    const std::map<std::string, ViewId> cams = {{"cam_ego", ViewId::Ego},
                                                {"cam_wl", ViewId::WristLeft},
                                                {"cam_wr", ViewId::WristRight}};
    for (const auto& [name, view] : cams) {
      if (auto ch = choice(name)) {
        f.images[view] = synth::render_frame(script, ch->payload_frame, view, cfg);
        f.source_ts[name] = ch->produced_ts;
      } else {
        f.absent_sensors.insert(name);
      }
    }
    if (auto ch = choice("glove")) {
      f.raw_tactile =
          synth::synthesize_sensor_truth(script, ch->payload_frame, mapping).raw;
      f.source_ts["glove"] = ch->produced_ts;
    } else {
      f.absent_sensors.insert("glove");
    }
    if (auto ch = choice("rokoko")) {
      f.pose = synth::synthesize_sensor_truth(script, ch->payload_frame, mapping).pose;
      f.source_ts["rokoko"] = ch->produced_ts;
    } else {
      f.absent_sensors.insert("rokoko");
    }
    if (auto ch = choice("vive")) {
      f.trackers =
          synth::synthesize_sensor_truth(script, ch->payload_frame, mapping).trackers;
      f.source_ts["vive"] = ch->produced_ts;
    } else {
      f.absent_sensors.insert("vive");
      f.trackers[0].role = "chest";
      f.trackers[1].role = "left_wrist";
      f.trackers[2].role = "right_wrist";
    }
    any_absent = any_absent || !f.absent_sensors.empty();
    ep.frames.push_back(std::move(f));
  }
  if (any_absent) ep.meta.flags.insert("missing_sensor_data");
  return ep;
}

// ---------------------------------------------------------------------------
// Episode directory layout. The three JSON-Lines files carry the normative
// field names; image streams are lossless 8-bit frame containers.

namespace detail {

inline constexpr char kFrameMagic[8] = {'T', 'B', 'F', 'R', 'A', 'M', 'E', '1'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
void read_pod(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
}

inline void write_frame_stream(const fs::path& file,
                               const std::vector<const ImageFrame*>& frames) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + file.string());
  out.write(kFrameMagic, sizeof(kFrameMagic));
  const std::uint32_t n = static_cast<std::uint32_t>(frames.size());
  const std::uint32_t w = n ? frames[0]->width : 0;
  const std::uint32_t h = n ? frames[0]->height : 0;
  write_pod(out, n);
  write_pod(out, w);
  write_pod(out, h);
  std::vector<std::uint8_t> buf;
  for (const ImageFrame* f : frames) {
    buf.resize(f->data.size());
    for (std::size_t i = 0; i < f->data.size(); ++i)
      buf[i] = static_cast<std::uint8_t>(std::lround(double(f->data[i]) * 255.0));
    out.write(reinterpret_cast<const char*>(buf.data()), buf.size());
  }
  if (!out) throw IoError("write failed: " + file.string());
}

inline std::vector<ImageFrame> read_frame_stream(const fs::path& file, ViewId view) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("missing image stream: " + file.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kFrameMagic, 8) != 0)
    throw ParseError("bad frame stream magic: " + file.string());
  std::uint32_t n = 0, w = 0, h = 0;
  read_pod(in, n);
  read_pod(in, w);
  read_pod(in, h);
  std::vector<ImageFrame> frames(n);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * 3);
  for (auto& f : frames) {
    in.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (!in) throw ParseError("truncated frame stream: " + file.string());
    f.view = view;
    f.width = static_cast<int>(w);
    f.height = static_cast<int>(h);
    f.data.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) f.data[i] = buf[i] / 255.0f;
  }
  return frames;
}

inline nlohmann::json quat_json(const Quat& q) {
  return nlohmann::json::array({q.w, q.x, q.y, q.z});
}

inline Quat quat_from_json(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
          j.at(3).get<double>()};
}

}  // namespace detail

inline void write_episode_dir(const Episode& ep, const fs::path& dir) {
  if (ep.frames.empty()) throw Error("write_episode_dir: empty episode");
  fs::create_directories(dir);

  for (const auto& [name, view, file] :
       std::vector<std::tuple<std::string, ViewId, std::string>>{
           {"cam_ego", ViewId::Ego, "chest.frames"},
           {"cam_wl", ViewId::WristLeft, "left.frames"},
           {"cam_wr", ViewId::WristRight, "right.frames"}}) {
    // placeholder keeps streams frame-aligned when a camera was absent
    ImageFrame blank;
    blank.view = view;
    for (const auto& f : ep.frames)
      if (auto it = f.images.find(view); it != f.images.end()) {
        blank.width = it->second.width;
        blank.height = it->second.height;
        blank.data.assign(it->second.data.size(), 0.0f);
        break;
      }
    std::vector<const ImageFrame*> frames;
    for (const auto& f : ep.frames) {
      auto it = f.images.find(view);
      frames.push_back(it != f.images.end() ? &it->second : &blank);
    }
    if (blank.data.empty() && !ep.frames.empty())
      throw Error("write_episode_dir: no frames at all for view " +
                  std::string(to_string(view)));
    detail::write_frame_stream(dir / file, frames);
  }

  std::ofstream jq(dir / "jq_pressure.json");
  std::ofstream rk(dir / "rokoko_hands.json");
  std::ofstream vv(dir / "vive_poses.json");
  if (!jq || !rk || !vv) throw IoError("cannot write JSON-Lines files in " + dir.string());
  for (const auto& f : ep.frames) {
    nlohmann::json a, b, c;
    a["ts"] = f.ts.seconds;
    a["frame_index"] = f.frame_index;
    if (f.absent_sensors.count("glove")) {
      a["sensor_left"] = nullptr;
      a["sensor_right"] = nullptr;
      a["quat_left"] = nullptr;
      a["quat_right"] = nullptr;
    } else {
      a["sensor_left"] = f.raw_tactile.sensor_left;
      a["sensor_right"] = f.raw_tactile.sensor_right;
      a["quat_left"] = detail::quat_json(f.raw_tactile.quat_left);
      a["quat_right"] = detail::quat_json(f.raw_tactile.quat_right);
    }
    jq << a.dump() << "\n";

    b["ts"] = f.ts.seconds;
    b["frame_index"] = f.frame_index;
    if (f.absent_sensors.count("rokoko")) {
      b["left_pos"] = nullptr;
      b["right_pos"] = nullptr;
      b["aligned_to_vive"] = nullptr;
    } else {
      nlohmann::json lp = nlohmann::json::array(), rp = nlohmann::json::array();
      for (int j = 0; j < 21; ++j) lp.push_back(f.pose.joints[j]);
      for (int j = 21; j < kJoints; ++j) rp.push_back(f.pose.joints[j]);
      b["left_pos"] = lp;
      b["right_pos"] = rp;
      b["aligned_to_vive"] = true;
    }
    rk << b.dump() << "\n";

    c["ts"] = f.ts.seconds;
    c["frame_index"] = f.frame_index;
    if (f.absent_sensors.count("vive")) {
      c["chest"] = nullptr;
      c["left_wrist"] = nullptr;
      c["right_wrist"] = nullptr;
    } else {
      for (const auto& tr : f.trackers)
        c[tr.role] = {{"trans", tr.trans}, {"rot", detail::quat_json(tr.rot)}};
    }
    vv << c.dump() << "\n";
  }
  jq.flush();
  rk.flush();
  vv.flush();
  if (!jq || !rk || !vv) throw IoError("write failed in " + dir.string());

  // toolkit sidecar: metadata plus per-sensor timing not covered by the
  // three normative files
  nlohmann::json meta;
  meta["episode_id"] = ep.meta.episode_id;
  meta["task"] = ep.meta.task;
  meta["scenario"] = to_string(ep.meta.scenario);
  meta["object_id"] = ep.meta.object_id;
  meta["fps"] = ep.meta.fps;
  meta["flags"] = ep.meta.flags;
  nlohmann::json timing = nlohmann::json::array();
  for (const auto& f : ep.frames) {
    nlohmann::json row;
    for (const auto& [name, ts] : f.source_ts) row[name] = ts.seconds;
    nlohmann::json absent = nlohmann::json::array();
    for (const auto& name : f.absent_sensors) absent.push_back(name);
    timing.push_back({{"source_ts", row}, {"absent", absent}});
  }
  meta["timing"] = timing;
  std::ofstream mf(dir / "meta.json");
  mf << meta.dump(1) << "\n";
}

inline Episode read_episode_dir(const fs::path& dir) {
  auto read_lines = [&](const std::string& file) {
    std::ifstream in(dir / file);
    if (!in) throw IoError("missing file: " + (dir / file).string());
    std::vector<nlohmann::json> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        rows.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(file + ": line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    return rows;
  };
  auto jq = read_lines("jq_pressure.json");
  auto rk = read_lines("rokoko_hands.json");
  auto vv = read_lines("vive_poses.json");

  Episode ep;
  const std::size_t n = std::min({jq.size(), rk.size(), vv.size()});
  const bool mismatch = jq.size() != rk.size() || rk.size() != vv.size();
  if (mismatch) ep.meta.flags.insert("row_count_mismatch");

  nlohmann::json meta;
  {
    std::ifstream mf(dir / "meta.json");
    if (mf) mf >> meta;
  }
  if (meta.contains("episode_id")) {
    ep.meta.episode_id = meta["episode_id"].get<std::string>();
    ep.meta.task = meta.value("task", "");
    ep.meta.scenario = parse_scenario(meta.value("scenario", "home"));
    ep.meta.object_id = meta.value("object_id", "");
    for (const auto& fl : meta.value("flags", std::vector<std::string>{}))
      ep.meta.flags.insert(fl);
    if (mismatch) ep.meta.flags.insert("row_count_mismatch");
  } else {
    ep.meta.episode_id = dir.filename().string();
  }

  std::array<std::vector<ImageFrame>, 3> streams = {
      detail::read_frame_stream(dir / "chest.frames", ViewId::Ego),
      detail::read_frame_stream(dir / "left.frames", ViewId::WristLeft),
      detail::read_frame_stream(dir / "right.frames", ViewId::WristRight)};

  for (std::size_t i = 0; i < n; ++i) {
    FrameRecord f;
    f.frame_index = jq[i].at("frame_index").get<int>();
    f.ts = {jq[i].at("ts").get<double>()};
    for (int v = 0; v < 3; ++v)
      if (i < streams[v].size())
        f.images[static_cast<ViewId>(v)] = streams[v][i];
    if (jq[i].at("sensor_left").is_null()) {
      f.absent_sensors.insert("glove");
    } else {
      auto sl = jq[i].at("sensor_left").get<std::vector<int>>();
      auto sr = jq[i].at("sensor_right").get<std::vector<int>>();
      if (sl.size() != kRawChannels || sr.size() != kRawChannels)
        throw ParseError("jq_pressure.json: row " + std::to_string(i) +
                         ": pressure vector is not 256 channels");
      std::copy(sl.begin(), sl.end(), f.raw_tactile.sensor_left.begin());
      std::copy(sr.begin(), sr.end(), f.raw_tactile.sensor_right.begin());
      f.raw_tactile.quat_left = detail::quat_from_json(jq[i].at("quat_left"));
      f.raw_tactile.quat_right = detail::quat_from_json(jq[i].at("quat_right"));
    }
    if (rk[i].at("left_pos").is_null()) {
      f.absent_sensors.insert("rokoko");
    } else {
      for (int j = 0; j < 21; ++j)
        f.pose.joints[j] = rk[i].at("left_pos").at(j).get<std::array<double, 3>>();
      for (int j = 0; j < 21; ++j)
        f.pose.joints[21 + j] =
            rk[i].at("right_pos").at(j).get<std::array<double, 3>>();
      f.pose.valid = {true, true};
    }
    static const std::array<const char*, 3> roles = {"chest", "left_wrist",
                                                     "right_wrist"};
    if (vv[i].at("chest").is_null()) {
      f.absent_sensors.insert("vive");
      for (int r = 0; r < 3; ++r) f.trackers[r].role = roles[r];
    } else {
      for (int r = 0; r < 3; ++r) {
        const auto& tj = vv[i].at(roles[r]);
        f.trackers[r].role = roles[r];
        f.trackers[r].trans = tj.at("trans").get<std::array<double, 3>>();
        f.trackers[r].rot = detail::quat_from_json(tj.at("rot"));
      }
    }
    if (meta.contains("timing") && i < meta["timing"].size()) {
      for (const auto& [name, ts] : meta["timing"][i]["source_ts"].items())
        f.source_ts[name] = {ts.get<double>()};
      for (const auto& name : meta["timing"][i]["absent"])
        f.absent_sensors.insert(name.get<std::string>());
      // a camera flagged absent stored a placeholder frame; drop it
      static const std::map<std::string, ViewId> cams = {
          {"cam_ego", ViewId::Ego},
          {"cam_wl", ViewId::WristLeft},
          {"cam_wr", ViewId::WristRight}};
      for (const auto& [name, view] : cams)
        if (f.absent_sensors.count(name)) f.images.erase(view);
    }
    ep.frames.push_back(std::move(f));
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Sensor config file: JSON array of specs.

inline std::vector<SensorSpec> load_sensors(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open sensors file: " + file.string());
  nlohmann::json j;
  in >> j;
  std::vector<SensorSpec> out;
  for (const auto& e : j) {
    SensorSpec s;
    s.name = e.at("name").get<std::string>();
    s.rate = e.at("rate").get<double>();
    s.latency_mean = e.value("latency_mean", 0.0);
    s.latency_jitter = e.value("latency_jitter", 0.0);
    s.dropout_prob = e.value("dropout_prob", 0.0);
    s.validate();
    out.push_back(s);
  }
  return out;
}

inline void write_sensors(const std::vector<SensorSpec>& sensors, const fs::path& file) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : sensors)
    j.push_back({{"name", s.name},
                 {"rate", s.rate},
                 {"latency_mean", s.latency_mean},
                 {"latency_jitter", s.latency_jitter},
                 {"dropout_prob", s.dropout_prob}});
  std::ofstream out(file);
  out << j.dump(1) << "\n";
}

}  // namespace tb::capture
