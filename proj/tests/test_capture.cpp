#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "touchbench/capture.hpp"

using namespace tb;
using namespace tb::capture;
namespace fs = std::filesystem;

namespace {

const synth::GenConfig kCfg;
const tactile::GridMapping kMap = tactile::default_mapping();

fs::path temp_dir(const char* tag) {
  auto p = fs::temp_directory_path() / (std::string("tb_capture_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("stream simulation is deterministic and respects rates") {
  auto script = synth::generate_script(3, kCfg);
  auto a = simulate_streams(script, default_sensors(), 99);
  auto b = simulate_streams(script, default_sensors(), 99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].sensor == b[i].sensor);
    CHECK(a[i].available_ts.seconds == b[i].available_ts.seconds);
  }
  // a 100 Hz stream produces ~100/30 readings per frame minus dropout
  int glove = 0;
  for (const auto& e : a) glove += e.sensor == "glove";
  const double expect = script.duration_frames / kFps * 100.0;
  CHECK(glove > expect * 0.9);
  CHECK(glove <= expect);
  for (const auto& e : a) CHECK(e.available_ts.seconds >= e.produced_ts.seconds - 1e-12);
}

TEST_CASE("synchronize keeps the latest event available at each tick") {
  std::vector<SensorEvent> events = {
      {"glove", {0.00}, {0.02}, 0},
      {"glove", {0.03}, {0.04}, 1},
      {"glove", {0.10}, {0.50}, 3},  // long latency: arrives late
  };
  auto log = synchronize(events, 16);
  REQUIRE(log.ticks.size() == 16);
  // tick 0 at t=0: nothing available yet
  CHECK(log.ticks[0].sensors.count("glove") == 0);
  // tick 1 at t=1/30=0.0333: only the first event arrived
  REQUIRE(log.ticks[1].sensors.count("glove") == 1);
  CHECK(log.ticks[1].sensors.at("glove").payload_frame == 0);
  // tick 2 at t=0.0667: second event is now the latest
  CHECK(log.ticks[2].sensors.at("glove").payload_frame == 1);
  // the late event only shows up from t>=0.5 (tick 15)
  CHECK(log.ticks[14].sensors.at("glove").payload_frame == 1);
  CHECK(log.ticks[15].sensors.at("glove").payload_frame == 3);
}

TEST_CASE("synchronization invariants hold across jittered episodes") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto script = synth::generate_script(seed, kCfg);
    auto events = simulate_streams(script, default_sensors(), seed * 7 + 1);
    auto log = synchronize(events, script.duration_frames);
    std::map<std::string, double> last_produced;
    for (const auto& tick : log.ticks) {
      for (const auto& [name, ch] : tick.sensors) {
        // never from the future
        CHECK(ch.available_ts.seconds <= tick.ts.seconds + 1e-12);
        // monotone: a later tick never selects an older reading
        auto it = last_produced.find(name);
        if (it != last_produced.end()) CHECK(ch.produced_ts.seconds >= it->second);
        last_produced[name] = ch.produced_ts.seconds;
      }
    }
  }
}

TEST_CASE("ideal sensors reproduce the script frame for frame") {
  auto script = synth::generate_script(8, kCfg);
  auto events = simulate_streams(script, ideal_sensors(), 1);
  auto log = synchronize(events, script.duration_frames);
  for (const auto& tick : log.ticks)
    for (const auto& [name, ch] : tick.sensors)
      CHECK(ch.payload_frame == tick.frame_index);
  auto ep = build_episode(log, script, kCfg, kMap, "ep_ideal");
  REQUIRE(static_cast<int>(ep.frames.size()) == script.duration_frames);
  CHECK(validate_episode(ep).empty());
  // tick 0 has no reading yet only if latency > 0; here latency is 0
  CHECK(ep.frames[0].absent_sensors.empty());
  // raw tactile matches the direct synthesis
  for (int t = 0; t < script.duration_frames; t += 7) {
    auto truth = synth::synthesize_sensor_truth(script, t, kMap);
    CHECK(ep.frames[t].raw_tactile.sensor_left == truth.raw.sensor_left);
    CHECK(ep.frames[t].images.at(ViewId::Ego).data ==
          synth::render_frame(script, t, ViewId::Ego, kCfg).data);
  }
}

TEST_CASE("episodes with missing early readings are flagged") {
  auto script = synth::generate_script(12, kCfg);
  auto events = simulate_streams(script, default_sensors(), 5);
  auto log = synchronize(events, script.duration_frames);
  auto ep = build_episode(log, script, kCfg, kMap, "ep_latency");
  // with positive latency, tick 0 precedes every arrival
  CHECK_FALSE(ep.frames[0].absent_sensors.empty());
  CHECK(ep.meta.flags.count("missing_sensor_data") == 1);
}

TEST_CASE("episode directory round trip is bit exact") {
  auto script = synth::generate_script(21, kCfg);
  auto events = simulate_streams(script, default_sensors(), 2);
  auto log = synchronize(events, script.duration_frames);
  auto ep = build_episode(log, script, kCfg, kMap, "ep_rt");
  ep.meta.object_id = "obj7";
  ep.meta.scenario = script.scenario;

  auto dir = temp_dir("roundtrip");
  write_episode_dir(ep, dir);
  auto ep2 = read_episode_dir(dir);

  CHECK(ep2.meta.episode_id == "ep_rt");
  CHECK(ep2.meta.object_id == "obj7");
  CHECK(ep2.meta.scenario == script.scenario);
  REQUIRE(ep2.frames.size() == ep.frames.size());
  for (std::size_t i = 0; i < ep.frames.size(); ++i) {
    const auto& f = ep.frames[i];
    const auto& g = ep2.frames[i];
    CHECK(g.frame_index == f.frame_index);
    CHECK(g.ts.seconds == f.ts.seconds);
    CHECK(g.absent_sensors == f.absent_sensors);
    for (const auto& [view, img] : f.images) {
      REQUIRE(g.images.count(view) == 1);
      CHECK(g.images.at(view).data == img.data);  // lossless u8 streams
    }
    if (!f.absent_sensors.count("glove")) {
      CHECK(g.raw_tactile.sensor_left == f.raw_tactile.sensor_left);
      CHECK(g.raw_tactile.sensor_right == f.raw_tactile.sensor_right);
      CHECK(g.raw_tactile.quat_left.w == f.raw_tactile.quat_left.w);
    }
    if (!f.absent_sensors.count("rokoko"))
      CHECK(g.pose.joints == f.pose.joints);
    if (!f.absent_sensors.count("vive"))
      for (int r = 0; r < 3; ++r) {
        CHECK(g.trackers[r].role == f.trackers[r].role);
        CHECK(g.trackers[r].trans == f.trackers[r].trans);
      }
    for (const auto& [name, ts] : f.source_ts) {
      REQUIRE(g.source_ts.count(name) == 1);
      CHECK(g.source_ts.at(name).seconds == ts.seconds);
    }
  }
}

TEST_CASE("the three data files use the normative field names") {
  auto script = synth::generate_script(33, kCfg);
  auto events = simulate_streams(script, ideal_sensors(), 1);
  auto ep = build_episode(synchronize(events, script.duration_frames), script, kCfg,
                          kMap, "ep_fields");
  auto dir = temp_dir("fields");
  write_episode_dir(ep, dir);

  auto first_line = [&](const char* file) {
    std::ifstream in(dir / file);
    std::string line;
    std::getline(in, line);
    return nlohmann::json::parse(line);
  };
  auto jq = first_line("jq_pressure.json");
  CHECK(jq.contains("sensor_left"));
  CHECK(jq.contains("sensor_right"));
  CHECK(jq.contains("quat_left"));
  CHECK(jq.contains("quat_right"));
  CHECK(jq["sensor_left"].size() == 256);
  CHECK(jq["quat_left"].size() == 4);
  auto rk = first_line("rokoko_hands.json");
  CHECK(rk.contains("left_pos"));
  CHECK(rk.contains("right_pos"));
  CHECK(rk.contains("aligned_to_vive"));
  CHECK(rk["left_pos"].size() == 21);
  CHECK(rk["left_pos"][0].size() == 3);
  auto vv = first_line("vive_poses.json");
  for (const char* role : {"chest", "left_wrist", "right_wrist"}) {
    REQUIRE(vv.contains(role));
    CHECK(vv[role].contains("trans"));
    CHECK(vv[role].contains("rot"));
    CHECK(vv[role]["rot"].size() == 4);
  }
}

TEST_CASE("row count mismatch is flagged and truncates to the shortest file") {
  auto script = synth::generate_script(14, kCfg);
  auto events = simulate_streams(script, ideal_sensors(), 1);
  auto ep = build_episode(synchronize(events, script.duration_frames), script, kCfg,
                          kMap, "ep_trunc");
  auto dir = temp_dir("truncate");
  write_episode_dir(ep, dir);

  // drop the last two lines of one file
  std::ifstream in(dir / "rokoko_hands.json");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  in.close();
  std::ofstream out(dir / "rokoko_hands.json", std::ios::trunc);
  for (std::size_t i = 0; i + 2 < lines.size(); ++i) out << lines[i] << "\n";
  out.close();

  auto ep2 = read_episode_dir(dir);
  CHECK(ep2.frames.size() == ep.frames.size() - 2);
  CHECK(ep2.meta.flags.count("row_count_mismatch") == 1);
}

TEST_CASE("malformed JSON lines report file and line number") {
  auto script = synth::generate_script(15, kCfg);
  auto events = simulate_streams(script, ideal_sensors(), 1);
  auto ep = build_episode(synchronize(events, script.duration_frames), script, kCfg,
                          kMap, "ep_bad");
  auto dir = temp_dir("badline");
  write_episode_dir(ep, dir);
  std::ofstream(dir / "jq_pressure.json", std::ios::app) << "{not json\n";
  CHECK_THROWS_WITH(read_episode_dir(dir),
                    Catch::Matchers::ContainsSubstring("jq_pressure.json") &&
                        Catch::Matchers::ContainsSubstring("line"));
}

TEST_CASE("missing files and bad magic raise IO/parse errors") {
  auto dir = temp_dir("missing");
  CHECK_THROWS_AS(read_episode_dir(dir), IoError);
  std::ofstream(dir / "jq_pressure.json") << "";
  std::ofstream(dir / "rokoko_hands.json") << "";
  std::ofstream(dir / "vive_poses.json") << "";
  std::ofstream(dir / "chest.frames") << "NOTMAGIC" << std::string(12, '\0');
  CHECK_THROWS_AS(read_episode_dir(dir), ParseError);
}

TEST_CASE("sensor config files round trip and validate") {
  auto dir = temp_dir("sensors");
  write_sensors(default_sensors(), dir / "sensors.json");
  auto loaded = load_sensors(dir / "sensors.json");
  REQUIRE(loaded.size() == default_sensors().size());
  CHECK(loaded[3].name == "glove");
  CHECK(loaded[3].rate == 100.0);

  std::ofstream(dir / "bad.json") << R"([{"name":"x","rate":-1}])";
  CHECK_THROWS_AS(load_sensors(dir / "bad.json"), Error);
}
