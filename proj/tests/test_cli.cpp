#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "touchbench/cli.hpp"

using namespace tb;
using namespace tb::cli;
namespace fs = std::filesystem;

TEST_CASE("config parser handles sections, comments and whitespace") {
  auto cfg = Config::parse(
      "# a comment\n"
      "schema_version = 1\n"
      "\n"
      "[train]\n"
      "lr = 5e-5   # trailing comment\n"
      "epochs=25\n"
      "[data]\n"
      "root = /tmp/data\n",
      "test.ini");
  CHECK(cfg.schema_version == 1);
  CHECK(cfg.get("train", "lr") == "5e-5");
  CHECK(cfg.get("train", "epochs") == "25");
  CHECK(cfg.get("data", "root") == "/tmp/data");
  CHECK(cfg.get_num<double>("train", "lr", 0.0) == 5e-5);
  CHECK(cfg.get_num<int>("train", "epochs", 0) == 25);
  CHECK(cfg.get_num<int>("train", "missing", 7) == 7);
  CHECK(cfg.get_or("train", "missing", "d") == "d");
  CHECK_FALSE(cfg.has("train", "missing"));
}

TEST_CASE("config parser rejects malformed input with locations") {
  CHECK_THROWS_WITH(Config::parse("schema_version = 1\nnot a kv line\n", "f.ini"),
                    Catch::Matchers::ContainsSubstring("f.ini:2"));
  CHECK_THROWS_WITH(Config::parse("schema_version = 1\n[broken\n", "f.ini"),
                    Catch::Matchers::ContainsSubstring("f.ini:2"));
  CHECK_THROWS_WITH(
      Config::parse("schema_version = 1\n[a]\nx = 1\nx = 2\n", "f.ini"),
      Catch::Matchers::ContainsSubstring("duplicate key 'a.x'"));
  CHECK_THROWS_WITH(Config::parse("x = 1\n", "f.ini"),
                    Catch::Matchers::ContainsSubstring("schema_version"));
  CHECK_THROWS_WITH(Config::parse("schema_version = 9\n", "f.ini"),
                    Catch::Matchers::ContainsSubstring("unsupported schema_version"));
  CHECK_THROWS_AS(Config::parse_file("/nonexistent/cfg.ini"), MissingInput);
}

TEST_CASE("typed section readers enforce the key schema") {
  auto cfg = Config::parse(
      "schema_version = 1\n[model]\nD = 16\nheads = 4\n[train]\nlr = 1e-3\n"
      "[loss]\nlambda_tv = 0.02\n[data]\nroot = /tmp\ntrain_fraction = 0.5\n",
      "t.ini");
  auto mc = model_config_from(cfg);
  CHECK(mc.D == 16);
  CHECK(mc.heads == 4);
  CHECK(mc.T == 8);  // default survives
  auto tc = train_config_from(cfg);
  CHECK(tc.lr == 1e-3);
  CHECK(tc.epochs == 25);
  auto lc = loss_config_from(cfg);
  CHECK(lc.l_tv == 0.02);
  CHECK(lc.l_mse == 1.0);
  auto dc = data_config_from(cfg);
  CHECK(dc.train_fraction == 0.5);

  auto bad = Config::parse("schema_version = 1\n[model]\ntypo_key = 3\n", "t.ini");
  CHECK_THROWS_WITH(model_config_from(bad),
                    Catch::Matchers::ContainsSubstring("model.typo_key"));
  auto badnum = Config::parse("schema_version = 1\n[train]\nlr = abc\n", "t.ini");
  CHECK_THROWS_WITH(train_config_from(badnum),
                    Catch::Matchers::ContainsSubstring("train.lr"));
}

TEST_CASE("seed resolution prefers the flag, then the environment") {
  unsetenv("TOUCHBENCH_SEED");
  CHECK(resolve_seed(std::nullopt) == 0);
  CHECK(resolve_seed(42u) == 42);
  setenv("TOUCHBENCH_SEED", "17", 1);
  CHECK(resolve_seed(std::nullopt) == 17);
  CHECK(resolve_seed(42u) == 42);
  setenv("TOUCHBENCH_SEED", "junk", 1);
  CHECK_THROWS_AS(resolve_seed(std::nullopt), BadConfig);
  unsetenv("TOUCHBENCH_SEED");
}

TEST_CASE("run manifest hashes artifacts and writes atomically") {
  auto dir = fs::temp_directory_path() / "tb_manifest";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "artifact.bin", std::ios::binary);
    f << "payload";
  }
  RunManifest m;
  m.subcommand = "gen";
  m.seed = 5;
  m.config = {{"episodes", 3}};
  m.add_output(dir / "artifact.bin");
  m.write(dir / "run_manifest.json");

  std::ifstream in(dir / "run_manifest.json");
  nlohmann::json j;
  in >> j;
  CHECK(j.at("subcommand") == "gen");
  CHECK(j.at("seed") == 5);
  CHECK(j.at("version") == std::string(kVersion));
  const std::string h = j.at("outputs").at((dir / "artifact.bin").string());
  CHECK(h.size() == 16);

  // same bytes, same hash; different bytes, different hash
  RunManifest m2;
  m2.add_output(dir / "artifact.bin");
  CHECK(m2.outputs.begin()->second == h);
  {
    std::ofstream f(dir / "artifact.bin", std::ios::binary);
    f << "payload2";
  }
  RunManifest m3;
  m3.add_output(dir / "artifact.bin");
  CHECK(m3.outputs.begin()->second != h);

  RunManifest m4;
  CHECK_THROWS_AS(m4.add_input(dir / "nope.bin"), MissingInput);
}

TEST_CASE("view specs parse to canonical view sets") {
  CHECK(parse_views("ego").label() == "ego");
  CHECK(parse_views("ego,wl,wr").label() == "ego,wl,wr");
  CHECK(parse_views("wr,ego").label() == "ego,wr");  // canonical order
  CHECK_THROWS_AS(parse_views("wl,wr"), Error);      // ego required
  CHECK_THROWS_AS(parse_views("ego,zzz"), ParseError);
}

TEST_CASE("corpus loading splits by object and honors train_fraction") {
  auto dir = fs::temp_directory_path() / "tb_cli_corpus";
  fs::remove_all(dir);
  fs::create_directories(dir);

  // build a small corpus of containers via the library pipeline
  synth::GenConfig gc;
  gc.image_size = 28;
  gc.patch_size = 14;
  gc.min_frames = 10;
  gc.max_frames = 12;
  const auto mapping = tactile::default_mapping();
  const auto sensors = capture::ideal_sensors();
  for (int i = 0; i < 10; ++i) {
    const std::string id = "ep" + std::to_string(i);
    auto script = synth::generate_script(100 + i, gc);
    auto events = capture::simulate_streams(script, sensors, 100 + i);
    auto log = capture::synchronize(events, script.duration_frames);
    auto ep = capture::build_episode(log, script, gc, mapping, id);
    auto epdir = dir / id;
    capture::write_episode_dir(ep, epdir);
    store::convert(epdir, mapping, {}, dir / (id + ".tbc"));
  }

  DataConfig dc;
  dc.root = dir;
  dc.val_ratio = 0.2;
  dc.test_ratio = 0.2;
  dc.holdout_objects.clear();
  // pick a holdout object that actually occurs
  {
    auto le = store::load(dir / "ep0.tbc");
    dc.holdout_objects = {le.episode.meta.object_id};
  }
  auto corpus = load_corpus(dc, 7);
  CHECK(corpus.episodes.size() == 10);
  const auto n_train = corpus.split("train").size();
  const auto total = n_train + corpus.split("val").size() +
                     corpus.split("test_seen").size() +
                     corpus.split("test_unseen").size();
  CHECK(total == 10);
  CHECK(corpus.split("test_unseen").size() >= 1);
  CHECK_THROWS_AS(corpus.split("bogus"), BadConfig);

  // thinning the train split keeps roughly the requested fraction
  dc.train_fraction = 0.5;
  auto half = load_corpus(dc, 7);
  CHECK(half.split("train").size() ==
        std::max<std::size_t>(1, static_cast<std::size_t>(n_train * 0.5 + 0.5)));
  // unaffected splits identical
  CHECK(half.splits.val == corpus.splits.val);
  CHECK(half.splits.test_unseen == corpus.splits.test_unseen);

  DataConfig missing;
  missing.root = dir / "nope";
  CHECK_THROWS_AS(load_corpus(missing, 7), MissingInput);
}
