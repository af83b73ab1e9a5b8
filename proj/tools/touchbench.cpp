#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "touchbench/cli.hpp"
#include "touchbench/metrics.hpp"

namespace fs = std::filesystem;
using namespace tb;

namespace {

cli::Config load_config_or_default(const std::string& file) {
  if (file.empty())
    return cli::Config::parse("schema_version = 1\n", "<builtin>");
  return cli::Config::parse_file(file);
}

int cmd_gen(const std::string& config_file, std::optional<std::uint64_t> seed_flag,
            int episodes, const std::string& out_dir) {
  auto cfg = load_config_or_default(config_file);
  auto gc = cli::gen_config_from(cfg);
  const std::uint64_t seed = cli::resolve_seed(seed_flag);
  fs::create_directories(out_dir);

  cli::RunManifest man;
  man.subcommand = "gen";
  man.seed = seed;
  man.config = {{"episodes", episodes},
                {"image_size", gc.image_size},
                {"patch_size", gc.patch_size},
                {"min_frames", gc.min_frames},
                {"max_frames", gc.max_frames},
                {"occlusion", gc.occlusion},
                {"render_noise", gc.render_noise}};
  for (int i = 0; i < episodes; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "ep_%04d", i);
    auto script = synth::generate_script(
        mix_seed(seed, std::string("episode/") + name), gc);
    const fs::path file = fs::path(out_dir) / (std::string(name) + ".json");
    std::ofstream out(file, std::ios::trunc);
    out << synth::script_to_json(script).dump(2) << "\n";
    out.close();
    man.add_output(file);
  }
  man.write(fs::path(out_dir) / "run_manifest.json");
  std::cout << "generated " << episodes << " scripts in " << out_dir << "\n";
  return 0;
}

int cmd_capture_sim(const std::string& in_dir, const std::string& out_dir,
                    const std::string& sensors_file, const std::string& config_file,
                    std::optional<std::uint64_t> seed_flag) {
  auto cfg = load_config_or_default(config_file);
  auto gc = cli::gen_config_from(cfg);
  const std::uint64_t seed = cli::resolve_seed(seed_flag);
  auto sensors = sensors_file.empty() ? capture::default_sensors()
                                      : capture::load_sensors(sensors_file);
  if (!fs::exists(in_dir))
    throw cli::MissingInput("script directory not found: " + in_dir);

  std::vector<fs::path> scripts;
  for (const auto& e : fs::directory_iterator(in_dir))
    if (e.is_regular_file() && e.path().extension() == ".json" &&
        e.path().filename() != "run_manifest.json")
      scripts.push_back(e.path());
  std::sort(scripts.begin(), scripts.end());
  if (scripts.empty()) throw cli::MissingInput("no scripts in " + in_dir);

  const auto mapping = tactile::default_mapping();
  cli::RunManifest man;
  man.subcommand = "capture-sim";
  man.seed = seed;
  man.config = {{"sensors", sensors_file.empty() ? "<default>" : sensors_file}};
  fs::create_directories(out_dir);
  for (const auto& sf : scripts) {
    man.add_input(sf);
    std::ifstream in(sf);
    nlohmann::json j;
    in >> j;
    auto script = synth::script_from_json(j);
    const std::string id = sf.stem().string();
    auto events = capture::simulate_streams(script, sensors, mix_seed(seed, id));
    auto log = capture::synchronize(events, script.duration_frames);
    auto ep = capture::build_episode(log, script, gc, mapping, id);
    capture::write_episode_dir(ep, fs::path(out_dir) / id);
  }
  man.write(fs::path(out_dir) / "run_manifest.json");
  std::cout << "captured " << scripts.size() << " episodes into " << out_dir << "\n";
  return 0;
}

int cmd_preprocess(const std::string& in_dir, const std::string& out_file,
                   const std::string& config_file, const std::string& mapping_file) {
  auto cfg = load_config_or_default(config_file);
  auto pc = cli::preprocess_config_from(cfg);
  auto mapping = mapping_file.empty() ? tactile::default_mapping()
                                      : tactile::load_mapping(mapping_file);
  auto ep = capture::read_episode_dir(in_dir);
  std::vector<RawTactileFrame> raw;
  for (const auto& f : ep.frames) raw.push_back(f.raw_tactile);
  if (raw.empty()) throw cli::MissingInput("no frames in " + in_dir);
  auto ar = tactile::preprocess_episode(raw, mapping, pc);
  store::save_archive(ar, out_file);

  cli::RunManifest man;
  man.subcommand = "preprocess";
  man.config = {{"baseline_threshold", pc.baseline_threshold}, {"eps", pc.eps}};
  man.inputs[in_dir] = "";
  man.add_output(out_file);
  man.write(out_file + ".manifest.json");
  std::cout << "preprocessed " << ar.frames.size() << " frames -> " << out_file << "\n";
  return 0;
}

int cmd_convert(const std::string& root, int workers, bool skip_existing,
                const std::string& bad_list_file, const std::string& reason,
                const std::string& config_file, const std::string& mapping_file) {
  auto cfg = load_config_or_default(config_file);
  auto pc = cli::preprocess_config_from(cfg);
  auto mapping = mapping_file.empty() ? tactile::default_mapping()
                                      : tactile::load_mapping(mapping_file);
  std::optional<std::set<std::string>> bad_list;
  if (!bad_list_file.empty()) {
    std::ifstream in(bad_list_file);
    if (!in) throw cli::MissingInput("bad-list file not found: " + bad_list_file);
    bad_list.emplace();
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) bad_list->insert(line);
  }
  auto report = store::batch_convert(root, mapping, pc, workers, skip_existing,
                                     bad_list);
  cli::RunManifest man;
  man.subcommand = "convert";
  man.config = {{"workers", workers},
                {"skip_existing", skip_existing},
                {"bad_list", bad_list_file},
                {"reason", reason}};
  for (const auto& f : cli::list_containers(root)) man.add_output(f);
  man.write(fs::path(root) / "run_manifest.json");
  std::cout << "converted " << report.converted << ", skipped " << report.skipped
            << ", failed " << report.failed << "\n";
  for (const auto& [id, why] : report.failures)
    std::cout << "  failed " << id << ": " << why << "\n";
  return report.failed == 0 ? 0 : 1;
}

int cmd_train(const std::string& config_file, std::optional<std::uint64_t> seed_flag,
              const std::string& out_dir, const std::string& resume) {
  auto cfg = cli::Config::parse_file(config_file);
  auto mc = cli::model_config_from(cfg);
  auto tc = cli::train_config_from(cfg);
  auto lc = cli::loss_config_from(cfg);
  auto dc = cli::data_config_from(cfg);
  const std::uint64_t seed = cli::resolve_seed(seed_flag);
  if (seed_flag || std::getenv("TOUCHBENCH_SEED")) {
    tc.seed = seed;
    if (!cfg.has("model", "init_seed")) mc.init_seed = mix_seed(seed, "init");
  }

  auto corpus = cli::load_corpus(dc, tc.seed);
  auto train_eps = corpus.split("train");
  auto val_eps = corpus.split("val");
  std::cout << "training on " << train_eps.size() << " episodes, validating on "
            << val_eps.size() << "\n";

  auto params = model::init_params<double>(mc);
  std::optional<fs::path> resume_from;
  if (!resume.empty()) resume_from = fs::path(resume);
  auto result = train::train(train_eps, val_eps, params, tc, lc, out_dir,
                             resume_from);

  cli::RunManifest man;
  man.subcommand = "train";
  man.seed = tc.seed;
  man.config = {{"model", mc.to_json()}, {"train", tc.to_json()}};
  man.add_input(config_file);
  for (const char* f : {"best.tbc", "last.tbc", "log.json"})
    if (fs::exists(fs::path(out_dir) / f)) man.add_output(fs::path(out_dir) / f);
  man.write(fs::path(out_dir) / "run_manifest.json");

  for (const auto& e : result.log)
    std::printf("epoch %d  loss %.6f (mse %.6f l1 %.6f tv %.6f)  lr %.3g  val V.IoU %.4f\n",
                e.epoch, e.loss_total, e.loss_mse, e.loss_l1, e.loss_tv, e.lr,
                e.val.volumetric_iou);
  std::cout << "best epoch " << result.best_epoch << " with validation V.IoU "
            << result.best_val_viou << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& views_spec,
             const std::string& split, bool lightweight,
             const std::string& config_file, const std::string& out_dir) {
  auto cfg = cli::Config::parse_file(config_file);
  auto dc = cli::data_config_from(cfg);
  auto tc = cli::train_config_from(cfg);
  auto views = cli::parse_views(views_spec);
  auto params = model::load_checkpoint<double>(checkpoint);

  auto corpus = cli::load_corpus(dc, tc.seed);
  auto eps = corpus.split(split);
  if (eps.empty()) throw cli::MissingInput("split '" + split + "' is empty");

  metrics::EvalConfig ec;
  ec.lightweight = lightweight;
  auto reports = metrics::evaluate(params, eps, views, ec);

  nlohmann::json summary;
  for (const auto& [name, r] : reports) summary["reports"][name] = r.to_json();
  summary["split"] = split;
  summary["checkpoint"] = checkpoint;

  std::string label = views.label();
  for (auto& c : label)
    if (c == ',') c = '-';
  fs::create_directories(out_dir);
  const fs::path out_file = fs::path(out_dir) / ("eval_" + split + "_" + label + ".json");
  {
    std::ofstream out(out_file, std::ios::trunc);
    out << summary.dump(2) << "\n";
  }

  cli::RunManifest man;
  man.subcommand = "eval";
  man.config = {{"views", views.label()}, {"split", split}, {"lightweight", lightweight}};
  man.add_input(checkpoint);
  man.add_output(out_file);
  man.write(out_file.string() + ".manifest.json");

  for (const auto& [name, r] : reports)
    std::printf("%-12s  T.Acc %.4f  C.IoU %.4f  V.IoU %.4f  MAE %.4f  (%lld frames)\n",
                name.c_str(), r.temporal_accuracy, r.contact_iou, r.volumetric_iou,
                r.mae, static_cast<long long>(r.frames));
  std::cout << "wrote " << out_file << "\n";
  return 0;
}

metrics::MetricsReport load_overall(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw cli::MissingInput("report file not found: " + file);
  nlohmann::json j;
  in >> j;
  return metrics::MetricsReport::from_json(j.at("reports").at("overall"));
}

int cmd_report(const std::string& baseline_file,
               const std::vector<std::string>& variant_files) {
  auto baseline = load_overall(baseline_file);
  std::vector<metrics::MetricsReport> variants;
  for (const auto& f : variant_files) variants.push_back(load_overall(f));
  std::cout << metrics::report_table(baseline, variants);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  using T = ad::Tensor<double>;
  struct Case {
    std::string name;
    std::function<T(std::vector<T>&)> fn;
    std::vector<ad::Shape> shapes;
  };
  const std::vector<Case> cases = {
      {"add", [](auto& in) { return ad::sum_all(ad::add(in[0], in[1])); },
       {{3, 4}, {3, 4}}},
      {"mul", [](auto& in) { return ad::sum_all(ad::mul(in[0], in[1])); },
       {{3, 4}, {3, 4}}},
      {"div", [](auto& in) { return ad::sum_all(ad::div(in[0],
           ad::add_scalar(ad::mul(in[1], in[1]), 1.0))); }, {{3, 4}, {3, 4}}},
      {"matmul", [](auto& in) { return ad::sum_all(ad::matmul(in[0], in[1])); },
       {{3, 4}, {4, 5}}},
      {"sigmoid", [](auto& in) { return ad::sum_all(ad::sigmoid(in[0])); }, {{4, 4}}},
      {"gelu", [](auto& in) { return ad::sum_all(ad::gelu(in[0])); }, {{4, 4}}},
      {"softmax", [](auto& in) {
           return ad::sum_all(ad::mul(ad::softmax(in[0], 1), in[1])); },
       {{3, 5}, {3, 5}}},
      {"layernorm", [](auto& in) {
           return ad::sum_all(ad::mul(ad::layernorm(in[0]), in[1])); },
       {{3, 6}, {3, 6}}},
      {"slice+concat", [](auto& in) {
           auto parts = std::vector<T>{ad::slice(in[0], 1, 2, 2),
                                       ad::slice(in[0], 1, 0, 2)};
           return ad::sum_all(ad::mul(ad::concat(parts, 1), in[1])); },
       {{3, 4}, {3, 4}}},
      {"transpose", [](auto& in) {
           return ad::sum_all(ad::mul(ad::transpose(in[0]), in[1])); },
       {{3, 4}, {4, 3}}},
      {"mean+sum", [](auto& in) {
           return ad::add(ad::sum_all(ad::mean(in[0], 0)), ad::mean_all(in[0])); },
       {{4, 3}}},
      {"attention", [](auto& in) {
           return ad::sum_all(ad::scaled_dot_product_attention(in[0], in[1], in[2])); },
       {{4, 6}, {4, 6}, {4, 6}}},
  };
  const double tol = 1e-4;
  double worst = 0;
  bool ok = true;
  for (const auto& c : cases) {
    const double err = ad::grad_check<double>(c.fn, c.shapes, seed);
    worst = std::max(worst, err);
    const bool pass = err < tol;
    ok = ok && pass;
    std::printf("%-14s max rel err %.3e  %s\n", c.name.c_str(), err,
                pass ? "ok" : "FAIL");
  }
  std::printf("overall: %s (worst %.3e, tolerance %.0e)\n", ok ? "pass" : "FAIL",
              worst, tol);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale multi-view vision-to-touch benchmark toolkit"};
  app.require_subcommand(1);

  std::string config_file, out_dir, in_dir, sensors_file, mapping_file;
  std::string checkpoint, views_spec = "ego,wl,wr", split = "val", resume;
  std::string bad_list, reason, baseline_file;
  std::vector<std::string> variant_files;
  std::optional<std::uint64_t> seed_flag;
  std::uint64_t seed_value = 0;
  int episodes = 8, workers = 1;
  bool skip_existing = false, lightweight = false;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed_value, "random seed (fallback: TOUCHBENCH_SEED)")
        ->each([&](const std::string&) { seed_flag = seed_value; });
  };

  auto* gen = app.add_subcommand("gen", "generate scenario scripts");
  gen->add_option("--episodes", episodes, "number of episodes");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--config", config_file, "configuration file");
  add_seed(gen);

  auto* cap = app.add_subcommand("capture-sim", "simulate acquisition of scripts");
  cap->add_option("--in", in_dir, "script directory")->required();
  cap->add_option("--out", out_dir, "output directory")->required();
  cap->add_option("--sensors", sensors_file, "sensor spec JSON");
  cap->add_option("--config", config_file, "configuration file");
  add_seed(cap);

  auto* pre = app.add_subcommand("preprocess", "tactile preprocessing of one episode");
  pre->add_option("--in", in_dir, "episode directory")->required();
  std::string out_file;
  pre->add_option("--out", out_file, "output archive file")->required();
  pre->add_option("--config", config_file, "configuration file");
  pre->add_option("--mapping", mapping_file, "grid mapping JSON");

  auto* conv = app.add_subcommand("convert", "batch-convert episode directories");
  std::string root;
  conv->add_option("--root", root, "corpus root")->required();
  conv->add_option("--workers", workers, "worker threads");
  conv->add_flag("--skip-existing", skip_existing, "skip episodes with outputs");
  conv->add_option("--bad-list", bad_list, "file listing episode ids to convert");
  conv->add_option("--reason", reason, "note recorded in the run manifest");
  conv->add_option("--config", config_file, "configuration file");
  conv->add_option("--mapping", mapping_file, "grid mapping JSON");

  auto* tr = app.add_subcommand("train", "train the prediction model");
  tr->add_option("--config", config_file, "configuration file")->required();
  tr->add_option("--out", out_dir, "output directory")->required();
  tr->add_option("--resume", resume, "resume from a last.tbc checkpoint");
  add_seed(tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  ev->add_option("--checkpoint", checkpoint, "parameter file")->required();
  ev->add_option("--views", views_spec, "view subset, e.g. ego,wl,wr");
  ev->add_option("--split", split, "train | val | test_seen | test_unseen");
  ev->add_flag("--lightweight", lightweight, "one trajectory per task");
  ev->add_option("--config", config_file, "configuration file")->required();
  ev->add_option("--out", out_dir, "report output directory")->default_val(".");

  auto* rep = app.add_subcommand("report", "format reports against a baseline");
  rep->add_option("--baseline", baseline_file, "baseline eval summary")->required();
  rep->add_option("--variants", variant_files, "variant eval summaries")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of primitives");
  add_seed(gc);

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen(config_file, seed_flag, episodes, out_dir);
    if (cap->parsed())
      return cmd_capture_sim(in_dir, out_dir, sensors_file, config_file, seed_flag);
    if (pre->parsed())
      return cmd_preprocess(in_dir, out_file, config_file, mapping_file);
    if (conv->parsed())
      return cmd_convert(root, workers, skip_existing, bad_list, reason,
                         config_file, mapping_file);
    if (tr->parsed()) return cmd_train(config_file, seed_flag, out_dir, resume);
    if (ev->parsed())
      return cmd_eval(checkpoint, views_spec, split, lightweight, config_file, out_dir);
    if (rep->parsed()) return cmd_report(baseline_file, variant_files);
    if (gc->parsed()) return cmd_gradcheck(cli::resolve_seed(seed_flag));
  } catch (const CLI::RequiredError& e) {
    std::cerr << "error: missing-input: " << e.what() << "\n";
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: unknown-flag: " << e.what() << "\n";
    return 2;
  } catch (const cli::BadConfig& e) {
    std::cerr << "error: bad-config: " << e.what() << "\n";
    return 1;
  } catch (const cli::MissingInput& e) {
    std::cerr << "error: missing-input: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: parse-error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: io-error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: invalid-input: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
