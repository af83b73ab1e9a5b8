#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "touchbench/capture.hpp"
#include "touchbench/core.hpp"
#include "touchbench/model.hpp"
#include "touchbench/store.hpp"
#include "touchbench/synthgen.hpp"
#include "touchbench/train.hpp"

// Shared plumbing for the command-line tool: the line-oriented configuration
// format, run manifests with artifact hashes, seed resolution, and the data
// loading / split derivation used by train and eval.

namespace tb::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

class BadConfig : public Error {
 public:
  explicit BadConfig(const std::string& msg) : Error(msg) {}
};

class MissingInput : public Error {
 public:
  explicit MissingInput(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Configuration files: `[section]` headers and `key = value` lines; `#`
// comments; a mandatory top-level `schema_version` key before any section.

struct Config {
  std::map<std::string, std::map<std::string, std::string>> sections;
  int schema_version = 0;

  static Config parse(const std::string& text, const std::string& source) {
    Config cfg;
    std::string section;  // "" = top level
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto where = source + ":" + std::to_string(lineno);
      if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3)
          throw BadConfig("bad section header at " + where);
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw BadConfig("expected 'key = value' at " + where);
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw BadConfig("empty key at " + where);
      if (cfg.sections[section].count(key))
        throw BadConfig("duplicate key '" + (section.empty() ? key : section + "." + key) +
                        "' at " + where);
      cfg.sections[section][key] = value;
    }
    auto top = cfg.sections.find("");
    if (top == cfg.sections.end() || !top->second.count("schema_version"))
      throw BadConfig(source + ": missing required key 'schema_version'");
    cfg.schema_version = std::stoi(top->second.at("schema_version"));
    if (cfg.schema_version != kSchemaVersion)
      throw BadConfig(source + ": unsupported schema_version " +
                      std::to_string(cfg.schema_version));
    return cfg;
  }

  static Config parse_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw MissingInput("config file not found: " + file.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), file.string());
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    return s != sections.end() && s->second.count(key);
  }

  std::string get(const std::string& section, const std::string& key) const {
    if (!has(section, key))
      throw BadConfig("missing config key '" + section + "." + key + "'");
    return sections.at(section).at(key);
  }

  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& def) const {
    return has(section, key) ? sections.at(section).at(key) : def;
  }

  template <class T>
  T get_num(const std::string& section, const std::string& key, T def) const {
    if (!has(section, key)) return def;
    const std::string& v = sections.at(section).at(key);
    std::istringstream in(v);
    T out;
    in >> out;
    if (in.fail())
      throw BadConfig("config key '" + section + "." + key + "': bad number '" + v + "'");
    return out;
  }

  bool get_bool(const std::string& section, const std::string& key, bool def) const {
    if (!has(section, key)) return def;
    const std::string& v = sections.at(section).at(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw BadConfig("config key '" + section + "." + key + "': bad boolean '" + v + "'");
  }

  /// Schema enforcement: every present key of the section must be listed.
  void check_keys(const std::string& section,
                  const std::vector<std::string>& known) const {
    auto s = sections.find(section);
    if (s == sections.end()) return;
    for (const auto& [k, v] : s->second)
      if (std::find(known.begin(), known.end(), k) == known.end())
        throw BadConfig("unknown config key '" + section + "." + k + "'");
  }
};

// ---------------------------------------------------------------------------
// Typed section readers; defaults come from the structs themselves.

inline synth::GenConfig gen_config_from(const Config& cfg) {
  cfg.check_keys("gen", {"image_size", "patch_size", "min_frames", "max_frames",
                         "occlusion", "render_noise"});
  synth::GenConfig g;
  g.image_size = cfg.get_num("gen", "image_size", g.image_size);
  g.patch_size = cfg.get_num("gen", "patch_size", g.patch_size);
  g.min_frames = cfg.get_num("gen", "min_frames", g.min_frames);
  g.max_frames = cfg.get_num("gen", "max_frames", g.max_frames);
  g.occlusion = cfg.get_bool("gen", "occlusion", g.occlusion);
  g.render_noise = cfg.get_num("gen", "render_noise", g.render_noise);
  g.validate();
  return g;
}

inline tactile::PreprocessConfig preprocess_config_from(const Config& cfg) {
  cfg.check_keys("preprocess",
                 {"baseline_threshold", "eps", "first_frame_contact_free",
                  "broken_columns_left", "broken_columns_right"});
  tactile::PreprocessConfig p;
  p.baseline_threshold = cfg.get_num("preprocess", "baseline_threshold",
                                     p.baseline_threshold);
  p.eps = cfg.get_num("preprocess", "eps", p.eps);
  if (cfg.has("preprocess", "first_frame_contact_free"))
    p.first_frame_contact_free =
        cfg.get_bool("preprocess", "first_frame_contact_free", false);
  auto cols = [&](const std::string& key) {
    std::vector<int> out;
    std::istringstream in(cfg.get_or("preprocess", key, ""));
    std::string tok;
    while (std::getline(in, tok, ','))
      if (!tok.empty()) out.push_back(std::stoi(tok));
    return out;
  };
  p.broken_columns[0] = cols("broken_columns_left");
  p.broken_columns[1] = cols("broken_columns_right");
  return p;
}

inline model::ModelConfig model_config_from(const Config& cfg) {
  cfg.check_keys("model", {"D", "heads", "T", "image_size", "patch",
                           "cross_view_layers", "temporal_layers", "pose_layers",
                           "ff_mult", "decoder_hidden", "featurizer_seed",
                           "init_seed"});
  model::ModelConfig m;
  m.D = cfg.get_num("model", "D", m.D);
  m.heads = cfg.get_num("model", "heads", m.heads);
  m.T = cfg.get_num("model", "T", m.T);
  m.image_size = cfg.get_num("model", "image_size", m.image_size);
  m.patch = cfg.get_num("model", "patch", m.patch);
  m.cross_view_layers = cfg.get_num("model", "cross_view_layers", m.cross_view_layers);
  m.temporal_layers = cfg.get_num("model", "temporal_layers", m.temporal_layers);
  m.pose_layers = cfg.get_num("model", "pose_layers", m.pose_layers);
  m.ff_mult = cfg.get_num("model", "ff_mult", m.ff_mult);
  m.decoder_hidden = cfg.get_num("model", "decoder_hidden", m.decoder_hidden);
  m.featurizer_seed = cfg.get_num("model", "featurizer_seed", m.featurizer_seed);
  m.init_seed = cfg.get_num("model", "init_seed", m.init_seed);
  m.validate();
  return m;
}

inline train::TrainConfig train_config_from(const Config& cfg) {
  cfg.check_keys("train", {"lr", "weight_decay", "beta1", "beta2", "eps", "epochs",
                           "warmup_epochs", "min_lr", "view_dropout_p",
                           "glove_aug_prob", "batch_size", "grad_accum",
                           "clip_stride", "seed"});
  train::TrainConfig t;
  t.lr = cfg.get_num("train", "lr", t.lr);
  t.weight_decay = cfg.get_num("train", "weight_decay", t.weight_decay);
  t.beta1 = cfg.get_num("train", "beta1", t.beta1);
  t.beta2 = cfg.get_num("train", "beta2", t.beta2);
  t.eps = cfg.get_num("train", "eps", t.eps);
  t.epochs = cfg.get_num("train", "epochs", t.epochs);
  t.warmup_epochs = cfg.get_num("train", "warmup_epochs", t.warmup_epochs);
  t.min_lr = cfg.get_num("train", "min_lr", t.min_lr);
  t.view_dropout_p = cfg.get_num("train", "view_dropout_p", t.view_dropout_p);
  t.glove_aug_prob = cfg.get_num("train", "glove_aug_prob", t.glove_aug_prob);
  t.batch_size = cfg.get_num("train", "batch_size", t.batch_size);
  t.grad_accum = cfg.get_num("train", "grad_accum", t.grad_accum);
  t.clip_stride = cfg.get_num("train", "clip_stride", t.clip_stride);
  t.seed = cfg.get_num("train", "seed", t.seed);
  t.validate();
  return t;
}

inline train::LossConfig loss_config_from(const Config& cfg) {
  cfg.check_keys("loss", {"lambda_mse", "lambda_l1", "lambda_tv",
                          "contact_threshold", "contact_weight"});
  train::LossConfig l;
  l.l_mse = cfg.get_num("loss", "lambda_mse", l.l_mse);
  l.l_l1 = cfg.get_num("loss", "lambda_l1", l.l_l1);
  l.l_tv = cfg.get_num("loss", "lambda_tv", l.l_tv);
  l.tau_w = cfg.get_num("loss", "contact_threshold", l.tau_w);
  l.contact_weight = cfg.get_num("loss", "contact_weight", l.contact_weight);
  l.validate();
  return l;
}

struct DataConfig {
  std::filesystem::path root;
  double val_ratio = 0.15;
  double test_ratio = 0.15;
  double train_fraction = 1.0;  // data-scaling knob: fraction of train episodes
  std::set<std::string> holdout_objects = {"obj0", "obj1", "obj2"};
};

inline DataConfig data_config_from(const Config& cfg) {
  cfg.check_keys("data", {"root", "val_ratio", "test_ratio", "train_fraction",
                          "holdout_objects"});
  DataConfig d;
  d.root = cfg.get("data", "root");
  d.val_ratio = cfg.get_num("data", "val_ratio", d.val_ratio);
  d.test_ratio = cfg.get_num("data", "test_ratio", d.test_ratio);
  d.train_fraction = cfg.get_num("data", "train_fraction", d.train_fraction);
  if (!(d.train_fraction > 0.0 && d.train_fraction <= 1.0))
    throw BadConfig("config key 'data.train_fraction': must be in (0, 1]");
  if (cfg.has("data", "holdout_objects")) {
    d.holdout_objects.clear();
    std::istringstream in(cfg.get("data", "holdout_objects"));
    std::string tok;
    while (std::getline(in, tok, ','))
      if (!tok.empty()) d.holdout_objects.insert(tok);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Run manifests

namespace detail {

inline std::uint64_t fnv1a(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hash_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingInput("cannot hash missing file: " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string s = buf.str();
  char out[20];
  std::snprintf(out, sizeof out, "%016llx",
                static_cast<unsigned long long>(fnv1a(s.data(), s.size())));
  return out;
}

}  // namespace detail

/// Written atomically next to every subcommand's outputs; the resolved
/// configuration plus artifact hashes make the run replayable.
struct RunManifest {
  std::string subcommand;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // path -> fnv1a-64 hex
  std::map<std::string, std::string> outputs;

  void add_input(const std::filesystem::path& p) {
    inputs[p.string()] = detail::hash_file(p);
  }
  void add_output(const std::filesystem::path& p) {
    outputs[p.string()] = detail::hash_file(p);
  }

  nlohmann::json to_json() const {
    return {{"subcommand", subcommand}, {"config", config},   {"seed", seed},
            {"inputs", inputs},         {"outputs", outputs}, {"version", kVersion}};
  }

  void write(const std::filesystem::path& file) const {
    const auto tmp = file.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw IoError("cannot write manifest: " + file.string());
      out << to_json().dump(2) << "\n";
    }
    std::filesystem::rename(tmp, file);
  }
};

/// Explicit flag first, then TOUCHBENCH_SEED, then 0.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("TOUCHBENCH_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw BadConfig("TOUCHBENCH_SEED is not a number: " + std::string(env));
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Corpus loading and split derivation for train / eval

struct Corpus {
  std::vector<store::LoadedEpisode> episodes;
  SplitSpec splits;

  std::vector<const Episode*> split(const std::string& name) const {
    const std::set<std::string>* ids = nullptr;
    if (name == "train") ids = &splits.train;
    else if (name == "val") ids = &splits.val;
    else if (name == "test_seen") ids = &splits.test_seen;
    else if (name == "test_unseen") ids = &splits.test_unseen;
    else throw BadConfig("unknown split name '" + name + "'");
    std::vector<const Episode*> out;
    for (const auto& le : episodes)
      if (ids->count(le.episode.meta.episode_id)) out.push_back(&le.episode);
    return out;
  }
};

inline std::vector<std::filesystem::path> list_containers(
    const std::filesystem::path& root) {
  if (!std::filesystem::exists(root))
    throw MissingInput("data root not found: " + root.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".tbc")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

/// Loads every container under root and derives object-level splits. The
/// train split is then optionally thinned to `train_fraction` by a seeded
/// shuffle over sorted ids (the data-scaling protocol).
inline Corpus load_corpus(const DataConfig& dc, std::uint64_t seed) {
  Corpus corpus;
  const auto files = list_containers(dc.root);
  if (files.empty())
    throw MissingInput("no .tbc containers under " + dc.root.string());
  std::vector<EpisodeMeta> metas;
  for (const auto& f : files) {
    corpus.episodes.push_back(store::load(f));
    metas.push_back(corpus.episodes.back().episode.meta);
  }
  corpus.splits = make_splits(metas, {1.0 - dc.val_ratio - dc.test_ratio,
                                      dc.val_ratio, dc.test_ratio},
                              dc.holdout_objects, seed);
  if (dc.train_fraction < 1.0) {
    std::vector<std::string> ids(corpus.splits.train.begin(),
                                 corpus.splits.train.end());
    std::sort(ids.begin(), ids.end());
    Rng rng(mix_seed(seed, "train_fraction"));
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(ids.size() * dc.train_fraction + 0.5));
    corpus.splits.train = std::set<std::string>(ids.begin(), ids.begin() + keep);
  }
  return corpus;
}

inline model::ViewSet parse_views(const std::string& spec) {
  model::ViewSet vs;
  std::istringstream in(spec);
  std::string tok;
  while (std::getline(in, tok, ','))
    if (!tok.empty()) vs.views.insert(parse_view(tok));
  vs.validate();
  return vs;
}

}  // namespace tb::cli
