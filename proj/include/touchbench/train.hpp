#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "touchbench/core.hpp"
#include "touchbench/metrics.hpp"
#include "touchbench/model.hpp"
#include "touchbench/tensor.hpp"

// Training: the weighted reconstruction loss with TV regularization, view
// dropout, glove-color augmentation, AdamW with a warmup-cosine schedule,
// and the deterministic training loop with gradient accumulation.

namespace tb::train {

struct LossConfig {
  double l_mse = 1.0;
  double l_l1 = 0.5;
  double l_tv = 0.01;
  double tau_w = 0.1;          // contact threshold on normalized gt pressure
  double contact_weight = 3.0;

  void validate() const {
    if (l_mse < 0 || l_l1 < 0 || l_tv < 0 || tau_w < 0 || contact_weight < 0)
      throw Error("LossConfig: coefficients must be nonnegative");
  }
};

struct TrainConfig {
  double lr = 5e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int epochs = 25;
  int warmup_epochs = 10;
  double min_lr = 1e-6;
  double view_dropout_p = 0.3;
  double glove_aug_prob = 0.2;
  int batch_size = 2;
  int grad_accum = 3;
  int clip_stride = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(view_dropout_p >= 0 && view_dropout_p < 1))
      throw Error("TrainConfig: dropout p must be in [0, 1)");
    if (warmup_epochs > epochs)
      throw Error("TrainConfig: warmup_epochs must not exceed epochs");
    if (epochs < 1 || batch_size < 1 || grad_accum < 1 || clip_stride < 1)
      throw Error("TrainConfig: counts must be >= 1");
    if (lr <= 0 || min_lr < 0 || min_lr > lr)
      throw Error("TrainConfig: need 0 <= min_lr <= lr, lr > 0");
  }

  nlohmann::json to_json() const {
    return {{"lr", lr},           {"weight_decay", weight_decay},
            {"beta1", beta1},     {"beta2", beta2},
            {"eps", eps},         {"epochs", epochs},
            {"warmup_epochs", warmup_epochs}, {"min_lr", min_lr},
            {"view_dropout_p", view_dropout_p},
            {"glove_aug_prob", glove_aug_prob},
            {"batch_size", batch_size}, {"grad_accum", grad_accum},
            {"clip_stride", clip_stride}, {"seed", seed}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.at("lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.warmup_epochs = j.at("warmup_epochs").get<int>();
    c.min_lr = j.at("min_lr").get<double>();
    c.view_dropout_p = j.at("view_dropout_p").get<double>();
    c.glove_aug_prob = j.at("glove_aug_prob").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.grad_accum = j.at("grad_accum").get<int>();
    c.clip_stride = j.at("clip_stride").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  }
};

struct LossParts {
  double total = 0, mse = 0, l1 = 0, tv = 0;
};

/// Eq.-style loss: weighted-mean MSE + L1 over valid cells (weight
/// contact_weight where gt > tau_w, 1 elsewhere; normalized by the weight
/// sum) plus mean absolute difference between valid adjacent prediction
/// cells. Returns a scalar graph node; components reported via `parts`.
template <class S>
ad::Tensor<S> loss(const ad::Tensor<S>& pred,
                   const std::vector<const CanonicalTactileGrid*>& gt,
                   const LossConfig& cfg, LossParts* parts = nullptr) {
  cfg.validate();
  const ad::Shape& sh = pred.shape();
  if (sh.size() != 3 || sh[1] != 2 || sh[2] != kGridCells ||
      sh[0] != static_cast<int>(gt.size()))
    throw ShapeError("loss: prediction must be (" + std::to_string(gt.size()) +
                     ", 2, 441), got " + ad::shape_str(sh));
  const int T = sh[0];

  std::vector<S> g(pred.size(), S(0)), w(pred.size(), S(0));
  double W = 0;
  for (int t = 0; t < T; ++t)
    for (int h = 0; h < 2; ++h) {
      const HandGrid& hg = h == 0 ? gt[t]->left : gt[t]->right;
      for (int c = 0; c < kGridCells; ++c) {
        if (!hg.valid[c]) continue;
        const std::size_t i = (t * 2 + h) * std::size_t(kGridCells) + c;
        g[i] = static_cast<S>(hg.v[c]);
        w[i] = static_cast<S>(hg.v[c] > cfg.tau_w ? cfg.contact_weight : 1.0);
        W += w[i];
      }
    }
  if (W == 0) throw Error("loss: no valid ground-truth cells");

  auto gt_t = ad::Tensor<S>::from_values(sh, std::move(g));
  auto w_t = ad::Tensor<S>::from_values(sh, std::move(w));
  auto diff = ad::sub(pred, gt_t);
  auto mse = ad::scale(ad::sum_all(ad::mul(w_t, ad::mul(diff, diff))),
                       static_cast<S>(1.0 / W));
  auto l1 = ad::scale(ad::sum_all(ad::mul(w_t, ad::abs_t(diff))),
                      static_cast<S>(1.0 / W));

  // TV over valid-cell adjacencies of the prediction only
  const int G = kGridSize;
  std::vector<S> hm(std::size_t(T) * 2 * G * (G - 1), S(0));
  std::vector<S> vm(std::size_t(T) * 2 * (G - 1) * G, S(0));
  std::int64_t npairs = 0;
  for (int t = 0; t < T; ++t)
    for (int h = 0; h < 2; ++h) {
      const HandGrid& hg = h == 0 ? gt[t]->left : gt[t]->right;
      for (int r = 0; r < G; ++r)
        for (int c = 0; c < G; ++c) {
          if (c + 1 < G && hg.valid[r * G + c] && hg.valid[r * G + c + 1]) {
            hm[((t * 2 + h) * G + r) * (G - 1) + c] = S(1);
            ++npairs;
          }
          if (r + 1 < G && hg.valid[r * G + c] && hg.valid[(r + 1) * G + c]) {
            vm[((t * 2 + h) * (G - 1) + r) * G + c] = S(1);
            ++npairs;
          }
        }
    }
  ad::Tensor<S> tv;
  if (npairs > 0) {
    auto p4 = ad::reshape(pred, {T, 2, G, G});
    auto hd = ad::abs_t(ad::sub(ad::slice(p4, 3, 1, G - 1), ad::slice(p4, 3, 0, G - 1)));
    auto vd = ad::abs_t(ad::sub(ad::slice(p4, 2, 1, G - 1), ad::slice(p4, 2, 0, G - 1)));
    auto hsum = ad::sum_all(
        ad::mul(hd, ad::Tensor<S>::from_values({T, 2, G, G - 1}, std::move(hm))));
    auto vsum = ad::sum_all(
        ad::mul(vd, ad::Tensor<S>::from_values({T, 2, G - 1, G}, std::move(vm))));
    tv = ad::scale(ad::add(hsum, vsum), static_cast<S>(1.0 / npairs));
  } else {
    tv = ad::Tensor<S>::zeros(ad::Shape{1});
    tv = ad::sum_all(tv);
  }

  auto total = ad::add(ad::add(ad::scale(mse, static_cast<S>(cfg.l_mse)),
                               ad::scale(l1, static_cast<S>(cfg.l_l1))),
                       ad::scale(tv, static_cast<S>(cfg.l_tv)));
  if (parts) {
    parts->mse = mse.item();
    parts->l1 = l1.item();
    parts->tv = tv.item();
    parts->total = total.item();
  }
  return total;
}

template <class S>
ad::Tensor<S> loss(const ad::Tensor<S>& pred,
                   const std::vector<CanonicalTactileGrid>& gt,
                   const LossConfig& cfg, LossParts* parts = nullptr) {
  std::vector<const CanonicalTactileGrid*> ptrs;
  for (const auto& f : gt) ptrs.push_back(&f);
  return loss(pred, ptrs, cfg, parts);
}

/// Each wrist view is dropped independently with probability p; the
/// egocentric view always survives.
inline model::ViewSet view_dropout(const model::ViewSet& available, double p,
                                   Rng& rng) {
  available.validate();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  model::ViewSet out{{ViewId::Ego}};
  for (ViewId v : {ViewId::WristLeft, ViewId::WristRight})
    if (available.views.count(v) && u(rng) >= p) out.views.insert(v);
  return out;
}

/// Linear warmup from 0 to lr over `warmup_steps`, then cosine decay to
/// min_lr at `total_steps`.
inline double lr_at(std::int64_t step, std::int64_t total_steps,
                    std::int64_t warmup_steps, const TrainConfig& cfg) {
  if (step < 0 || step > total_steps) throw Error("lr_at: step out of range");
  if (warmup_steps > 0 && step < warmup_steps)
    return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps == warmup_steps) return cfg.lr;
  const double prog = static_cast<double>(step - warmup_steps) /
                      static_cast<double>(total_steps - warmup_steps);
  return cfg.min_lr +
         0.5 * (cfg.lr - cfg.min_lr) * (1.0 + std::cos(prog * 3.14159265358979323846));
}

/// AdamW with decoupled weight decay and bias correction. Moments are kept
/// in double regardless of the parameter scalar type; only tensors visited
/// by ModelParams::visit are touched, so the frozen featurizer is excluded.
template <class S>
struct AdamW {
  struct Slot {
    std::vector<double> m, v;
  };
  std::map<std::string, Slot> slots;
  std::int64_t t = 0;

  void begin_step() { ++t; }

  void update(const std::string& name, ad::Tensor<S>& p, double lr,
              const TrainConfig& cfg) {
    Slot& s = slots[name];
    if (s.m.empty()) {
      s.m.assign(p.size(), 0.0);
      s.v.assign(p.size(), 0.0);
    }
    if (s.m.size() != p.size())
      throw ShapeError("AdamW: state size mismatch for " + name);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const auto& grad = p.grad();
    auto& vals = p.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
      s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      const double x = static_cast<double>(vals[i]);
      vals[i] = static_cast<S>(x - lr * mhat / (std::sqrt(vhat) + cfg.eps) -
                               lr * cfg.weight_decay * x);
    }
  }

  void step(model::ModelParams<S>& params, double lr, const TrainConfig& cfg) {
    begin_step();
    params.visit(
        [&](const std::string& name, ad::Tensor<S>& p) { update(name, p, lr, cfg); });
  }

  void save(container::Writer& w) const {
    w.add_vec("opt/t", container::DType::F64, {1},
              std::vector<double>{static_cast<double>(t)});
    for (const auto& [name, s] : slots) {
      w.add_vec("opt/m/" + name, container::DType::F64,
                {static_cast<std::int64_t>(s.m.size())}, s.m);
      w.add_vec("opt/v/" + name, container::DType::F64,
                {static_cast<std::int64_t>(s.v.size())}, s.v);
    }
  }

  void load(container::Reader& r) {
    t = static_cast<std::int64_t>(r.read_as<double>("opt/t").at(0));
    slots.clear();
    for (const auto& key : r.keys()) {
      if (key.rfind("opt/m/", 0) != 0) continue;
      const std::string name = key.substr(6);
      Slot s;
      s.m = r.read_as<double>("opt/m/" + name);
      s.v = r.read_as<double>("opt/v/" + name);
      slots[name] = std::move(s);
    }
  }
};

// ---------------------------------------------------------------------------
// Glove-color augmentation

namespace detail {

inline constexpr float kGloveColor[3] = {0.55f, 0.45f, 0.4f};

inline bool is_glove_pixel(const ImageFrame& img, int idx, float tol = 0.03f) {
  for (int ch = 0; ch < 3; ++ch)
    if (std::abs(img.data[idx * 3 + ch] - kGloveColor[ch]) > tol) return false;
  return true;
}

}  // namespace detail

/// With the given probability, applies one global hue/brightness jitter to
/// the hand-region pixels and clamps to [0,1]; otherwise identity. The
/// region defaults to pixels matching the renderer's glove color, or can be
/// passed explicitly (e.g. from synth::hand_region_pixels).
inline void augment_glove_color(ImageFrame& img, double prob, Rng& rng,
                                const std::vector<int>* region = nullptr) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) >= prob) return;
  std::uniform_real_distribution<double> bright(0.7, 1.3);
  std::uniform_real_distribution<double> hue(-0.08, 0.08);
  const double b = bright(rng);
  const double dh[3] = {hue(rng), hue(rng), hue(rng)};
  auto jitter = [&](int idx) {
    for (int ch = 0; ch < 3; ++ch) {
      float& px = img.data[idx * 3 + ch];
      px = std::clamp(static_cast<float>(px * b + dh[ch]), 0.0f, 1.0f);
    }
  };
  if (region) {
    for (int idx : *region) jitter(idx);
  } else {
    const int n = img.width * img.height;
    for (int idx = 0; idx < n; ++idx)
      if (detail::is_glove_pixel(img, idx)) jitter(idx);
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  int epoch = 0;
  double loss_total = 0, loss_mse = 0, loss_l1 = 0, loss_tv = 0;
  double lr = 0;
  metrics::MetricsReport val;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},       {"loss_total", loss_total},
            {"loss_mse", loss_mse}, {"loss_l1", loss_l1},
            {"loss_tv", loss_tv},   {"lr", lr},
            {"val", val.to_json()}};
  }
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_viou = -1.0;
};

namespace detail {

struct ClipRef {
  const Episode* episode;
  int start;
};

/// The epoch's clip order: sampled per episode, then globally shuffled.
/// Depends only on (seed, epoch, corpus), never on prior training state.
inline std::vector<ClipRef> epoch_clips(const std::vector<const Episode*>& eps,
                                        int T, int stride, std::uint64_t seed,
                                        int epoch) {
  std::vector<ClipRef> out;
  const std::uint64_t es = mix_seed(seed, "clips/" + std::to_string(epoch));
  for (const Episode* ep : eps)
    for (const Clip& c : sample_clips(*ep, T, stride, es))
      out.push_back({ep, c.frames[0]->frame_index});
  Rng rng(mix_seed(es, "order"));
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace detail

/// One full deterministic run. Every epoch: resample clips, shuffle, train
/// with gradient accumulation, evaluate on the validation split, and track
/// the best checkpoint by validation Volumetric IoU. `out_dir` (optional)
/// receives best.tbc, last.tbc (with optimizer state for resume) and
/// log.json. `resume_from` restarts from a last.tbc at an epoch boundary.
template <class S>
TrainResult train(const std::vector<const Episode*>& train_eps,
                  const std::vector<const Episode*>& val_eps,
                  model::ModelParams<S>& params, const TrainConfig& tc,
                  const LossConfig& lc,
                  const std::filesystem::path& out_dir = {},
                  const std::optional<std::filesystem::path>& resume_from =
                      std::nullopt,
                  int stop_after_epoch = -1) {
  tc.validate();
  lc.validate();
  if (train_eps.empty()) throw Error("train: empty training split");
  const int T = params.cfg.T;

  // schedule geometry is constant across epochs: sample_clips counts depend
  // only on episode lengths
  const std::size_t clips_per_epoch =
      detail::epoch_clips(train_eps, T, tc.clip_stride, tc.seed, 0).size();
  const std::int64_t micro_per_epoch =
      (clips_per_epoch + tc.batch_size - 1) / tc.batch_size;
  const std::int64_t steps_per_epoch =
      (micro_per_epoch + tc.grad_accum - 1) / tc.grad_accum;
  const std::int64_t total_steps = steps_per_epoch * tc.epochs;
  const std::int64_t warmup_steps = steps_per_epoch * tc.warmup_epochs;

  AdamW<S> opt;
  TrainResult result;
  int start_epoch = 0;
  std::int64_t opt_step = 0;
  if (resume_from) {
    container::Reader r(*resume_from);
    auto meta = nlohmann::json::parse(r.read_string("checkpoint"));
    const auto& extra = meta.at("extra");
    start_epoch = extra.at("next_epoch").get<int>();
    opt_step = extra.at("opt_step").get<std::int64_t>();
    result.best_epoch = extra.at("best_epoch").get<int>();
    result.best_val_viou = extra.at("best_val_viou").get<double>();
    params = model::load_checkpoint<S>(*resume_from);
    opt.load(r);
  }

  auto save_state = [&](const std::filesystem::path& file, int next_epoch) {
    nlohmann::json extra;
    extra["next_epoch"] = next_epoch;
    extra["opt_step"] = opt_step;
    extra["best_epoch"] = result.best_epoch;
    extra["best_val_viou"] = result.best_val_viou;
    extra["log"] = nlohmann::json::array();
    container::Writer w(file);
    nlohmann::json meta;
    meta["checkpoint_version"] = model::kCheckpointVersion;
    meta["config"] = params.cfg.to_json();
    meta["extra"] = extra;
    w.add_bytes("checkpoint", meta.dump());
    params.visit([&](const std::string& name, ad::Tensor<S>& t) {
      std::vector<double> v(t.values().begin(), t.values().end());
      std::vector<std::int64_t> shape(t.shape().begin(), t.shape().end());
      w.add_vec("param/" + name, container::DType::F64, shape, v);
    });
    opt.save(w);
    w.finish();
  };

  metrics::EvalConfig ec;
  const model::ViewSet all = model::ViewSet::all();

  for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    auto clips = detail::epoch_clips(train_eps, T, tc.clip_stride, tc.seed, epoch);
    Rng aug_rng(mix_seed(tc.seed, "aug/" + std::to_string(epoch)));
    EpochLog log;
    log.epoch = epoch;
    std::size_t n_clips = 0;
    params.zero_grad();

    std::size_t i = 0;
    while (i < clips.size()) {
      // one optimizer step covers up to grad_accum micro-batches; scaling
      // by the group's clip count makes k-step accumulation exactly equal
      // to one large batch
      const std::size_t group_end = std::min(
          clips.size(), i + std::size_t(tc.batch_size) * tc.grad_accum);
      const double group_size = static_cast<double>(group_end - i);
      for (; i < group_end; ++i) {
        const auto& cr = clips[i];
        const model::ViewSet views = view_dropout(all, tc.view_dropout_p, aug_rng);

        std::vector<std::map<ViewId, ImageFrame>> aug(T);
        model::ClipInput in;
        std::vector<const CanonicalTactileGrid*> gt;
        for (int k = 0; k < T; ++k) {
          const FrameRecord& f = cr.episode->frames[cr.start + k * tc.clip_stride];
          in.pose.push_back(&f.pose);
          for (ViewId v : views.canonical()) {
            aug[k][v] = f.images.at(v);
            augment_glove_color(aug[k][v], tc.glove_aug_prob, aug_rng);
            in.images[v].push_back(&aug[k][v]);
          }
          gt.push_back(
              &cr.episode->canonical_pressure[cr.start + k * tc.clip_stride]);
        }

        auto out = model::forward(params, in, views);
        LossParts parts;
        auto l = loss(out, gt, lc, &parts);
        ad::backward(ad::scale(l, static_cast<S>(1.0 / group_size)));
        log.loss_total += parts.total;
        log.loss_mse += parts.mse;
        log.loss_l1 += parts.l1;
        log.loss_tv += parts.tv;
        ++n_clips;
      }
      const double lr = lr_at(opt_step, total_steps, warmup_steps, tc);
      opt.step(params, lr, tc);
      params.zero_grad();
      ++opt_step;
      log.lr = lr;
    }

    log.loss_total /= n_clips;
    log.loss_mse /= n_clips;
    log.loss_l1 /= n_clips;
    log.loss_tv /= n_clips;

    if (!val_eps.empty()) {
      auto reports = metrics::evaluate(params, val_eps, all, ec);
      log.val = reports.at("overall");
      if (log.val.volumetric_iou > result.best_val_viou) {
        result.best_val_viou = log.val.volumetric_iou;
        result.best_epoch = epoch;
        if (!out_dir.empty()) {
          std::filesystem::create_directories(out_dir);
          model::save_checkpoint(params, out_dir / "best.tbc",
                                 {{"epoch", epoch},
                                  {"val_volumetric_iou", log.val.volumetric_iou}});
        }
      }
    }
    result.log.push_back(log);

    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      save_state(out_dir / "last.tbc", epoch + 1);
      nlohmann::json jl = nlohmann::json::array();
      for (const auto& e : result.log) jl.push_back(e.to_json());
      const auto tmp = out_dir / "log.json.tmp";
      {
        std::ofstream f(tmp, std::ios::trunc);
        f << jl.dump(2) << "\n";
      }
      std::filesystem::rename(tmp, out_dir / "log.json");
    }
    // simulated interruption for resume tests; state for epoch+1 is on disk
    if (stop_after_epoch >= 0 && epoch + 1 >= stop_after_epoch) break;
  }
  return result;
}

}  // namespace tb::train
