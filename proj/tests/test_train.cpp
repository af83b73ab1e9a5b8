#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "touchbench/synthgen.hpp"
#include "touchbench/train.hpp"

using namespace tb;
using namespace tb::train;
namespace fs = std::filesystem;

namespace {

model::ModelConfig micro_config() {
  model::ModelConfig c;
  c.D = 8;
  c.heads = 2;
  c.T = 2;
  c.image_size = 28;
  c.patch = 14;
  c.decoder_hidden = 16;
  return c;
}

CanonicalTactileGrid random_gt(Rng& rng, double p_valid = 0.8) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CanonicalTactileGrid g;
  for (HandSide s : {HandSide::Left, HandSide::Right})
    for (int c = 0; c < kGridCells; ++c)
      if (u(rng) < p_valid)
        g.hand(s).set(c / kGridSize, c % kGridSize, u(rng));
  return g;
}

Episode make_episode(const std::string& id, Scenario scen, int n_frames,
                     std::uint64_t seed, const model::ModelConfig& mc) {
  synth::GenConfig gc;
  gc.image_size = mc.image_size;
  gc.patch_size = mc.patch;
  auto script = synth::generate_script(seed, gc);
  Episode ep;
  ep.meta.episode_id = id;
  ep.meta.task = "grasp";
  ep.meta.scenario = scen;
  Rng rng(seed);
  for (int t = 0; t < n_frames; ++t) {
    FrameRecord f;
    f.frame_index = t;
    f.ts = {t / kFps + 0.001};
    for (ViewId v : kAllViews) f.images[v] = synth::render_frame(script, t, v, gc);
    ep.frames.push_back(std::move(f));
    ep.canonical_pressure.push_back(random_gt(rng));
  }
  return ep;
}

}  // namespace

TEST_CASE("loss of a perfect prediction is exactly the TV term") {
  Rng rng(3);
  std::vector<CanonicalTactileGrid> gt = {random_gt(rng), random_gt(rng)};
  std::vector<double> vals(2 * 2 * kGridCells, 0.0);
  for (int t = 0; t < 2; ++t)
    for (int h = 0; h < 2; ++h) {
      const HandGrid& hg = h == 0 ? gt[t].left : gt[t].right;
      for (int c = 0; c < kGridCells; ++c)
        if (hg.valid[c]) vals[(t * 2 + h) * kGridCells + c] = hg.v[c];
    }
  auto pred = ad::Tensor<double>::from_values({2, 2, kGridCells}, vals);

  // reference TV in the same summation order: all horizontal pairs in
  // (t, h, r, c) order, then all vertical pairs
  double hsum = 0, vsum = 0;
  long long npairs = 0;
  const int G = kGridSize;
  for (int pass = 0; pass < 2; ++pass)
    for (int t = 0; t < 2; ++t)
      for (int h = 0; h < 2; ++h) {
        const HandGrid& hg = h == 0 ? gt[t].left : gt[t].right;
        for (int r = 0; r < G; ++r)
          for (int c = 0; c < G; ++c) {
            if (pass == 0 && c + 1 < G && hg.valid[r * G + c] &&
                hg.valid[r * G + c + 1]) {
              hsum += std::abs(hg.v[r * G + c + 1] - hg.v[r * G + c]);
              ++npairs;
            }
            if (pass == 1 && r + 1 < G && hg.valid[r * G + c] &&
                hg.valid[(r + 1) * G + c]) {
              vsum += std::abs(hg.v[(r + 1) * G + c] - hg.v[r * G + c]);
              ++npairs;
            }
          }
      }

  LossConfig lc;
  LossParts parts;
  auto total = loss(pred, gt, lc, &parts);
  CHECK(parts.mse == 0.0);
  CHECK(parts.l1 == 0.0);
  const double tv_ref = (hsum + vsum) * (1.0 / npairs);
  CHECK(parts.tv == tv_ref);
  CHECK(total.item() == lc.l_tv * tv_ref);
}

TEST_CASE("single-cell hand computation: M = 0.5, prediction 0") {
  std::vector<CanonicalTactileGrid> gt(1);
  gt[0].left.set(0, 0, 0.5);  // the only valid cell anywhere
  auto pred = ad::Tensor<double>::zeros({1, 2, kGridCells});
  LossParts parts;
  auto total = loss(pred, gt, LossConfig{}, &parts);
  // weighted mean with a single weight-3 cell: MSE_w = 0.25, L1_w = 0.5,
  // TV = 0 (no valid pair) -> total = 1.0*0.25 + 0.5*0.5 = 0.5
  CHECK(parts.mse == 0.25);
  CHECK(parts.l1 == 0.5);
  CHECK(parts.tv == 0.0);
  CHECK(total.item() == 0.5);
}

TEST_CASE("constant prediction has zero TV") {
  Rng rng(4);
  std::vector<CanonicalTactileGrid> gt = {random_gt(rng)};
  auto pred = ad::Tensor<double>::filled({1, 2, kGridCells}, 0.3);
  LossParts parts;
  loss(pred, gt, LossConfig{}, &parts);
  CHECK(parts.tv == 0.0);
}

TEST_CASE("contact cells pull gradient exactly three times harder") {
  // two valid cells with identical positive residuals; one above the
  // contact threshold, one below
  std::vector<CanonicalTactileGrid> gt(1);
  gt[0].left.set(0, 0, 0.5);   // contact (weight 3); no TV pair: not adjacent
  gt[0].left.set(5, 5, 0.05);  // background (weight 1)
  std::vector<double> vals(2 * kGridCells, 0.0);
  vals[0] = 0.7;                      // residual +0.2
  vals[5 * kGridSize + 5] = 0.25;     // residual +0.2
  auto pred = ad::Tensor<double>::from_values({1, 2, kGridCells}, vals, true);
  LossConfig lc;
  auto total = loss(pred, gt, lc, nullptr);
  ad::backward(total);
  const double g_contact = pred.grad()[0];
  const double g_bg = pred.grad()[5 * kGridSize + 5];
  CHECK_THAT(g_contact / g_bg, Catch::Matchers::WithinAbs(3.0, 1e-12));
}

TEST_CASE("loss rejects bad shapes and empty masks") {
  std::vector<CanonicalTactileGrid> gt(2);
  gt[0].left.set(0, 0, 0.5);
  auto wrong = ad::Tensor<double>::zeros({1, 2, kGridCells});
  CHECK_THROWS_AS(loss(wrong, gt, LossConfig{}), ShapeError);
  std::vector<CanonicalTactileGrid> empty(1);  // all cells invalid
  auto pred = ad::Tensor<double>::zeros({1, 2, kGridCells});
  CHECK_THROWS_AS(loss(pred, empty, LossConfig{}), Error);
}

TEST_CASE("loss gradient agrees with finite differences") {
  Rng rng(5);
  std::vector<CanonicalTactileGrid> gt = {random_gt(rng, 0.6)};
  LossConfig lc;
  auto fn = [&](std::vector<ad::Tensor<double>>& in) {
    return loss(in[0], gt, lc);
  };
  const double err = ad::grad_check<double>(fn, {{1, 2, kGridCells}}, 11);
  CHECK(err < 1e-6);
}

TEST_CASE("view dropout keeps ego and hits the analytic frequencies") {
  Rng rng(6);
  auto avail = model::ViewSet::all();
  CHECK(view_dropout(avail, 1.0 - 1e-12, rng).views ==
        std::set<ViewId>{ViewId::Ego});
  CHECK(view_dropout(avail, 0.0, rng).views == avail.views);

  std::map<std::string, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    auto vs = view_dropout(avail, 0.3, rng);
    CHECK(vs.views.count(ViewId::Ego));
    counts[vs.label()]++;
  }
  CHECK_THAT(counts["ego,wl,wr"] / double(n), Catch::Matchers::WithinAbs(0.49, 0.01));
  CHECK_THAT(counts["ego,wl"] / double(n), Catch::Matchers::WithinAbs(0.21, 0.01));
  CHECK_THAT(counts["ego,wr"] / double(n), Catch::Matchers::WithinAbs(0.21, 0.01));
  CHECK_THAT(counts["ego"] / double(n), Catch::Matchers::WithinAbs(0.09, 0.01));
}

TEST_CASE("learning-rate schedule hits its anchors to 1e-12") {
  TrainConfig tc;  // lr 5e-5, min_lr 1e-6
  const std::int64_t total = 2500, warmup = 1000;
  CHECK(lr_at(0, total, warmup, tc) == 0.0);
  CHECK(lr_at(warmup, total, warmup, tc) == 5e-5);
  CHECK_THAT(lr_at(total, total, warmup, tc),
             Catch::Matchers::WithinAbs(1e-6, 1e-12));
  // half-angle point of the cosine leg
  CHECK_THAT(lr_at(warmup + (total - warmup) / 2, total, warmup, tc),
             Catch::Matchers::WithinAbs((5e-5 + 1e-6) / 2, 1e-12));

  // continuous and piecewise monotone: rises to the boundary, then falls
  double prev = -1.0;
  for (std::int64_t s = 0; s <= warmup; ++s) {
    const double lr = lr_at(s, total, warmup, tc);
    CHECK(lr >= prev);
    prev = lr;
  }
  for (std::int64_t s = warmup; s <= total; ++s) {
    const double lr = lr_at(s, total, warmup, tc);
    CHECK(lr <= prev + 1e-18);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_at(total + 1, total, warmup, tc), Error);
}

TEST_CASE("AdamW anchor updates") {
  TrainConfig tc;
  tc.weight_decay = 0.0;

  // g = 1, lr = 0.1: bias-corrected unit step of ~0.1
  auto p = ad::Tensor<double>::filled({1}, 1.0, true);
  p.zero_grad();
  p.node()->grad[0] = 1.0;
  AdamW<double> opt;
  opt.begin_step();
  opt.update("p", p, 0.1, tc);
  CHECK_THAT(p.values()[0], Catch::Matchers::WithinAbs(0.9, 1e-8));

  // zero gradient, zero decay: unchanged
  auto q = ad::Tensor<double>::filled({1}, 0.7, true);
  q.zero_grad();
  AdamW<double> opt2;
  opt2.begin_step();
  opt2.update("q", q, 0.1, tc);
  CHECK(q.values()[0] == 0.7);

  // decay only: shrinks by exactly lr * wd * param per step
  tc.weight_decay = 0.05;
  auto r = ad::Tensor<double>::filled({1}, 2.0, true);
  r.zero_grad();
  AdamW<double> opt3;
  opt3.begin_step();
  opt3.update("r", r, 0.1, tc);
  CHECK(r.values()[0] == 2.0 - 0.1 * 0.05 * 2.0);
}

TEST_CASE("optimizer never touches the frozen featurizer") {
  auto params = model::init_params<double>(micro_config());
  const auto w = params.feat_W.values();
  params.visit([](const std::string&, ad::Tensor<double>& t) {
    t.zero_grad();
    for (auto& g : t.node()->grad) g = 0.01;
  });
  AdamW<double> opt;
  opt.step(params, 1e-3, TrainConfig{});
  CHECK(params.feat_W.values() == w);
  CHECK(opt.slots.count("view_embed") == 1);
  for (const auto& [name, s] : opt.slots) CHECK(name.find("feat") == std::string::npos);
}

TEST_CASE("glove-color augmentation touches only hand pixels, clamped") {
  synth::GenConfig gc;
  auto script = synth::generate_script(12, gc);
  auto img = synth::render_frame(script, 10, ViewId::Ego, gc);

  // prob 0: identity
  ImageFrame a = img;
  Rng r0(1);
  augment_glove_color(a, 0.0, r0);
  CHECK(a.data == img.data);

  // prob 1: deterministic given the rng, pixels stay in range, and pixels
  // outside the listed hand region are untouched
  auto region = synth::hand_region_pixels(script, 10, ViewId::Ego, gc);
  REQUIRE_FALSE(region.empty());
  ImageFrame b = img, c = img;
  Rng r1(7), r2(7);
  augment_glove_color(b, 1.0, r1, &region);
  augment_glove_color(c, 1.0, r2, &region);
  CHECK(b.data == c.data);
  CHECK(b.data != img.data);
  std::set<int> in_region(region.begin(), region.end());
  for (int idx = 0; idx < gc.image_size * gc.image_size; ++idx) {
    if (in_region.count(idx)) continue;
    for (int ch = 0; ch < 3; ++ch)
      CHECK(b.data[idx * 3 + ch] == img.data[idx * 3 + ch]);
  }
  for (float px : b.data) {
    CHECK(px >= 0.0f);
    CHECK(px <= 1.0f);
  }

  // color-detection fallback finds the same blobs the script describes
  ImageFrame d = img;
  Rng r3(7);
  augment_glove_color(d, 1.0, r3);
  bool hand_changed = false;
  for (int idx : region)
    for (int ch = 0; ch < 3; ++ch)
      hand_changed |= d.data[idx * 3 + ch] != img.data[idx * 3 + ch];
  CHECK(hand_changed);
}

TEST_CASE("gradient accumulation equals one large batch") {
  auto mc = micro_config();
  std::vector<Episode> eps;
  for (int i = 0; i < 3; ++i)
    eps.push_back(make_episode("e" + std::to_string(i), Scenario::Home, 4, 30 + i, mc));
  std::vector<const Episode*> split;
  for (auto& e : eps) split.push_back(&e);

  TrainConfig small;
  small.epochs = 1;
  small.warmup_epochs = 0;
  small.lr = 1e-3;
  small.batch_size = 2;
  small.grad_accum = 3;
  small.seed = 5;
  TrainConfig big = small;
  big.batch_size = 6;
  big.grad_accum = 1;

  auto pa = model::init_params<double>(mc);
  auto pb = model::init_params<double>(mc);
  tb::train::train(split, {}, pa, small, LossConfig{});
  tb::train::train(split, {}, pb, big, LossConfig{});

  double max_diff = 0;
  pa.visit([&](const std::string& name, ad::Tensor<double>& t) {
    ad::Tensor<double>* other = nullptr;
    pb.visit([&](const std::string& n2, ad::Tensor<double>& t2) {
      if (n2 == name) other = &t2;
    });
    REQUIRE(other);
    for (std::size_t i = 0; i < t.size(); ++i)
      max_diff = std::max(max_diff, std::abs(t.values()[i] - other->values()[i]));
  });
  CHECK(max_diff <= 1e-6);
}

TEST_CASE("training is deterministic and resume is bit-exact") {
  auto mc = micro_config();
  std::vector<Episode> eps;
  for (int i = 0; i < 4; ++i)
    eps.push_back(make_episode("e" + std::to_string(i), Scenario::Home, 4, 40 + i, mc));
  std::vector<const Episode*> split = {&eps[0], &eps[1], &eps[2]};
  std::vector<const Episode*> val = {&eps[3]};

  TrainConfig tc;
  tc.epochs = 3;
  tc.warmup_epochs = 1;
  tc.lr = 1e-3;
  tc.batch_size = 2;
  tc.grad_accum = 1;
  tc.seed = 9;

  auto dir_a = fs::temp_directory_path() / "tb_train_a";
  auto dir_b = fs::temp_directory_path() / "tb_train_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  auto pa = model::init_params<double>(mc);
  auto ra = tb::train::train(split, val, pa, tc, LossConfig{}, dir_a);
  REQUIRE(ra.log.size() == 3);
  CHECK(fs::exists(dir_a / "best.tbc"));
  CHECK(fs::exists(dir_a / "last.tbc"));
  CHECK(fs::exists(dir_a / "log.json"));
  CHECK(ra.best_epoch >= 0);
  CHECK(ra.best_val_viou >= 0.0);
  for (const auto& e : ra.log) {
    CHECK(e.val.hands > 0);
    CHECK(e.lr > 0.0);
  }

  // interrupted after epoch 1, then resumed from last.tbc
  auto pb = model::init_params<double>(mc);
  tb::train::train(split, val, pb, tc, LossConfig{}, dir_b, std::nullopt, 1);
  auto pc = model::init_params<double>(mc);
  auto rc = tb::train::train(split, val, pc, tc, LossConfig{}, dir_b, dir_b / "last.tbc");
  CHECK(rc.best_val_viou == ra.best_val_viou);
  pa.visit([&](const std::string& name, ad::Tensor<double>& t) {
    pc.visit([&](const std::string& n2, ad::Tensor<double>& t2) {
      if (n2 == name) CHECK(t.values() == t2.values());
    });
  });
}

TEST_CASE("two-epoch smoke run reduces the loss for three seeds") {
  auto mc = micro_config();
  std::vector<double> e1, e2;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    std::vector<Episode> eps;
    for (int i = 0; i < 8; ++i)
      eps.push_back(make_episode("s" + std::to_string(seed) + "e" + std::to_string(i),
                                 Scenario::Home, 4, seed * 100 + i, mc));
    std::vector<const Episode*> split;
    for (auto& e : eps) split.push_back(&e);

    TrainConfig tc;
    tc.epochs = 2;
    tc.warmup_epochs = 1;
    tc.lr = 5e-3;
    tc.batch_size = 2;
    tc.grad_accum = 1;
    tc.seed = seed;
    auto mc2 = mc;
    mc2.init_seed = seed;
    auto p = model::init_params<double>(mc2);
    auto r = tb::train::train(split, {}, p, tc, LossConfig{});
    REQUIRE(r.log.size() == 2);
    e1.push_back(r.log[0].loss_total);
    e2.push_back(r.log[1].loss_total);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  CHECK(median(e2) < median(e1));
}
