#include <catch2/catch_amalgamated.hpp>

#include "touchbench/metrics.hpp"
#include "touchbench/synthgen.hpp"

using namespace tb;
using namespace tb::metrics;

namespace {

HandGrid grid_from(std::initializer_list<std::pair<int, double>> cells,
                   int n_valid = kGridCells) {
  HandGrid g;
  for (int c = 0; c < n_valid; ++c) g.set(c / kGridSize, c % kGridSize, 0.0);
  for (auto [c, v] : cells) g.set(c / kGridSize, c % kGridSize, v);
  return g;
}

CanonicalTactileGrid frame_from(const HandGrid& l, const HandGrid& r) {
  CanonicalTactileGrid f;
  f.left = l;
  f.right = r;
  return f;
}

HandGrid random_grid(Rng& rng, double p_valid = 0.85) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  HandGrid g;
  for (int c = 0; c < kGridCells; ++c)
    if (u(rng) < p_valid) g.set(c / kGridSize, c % kGridSize, u(rng));
  return g;
}

// independent single-pass reference computation, no Accumulator involved
struct Brute {
  double t_acc, c_iou, v_iou, mae;
};

Brute brute_force(const std::vector<CanonicalTactileGrid>& pred,
                  const std::vector<CanonicalTactileGrid>& gt, double tau) {
  long long units = 0, correct = 0, inter = 0, uni = 0, cells = 0;
  double smin = 0, smax = 0, aerr = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (HandSide s : {HandSide::Left, HandSide::Right}) {
      const HandGrid& p = pred[i].hand(s);
      const HandGrid& g = gt[i].hand(s);
      bool cp = false, cg = false;
      for (int c = 0; c < kGridCells; ++c) {
        if (p.valid[c] && p.v[c] > tau) cp = true;
        if (g.valid[c] && g.v[c] > tau) cg = true;
        if (!(p.valid[c] && g.valid[c])) continue;
        inter += p.v[c] > tau && g.v[c] > tau;
        uni += p.v[c] > tau || g.v[c] > tau;
        smin += std::min(p.v[c], g.v[c]);
        smax += std::max(p.v[c], g.v[c]);
        aerr += std::abs(p.v[c] - g.v[c]);
        ++cells;
      }
      ++units;
      correct += cp == cg;
    }
  }
  return {units ? double(correct) / units : 1.0, uni ? double(inter) / uni : 1.0,
          smax > 0 ? smin / smax : 1.0, cells ? aerr / cells : 0.0};
}

}  // namespace

TEST_CASE("binarize uses a strict threshold over valid cells") {
  HandGrid g = grid_from({{0, 0.05}, {1, 0.15}, {2, 0.1}}, 10);
  auto m = binarize(g, 0.1);
  CHECK_FALSE(m[0]);
  CHECK(m[1]);
  CHECK_FALSE(m[2]);  // exactly tau is no contact
  for (int c = 10; c < kGridCells; ++c) CHECK_FALSE(m[c]);  // invalid cells

  auto zero = binarize(grid_from({}), 0.1);
  for (bool b : zero) CHECK_FALSE(b);
  CHECK_THROWS_AS(binarize(g, 0.0), Error);
}

TEST_CASE("temporal accuracy counts per-(frame,hand) agreement") {
  // left-hand presence pred [1,1,0,0] vs gt [1,0,0,0]; right hand always off
  HandGrid on = grid_from({{5, 0.9}});
  HandGrid off = grid_from({});
  std::vector<CanonicalTactileGrid> pred = {
      frame_from(on, off), frame_from(on, off), frame_from(off, off),
      frame_from(off, off)};
  std::vector<CanonicalTactileGrid> gt = {
      frame_from(on, off), frame_from(off, off), frame_from(off, off),
      frame_from(off, off)};
  // 7 of 8 (frame, hand) units agree
  CHECK_THAT(temporal_accuracy(pred, gt, 0.1),
             Catch::Matchers::WithinAbs(7.0 / 8.0, 1e-15));
  // pooled mode collapses both hands to one bit per frame: 3 of 4 agree
  CHECK_THAT(temporal_accuracy(pred, gt, 0.1, true),
             Catch::Matchers::WithinAbs(0.75, 1e-15));

  CHECK(temporal_accuracy(pred, pred, 0.1) == 1.0);
  std::vector<CanonicalTactileGrid> inv = {
      frame_from(off, on), frame_from(off, on), frame_from(on, on),
      frame_from(on, on)};
  CHECK(temporal_accuracy(pred, inv, 0.1) == 0.0);
  gt.pop_back();
  CHECK_THROWS_AS(temporal_accuracy(pred, gt, 0.1), ShapeError);
}

TEST_CASE("contact IoU on hand-built supports") {
  HandGrid gt = grid_from({{3, 0.8}});
  HandGrid pr = grid_from({{3, 0.5}, {4, 0.5}});
  std::vector<CanonicalTactileGrid> P = {frame_from(pr, grid_from({}))};
  std::vector<CanonicalTactileGrid> G = {frame_from(gt, grid_from({}))};
  CHECK_THAT(contact_iou(P, G, 0.1), Catch::Matchers::WithinAbs(0.5, 1e-15));
  CHECK(contact_iou(P, P, 0.1) == 1.0);

  std::vector<CanonicalTactileGrid> D = {
      frame_from(grid_from({{9, 0.9}}), grid_from({}))};
  CHECK(contact_iou(D, G, 0.1) == 0.0);
  std::vector<CanonicalTactileGrid> E = {frame_from(grid_from({}), grid_from({}))};
  CHECK(contact_iou(E, E, 0.1) == 1.0);  // empty vs empty
}

TEST_CASE("contact IoU ignores monotone rescaling that preserves crossings") {
  Rng rng(5);
  std::vector<CanonicalTactileGrid> pred = {frame_from(random_grid(rng), random_grid(rng))};
  std::vector<CanonicalTactileGrid> gt = {frame_from(random_grid(rng), random_grid(rng))};
  auto scaled = pred;
  for (auto& f : scaled)
    for (HandSide s : {HandSide::Left, HandSide::Right})
      for (int c = 0; c < kGridCells; ++c)
        if (f.hand(s).valid[c]) {
          double& v = f.hand(s).v[c];
          v = v > 0.1 ? 0.1 + (v - 0.1) * 3.0 : v * 0.5;  // keeps the 0.1 crossing set
        }
  CHECK(contact_iou(pred, gt, 0.1) == contact_iou(scaled, gt, 0.1));
}

TEST_CASE("volumetric IoU matches the summed min/max form") {
  HandGrid P = grid_from({{0, 1.0}, {1, 0.0}}, 2);
  HandGrid Q = grid_from({{0, 0.5}, {1, 0.5}}, 2);
  HandGrid none;
  std::vector<CanonicalTactileGrid> a = {frame_from(P, none)};
  std::vector<CanonicalTactileGrid> b = {frame_from(Q, none)};
  CHECK_THAT(volumetric_iou(a, b), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
  CHECK(volumetric_iou(a, a) == 1.0);
  CHECK(volumetric_iou(a, b) == volumetric_iou(b, a));  // symmetric
  std::vector<CanonicalTactileGrid> z = {frame_from(grid_from({}, 2), none)};
  CHECK(volumetric_iou(z, a) == 0.0);
}

TEST_CASE("volumetric IoU is monotone as predictions approach ground truth") {
  Rng rng(6);
  std::vector<CanonicalTactileGrid> gt = {frame_from(random_grid(rng), random_grid(rng))};
  auto far = gt, near = gt;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (HandSide s : {HandSide::Left, HandSide::Right})
    for (int c = 0; c < kGridCells; ++c)
      if (gt[0].hand(s).valid[c]) {
        const double g = gt[0].hand(s).v[c], r = u(rng);
        far[0].hand(s).v[c] = r;
        near[0].hand(s).v[c] = 0.5 * (r + g);  // pointwise closer to gt
      }
  CHECK(volumetric_iou(near, gt) >= volumetric_iou(far, gt));
}

TEST_CASE("MAE over valid cells") {
  HandGrid gt = grid_from({{0, 0.5}, {1, 0.5}}, 2);
  HandGrid pr = grid_from({{0, 0.7}, {1, 0.1}}, 2);
  HandGrid none;
  std::vector<CanonicalTactileGrid> P = {frame_from(pr, none)};
  std::vector<CanonicalTactileGrid> G = {frame_from(gt, none)};
  CHECK_THAT(mae(P, G), Catch::Matchers::WithinAbs(0.3, 1e-15));
  CHECK(mae(P, P) == 0.0);

  // constant offset on every valid cell
  Rng rng(7);
  std::vector<CanonicalTactileGrid> base = {frame_from(random_grid(rng), random_grid(rng))};
  auto shifted = base;
  for (HandSide s : {HandSide::Left, HandSide::Right})
    for (int c = 0; c < kGridCells; ++c)
      if (shifted[0].hand(s).valid[c]) shifted[0].hand(s).v[c] += 0.1;
  CHECK_THAT(mae(shifted, base), Catch::Matchers::WithinAbs(0.1, 1e-12));
}

TEST_CASE("metrics are permutation-invariant over frames") {
  Rng rng(8);
  std::vector<CanonicalTactileGrid> pred, gt;
  for (int i = 0; i < 6; ++i) {
    pred.push_back(frame_from(random_grid(rng), random_grid(rng)));
    gt.push_back(frame_from(random_grid(rng), random_grid(rng)));
  }
  auto pred2 = pred, gt2 = gt;
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  for (int i = 0; i < 6; ++i) {
    pred2[i] = pred[perm[i]];
    gt2[i] = gt[perm[i]];
  }
  CHECK(temporal_accuracy(pred, gt, 0.1) == temporal_accuracy(pred2, gt2, 0.1));
  CHECK(contact_iou(pred, gt, 0.1) == contact_iou(pred2, gt2, 0.1));
  CHECK_THAT(volumetric_iou(pred, gt),
             Catch::Matchers::WithinAbs(volumetric_iou(pred2, gt2), 1e-12));
  CHECK_THAT(mae(pred, gt), Catch::Matchers::WithinAbs(mae(pred2, gt2), 1e-12));
}

TEST_CASE("streaming accumulation matches a brute-force oracle on 1000 pairs") {
  Rng rng(42);
  std::uniform_int_distribution<int> len(1, 4);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<CanonicalTactileGrid> pred, gt;
    if (trial == 0) {
      // hand anchor: C.IoU = 0.5 (gt {A}, pred {A,B})
      pred.push_back(frame_from(grid_from({{3, 0.5}, {4, 0.5}}), grid_from({})));
      gt.push_back(frame_from(grid_from({{3, 0.8}}), grid_from({})));
    } else if (trial == 1) {
      // hand anchor: V.IoU = 1/3 (P=[1,0] vs [0.5,0.5])
      pred.push_back(frame_from(grid_from({{0, 0.5}, {1, 0.5}}, 2), HandGrid{}));
      gt.push_back(frame_from(grid_from({{0, 1.0}, {1, 0.0}}, 2), HandGrid{}));
    } else {
      const int n = len(rng);
      for (int i = 0; i < n; ++i) {
        pred.push_back(frame_from(random_grid(rng), random_grid(rng)));
        gt.push_back(frame_from(random_grid(rng), random_grid(rng)));
      }
    }

    // streaming: split at a random point, accumulate separately, merge
    std::uniform_int_distribution<std::size_t> cut(0, pred.size());
    const std::size_t k = cut(rng);
    Accumulator a, b;
    for (std::size_t i = 0; i < k; ++i) accumulate_frame(a, pred[i], gt[i], 0.1);
    for (std::size_t i = k; i < pred.size(); ++i)
      accumulate_frame(b, pred[i], gt[i], 0.1);
    a.merge(b);

    const Brute ref = brute_force(pred, gt, 0.1);
    worst = std::max(worst, std::abs(a.temporal_accuracy() - ref.t_acc));
    worst = std::max(worst, std::abs(a.contact_iou() - ref.c_iou));
    worst = std::max(worst, std::abs(a.volumetric_iou() - ref.v_iou));
    worst = std::max(worst, std::abs(a.mae() - ref.mae));
    if (trial == 0) CHECK(a.contact_iou() == 0.5);
    if (trial == 1)
      CHECK_THAT(a.volumetric_iou(), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("perfect predictions give perfect scores") {
  Rng rng(9);
  std::vector<CanonicalTactileGrid> gt;
  for (int i = 0; i < 4; ++i)
    gt.push_back(frame_from(random_grid(rng), random_grid(rng)));
  Accumulator acc;
  for (const auto& f : gt) accumulate_frame(acc, f, f, 0.1);
  CHECK(acc.temporal_accuracy() == 1.0);
  CHECK(acc.contact_iou() == 1.0);
  CHECK(acc.volumetric_iou() == 1.0);
  CHECK(acc.mae() == 0.0);
  CHECK(acc.frames == 4);
  CHECK(acc.hands == 8);
}

namespace {

Episode make_episode(const std::string& id, const std::string& task,
                     Scenario scen, int n_frames, std::uint64_t seed,
                     const model::ModelConfig& mc) {
  synth::GenConfig gc;
  gc.image_size = mc.image_size;
  gc.patch_size = mc.patch;
  auto script = synth::generate_script(seed, gc);
  Episode ep;
  ep.meta.episode_id = id;
  ep.meta.task = task;
  ep.meta.scenario = scen;
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < n_frames; ++t) {
    FrameRecord f;
    f.frame_index = t;
    f.ts = {t / kFps + 0.001};
    for (ViewId v : kAllViews) f.images[v] = synth::render_frame(script, t, v, gc);
    ep.frames.push_back(std::move(f));
    CanonicalTactileGrid g;
    for (int c = 0; c < kGridCells; ++c) {
      g.left.set(c / kGridSize, c % kGridSize, u(rng));
      g.right.set(c / kGridSize, c % kGridSize, u(rng));
    }
    ep.canonical_pressure.push_back(g);
  }
  return ep;
}

}  // namespace

TEST_CASE("evaluate reports per scenario and overall with full frame coverage") {
  model::ModelConfig mc;
  mc.D = 8;
  mc.heads = 2;
  mc.T = 2;
  mc.image_size = 28;
  mc.patch = 14;
  mc.decoder_hidden = 16;
  auto params = model::init_params<double>(mc);

  // 5 frames with T=2: windows [0,1], [2,3] and a tail window [3,4] that
  // only counts frame 4 -- every frame is scored exactly once
  auto e1 = make_episode("e1", "pick", Scenario::Home, 5, 21, mc);
  auto e2 = make_episode("e2", "pour", Scenario::Workbench, 4, 22, mc);
  EvalConfig cfg;
  auto reports =
      evaluate(params, {&e1, &e2}, model::ViewSet::all(), cfg);
  REQUIRE(reports.count("home"));
  REQUIRE(reports.count("workbench"));
  REQUIRE(reports.count("overall"));
  CHECK(reports["home"].frames == 5);
  CHECK(reports["workbench"].frames == 4);
  CHECK(reports["overall"].frames == 9);
  CHECK(reports["overall"].hands == 18);
  CHECK(reports["overall"].view_label == "ego,wl,wr");
  for (const auto& [k, r] : reports) {
    CHECK(r.temporal_accuracy >= 0.0);
    CHECK(r.temporal_accuracy <= 1.0);
    CHECK(r.contact_iou >= 0.0);
    CHECK(r.contact_iou <= 1.0);
    CHECK(r.volumetric_iou >= 0.0);
    CHECK(r.volumetric_iou <= 1.0);
    CHECK(r.mae >= 0.0);
  }

  // lightweight: one trajectory per task category
  auto e3 = make_episode("e3", "pick", Scenario::Home, 4, 23, mc);
  cfg.lightweight = true;
  auto lw = evaluate(params, {&e1, &e3, &e2}, model::ViewSet::all(), cfg);
  CHECK(lw["overall"].frames == 9);  // e3 shares e1's task and is skipped

  // max_trajectories cap
  cfg.lightweight = false;
  cfg.max_trajectories = 1;
  auto capped = evaluate(params, {&e1, &e2}, model::ViewSet::all(), cfg);
  CHECK(capped["overall"].frames == 5);

  CHECK_THROWS_AS(evaluate(params, {}, model::ViewSet::all(), EvalConfig{}),
                  Error);
}

TEST_CASE("report formatting reproduces the published relative changes") {
  MetricsReport base;
  base.view_label = "ego";
  base.temporal_accuracy = 0.8123;
  base.contact_iou = 0.4792;
  base.volumetric_iou = 0.4311;
  base.mae = 0.0421;

  MetricsReport multi;
  multi.view_label = "ego,wl,wr";
  multi.temporal_accuracy = 0.8123;
  multi.contact_iou = 0.5030;
  multi.volumetric_iou = 0.4575;
  multi.mae = 0.0390;

  auto table = report_table(base, {multi});
  CHECK(table.find("+5.0%") != std::string::npos);   // 0.4792 -> 0.5030
  CHECK(table.find("↑") != std::string::npos);
  CHECK(table.find("↓") != std::string::npos);       // MAE fell
  CHECK(table.find("+0.0%") != std::string::npos);   // unchanged T.Acc

  // the inverse direction: full -> ego-only V.IoU drop of 5.8%
  auto inv = report_table(multi, {base});
  CHECK(inv.find("-5.8%") != std::string::npos);

  CHECK_THROWS_AS(report_table(MetricsReport{}, {base}), Error);
}

TEST_CASE("report round-trips through its JSON summary") {
  MetricsReport r;
  r.temporal_accuracy = 0.9;
  r.contact_iou = 0.5;
  r.volumetric_iou = 0.45;
  r.mae = 0.03;
  r.frames = 120;
  r.hands = 240;
  r.scenario = "overall";
  r.view_label = "ego,wl";
  auto r2 = MetricsReport::from_json(r.to_json());
  CHECK(r2.contact_iou == r.contact_iou);
  CHECK(r2.frames == r.frames);
  CHECK(r2.view_label == r.view_label);
  CHECK(r2.scenario == r.scenario);
}
