#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "touchbench/core.hpp"
#include "touchbench/model.hpp"

// Metric suite: temporal contact accuracy, contact IoU, volumetric IoU and
// MAE over canonical tactile grids, plus the view-subset evaluation harness
// and relative-change report formatting.

namespace tb::metrics {

struct EvalConfig {
  double tau = 0.1;           // contact threshold on normalized pressure
  int max_trajectories = 1000;
  bool lightweight = false;   // one trajectory per task category
  bool pooled_temporal = false;  // pool both hands into one contact bit per frame
  std::uint64_t seed = 0;

  void validate() const {
    if (!(tau > 0)) throw Error("EvalConfig: tau must be > 0");
    if (max_trajectories < 1) throw Error("EvalConfig: max_trajectories must be >= 1");
  }
};

struct MetricsReport {
  double temporal_accuracy = 0;
  double contact_iou = 0;
  double volumetric_iou = 0;
  double mae = 0;
  std::int64_t frames = 0;
  std::int64_t hands = 0;
  std::string scenario;    // "overall" for the pooled report
  std::string view_label;  // e.g. "ego,wl,wr"
  double tau = 0.1;

  nlohmann::json to_json() const {
    return {{"temporal_accuracy", temporal_accuracy},
            {"contact_iou", contact_iou},
            {"volumetric_iou", volumetric_iou},
            {"mae", mae},
            {"frames", frames},
            {"hands", hands},
            {"scenario", scenario},
            {"view_label", view_label},
            {"tau", tau}};
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.temporal_accuracy = j.at("temporal_accuracy").get<double>();
    r.contact_iou = j.at("contact_iou").get<double>();
    r.volumetric_iou = j.at("volumetric_iou").get<double>();
    r.mae = j.at("mae").get<double>();
    r.frames = j.at("frames").get<std::int64_t>();
    r.hands = j.at("hands").get<std::int64_t>();
    r.scenario = j.at("scenario").get<std::string>();
    r.view_label = j.at("view_label").get<std::string>();
    r.tau = j.at("tau").get<double>();
    return r;
  }
};

/// Binary contact mask: a cell is in contact iff valid and strictly above tau.
inline std::array<bool, kGridCells> binarize(const HandGrid& g, double tau) {
  if (!(tau > 0)) throw Error("binarize: tau must be > 0");
  std::array<bool, kGridCells> out{};
  for (int c = 0; c < kGridCells; ++c) out[c] = g.valid[c] && g.v[c] > tau;
  return out;
}

/// Streaming accumulator for all four metrics. Merging accumulators is
/// associative, so dataset aggregation is order- and partition-independent.
struct Accumulator {
  std::int64_t units = 0, units_correct = 0;  // temporal contact agreement
  std::int64_t inter = 0, uni = 0;            // binary contact IoU
  double sum_min = 0, sum_max = 0;            // volumetric IoU
  double abs_err = 0;                         // MAE numerator
  std::int64_t cells = 0;                     // valid cells seen
  std::int64_t frames = 0, hands = 0;

  void merge(const Accumulator& o) {
    units += o.units; units_correct += o.units_correct;
    inter += o.inter; uni += o.uni;
    sum_min += o.sum_min; sum_max += o.sum_max;
    abs_err += o.abs_err; cells += o.cells;
    frames += o.frames; hands += o.hands;
  }

  /// Cell-level terms for one hand; contact bits are the caller's business.
  void add_hand(const HandGrid& pred, const HandGrid& gt, double tau) {
    for (int c = 0; c < kGridCells; ++c) {
      if (!(pred.valid[c] && gt.valid[c])) continue;
      const double p = pred.v[c], g = gt.v[c];
      const bool bp = p > tau, bg = g > tau;
      inter += bp && bg;
      uni += bp || bg;
      sum_min += std::min(p, g);
      sum_max += std::max(p, g);
      abs_err += std::abs(p - g);
      ++cells;
    }
    ++hands;
  }

  double temporal_accuracy() const {
    return units ? static_cast<double>(units_correct) / units : 1.0;
  }
  double contact_iou() const {
    return uni ? static_cast<double>(inter) / uni : 1.0;
  }
  double volumetric_iou() const {
    return sum_max > 0 ? sum_min / sum_max : 1.0;
  }
  double mae() const { return cells ? abs_err / cells : 0.0; }

  MetricsReport report(double tau) const {
    MetricsReport r;
    r.temporal_accuracy = temporal_accuracy();
    r.contact_iou = contact_iou();
    r.volumetric_iou = volumetric_iou();
    r.mae = mae();
    r.frames = frames;
    r.hands = hands;
    r.tau = tau;
    return r;
  }
};

namespace detail {

inline bool hand_contact(const HandGrid& g, double tau) {
  for (int c = 0; c < kGridCells; ++c)
    if (g.valid[c] && g.v[c] > tau) return true;
  return false;
}

}  // namespace detail

/// Accumulates one frame pair into `acc`: cell terms per hand plus the
/// temporal contact-agreement units (per hand, or one pooled bit per frame).
inline void accumulate_frame(Accumulator& acc, const CanonicalTactileGrid& pred,
                             const CanonicalTactileGrid& gt, double tau,
                             bool pooled_temporal = false) {
  acc.add_hand(pred.left, gt.left, tau);
  acc.add_hand(pred.right, gt.right, tau);
  if (pooled_temporal) {
    const bool bp = detail::hand_contact(pred.left, tau) ||
                    detail::hand_contact(pred.right, tau);
    const bool bg = detail::hand_contact(gt.left, tau) ||
                    detail::hand_contact(gt.right, tau);
    ++acc.units;
    acc.units_correct += bp == bg;
  } else {
    for (HandSide s : {HandSide::Left, HandSide::Right}) {
      const bool bp = detail::hand_contact(pred.hand(s), tau);
      const bool bg = detail::hand_contact(gt.hand(s), tau);
      ++acc.units;
      acc.units_correct += bp == bg;
    }
  }
  ++acc.frames;
}

namespace detail {

inline Accumulator accumulate_seq(const std::vector<CanonicalTactileGrid>& pred,
                                  const std::vector<CanonicalTactileGrid>& gt,
                                  double tau, bool pooled = false) {
  if (pred.size() != gt.size())
    throw ShapeError("metrics: sequence length mismatch: " +
                     std::to_string(pred.size()) + " vs " +
                     std::to_string(gt.size()));
  Accumulator acc;
  for (std::size_t i = 0; i < pred.size(); ++i)
    accumulate_frame(acc, pred[i], gt[i], tau, pooled);
  return acc;
}

}  // namespace detail

inline double temporal_accuracy(const std::vector<CanonicalTactileGrid>& pred,
                                const std::vector<CanonicalTactileGrid>& gt,
                                double tau, bool pooled = false) {
  return detail::accumulate_seq(pred, gt, tau, pooled).temporal_accuracy();
}

inline double contact_iou(const std::vector<CanonicalTactileGrid>& pred,
                          const std::vector<CanonicalTactileGrid>& gt, double tau) {
  return detail::accumulate_seq(pred, gt, tau).contact_iou();
}

inline double volumetric_iou(const std::vector<CanonicalTactileGrid>& pred,
                             const std::vector<CanonicalTactileGrid>& gt) {
  return detail::accumulate_seq(pred, gt, 0.1).volumetric_iou();
}

inline double mae(const std::vector<CanonicalTactileGrid>& pred,
                  const std::vector<CanonicalTactileGrid>& gt) {
  return detail::accumulate_seq(pred, gt, 0.1).mae();
}

// ---------------------------------------------------------------------------
// Evaluation harness

namespace detail {

/// Non-overlapping clip starts covering the episode; the final window is
/// anchored to the end and only its previously uncovered frames count.
struct Window {
  int start;
  int first_counted;  // offset within the window where accumulation begins
};

inline std::vector<Window> coverage_windows(int n, int T) {
  std::vector<Window> out;
  int s = 0;
  for (; s + T <= n; s += T) out.push_back({s, 0});
  if (s < n && n >= T) out.push_back({n - T, T - (n - s)});
  return out;
}

template <class S>
CanonicalTactileGrid grid_from_output(const ad::Tensor<S>& out, int t,
                                      const CanonicalTactileGrid& mask_src) {
  CanonicalTactileGrid g;
  for (int h = 0; h < 2; ++h) {
    HandGrid& hg = h == 0 ? g.left : g.right;
    const HandGrid& m = h == 0 ? mask_src.left : mask_src.right;
    for (int c = 0; c < kGridCells; ++c)
      if (m.valid[c])
        hg.set(c / kGridSize, c % kGridSize,
               static_cast<double>(out.values()[(t * 2 + h) * kGridCells + c]));
  }
  return g;
}

}  // namespace detail

/// Runs the model over clips covering each episode and reports metrics per
/// scenario plus an "overall" entry. Accumulation is streaming: only one
/// clip's activations live at a time.
template <class S>
std::map<std::string, MetricsReport> evaluate(
    const model::ModelParams<S>& params, const std::vector<const Episode*>& split,
    const model::ViewSet& views, const EvalConfig& cfg) {
  cfg.validate();
  views.validate();
  if (split.empty()) throw Error("evaluate: empty split");
  const int T = params.cfg.T;

  std::vector<const Episode*> chosen;
  std::set<std::string> seen_tasks;
  for (const Episode* ep : split) {
    if (static_cast<int>(chosen.size()) >= cfg.max_trajectories) break;
    if (static_cast<int>(ep->frames.size()) < T) continue;
    if (ep->canonical_pressure.size() != ep->frames.size())
      throw Error("evaluate: episode " + ep->meta.episode_id +
                  " lacks canonical pressure");
    if (cfg.lightweight && !seen_tasks.insert(ep->meta.task).second) continue;
    chosen.push_back(ep);
  }
  if (chosen.empty()) throw Error("evaluate: no episode long enough for T=" +
                                  std::to_string(T));

  std::map<std::string, Accumulator> per_scenario;
  Accumulator overall;
  for (const Episode* ep : chosen) {
    Accumulator acc;
    const int n = static_cast<int>(ep->frames.size());
    for (const auto& win : detail::coverage_windows(n, T)) {
      model::ClipInput in;
      for (int k = 0; k < T; ++k) {
        const FrameRecord& f = ep->frames[win.start + k];
        in.pose.push_back(&f.pose);
        for (ViewId v : views.canonical())
          in.images[v].push_back(&f.images.at(v));
      }
      auto out = model::forward(params, in, views);
      for (int k = win.first_counted; k < T; ++k) {
        const CanonicalTactileGrid& gt = ep->canonical_pressure[win.start + k];
        accumulate_frame(acc, detail::grid_from_output(out, k, gt), gt, cfg.tau,
                         cfg.pooled_temporal);
      }
    }
    per_scenario[to_string(ep->meta.scenario)].merge(acc);
    overall.merge(acc);
  }

  std::map<std::string, MetricsReport> reports;
  for (const auto& [scen, acc] : per_scenario) {
    MetricsReport r = acc.report(cfg.tau);
    r.scenario = scen;
    r.view_label = views.label();
    reports[scen] = r;
  }
  MetricsReport r = overall.report(cfg.tau);
  r.scenario = "overall";
  r.view_label = views.label();
  reports["overall"] = r;
  return reports;
}

// ---------------------------------------------------------------------------
// Report formatting

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// "0.5030 (+5.0%↑)": value, signed relative change vs. the baseline and
/// an arrow for the direction of change. For MAE a falling value (down
/// arrow) is the improvement.
inline std::string fmt_change(double v, double b) {
  char buf[48];
  const double rel = (v - b) / b * 100.0;
  const char* arrow = v > b ? "↑" : v < b ? "↓" : "";
  std::snprintf(buf, sizeof buf, "%.4f (%+.1f%%%s)", v, rel, arrow);
  return buf;
}

}  // namespace detail

/// Plain-text table of variant reports against a required baseline row.
inline std::string report_table(const MetricsReport& baseline,
                                const std::vector<MetricsReport>& variants) {
  if (baseline.view_label.empty())
    throw Error("report_table: baseline report is missing");
  std::string out;
  auto row = [&](const std::string& label, const std::vector<std::string>& cells) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-16s", label.c_str());
    out += buf;
    for (const auto& c : cells) {
      std::snprintf(buf, sizeof buf, "  %-18s", c.c_str());
      out += buf;
    }
    out += "\n";
  };
  row("views", {"T.Acc", "C.IoU", "V.IoU", "MAE"});
  row(baseline.view_label + " (base)",
      {detail::fmt(baseline.temporal_accuracy), detail::fmt(baseline.contact_iou),
       detail::fmt(baseline.volumetric_iou), detail::fmt(baseline.mae)});
  for (const auto& v : variants)
    row(v.view_label,
        {detail::fmt_change(v.temporal_accuracy, baseline.temporal_accuracy),
         detail::fmt_change(v.contact_iou, baseline.contact_iou),
         detail::fmt_change(v.volumetric_iou, baseline.volumetric_iou),
         detail::fmt_change(v.mae, baseline.mae)});
  return out;
}

}  // namespace tb::metrics
