#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "touchbench/container.hpp"
#include "touchbench/core.hpp"
#include "touchbench/tensor.hpp"

// The multi-view tactile prediction network: frozen patch featurizer with
// view embeddings, gated cross-view fusion, temporal transformer, pose
// encoder, pose-vision cross-attention, and bilateral joint-level decoders.

namespace tb::model {

struct ModelConfig {
  int D = 32;           // feature width
  int heads = 4;
  int T = 8;            // clip length
  int image_size = 56;
  int patch = 14;
  int cross_view_layers = 1;
  int temporal_layers = 1;
  int pose_layers = 1;
  int ff_mult = 2;
  int decoder_hidden = 128;
  std::uint64_t featurizer_seed = 7;
  std::uint64_t init_seed = 1;

  int grid_side() const { return image_size / patch; }
  int n_tokens() const { return grid_side() * grid_side(); }
  int patch_dim() const { return patch * patch * 3; }

  void validate() const {
    if (D <= 0 || heads <= 0 || D % heads != 0)
      throw Error("ModelConfig: D must be divisible by heads");
    if (image_size <= 0 || patch <= 0 || image_size % patch != 0)
      throw Error("ModelConfig: image size must be divisible by patch");
    if (T < 1) throw Error("ModelConfig: T must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"D", D},
            {"heads", heads},
            {"T", T},
            {"image_size", image_size},
            {"patch", patch},
            {"cross_view_layers", cross_view_layers},
            {"temporal_layers", temporal_layers},
            {"pose_layers", pose_layers},
            {"ff_mult", ff_mult},
            {"decoder_hidden", decoder_hidden},
            {"featurizer_seed", featurizer_seed},
            {"init_seed", init_seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.D = j.at("D").get<int>();
    c.heads = j.at("heads").get<int>();
    c.T = j.at("T").get<int>();
    c.image_size = j.at("image_size").get<int>();
    c.patch = j.at("patch").get<int>();
    c.cross_view_layers = j.at("cross_view_layers").get<int>();
    c.temporal_layers = j.at("temporal_layers").get<int>();
    c.pose_layers = j.at("pose_layers").get<int>();
    c.ff_mult = j.at("ff_mult").get<int>();
    c.decoder_hidden = j.at("decoder_hidden").get<int>();
    c.featurizer_seed = j.at("featurizer_seed").get<std::uint64_t>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.validate();
    return c;
  }
};

/// Which camera views take part; the egocentric view is always present.
struct ViewSet {
  std::set<ViewId> views;

  static ViewSet ego_only() { return {{ViewId::Ego}}; }
  static ViewSet all() { return {{ViewId::Ego, ViewId::WristLeft, ViewId::WristRight}}; }
  static ViewSet with(std::initializer_list<ViewId> v) {
    ViewSet s{{v}};
    s.validate();
    return s;
  }

  void validate() const {
    if (!views.count(ViewId::Ego)) throw Error("ViewSet: egocentric view is required");
  }

  /// Fixed internal order: Ego, wrist-left, wrist-right.
  std::vector<ViewId> canonical() const {
    std::vector<ViewId> out;
    for (ViewId v : kAllViews)
      if (views.count(v)) out.push_back(v);
    return out;
  }
  std::size_t size() const { return views.size(); }

  std::string label() const {
    std::string s;
    for (ViewId v : canonical()) {
      if (!s.empty()) s += ",";
      s += to_string(v);
    }
    return s;
  }
};

// ---------------------------------------------------------------------------
// Parameters

template <class S>
struct AttnParams {
  using Ten = ad::Tensor<S>;
  Ten Wq, bq, Wk, bk, Wv, bv, Wo, bo;
};

template <class S>
struct BlockParams {
  using Ten = ad::Tensor<S>;
  Ten ln1_g, ln1_b;
  AttnParams<S> attn;
  Ten ln2_g, ln2_b, ff1, fb1, ff2, fb2;
};

template <class S>
struct ModelParams {
  using Ten = ad::Tensor<S>;
  ModelConfig cfg;

  // frozen (never visited by the optimizer)
  Ten feat_W;        // (patch_dim, D)
  Ten feat_pos;      // (N, D) 2-D sinusoidal
  Ten temporal_pos;  // (T, D)

  // trainable
  Ten view_embed;  // (3, D)
  std::vector<BlockParams<S>> cross_view;
  Ten gate_w1, gate_b1, gate_w2, gate_b2;  // D -> D -> 1
  std::vector<BlockParams<S>> temporal;
  Ten pose_w, pose_b;  // 3 -> D
  Ten joint_embed;     // (42, D)
  std::vector<BlockParams<S>> pose_blocks;
  AttnParams<S> pose_vision;
  Ten dec_l_w1, dec_l_b1, dec_l_w2, dec_l_b2;  // 21*D -> hidden -> 441
  Ten dec_r_w1, dec_r_b1, dec_r_w2, dec_r_b2;

  template <class Fn>
  void visit(Fn&& fn) {
    auto attn = [&](const std::string& p, AttnParams<S>& a) {
      fn(p + ".Wq", a.Wq); fn(p + ".bq", a.bq);
      fn(p + ".Wk", a.Wk); fn(p + ".bk", a.bk);
      fn(p + ".Wv", a.Wv); fn(p + ".bv", a.bv);
      fn(p + ".Wo", a.Wo); fn(p + ".bo", a.bo);
    };
    auto block = [&](const std::string& p, BlockParams<S>& b) {
      fn(p + ".ln1_g", b.ln1_g); fn(p + ".ln1_b", b.ln1_b);
      attn(p + ".attn", b.attn);
      fn(p + ".ln2_g", b.ln2_g); fn(p + ".ln2_b", b.ln2_b);
      fn(p + ".ff1", b.ff1); fn(p + ".fb1", b.fb1);
      fn(p + ".ff2", b.ff2); fn(p + ".fb2", b.fb2);
    };
    fn("view_embed", view_embed);
    for (std::size_t i = 0; i < cross_view.size(); ++i)
      block("cross_view." + std::to_string(i), cross_view[i]);
    fn("gate_w1", gate_w1); fn("gate_b1", gate_b1);
    fn("gate_w2", gate_w2); fn("gate_b2", gate_b2);
    for (std::size_t i = 0; i < temporal.size(); ++i)
      block("temporal." + std::to_string(i), temporal[i]);
    fn("pose_w", pose_w); fn("pose_b", pose_b);
    fn("joint_embed", joint_embed);
    for (std::size_t i = 0; i < pose_blocks.size(); ++i)
      block("pose." + std::to_string(i), pose_blocks[i]);
    attn("pose_vision", pose_vision);
    fn("dec_l_w1", dec_l_w1); fn("dec_l_b1", dec_l_b1);
    fn("dec_l_w2", dec_l_w2); fn("dec_l_b2", dec_l_b2);
    fn("dec_r_w1", dec_r_w1); fn("dec_r_b1", dec_r_b1);
    fn("dec_r_w2", dec_r_w2); fn("dec_r_b2", dec_r_b2);
  }

  void zero_grad() {
    visit([](const std::string&, Ten& t) { t.zero_grad(); });
  }
};

namespace detail {

template <class S>
ad::Tensor<S> sinusoidal_1d(int len, int D) {
  std::vector<S> v(static_cast<std::size_t>(len) * D);
  for (int p = 0; p < len; ++p)
    for (int i = 0; i < D / 2; ++i) {
      const double f = p / std::pow(10000.0, 2.0 * i / D);
      v[p * D + 2 * i] = static_cast<S>(std::sin(f));
      v[p * D + 2 * i + 1] = static_cast<S>(std::cos(f));
    }
  return ad::Tensor<S>::from_values({len, D}, std::move(v));
}

template <class S>
ad::Tensor<S> sinusoidal_2d(int side, int D) {
  // first half encodes the column, second half the row
  std::vector<S> v(static_cast<std::size_t>(side) * side * D);
  const int half = D / 2;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      S* out = &v[(r * side + c) * D];
      for (int i = 0; i < half / 2; ++i) {
        const double fc = c / std::pow(10000.0, 2.0 * i / half);
        const double fr = r / std::pow(10000.0, 2.0 * i / half);
        out[2 * i] = static_cast<S>(std::sin(fc));
        out[2 * i + 1] = static_cast<S>(std::cos(fc));
        out[half + 2 * i] = static_cast<S>(std::sin(fr));
        out[half + 2 * i + 1] = static_cast<S>(std::cos(fr));
      }
    }
  return ad::Tensor<S>::from_values({side * side, D}, std::move(v));
}

template <class S>
AttnParams<S> init_attn(Rng& rng, int D) {
  using Ten = ad::Tensor<S>;
  const S sd = static_cast<S>(1.0 / std::sqrt(double(D)));
  AttnParams<S> a;
  a.Wq = Ten::randn({D, D}, rng, sd, true);
  a.bq = Ten::zeros({D}, true);
  a.Wk = Ten::randn({D, D}, rng, sd, true);
  a.bk = Ten::zeros({D}, true);
  a.Wv = Ten::randn({D, D}, rng, sd, true);
  a.bv = Ten::zeros({D}, true);
  a.Wo = Ten::randn({D, D}, rng, sd, true);
  a.bo = Ten::zeros({D}, true);
  return a;
}

template <class S>
BlockParams<S> init_block(Rng& rng, int D, int ff) {
  using Ten = ad::Tensor<S>;
  BlockParams<S> b;
  b.ln1_g = Ten::filled({D}, S(1), true);
  b.ln1_b = Ten::zeros({D}, true);
  b.attn = init_attn<S>(rng, D);
  b.ln2_g = Ten::filled({D}, S(1), true);
  b.ln2_b = Ten::zeros({D}, true);
  b.ff1 = Ten::randn({D, ff}, rng, static_cast<S>(1.0 / std::sqrt(double(D))), true);
  b.fb1 = Ten::zeros({ff}, true);
  b.ff2 = Ten::randn({ff, D}, rng, static_cast<S>(1.0 / std::sqrt(double(ff))), true);
  b.fb2 = Ten::zeros({D}, true);
  return b;
}

}  // namespace detail

template <class S>
ModelParams<S> init_params(const ModelConfig& cfg) {
  cfg.validate();
  using Ten = ad::Tensor<S>;
  ModelParams<S> p;
  p.cfg = cfg;
  const int D = cfg.D, ff = cfg.D * cfg.ff_mult;

  Rng frng(mix_seed(cfg.featurizer_seed, "featurizer"));
  p.feat_W = Ten::randn({cfg.patch_dim(), D}, frng,
                        static_cast<S>(1.0 / std::sqrt(double(cfg.patch_dim()))));
  p.feat_pos = detail::sinusoidal_2d<S>(cfg.grid_side(), D);
  p.temporal_pos = detail::sinusoidal_1d<S>(cfg.T, D);

  Rng rng(mix_seed(cfg.init_seed, "params"));
  p.view_embed = Ten::randn({3, D}, rng, S(0.02), true);
  for (int i = 0; i < cfg.cross_view_layers; ++i)
    p.cross_view.push_back(detail::init_block<S>(rng, D, ff));
  p.gate_w1 = Ten::randn({D, D}, rng, static_cast<S>(1.0 / std::sqrt(double(D))), true);
  p.gate_b1 = Ten::zeros({D}, true);
  p.gate_w2 = Ten::randn({D, 1}, rng, static_cast<S>(1.0 / std::sqrt(double(D))), true);
  p.gate_b2 = Ten::zeros({1}, true);
  for (int i = 0; i < cfg.temporal_layers; ++i)
    p.temporal.push_back(detail::init_block<S>(rng, D, ff));
  p.pose_w = Ten::randn({3, D}, rng, static_cast<S>(1.0 / std::sqrt(3.0)), true);
  p.pose_b = Ten::zeros({D}, true);
  p.joint_embed = Ten::randn({kJoints, D}, rng, S(0.02), true);
  for (int i = 0; i < cfg.pose_layers; ++i)
    p.pose_blocks.push_back(detail::init_block<S>(rng, D, ff));
  p.pose_vision = detail::init_attn<S>(rng, D);
  const int dl_in = 21 * D, hid = cfg.decoder_hidden;
  auto dec = [&](Ten& w1, Ten& b1, Ten& w2, Ten& b2) {
    w1 = Ten::randn({dl_in, hid}, rng, static_cast<S>(1.0 / std::sqrt(double(dl_in))),
                    true);
    b1 = Ten::zeros({hid}, true);
    w2 = Ten::randn({hid, kGridCells}, rng,
                    static_cast<S>(1.0 / std::sqrt(double(hid))), true);
    b2 = Ten::zeros({kGridCells}, true);
  };
  dec(p.dec_l_w1, p.dec_l_b1, p.dec_l_w2, p.dec_l_b2);
  dec(p.dec_r_w1, p.dec_r_b1, p.dec_r_w2, p.dec_r_b2);
  return p;
}

// ---------------------------------------------------------------------------
// Forward building blocks

namespace detail {

template <class S>
ad::Tensor<S> affine_ln(const ad::Tensor<S>& x, const ad::Tensor<S>& g,
                        const ad::Tensor<S>& b) {
  return ad::add(ad::mul(ad::layernorm(x), g), b);
}

template <class S>
ad::Tensor<S> linear(const ad::Tensor<S>& x, const ad::Tensor<S>& W,
                     const ad::Tensor<S>& b) {
  return ad::add(ad::matmul(x, W), b);
}

/// Multi-head attention: q_in (Lq, D) queries kv_in (Lk, D).
template <class S>
ad::Tensor<S> mha(const AttnParams<S>& a, const ad::Tensor<S>& q_in,
                  const ad::Tensor<S>& kv_in, int heads) {
  const int D = q_in.shape().back();
  const int dh = D / heads;
  auto q = linear(q_in, a.Wq, a.bq);
  auto k = linear(kv_in, a.Wk, a.bk);
  auto v = linear(kv_in, a.Wv, a.bv);
  std::vector<ad::Tensor<S>> outs;
  for (int h = 0; h < heads; ++h) {
    auto qh = ad::slice(q, 1, h * dh, dh);
    auto kh = ad::slice(k, 1, h * dh, dh);
    auto vh = ad::slice(v, 1, h * dh, dh);
    outs.push_back(ad::scaled_dot_product_attention(qh, kh, vh));
  }
  return linear(ad::concat<S>(outs, 1), a.Wo, a.bo);
}

/// Pre-LN transformer block over a (L, D) sequence.
template <class S>
ad::Tensor<S> block(const BlockParams<S>& b, const ad::Tensor<S>& x, int heads) {
  auto h = ad::add(x, mha(b.attn, affine_ln(x, b.ln1_g, b.ln1_b),
                          affine_ln(x, b.ln1_g, b.ln1_b), heads));
  auto ff = linear(ad::gelu(linear(affine_ln(h, b.ln2_g, b.ln2_b), b.ff1, b.fb1)),
                   b.ff2, b.fb2);
  return ad::add(h, ff);
}

}  // namespace detail

/// Frozen featurization of one image into N patch tokens. Token order is
/// row-major over the patch grid.
template <class S>
ad::Tensor<S> patch_featurize(const ImageFrame& img, const ModelParams<S>& p,
                              bool add_positions = true) {
  const ModelConfig& cfg = p.cfg;
  if (img.width != cfg.image_size || img.height != cfg.image_size)
    throw ShapeError("patch_featurize: image " + std::to_string(img.width) + "x" +
                     std::to_string(img.height) + ", config wants " +
                     std::to_string(cfg.image_size));
  const int side = cfg.grid_side(), P = cfg.patch;
  std::vector<S> patches(static_cast<std::size_t>(cfg.n_tokens()) * cfg.patch_dim());
  for (int pr = 0; pr < side; ++pr)
    for (int pc = 0; pc < side; ++pc) {
      S* out = &patches[(pr * side + pc) * cfg.patch_dim()];
      int at = 0;
      for (int y = 0; y < P; ++y)
        for (int x = 0; x < P; ++x)
          for (int c = 0; c < 3; ++c)
            out[at++] = static_cast<S>(img.at(pr * P + y, pc * P + x, c));
    }
  auto tokens = ad::matmul(
      ad::Tensor<S>::from_values({cfg.n_tokens(), cfg.patch_dim()}, std::move(patches)),
      p.feat_W);
  if (add_positions) tokens = ad::add(tokens, p.feat_pos);
  return tokens;  // constant: feat_W never requires grad
}

/// Per-clip input: T frames of images per view plus the hand pose stream.
struct ClipInput {
  std::map<ViewId, std::vector<const ImageFrame*>> images;  // T frames per view
  std::vector<const HandPoseFrame*> pose;                   // T frames

  static ClipInput from_clip(const Clip& clip) {
    ClipInput in;
    for (const FrameRecord* f : clip.frames) {
      in.pose.push_back(&f->pose);
      for (const auto& [view, img] : f->images) in.images[view].push_back(&img);
    }
    return in;
  }
};

/// Intermediate activations surfaced for tests and analysis.
template <class S>
struct ActivationBundle {
  std::vector<std::vector<S>> gates;  // per frame, per present view (canonical order)
  std::vector<ad::Tensor<S>> fused;   // per frame (N, D)
};

/// Bilateral decode of fused joint features Z (42, D) -> (2, 441) in (0,1).
/// Joints 0..20 feed the left decoder, 21..41 the right one.
template <class S>
ad::Tensor<S> decode(const ModelParams<S>& p, const ad::Tensor<S>& Z) {
  const int D = p.cfg.D;
  if (Z.shape() != ad::Shape{kJoints, D})
    throw ShapeError("decode: Z must be (42, D)");
  auto hand = [&](int j0, const ad::Tensor<S>& w1, const ad::Tensor<S>& b1,
                  const ad::Tensor<S>& w2, const ad::Tensor<S>& b2) {
    auto flat = ad::reshape(ad::slice(Z, 0, j0, 21), {1, 21 * D});
    auto hid = ad::gelu(detail::linear(flat, w1, b1));
    return ad::sigmoid(detail::linear(hid, w2, b2));  // (1, 441)
  };
  auto left = hand(0, p.dec_l_w1, p.dec_l_b1, p.dec_l_w2, p.dec_l_b2);
  auto right = hand(21, p.dec_r_w1, p.dec_r_b1, p.dec_r_w2, p.dec_r_b2);
  return ad::concat<S>({left, right}, 0);  // (2, 441)
}

template <class S>
ad::Tensor<S> forward(const ModelParams<S>& p, const ClipInput& clip,
                      const ViewSet& views, ActivationBundle<S>* acts = nullptr) {
  views.validate();
  const ModelConfig& cfg = p.cfg;
  const int T = cfg.T, N = cfg.n_tokens(), D = cfg.D;
  const auto order = views.canonical();
  if (static_cast<int>(clip.pose.size()) != T)
    throw ShapeError("forward: clip has " + std::to_string(clip.pose.size()) +
                     " pose frames, config wants " + std::to_string(T));
  for (ViewId v : order) {
    auto it = clip.images.find(v);
    if (it == clip.images.end() || static_cast<int>(it->second.size()) != T)
      throw Error(std::string("forward: missing frames for view ") + to_string(v));
  }

  // F_v = featurize + e_v, per view per frame
  std::map<ViewId, std::vector<ad::Tensor<S>>> F;
  for (ViewId v : order) {
    auto ev = ad::reshape(
        ad::slice(p.view_embed, 0, static_cast<int>(v), 1), {D});
    for (int t = 0; t < T; ++t)
      F[v].push_back(ad::add(patch_featurize(*clip.images.at(v)[t], p), ev));
  }

  // gated cross-view fusion, per frame
  std::vector<ad::Tensor<S>> fused(T);
  if (acts) acts->gates.assign(T, {});
  for (int t = 0; t < T; ++t) {
    std::vector<ad::Tensor<S>> summaries;
    for (ViewId v : order)
      summaries.push_back(ad::reshape(ad::mean(F[v][t], 0), {1, D}));
    auto s = ad::concat<S>(summaries, 0);  // (|V|, D)
    for (const auto& b : p.cross_view) s = detail::block(b, s, cfg.heads);
    auto g = detail::linear(ad::gelu(detail::linear(s, p.gate_w1, p.gate_b1)),
                            p.gate_w2, p.gate_b2);  // (|V|, 1)
    auto w = ad::softmax(ad::reshape(g, {static_cast<int>(order.size())}), 0);
    if (acts) acts->gates[t] = w.values();
    std::vector<ad::Tensor<S>> rows;
    for (ViewId v : order) rows.push_back(ad::reshape(F[v][t], {1, N * D}));
    auto fused2d = ad::matmul(ad::reshape(w, {1, static_cast<int>(order.size())}),
                              ad::concat<S>(rows, 0));
    fused[t] = ad::reshape(fused2d, {N, D});
    if (acts) acts->fused.push_back(fused[t]);
  }

  // temporal transformer per token index
  std::vector<std::vector<ad::Tensor<S>>> token_rows(T);  // [t][n] -> (1, D)
  for (int n = 0; n < N; ++n) {
    std::vector<ad::Tensor<S>> steps;
    for (int t = 0; t < T; ++t) steps.push_back(ad::slice(fused[t], 0, n, 1));
    auto seq = ad::add(ad::concat<S>(steps, 0), p.temporal_pos);  // (T, D)
    for (const auto& b : p.temporal) seq = detail::block(b, seq, cfg.heads);
    for (int t = 0; t < T; ++t) token_rows[t].push_back(ad::slice(seq, 0, t, 1));
  }
  std::vector<ad::Tensor<S>> H(T);
  for (int t = 0; t < T; ++t) H[t] = ad::concat<S>(token_rows[t], 0);  // (N, D)

  // pose encoder per frame
  std::vector<ad::Tensor<S>> G(T);
  for (int t = 0; t < T; ++t) {
    std::vector<S> pv(kJoints * 3);
    for (int j = 0; j < kJoints; ++j)
      for (int d = 0; d < 3; ++d) {
        const double x = clip.pose[t]->joints[j][d];
        if (!std::isfinite(x))
          throw Error("forward: non-finite joint position at frame " +
                      std::to_string(t) + ", joint " + std::to_string(j));
        pv[j * 3 + d] = static_cast<S>(x);
      }
    auto g = ad::add(
        detail::linear(ad::Tensor<S>::from_values({kJoints, 3}, std::move(pv)),
                       p.pose_w, p.pose_b),
        p.joint_embed);
    for (const auto& b : p.pose_blocks) g = detail::block(b, g, cfg.heads);
    G[t] = g;  // (42, D)
  }

  // pose-vision cross-attention and bilateral decoding
  std::vector<ad::Tensor<S>> maps;
  for (int t = 0; t < T; ++t) {
    auto Z = detail::mha(p.pose_vision, G[t], H[t], cfg.heads);  // (42, D)
    maps.push_back(ad::reshape(decode(p, Z), {1, 2, kGridCells}));
  }
  return ad::concat<S>(maps, 0);  // (T, 2, 441)
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class S>
void save_checkpoint(ModelParams<S>& params, const std::filesystem::path& file,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  container::Writer w(file);
  nlohmann::json meta;
  meta["checkpoint_version"] = kCheckpointVersion;
  meta["config"] = params.cfg.to_json();
  meta["extra"] = extra;
  w.add_bytes("checkpoint", meta.dump());
  params.visit([&](const std::string& name, ad::Tensor<S>& t) {
    std::vector<double> v(t.values().begin(), t.values().end());
    std::vector<std::int64_t> shape(t.shape().begin(), t.shape().end());
    w.add_vec("param/" + name, container::DType::F64, shape, v);
  });
  w.finish();
}

template <class S>
ModelParams<S> load_checkpoint(const std::filesystem::path& file,
                               nlohmann::json* extra = nullptr) {
  container::Reader r(file);
  auto meta = nlohmann::json::parse(r.read_string("checkpoint"));
  if (meta.at("checkpoint_version").get<std::uint32_t>() != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version");
  auto params = init_params<S>(ModelConfig::from_json(meta.at("config")));
  if (extra) *extra = meta.value("extra", nlohmann::json::object());
  params.visit([&](const std::string& name, ad::Tensor<S>& t) {
    auto v = r.read_as<double>("param/" + name);
    if (v.size() != t.size())
      throw ParseError("checkpoint param " + name + " has wrong size");
    for (std::size_t i = 0; i < v.size(); ++i)
      t.values_mut()[i] = static_cast<S>(v[i]);
  });
  return params;
}

}  // namespace tb::model
