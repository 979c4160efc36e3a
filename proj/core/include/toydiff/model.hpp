#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "toydiff/attention.hpp"
#include "toydiff/rng.hpp"
#include "toydiff/tape.hpp"
#include "toydiff/tensor.hpp"

namespace toydiff {

// ---- vocabulary -------------------------------------------------------------

namespace vocab {

inline constexpr int kPad = 0, kBos = 1, kSep = 2;
inline constexpr int kCircle = 3, kSquare = 4, kTriangle = 5, kCross = 6;
inline constexpr int kRed = 7, kGreen = 8, kBlue = 9, kYellow = 10, kPurple = 11,
                     kWhite = 12;
inline constexpr int kSolid = 13, kStriped = 14;
inline constexpr int kSize = 15;
inline constexpr int kMaxTokens = 16;

inline constexpr int kShapes[] = {kCircle, kSquare, kTriangle, kCross};
inline constexpr int kColors[] = {kRed, kGreen, kBlue, kYellow, kPurple, kWhite};
inline constexpr int kTextures[] = {kSolid, kStriped};

inline const char* name(int id) {
  static const char* kNames[kSize] = {"pad",    "bos",   "sep",    "circle", "square",
                                      "triangle", "cross", "red",    "green",  "blue",
                                      "yellow", "purple", "white",  "solid",  "striped"};
  check(id >= 0 && id < kSize, "vocab: id out of range");
  return kNames[id];
}

inline int id(const std::string& name_str) {
  for (int i = 0; i < kSize; ++i)
    if (name_str == name(i)) return i;
  throw std::invalid_argument("vocab: unknown token name '" + name_str + "'");
}

inline bool is_shape(int id) { return id >= kCircle && id <= kCross; }
inline bool is_color(int id) { return id >= kRed && id <= kWhite; }
inline bool is_texture(int id) { return id == kSolid || id == kStriped; }

// caption used for classifier-free guidance's unconditional branch
inline std::vector<int> null_caption() {
  std::vector<int> c(kMaxTokens, kPad);
  c[0] = kBos;
  return c;
}

}  // namespace vocab

// ---- architecture -----------------------------------------------------------

struct ModelConfig {
  int image = 32;     // square image side, pixels
  int channels = 3;   // RGB
  int patch = 4;      // patch side -> (image/patch)^2 spatial tokens
  int d_model = 64;   // embedding width
  int n_blocks = 4;   // transformer blocks
  int n_heads = 2;    // heads per attention
  int d_ff = 256;     // feed-forward hidden width
  int time_dim = 64;  // sinusoidal time feature width

  int grid() const { return image / patch; }
  int n_patches() const { return grid() * grid(); }
  int patch_feats() const { return channels * patch * patch; }
  int d_head() const { return d_model / n_heads; }

  void validate() const {
    check(image > 0 && patch > 0 && image % patch == 0, "model: image/patch mismatch");
    check(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, "model: d_model/heads mismatch");
    check(n_blocks > 0 && d_ff > 0 && time_dim > 0 && time_dim % 2 == 0, "model: bad sizes");
  }
};

// Named parameter tensors, shared so a fresh tape per forward pass can attach
// them without copying.
template <typename T>
struct DenoiserParams {
  ModelConfig cfg;
  std::vector<std::string> names;
  std::vector<std::shared_ptr<Tensor<T>>> tensors;

  Tensor<T>& add(const std::string& name, std::vector<int> shape) {
    names.push_back(name);
    tensors.push_back(std::make_shared<Tensor<T>>(std::move(shape)));
    return *tensors.back();
  }

  int index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("params: unknown tensor '" + name + "'");
  }

  const Tensor<T>& get(const std::string& name) const { return *tensors[index_of(name)]; }
  Tensor<T>& get(const std::string& name) { return *tensors[index_of(name)]; }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& t : tensors) n += t->numel();
    return n;
  }

  template <typename U>
  DenoiserParams<U> cast() const {
    DenoiserParams<U> out;
    out.cfg = cfg;
    out.names = names;
    for (const auto& t : tensors)
      out.tensors.push_back(std::make_shared<Tensor<U>>(t->template cast<U>()));
    return out;
  }
};

namespace detail {

template <typename T>
void gaussian_fill(Tensor<T>& t, Philox& g, double std_dev) {
  for (auto& v : t.data) v = static_cast<T>(g.normal() * std_dev);
}

}  // namespace detail

// Random initialization. The output projection starts at zero so an untrained
// model predicts zero noise, making the initial epsilon-MSE exactly the noise
// variance — a clean training baseline.
template <typename T>
DenoiserParams<T> init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  DenoiserParams<T> p;
  p.cfg = cfg;
  Philox g(seed, rng_stream::kInitParams);
  const int d = cfg.d_model;
  auto mat = [&](const std::string& name, int in, int out, double scale = 1.0) {
    detail::gaussian_fill(p.add(name, {in, out}), g, scale / std::sqrt(double(in)));
  };
  auto emb = [&](const std::string& name, int rows, int cols, double std_dev) {
    detail::gaussian_fill(p.add(name, {rows, cols}), g, std_dev);
  };
  auto vec = [&](const std::string& name, int n, T fill) {
    auto& t = p.add(name, {n});
    std::fill(t.data.begin(), t.data.end(), fill);
  };

  mat("patch_embed.w", cfg.patch_feats(), d);
  vec("patch_embed.b", d, T(0));
  emb("pos_patch", cfg.n_patches(), d, 0.02);
  emb("tok_embed", vocab::kSize, d, 0.5);
  emb("pos_tok", vocab::kMaxTokens, d, 0.02);
  mat("time.w1", cfg.time_dim, d);
  vec("time.b1", d, T(0));
  mat("time.w2", d, d);
  vec("time.b2", d, T(0));
  const double resid = 1.0 / std::sqrt(2.0 * cfg.n_blocks);
  for (int b = 0; b < cfg.n_blocks; ++b) {
    std::string pre = "blk" + std::to_string(b) + ".";
    for (const char* attn : {"self.", "cross."}) {
      mat(pre + attn + "wq", d, d);
      mat(pre + attn + "wk", d, d);
      mat(pre + attn + "wv", d, d);
      mat(pre + attn + "wo", d, d, resid);
      vec(pre + attn + "bo", d, T(0));
    }
    vec(pre + "ln1.g", d, T(1));
    vec(pre + "ln1.b", d, T(0));
    vec(pre + "ln2.g", d, T(1));
    vec(pre + "ln2.b", d, T(0));
    vec(pre + "ln3.g", d, T(1));
    vec(pre + "ln3.b", d, T(0));
    mat(pre + "ffn.w1", d, cfg.d_ff);
    vec(pre + "ffn.b1", cfg.d_ff, T(0));
    mat(pre + "ffn.w2", cfg.d_ff, d, resid);
    vec(pre + "ffn.b2", d, T(0));
  }
  vec("out.ln.g", d, T(1));
  vec("out.ln.b", d, T(0));
  p.add("out.w", {d, cfg.patch_feats()});  // zero-initialized
  vec("out.b", cfg.patch_feats(), T(0));
  return p;
}

// sinusoidal features of a raw timestep
template <typename T>
Tensor<T> time_features(int t, int dim) {
  Tensor<T> s({1, dim});
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
    s.data[i] = static_cast<T>(std::sin(t * freq));
    s.data[half + i] = static_cast<T>(std::cos(t * freq));
  }
  return s;
}

// A forward pass's handles: parameter leaves (tracked when training) plus
// outputs.
template <typename T>
struct ForwardResult {
  typename Tape<T>::Ref eps;  // predicted noise, shape {channels, image, image}
  AttentionBundle<T> bundle;  // filled when capture was requested
};

template <typename T>
struct ParamLeaves {
  std::vector<typename Tape<T>::Ref> refs;

  static ParamLeaves attach(Tape<T>& tape, const DenoiserParams<T>& p, bool track) {
    ParamLeaves out;
    out.refs.reserve(p.tensors.size());
    for (const auto& t : p.tensors) out.refs.push_back(tape.leaf(t, track));
    return out;
  }
};

// The toy denoiser: patchify -> add positional + time embeddings -> n_blocks
// of pre-LN {self-attention, cross-attention over caption tokens,
// feed-forward} -> layer norm -> linear -> unpatchify. Attention probability
// maps are captured per (block, head) when requested.
template <typename T>
ForwardResult<T> denoiser_forward(Tape<T>& tape, const DenoiserParams<T>& params,
                                  const ParamLeaves<T>& leaves, typename Tape<T>::Ref z,
                                  int t, const std::vector<int>& tokens, bool capture) {
  using Ref = typename Tape<T>::Ref;
  const ModelConfig& cfg = params.cfg;
  const int d = cfg.d_model, grid = cfg.grid(), np = cfg.n_patches();
  const int pf = cfg.patch_feats(), dh = cfg.d_head();
  const int n = static_cast<int>(tokens.size());
  check(n >= 1 && n <= vocab::kMaxTokens, "denoiser: token count out of range");
  for (int tok : tokens)
    check(tok >= 0 && tok < vocab::kSize, "denoiser: token id out of vocabulary");
  check(tape.val(z).shape == std::vector<int>{cfg.channels, cfg.image, cfg.image},
        "denoiser: latent shape mismatch");

  auto P = [&](const std::string& name) { return leaves.refs[params.index_of(name)]; };
  const T logit_scale = static_cast<T>(1.0 / std::sqrt(double(dh)));

  // patchify: {c, image, image} -> [np, pf], row-major patches, feature order
  // (channel, dy, dx)
  std::vector<int> src(static_cast<size_t>(np) * pf);
  for (int py = 0; py < grid; ++py)
    for (int px = 0; px < grid; ++px)
      for (int c = 0; c < cfg.channels; ++c)
        for (int dy = 0; dy < cfg.patch; ++dy)
          for (int dx = 0; dx < cfg.patch; ++dx) {
            int q = py * grid + px;
            int f = (c * cfg.patch + dy) * cfg.patch + dx;
            src[static_cast<size_t>(q) * pf + f] =
                (c * cfg.image + py * cfg.patch + dy) * cfg.image + px * cfg.patch + dx;
          }
  Ref x = tape.permute(z, std::move(src), {np, pf});
  x = tape.add_rowvec(tape.matmul(x, P("patch_embed.w")), P("patch_embed.b"));
  x = tape.add(x, P("pos_patch"));

  // time conditioning, broadcast over patch tokens
  Ref tf = tape.constant(time_features<T>(t, cfg.time_dim));
  Ref th = tape.gelu(tape.add_rowvec(tape.matmul(tf, P("time.w1")), P("time.b1")));
  Ref temb = tape.add_rowvec(tape.matmul(th, P("time.w2")), P("time.b2"));
  x = tape.add_rowvec(x, temb);

  // caption tokens: embedding + positional
  std::vector<int> pos_ids(n);
  for (int i = 0; i < n; ++i) pos_ids[i] = i;
  Ref y = tape.add(tape.embed_rows(P("tok_embed"), tokens),
                   tape.embed_rows(P("pos_tok"), pos_ids));

  ForwardResult<T> out;
  out.bundle.h = grid;
  out.bundle.w = grid;
  out.bundle.n = n;
  out.bundle.t = t;

  auto attention = [&](Ref queries_in, Ref keys_in, const std::string& pre,
                       std::vector<Ref>* captured) {
    Ref q_all = tape.matmul(queries_in, P(pre + "wq"));
    Ref k_all = tape.matmul(keys_in, P(pre + "wk"));
    Ref v_all = tape.matmul(keys_in, P(pre + "wv"));
    std::vector<Ref> heads;
    for (int h = 0; h < cfg.n_heads; ++h) {
      Ref qh = tape.slice_cols(q_all, h * dh, (h + 1) * dh);
      Ref kh = tape.slice_cols(k_all, h * dh, (h + 1) * dh);
      Ref vh = tape.slice_cols(v_all, h * dh, (h + 1) * dh);
      Ref probs = tape.softmax_rows(tape.matmul_nt(qh, kh), logit_scale);
      if (captured) captured->push_back(probs);
      heads.push_back(tape.matmul(probs, vh));
    }
    return tape.add_rowvec(tape.matmul(tape.concat_cols(heads), P(pre + "wo")),
                           P(pre + "bo"));
  };

  for (int b = 0; b < cfg.n_blocks; ++b) {
    std::string pre = "blk" + std::to_string(b) + ".";
    Ref h1 = tape.layer_norm(x, P(pre + "ln1.g"), P(pre + "ln1.b"));
    x = tape.add(x, attention(h1, h1, pre + "self.", capture ? &out.bundle.self : nullptr));
    Ref h2 = tape.layer_norm(x, P(pre + "ln2.g"), P(pre + "ln2.b"));
    x = tape.add(x, attention(h2, y, pre + "cross.", capture ? &out.bundle.cross : nullptr));
    Ref h3 = tape.layer_norm(x, P(pre + "ln3.g"), P(pre + "ln3.b"));
    Ref ff = tape.gelu(tape.add_rowvec(tape.matmul(h3, P(pre + "ffn.w1")), P(pre + "ffn.b1")));
    ff = tape.add_rowvec(tape.matmul(ff, P(pre + "ffn.w2")), P(pre + "ffn.b2"));
    x = tape.add(x, ff);
  }

  Ref ho = tape.layer_norm(x, P("out.ln.g"), P("out.ln.b"));
  Ref e = tape.add_rowvec(tape.matmul(ho, P("out.w")), P("out.b"));

  // unpatchify: [np, pf] -> {c, image, image}
  std::vector<int> usrc(static_cast<size_t>(cfg.channels) * cfg.image * cfg.image);
  for (int c = 0; c < cfg.channels; ++c)
    for (int yy = 0; yy < cfg.image; ++yy)
      for (int xx = 0; xx < cfg.image; ++xx) {
        int q = (yy / cfg.patch) * grid + xx / cfg.patch;
        int f = (c * cfg.patch + yy % cfg.patch) * cfg.patch + xx % cfg.patch;
        usrc[(static_cast<size_t>(c) * cfg.image + yy) * cfg.image + xx] =
            q * pf + f;
      }
  out.eps = tape.permute(e, std::move(usrc), {cfg.channels, cfg.image, cfg.image});
  return out;
}

// convenience wrapper: plain inference forward on a fresh leaf
template <typename T>
ForwardResult<T> denoiser_forward(Tape<T>& tape, const DenoiserParams<T>& params,
                                  typename Tape<T>::Ref z, int t,
                                  const std::vector<int>& tokens, bool capture) {
  auto leaves = ParamLeaves<T>::attach(tape, params, /*track=*/false);
  return denoiser_forward(tape, params, leaves, z, t, tokens, capture);
}

}  // namespace toydiff
