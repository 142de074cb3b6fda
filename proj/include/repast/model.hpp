#pragma once

// SRT baseline, RePAST and RePAST-B: CNN tokenizer, transformer encoder over the
// set of patch tokens, N-stream light-field decoder.
//
// Relative pose attention is realised as concatenation of gamma(Pi(ray, C)) to the
// projected query and key of every head. Because the appended part carries no
// parameters, the extra dot product is a fixed per-(query, key) logit term
// computed once per scene in double precision from the geometry alone.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "repast/autodiff.hpp"
#include "repast/geometry.hpp"
#include "repast/image.hpp"
#include "repast/parallel.hpp"
#include "repast/scenegen.hpp"

namespace repast {

enum class Variant { srt, repast, repast_b };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::srt: return "srt";
        case Variant::repast: return "repast";
        case Variant::repast_b: return "repast-b";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "srt") return Variant::srt;
    if (s == "repast") return Variant::repast;
    if (s == "repast-b") return Variant::repast_b;
    throw std::invalid_argument("unknown variant '" + s + "' (expected srt, repast or repast-b)");
}

struct ModelConfig {
    Variant variant = Variant::repast;
    int d_model = 128;
    int n_heads = 4;
    int d_head = 32;
    int n_enc_blocks = 3;
    int n_dec_blocks = 2;
    /// Output channels of each 3x3 stride-2 conv stage; the patch factor is 2^stages.
    std::vector<int> cnn_channels{32, 64, 96};
    int mlp_hidden = 256;
    PosEncConfig posenc{};
    double ln_eps = 1e-5;

    int patch_factor() const { return 1 << cnn_channels.size(); }
    int inner_dim() const { return n_heads * d_head; }
    bool relative_encoder() const { return variant != Variant::srt; }
    bool relative_decoder() const { return variant == Variant::repast; }

    void validate() const {
        if (d_model < 1 || n_heads < 1 || d_head < 1 || n_enc_blocks < 0 || n_dec_blocks < 0 || mlp_hidden < 1)
            throw std::invalid_argument("model config: dimensions must be positive");
        if (cnn_channels.empty() || cnn_channels.size() > 6)
            throw std::invalid_argument("model config: need 1..6 cnn stages");
        for (int c : cnn_channels)
            if (c < 1) throw std::invalid_argument("model config: cnn channels must be positive");
        if (!(ln_eps > 0)) throw std::invalid_argument("model config: ln_eps must be positive");
        posenc.validate();
    }

    /// One `key=value` line per field, fixed order; used for checkpoint headers.
    std::string canonical() const {
        std::ostringstream os;
        os.precision(17);
        os << "variant=" << variant_name(variant) << "\n"
           << "d_model=" << d_model << "\n"
           << "n_heads=" << n_heads << "\n"
           << "d_head=" << d_head << "\n"
           << "n_enc_blocks=" << n_enc_blocks << "\n"
           << "n_dec_blocks=" << n_dec_blocks << "\n"
           << "cnn_channels=";
        for (std::size_t i = 0; i < cnn_channels.size(); ++i) os << (i ? "," : "") << cnn_channels[i];
        os << "\n"
           << "mlp_hidden=" << mlp_hidden << "\n"
           << "posenc_freqs_origin=" << posenc.num_freqs_origin << "\n"
           << "posenc_freqs_direction=" << posenc.num_freqs_direction << "\n"
           << "posenc_base_frequency=" << posenc.base_frequency << "\n"
           << "posenc_include_raw=" << (posenc.include_raw ? 1 : 0) << "\n"
           << "ln_eps=" << ln_eps << "\n";
        return os.str();
    }

    static ModelConfig parse(const std::string& text) {
        ModelConfig c;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw std::invalid_argument("model config: malformed line '" + line + "'");
            const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
            if (k == "variant") c.variant = parse_variant(v);
            else if (k == "d_model") c.d_model = std::stoi(v);
            else if (k == "n_heads") c.n_heads = std::stoi(v);
            else if (k == "d_head") c.d_head = std::stoi(v);
            else if (k == "n_enc_blocks") c.n_enc_blocks = std::stoi(v);
            else if (k == "n_dec_blocks") c.n_dec_blocks = std::stoi(v);
            else if (k == "cnn_channels") {
                c.cnn_channels.clear();
                std::istringstream cs(v);
                for (std::string tok; std::getline(cs, tok, ',');) c.cnn_channels.push_back(std::stoi(tok));
            } else if (k == "mlp_hidden") c.mlp_hidden = std::stoi(v);
            else if (k == "posenc_freqs_origin") c.posenc.num_freqs_origin = std::stoi(v);
            else if (k == "posenc_freqs_direction") c.posenc.num_freqs_direction = std::stoi(v);
            else if (k == "posenc_base_frequency") c.posenc.base_frequency = std::stod(v);
            else if (k == "posenc_include_raw") c.posenc.include_raw = std::stoi(v) != 0;
            else if (k == "ln_eps") c.ln_eps = std::stod(v);
            else throw std::invalid_argument("model config: unknown key '" + k + "'");
        }
        c.validate();
        return c;
    }

    bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Parameters

/// Named parameter tensors; std::map keeps a stable (sorted) order for checkpoints.
template <class T>
struct Params {
    std::map<std::string, Tensor<T>> tensors;

    const Tensor<T>& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::out_of_range("no parameter named '" + name + "'");
        return it->second;
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors) n += t.size();
        return n;
    }
    bool operator==(const Params&) const = default;
};

/// Parameter name -> shape, derived from the config alone.
inline std::map<std::string, Shape> param_shapes(const ModelConfig& cfg) {
    cfg.validate();
    const auto D = static_cast<std::size_t>(cfg.d_model), I = static_cast<std::size_t>(cfg.inner_dim()),
               M = static_cast<std::size_t>(cfg.mlp_hidden), G = cfg.posenc.dim();
    std::map<std::string, Shape> s;
    std::size_t cin = 3 + (cfg.variant == Variant::srt ? G : 0);
    for (std::size_t i = 0; i < cfg.cnn_channels.size(); ++i) {
        const auto co = static_cast<std::size_t>(cfg.cnn_channels[i]);
        s["cnn" + std::to_string(i) + ".k"] = {3, 3, cin, co};
        s["cnn" + std::to_string(i) + ".b"] = {co};
        cin = co;
    }
    s["tok.w"] = {cin, D};
    s["tok.b"] = {D};
    auto block = [&](const std::string& p) {
        for (const char* ln : {"ln1", "ln2"}) {
            s[p + ln + ".g"] = {D};
            s[p + ln + ".b"] = {D};
        }
        s[p + "wq"] = {D, I};
        s[p + "wk"] = {D, I};
        s[p + "wv"] = {D, I};
        s[p + "wo"] = {I, D};
        s[p + "bo"] = {D};
        s[p + "mlp1.w"] = {D, M};
        s[p + "mlp1.b"] = {M};
        s[p + "mlp2.w"] = {M, D};
        s[p + "mlp2.b"] = {D};
    };
    for (int l = 0; l < cfg.n_enc_blocks; ++l) block("enc" + std::to_string(l) + ".");
    s["enc.lnf.g"] = {D};
    s["enc.lnf.b"] = {D};
    s["dec.init.w"] = {G, D};
    s["dec.init.b"] = {D};
    for (int l = 0; l < cfg.n_dec_blocks; ++l) block("dec" + std::to_string(l) + ".");
    s["head.ln.g"] = {D};
    s["head.ln.b"] = {D};
    s["head.mlp1.w"] = {D, M};
    s["head.mlp1.b"] = {M};
    s["head.mlp2.w"] = {M, 3};
    s["head.mlp2.b"] = {3};
    return s;
}

/// Random initialization: N(0, 1/fan_in) weights, unit layer-norm gains, zero biases.
template <class T>
Params<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    Params<T> p;
    std::mt19937_64 rng(seed);
    for (const auto& [name, shape] : param_shapes(cfg)) {
        Tensor<T> t(shape);
        const bool is_gain = name.ends_with(".g");
        const bool is_weight = shape.size() >= 2;
        if (is_gain) {
            for (T& v : t.data()) v = T(1);
        } else if (is_weight) {
            std::size_t fan_in = 1;
            for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
            std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
            for (T& v : t.data()) v = static_cast<T>(n(rng));
        }
        p.tensors.emplace(name, std::move(t));
    }
    return p;
}

/// Parameters placed on a tape as leaves.
template <class T>
class Bound {
public:
    Bound(Tape<T>& tape, const Params<T>& p, bool requires_grad) {
        for (const auto& [name, t] : p.tensors) vars_.emplace(name, tape.leaf(t, requires_grad));
    }
    explicit Bound(std::map<std::string, Var<T>> vars) : vars_(std::move(vars)) {}
    Var<T> operator()(const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw std::out_of_range("no parameter named '" + name + "'");
        return it->second;
    }
    const std::map<std::string, Var<T>>& vars() const { return vars_; }

private:
    std::map<std::string, Var<T>> vars_;
};

// ---------------------------------------------------------------------------
// Scene representation

template <class T>
struct Slsr {
    Var<T> tokens;                  // [N * H' * W', d_model]
    std::vector<Ray> rays;          // per token, world frame
    std::vector<int> camera_index;  // per token
    std::vector<Pose> cameras;
    PatchGrid grid;
    int reference = 0;  // global frame of the SRT baseline

    std::size_t token_count() const { return rays.size(); }
    std::size_t patches_per_camera() const { return static_cast<std::size_t>(grid.count()); }
};

/// Softmax weights captured during a forward pass, one entry per attention layer.
/// Encoder entries are [heads, T, T]; decoder entries are [batch, heads, T].
template <class T>
struct AttentionProbe {
    std::vector<Tensor<T>> encoder;
    std::vector<Tensor<T>> decoder;
};

/// Stacks 8-bit views into an [N, H, W, 3] tensor in [0, 1].
template <class T>
Tensor<T> images_tensor(const std::vector<View>& views) {
    if (views.empty()) throw std::invalid_argument("images_tensor: no views");
    const int h = views[0].image.height, w = views[0].image.width;
    Tensor<T> out(Shape{views.size(), static_cast<std::size_t>(h), static_cast<std::size_t>(w), 3});
    std::size_t k = 0;
    for (const auto& v : views) {
        if (v.image.height != h || v.image.width != w) throw std::invalid_argument("images_tensor: mixed resolutions");
        for (std::uint8_t b : v.image.data) out[k++] = static_cast<T>(b / 255.0);
    }
    return out;
}

inline std::vector<Pose> cameras_of(const std::vector<View>& views) {
    std::vector<Pose> out;
    for (const auto& v : views) out.push_back(v.camera);
    return out;
}

namespace detail {

/// gamma(Pi(r, c)) as doubles.
inline std::vector<double> relative_code(const Ray& r, const Pose& c, const PosEncConfig& pe) {
    return posenc(to_local(r, c), pe);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <class T>
Var<T> mlp(const Bound<T>& p, const std::string& pre, const Var<T>& x) {
    return linear(gelu(linear(x, p(pre + "mlp1.w"), p(pre + "mlp1.b"))), p(pre + "mlp2.w"), p(pre + "mlp2.b"));
}

template <class T>
Var<T> ln(const Bound<T>& p, const std::string& pre, const Var<T>& x, const ModelConfig& cfg) {
    return layer_norm(x, p(pre + ".g"), p(pre + ".b"), static_cast<T>(cfg.ln_eps));
}

}  // namespace detail

/// Pose logit term of encoder self-attention:
/// A[q, k] = gamma(Pi(r_q, C_c(k))) . gamma(Pi(r_k, C_c(k))).
inline Tensor<double> encoder_pose_bias(const std::vector<Ray>& rays, const std::vector<int>& camera_index,
                                        const std::vector<Pose>& cameras, const PosEncConfig& pe) {
    const std::size_t n = rays.size();
    // codes[c][t] = gamma(Pi(r_t, C_c))
    std::vector<std::vector<std::vector<double>>> codes(cameras.size(), std::vector<std::vector<double>>(n));
    for (std::size_t c = 0; c < cameras.size(); ++c)
        for (std::size_t t = 0; t < n; ++t) codes[c][t] = detail::relative_code(rays[t], cameras[c], pe);
    Tensor<double> a(Shape{n, n});
    for (std::size_t q = 0; q < n; ++q)
        for (std::size_t k = 0; k < n; ++k) {
            const auto c = static_cast<std::size_t>(camera_index[k]);
            a.at(q, k) = detail::dot(codes[c][q], codes[c][k]);
        }
    return a;
}

/// Relative-pose attention logits for one head:
/// (q_a . k_b + gamma(Pi(r_a, C_b)) . gamma(Pi(r_b, C_b))) / sqrt(d_head + dim gamma),
/// where C_b is the camera of key b. queries [Tq, d], keys [Tk, d].
template <class T>
Var<T> repa_logits(const Var<T>& queries, const Var<T>& keys, const std::vector<Ray>& query_rays,
                   const std::vector<Ray>& key_rays, const std::vector<int>& key_camera,
                   const std::vector<Pose>& cameras, const PosEncConfig& pe) {
    if (queries.shape().size() != 2 || keys.shape().size() != 2 || queries.dim(1) != keys.dim(1))
        throw ShapeError("repa_logits: expected [Tq,d] and [Tk,d], got " + to_string(queries.shape()) + " and " +
                         to_string(keys.shape()));
    if (query_rays.size() != queries.dim(0) || key_rays.size() != keys.dim(0) || key_camera.size() != key_rays.size())
        throw ShapeError("repa_logits: ray count does not match token count");
    Tensor<double> bias(Shape{query_rays.size(), key_rays.size()});
    for (std::size_t b = 0; b < key_rays.size(); ++b) {
        const Pose& c = cameras.at(static_cast<std::size_t>(key_camera[b]));
        const auto kc = detail::relative_code(key_rays[b], c, pe);
        for (std::size_t a = 0; a < query_rays.size(); ++a)
            bias.at(a, b) = detail::dot(detail::relative_code(query_rays[a], c, pe), kc);
    }
    const T inv = T(1) / std::sqrt(static_cast<T>(queries.dim(1) + pe.dim()));
    const Var<T> kt = permute(keys, {1, 0});
    return scale(add(matmul(queries, kt), queries.tape->constant(bias.template cast<T>())), inv);
}

// ---------------------------------------------------------------------------
// Encoder

/// CNN over each image, then a linear map to d_model. Tokens are camera-major, row-major within a camera.
template <class T>
Slsr<T> tokenize(Tape<T>& tape, const Bound<T>& p, const ModelConfig& cfg, const Tensor<T>& images,
                 const std::vector<Pose>& cameras, const Intrinsics& k, int reference = 0) {
    if (images.rank() != 4 || images.dim(3) != 3) throw ShapeError("tokenize: images must be [N,H,W,3]");
    const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2);
    if (n != cameras.size() || n == 0) throw std::invalid_argument("tokenize: need one camera per image");
    if (static_cast<int>(h) != k.height || static_cast<int>(w) != k.width)
        throw std::invalid_argument("tokenize: intrinsics do not match image size");
    const auto pf = static_cast<std::size_t>(cfg.patch_factor());
    if (h % pf != 0 || w % pf != 0)
        throw std::invalid_argument("tokenize: image " + std::to_string(h) + "x" + std::to_string(w) +
                                    " not divisible by patch factor " + std::to_string(pf));
    if (reference < 0 || static_cast<std::size_t>(reference) >= n)
        throw std::invalid_argument("tokenize: reference camera out of range");

    Var<T> x = tape.constant(images);
    if (cfg.variant == Variant::srt) {
        // Per-pixel rays in the reference camera's frame, appended to RGB.
        const std::size_t g = cfg.posenc.dim();
        Tensor<T> codes(Shape{n, h, w, g});
        const Pose& ref = cameras[static_cast<std::size_t>(reference)];
        std::vector<double> buf(g);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) {
                    const Ray r = pixel_ray(cameras[i], k, xx + 0.5, y + 0.5);
                    posenc_into(to_local(r, ref), cfg.posenc, buf);
                    T* dst = codes.data().data() + ((i * h + y) * w + xx) * g;
                    for (std::size_t c = 0; c < g; ++c) dst[c] = static_cast<T>(buf[c]);
                }
        x = concat_last(std::vector<Var<T>>{x, tape.constant(std::move(codes))});
    }
    for (std::size_t s = 0; s < cfg.cnn_channels.size(); ++s) {
        const std::string pre = "cnn" + std::to_string(s);
        x = gelu(add(conv2d(x, p(pre + ".k"), 2), p(pre + ".b")));
    }
    const std::size_t hp = h / pf, wp = w / pf;
    x = reshape(x, Shape{n * hp * wp, x.shape().back()});

    Slsr<T> s;
    s.tokens = linear(x, p("tok.w"), p("tok.b"));
    s.cameras = cameras;
    s.grid = {static_cast<int>(hp), static_cast<int>(wp)};
    s.reference = reference;
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < s.grid.count(); ++j) {
            s.rays.push_back(patch_ray(cameras[i], k, j, s.grid));
            s.camera_index.push_back(static_cast<int>(i));
        }
    return s;
}

/// Multi-head self-attention over all tokens; `bias` is an optional fixed [T, T] logit term.
template <class T>
Var<T> self_attention(const Bound<T>& p, const std::string& pre, const ModelConfig& cfg, const Var<T>& h,
                      const Tensor<T>* bias, T inv_scale, std::vector<Tensor<T>>* probe = nullptr) {
    const std::size_t t = h.dim(0), H = static_cast<std::size_t>(cfg.n_heads), dh = static_cast<std::size_t>(cfg.d_head);
    auto heads = [&](const char* w) { return reshape(matmul(h, p(pre + w)), Shape{t, H, dh}); };
    const Var<T> q = permute(heads("wq"), {1, 0, 2});  // [H, T, dh]
    const Var<T> k = permute(heads("wk"), {1, 2, 0});  // [H, dh, T]
    const Var<T> v = permute(heads("wv"), {1, 0, 2});  // [H, T, dh]
    Var<T> logits = matmul(q, k);
    if (bias) logits = add(logits, h.tape->constant(bias->reshaped(Shape{1, t, t})));
    const Var<T> a = softmax_lastdim(logits, inv_scale);
    if (probe) probe->push_back(a.value());
    const Var<T> o = reshape(permute(matmul(a, v), {1, 0, 2}), Shape{t, H * dh});
    return linear(o, p(pre + "wo"), p(pre + "bo"));
}

/// Pre-norm block: LN -> attention -> residual -> LN -> MLP -> residual.
template <class T>
Var<T> encoder_block(const Bound<T>& p, const ModelConfig& cfg, int layer, const Var<T>& x, const Tensor<T>* bias,
                     std::vector<Tensor<T>>* probe = nullptr) {
    const std::string pre = "enc" + std::to_string(layer) + ".";
    const T inv = T(1) / std::sqrt(static_cast<T>(cfg.d_head + (bias ? cfg.posenc.dim() : 0)));
    const Var<T> y = add(x, self_attention(p, pre, cfg, detail::ln(p, pre + "ln1", x, cfg), bias, inv, probe));
    return add(y, detail::mlp(p, pre, detail::ln(p, pre + "ln2", y, cfg)));
}

template <class T>
Slsr<T> encode(Tape<T>& tape, const Bound<T>& p, const ModelConfig& cfg, const Tensor<T>& images,
               const std::vector<Pose>& cameras, const Intrinsics& k, int reference = 0,
               AttentionProbe<T>* probe = nullptr) {
    Slsr<T> s = tokenize(tape, p, cfg, images, cameras, k, reference);
    if (cfg.n_enc_blocks == 0) return s;
    Tensor<T> bias;
    if (cfg.relative_encoder()) bias = encoder_pose_bias(s.rays, s.camera_index, s.cameras, cfg.posenc).template cast<T>();
    Var<T> x = s.tokens;
    for (int l = 0; l < cfg.n_enc_blocks; ++l)
        x = encoder_block(p, cfg, l, x, cfg.relative_encoder() ? &bias : nullptr, probe ? &probe->encoder : nullptr);
    s.tokens = detail::ln(p, "enc.lnf", x, cfg);
    return s;
}

/// Copy of `s` whose tokens are a constant on another tape (inference on fresh tapes).
template <class T>
Slsr<T> detach(const Slsr<T>& s, Tape<T>& tape) {
    Slsr<T> out = s;
    out.tokens = tape.constant(s.tokens.value());
    return out;
}

// ---------------------------------------------------------------------------
// Decoder

template <class T>
struct QueryState {
    std::vector<Ray> rays;  // query rays q, world frame
    Var<T> streams;         // [B, S, d_model]; S = N for RePA variants, 1 for SRT
    Tensor<T> pose_bias;    // [B, S, P] decoder logit term, empty when unused
};

/// v_i = W_init gamma(Pi(q, C_i)) + b_init, one stream per input camera
/// (SRT: a single stream in the reference camera's frame).
template <class T>
QueryState<T> init_query_streams(Tape<T>& tape, const Bound<T>& p, const ModelConfig& cfg, const Slsr<T>& s,
                                 const std::vector<Ray>& rays) {
    if (s.cameras.empty()) throw std::invalid_argument("init_query_streams: no cameras");
    const bool srt = cfg.variant == Variant::srt;
    const std::size_t b = rays.size(), g = cfg.posenc.dim();
    const std::size_t streams = srt ? 1 : s.cameras.size();
    Tensor<T> codes(Shape{b, streams, g});
    std::vector<std::vector<double>> qcodes(b * streams);
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t i = 0; i < streams; ++i) {
            const Pose& c = s.cameras[srt ? static_cast<std::size_t>(s.reference) : i];
            qcodes[r * streams + i] = detail::relative_code(rays[r], c, cfg.posenc);
            std::copy(qcodes[r * streams + i].begin(), qcodes[r * streams + i].end(),
                      codes.data().begin() + static_cast<std::ptrdiff_t>((r * streams + i) * g));
        }
    QueryState<T> st;
    st.rays = rays;
    st.streams = linear(tape.constant(std::move(codes)), p("dec.init.w"), p("dec.init.b"));
    if (cfg.relative_decoder() && cfg.n_dec_blocks > 0) {
        const std::size_t pp = s.patches_per_camera();
        Tensor<double> bias(Shape{b, streams, pp});
        for (std::size_t i = 0; i < streams; ++i)
            for (std::size_t j = 0; j < pp; ++j) {
                const auto kc = detail::relative_code(s.rays[i * pp + j], s.cameras[i], cfg.posenc);
                for (std::size_t r = 0; r < b; ++r) bias.at(r, i, j) = detail::dot(qcodes[r * streams + i], kc);
            }
        st.pose_bias = bias.template cast<T>();
    }
    return st;
}

/// Cross-attention from the query streams into all SLSR tokens. Key tokens of camera i
/// are scored against stream i; one softmax over every key produces a single latent,
/// which is added to every stream before the per-stream MLP.
template <class T>
QueryState<T> decoder_block(const Bound<T>& p, const ModelConfig& cfg, int layer, const QueryState<T>& in,
                            const Slsr<T>& s, std::vector<Tensor<T>>* probe = nullptr) {
    const std::string pre = "dec" + std::to_string(layer) + ".";
    const Var<T>& v = in.streams;
    const std::size_t b = v.dim(0), streams = v.dim(1), t = s.token_count();
    const std::size_t H = static_cast<std::size_t>(cfg.n_heads), dh = static_cast<std::size_t>(cfg.d_head);
    const bool srt = cfg.variant == Variant::srt;
    if (!srt && streams != s.cameras.size())
        throw std::invalid_argument("decoder_block: " + std::to_string(streams) + " streams for " +
                                    std::to_string(s.cameras.size()) + " cameras");
    const std::size_t pp = t / streams;  // keys per stream group
    const bool rel = cfg.relative_decoder();

    const Var<T> hq = detail::ln(p, pre + "ln1", v, cfg);
    const Var<T> hq2 = reshape(hq, Shape{b * streams, static_cast<std::size_t>(cfg.d_model)});
    const Var<T> q = permute(reshape(matmul(hq2, p(pre + "wq")), Shape{b, streams, H, dh}), {1, 2, 0, 3});  // [S, H, B, dh]
    const Var<T> k = permute(reshape(matmul(s.tokens, p(pre + "wk")), Shape{streams, pp, H, dh}),
                             {0, 2, 3, 1});  // [S, H, dh, P]
    Var<T> logits = permute(matmul(q, k), {2, 1, 0, 3});  // [B, H, S, P]
    if (rel) logits = add(logits, v.tape->constant(in.pose_bias.reshaped(Shape{b, 1, streams, pp})));
    const T inv = T(1) / std::sqrt(static_cast<T>(cfg.d_head + (rel ? cfg.posenc.dim() : 0)));
    const Var<T> a = softmax_lastdim(reshape(logits, Shape{b, H, t}), inv);  // [B, H, T]
    if (probe) probe->push_back(a.value());
    const Var<T> vals = permute(reshape(matmul(s.tokens, p(pre + "wv")), Shape{t, H, dh}), {1, 0, 2});  // [H, T, dh]
    const Var<T> o = reshape(permute(matmul(permute(a, {1, 0, 2}), vals), {1, 0, 2}), Shape{b, H * dh});
    const Var<T> latent = reshape(linear(o, p(pre + "wo"), p(pre + "bo")), Shape{b, 1, static_cast<std::size_t>(cfg.d_model)});

    QueryState<T> out;
    out.rays = in.rays;
    out.pose_bias = in.pose_bias;
    const Var<T> y = add(v, latent);
    out.streams = add(y, detail::mlp(p, pre, detail::ln(p, pre + "ln2", y, cfg)));
    return out;
}

/// Streams -> mean -> LN -> MLP -> sigmoid.
template <class T>
Var<T> output_head(const Bound<T>& p, const ModelConfig& cfg, const Var<T>& streams) {
    const Var<T> pooled = detail::ln(p, "head.ln", mean_axis(streams, 1), cfg);
    return sigmoid(detail::mlp(p, "head.", pooled));
}

/// RGB in (0, 1) for each query ray: [B, 3].
template <class T>
Var<T> decode(Tape<T>& tape, const Bound<T>& p, const ModelConfig& cfg, const Slsr<T>& s,
              const std::vector<Ray>& rays, AttentionProbe<T>* probe = nullptr) {
    if (rays.empty()) throw std::invalid_argument("decode: no query rays");
    QueryState<T> st = init_query_streams(tape, p, cfg, s, rays);
    for (int l = 0; l < cfg.n_dec_blocks; ++l) st = decoder_block(p, cfg, l, st, s, probe ? &probe->decoder : nullptr);
    return output_head(p, cfg, st.streams);
}

// ---------------------------------------------------------------------------
// Inference helpers

/// Rays through every pixel center of a view, row-major.
inline std::vector<Ray> image_rays(const Pose& camera, const Intrinsics& k) {
    std::vector<Ray> out;
    out.reserve(static_cast<std::size_t>(k.width) * k.height);
    for (int y = 0; y < k.height; ++y)
        for (int x = 0; x < k.width; ++x) out.push_back(pixel_ray(camera, k, x + 0.5, y + 0.5));
    return out;
}

/// Encoding computed without gradient tracking, reusable across many decode calls.
template <class T>
struct EncodedScene {
    Tape<T> tape;
    std::unique_ptr<Bound<T>> bound;
    Slsr<T> slsr;
};

template <class T>
std::unique_ptr<EncodedScene<T>> encode_scene(const ModelConfig& cfg, const Params<T>& params,
                                              const std::vector<View>& inputs, const Intrinsics& k,
                                              int reference = 0) {
    auto e = std::make_unique<EncodedScene<T>>();
    e->tape.set_grad_enabled(false);
    e->bound = std::make_unique<Bound<T>>(e->tape, params, false);
    e->slsr = encode(e->tape, *e->bound, cfg, images_tensor<T>(inputs), cameras_of(inputs), k, reference);
    return e;
}

/// Decodes arbitrary rays in fixed-size chunks, each on its own tape.
template <class T>
std::vector<T> decode_rays(const ModelConfig& cfg, const Params<T>& params, const EncodedScene<T>& scene,
                           const std::vector<Ray>& rays, std::size_t chunk = 256) {
    std::vector<T> out(rays.size() * 3);
    const std::size_t chunks = (rays.size() + chunk - 1) / chunk;
    parallel_for(chunks, [&](std::size_t c) {
        const std::size_t lo = c * chunk, hi = std::min(rays.size(), lo + chunk);
        Tape<T> tape;
        tape.set_grad_enabled(false);
        const Bound<T> p(tape, params, false);
        const Slsr<T> s = detach(scene.slsr, tape);
        const Var<T> rgb = decode(tape, p, cfg, s, std::vector<Ray>(rays.begin() + lo, rays.begin() + hi));
        std::copy(rgb.value().data().begin(), rgb.value().data().end(), out.begin() + static_cast<std::ptrdiff_t>(lo * 3));
    });
    return out;
}

template <class T>
ImageF render_image(const ModelConfig& cfg, const Params<T>& params, const EncodedScene<T>& scene,
                    const Pose& camera, const Intrinsics& k) {
    const std::vector<T> rgb = decode_rays(cfg, params, scene, image_rays(camera, k));
    ImageF im(k.height, k.width);
    std::transform(rgb.begin(), rgb.end(), im.data.begin(), [](T v) { return static_cast<double>(v); });
    return im;
}

/// Encodes the inputs once and renders every target view.
template <class T>
std::vector<ImageF> forward(const ModelConfig& cfg, const Params<T>& params, const SceneExample& ex,
                            int reference = 0) {
    const auto scene = encode_scene(cfg, params, ex.inputs, ex.intrinsics, reference);
    std::vector<ImageF> out;
    for (const auto& t : ex.targets) out.push_back(render_image(cfg, params, *scene, t.camera, ex.intrinsics));
    return out;
}

}  // namespace repast
