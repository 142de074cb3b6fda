#pragma once

// Ray-subsampled MSE training with Adam, warmup + cosine schedule, periodic
// evaluation, checkpointing and bit-exact resume.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "repast/checkpoint.hpp"
#include "repast/metrics.hpp"
#include "repast/model.hpp"

namespace repast {

struct TrainConfig {
    std::int64_t steps = 2000;
    int batch_scenes = 4;
    int rays_per_scene = 256;
    double lr = 1e-3;
    std::int64_t warmup_steps = 100;
    double final_lr_fraction = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::int64_t eval_interval = 500;

    void validate() const {
        if (steps < 0 || batch_scenes < 1 || rays_per_scene < 1 || !(lr > 0) || warmup_steps < 0 ||
            !(final_lr_fraction >= 0 && final_lr_fraction <= 1) || !(beta1 >= 0 && beta1 < 1) ||
            !(beta2 >= 0 && beta2 < 1) || !(adam_eps > 0) || eval_interval < 1 || (steps > 0 && eval_interval > steps))
            throw std::invalid_argument("invalid training config");
    }
};

template <class T>
struct TrainState {
    Params<T> params;
    Params<T> m;
    Params<T> v;
    std::int64_t step = 0;

    bool operator==(const TrainState&) const = default;
};

template <class T>
TrainState<T> init_train_state(const ModelConfig& cfg, std::uint64_t seed) {
    TrainState<T> s;
    s.params = init_params<T>(cfg, seed);
    for (const auto& [name, t] : s.params.tensors) {
        s.m.tensors.emplace(name, Tensor<T>(t.shape()));
        s.v.tensors.emplace(name, Tensor<T>(t.shape()));
    }
    return s;
}

/// Linear warmup to `lr`, then cosine decay to lr * final_lr_fraction at the last step.
inline double learning_rate(const TrainConfig& c, std::int64_t step) {
    if (step < c.warmup_steps) return c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
    const double span = static_cast<double>(std::max<std::int64_t>(1, c.steps - c.warmup_steps));
    const double t = std::min(1.0, static_cast<double>(step - c.warmup_steps) / span);
    const double lo = c.lr * c.final_lr_fraction;
    return lo + 0.5 * (c.lr - lo) * (1.0 + std::cos(std::numbers::pi * t));
}

/// Bias-corrected Adam update; advances state.step. Throws NumericError on a non-finite gradient.
template <class T>
void opt_step(TrainState<T>& s, const std::map<std::string, Tensor<T>>& grads, double lr, const TrainConfig& c) {
    for (const auto& [name, g] : grads) {
        if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "' at step " + std::to_string(s.step));
        if (g.shape() != s.params.at(name).shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
    }
    const std::int64_t t = s.step + 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (auto& [name, p] : s.params.tensors) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Tensor<T>& g = it->second;
        Tensor<T>& m = s.m.tensors.at(name);
        Tensor<T>& v = s.v.tensors.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
            const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            p[i] = static_cast<T>(p[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.adam_eps));
        }
    }
    s.step = t;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Generator for one training step; depends only on (seed, step) so resumed runs replay exactly.
inline std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step) {
    return std::mt19937_64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(step)));
}

template <class T>
struct RayBatch {
    std::vector<Ray> rays;
    Tensor<T> colors;  // [R, 3]
};

/// Uniformly sampled target pixels (view, x, y) with their colors.
template <class T>
RayBatch<T> sample_rays(const SceneExample& ex, int count, std::mt19937_64& rng) {
    if (ex.targets.empty()) throw std::invalid_argument("sample_rays: example has no target views");
    const auto& k = ex.intrinsics;
    std::uniform_int_distribution<std::size_t> view(0, ex.targets.size() - 1);
    std::uniform_int_distribution<int> xs(0, k.width - 1), ys(0, k.height - 1);
    RayBatch<T> b;
    b.colors = Tensor<T>(Shape{static_cast<std::size_t>(count), 3});
    for (int i = 0; i < count; ++i) {
        const auto& v = ex.targets[view(rng)];
        const int x = xs(rng), y = ys(rng);
        b.rays.push_back(pixel_ray(v.camera, k, x + 0.5, y + 0.5));
        for (int c = 0; c < 3; ++c)
            b.colors[static_cast<std::size_t>(i) * 3 + c] =
                static_cast<T>(v.image.data[(static_cast<std::size_t>(y) * k.width + x) * 3 + c] / 255.0);
    }
    return b;
}

/// MSE of one scene's ray batch; gradients are added into `grads` when given.
template <class T>
double scene_loss(const ModelConfig& cfg, const Params<T>& params, const SceneExample& ex, const RayBatch<T>& batch,
                  std::map<std::string, Tensor<T>>* grads) {
    Tape<T> tape;
    tape.set_grad_enabled(grads != nullptr);
    const Bound<T> p(tape, params, grads != nullptr);
    const Slsr<T> s = encode(tape, p, cfg, images_tensor<T>(ex.inputs), cameras_of(ex.inputs), ex.intrinsics);
    const Var<T> loss = mse_loss(decode(tape, p, cfg, s, batch.rays), tape.constant(batch.colors));
    const double value = loss.value().item();
    if (grads) {
        tape.backward(loss);
        for (const auto& [name, var] : p.vars()) {
            const Tensor<T> g = tape.grad(var);
            auto [it, fresh] = grads->try_emplace(name, g);
            if (!fresh)
                for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
        }
    }
    return value;
}

struct EvalResult {
    double psnr = 0;
    double ssim = 0;
    std::size_t views = 0;
};

/// Mean PSNR / SSIM over paired predicted and reference views.
inline EvalResult score_views(const std::vector<ImageF>& pred, const std::vector<ImageF>& truth) {
    if (pred.empty() || pred.size() != truth.size()) throw std::invalid_argument("score_views: need matching non-empty view lists");
    EvalResult r;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        r.psnr += psnr(pred[i], truth[i]);
        r.ssim += ssim(pred[i], truth[i]);
    }
    r.views = pred.size();
    r.psnr /= static_cast<double>(r.views);
    r.ssim /= static_cast<double>(r.views);
    return r;
}

/// Mean PSNR / SSIM over every target view of every example.
template <class T>
EvalResult evaluate(const ModelConfig& cfg, const Params<T>& params, const std::vector<SceneExample>& examples) {
    if (examples.empty()) throw std::invalid_argument("evaluate: empty test set");
    std::vector<ImageF> pred, truth;
    for (const auto& ex : examples) {
        for (auto& im : forward(cfg, params, ex)) pred.push_back(std::move(im));
        for (const auto& t : ex.targets) truth.push_back(to_float(t.image));
    }
    return score_views(pred, truth);
}

// ---------------------------------------------------------------------------
// Persistence of the full training state

template <class T>
Checkpoint<T> to_checkpoint(const ModelConfig& cfg, const TrainState<T>& s, std::uint64_t seed) {
    Checkpoint<T> ck;
    ck.config = cfg;
    ck.meta["step"] = std::to_string(s.step);
    ck.meta["seed"] = std::to_string(seed);
    for (const auto& [name, t] : s.params.tensors) {
        ck.tensors.emplace(name, t);
        ck.tensors.emplace("adam.m/" + name, s.m.at(name));
        ck.tensors.emplace("adam.v/" + name, s.v.at(name));
    }
    return ck;
}

template <class T>
TrainState<T> train_state_from_checkpoint(const Checkpoint<T>& ck, const ModelConfig& cfg) {
    TrainState<T> s;
    s.params = params_from_checkpoint(ck, cfg);
    for (const auto& [name, t] : s.params.tensors) {
        for (auto [prefix, dst] : {std::pair{"adam.m/", &s.m}, std::pair{"adam.v/", &s.v}}) {
            auto it = ck.tensors.find(prefix + name);
            dst->tensors.emplace(name, it != ck.tensors.end() ? it->second : Tensor<T>(t.shape()));
        }
    }
    auto it = ck.meta.find("step");
    s.step = it == ck.meta.end() ? 0 : std::stoll(it->second);
    return s;
}

struct TrainOutputs {
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> metrics_log;
    std::function<void(std::int64_t step, double loss)> on_step;
    std::function<void(std::int64_t step, const EvalResult&, double loss)> on_eval;
};

/// Runs steps [state.step, cfg.steps). Every eval_interval steps (and at the end) the
/// probe set is evaluated, a `step psnr ssim loss` line is appended to the metrics log
/// and a checkpoint is written. Per-scene gradients are summed in scene order.
template <class T>
void train(const ModelConfig& mcfg, const TrainConfig& tcfg, const std::vector<SceneExample>& data,
           const std::vector<SceneExample>& probe, TrainState<T>& state, const TrainOutputs& io = {}) {
    tcfg.validate();
    if (state.step >= tcfg.steps) return;
    if (data.empty()) throw std::invalid_argument("train: empty training set");
    double loss_sum = 0;
    std::int64_t loss_count = 0;
    while (state.step < tcfg.steps) {
        auto rng = step_rng(tcfg.seed, state.step);
        std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
        std::vector<std::size_t> scenes(static_cast<std::size_t>(tcfg.batch_scenes));
        std::vector<RayBatch<T>> batches;
        for (auto& s : scenes) {
            s = pick(rng);
            batches.push_back(sample_rays<T>(data[s], tcfg.rays_per_scene, rng));
        }
        std::vector<std::map<std::string, Tensor<T>>> per_scene(scenes.size());
        std::vector<double> losses(scenes.size());
        parallel_for(scenes.size(), [&](std::size_t i) {
            losses[i] = scene_loss(mcfg, state.params, data[scenes[i]], batches[i], &per_scene[i]);
        });
        std::map<std::string, Tensor<T>> grads = std::move(per_scene[0]);
        double loss = losses[0];
        for (std::size_t i = 1; i < scenes.size(); ++i) {
            loss += losses[i];
            for (auto& [name, g] : grads) {
                const Tensor<T>& o = per_scene[i].at(name);
                for (std::size_t k = 0; k < g.size(); ++k) g[k] += o[k];
            }
        }
        const T inv = T(1) / static_cast<T>(scenes.size());
        for (auto& [_, g] : grads)
            for (T& x : g.data()) x *= inv;
        loss /= static_cast<double>(scenes.size());
        if (!std::isfinite(loss)) throw NumericError("non-finite loss at step " + std::to_string(state.step));
        opt_step(state, grads, learning_rate(tcfg, state.step), tcfg);
        loss_sum += loss;
        ++loss_count;
        if (io.on_step) io.on_step(state.step, loss);

        if (state.step % tcfg.eval_interval == 0 || state.step == tcfg.steps) {
            const double mean_loss = loss_sum / static_cast<double>(loss_count);
            loss_sum = 0;
            loss_count = 0;
            EvalResult er;
            if (!probe.empty()) er = evaluate(mcfg, state.params, probe);
            if (io.metrics_log) {
                std::ofstream log(*io.metrics_log, std::ios::app);
                if (!log) throw IoError("cannot append to '" + io.metrics_log->string() + "'");
                log << state.step << ' ' << std::fixed << std::setprecision(4) << er.psnr << ' ' << er.ssim << ' '
                    << std::setprecision(6) << mean_loss << '\n';
                if (!log) throw IoError("write to '" + io.metrics_log->string() + "' failed");
            }
            if (io.checkpoint) save_checkpoint(*io.checkpoint, to_checkpoint(mcfg, state, tcfg.seed));
            if (io.on_eval) io.on_eval(state.step, er, mean_loss);
        }
    }
}

}  // namespace repast
