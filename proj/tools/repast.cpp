// Command-line entry point: dataset generation, training, rendering, evaluation
// and the reference-frame / view-order invariance experiments.
//
// Exit codes: 0 ok, 1 validation or invariance failure, 2 I/O, 3 numeric abort.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "repast/checkpoint.hpp"
#include "repast/metrics.hpp"
#include "repast/model.hpp"
#include "repast/png.hpp"
#include "repast/scenegen.hpp"
#include "repast/training.hpp"

namespace fs = std::filesystem;
using namespace repast;

namespace {

/// Failure that maps to exit code 1 without being a usage error.
struct ValidationFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    bool deterministic = false;
    std::string precision = "f32";

    void add(CLI::App* app, bool with_precision) {
        app->add_option("--config", config, "File of `key = value` lines keyed by long flag name; flags take precedence");
        app->add_option("--seed", seed, "Seed for every randomized choice")->capture_default_str();
        app->add_flag("--deterministic", deterministic, "Single-threaded execution with fixed reduction order");
        if (with_precision)
            app->add_option("--precision", precision, "Scalar type")
                ->check(CLI::IsMember({"f32", "f64"}))
                ->capture_default_str();
    }
};

struct ModelFlags {
    std::string variant = "repast";
    ModelConfig defaults;
    int d_model = defaults.d_model, n_heads = defaults.n_heads, d_head = defaults.d_head;
    int enc_blocks = defaults.n_enc_blocks, dec_blocks = defaults.n_dec_blocks, mlp_hidden = defaults.mlp_hidden;
    std::vector<int> cnn_channels = defaults.cnn_channels;
    int freqs_origin = defaults.posenc.num_freqs_origin, freqs_direction = defaults.posenc.num_freqs_direction;

    void add(CLI::App* app) {
        app->add_option("--variant", variant, "Model variant")
            ->check(CLI::IsMember({"srt", "repast", "repast-b"}))
            ->capture_default_str();
        app->add_option("--d-model", d_model, "Token width")->capture_default_str();
        app->add_option("--heads", n_heads, "Attention heads")->capture_default_str();
        app->add_option("--d-head", d_head, "Per-head query/key/value width")->capture_default_str();
        app->add_option("--enc-blocks", enc_blocks, "Encoder blocks")->capture_default_str();
        app->add_option("--dec-blocks", dec_blocks, "Decoder blocks")->capture_default_str();
        app->add_option("--mlp-hidden", mlp_hidden, "MLP hidden width")->capture_default_str();
        app->add_option("--cnn-channels", cnn_channels, "Channels per stride-2 conv stage (patch factor 2^stages)")
            ->delimiter(',')
            ->capture_default_str();
        app->add_option("--posenc-freqs-origin", freqs_origin, "Frequencies for ray origins")->capture_default_str();
        app->add_option("--posenc-freqs-direction", freqs_direction, "Frequencies for ray directions")
            ->capture_default_str();
    }

    ModelConfig config() const {
        ModelConfig c;
        c.variant = parse_variant(variant);
        c.d_model = d_model;
        c.n_heads = n_heads;
        c.d_head = d_head;
        c.n_enc_blocks = enc_blocks;
        c.n_dec_blocks = dec_blocks;
        c.mlp_hidden = mlp_hidden;
        c.cnn_channels = cnn_channels;
        c.posenc.num_freqs_origin = freqs_origin;
        c.posenc.num_freqs_direction = freqs_direction;
        c.validate();
        return c;
    }
};

struct SceneFlags {
    int n_input = 5;
    int res = 32;
    int min_objects = GeneratorConfig{}.min_objects;
    int max_objects = GeneratorConfig{}.max_objects;

    void add(CLI::App* app) {
        app->add_option("--n-input", n_input, "Input views per scene")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--res", res, "Image resolution (square)")->check(CLI::Range(1, 512))->capture_default_str();
        app->add_option("--min-objects", min_objects, "Fewest objects per scene")->capture_default_str();
        app->add_option("--max-objects", max_objects, "Most objects per scene")->capture_default_str();
    }
    GeneratorConfig generator() const {
        GeneratorConfig g;
        g.min_objects = min_objects;
        g.max_objects = max_objects;
        return g;
    }
};

template <class T>
struct LoadedModel {
    ModelConfig config;
    Params<T> params;
};

/// Checkpoint if given, otherwise seeded random weights for the flag-specified config.
template <class T>
LoadedModel<T> load_model(const std::string& checkpoint, const ModelFlags& flags, bool variant_given,
                          std::uint64_t seed) {
    if (checkpoint.empty()) {
        const ModelConfig c = flags.config();
        return {c, init_params<T>(c, seed)};
    }
    const auto ck = load_checkpoint<T>(checkpoint);
    if (variant_given && parse_variant(flags.variant) != ck.config.variant)
        throw FormatError("checkpoint '" + checkpoint + "' holds variant " + variant_name(ck.config.variant) +
                          ", not " + flags.variant);
    return {ck.config, params_from_checkpoint(ck, ck.config)};
}

double max_abs(const ImageF& a, const ImageF& b) { return diff_report(a, b).max_abs; }

template <class T>
double max_abs(const std::vector<T>& a, const std::vector<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

std::string fmt(double v, int prec = 3, bool sci = true) {
    std::ostringstream os;
    if (sci) os << std::scientific;
    else os << std::fixed;
    os << std::setprecision(prec) << v;
    return os.str();
}

// ---------------------------------------------------------------------------

struct GenData {
    Common common;
    SceneFlags scene;
    int scenes = 16;
    int n_target = 3;
    std::string out;

    void add(CLI::App* app) {
        common.add(app, false);
        scene.add(app);
        app->add_option("--scenes", scenes, "Number of scenes; seeds are seed .. seed+scenes-1")
            ->check(CLI::NonNegativeNumber)
            ->capture_default_str();
        app->add_option("--n-target", n_target, "Target views per scene")->check(CLI::NonNegativeNumber)->capture_default_str();
        app->add_option("--out", out, "Output dataset path")->required();
    }

    int run() const {
        const auto ex = make_examples(static_cast<std::int64_t>(common.seed), scenes, scene.n_input, n_target,
                                      scene.res, scene.generator());
        write_dataset(out, ex);
        std::cout << "wrote " << ex.size() << " examples to " << out << "\n";
        return 0;
    }
};

struct Train {
    Common common;
    ModelFlags model;
    TrainConfig tc;
    std::string data, probe, out, log;
    bool resume = false;
    std::int64_t stop_after = -1;

    void add(CLI::App* app) {
        common.add(app, true);
        model.add(app);
        app->add_option("--data", data, "Training dataset")->required();
        app->add_option("--probe", probe, "Dataset evaluated at each eval interval");
        app->add_option("--steps", tc.steps, "Optimizer steps")->capture_default_str();
        app->add_option("--batch-scenes", tc.batch_scenes, "Scenes per step")->capture_default_str();
        app->add_option("--rays", tc.rays_per_scene, "Target rays per scene per step")->capture_default_str();
        app->add_option("--lr", tc.lr, "Peak learning rate")->capture_default_str();
        app->add_option("--warmup", tc.warmup_steps, "Linear warmup steps")->capture_default_str();
        app->add_option("--final-lr-fraction", tc.final_lr_fraction, "Cosine floor as a fraction of the peak")
            ->capture_default_str();
        app->add_option("--eval-interval", tc.eval_interval, "Steps between evaluations and checkpoints")
            ->capture_default_str();
        app->add_option("--out", out, "Checkpoint path")->required();
        app->add_option("--log", log, "Metrics log (default: <out>.log)");
        app->add_flag("--resume", resume, "Continue from the checkpoint at --out if it exists");
        app->add_option("--stop-after", stop_after, "Stop once this step is reached (schedule unchanged)");
    }

    template <class T>
    int run() {
        const ModelConfig mc = model.config();
        tc.seed = common.seed;
        if (tc.eval_interval > tc.steps && tc.steps > 0) tc.eval_interval = tc.steps;
        tc.validate();
        const auto train_set = read_dataset(data);
        const auto probe_set = probe.empty() ? std::vector<SceneExample>{} : read_dataset(probe);
        TrainState<T> state = init_train_state<T>(mc, common.seed);
        if (resume && fs::exists(out)) {
            state = train_state_from_checkpoint(load_checkpoint<T>(out), mc);
            std::cerr << "resuming from step " << state.step << "\n";
        }
        TrainOutputs io;
        io.checkpoint = fs::path(out);
        io.metrics_log = fs::path(log.empty() ? out + ".log" : log);
        struct Stop {};
        io.on_eval = [&](std::int64_t step, const EvalResult& e, double loss) {
            std::cout << "step " << step << " psnr " << fmt(e.psnr, 4, false) << " ssim " << fmt(e.ssim, 4, false)
                      << " loss " << fmt(loss, 6, false) << std::endl;
            if (stop_after >= 0 && step >= stop_after) throw Stop{};
        };
        try {
            train(mc, tc, train_set, probe_set, state, io);
            save_checkpoint(out, to_checkpoint(mc, state, common.seed));
        } catch (const Stop&) {
            std::cout << "stopped at step " << state.step << "\n";
        }
        return 0;
    }
};

struct Render {
    Common common;
    SceneFlags scene;
    ModelFlags model;
    std::string checkpoint, out;
    std::optional<std::uint64_t> scene_seed;
    int target_index = 0, reference = 0;
    std::optional<double> azimuth, elevation, distance;
    CLI::Option* variant_opt = nullptr;

    void add(CLI::App* app) {
        common.add(app, true);
        scene.add(app);
        model.add(app);
        variant_opt = app->get_option("--variant");
        app->add_option("--checkpoint", checkpoint, "Trained checkpoint (omit for random weights)");
        app->add_option("--scene-seed", scene_seed, "Scene to render (default: --seed)");
        app->add_option("--target-index", target_index, "Which sampled target camera to render")->capture_default_str();
        app->add_option("--azimuth", azimuth, "Override camera azimuth (degrees)");
        app->add_option("--elevation", elevation, "Override camera elevation (degrees)");
        app->add_option("--distance", distance, "Override camera distance from the scene center");
        app->add_option("--reference", reference, "Reference input camera (SRT only)")->capture_default_str();
        app->add_option("--out", out, "Output PNG")->required();
    }

    template <class T>
    int run() const {
        const auto m = load_model<T>(checkpoint, model, variant_opt->count() > 0, common.seed);
        const auto seed = static_cast<std::int64_t>(scene_seed.value_or(common.seed));
        const GeneratorConfig g = scene.generator();
        const SceneExample ex = make_example(seed, scene.n_input, target_index + 1, scene.res, g);
        Pose cam = ex.targets.back().camera;
        if (azimuth || elevation || distance) {
            const Vec3 off = cam.translation - g.scene_center;
            const double d0 = off.norm();
            const double az = azimuth ? *azimuth * std::numbers::pi / 180 : std::atan2(off.y(), off.x());
            const double el = elevation ? *elevation * std::numbers::pi / 180 : std::asin(off.z() / d0);
            const double d = distance.value_or(d0);
            const Vec3 eye = g.scene_center + d * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
            cam = look_at(eye, g.scene_center);
        }
        const auto enc = encode_scene(m.config, m.params, ex.inputs, ex.intrinsics, reference);
        const ImageF pred = render_image(m.config, m.params, *enc, cam, ex.intrinsics);
        write_png(out, to_u8(pred));
        const ImageF truth = render_view(sample_scene(static_cast<std::uint64_t>(seed), g), cam, ex.intrinsics);
        std::cout << "wrote " << out << " (" << pred.height << "x" << pred.width << "), psnr vs oracle "
                  << fmt(psnr(pred, truth), 2, false) << "\n";
        return 0;
    }
};

struct InvarianceCheck {
    Common common;
    SceneFlags scene;
    ModelFlags model;
    std::string checkpoint;
    int trials = 20, rays = 64;
    double tolerance = 1e-4;
    CLI::Option* variant_opt = nullptr;

    void add(CLI::App* app) {
        common.add(app, true);
        scene.add(app);
        model.add(app);
        variant_opt = app->get_option("--variant");
        app->add_option("--checkpoint", checkpoint, "Checkpoint (omit for random weights per trial)");
        app->add_option("--trials", trials, "Number of random scenes / transforms")->check(CLI::NonNegativeNumber)
            ->capture_default_str();
        app->add_option("--rays", rays, "Query rays decoded per trial")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--tolerance", tolerance, "Max-abs RGB tolerance for the relative-pose variants")
            ->capture_default_str();
    }

    template <class T>
    int run() const {
        double worst_perm = 0, worst_frame = 0, worst_ref = 0;
        int ref_above = 0;
        Variant variant = parse_variant(model.variant);
        for (int t = 0; t < trials; ++t) {
            const std::uint64_t s = splitmix64(common.seed + static_cast<std::uint64_t>(t));
            const auto m = load_model<T>(checkpoint, model, variant_opt->count() > 0, s);
            variant = m.config.variant;
            const SceneExample ex = make_example(static_cast<std::int64_t>(s % 1000000007), scene.n_input, 1,
                                                 scene.res, scene.generator());
            std::mt19937_64 rng(s);
            std::uniform_real_distribution<double> u(0.0, scene.res);
            std::vector<Ray> q;
            for (int i = 0; i < rays; ++i) q.push_back(pixel_ray(ex.targets[0].camera, ex.intrinsics, u(rng), u(rng)));
            auto decode_with = [&](const std::vector<View>& inputs, const std::vector<Ray>& qr, int ref) {
                const auto enc = encode_scene(m.config, m.params, inputs, ex.intrinsics, ref);
                return decode_rays(m.config, m.params, *enc, qr);
            };
            const auto base = decode_with(ex.inputs, q, 0);
            // (a) cyclic permutation of the input views
            auto perm = ex.inputs;
            const int shift = scene.n_input > 1 ? 1 + static_cast<int>(rng() % static_cast<unsigned>(scene.n_input - 1)) : 0;
            std::rotate(perm.begin(), perm.begin() + shift, perm.end());
            const double d_perm = max_abs(base, decode_with(perm, q, 0));
            // (b) rigid change of the global frame
            const Pose tf = random_rigid(rng, 10.0);
            auto moved = ex.inputs;
            for (auto& v : moved) v.camera = pose_compose(tf, v.camera);
            std::vector<Ray> mq;
            for (const auto& r : q) mq.push_back(transform_ray(tf, r));
            const double d_frame = max_abs(base, decode_with(moved, mq, 0));
            worst_perm = std::max(worst_perm, d_perm);
            worst_frame = std::max(worst_frame, d_frame);
            std::cout << "trial " << t << " permutation " << fmt(d_perm) << " frame " << fmt(d_frame);
            // (c) reference-camera reassignment, SRT only
            if (variant == Variant::srt && scene.n_input > 1) {
                const double d_ref = max_abs(base, decode_with(ex.inputs, q, 1));
                worst_ref = std::max(worst_ref, d_ref);
                ref_above += d_ref > 1e-3;
                std::cout << " reference " << fmt(d_ref);
            }
            std::cout << "\n";
        }
        if (trials == 0) return 0;
        const bool relative = variant != Variant::srt;
        const bool pass = worst_perm <= tolerance && worst_frame <= tolerance;
        std::cout << "summary variant " << variant_name(variant) << " trials " << trials << " max_permutation "
                  << fmt(worst_perm) << " max_frame " << fmt(worst_frame);
        if (!relative) std::cout << " max_reference " << fmt(worst_ref) << " reference_above_1e-3 " << ref_above << "/" << trials;
        std::cout << " status " << (relative ? (pass ? "PASS" : "FAIL") : "REPORT") << "\n";
        if (relative && !pass) throw ValidationFailure("invariance violated beyond tolerance " + fmt(tolerance));
        return 0;
    }
};

struct Cycle {
    Common common;
    SceneFlags scene;
    ModelFlags model;
    std::string checkpoint, out_dir;
    std::optional<std::uint64_t> scene_seed;
    int target_index = 0;
    CLI::Option* variant_opt = nullptr;

    void add(CLI::App* app) {
        common.add(app, true);
        scene.add(app);
        model.add(app);
        variant_opt = app->get_option("--variant");
        app->add_option("--checkpoint", checkpoint, "Trained checkpoint (omit for random weights)");
        app->add_option("--scene-seed", scene_seed, "Scene to render (default: --seed)");
        app->add_option("--target-index", target_index, "Which sampled target camera to render")->capture_default_str();
        app->add_option("--out-dir", out_dir, "Directory for frames and report")->required();
    }

    template <class T>
    int run() const {
        const auto m = load_model<T>(checkpoint, model, variant_opt->count() > 0, common.seed);
        const auto seed = static_cast<std::int64_t>(scene_seed.value_or(common.seed));
        const SceneExample ex = make_example(seed, scene.n_input, target_index + 1, scene.res, scene.generator());
        const Pose cam = ex.targets.back().camera;
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
        std::vector<ImageF> frames;
        for (int k = 0; k < scene.n_input; ++k) {
            auto inputs = ex.inputs;
            std::rotate(inputs.begin(), inputs.begin() + k, inputs.end());
            const auto enc = encode_scene(m.config, m.params, inputs, ex.intrinsics, 0);
            frames.push_back(render_image(m.config, m.params, *enc, cam, ex.intrinsics));
            char name[32];
            std::snprintf(name, sizeof name, "frame_%02d.png", k);
            write_png(fs::path(out_dir) / name, to_u8(frames.back()));
        }
        std::ostringstream report;
        double pairwise = 0;
        for (std::size_t a = 0; a < frames.size(); ++a)
            for (std::size_t b = a + 1; b < frames.size(); ++b) pairwise = std::max(pairwise, max_abs(frames[a], frames[b]));
        for (std::size_t k = 0; k < frames.size(); ++k) {
            report << "frame " << k << " vs_first " << fmt(max_abs(frames[k], frames[0])) << " vs_previous "
                   << fmt(k ? max_abs(frames[k], frames[k - 1]) : 0.0) << "\n";
        }
        report << "variant " << variant_name(m.config.variant) << " frames " << frames.size() << " max_pairwise "
               << fmt(pairwise) << "\n";
        write_text_atomic(fs::path(out_dir) / "report.txt", report.str());
        std::cout << report.str();
        return 0;
    }
};

struct Eval {
    Common common;
    ModelFlags model;
    std::string checkpoint, data;
    bool oracle = false;
    CLI::Option* variant_opt = nullptr;

    void add(CLI::App* app) {
        common.add(app, true);
        model.add(app);
        variant_opt = app->get_option("--variant");
        app->add_option("--checkpoint", checkpoint, "Trained checkpoint");
        app->add_option("--data", data, "Test dataset")->required();
        app->add_flag("--oracle", oracle, "Score the dataset's own target images against themselves");
    }

    template <class T>
    int run() const {
        const auto test = read_dataset(data);
        if (test.empty()) throw ValidationFailure("eval: empty test set");
        EvalResult r;
        std::string name = "oracle";
        if (oracle) {
            std::vector<ImageF> views;
            for (const auto& e : test)
                for (const auto& t : e.targets) views.push_back(to_float(t.image));
            r = score_views(views, views);
        } else {
            if (checkpoint.empty()) throw ValidationFailure("eval: --checkpoint is required unless --oracle is given");
            const auto m = load_model<T>(checkpoint, model, variant_opt->count() > 0, common.seed);
            r = evaluate(m.config, m.params, test);
            name = variant_name(m.config.variant);
        }
        std::cout << name << " " << fmt(r.psnr, 2, false) << " " << fmt(r.ssim, 3, false) << "\n";
        return 0;
    }
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Appends `--key=value` for every config-file entry whose flag is absent from the command line.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    auto given = [&](const std::string& key) {
        for (const auto& a : args)
            if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
        return false;
    };
    std::vector<std::string> extra;
    int lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected `key = value`");
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        if (key == "config") throw std::invalid_argument(path + ": nested config files are not supported");
        if (!given(key)) extra.push_back("--" + key + "=" + value);
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

template <class Cmd>
int dispatch(Cmd& cmd, const std::string& precision) {
    return precision == "f64" ? cmd.template run<double>() : cmd.template run<float>();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scene representation transformers with relative pose attention"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    GenData gen;
    Train tr;
    Render rd;
    InvarianceCheck inv;
    Cycle cyc;
    Eval ev;
    auto* s_gen = app.add_subcommand("gen-data", "Generate a procedural multi-view dataset");
    gen.add(s_gen);
    auto* s_train = app.add_subcommand("train", "Train a model; writes a checkpoint and a metrics log");
    tr.add(s_train);
    auto* s_render = app.add_subcommand("render", "Render one view of a scene to PNG");
    rd.add(s_render);
    auto* s_inv = app.add_subcommand("invariance-check", "Measure output changes under view permutation and frame changes");
    inv.add(s_inv);
    auto* s_cycle = app.add_subcommand("cycle", "Render one target while cycling through the input view order");
    cyc.add(s_cycle);
    auto* s_eval = app.add_subcommand("eval", "Mean PSNR / SSIM on a test dataset");
    ev.add(s_eval);

    try {
        std::vector<std::string> args = expand_config(std::vector<std::string>(argv, argv + argc));
        std::vector<char*> ptrs;
        for (auto& a : args) ptrs.push_back(a.data());
        app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    CLI::App* active = app.get_subcommands().front();
    std::cerr << "# resolved configuration: " << active->get_name() << "\n"
              << active->config_to_str(true, false);

    try {
        bool det = false;
        for (const Common* c : {&gen.common, &tr.common, &rd.common, &inv.common, &cyc.common, &ev.common})
            det = det || c->deterministic;
        set_deterministic(det);
        if (active == s_gen) return gen.run();
        if (active == s_train) return dispatch(tr, tr.common.precision);
        if (active == s_render) return dispatch(rd, rd.common.precision);
        if (active == s_inv) return dispatch(inv, inv.common.precision);
        if (active == s_cycle) return dispatch(cyc, cyc.common.precision);
        if (active == s_eval) return dispatch(ev, ev.common.precision);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
