// ofield: command-line front end for the opacity radiance field pipeline.
//
//   generate → carve → train → render → eval, plus calibrate and matte-prep.
//
// Exit codes: 0 ok, 2 usage, 3 config or data error, 4 numeric failure.

#include "ofield/camera.hpp"
#include "ofield/carving.hpp"
#include "ofield/checkpoint.hpp"
#include "ofield/matte.hpp"
#include "ofield/metrics.hpp"
#include "ofield/model.hpp"
#include "ofield/parallel.hpp"
#include "ofield/scene.hpp"
#include "ofield/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ofield;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void log(const std::string& stage, const std::string& msg) { std::cerr << "[" << stage << "] " << msg << "\n"; }

json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << "\n";
}

void prepare_out(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

/// Records the fully resolved invocation next to the artifacts.
void write_run_record(const fs::path& dir, const std::string& command, const json& options) {
    write_json(dir / "run.json", {{"command", command}, {"options", options}});
}

/// Config file (optional) plus --set overrides, validated.
json resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
    json j = path.empty() ? config_to_json(TrainConfig{}) : read_json(path);
    for (const auto& o : overrides) apply_override(j, o);
    config_from_json(j);
    return j;
}

TrainConfig config_for(const json& j, const Dataset* data) {
    TrainConfig c = config_from_json(j);
    // Scene bounds follow the dataset unless the config pins them.
    if (data && !j.contains("bounds") && data->scene.is_object() && !data->scene.empty())
        c.scene_bounds = scene_from_json(data->scene).bounds;
    return c;
}

std::vector<int> spaced_steps(int per_camera, int steps_per_lap) {
    std::vector<int> s;
    for (int k = 0; k < per_camera; ++k) s.push_back(k * steps_per_lap / per_camera);
    return s;
}

Proxy proxy_from_file(const fs::path& path, const TrainConfig& c) {
    Proxy p;
    p.grid = load_voxel_grid(path);
    p.efficient = c.efficient_sampling();
    p.bounds = c.scene_bounds;
    return p;
}

// ---------------------------------------------------------------------------

struct GenerateOpts {
    std::string scene = "fuzzy-sphere", scene_json, split = "train", out;
    int views = 8, res = 64, spr = 256;
    bool alpha16 = false;
    std::vector<double> screen;  // when set, also write composites over this color
};

int run_generate(const GenerateOpts& o) {
    const AnalyticScene scene = o.scene_json.empty() ? scene_by_name(o.scene) : scene_from_json(read_json(o.scene_json));
    if (o.res < 8) throw ConfigError("generate: --res must be at least 8");
    const TurntableRig rig = default_rig(o.res);
    Dataset d;
    d.rig = rig;
    d.scene = scene_to_json(scene);
    if (o.split == "train") {
        const int cams = static_cast<int>(rig.base_views.size());
        if (o.views < 1) throw ConfigError("generate: --views must be positive");
        const int per_camera = (o.views + cams - 1) / cams;
        if (per_camera > rig.steps_per_lap) throw ConfigError("generate: more views than turntable steps");
        d.views = generate_dataset(scene, rig, spaced_steps(per_camera, rig.steps_per_lap), o.spr);
        // Cameras are the outer loop; keep the first o.views in step-major order so
        // truncation drops late steps rather than a whole camera.
        std::vector<GroundTruthView> ordered;
        for (int k = 0; k < per_camera; ++k)
            for (int c = 0; c < cams; ++c) ordered.push_back(d.views[static_cast<std::size_t>(c * per_camera + k)]);
        ordered.resize(static_cast<std::size_t>(o.views));
        d.views = std::move(ordered);
    } else if (o.split == "heldout") {
        for (auto [cam, step] : default_heldout_views())
            for (auto& v : generate_dataset(scene, rig, {step}, o.spr))
                if (v.camera == cam) d.views.push_back(std::move(v));
    } else {
        throw UsageError("generate: --split must be train or heldout");
    }
    prepare_out(o.out);
    save_dataset(o.out, d, o.alpha16);
    save_rig(fs::path(o.out) / "rig.json", rig);
    if (!o.screen.empty()) {
        if (o.screen.size() != 3) throw UsageError("generate: --screen takes three values");
        for (std::size_t i = 0; i < d.views.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "view_%03zu_screen.png", i);
            write_png(fs::path(o.out) / name, composite_over(d.views[i].foreground, d.views[i].alpha,
                                                             {o.screen[0], o.screen[1], o.screen[2]}));
        }
    }
    write_run_record(o.out, "generate",
                     {{"scene", d.scene}, {"split", o.split}, {"views", d.views.size()}, {"res", o.res},
                      {"spr", o.spr}, {"alpha16", o.alpha16}, {"screen", o.screen}});
    log("generate", "wrote " + std::to_string(d.views.size()) + " views to " + o.out);
    return kOk;
}

// ---------------------------------------------------------------------------

struct ConfigOpts {
    std::string config;
    std::vector<std::string> set;
};

struct CarveOpts {
    std::string data, out;
    ConfigOpts cfg;
};

int run_carve(const CarveOpts& o) {
    const json j = resolve_config(o.cfg.config, o.cfg.set);
    const Dataset data = load_dataset(o.data);
    TrainConfig c = config_for(j, &data);
    c.mode = Mode::kFull;  // always rasterize tight bounds here
    const Proxy proxy = build_proxy(data.views, c);
    prepare_out(o.out);
    save_voxel_grid(fs::path(o.out) / "proxy.voxg", proxy.grid);
    double issued = 0.0, full = 0.0;
    json per_view = json::array();
    for (std::size_t i = 0; i < data.views.size(); ++i) {
        const auto& v = data.views[i].view;
        const DepthBounds tight = proxy.depth_bounds(v);
        const DepthBounds box = box_depth_bounds(c.scene_bounds, v);
        char near[64], far[64];
        std::snprintf(near, sizeof near, "view_%03zu_near.pfm", i);
        std::snprintf(far, sizeof far, "view_%03zu_far.pfm", i);
        save_depth_bounds(fs::path(o.out) / near, fs::path(o.out) / far, tight);
        const auto rays = static_cast<double>(tight.valid.count());
        issued += rays;
        full += static_cast<double>(v.width) * v.height;
        per_view.push_back({{"near", near}, {"far", far}, {"rays", rays}, {"box_rays", box.valid.count()}});
    }
    write_json(fs::path(o.out) / "proxy.json", {{"occupied_voxels", proxy.grid.occupied_count()},
                                                {"grid", proxy.grid.nx},
                                                {"ray_fraction", full > 0 ? issued / full : 0.0},
                                                {"views", per_view}});
    write_run_record(o.out, "carve", {{"data", o.data}, {"config", j}});
    log("carve", std::to_string(proxy.grid.occupied_count()) + " voxels kept; rays " +
                     std::to_string(issued / std::max(full, 1.0)) + " of full frame");
    return kOk;
}

// ---------------------------------------------------------------------------

struct TrainOpts {
    std::string data, out, proxy, resume;
    int steps = -1;
    ConfigOpts cfg;
};

int run_train(const TrainOpts& o) {
    json j = resolve_config(o.cfg.config, o.cfg.set);
    if (o.steps >= 0) j["steps"] = o.steps;
    std::string data_dir = o.data.empty() ? j.value("dataset", std::string()) : o.data;
    std::string out_dir = o.out.empty() ? j.value("out", std::string()) : o.out;
    if (data_dir.empty()) throw UsageError("train: --data (or config key dataset) is required");
    if (out_dir.empty()) throw UsageError("train: --out (or config key out) is required");
    const Dataset data = load_dataset(data_dir);
    TrainConfig c = config_for(j, &data);
    j = config_to_json(c);
    j["dataset"] = data_dir;

    prepare_out(out_dir);
    const fs::path out(out_dir);
    write_json(out / "config.json", j);
    write_run_record(out, "train", {{"data", data_dir}, {"proxy", o.proxy}, {"resume", o.resume}, {"config", j}});

    Proxy proxy = o.proxy.empty() ? build_proxy(data.views, c) : proxy_from_file(o.proxy, c);
    save_voxel_grid(out / "proxy.voxg", proxy.grid);
    Trainer trainer(c, data.views, std::move(proxy));
    trainer.set_dump_dir(out);
    if (!o.resume.empty()) {
        trainer.load(o.resume);
        log("train", "resumed at step " + std::to_string(trainer.step_count()));
    }

    const bool append = !o.resume.empty() && fs::exists(out / "metrics.csv");
    std::ofstream csv(out / "metrics.csv", append ? std::ios::app : std::ios::trunc);
    if (!csv) throw IoError("cannot write " + (out / "metrics.csv").string());
    if (!append) csv << Trainer::csv_header() << "\n";
    log("train", "mode " + to_string(c.mode) + ", " + std::to_string(trainer.pool().size()) + " patches, " +
                     std::to_string(c.steps) + " steps");
    while (trainer.step_count() < c.steps) {
        const StepStats s = trainer.step();
        const int64_t done = trainer.step_count();
        if (c.log_interval > 0 && (s.step % c.log_interval == 0 || done == c.steps)) {
            csv << Trainer::csv_row(s) << "\n";
            csv.flush();
            log("train", Trainer::csv_row(s));
        }
        if (c.checkpoint_interval > 0 && done % c.checkpoint_interval == 0 && done < c.steps) {
            char name[64];
            std::snprintf(name, sizeof name, "ckpt_%06lld.ofld", static_cast<long long>(done));
            trainer.save(out / name);
        }
    }
    trainer.save(out / "model.ofld");
    log("train", "wrote " + (out / "model.ofld").string());
    return kOk;
}

// ---------------------------------------------------------------------------

struct RenderOpts {
    std::string ckpt, config, proxy, data, rig, view_json, out;
    int camera = 0, step = -1;
    bool patchwise = false;
};

int run_render(const RenderOpts& o) {
    const fs::path ckpt(o.ckpt);
    if (!fs::exists(ckpt)) throw CheckpointError("render: checkpoint " + o.ckpt + " not found");
    const fs::path run_dir = ckpt.parent_path();
    const json j = read_json(o.config.empty() ? run_dir / "config.json" : fs::path(o.config));
    const TrainConfig c = config_from_json(j);
    const fs::path proxy_path = o.proxy.empty() ? run_dir / "proxy.voxg" : fs::path(o.proxy);
    const Proxy proxy = proxy_from_file(proxy_path, c);

    OpacityFieldModel model(c);
    auto params = model.all_parameters();
    assign_from(params, load_checkpoint(ckpt));

    Dataset out;
    std::vector<std::pair<int, int>> labels;
    if (!o.data.empty()) {
        const Dataset d = load_dataset(o.data);
        out.rig = d.rig;
        out.scene = d.scene;
        for (const auto& v : d.views) {
            GroundTruthView g;
            g.view = v.view;
            g.camera = v.camera;
            g.step = v.step;
            out.views.push_back(std::move(g));
        }
    } else {
        GroundTruthView g;
        if (!o.view_json.empty()) {
            g.view = view_from_json(read_json(o.view_json));
            g.camera = -1;
        } else {
            if (o.rig.empty() || o.step < 0) throw UsageError("render: give --data, --view-json, or --rig with --step");
            const TurntableRig rig = load_rig(o.rig);
            g.view = propagate_extrinsics(rig, o.camera, o.step);
            g.camera = o.camera;
            g.step = o.step;
            out.rig = rig;
        }
        if (out.rig.base_views.empty()) {
            out.rig.base_views.push_back(g.view);
        }
        out.views.push_back(std::move(g));
    }
    for (auto& g : out.views) {
        const DepthBounds bounds = proxy.depth_bounds(g.view);
        const FrameRender f = o.patchwise ? render_patchwise(model, g.view, bounds) : render_image(model, g.view, bounds);
        g.foreground = f.foreground;
        g.alpha = f.alpha;
    }
    prepare_out(o.out);
    save_dataset(o.out, out);
    write_run_record(o.out, "render", {{"ckpt", o.ckpt}, {"proxy", proxy_path.string()}, {"data", o.data},
                                       {"view_json", o.view_json}, {"rig", o.rig}, {"camera", o.camera},
                                       {"step", o.step}, {"patchwise", o.patchwise}});
    log("render", "wrote " + std::to_string(out.views.size()) + " views to " + o.out);
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvalOpts {
    std::string pred, gt, out;
    int radius = 5;
};

int run_eval(const EvalOpts& o) {
    const Dataset pred = load_dataset(o.pred), gt = load_dataset(o.gt);
    if (pred.views.size() != gt.views.size())
        throw ConfigError("eval: " + std::to_string(pred.views.size()) + " predicted views vs " +
                          std::to_string(gt.views.size()) + " ground-truth views");
    EvalReport report;
    for (std::size_t i = 0; i < gt.views.size(); ++i) {
        const auto& p = pred.views[i];
        const auto& g = gt.views[i];
        if (p.foreground.width != g.foreground.width || p.foreground.height != g.foreground.height)
            throw ConfigError("eval: view " + std::to_string(i) + " size mismatch");
        const std::string name = "cam" + std::to_string(g.camera) + "_step" + std::to_string(g.step);
        report.views.push_back(evaluate_view(name, p.foreground, p.alpha, g.foreground, g.alpha, o.radius));
    }
    const std::string csv = report_csv(report);
    if (o.out.empty()) {
        std::cout << csv;
    } else {
        const fs::path out(o.out);
        if (out.has_parent_path()) prepare_out(out.parent_path());
        write_report_csv(out, report);
    }
    const ViewMetrics m = report.aggregate();
    std::ostringstream s;
    s << "psnr_fg " << m.psnr_fg << " ssim_fg " << m.ssim_fg << " sad_alpha " << m.sad_alpha;
    log("eval", s.str());
    return kOk;
}

// ---------------------------------------------------------------------------

struct CalibrateOpts {
    std::string rig, out;
    int camera = 0, step = 0;
    bool check = false;
};

int run_calibrate(const CalibrateOpts& o) {
    const TurntableRig rig = load_rig(o.rig);
    if (o.check) {
        // Full lap and half lap twice must both return to step 0.
        double lap = 0.0, half = 0.0;
        for (std::size_t cam = 0; cam < rig.base_views.size(); ++cam) {
            const Eigen::Matrix4d base = rig.base_views[cam].pose();
            Eigen::Matrix4d walk = base;
            for (int k = 0; k < rig.steps_per_lap; ++k) walk = rig.step_transform(1) * walk;
            lap = std::max(lap, (walk - base).cwiseAbs().maxCoeff());
            const Eigen::Matrix4d h = rig.step_transform(rig.steps_per_lap / 2);
            half = std::max(half, (h * h * base - base).cwiseAbs().maxCoeff());
        }
        std::cout << json{{"full_lap_error", lap}, {"half_lap_twice_error", half}}.dump() << "\n";
        return lap < 1e-9 && half < 1e-9 ? kOk : kNumeric;
    }
    const CameraView v = propagate_extrinsics(rig, o.camera, o.step);
    const json j = view_to_json(v);
    if (o.out.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        write_json(o.out, j);
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct MatteOpts {
    std::vector<std::string> inputs;
    std::string out;
    std::vector<double> green{0.0, 1.0, 0.0};
    double green_threshold = 0.15, white_threshold = 0.92;
    int erode = 3, dilate = 3;
};

int run_matte(const MatteOpts& o) {
    if (o.green.size() != 3) throw UsageError("matte-prep: --green takes three values");
    if (o.erode < 1 || o.dilate < 1) throw ConfigError("matte-prep: radii must be at least 1");
    KeyParams k;
    k.green = {o.green[0], o.green[1], o.green[2]};
    k.green_threshold = o.green_threshold;
    k.white_threshold = o.white_threshold;
    prepare_out(o.out);
    for (const auto& in : o.inputs) {
        const Image image = read_png(in);
        if (image.channels < 3) throw ConfigError("matte-prep: " + in + " is not an RGB image");
        const Mask mask = key_out(image, k);
        const Trimap tri = make_trimap(mask, o.erode, o.dilate);
        const std::string stem = fs::path(in).stem().string();
        write_mask_png(fs::path(o.out) / (stem + "_mask.png"), mask);
        write_trimap_png(fs::path(o.out) / (stem + "_trimap.png"), tri);
        log("matte-prep", stem + ": " + std::to_string(mask.count()) + " foreground pixels, " +
                              std::to_string(tri.count(TrimapLabel::kUnknown)) + " unknown");
    }
    write_run_record(o.out, "matte-prep", {{"inputs", o.inputs}, {"green", o.green},
                                           {"green_threshold", o.green_threshold},
                                           {"white_threshold", o.white_threshold}, {"erode", o.erode},
                                           {"dilate", o.dilate}});
    return kOk;
}

void add_config_options(CLI::App* sub, ConfigOpts& c) {
    sub->add_option("--config", c.config, "training config JSON");
    sub->add_option("--set", c.set, "override, e.g. --set sampler.K=32 (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ofield: opacity radiance field pipeline"};
    app.require_subcommand(1);
    int threads = -1;
    app.add_option("--threads", threads, "worker threads (default: OFLD_THREADS or all cores)");

    GenerateOpts gen;
    auto* g = app.add_subcommand("generate", "render a ground-truth dataset from an analytic scene");
    g->add_option("--scene", gen.scene, "fuzzy-sphere or blob");
    g->add_option("--scene-json", gen.scene_json, "scene parameters as JSON");
    g->add_option("--views", gen.views, "training views (split between cameras)");
    g->add_option("--res", gen.res, "image width and height");
    g->add_option("--spr", gen.spr, "quadrature samples per ray");
    g->add_option("--split", gen.split, "train or heldout");
    g->add_flag("--alpha16", gen.alpha16, "16-bit alpha PNGs");
    g->add_option("--screen", gen.screen, "also write composites over this screen color r g b")->expected(3);
    g->add_option("--out", gen.out, "output directory")->required();

    CarveOpts carve_o;
    auto* cv = app.add_subcommand("carve", "carve the silhouette proxy and per-view depth bounds");
    cv->add_option("--data", carve_o.data, "dataset directory")->required();
    cv->add_option("--out", carve_o.out, "output directory")->required();
    add_config_options(cv, carve_o.cfg);

    TrainOpts train_o;
    auto* tr = app.add_subcommand("train", "train the model");
    tr->add_option("--data", train_o.data, "dataset directory");
    tr->add_option("--out", train_o.out, "run directory");
    tr->add_option("--proxy", train_o.proxy, "carved proxy (.voxg); carved from the data when absent");
    tr->add_option("--resume", train_o.resume, "checkpoint to resume from");
    tr->add_option("--steps", train_o.steps, "override the step count");
    add_config_options(tr, train_o.cfg);

    RenderOpts render_o;
    auto* rd = app.add_subcommand("render", "render views from a checkpoint");
    rd->add_option("--ckpt", render_o.ckpt, "checkpoint file")->required();
    rd->add_option("--config", render_o.config, "config JSON (default: config.json next to the checkpoint)");
    rd->add_option("--proxy", render_o.proxy, "proxy grid (default: proxy.voxg next to the checkpoint)");
    rd->add_option("--data", render_o.data, "render every view of this dataset");
    rd->add_option("--rig", render_o.rig, "rig JSON for --camera/--step");
    rd->add_option("--camera", render_o.camera, "camera index");
    rd->add_option("--step", render_o.step, "turntable step");
    rd->add_option("--view-json", render_o.view_json, "explicit camera JSON");
    rd->add_flag("--patchwise", render_o.patchwise, "render patch by patch instead of full frame");
    rd->add_option("--out", render_o.out, "output directory")->required();

    EvalOpts eval_o;
    auto* ev = app.add_subcommand("eval", "foreground-masked metrics of rendered views against ground truth");
    ev->add_option("--pred", eval_o.pred, "rendered dataset directory")->required();
    ev->add_option("--gt", eval_o.gt, "ground-truth dataset directory")->required();
    ev->add_option("--out", eval_o.out, "CSV path (stdout when absent)");
    ev->add_option("--radius", eval_o.radius, "morphology radius for U+ and U-");

    CalibrateOpts cal_o;
    auto* cl = app.add_subcommand("calibrate", "propagate step-0 extrinsics around the turntable");
    cl->add_option("--rig", cal_o.rig, "rig JSON")->required();
    cl->add_option("--camera", cal_o.camera, "camera index");
    cl->add_option("--step", cal_o.step, "turntable step");
    cl->add_option("--out", cal_o.out, "view JSON path (stdout when absent)");
    cl->add_flag("--check", cal_o.check, "report lap-closure errors instead");

    MatteOpts matte_o;
    auto* mp = app.add_subcommand("matte-prep", "key out green and white, then build a trimap");
    mp->add_option("--input", matte_o.inputs, "RGB PNG(s)")->required();
    mp->add_option("--out", matte_o.out, "output directory")->required();
    mp->add_option("--green", matte_o.green, "screen color r g b")->expected(3);
    mp->add_option("--green-threshold", matte_o.green_threshold, "chroma distance threshold");
    mp->add_option("--white-threshold", matte_o.white_threshold, "minimum channel for white");
    mp->add_option("--erode", matte_o.erode, "erosion radius");
    mp->add_option("--dilate", matte_o.dilate, "dilation radius");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (threads < 0)
            if (const char* env = std::getenv("OFLD_THREADS")) threads = std::atoi(env);
        if (threads > 0) set_thread_count(threads);

        if (*g) return run_generate(gen);
        if (*cv) return run_carve(carve_o);
        if (*tr) return run_train(train_o);
        if (*rd) return run_render(render_o);
        if (*ev) return run_eval(eval_o);
        if (*cl) return run_calibrate(cal_o);
        if (*mp) return run_matte(matte_o);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n" << app.help();
        return kUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}
