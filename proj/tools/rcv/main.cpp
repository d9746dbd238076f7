#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rcv/config.hpp"
#include "rcv/pipeline.hpp"
#include "rcv/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;

    rcv::PipelineConfig load() const {
        auto cfg = rcv::load_config(config.empty() ? std::nullopt : std::optional<fs::path>(config), sets);
        if (seed) {
            cfg.detector_rgb.noise.seed = *seed;
            cfg.detector_pv.noise.seed = *seed;
            cfg.recursion.axes.seed = *seed;
        }
        return cfg;
    }
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
    cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
    auto* out = cmd->add_option("--out", c.out, "output path");
    if (out_required) out->required();
    cmd->add_option("--seed", c.seed, "seed override");
    cmd->add_option("--set", c.sets, "config override key=value (repeatable)")->take_all();
}

std::vector<double> parse_list(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream in(text);
    for (std::string item; std::getline(in, item, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            rcv::fail(rcv::ErrorKind::InvalidArgument, std::string(what) + ": not a number list: " + text);
        }
    }
    if (out.empty()) rcv::fail(rcv::ErrorKind::InvalidArgument, std::string(what) + " is empty");
    return out;
}

int report(std::string_view kind, const std::string& message, int code) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
    return code;
}

struct SynthArgs {
    std::size_t scenes = 10;
    std::string orientation = "upright";
    int min_objects = 1;
    int max_objects = 3;
    bool avoid_occlusion = false;
    bool full_view = false;
    double density = 2500.0;
    double clutter = 20.0;
    double occluders = 0.0;
};

int run_synth(const Common& c, const SynthArgs& a) {
    c.load();  // validates --config/--set even though scenes take their own flags
    rcv::SceneSpec spec;
    spec.orientation = a.orientation == "full_so3" ? rcv::OrientationMode::full_so3 : rcv::OrientationMode::upright;
    spec.min_objects = a.min_objects;
    spec.max_objects = a.max_objects;
    spec.avoid_occlusion = a.avoid_occlusion;
    spec.partial_view = !a.full_view;
    spec.points_per_m2 = a.density;
    spec.clutter_density = a.clutter;
    spec.occluder_prob = a.occluders;
    rcv::write_dataset(c.out, spec, c.seed.value_or(0), a.scenes);
    std::cout << json{{"scenes", a.scenes}, {"out", c.out}}.dump() << "\n";
    return 0;
}

/// One boxes file per frame: `<out>/<frame>.json`, or `--out` itself when it
/// names a .json file and there is a single frame.
int run_detect(const Common& c, const std::string& input) {
    const auto cfg = c.load();
    const auto manifests = rcv::find_manifests(input);
    const bool single_file = fs::path(c.out).extension() == ".json";
    if (single_file && manifests.size() != 1) rcv::fail(rcv::ErrorKind::InvalidArgument, "--out names a file but the input has several frames");
    if (!single_file) fs::create_directories(c.out);
    rcv::DetectorPair detectors(cfg);
    std::size_t total = 0;
    for (const auto& manifest : manifests) {
        const auto loaded = rcv::io::load_frame(manifest);
        std::vector<std::string> warnings;
        const auto boxes = rcv::detect_frame(loaded.frame, cfg, detectors, &warnings);
        for (const auto& w : warnings) std::cerr << json{{"warning", w}, {"frame", manifest.string()}}.dump() << "\n";
        const fs::path target = single_file ? fs::path(c.out) : fs::path(c.out) / (manifest.parent_path().filename().string() + ".json");
        rcv::io::write_json_file(target, rcv::io::boxes_to_json(boxes));
        total += boxes.size();
    }
    std::cout << json{{"frames", manifests.size()}, {"boxes", total}}.dump() << "\n";
    return 0;
}

int run_eval(const Common& c, const std::string& predictions, const std::string& ground_truth) {
    const auto cfg = c.load();
    std::vector<rcv::EvalFrame> frames;
    for (const auto& manifest : rcv::find_manifests(ground_truth)) {
        const auto loaded = rcv::io::load_frame(manifest);
        if (!loaded.gt_boxes) rcv::fail(rcv::ErrorKind::IoError, manifest.string() + ": no gt_boxes entry");
        rcv::EvalFrame f;
        f.ground_truth = *loaded.gt_boxes;
        fs::path pred = predictions;
        if (fs::is_directory(pred)) pred /= manifest.parent_path().filename().string() + ".json";
        if (fs::exists(pred)) f.predictions = rcv::io::boxes_from_json(rcv::io::read_json_file(pred));
        frames.push_back(std::move(f));
    }
    const auto report = rcv::evaluate(frames, cfg.eval);
    if (!c.out.empty()) rcv::io::write_json_file(c.out, rcv::eval_report_json(report));
    std::cout << rcv::eval_table(report);
    return 0;
}

int run_sweep(const Common& c, const std::string& input, const std::string& sigmas, const std::string& misses) {
    const auto cfg = c.load();
    const auto rows = rcv::run_sweep(rcv::load_labeled(input), cfg, parse_list(sigmas, "--sigmas"), parse_list(misses, "--miss"));
    const std::string csv = rcv::sweep_csv(rows);
    if (c.out.empty()) {
        std::cout << csv;
    } else {
        rcv::io::detail::write_file(c.out, csv);
    }
    return 0;
}

int run_serve(const Common& c, int port, const std::string& data, const std::string& ui) {
    const auto cfg = c.load();
    rcv::service::AnnotationService service(cfg, data);
    httplib::Server server;
    service.bind(server);
    if (!ui.empty() && !server.set_mount_point("/ui", ui)) rcv::fail(rcv::ErrorKind::IoError, "cannot serve " + ui);
    static httplib::Server* running = &server;
    std::signal(SIGINT, [](int) { running->stop(); });
    std::signal(SIGTERM, [](int) { running->stop(); });
    if (!server.bind_to_port("0.0.0.0", port)) rcv::fail(rcv::ErrorKind::IoError, "cannot bind port " + std::to_string(port));
    std::cerr << json{{"listening", port}, {"data", data}}.dump() << "\n";
    server.listen_after_bind();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recursive cross-view 3D box detection and annotation"};
    app.require_subcommand(1);

    Common common;
    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate synthetic scenes");
    add_common(synth, common, true);
    synth->add_option("--scenes", synth_args.scenes, "number of scenes");
    synth->add_option("--orientation", synth_args.orientation, "upright | full_so3")->check(CLI::IsMember({"upright", "full_so3"}));
    synth->add_option("--min-objects", synth_args.min_objects);
    synth->add_option("--max-objects", synth_args.max_objects);
    synth->add_flag("--avoid-occlusion", synth_args.avoid_occlusion, "keep object image footprints apart");
    synth->add_flag("--full-view", synth_args.full_view, "sample all faces instead of only camera-facing ones");
    synth->add_option("--density", synth_args.density, "object surface points per m^2");
    synth->add_option("--clutter", synth_args.clutter, "ground points per m^2");
    synth->add_option("--occluders", synth_args.occluders, "probability of an occluder per object");

    std::string detect_input;
    auto* detect = app.add_subcommand("detect", "detect boxes in one frame or a dataset");
    add_common(detect, common, true);
    detect->add_option("input", detect_input, "manifest, scene directory or dataset directory")->required();

    std::string eval_pred, eval_gt;
    auto* eval = app.add_subcommand("eval", "average precision of predictions against ground truth");
    add_common(eval, common, false);
    eval->add_option("--pred", eval_pred, "prediction file or directory written by detect")->required();
    eval->add_option("--gt", eval_gt, "scene or dataset directory with gt_boxes")->required();

    std::string sweep_input, sweep_sigmas = "0,1,2,4,8", sweep_miss = "0";
    auto* sweep = app.add_subcommand("sweep", "detection quality across detector noise settings");
    add_common(sweep, common, false);
    sweep->add_option("input", sweep_input, "dataset directory with gt_boxes")->required();
    sweep->add_option("--sigmas", sweep_sigmas, "comma-separated jitter sigmas in pixels");
    sweep->add_option("--miss", sweep_miss, "comma-separated miss probabilities");

    int port = 8080;
    std::string data = ".", ui;
    auto* serve = app.add_subcommand("serve", "run the annotation HTTP service");
    add_common(serve, common, false);
    serve->add_option("--port", port);
    serve->add_option("--data", data, "directory for manifests and exports");
    serve->add_option("--ui", ui, "static UI assets mounted at /ui")->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report("UsageError", e.what(), 64);
    }

    try {
        if (*synth) return run_synth(common, synth_args);
        if (*detect) return run_detect(common, detect_input);
        if (*eval) return run_eval(common, eval_pred, eval_gt);
        if (*sweep) return run_sweep(common, sweep_input, sweep_sigmas, sweep_miss);
        if (*serve) return run_serve(common, port, data, ui);
    } catch (const rcv::Error& e) {
        return report(rcv::to_string(e.kind()), e.message(), 1);
    } catch (const std::exception& e) {
        return report("InternalError", e.what(), 1);
    }
    return 0;
}
