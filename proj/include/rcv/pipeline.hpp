#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rcv/config.hpp"
#include "rcv/external_detector.hpp"
#include "rcv/io/scene_io.hpp"
#include "rcv/recursion.hpp"
#include "rcv/synthscene.hpp"

namespace rcv {

inline std::unique_ptr<Detector> make_detector(const DetectorSpec& spec, const std::filesystem::path& scratch) {
    if (spec.kind == DetectorKind::external) return std::make_unique<ExternalDetector>(spec.command, scratch);
    return std::make_unique<OracleDetector>(spec.noise);
}

inline SceneOptions scene_options(const PipelineConfig& cfg, std::vector<std::string>* warnings = nullptr) {
    return {cfg.nms_tau, cfg.parallelism, warnings};
}

/// One detector pair per call; external children live as long as the pair.
struct DetectorPair {
    std::unique_ptr<Detector> rgb;
    std::unique_ptr<Detector> pv;

    explicit DetectorPair(const PipelineConfig& cfg)
        : rgb(make_detector(cfg.detector_rgb, std::filesystem::path(cfg.scratch_dir) / "rgb")),
          pv(make_detector(cfg.detector_pv, std::filesystem::path(cfg.scratch_dir) / "pv")) {}
};

inline std::vector<OrientedBox3D> detect_frame(const FrameData& frame, const PipelineConfig& cfg, DetectorPair& detectors,
                                               std::vector<std::string>* warnings = nullptr) {
    return detect_scene(frame, *detectors.rgb, *detectors.pv, cfg.recursion, scene_options(cfg, warnings));
}

/// Scene k of a dataset seeded with `seed`.
inline SceneSpec dataset_scene_spec(SceneSpec base, std::uint64_t seed, std::size_t k) {
    base.seed = detail::splitmix64(seed * 1000003ULL + k);
    return base;
}

inline std::string scene_dir_name(std::size_t k) { return "scene_" + std::to_string(k); }

inline void write_dataset(const std::filesystem::path& out, const SceneSpec& base, std::uint64_t seed, std::size_t count) {
    std::filesystem::create_directories(out);
    for (std::size_t k = 0; k < count; ++k) io::write_scene(out / scene_dir_name(k), generate_scene(dataset_scene_spec(base, seed, k)));
}

/// Manifests below `root`: the root itself when it is a scene, otherwise its
/// immediate scene subdirectories in name order.
inline std::vector<std::filesystem::path> find_manifests(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (fs::is_regular_file(root)) return {root};
    if (fs::exists(root / "manifest.json")) return {root / "manifest.json"};
    std::vector<fs::path> out;
    if (fs::is_directory(root)) {
        for (const auto& entry : fs::directory_iterator(root)) {
            if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) out.push_back(entry.path() / "manifest.json");
        }
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) fail(ErrorKind::IoError, "no manifest found under " + root.string());
    return out;
}

// ---------------------------------------------------------------- evaluation

struct ClassReport {
    std::string class_label;
    std::optional<double> ap;
    std::size_t num_gt = 0;
    std::size_t num_pred = 0;
};

struct EvalReport {
    double iou_thresh = 0.15;
    ApMode mode = ApMode::allpoint;
    std::vector<ClassReport> classes;

    /// Mean over classes that have ground truth.
    std::optional<double> mean_ap() const {
        double sum = 0.0;
        int n = 0;
        for (const auto& c : classes) {
            if (c.ap) {
                sum += *c.ap;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return sum / n;
    }
};

inline EvalReport evaluate(const std::vector<EvalFrame>& frames, const EvalConfig& cfg) {
    std::set<std::string> labels;
    for (const auto& f : frames) {
        for (const auto& b : f.predictions) labels.insert(b.class_label);
        for (const auto& b : f.ground_truth) labels.insert(b.class_label);
    }
    EvalReport report{cfg.iou_thresh, cfg.mode, {}};
    for (const auto& label : labels) {
        std::vector<EvalFrame> grouped;
        ClassReport cr{label, std::nullopt, 0, 0};
        for (const auto& f : frames) {
            EvalFrame g;
            for (const auto& b : f.predictions)
                if (b.class_label == label) g.predictions.push_back(b);
            for (const auto& b : f.ground_truth)
                if (b.class_label == label) g.ground_truth.push_back(b);
            cr.num_pred += g.predictions.size();
            cr.num_gt += g.ground_truth.size();
            grouped.push_back(std::move(g));
        }
        cr.ap = average_precision(match_predictions(grouped, cfg.iou_thresh), cfg.mode);
        report.classes.push_back(std::move(cr));
    }
    return report;
}

inline nlohmann::json eval_report_json(const EvalReport& r) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : r.classes) {
        classes.push_back({{"class", c.class_label},
                           {"iou_thresh", r.iou_thresh},
                           {"mode", to_string(r.mode)},
                           {"ap", c.ap ? nlohmann::json(*c.ap) : nlohmann::json(nullptr)},
                           {"num_gt", c.num_gt},
                           {"num_pred", c.num_pred}});
    }
    const auto m = r.mean_ap();
    return {{"classes", classes}, {"mean_ap", m ? nlohmann::json(*m) : nlohmann::json(nullptr)}};
}

inline std::string eval_table(const EvalReport& r) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %8s %8s %8s\n", "class", "AP", "num_gt", "num_pred");
    out << line;
    for (const auto& c : r.classes) {
        const std::string ap = c.ap ? std::to_string(*c.ap).substr(0, 6) : "n/a";
        std::snprintf(line, sizeof line, "%-16s %8s %8zu %8zu\n", c.class_label.c_str(), ap.c_str(), c.num_gt, c.num_pred);
        out << line;
    }
    const auto m = r.mean_ap();
    std::snprintf(line, sizeof line, "mAP (%s, IoU %.2f): %s\n", to_string(r.mode), r.iou_thresh,
                  m ? std::to_string(*m).substr(0, 6).c_str() : "n/a");
    out << line;
    return out.str();
}

// --------------------------------------------------------------------- sweep

/// Per-object quality of one detection run against ground truth.
struct LoopStats {
    std::size_t objects = 0;
    double iou_sum = 0.0;
    std::size_t boxes = 0;
    std::size_t converged = 0;
    double steps_sum = 0.0;

    void add(const std::vector<OrientedBox3D>& predictions, const std::vector<OrientedBox3D>& gts) {
        for (const auto& g : gts) {
            double best = 0.0;
            for (const auto& p : predictions)
                if (p.class_label == g.class_label) best = std::max(best, iou3d(p, g));
            iou_sum += best;
            ++objects;
        }
        for (const auto& p : predictions) {
            ++boxes;
            converged += p.converged;
            steps_sum += p.steps;
        }
    }

    void merge(const LoopStats& o) {
        objects += o.objects;
        iou_sum += o.iou_sum;
        boxes += o.boxes;
        converged += o.converged;
        steps_sum += o.steps_sum;
    }

    double mean_iou() const { return objects ? iou_sum / static_cast<double>(objects) : 0.0; }
    double convergence_rate() const { return boxes ? static_cast<double>(converged) / static_cast<double>(boxes) : 0.0; }
    double mean_steps() const { return boxes ? steps_sum / static_cast<double>(boxes) : 0.0; }
};

struct LabeledFrame {
    std::string name;
    FrameData frame;
    std::vector<OrientedBox3D> gt_boxes;
};

/// Frames of a dataset with their ground truth; frames without it are an error.
inline std::vector<LabeledFrame> load_labeled(const std::filesystem::path& root) {
    std::vector<LabeledFrame> out;
    for (const auto& manifest : find_manifests(root)) {
        auto loaded = io::load_frame(manifest);
        if (!loaded.gt_boxes) fail(ErrorKind::IoError, manifest.string() + ": no gt_boxes entry");
        out.push_back({manifest.parent_path().filename().string(), std::move(loaded.frame), std::move(*loaded.gt_boxes)});
    }
    return out;
}

struct SweepRow {
    double jitter_sigma_px = 0.0;
    double miss_prob = 0.0;
    LoopStats stats;
};

/// Runs detection over every frame for each noise setting, scenes in
/// parallel. The oracle noise seed stays fixed across settings, so one scene
/// sees the same underlying Gaussian draws at every sigma.
inline std::vector<SweepRow> run_sweep(const std::vector<LabeledFrame>& scenes, const PipelineConfig& base,
                                       const std::vector<double>& sigmas, const std::vector<double>& misses) {
    std::vector<SweepRow> rows;
    for (double miss : misses) {
        for (double sigma : sigmas) {
            PipelineConfig cfg = base;
            for (auto* d : {&cfg.detector_rgb, &cfg.detector_pv}) {
                d->kind = DetectorKind::oracle;
                d->noise.jitter_sigma_px = sigma;
                d->noise.miss_prob = miss;
            }
            DetectorPair detectors(cfg);
            PipelineConfig per_scene = cfg;
            per_scene.parallelism = 1;
            std::vector<LoopStats> stats(scenes.size());
            parallel_for(scenes.size(), cfg.parallelism, [&](std::size_t i) {
                stats[i].add(detect_frame(scenes[i].frame, per_scene, detectors), scenes[i].gt_boxes);
            });
            SweepRow row{sigma, miss, {}};
            for (const auto& s : stats) row.stats.merge(s);
            rows.push_back(row);
        }
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << "jitter_sigma_px,miss_prob,mean_iou,convergence_rate,mean_steps\n";
    char line[200];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.jitter_sigma_px, r.miss_prob, r.stats.mean_iou(),
                      r.stats.convergence_rate(), r.stats.mean_steps());
        out << line;
    }
    return out.str();
}

}  // namespace rcv
