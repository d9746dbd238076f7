#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rcv/error.hpp"
#include "rcv/io/json.hpp"
#include "rcv/io/scene_io.hpp"
#include "rcv/recursion.hpp"

namespace rcv {

enum class DetectorKind { oracle, external };

struct DetectorSpec {
    DetectorKind kind = DetectorKind::oracle;
    DetectorNoise noise;
    std::string command;
};

struct EvalConfig {
    double iou_thresh = 0.15;
    ApMode mode = ApMode::allpoint;
};

struct PipelineConfig {
    RecursionConfig recursion;
    DetectorSpec detector_rgb;
    DetectorSpec detector_pv;
    double nms_tau = 0.25;
    EvalConfig eval;
    std::string scratch_dir = "rcv_scratch";
    int parallelism = 1;
};

namespace config_detail {

using nlohmann::json;

inline const char* method_name(AxesMethod m) {
    switch (m) {
        case AxesMethod::camera: return "camera";
        case AxesMethod::pca: return "pca";
        case AxesMethod::normals: return "normals";
    }
    return "normals";
}

inline json noise_json(const DetectorNoise& n) {
    return {{"jitter_sigma_px", n.jitter_sigma_px},
            {"miss_prob", n.miss_prob},
            {"false_positive_rate", n.false_positive_rate},
            {"seed", n.seed}};
}

inline json detector_json(const DetectorSpec& d) {
    if (d.kind == DetectorKind::external) return {{"type", "external"}, {"command", d.command}};
    return {{"type", "oracle"}, {"noise", noise_json(d.noise)}};
}

/// Walks a json object, remembering the dotted path for error messages and
/// rejecting keys nobody asked for.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(ErrorKind::ConfigError, where() + "expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.push_back(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            fail(ErrorKind::ConfigError, where(key) + "has the wrong type");
        }
    }

    std::optional<Reader> child(const char* key) {
        seen_.push_back(key);
        if (!j_.contains(key)) return std::nullopt;
        return Reader(j_.at(key), join(key));
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
                fail(ErrorKind::ConfigError, where(it.key()) + "unknown key");
            }
        }
    }

    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    std::string where(const std::string& key = {}) const {
        const std::string p = key.empty() ? path_ : join(key);
        return "'" + (p.empty() ? std::string("<root>") : p) + "': ";
    }

private:
    const json& j_;
    std::string path_;
    std::vector<std::string> seen_;
};

inline void read_noise(Reader r, DetectorNoise& n) {
    r.get("jitter_sigma_px", n.jitter_sigma_px);
    r.get("miss_prob", n.miss_prob);
    r.get("false_positive_rate", n.false_positive_rate);
    r.get("seed", n.seed);
    r.finish();
}

inline void read_detector(Reader r, DetectorSpec& d) {
    std::string type = d.kind == DetectorKind::external ? "external" : "oracle";
    r.get("type", type);
    if (type == "oracle") {
        d.kind = DetectorKind::oracle;
    } else if (type == "external") {
        d.kind = DetectorKind::external;
    } else {
        fail(ErrorKind::ConfigError, r.where("type") + "must be 'oracle' or 'external'");
    }
    if (auto n = r.child("noise")) read_noise(*n, d.noise);
    r.get("command", d.command);
    r.finish();
}

inline bool command_exists(const std::string& command) {
    std::istringstream in(command);
    std::string exe;
    in >> exe;
    if (exe.empty()) return false;
    if (exe.find('/') != std::string::npos) return std::filesystem::exists(exe);
    const char* path = std::getenv("PATH");
    std::istringstream dirs(path ? path : "");
    for (std::string dir; std::getline(dirs, dir, ':');) {
        if (!dir.empty() && std::filesystem::exists(std::filesystem::path(dir) / exe)) return true;
    }
    return false;
}

}  // namespace config_detail

inline nlohmann::json config_to_json(const PipelineConfig& c) {
    using config_detail::json;
    const RecursionConfig& r = c.recursion;
    return {
        {"recursion",
         {{"axes",
           {{"method", config_detail::method_name(r.axes.method)},
            {"knn_k", r.axes.knn_k},
            {"kmeans_k", r.axes.kmeans_k},
            {"kmeans_iters", r.axes.kmeans_iters},
            {"seed", r.axes.seed}}},
          {"max_steps", r.max_steps},
          {"eps_axes_deg", r.eps_axes_deg},
          {"eps_box_m", r.eps_box_m},
          {"emit_coarse_box", r.emit_coarse_box},
          {"on_detector_miss", r.on_detector_miss == MissPolicy::drop ? "drop" : "return_last"},
          {"render", {{"max_side", r.render.max_side}, {"margin", r.render.margin}, {"splat_radius", r.render.splat_radius}}},
          {"pair_min_quality", r.pair_min_quality}}},
        {"detector_rgb", config_detail::detector_json(c.detector_rgb)},
        {"detector_pv", config_detail::detector_json(c.detector_pv)},
        {"nms_tau", c.nms_tau},
        {"eval", {{"iou_thresh", c.eval.iou_thresh}, {"mode", to_string(c.eval.mode)}}},
        {"scratch_dir", c.scratch_dir},
        {"parallelism", c.parallelism},
    };
}

/// Strict decoding on top of the defaults: unknown keys and wrong types are
/// errors. Referenced external commands must exist.
inline PipelineConfig config_from_json(const nlohmann::json& j) {
    using config_detail::Reader;
    PipelineConfig c;
    Reader root(j, "");
    if (auto r = root.child("recursion")) {
        RecursionConfig& rc = c.recursion;
        if (auto a = r->child("axes")) {
            std::string method = config_detail::method_name(rc.axes.method);
            a->get("method", method);
            if (method == "camera") {
                rc.axes.method = AxesMethod::camera;
            } else if (method == "pca") {
                rc.axes.method = AxesMethod::pca;
            } else if (method == "normals") {
                rc.axes.method = AxesMethod::normals;
            } else {
                fail(ErrorKind::ConfigError, a->where("method") + "must be camera, pca or normals");
            }
            a->get("knn_k", rc.axes.knn_k);
            a->get("kmeans_k", rc.axes.kmeans_k);
            a->get("kmeans_iters", rc.axes.kmeans_iters);
            a->get("seed", rc.axes.seed);
            a->finish();
        }
        r->get("max_steps", rc.max_steps);
        r->get("eps_axes_deg", rc.eps_axes_deg);
        r->get("eps_box_m", rc.eps_box_m);
        r->get("emit_coarse_box", rc.emit_coarse_box);
        std::string policy = rc.on_detector_miss == MissPolicy::drop ? "drop" : "return_last";
        r->get("on_detector_miss", policy);
        if (policy == "drop") {
            rc.on_detector_miss = MissPolicy::drop;
        } else if (policy == "return_last") {
            rc.on_detector_miss = MissPolicy::return_last;
        } else {
            fail(ErrorKind::ConfigError, r->where("on_detector_miss") + "must be return_last or drop");
        }
        if (auto rr = r->child("render")) {
            rr->get("max_side", rc.render.max_side);
            rr->get("margin", rc.render.margin);
            rr->get("splat_radius", rc.render.splat_radius);
            rr->finish();
        }
        r->get("pair_min_quality", rc.pair_min_quality);
        r->finish();
    }
    if (auto d = root.child("detector_rgb")) config_detail::read_detector(*d, c.detector_rgb);
    if (auto d = root.child("detector_pv")) config_detail::read_detector(*d, c.detector_pv);
    root.get("nms_tau", c.nms_tau);
    if (auto e = root.child("eval")) {
        e->get("iou_thresh", c.eval.iou_thresh);
        std::string mode = to_string(c.eval.mode);
        e->get("mode", mode);
        if (mode == "allpoint") {
            c.eval.mode = ApMode::allpoint;
        } else if (mode == "R40" || mode == "r40") {
            c.eval.mode = ApMode::r40;
        } else {
            fail(ErrorKind::ConfigError, e->where("mode") + "must be allpoint or R40");
        }
        e->finish();
    }
    root.get("scratch_dir", c.scratch_dir);
    root.get("parallelism", c.parallelism);
    root.finish();

    try {
        c.recursion.validate();
        c.detector_rgb.noise.validate();
        c.detector_pv.noise.validate();
    } catch (const Error& e) {
        fail(ErrorKind::ConfigError, e.message());
    }
    if (c.parallelism < 1) fail(ErrorKind::ConfigError, "'parallelism': must be >= 1");
    if (!(c.nms_tau > 0.0 && c.nms_tau <= 1.0)) fail(ErrorKind::ConfigError, "'nms_tau': must lie in (0, 1]");
    if (!(c.eval.iou_thresh > 0.0 && c.eval.iou_thresh <= 1.0)) fail(ErrorKind::ConfigError, "'eval.iou_thresh': must lie in (0, 1]");
    for (const auto& [name, d] : {std::pair{"detector_rgb", &c.detector_rgb}, std::pair{"detector_pv", &c.detector_pv}}) {
        if (d->kind == DetectorKind::external && !config_detail::command_exists(d->command)) {
            fail(ErrorKind::ConfigError, std::string("'") + name + ".command': not found: " + d->command);
        }
    }
    return c;
}

/// Applies one `dotted.key=value` override. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::ConfigError, "override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) fail(ErrorKind::ConfigError, "override key '" + key + "' has an empty segment");
        if (!node->is_object()) *node = nlohmann::json::object();
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(value);
}

/// Loads a config file (optional), applies overrides and the RCV_SCRATCH
/// environment override. Errors name the file and, where it can be located,
/// the line of the offending key.
inline PipelineConfig load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides = {}) {
    nlohmann::json j = nlohmann::json::object();
    std::string text;
    if (path) {
        text = io::detail::read_file(*path);
        j = io::read_json_file(*path);
    }
    for (const auto& o : overrides) apply_override(j, o);
    PipelineConfig c;
    try {
        c = config_from_json(j);
    } catch (const Error& e) {
        if (!path) throw;
        // Point at the first line mentioning the innermost key of the message.
        const std::string& msg = e.message();
        std::string location = path->string();
        const auto q0 = msg.find('\'');
        const auto q1 = q0 == std::string::npos ? q0 : msg.find('\'', q0 + 1);
        if (q1 != std::string::npos) {
            std::string dotted = msg.substr(q0 + 1, q1 - q0 - 1);
            const std::string leaf = "\"" + dotted.substr(dotted.rfind('.') == std::string::npos ? 0 : dotted.rfind('.') + 1) + "\"";
            if (const auto pos = text.find(leaf); pos != std::string::npos) {
                location += ":" + std::to_string(1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
            }
        }
        fail(ErrorKind::ConfigError, location + ": " + msg);
    }
    if (const char* env = std::getenv("RCV_SCRATCH"); env && *env) c.scratch_dir = env;
    return c;
}

}  // namespace rcv
