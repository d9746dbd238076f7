#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rcv/io/json.hpp"
#include "rcv/io/ply.hpp"
#include "rcv/io/png.hpp"
#include "rcv/recursion.hpp"
#include "rcv/synthscene.hpp"

namespace rcv::io {

namespace fs = std::filesystem;

inline json read_json_file(const fs::path& path) {
    const std::string text = detail::read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        // byte offset -> line number for the error message
        std::size_t line = 1;
        for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) line += text[i] == '\n';
        fail(ErrorKind::ConfigError, path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
}

inline void write_json_file(const fs::path& path, const json& j) { detail::write_file(path, dump(j)); }

/// scene_<k>/{image.png, cloud.ply, instances.png, gt_boxes.json, manifest.json}
inline void write_scene(const fs::path& dir, const SceneFrame& scene) {
    fs::create_directories(dir);
    write_png(dir / "image.png", scene.image);
    write_ply(dir / "cloud.ply", scene.cloud);
    write_instance_png(dir / "instances.png", scene.image_instances);
    write_json_file(dir / "gt_boxes.json", boxes_to_json(scene.gt_boxes));
    write_json_file(dir / "manifest.json", {{"image", "image.png"},
                                            {"cloud", "cloud.ply"},
                                            {"instances", "instances.png"},
                                            {"gt_boxes", "gt_boxes.json"},
                                            {"intrinsics", intrinsics_to_json(scene.intrinsics)}});
}

struct LoadedFrame {
    fs::path manifest;
    FrameData frame;
    std::optional<std::vector<OrientedBox3D>> gt_boxes;
};

/// Accepts a manifest path or a scene directory holding manifest.json.
inline fs::path resolve_manifest(const fs::path& p) {
    if (fs::is_directory(p)) return p / "manifest.json";
    return p;
}

inline LoadedFrame load_frame(const fs::path& manifest_or_dir) {
    const fs::path manifest = resolve_manifest(manifest_or_dir);
    if (!fs::exists(manifest)) fail(ErrorKind::IoError, "missing manifest " + manifest.string());
    const json m = read_json_file(manifest);
    const fs::path base = manifest.parent_path();
    auto path_of = [&](const char* key) {
        const fs::path p = m.at(key).get<std::string>();
        return p.is_absolute() ? p : base / p;
    };
    LoadedFrame out;
    out.manifest = manifest;
    try {
        out.frame.intrinsics = intrinsics_from_json(m.at("intrinsics"));
        out.frame.image = read_png(path_of("image"));
        out.frame.cloud = read_ply(path_of("cloud"));
        if (m.contains("gt_boxes")) out.gt_boxes = boxes_from_json(read_json_file(path_of("gt_boxes")));
        if (m.contains("instances")) {
            out.frame.image_instances = read_instance_png(path_of("instances"));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::IoError, manifest.string() + ": " + e.what());
    }
    if (out.gt_boxes) {
        for (std::size_t i = 0; i < out.gt_boxes->size(); ++i) {
            out.frame.classes[static_cast<std::uint32_t>(i + 1)] = (*out.gt_boxes)[i].class_label;
        }
    }
    if (out.frame.image_instances) out.frame.image_instances->classes = out.frame.classes;
    return out;
}

}  // namespace rcv::io
