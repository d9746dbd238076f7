#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "rcv/config.hpp"
#include "rcv/io/scene_io.hpp"
#include "rcv/pipeline.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that clashes with Eigen internals.
#include <httplib.h>

namespace rcv::service {

using nlohmann::json;
namespace fs = std::filesystem;

struct Reply {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";

    static Reply of(int status, const json& j) { return {status, j.dump(), "application/json"}; }
    static Reply png(std::string bytes) { return {200, std::move(bytes), "image/png"}; }
    static Reply error(int status, std::string_view kind, const std::string& message) {
        return of(status, {{"error", kind}, {"message", message}});
    }
};

enum class TaskStatus { awaiting_labels, converged, failed };

inline const char* to_string(TaskStatus s) {
    switch (s) {
        case TaskStatus::awaiting_labels: return "awaiting_labels";
        case TaskStatus::converged: return "converged";
        case TaskStatus::failed: return "failed";
    }
    return "failed";
}

/// What readers see of a frustum task. Replaced wholesale after each step.
struct TaskSnapshot {
    TaskStatus status = TaskStatus::awaiting_labels;
    int step = 0;
    std::optional<OrientedBox3D> box;
    std::optional<OrientedBox3D> coarse_box;
    std::string front_png;
    std::string side_png;
    json views = json::array();
};

struct Session;

struct FrustumTask {
    std::string id;
    std::shared_ptr<Session> session;
    Detection2D seed;

    std::mutex work;  // one writer; contenders get 409
    RecursionState state;
    std::optional<StepViews> views;

    mutable std::mutex snapshot_mutex;
    std::shared_ptr<const TaskSnapshot> snapshot;

    std::shared_ptr<const TaskSnapshot> read() const {
        std::lock_guard lock(snapshot_mutex);
        return snapshot;
    }
    void publish(std::shared_ptr<const TaskSnapshot> s) {
        std::lock_guard lock(snapshot_mutex);
        snapshot = std::move(s);
    }
};

struct Session {
    std::string id;
    fs::path manifest;
    FrameData frame;
    std::string image_png;

    mutable std::mutex tasks_mutex;
    std::vector<std::shared_ptr<FrustumTask>> tasks;

    FrustumContext context() const { return {&frame.cloud, Vec3::Zero(), &frame.classes}; }
};

/// Session and frustum bookkeeping around the recursion engine. Every
/// geometric result comes from the engine functions unchanged.
class AnnotationService {
public:
    AnnotationService(PipelineConfig config, fs::path data_dir) : config_(std::move(config)), data_dir_(std::move(data_dir)) {
        config_.recursion.validate();
    }

    const PipelineConfig& config() const { return config_; }

    Reply create_session(const json& body) {
        if (!body.is_object() || !body.contains("manifest") || !body["manifest"].is_string()) {
            return Reply::error(400, "InvalidArgument", "body must be {\"manifest\": path}");
        }
        fs::path manifest = body["manifest"].get<std::string>();
        if (manifest.is_relative()) manifest = data_dir_ / manifest;
        auto session = std::make_shared<Session>();
        auto loaded = io::load_frame(manifest);
        session->manifest = loaded.manifest;
        session->frame = std::move(loaded.frame);
        session->image_png = io::encode_png(session->frame.image);
        session->id = "s" + std::to_string(++session_counter_);
        {
            std::unique_lock lock(sessions_mutex_);
            sessions_[session->id] = session;
        }
        return Reply::of(201, {{"session_id", session->id},
                               {"image_url", "/sessions/" + session->id + "/image"},
                               {"intrinsics", io::intrinsics_to_json(session->frame.intrinsics)}});
    }

    Reply session_image(const std::string& sid) const {
        const auto session = find_session(sid);
        if (!session) return not_found("session", sid);
        return Reply::png(session->image_png);
    }

    Reply create_frustum(const std::string& sid, const json& body) {
        const auto session = find_session(sid);
        if (!session) return not_found("session", sid);
        if (!body.is_object() || !body.contains("class") || !body["class"].is_string() || !body.contains("rect")) {
            return Reply::error(400, "InvalidArgument", "body must be {\"class\": str, \"rect\": [u0,v0,u1,v1]}");
        }
        auto task = std::make_shared<FrustumTask>();
        task->session = session;
        task->seed.class_label = body["class"].get<std::string>();
        task->seed.score = 1.0;
        task->seed.rect = io::rect_from_json(body["rect"]).clamped(session->frame.intrinsics.width, session->frame.intrinsics.height);
        if (!task->seed.rect.valid()) return Reply::error(422, "InvalidArgument", "seed rectangle is empty inside the image");

        const auto& cloud = session->frame.cloud;
        task->state = initial_state(cloud, extract_frustum(cloud, session->frame.intrinsics, task->seed));
        task->views = prepare_step(session->context(), task->state, config_.recursion);

        auto snap = std::make_shared<TaskSnapshot>();
        if (config_.recursion.emit_coarse_box) {
            OrientedBox3D coarse = coarse_box(cloud, task->state.indices, {axes_camera(), task->views->frame.origin});
            coarse.class_label = task->seed.class_label;
            coarse.score = task->seed.score;
            snap->coarse_box = coarse;
        }
        task->id = "f" + std::to_string(++task_counter_);
        fill_views(*task, *snap);
        task->publish(snap);
        {
            std::lock_guard lock(session->tasks_mutex);
            session->tasks.push_back(task);
        }
        {
            std::unique_lock lock(sessions_mutex_);
            tasks_[task->id] = task;
        }
        return Reply::of(201, task_json(*task, *task->read()));
    }

    Reply frustum_state(const std::string& fid) const {
        const auto task = find_task(fid);
        if (!task) return not_found("frustum", fid);
        return Reply::of(200, task_json(*task, *task->read()));
    }

    Reply frustum_view(const std::string& fid, const std::string& which) const {
        const auto task = find_task(fid);
        if (!task) return not_found("frustum", fid);
        const auto snap = task->read();
        if (which == "front" && !snap->front_png.empty()) return Reply::png(snap->front_png);
        if (which == "side" && !snap->side_png.empty()) return Reply::png(snap->side_png);
        return Reply::error(404, "NotFound", "no " + which + " view for frustum " + fid);
    }

    /// One human-driven step: the two rectangles stand in for the detector.
    Reply submit_labels(const std::string& fid, const json& body) {
        const auto task = find_task(fid);
        if (!task) return not_found("frustum", fid);
        std::unique_lock lock(task->work, std::try_to_lock);
        if (!lock) return Reply::error(409, "Busy", "frustum " + fid + " is being updated");
        if (!task->views) return Reply::error(409, "Finished", "frustum " + fid + " is " + to_string(task->read()->status));
        if (!body.is_object() || !body.contains("front_rect") || !body.contains("side_rect")) {
            return Reply::error(400, "InvalidArgument", "body must be {\"front_rect\": [...], \"side_rect\": [...]}");
        }
        Detection2D front{task->seed.class_label, 1.0, io::rect_from_json(body["front_rect"])};
        Detection2D side{task->seed.class_label, 1.0, io::rect_from_json(body["side_rect"])};
        if (!front.rect.valid() || !side.rect.valid()) return Reply::error(400, "InvalidArgument", "rectangles must have positive area");

        const StepViews& views = *task->views;
        const BoxPair pair{front, side,
                           interval_iou(back_map(views.front, front.rect).vertical, back_map(views.side, side.rect).vertical)};
        RecursionState next;
        try {
            next = advance(task->state, views, pair);
        } catch (const Error& e) {
            switch (e.kind()) {
                case ErrorKind::InconsistentViews:
                    return Reply::of(422, {{"error", "InconsistentViews"},
                                           {"message", e.message()},
                                           {"hint", "the two views disagree on height; redraw so both boxes cover the same vertical span"}});
                case ErrorKind::EmptyAfterPrune:
                case ErrorKind::DegenerateExtent:
                    return Reply::of(422, {{"error", to_string(e.kind())},
                                           {"message", e.message()},
                                           {"hint", "the rectangles keep too few points; draw them around the object"}});
                default: throw;
            }
        }
        const StopReason reason = convergence_reason(task->state, next, config_.recursion);
        task->state = std::move(next);
        finish_step(*task, reason);
        return Reply::of(200, task_json(*task, *task->read()));
    }

    /// Hands the remaining steps to a detector.
    Reply run_auto(const std::string& fid, const json& body) {
        const auto task = find_task(fid);
        if (!task) return not_found("frustum", fid);
        std::unique_lock lock(task->work, std::try_to_lock);
        if (!lock) return Reply::error(409, "Busy", "frustum " + fid + " is being updated");
        if (!task->views) return Reply::error(409, "Finished", "frustum " + fid + " is " + to_string(task->read()->status));

        DetectorSpec spec = config_.detector_pv;
        if (body.is_object() && body.contains("detector") && !body["detector"].is_null()) {
            const auto kind = body["detector"].get<std::string>();
            if (kind == "oracle") {
                spec.kind = DetectorKind::oracle;
            } else if (kind == "external") {
                if (spec.kind != DetectorKind::external) return Reply::error(422, "ConfigError", "no external detector is configured");
            } else {
                return Reply::error(400, "InvalidArgument", "detector must be 'oracle' or 'external'");
            }
        }
        auto detector = make_detector(spec, fs::path(config_.scratch_dir) / "service");
        const auto ctx = task->session->context();

        if (task->state.step == 0) {
            const StepViews& views = *task->views;
            const auto label = task->seed.class_label;
            const auto front = detect_view(*detector, views.front, views.front_instances, label);
            const auto side = detect_view(*detector, views.side, views.side_instances, label);
            const auto pairs = pair_boxes(front, side, views.front, views.side, config_.recursion.pair_min_quality);
            std::optional<RecursionState> first;
            for (const auto& pair : pairs) {
                try {
                    first = advance(task->state, views, pair);
                    break;
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::EmptyAfterPrune && e.kind() != ErrorKind::InconsistentViews) throw;
                }
            }
            if (!first) {
                fail_task(*task);
                return Reply::of(200, task_json(*task, *task->read()));
            }
            task->state = std::move(*first);
        }
        BranchOutcome outcome = run_branch(ctx, task->state, task->seed, *detector, config_.recursion);
        task->state = std::move(outcome.final_state);
        task->views.reset();
        auto snap = std::make_shared<TaskSnapshot>(*task->read());
        snap->step = task->state.step;
        snap->box = outcome.box;
        snap->status = outcome.box && outcome.box->converged ? TaskStatus::converged : TaskStatus::failed;
        snap->front_png.clear();
        snap->side_png.clear();
        snap->views = json::array();
        task->publish(snap);
        return Reply::of(200, task_json(*task, *snap));
    }

    Reply session_boxes(const std::string& sid) const {
        const auto session = find_session(sid);
        if (!session) return not_found("session", sid);
        return Reply::of(200, io::boxes_to_json(current_boxes(*session)));
    }

    /// Writes image, cloud and boxes as one dataset record.
    Reply export_session(const std::string& sid) {
        const auto session = find_session(sid);
        if (!session) return not_found("session", sid);
        const auto boxes = current_boxes(*session);
        const fs::path dir = data_dir_ / "exports" / (session->id + "_" + std::to_string(++export_counter_));
        fs::create_directories(dir);
        io::detail::write_file(dir / "image.png", session->image_png);
        io::write_ply(dir / "cloud.ply", session->frame.cloud);
        io::write_json_file(dir / "boxes.json", io::boxes_to_json(boxes));
        io::write_json_file(dir / "manifest.json", {{"image", "image.png"},
                                                    {"cloud", "cloud.ply"},
                                                    {"gt_boxes", "boxes.json"},
                                                    {"intrinsics", io::intrinsics_to_json(session->frame.intrinsics)}});
        return Reply::of(200, {{"path", fs::absolute(dir).string()}, {"boxes", boxes.size()}});
    }

    /// Registers every endpoint on `server`.
    void bind(httplib::Server& server) {
        auto send = [](httplib::Response& res, const Reply& r) {
            res.status = r.status;
            res.set_content(r.body, r.content_type);
        };
        auto guarded = [this, send](auto handler) {
            return [this, send, handler](const httplib::Request& req, httplib::Response& res) {
                try {
                    send(res, handler(req));
                } catch (const Error& e) {
                    send(res, Reply::error(status_of(e.kind()), to_string(e.kind()), e.message()));
                } catch (const json::exception& e) {
                    send(res, Reply::error(400, "InvalidArgument", e.what()));
                }
            };
        };
        auto body_of = [](const httplib::Request& req) { return req.body.empty() ? json::object() : json::parse(req.body); };

        server.Post("/sessions", guarded([=, this](const httplib::Request& req) { return create_session(body_of(req)); }));
        server.Get(R"(/sessions/([^/]+)/image)", guarded([this](const httplib::Request& req) { return session_image(req.matches[1]); }));
        server.Post(R"(/sessions/([^/]+)/frustums)",
                    guarded([=, this](const httplib::Request& req) { return create_frustum(req.matches[1], body_of(req)); }));
        server.Get(R"(/sessions/([^/]+)/boxes)", guarded([this](const httplib::Request& req) { return session_boxes(req.matches[1]); }));
        server.Post(R"(/sessions/([^/]+)/export)", guarded([this](const httplib::Request& req) { return export_session(req.matches[1]); }));
        server.Get(R"(/frustums/([^/]+))", guarded([this](const httplib::Request& req) { return frustum_state(req.matches[1]); }));
        server.Get(R"(/frustums/([^/]+)/views/(front|side)\.png)",
                   guarded([this](const httplib::Request& req) { return frustum_view(req.matches[1], req.matches[2]); }));
        server.Post(R"(/frustums/([^/]+)/labels)",
                    guarded([=, this](const httplib::Request& req) { return submit_labels(req.matches[1], body_of(req)); }));
        server.Post(R"(/frustums/([^/]+)/auto)",
                    guarded([=, this](const httplib::Request& req) { return run_auto(req.matches[1], body_of(req)); }));
    }

    static int status_of(ErrorKind kind) {
        switch (kind) {
            case ErrorKind::InvalidArgument:
            case ErrorKind::ProtocolError: return 400;
            case ErrorKind::IoError: return 404;
            case ErrorKind::DetectorUnavailable: return 503;
            case ErrorKind::EmptyFrustum:
            case ErrorKind::DegenerateExtent:
            case ErrorKind::EmptyAfterPrune:
            case ErrorKind::DegenerateCloud:
            case ErrorKind::InconsistentViews:
            case ErrorKind::ConfigError:
            case ErrorKind::InfeasibleSpec: return 422;
        }
        return 500;
    }

private:
    static Reply not_found(const char* what, const std::string& id) {
        return Reply::error(404, "NotFound", std::string("unknown ") + what + " " + id);
    }

    std::shared_ptr<Session> find_session(const std::string& id) const {
        std::shared_lock lock(sessions_mutex_);
        const auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : it->second;
    }

    std::shared_ptr<FrustumTask> find_task(const std::string& id) const {
        std::shared_lock lock(sessions_mutex_);
        const auto it = tasks_.find(id);
        return it == tasks_.end() ? nullptr : it->second;
    }

    void fill_views(const FrustumTask& task, TaskSnapshot& snap) const {
        snap.step = task.state.step;
        snap.views = json::array();
        if (!task.views) {
            snap.front_png.clear();
            snap.side_png.clear();
            return;
        }
        snap.front_png = io::encode_png(task.views->front.image);
        snap.side_png = io::encode_png(task.views->side.image);
        for (const PseudoView* v : {&task.views->front, &task.views->side}) {
            const std::string name = v->kind == ViewKind::front ? "front" : "side";
            snap.views.push_back({{"view", name},
                                  {"url", "/frustums/" + task.id + "/views/" + name + ".png"},
                                  {"width", v->image.width},
                                  {"height", v->image.height},
                                  {"scale", v->scale},
                                  {"offset_u", v->offset_u},
                                  {"offset_v", v->offset_v}});
        }
    }

    void finish_step(FrustumTask& task, StopReason reason) {
        auto snap = std::make_shared<TaskSnapshot>(*task.read());
        snap->box = finalize_box(task.state, task.seed, reason != StopReason::none && reason != StopReason::step_cap);
        if (reason == StopReason::none) {
            try {
                task.views = prepare_step(task.session->context(), task.state, config_.recursion);
                snap->status = TaskStatus::awaiting_labels;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::DegenerateExtent) throw;
                task.views.reset();
                snap->status = TaskStatus::failed;
            }
        } else {
            task.views.reset();
            snap->status = reason == StopReason::step_cap ? TaskStatus::failed : TaskStatus::converged;
        }
        fill_views(task, *snap);
        task.publish(snap);
    }

    void fail_task(FrustumTask& task) {
        auto snap = std::make_shared<TaskSnapshot>(*task.read());
        task.views.reset();
        snap->status = TaskStatus::failed;
        fill_views(task, *snap);
        task.publish(snap);
    }

    json task_json(const FrustumTask& task, const TaskSnapshot& snap) const {
        json j = {{"frustum_id", task.id},
                  {"status", to_string(snap.status)},
                  {"converged", snap.status == TaskStatus::converged},
                  {"step", snap.step},
                  {"pseudo_views", snap.views}};
        if (snap.box) j["box"] = io::box_to_json(*snap.box);
        if (snap.coarse_box) j["coarse_box"] = io::box_to_json(*snap.coarse_box);
        return j;
    }

    std::vector<OrientedBox3D> current_boxes(const Session& session) const {
        std::vector<std::shared_ptr<FrustumTask>> tasks;
        {
            std::lock_guard lock(session.tasks_mutex);
            tasks = session.tasks;
        }
        std::vector<OrientedBox3D> out;
        for (const auto& t : tasks) {
            const auto snap = t->read();
            if (snap->box) out.push_back(*snap->box);
        }
        return out;
    }

    PipelineConfig config_;
    fs::path data_dir_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::map<std::string, std::shared_ptr<FrustumTask>> tasks_;
    std::atomic<std::uint64_t> session_counter_{0};
    std::atomic<std::uint64_t> task_counter_{0};
    std::atomic<std::uint64_t> export_counter_{0};
};

}  // namespace rcv::service
