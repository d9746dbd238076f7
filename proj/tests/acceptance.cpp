// Acceptance suite: one PASS/FAIL line per headline criterion. Exits nonzero
// when any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rcv/pipeline.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace rcv;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;
int ran = 0;
std::string only;  // optional substring filter on criterion names

void report(const char* name, const std::function<Outcome()>& criterion) {
    if (!only.empty() && std::string(name).find(only) == std::string::npos) return;
    ++ran;
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = criterion();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("%s  %-28s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int hardware_threads() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

// ------------------------------------------------------------ closed loops

struct LoopResult {
    std::size_t objects = 0;
    std::size_t hits = 0;
    double seconds = 0.0;
};

/// Oracle detectors with zero noise on 100 dataset scenes, single thread.
LoopResult closed_loop(OrientationMode orientation, AxesMethod method, double iou_min) {
    SceneSpec base;
    base.orientation = orientation;
    base.partial_view = true;
    base.avoid_occlusion = true;
    RecursionConfig cfg;
    cfg.axes.method = method;
    OracleDetector oracle;
    LoopResult r;
    const auto t0 = Clock::now();
    for (std::size_t k = 0; k < 100; ++k) {
        const SceneFrame scene = generate_scene(dataset_scene_spec(base, 0, k));
        const auto boxes = detect_scene(scene.frame_data(), oracle, oracle, cfg);
        for (const auto& g : scene.gt_boxes) {
            double best = 0.0;
            for (const auto& b : boxes)
                if (b.class_label == g.class_label) best = std::max(best, iou3d(b, g));
            ++r.objects;
            r.hits += best >= iou_min;
        }
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

Outcome closed_loop_upright() {
    const auto r = closed_loop(OrientationMode::upright, AxesMethod::normals, 0.85);
    const double frac = static_cast<double>(r.hits) / static_cast<double>(r.objects);
    return {frac >= 0.95 && r.seconds < 60.0,
            fmt("%zu/%zu objects (%.1f%%) at IoU >= 0.85, need 95%%; loop %.1f s, need < 60 s", r.hits, r.objects, 100 * frac, r.seconds)};
}

Outcome closed_loop_so3() {
    const auto r = closed_loop(OrientationMode::full_so3, AxesMethod::normals, 0.70);
    const double frac = static_cast<double>(r.hits) / static_cast<double>(r.objects);
    return {frac >= 0.90, fmt("%zu/%zu objects (%.1f%%) at IoU >= 0.70, need 90%%", r.hits, r.objects, 100 * frac)};
}

// ------------------------------------------------------------- geometry

Outcome chain_round_trip() {
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto box = rcv::testing::random_box(rng);
        std::vector<RigidTransform> chain;
        for (int s = 0; s < 5; ++s) chain.push_back(rcv::testing::random_transform(rng));
        // Walk the box into the deepest frame through the inverses, then back
        // out with the product of homogeneous matrices.
        OrientedBox3D deep = box;
        Mat4 product = Mat4::Identity();
        for (const auto& t : chain) {
            deep = transformed(deep, t.inverse());
            product = product * t.matrix();
        }
        const CornerMatrix back = product * box_to_corners(deep);
        worst = std::max(worst, (back - box_to_corners(box)).cwiseAbs().maxCoeff());
        const OrientedBox3D rebuilt = chain_to_origin(deep, chain);
        worst = std::max(worst, (box_to_corners(rebuilt) - box_to_corners(box)).cwiseAbs().maxCoeff());
    }
    return {worst < 1e-9, fmt("max corner error %.3e m over 1000 boxes x 5-step chains, need < 1e-9", worst)};
}

double mc_iou(const OrientedBox3D& a, const OrientedBox3D& b, int samples, std::uint64_t seed) {
    const OrientedBox3D& s = a.volume() <= b.volume() ? a : b;
    const OrientedBox3D& o = &s == &a ? b : a;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    int hits = 0;
    for (int i = 0; i < samples; ++i) {
        hits += o.contains(s.pose.apply(Vec3(u(rng) * s.extent.x(), u(rng) * s.extent.y(), u(rng) * s.extent.z())), 0.0);
    }
    const double inter = s.volume() * hits / samples;
    return inter / (a.volume() + b.volume() - inter);
}

Outcome iou_oracle() {
    std::mt19937_64 rng(202);
    std::vector<std::pair<OrientedBox3D, OrientedBox3D>> pairs;
    for (int i = 0; i < 200; ++i) {
        const auto a = rcv::testing::random_box(rng, 2.0);
        auto b = rcv::testing::random_box(rng, 2.0);
        // Half the pairs are nudged copies so that large overlaps are covered too.
        if (i % 2 == 0) b.pose = RigidTransform(b.pose.rotation(), a.pose.translation() + rcv::testing::random_vec(rng, -0.4, 0.4));
        pairs.emplace_back(a, b);
    }
    std::vector<double> mc_err(pairs.size()), sym_err(pairs.size()), rigid_err(pairs.size());
    std::vector<int> bounded(pairs.size());
    std::vector<RigidTransform> motions;
    for (std::size_t i = 0; i < pairs.size(); ++i) motions.push_back(rcv::testing::random_transform(rng, 20.0));
    parallel_for(pairs.size(), hardware_threads(), [&](std::size_t i) {
        const auto& [a, b] = pairs[i];
        const double ab = iou3d(a, b);
        mc_err[i] = std::abs(ab - mc_iou(a, b, 1'000'000, 1000 + i));
        sym_err[i] = std::abs(ab - iou3d(b, a));
        rigid_err[i] = std::abs(ab - iou3d(transformed(a, motions[i]), transformed(b, motions[i])));
        bounded[i] = ab >= 0.0 && ab <= 1.0 && std::abs(iou3d(a, a) - 1.0) < 1e-9;
    });
    const double mc = *std::max_element(mc_err.begin(), mc_err.end());
    const double sym = *std::max_element(sym_err.begin(), sym_err.end());
    const double rigid = *std::max_element(rigid_err.begin(), rigid_err.end());
    const bool all_bounded = std::all_of(bounded.begin(), bounded.end(), [](int v) { return v; });
    return {mc <= 0.005 && sym < 1e-6 && rigid < 1e-6 && all_bounded,
            fmt("200 pairs: max |exact - MC(1e6)| %.4f (need <= 0.005), asymmetry %.1e, rigid drift %.1e (need < 1e-6), bounds %s", mc,
                sym, rigid, all_bounded ? "ok" : "violated")};
}

Outcome metric_fidelity() {
    using rcv::testing::make_box;
    const std::vector<OrientedBox3D> gts = {make_box({0, 0, 0}, Vec3::Ones()), make_box({5, 0, 0}, Vec3::Ones()),
                                            make_box({10, 0, 0}, Vec3::Ones())};
    // Ranked TP, FP, TP, TP against three ground truths.
    const std::vector<OrientedBox3D> preds = {make_box({0, 0, 0}, Vec3::Ones(), Mat3::Identity(), "thing", 0.9),
                                              make_box({20, 0, 0}, Vec3::Ones(), Mat3::Identity(), "thing", 0.8),
                                              make_box({5, 0, 0}, Vec3::Ones(), Mat3::Identity(), "thing", 0.7),
                                              make_box({10, 0, 0}, Vec3::Ones(), Mat3::Identity(), "thing", 0.6)};
    const EvalConfig defaults;
    const double all_point = *average_precision(preds, gts, defaults.iou_thresh, ApMode::allpoint);
    const double r40 = *average_precision(preds, gts, defaults.iou_thresh, ApMode::r40);
    const double e1 = std::abs(all_point - 5.0 / 6.0);
    const double e2 = std::abs(r40 - (13.0 + 27.0 * 0.75) / 40.0);
    const bool default_ok = defaults.iou_thresh == 0.15 && PipelineConfig{}.eval.iou_thresh == 0.15;
    return {e1 <= 1e-12 && e2 <= 1e-12 && default_ok,
            fmt("all-point %.15f (err %.1e), R40 %.15f (err %.1e), default IoU threshold %.2f", all_point, e1, r40, e2, defaults.iou_thresh)};
}

// ----------------------------------------------------------------- fuzz

Outcome convergence_bound() {
    constexpr std::size_t kFrustums = 10'000;
    std::atomic<std::size_t> branches{0}, steps_violations{0}, monotone_violations{0}, engine_errors{0}, crashes{0};
    std::vector<std::string> crash_messages(kFrustums);
    const CameraIntrinsics intr;
    parallel_for(kFrustums, hardware_threads(), [&](std::size_t trial) {
        std::mt19937_64 rng(detail::splitmix64(0xF0220000ULL + trial));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        PointCloud cloud;
        std::map<std::uint32_t, std::string> classes;
        std::vector<OrientedBox3D> placed;
        const int objects = 1 + static_cast<int>(rng() % 3);
        const char* names[] = {"chair", "table", "lamp"};
        for (int o = 0; o < objects; ++o) {
            auto box = rcv::testing::make_box(Vec3(-1.0 + 2.0 * u01(rng), -0.5 + u01(rng), 2.5 + 4.0 * u01(rng)),
                                              rcv::testing::random_vec(rng, 0.05, 1.5), rcv::testing::random_rotation(rng), names[o % 3]);
            rcv::testing::add_box_surface(cloud, box, rng, 5 + static_cast<int>(rng() % 400), static_cast<std::uint32_t>(o + 1));
            classes[static_cast<std::uint32_t>(o + 1)] = box.class_label;
            placed.push_back(box);
        }
        const int clutter = static_cast<int>(rng() % 300);
        for (int i = 0; i < clutter; ++i) {
            cloud.positions.push_back(rcv::testing::random_vec(rng, -3.0, 3.0) + Vec3(0, 0, 5));
            cloud.colors.push_back({90, 90, 90});
            cloud.instance_ids->push_back(0);
        }
        // Even trials seed on a jittered projection of one object, odd trials
        // on an arbitrary rectangle.
        Detection2D seed;
        if (trial % 2 == 0) {
            const auto& target = placed[rng() % placed.size()];
            const CornerMatrix corners = box_to_corners(target);
            PixelRect r{1e9, 1e9, -1e9, -1e9};
            for (int j = 0; j < 8; ++j) {
                const Eigen::Vector2d uv = intr.project(corners.block<3, 1>(0, j));
                r = {std::min(r.u0, uv.x()), std::min(r.v0, uv.y()), std::max(r.u1, uv.x()), std::max(r.v1, uv.y())};
            }
            const double jitter = 30.0 * u01(rng);
            r = {r.u0 - jitter * u01(rng), r.v0 - jitter * u01(rng), r.u1 + jitter * u01(rng), r.v1 + jitter * u01(rng)};
            seed = {target.class_label, 1.0, r.clamped(intr.width, intr.height)};
        } else {
            const double w = 20 + u01(rng) * intr.width, h = 20 + u01(rng) * intr.height;
            const double u0 = u01(rng) * intr.width, v0 = u01(rng) * intr.height;
            seed = {names[rng() % objects], 1.0, PixelRect{u0, v0, u0 + w, v0 + h}.clamped(intr.width, intr.height)};
        }
        if (!seed.rect.valid()) seed.rect = {0, 0, static_cast<double>(intr.width), static_cast<double>(intr.height)};

        DetectorNoise noise;
        noise.jitter_sigma_px = 8.0 * u01(rng);
        noise.miss_prob = 0.3 * u01(rng);
        noise.false_positive_rate = 0.5 * u01(rng);
        noise.seed = trial;
        OracleDetector detector(noise);
        RecursionConfig cfg;
        cfg.max_steps = 1 + static_cast<int>(rng() % 8);
        cfg.axes.method = static_cast<AxesMethod>(rng() % 3);
        try {
            const FrustumContext ctx{&cloud, Vec3::Zero(), &classes};
            const auto result = run_frustum(ctx, extract_frustum(cloud, intr, seed), seed, detector, cfg);
            for (const auto& b : result.branches) {
                ++branches;
                if (b.final_state.step > cfg.max_steps) ++steps_violations;
                const auto& trace = b.final_state.trace;
                for (std::size_t s = 0; s < trace.size(); ++s) {
                    bool ok = trace[s].points_after <= trace[s].points_before;
                    if (s > 0) ok = ok && trace[s].points_before == trace[s - 1].points_after;
                    if (!ok) ++monotone_violations;
                }
                if (b.box && b.box->steps > cfg.max_steps) ++steps_violations;
            }
        } catch (const Error& e) {
            // Typed rejections (for example a seed rectangle over empty space).
            if (e.kind() == ErrorKind::EmptyFrustum) {
                ++engine_errors;
            } else {
                ++crashes;
                crash_messages[trial] = e.what();
            }
        } catch (const std::exception& e) {
            ++crashes;
            crash_messages[trial] = e.what();
        }
    });
    std::string first_crash;
    for (const auto& m : crash_messages)
        if (!m.empty() && first_crash.empty()) first_crash = " first: " + m;
    const bool pass = steps_violations == 0 && monotone_violations == 0 && crashes == 0;
    return {pass, fmt("10000 frustums, %zu branches; step-bound violations %zu, monotonicity violations %zu, "
                      "empty frustums %zu, unexpected errors %zu%s",
                      branches.load(), steps_violations.load(), monotone_violations.load(), engine_errors.load(), crashes.load(),
                      first_crash.c_str())};
}

// ------------------------------------------------------------------ CLI

int run_cli(const std::string& args, const fs::path& cwd, std::string* err_out = nullptr) {
    const fs::path err = cwd / "stderr.txt";
    const std::string cmd = "cd '" + cwd.string() + "' && '" RCV_CLI "' " + args + " >/dev/null 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    if (err_out) *err_out = io::detail::read_file(err);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome noise_sweep(const fs::path& work) {
    std::string err;
    if (run_cli("synth --scenes 200 --seed 0 --out sweep_scenes", work, &err) != 0) return {false, "synth failed: " + err};
    const std::string par = std::to_string(hardware_threads());
    if (run_cli("sweep sweep_scenes --sigmas 0,1,2,4,8 --miss 0 --out sweep.csv --set parallelism=" + par, work, &err) != 0) {
        return {false, "sweep failed: " + err};
    }
    std::istringstream csv(io::detail::read_file(work / "sweep.csv"));
    std::string line;
    std::getline(csv, line);
    std::vector<std::pair<double, double>> rows;
    while (std::getline(csv, line)) {
        double sigma = 0, miss = 0, iou = 0;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &sigma, &miss, &iou) == 3) rows.emplace_back(sigma, iou);
    }
    bool monotone = rows.size() == 5;
    std::string shown;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i > 0 && rows[i].second > rows[i - 1].second) monotone = false;
        shown += fmt("%s%g:%.4f", i ? " " : "", rows[i].first, rows[i].second);
    }
    return {monotone, "200 scenes, sigma:mean_iou " + shown + (monotone ? " (non-increasing)" : " (NOT non-increasing)")};
}

Outcome determinism(const fs::path& work) {
    std::string err;
    if (run_cli("synth --scenes 10 --seed 5 --min-objects 3 --max-objects 5 --out det_scenes", work, &err) != 0) {
        return {false, "synth failed: " + err};
    }
    if (run_cli("detect det_scenes --out det_p1 --set parallelism=1", work, &err) != 0) return {false, "detect failed: " + err};
    if (run_cli("detect det_scenes --out det_p8 --set parallelism=8", work, &err) != 0) return {false, "detect failed: " + err};
    std::size_t files = 0, differ = 0, boxes = 0;
    for (const auto& e : fs::directory_iterator(work / "det_p1")) {
        const auto a = io::detail::read_file(e.path());
        const auto other = work / "det_p8" / e.path().filename();
        ++files;
        if (!fs::exists(other) || io::detail::read_file(other) != a) ++differ;
        boxes += io::boxes_from_json(nlohmann::json::parse(a)).size();
    }
    return {files == 10 && differ == 0, fmt("%zu frames, %zu boxes; %zu files differ between parallelism 1 and 8", files, boxes, differ)};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc > 1) only = argv[1];
    const fs::path work = fs::temp_directory_path() / ("rcv_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(work);
    fs::create_directories(work);

    report("closed-loop upright", closed_loop_upright);
    report("closed-loop fully oriented", closed_loop_so3);
    report("transform chain round-trip", chain_round_trip);
    report("iou3d vs Monte-Carlo", iou_oracle);
    report("metric fidelity", metric_fidelity);
    report("convergence bound (fuzz)", convergence_bound);
    report("noise sweep monotonicity", [&] { return noise_sweep(work); });
    report("detect determinism", [&] { return determinism(work); });

    fs::remove_all(work);
    if (ran == 0) {
        std::printf("no criterion matches '%s'\n", only.c_str());
        return 1;
    }
    std::printf("%d of %d criteria failed\n", failures, ran);
    return failures == 0 ? 0 : 1;
}
