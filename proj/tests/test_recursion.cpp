#include <gtest/gtest.h>

#include <numbers>
#include <numeric>
#include <random>

#include "rcv/io/json.hpp"
#include "rcv/synthscene.hpp"
#include "test_support.hpp"

using namespace rcv;
using rcv::testing::make_box;

namespace {

struct NullDetector final : Detector {
    std::vector<Detection2D> detect(const DetectorInput&, const std::optional<std::string>&) override { return {}; }
};

/// Oracle that reports every detection twice, the copy slightly lower scored.
struct DoublingDetector final : Detector {
    OracleDetector inner;
    std::vector<Detection2D> detect(const DetectorInput& in, const std::optional<std::string>& f) override {
        auto out = inner.detect(in, f);
        const std::size_t n = out.size();
        for (std::size_t i = 0; i < n; ++i) {
            Detection2D d = out[i];
            d.score *= 0.9;
            d.rect.u1 = std::max(d.rect.u0 + 1, d.rect.u1 - 1);
            out.push_back(d);
        }
        return out;
    }
};

/// Oracle for the first `budget` calls, then silence.
struct FadingDetector final : Detector {
    OracleDetector inner;
    int budget;
    explicit FadingDetector(int b) : budget(b) {}
    std::vector<Detection2D> detect(const DetectorInput& in, const std::optional<std::string>& f) override {
        if (budget-- <= 0) return {};
        return inner.detect(in, f);
    }
};

SceneFrame isolated_scene(std::uint64_t seed, OrientationMode mode = OrientationMode::upright) {
    SceneSpec s;
    s.seed = seed;
    s.min_objects = s.max_objects = 1;
    s.orientation = mode;
    s.clutter_density = 0;
    s.points_per_m2 = 1500;
    return generate_scene(s);
}

std::vector<std::size_t> all_indices(const PointCloud& c) {
    std::vector<std::size_t> idx(c.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

RecursionState state_with(int step, const OrientedBox3D& box, const StepFrame& frame = {}) {
    RecursionState s;
    s.step = step;
    s.frame = frame;
    for (int i = 0; i < step; ++i) s.chain.push_back(RigidTransform());
    s.box = box;
    return s;
}

}  // namespace

TEST(RunFrustum, IsolatedCuboidConvergesWithHighIou) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const SceneFrame f = isolated_scene(seed);
        const FrameData fd = f.frame_data();
        OracleDetector det;
        const auto seeds = det.detect({fd.image, &*fd.image_instances}, std::nullopt);
        ASSERT_EQ(seeds.size(), 1u);
        const FrustumContext ctx{&fd.cloud, Vec3::Zero(), &fd.classes};
        const auto res = run_frustum(ctx, extract_frustum(fd.cloud, fd.intrinsics, seeds[0]), seeds[0], det, RecursionConfig{});
        ASSERT_EQ(res.boxes.size(), 1u);
        EXPECT_TRUE(res.boxes[0].converged);
        EXPECT_GE(iou3d(res.boxes[0], f.gt_boxes[0]), 0.9);
        EXPECT_EQ(res.boxes[0].class_label, seeds[0].class_label);
        EXPECT_EQ(res.boxes[0].score, seeds[0].score);
        EXPECT_FALSE(res.coarse_box.has_value());
    }
}

TEST(RunFrustum, TwoStackedObjectsBranch) {
    std::mt19937_64 rng(81);
    const OrientedBox3D upper = make_box({0, -0.7, 4}, {0.8, 0.6, 0.7}, Mat3::Identity(), "crate");
    const OrientedBox3D lower = make_box({0.1, 0.6, 4.2}, {0.9, 0.7, 0.6},
                                         Eigen::AngleAxisd(0.3, Vec3::UnitY()).toRotationMatrix(), "crate");
    PointCloud cloud;
    rcv::testing::add_box_surface(cloud, upper, rng, 600, 1, {200, 40, 40});
    rcv::testing::add_box_surface(cloud, lower, rng, 600, 2, {40, 200, 40});
    const std::map<std::uint32_t, std::string> classes = {{1, "crate"}, {2, "crate"}};
    const FrustumContext ctx{&cloud, Vec3::Zero(), &classes};
    OracleDetector det;
    const Detection2D seed{"crate", 0.8, {0, 0, 640, 480}};
    const auto res = run_frustum(ctx, all_indices(cloud), seed, det, RecursionConfig{});
    ASSERT_EQ(res.boxes.size(), 2u);
    for (const auto& gt : {upper, lower}) {
        double best = 0;
        for (const auto& b : res.boxes) best = std::max(best, iou3d(b, gt));
        EXPECT_GE(best, 0.8);
    }
}

TEST(RunFrustum, SeedMissGivesNothing) {
    const SceneFrame f = isolated_scene(4);
    const FrameData fd = f.frame_data();
    const FrustumContext ctx{&fd.cloud, Vec3::Zero(), &fd.classes};
    NullDetector none;
    const Detection2D seed{"chair", 1.0, {0, 0, 640, 480}};
    const auto res = run_frustum(ctx, all_indices(fd.cloud), seed, none, RecursionConfig{});
    EXPECT_TRUE(res.boxes.empty());
}

TEST(RunFrustum, MidRecursionMissHonoursPolicy) {
    const SceneFrame f = isolated_scene(5);
    const FrameData fd = f.frame_data();
    const FrustumContext ctx{&fd.cloud, Vec3::Zero(), &fd.classes};
    const Detection2D seed{f.gt_boxes[0].class_label, 1.0, {0, 0, 640, 480}};
    RecursionConfig cfg;
    {
        FadingDetector fading(2);  // step 0 front and side only
        const auto res = run_frustum(ctx, all_indices(fd.cloud), seed, fading, cfg);
        ASSERT_EQ(res.boxes.size(), 1u);
        EXPECT_FALSE(res.boxes[0].converged);
        EXPECT_EQ(res.boxes[0].steps, 1);
    }
    cfg.on_detector_miss = MissPolicy::drop;
    FadingDetector fading(2);
    EXPECT_TRUE(run_frustum(ctx, all_indices(fd.cloud), seed, fading, cfg).boxes.empty());
}

TEST(RunFrustum, EmitsCoarseBoxWhenAsked) {
    const SceneFrame f = isolated_scene(6);
    const FrameData fd = f.frame_data();
    const FrustumContext ctx{&fd.cloud, Vec3::Zero(), &fd.classes};
    RecursionConfig cfg;
    cfg.emit_coarse_box = true;
    OracleDetector det;
    const Detection2D seed{f.gt_boxes[0].class_label, 0.7, {0, 0, 640, 480}};
    const auto res = run_frustum(ctx, all_indices(fd.cloud), seed, det, cfg);
    ASSERT_TRUE(res.coarse_box.has_value());
    for (const auto& p : fd.cloud.positions) EXPECT_TRUE(res.coarse_box->contains(p, 1e-9));
    EXPECT_EQ(res.coarse_box->score, 0.7);
}

TEST(RunFrustum, StepCapAndMonotoneTrace) {
    const SceneFrame f = isolated_scene(7, OrientationMode::full_so3);
    const FrameData fd = f.frame_data();
    const FrustumContext ctx{&fd.cloud, Vec3::Zero(), &fd.classes};
    DetectorNoise noise;
    noise.jitter_sigma_px = 6;
    OracleDetector det(noise);
    RecursionConfig cfg;
    cfg.max_steps = 3;
    cfg.eps_axes_deg = 1e-9;
    cfg.eps_box_m = 1e-9;
    const Detection2D seed{f.gt_boxes[0].class_label, 1.0, {0, 0, 640, 480}};
    const auto res = run_frustum(ctx, all_indices(fd.cloud), seed, det, cfg);
    ASSERT_FALSE(res.branches.empty());
    for (const auto& b : res.branches) {
        EXPECT_LE(b.final_state.step, cfg.max_steps);
        EXPECT_EQ(b.final_state.chain.size(), static_cast<std::size_t>(b.final_state.step));
        std::size_t prev = fd.cloud.size();
        for (const auto& r : b.final_state.trace) {
            EXPECT_LE(r.points_before, prev);
            EXPECT_LE(r.points_after, r.points_before);
            prev = r.points_after;
        }
        if (b.reason == StopReason::step_cap) EXPECT_FALSE(b.box->converged);
    }
}

TEST(Convergence, IdenticalStatesConverge) {
    const OrientedBox3D box = make_box({0, 0, 3}, Vec3::Ones());
    EXPECT_TRUE(converged(state_with(2, box), state_with(3, box), RecursionConfig{}));
}

TEST(Convergence, LargeVariationDoesNotConverge) {
    const OrientedBox3D a = make_box({0, 0, 3}, Vec3::Ones());
    const OrientedBox3D b = make_box({0.5, 0, 3}, Vec3::Ones());
    const Mat3 r = Eigen::AngleAxisd(10.0 * std::numbers::pi / 180.0, Vec3::UnitY()).toRotationMatrix();
    const StepFrame rotated{AxesTriad(r), Vec3::Zero()};
    EXPECT_EQ(convergence_reason(state_with(1, a), state_with(2, b, rotated), RecursionConfig{}), StopReason::none);
}

TEST(Convergence, StepCapForcesStop) {
    const OrientedBox3D a = make_box({0, 0, 3}, Vec3::Ones());
    const OrientedBox3D b = make_box({2, 0, 3}, Vec3::Ones());
    const Mat3 r = Eigen::AngleAxisd(0.5, Vec3::UnitX()).toRotationMatrix();
    RecursionConfig cfg;
    EXPECT_EQ(convergence_reason(state_with(7, a), state_with(8, b, {AxesTriad(r), Vec3::Zero()}), cfg), StopReason::step_cap);
}

TEST(Convergence, BoxVariationIgnoresAxisRelabelling) {
    const OrientedBox3D a = make_box({0, 0, 3}, {1, 2, 3});
    const Mat3 swap = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()).toRotationMatrix();
    const OrientedBox3D b = make_box({0, 0, 3}, {2, 1, 3}, swap);
    EXPECT_LT(box_variation_m(a, b), 1e-12);
}

TEST(DetectScene, NoSeedsNoBoxes) {
    const SceneFrame f = isolated_scene(8);
    NullDetector none;
    OracleDetector det;
    EXPECT_TRUE(detect_scene(f.frame_data(), none, det, RecursionConfig{}).empty());
}

TEST(DetectScene, SingleObjectClosedLoop) {
    const SceneFrame f = isolated_scene(9);
    OracleDetector det;
    const auto boxes = detect_scene(f.frame_data(), det, det, RecursionConfig{});
    ASSERT_EQ(boxes.size(), 1u);
    EXPECT_GE(iou3d(boxes[0], f.gt_boxes[0]), 0.9);
}

TEST(DetectScene, DuplicateSeedsAreSuppressed) {
    const SceneFrame f = isolated_scene(10);
    DoublingDetector rgb;
    OracleDetector pv;
    const auto boxes = detect_scene(f.frame_data(), rgb, pv, RecursionConfig{});
    ASSERT_EQ(boxes.size(), 1u);
    EXPECT_EQ(boxes[0].score, 1.0);
}

TEST(DetectScene, InvariantUnderPointPermutation) {
    SceneSpec s;
    s.seed = 11;
    s.points_per_m2 = 1500;
    const SceneFrame f = generate_scene(s);
    FrameData fd = f.frame_data();
    OracleDetector det;
    const std::string base = io::dump(io::boxes_to_json(detect_scene(fd, det, det, RecursionConfig{})));

    std::mt19937_64 rng(12);
    std::vector<std::size_t> perm = all_indices(fd.cloud);
    std::shuffle(perm.begin(), perm.end(), rng);
    PointCloud shuffled;
    shuffled.instance_ids.emplace();
    for (auto i : perm) {
        shuffled.positions.push_back(fd.cloud.positions[i]);
        shuffled.colors.push_back(fd.cloud.colors[i]);
        shuffled.instance_ids->push_back((*fd.cloud.instance_ids)[i]);
    }
    fd.cloud = shuffled;
    EXPECT_EQ(io::dump(io::boxes_to_json(detect_scene(fd, det, det, RecursionConfig{}))), base);
}

TEST(DetectScene, ParallelMatchesSerial) {
    SceneSpec s;
    s.seed = 13;
    s.min_objects = 3;
    s.points_per_m2 = 1500;
    const SceneFrame f = generate_scene(s);
    OracleDetector det;
    SceneOptions serial, parallel;
    parallel.parallelism = 4;
    EXPECT_EQ(io::dump(io::boxes_to_json(detect_scene(f.frame_data(), det, det, RecursionConfig{}, serial))),
              io::dump(io::boxes_to_json(detect_scene(f.frame_data(), det, det, RecursionConfig{}, parallel))));
}

TEST(RecursionConfig, Validates) {
    RecursionConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.max_steps = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.eps_box_m = 0;
    EXPECT_THROW(cfg.validate(), Error);
}
