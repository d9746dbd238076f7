#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rcv/error.hpp"
#include "rcv/image.hpp"

namespace rcv {

struct DetectorNoise {
    double jitter_sigma_px = 0.0;
    double miss_prob = 0.0;
    double false_positive_rate = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(jitter_sigma_px >= 0.0)) fail(ErrorKind::ConfigError, "jitter_sigma_px must be >= 0");
        if (!(miss_prob >= 0.0 && miss_prob <= 1.0)) fail(ErrorKind::ConfigError, "miss_prob must lie in [0,1]");
        if (!(false_positive_rate >= 0.0)) fail(ErrorKind::ConfigError, "false_positive_rate must be >= 0");
    }
};

/// What a detector sees. `instances` is a ground-truth side channel that only
/// the oracle reads; real detectors ignore it.
struct DetectorInput {
    const RgbImage& image;
    const InstancePixelMap* instances = nullptr;
};

/// 2D detector boundary. Implementations must be callable from several
/// recursion branches at once.
class Detector {
public:
    virtual ~Detector() = default;
    virtual std::vector<Detection2D> detect(const DetectorInput& input, const std::optional<std::string>& class_filter) = 0;
};

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Noise stream for one detection call: depends only on the noise seed and the
/// request content, never on call order.
inline std::uint64_t oracle_stream_seed(const InstancePixelMap& map, const std::optional<std::string>& class_filter,
                                        std::uint64_t seed) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = detail::fnv1a(h, &seed, sizeof seed);
    h = detail::fnv1a(h, &map.width, sizeof map.width);
    h = detail::fnv1a(h, &map.height, sizeof map.height);
    h = detail::fnv1a(h, map.ids.data(), map.ids.size() * sizeof(std::uint32_t));
    if (class_filter) h = detail::fnv1a(h, class_filter->data(), class_filter->size());
    return detail::splitmix64(h);
}

struct InstanceBounds {
    int umin = std::numeric_limits<int>::max();
    int vmin = std::numeric_limits<int>::max();
    int umax = -1;
    int vmax = -1;
};

inline std::map<std::uint32_t, InstanceBounds> instance_bounds(const InstancePixelMap& map) {
    std::map<std::uint32_t, InstanceBounds> out;
    for (int v = 0; v < map.height; ++v) {
        for (int u = 0; u < map.width; ++u) {
            const auto id = map.at(u, v);
            if (id == 0) continue;
            auto& b = out[id];
            b.umin = std::min(b.umin, u);
            b.vmin = std::min(b.vmin, v);
            b.umax = std::max(b.umax, u);
            b.vmax = std::max(b.vmax, v);
        }
    }
    return out;
}

/// Tight boxes around ground-truth instances, corrupted by seeded misses,
/// corner jitter and spurious boxes. Scores are 1 minus one hundredth of the
/// mean absolute corner displacement (so exactly 1 without jitter); false
/// positives score 0.3.
inline std::vector<Detection2D> oracle_detect(const InstancePixelMap& map, const std::optional<std::string>& class_filter,
                                              const DetectorNoise& noise) {
    std::vector<Detection2D> out;
    if (map.width <= 0 || map.height <= 0) return out;
    std::mt19937_64 rng(oracle_stream_seed(map, class_filter, noise.seed));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    for (const auto& [id, b] : instance_bounds(map)) {
        const auto cls = map.classes.find(id);
        if (cls == map.classes.end()) continue;
        if (class_filter && cls->second != *class_filter) continue;
        const bool missed = uniform(rng) < noise.miss_prob;
        double jitter[4];
        for (double& j : jitter) j = std::round(gauss(rng) * noise.jitter_sigma_px);
        if (missed) continue;

        double u0 = std::clamp(b.umin + jitter[0], 0.0, static_cast<double>(map.width));
        double v0 = std::clamp(b.vmin + jitter[1], 0.0, static_cast<double>(map.height));
        double u1 = std::clamp(b.umax + 1 + jitter[2], 0.0, static_cast<double>(map.width));
        double v1 = std::clamp(b.vmax + 1 + jitter[3], 0.0, static_cast<double>(map.height));
        if (u1 <= u0) {
            u1 = std::min<double>(map.width, u0 + 1);
            u0 = u1 - 1;
        }
        if (v1 <= v0) {
            v1 = std::min<double>(map.height, v0 + 1);
            v0 = v1 - 1;
        }
        const double mean_shift = (std::abs(u0 - b.umin) + std::abs(v0 - b.vmin) + std::abs(u1 - b.umax - 1) +
                                   std::abs(v1 - b.vmax - 1)) / 4.0;
        out.push_back({cls->second, 1.0 - std::min(0.5, 0.01 * mean_shift), {u0, v0, u1, v1}});
    }

    if (noise.false_positive_rate > 0.0) {
        std::vector<std::string> labels;
        if (class_filter) {
            labels.push_back(*class_filter);
        } else {
            for (const auto& [id, name] : map.classes) labels.push_back(name);
        }
        std::poisson_distribution<int> poisson(noise.false_positive_rate);
        const int count = poisson(rng);
        for (int i = 0; i < count && !labels.empty(); ++i) {
            const auto& label = labels[static_cast<std::size_t>(uniform(rng) * labels.size()) % labels.size()];
            const double w = std::max(1.0, std::floor(1.0 + uniform(rng) * map.width / 2.0));
            const double h = std::max(1.0, std::floor(1.0 + uniform(rng) * map.height / 2.0));
            const double u0 = std::floor(uniform(rng) * std::max(1.0, map.width - w));
            const double v0 = std::floor(uniform(rng) * std::max(1.0, map.height - h));
            out.push_back({label, 0.3, {u0, v0, std::min<double>(map.width, u0 + w), std::min<double>(map.height, v0 + h)}});
        }
    }
    return out;
}

class OracleDetector final : public Detector {
public:
    explicit OracleDetector(DetectorNoise noise = {}) : noise_(noise) { noise_.validate(); }

    std::vector<Detection2D> detect(const DetectorInput& input, const std::optional<std::string>& class_filter) override {
        if (input.image.empty()) fail(ErrorKind::InvalidArgument, "empty raster");
        if (!input.instances) return {};
        if (input.instances->width != input.image.width || input.instances->height != input.image.height) {
            fail(ErrorKind::InvalidArgument, "instance map is not aligned with the raster");
        }
        return oracle_detect(*input.instances, class_filter, noise_);
    }

    const DetectorNoise& noise() const noexcept { return noise_; }

private:
    DetectorNoise noise_;
};

}  // namespace rcv
