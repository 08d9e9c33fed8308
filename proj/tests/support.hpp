#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "peng/citygraph.hpp"
#include "peng/geometry.hpp"
#include "peng/pnp.hpp"
#include "peng/rng.hpp"
#include "peng/synthcity.hpp"

namespace peng::test {

inline nlohmann::json node_json(const std::string& id, double lat, double lon, double yaw = 0.0) {
    return {{"id", id}, {"location", {{"lat", lat}, {"lon", lon}}}, {"yaw", yaw}};
}

/// Two primaries 0.001 degrees of latitude apart joined by one edge.
inline nlohmann::json two_node_graph() {
    return {{"frame_origin", {{"lat", 0.0}, {"lon", 0.0}}},
            {"primaries", {node_json("n0", 0.0, 0.0), node_json("n1", 0.001, 0.0)}},
            {"edges", {{{"id", "e0"}, {"a", "n0"}, {"b", "n1"}}}}};
}

/// The settings the ablation and priors checks run on: noisy matches,
/// retrieval near 60% top-1, compass and yaw-metadata noise.
inline SynthConfig noisy_suite(std::uint64_t seed) {
    SynthConfig c;
    c.grid_rows = 6;
    c.grid_cols = 6;
    c.seed = seed;
    c.match_quality.pixel_noise_sigma = 0.5;
    c.match_quality.outlier_rate = 0.2;
    c.embedding_margin = 0.02;
    c.embedding_noise_sigma = 0.5;
    c.compass_noise_sigma = 5.0;
    c.yaw_metadata_noise = 5.0;
    c.query_yaw_jitter = 5.0;
    c.reference_yaw_jitter = 2.0;
    return c;
}

struct PnpTrial {
    Pose truth;
    CameraIntrinsics K;
    std::vector<Correspondence> pairs;
    std::vector<int> outliers;
    double diameter = 0.0;
};

/// Points in front of a random camera, projected with gaussian pixel noise;
/// `outlier_fraction` of them get uniform in-image pixels.
inline PnpTrial make_pnp_trial(std::uint64_t seed, int n, double sigma, double outlier_fraction) {
    Rng rng(seed);
    PnpTrial t;
    t.K = intrinsics_from_fov(90.0, 512, 384);
    t.truth.rotation = Rotation::from_euler_deg(Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-180, 180)));
    t.truth.translation = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    const Pose inv = t.truth.inverse();
    std::vector<Vec3> world;
    while (static_cast<int>(world.size()) < n) {
        const double z = rng.uniform(4.0, 30.0);
        const Vec2 px(rng.uniform(0, t.K.width), rng.uniform(0, t.K.height));
        const Vec3 cam((px.x() - t.K.cx) / t.K.fx * z, (px.y() - t.K.cy) / t.K.fy * z, z);
        world.push_back(inv.apply(cam));
    }
    for (const auto& a : world) {
        for (const auto& b : world) t.diameter = std::max(t.diameter, (a - b).norm());
    }
    const int n_out = static_cast<int>(std::lround(outlier_fraction * n));
    for (int i = 0; i < n; ++i) {
        Vec2 px = project(t.K, t.truth, world[i]);
        if (i < n_out) {
            px = Vec2(rng.uniform(0, t.K.width), rng.uniform(0, t.K.height));
            t.outliers.push_back(i);
        } else {
            px += Vec2(rng.normal(0, sigma), rng.normal(0, sigma));
        }
        t.pairs.push_back({world[i], px});
    }
    return t;
}

}  // namespace peng::test
