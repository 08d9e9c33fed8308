#include "peng/synthcity.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "peng/error.hpp"
#include "peng/rng.hpp"

namespace peng {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kLandmarkRetries = 64;

std::string numbered(char prefix, std::size_t i, int width) {
    const std::string digits = std::to_string(i);
    const std::size_t pad = digits.size() < static_cast<std::size_t>(width) ? width - digits.size() : 0;
    return prefix + std::string(pad, '0') + digits;
}

void check_query_fov(double hfov) {
    if (hfov != 70.0 && hfov != 90.0 && hfov != 120.0) {
        throw Error(Errc::invalid_argument, "query hfov must be 70, 90 or 120 degrees");
    }
}

int digits_for(std::size_t n) {
    int d = 1;
    while (n >= 10) {
        n /= 10;
        ++d;
    }
    return std::max(d, 3);
}

struct Topo {
    std::vector<LocalPoint> junctions;
    std::vector<std::pair<int, int>> edges;
};

Topo grid_topology(const SynthConfig& cfg, Rng& rng) {
    Topo t;
    const double l = cfg.edge_length_mean;
    const double east0 = -0.5 * (cfg.grid_cols - 1) * l;
    const double north0 = -0.5 * (cfg.grid_rows - 1) * l;
    for (int r = 0; r < cfg.grid_rows; ++r) {
        for (int c = 0; c < cfg.grid_cols; ++c) {
            t.junctions.push_back({east0 + c * l + rng.normal(0.0, cfg.edge_length_sigma),
                                   north0 + r * l + rng.normal(0.0, cfg.edge_length_sigma)});
        }
    }
    for (int r = 0; r < cfg.grid_rows; ++r) {
        for (int c = 0; c < cfg.grid_cols; ++c) {
            const int i = r * cfg.grid_cols + c;
            if (c + 1 < cfg.grid_cols) t.edges.emplace_back(i, i + 1);
            if (r + 1 < cfg.grid_rows) t.edges.emplace_back(i, i + cfg.grid_cols);
        }
    }
    return t;
}

// Bowyer-Watson; quadratic, adequate for a few hundred junctions.
std::vector<std::array<int, 3>> delaunay(const std::vector<LocalPoint>& pts) {
    struct Tri {
        std::array<int, 3> v;
        double cx, cy, r2;
    };
    std::vector<LocalPoint> p = pts;
    double lo_e = 1e300, lo_n = 1e300, hi_e = -1e300, hi_n = -1e300;
    for (const auto& q : pts) {
        lo_e = std::min(lo_e, q.east);
        hi_e = std::max(hi_e, q.east);
        lo_n = std::min(lo_n, q.north);
        hi_n = std::max(hi_n, q.north);
    }
    const double span = std::max(hi_e - lo_e, hi_n - lo_n) + 1.0;
    const double me = 0.5 * (lo_e + hi_e);
    const double mn = 0.5 * (lo_n + hi_n);
    const int s0 = static_cast<int>(p.size());
    p.push_back({me - 20 * span, mn - span});
    p.push_back({me + 20 * span, mn - span});
    p.push_back({me, mn + 20 * span});

    auto make = [&](int a, int b, int c) {
        const double ax = p[a].east, ay = p[a].north, bx = p[b].east, by = p[b].north, cx = p[c].east,
                     cy = p[c].north;
        const double d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
        const double ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay) +
                           (cx * cx + cy * cy) * (ay - by)) / d;
        const double uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx) +
                           (cx * cx + cy * cy) * (bx - ax)) / d;
        return Tri{{a, b, c}, ux, uy, (ax - ux) * (ax - ux) + (ay - uy) * (ay - uy)};
    };

    std::vector<Tri> tris{make(s0, s0 + 1, s0 + 2)};
    for (int i = 0; i < s0; ++i) {
        std::vector<Tri> keep;
        std::map<std::pair<int, int>, int> boundary;
        for (const Tri& t : tris) {
            const double dx = p[i].east - t.cx;
            const double dy = p[i].north - t.cy;
            if (dx * dx + dy * dy < t.r2) {
                for (int k = 0; k < 3; ++k) {
                    int a = t.v[k], b = t.v[(k + 1) % 3];
                    if (a > b) std::swap(a, b);
                    ++boundary[{a, b}];
                }
            } else {
                keep.push_back(t);
            }
        }
        for (const auto& [e, count] : boundary) {
            if (count == 1) keep.push_back(make(e.first, e.second, i));
        }
        tris = std::move(keep);
    }
    std::vector<std::array<int, 3>> out;
    for (const Tri& t : tris) {
        if (t.v[0] < s0 && t.v[1] < s0 && t.v[2] < s0) out.push_back(t.v);
    }
    return out;
}

Topo delaunay_topology(const SynthConfig& cfg, Rng& rng) {
    Topo t;
    const std::size_t n = static_cast<std::size_t>(cfg.grid_rows) * cfg.grid_cols;
    const double l = cfg.edge_length_mean;
    const double w = std::max(1, cfg.grid_cols - 1) * l;
    const double h = std::max(1, cfg.grid_rows - 1) * l;
    const double min_sep = 0.5 * l;
    for (int attempt = 0; t.junctions.size() < n && attempt < 10000; ++attempt) {
        const LocalPoint q{rng.uniform(-0.5 * w, 0.5 * w), rng.uniform(-0.5 * h, 0.5 * h)};
        const bool clear = std::all_of(t.junctions.begin(), t.junctions.end(), [&](const LocalPoint& o) {
            return std::hypot(o.east - q.east, o.north - q.north) >= min_sep;
        });
        if (clear) t.junctions.push_back(q);
    }
    if (t.junctions.size() < 3) throw Error(Errc::invalid_argument, "delaunay topology needs at least 3 junctions");
    std::set<std::pair<int, int>> edges;
    for (const auto& tri : delaunay(t.junctions)) {
        for (int k = 0; k < 3; ++k) {
            int a = tri[k], b = tri[(k + 1) % 3];
            if (a > b) std::swap(a, b);
            const double len = std::hypot(t.junctions[a].east - t.junctions[b].east,
                                          t.junctions[a].north - t.junctions[b].north);
            // Long hull edges are not plausible streets.
            if (len <= 2.0 * l) edges.insert({a, b});
        }
    }
    t.edges.assign(edges.begin(), edges.end());
    return t;
}

Embedding random_unit(std::size_t dim, Rng& rng) {
    Embedding e{std::vector<float>(dim)};
    double sq = 0.0;
    std::vector<double> v(dim);
    for (auto& x : v) {
        x = rng.normal();
        sq += x * x;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t i = 0; i < dim; ++i) e.values[i] = static_cast<float>(v[i] * inv);
    return e;
}

}  // namespace

void MatchQuality::validate() const {
    if (!(pixel_noise_sigma >= 0.0)) throw Error(Errc::invalid_argument, "pixel_noise_sigma must be >= 0");
    if (!(outlier_rate >= 0.0 && outlier_rate < 1.0)) throw Error(Errc::invalid_argument, "outlier_rate must lie in [0, 1)");
    if (min_shared_landmarks < 1) throw Error(Errc::invalid_argument, "min_shared_landmarks must be >= 1");
    if (max_pairs < 1) throw Error(Errc::invalid_argument, "max_pairs must be >= 1");
}

void SynthConfig::validate() const {
    if (grid_rows < 1 || grid_cols < 1 || grid_rows * grid_cols < 2) {
        throw Error(Errc::invalid_argument, "grid needs at least two junctions");
    }
    if (!(edge_length_mean > 0.0) || !(edge_length_sigma >= 0.0)) {
        throw Error(Errc::invalid_argument, "edge length must be positive");
    }
    if (!(edge_length_sigma < 0.25 * edge_length_mean)) {
        throw Error(Errc::invalid_argument, "junction jitter must stay below a quarter of the edge length");
    }
    if (!(secondary_spacing > 0.0)) throw Error(Errc::invalid_argument, "secondary spacing must be positive");
    if (!(landmark_density >= 0.0) || !(landmark_lateral_sigma >= 0.0) || !(road_half_width >= 0.0) ||
        !(landmark_max_height >= 0.0)) {
        throw Error(Errc::invalid_argument, "landmark parameters must be non-negative");
    }
    if (!(max_view_range > 0.0) || !(camera_height >= 0.0)) throw Error(Errc::invalid_argument, "bad camera setup");
    if (image_width <= 0 || image_height <= 0) throw Error(Errc::invalid_argument, "image size must be positive");
    for (double a : {reference_yaw_jitter, yaw_metadata_noise, query_yaw_jitter, compass_noise_sigma,
                     query_lateral_sigma, embedding_noise_sigma}) {
        if (!(a >= 0.0)) throw Error(Errc::invalid_argument, "noise parameters must be non-negative");
    }
    if (query_count < 1) throw Error(Errc::invalid_argument, "query_count must be >= 1");
    if (embedding_dim < 2) throw Error(Errc::invalid_argument, "embedding_dim must be >= 2");
    if (!(embedding_margin >= 0.0)) throw Error(Errc::invalid_argument, "embedding_margin must be >= 0");
    (void)intrinsics_from_fov(reference_hfov, image_width, image_height);
    check_query_fov(query_hfov);
    match_quality.validate();
    validate_coordinate(origin, "origin");
}

SyntheticCity::SyntheticCity(SynthConfig cfg, CityGraph graph, std::vector<Vec3> landmarks,
                             std::map<std::string, double> yaw_error, EmbeddingDatabase db)
    : cfg_(std::move(cfg)),
      graph_(std::move(graph)),
      landmarks_(std::move(landmarks)),
      yaw_error_(std::move(yaw_error)),
      db_(std::move(db)) {
    for (std::size_t i = 0; i < landmarks_.size(); ++i) cells_[cell_of(landmarks_[i])].push_back(static_cast<int>(i));
}

std::pair<long, long> SyntheticCity::cell_of(const Vec3& p) const {
    return {static_cast<long>(std::floor(p.x() / cfg_.max_view_range)),
            static_cast<long>(std::floor(p.y() / cfg_.max_view_range))};
}

CameraIntrinsics SyntheticCity::reference_intrinsics() const {
    return intrinsics_from_fov(cfg_.reference_hfov, cfg_.image_width, cfg_.image_height);
}

Vec3 SyntheticCity::node_position(const std::string& node_id) const {
    const LocalPoint p = graph_.to_local(graph_.location(node_id));
    return {p.east, p.north, cfg_.camera_height};
}

Pose SyntheticCity::reference_pose(const std::string& node_id, const std::string& edge_id) const {
    const auto it = yaw_error_.find(node_id);
    const double err = it == yaw_error_.end() ? 0.0 : it->second;
    const double yaw = view_yaw(graph_, node_id, edge_id) + err;
    return camera_pose(heading_attitude(yaw), node_position(node_id));
}

std::vector<int> SyntheticCity::landmarks_near(const Vec3& p, double radius) const {
    std::vector<int> out;
    const long span = static_cast<long>(std::ceil(radius / cfg_.max_view_range));
    const auto [cx, cy] = cell_of(p);
    for (long dx = -span; dx <= span; ++dx) {
        for (long dy = -span; dy <= span; ++dy) {
            const auto it = cells_.find({cx + dx, cy + dy});
            if (it == cells_.end()) continue;
            for (int i : it->second) {
                const Vec3& x = landmarks_[i];
                if (std::hypot(x.x() - p.x(), x.y() - p.y()) <= radius) out.push_back(i);
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

bool SyntheticCity::visible(const Pose& pose, const CameraIntrinsics& K, const Vec3& x) const {
    const Vec3 pc = pose.apply(x);
    if (!(pc.z() > 1e-3) || pc.norm() > cfg_.max_view_range) return false;
    return K.contains({K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy});
}

EmbeddingDatabase generate_reference_embeddings(const CityGraph& graph, const SynthConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, "synth.embeddings"));
    std::map<std::string, Embedding> entries;
    for (const auto& [id, node] : graph.primaries()) entries.emplace(id, random_unit(cfg.embedding_dim, rng));
    return EmbeddingDatabase(entries);
}

Embedding make_query_embedding(const EmbeddingDatabase& db, const std::string& node, double margin,
                               double noise_sigma, std::uint64_t seed) {
    const std::size_t dim = db.dim();
    const auto& ids = db.ids();
    const auto pos = std::lower_bound(ids.begin(), ids.end(), node);
    if (pos == ids.end() || *pos != node) throw Error(Errc::unknown_id, "no reference embedding for node", node);
    const std::size_t self = static_cast<std::size_t>(pos - ids.begin());
    Rng rng(seed);

    Eigen::VectorXd base(dim);
    for (std::size_t i = 0; i < dim; ++i) base[i] = db.row(self)[i];
    base.normalize();
    Eigen::VectorXd r(dim);
    for (std::size_t i = 0; i < dim; ++i) r[i] = rng.normal();
    r -= r.dot(base) * base;
    r.normalize();

    // Cosines are linear in alpha up to the normalisation, so precompute.
    std::vector<std::pair<double, double>> others;  // (r . b_j, base . b_j)
    for (std::size_t j = 0; j < db.size(); ++j) {
        if (j == self) continue;
        Eigen::VectorXd bj(dim);
        for (std::size_t i = 0; i < dim; ++i) bj[i] = db.row(j)[i];
        bj /= db.norm(j);
        others.emplace_back(r.dot(bj), base.dot(bj));
    }
    auto gap = [&](double alpha) {
        const double n = std::sqrt(1.0 + alpha * alpha);
        double best_other = -1.0;
        for (const auto& [rb, bb] : others) best_other = std::max(best_other, (rb + alpha * bb) / n);
        return alpha / n - best_other;
    };
    double alpha = 0.0;
    if (!others.empty() && gap(0.0) < margin) {
        double lo = 0.0;
        double hi = 1.0;
        while (gap(hi) < margin && hi < 1e8) hi *= 2.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (gap(mid) < margin ? lo : hi) = mid;
        }
        alpha = hi;
    }
    Eigen::VectorXd q = (r + alpha * base).normalized();
    if (noise_sigma > 0.0) {
        const double s = noise_sigma / std::sqrt(static_cast<double>(dim));
        for (std::size_t i = 0; i < dim; ++i) q[i] += s * rng.normal();
        q.normalize();
    }
    Embedding e{std::vector<float>(dim)};
    for (std::size_t i = 0; i < dim; ++i) e.values[i] = static_cast<float>(q[i]);
    return e;
}

SyntheticCity generate_city(const SynthConfig& cfg) {
    cfg.validate();
    Rng topo_rng(derive_seed(cfg.seed, "synth.topology"));
    const Topo topo = cfg.topology == Topology::grid ? grid_topology(cfg, topo_rng) : delaunay_topology(cfg, topo_rng);

    const int pw = digits_for(topo.junctions.size());
    const int ew = digits_for(topo.edges.size());
    std::vector<PrimaryNode> primaries;
    for (std::size_t i = 0; i < topo.junctions.size(); ++i) {
        PrimaryNode p;
        p.id = numbered('p', i, pw);
        p.location = from_local(cfg.origin, topo.junctions[i]);
        p.embedding_ref = p.id;
        primaries.push_back(std::move(p));
    }

    Rng dir_rng(derive_seed(cfg.seed, "synth.directions"));
    Rng yaw_rng(derive_seed(cfg.seed, "synth.reference_yaw"));
    std::vector<SecondaryNode> secondaries;
    std::vector<Edge> edges;
    for (std::size_t k = 0; k < topo.edges.size(); ++k) {
        auto [ia, ib] = topo.edges[k];
        if (dir_rng.uniform() < 0.5) std::swap(ia, ib);
        Edge e;
        e.id = numbered('e', k, ew);
        e.a = primaries[ia].id;
        e.b = primaries[ib].id;
        const GeoCoordinate ga = primaries[ia].location;
        const GeoCoordinate gb = primaries[ib].location;
        const double edge_bearing = bearing(ga, gb);
        const LocalPoint la = topo.junctions[ia];
        const LocalPoint lb = topo.junctions[ib];
        const double len = std::hypot(lb.east - la.east, lb.north - la.north);
        const long count = std::max(0L, std::lround(len / cfg.secondary_spacing) - 1);
        for (long s = 1; s <= count; ++s) {
            const double f = static_cast<double>(s) / static_cast<double>(count + 1);
            SecondaryNode sn;
            sn.id = e.id + "_" + numbered('s', static_cast<std::size_t>(s), 2);
            sn.edge = e.id;
            sn.location = from_local(cfg.origin, {la.east + f * (lb.east - la.east), la.north + f * (lb.north - la.north)});
            sn.yaw = wrap_degrees(edge_bearing + yaw_rng.normal(0.0, cfg.reference_yaw_jitter));
            sn.index_on_edge = static_cast<int>(s);
            e.secondaries.push_back(sn.id);
            secondaries.push_back(std::move(sn));
        }
        edges.push_back(std::move(e));
    }

    CityGraph graph = CityGraph::build(cfg.origin, std::move(primaries), std::move(secondaries), std::move(edges));

    Rng err_rng(derive_seed(cfg.seed, "synth.yaw_metadata"));
    std::map<std::string, double> yaw_error;
    for (const auto& [id, p] : graph.primaries()) yaw_error[id] = err_rng.normal(0.0, cfg.yaw_metadata_noise);
    for (const auto& [id, s] : graph.secondaries()) yaw_error[id] = err_rng.normal(0.0, cfg.yaw_metadata_noise);

    // Landmarks per edge, each retried until some reference view on the edge
    // sees it.
    SyntheticCity probe(cfg, graph, {}, yaw_error, EmbeddingDatabase());
    const CameraIntrinsics K = probe.reference_intrinsics();
    Rng lm_rng(derive_seed(cfg.seed, "synth.landmarks"));
    std::vector<Vec3> landmarks;
    for (const auto& [eid, e] : graph.edges()) {
        const auto chain = graph.reference_chain(eid);
        std::vector<Pose> views;
        for (const auto& node : chain) views.push_back(probe.reference_pose(node, eid));
        const auto pts = graph.polyline(eid);
        const LocalPoint a = pts.front();
        const LocalPoint b = pts.back();
        const double len = graph.arc_lengths(eid).back();
        const double ue = (b.east - a.east) / len;
        const double un = (b.north - a.north) / len;
        // The field runs on past b so the crop at b, which faces out of the
        // edge, still sees structure.
        const double ext = cfg.max_view_range;
        const long count = std::lround(cfg.landmark_density * (len + ext));
        for (long i = 0; i < count; ++i) {
            for (int attempt = 0; attempt < kLandmarkRetries; ++attempt) {
                const double s = lm_rng.uniform(0.0, len + ext);
                const double side = lm_rng.uniform() < 0.5 ? -1.0 : 1.0;
                const double lateral = side * (cfg.road_half_width + std::abs(lm_rng.normal(0.0, cfg.landmark_lateral_sigma)));
                const double z = lm_rng.uniform(0.0, cfg.landmark_max_height);
                // Right-hand normal of the a -> b direction is (un, -ue).
                const Vec3 x(a.east + s * ue + lateral * un, a.north + s * un - lateral * ue, z);
                const bool seen = std::any_of(views.begin(), views.end(),
                                              [&](const Pose& v) { return probe.visible(v, K, x); });
                if (seen) {
                    landmarks.push_back(x);
                    break;
                }
            }
        }
    }

    EmbeddingDatabase db = generate_reference_embeddings(graph, cfg);
    return SyntheticCity(cfg, std::move(graph), std::move(landmarks), std::move(yaw_error), std::move(db));
}

std::vector<QueryScenario> generate_queries(const SyntheticCity& city, int n, double hfov, std::uint64_t seed,
                                            const QueryOptions& opts) {
    if (n < 1) throw Error(Errc::invalid_argument, "query count must be >= 1");
    check_query_fov(hfov);
    const SynthConfig& cfg = city.config();
    const CityGraph& graph = city.graph();
    std::vector<std::string> edge_ids;
    for (const auto& [id, e] : graph.edges()) edge_ids.push_back(id);
    if (opts.fixed_edge && !graph.edges().count(*opts.fixed_edge)) {
        throw Error(Errc::unknown_id, "unknown edge", *opts.fixed_edge);
    }

    Rng rng(derive_seed(seed, "synth.queries"));
    const int width = digits_for(static_cast<std::size_t>(n));
    std::vector<QueryScenario> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        QueryScenario q;
        q.id = numbered('q', static_cast<std::size_t>(i), width);
        q.edge = opts.fixed_edge ? *opts.fixed_edge : edge_ids[rng.below(edge_ids.size())];
        const double f = rng.uniform();
        q.fraction = opts.fixed_fraction ? *opts.fixed_fraction : f;
        q.hfov = hfov;
        const Edge& e = graph.edge(q.edge);
        q.true_node = e.a;
        q.lateral_offset = rng.normal(0.0, cfg.query_lateral_sigma);
        q.yaw = wrap_degrees(e.bearing + rng.normal(0.0, cfg.query_yaw_jitter));
        q.compass_reading = wrap_degrees(q.yaw + rng.normal(0.0, cfg.compass_noise_sigma));
        const LocalPoint on_edge = interpolate_on_edge_local(graph, q.edge, q.fraction);
        const double b = e.bearing * kDeg;
        q.location = graph.from_local({on_edge.east + q.lateral_offset * std::cos(b),
                                       on_edge.north - q.lateral_offset * std::sin(b)});
        const std::uint64_t emb_seed = derive_seed(seed, "synth.query_embedding/" + q.id);
        q.embedding = make_query_embedding(city.db(), q.true_node, cfg.embedding_margin, cfg.embedding_noise_sigma,
                                           emb_seed);
        out.push_back(std::move(q));
    }
    return out;
}

Rotation query_attitude(const QueryScenario& q) { return heading_attitude(q.yaw); }

Vec3 query_position(const SyntheticCity& city, const QueryScenario& q) {
    const LocalPoint p = city.graph().to_local(q.location);
    return {p.east, p.north, city.config().camera_height};
}

Pose query_pose(const SyntheticCity& city, const QueryScenario& q) {
    return camera_pose(query_attitude(q), query_position(city, q));
}

CameraIntrinsics query_intrinsics(const SyntheticCity& city, const QueryScenario& q) {
    return intrinsics_from_fov(q.hfov, city.config().image_width, city.config().image_height);
}

// --- persistence ----------------------------------------------------------------

nlohmann::json synth_config_to_json(const SynthConfig& c) {
    return {
        {"topology", c.topology == Topology::grid ? "grid" : "delaunay"},
        {"grid_rows", c.grid_rows},
        {"grid_cols", c.grid_cols},
        {"edge_length_mean", c.edge_length_mean},
        {"edge_length_sigma", c.edge_length_sigma},
        {"secondary_spacing", c.secondary_spacing},
        {"landmark_density", c.landmark_density},
        {"landmark_lateral_sigma", c.landmark_lateral_sigma},
        {"road_half_width", c.road_half_width},
        {"landmark_max_height", c.landmark_max_height},
        {"camera_height", c.camera_height},
        {"max_view_range", c.max_view_range},
        {"reference_hfov", c.reference_hfov},
        {"image_width", c.image_width},
        {"image_height", c.image_height},
        {"reference_yaw_jitter", c.reference_yaw_jitter},
        {"yaw_metadata_noise", c.yaw_metadata_noise},
        {"query_yaw_jitter", c.query_yaw_jitter},
        {"compass_noise_sigma", c.compass_noise_sigma},
        {"query_lateral_sigma", c.query_lateral_sigma},
        {"query_hfov", c.query_hfov},
        {"query_count", c.query_count},
        {"embedding_dim", c.embedding_dim},
        {"embedding_margin", c.embedding_margin},
        {"embedding_noise_sigma", c.embedding_noise_sigma},
        {"match_quality",
         {{"pixel_noise_sigma", c.match_quality.pixel_noise_sigma},
          {"outlier_rate", c.match_quality.outlier_rate},
          {"min_shared_landmarks", c.match_quality.min_shared_landmarks},
          {"max_pairs", c.match_quality.max_pairs}}},
        {"origin", {{"lat", c.origin.lat}, {"lon", c.origin.lon}}},
        {"seed", c.seed},
    };
}

SynthConfig synth_config_from_json(const nlohmann::json& d) {
    SynthConfig c;
    try {
        const std::string topo = d.value("topology", std::string("grid"));
        if (topo == "grid") {
            c.topology = Topology::grid;
        } else if (topo == "delaunay") {
            c.topology = Topology::delaunay;
        } else {
            throw Error(Errc::schema, "unknown topology \"" + topo + "\"");
        }
        c.grid_rows = d.value("grid_rows", c.grid_rows);
        c.grid_cols = d.value("grid_cols", c.grid_cols);
        c.edge_length_mean = d.value("edge_length_mean", c.edge_length_mean);
        c.edge_length_sigma = d.value("edge_length_sigma", c.edge_length_sigma);
        c.secondary_spacing = d.value("secondary_spacing", c.secondary_spacing);
        c.landmark_density = d.value("landmark_density", c.landmark_density);
        c.landmark_lateral_sigma = d.value("landmark_lateral_sigma", c.landmark_lateral_sigma);
        c.road_half_width = d.value("road_half_width", c.road_half_width);
        c.landmark_max_height = d.value("landmark_max_height", c.landmark_max_height);
        c.camera_height = d.value("camera_height", c.camera_height);
        c.max_view_range = d.value("max_view_range", c.max_view_range);
        c.reference_hfov = d.value("reference_hfov", c.reference_hfov);
        c.image_width = d.value("image_width", c.image_width);
        c.image_height = d.value("image_height", c.image_height);
        c.reference_yaw_jitter = d.value("reference_yaw_jitter", c.reference_yaw_jitter);
        c.yaw_metadata_noise = d.value("yaw_metadata_noise", c.yaw_metadata_noise);
        c.query_yaw_jitter = d.value("query_yaw_jitter", c.query_yaw_jitter);
        c.compass_noise_sigma = d.value("compass_noise_sigma", c.compass_noise_sigma);
        c.query_lateral_sigma = d.value("query_lateral_sigma", c.query_lateral_sigma);
        c.query_hfov = d.value("query_hfov", c.query_hfov);
        c.query_count = d.value("query_count", c.query_count);
        c.embedding_dim = d.value("embedding_dim", c.embedding_dim);
        c.embedding_margin = d.value("embedding_margin", c.embedding_margin);
        c.embedding_noise_sigma = d.value("embedding_noise_sigma", c.embedding_noise_sigma);
        if (d.contains("match_quality")) {
            const auto& m = d["match_quality"];
            c.match_quality.pixel_noise_sigma = m.value("pixel_noise_sigma", c.match_quality.pixel_noise_sigma);
            c.match_quality.outlier_rate = m.value("outlier_rate", c.match_quality.outlier_rate);
            c.match_quality.min_shared_landmarks = m.value("min_shared_landmarks", c.match_quality.min_shared_landmarks);
            c.match_quality.max_pairs = m.value("max_pairs", c.match_quality.max_pairs);
        }
        if (d.contains("origin")) c.origin = {d["origin"].at("lat").get<double>(), d["origin"].at("lon").get<double>()};
        c.seed = d.value("seed", c.seed);
    } catch (const nlohmann::json::exception& ex) {
        throw Error(Errc::schema, std::string("bad synthesis config: ") + ex.what());
    }
    c.validate();
    return c;
}

nlohmann::json scenario_to_json(const SyntheticCity& city, const std::vector<QueryScenario>& queries) {
    nlohmann::json landmarks = nlohmann::json::array();
    for (const Vec3& x : city.landmarks()) landmarks.push_back({x.x(), x.y(), x.z()});
    nlohmann::json qs = nlohmann::json::array();
    for (const auto& q : queries) {
        qs.push_back({{"id", q.id},
                      {"edge", q.edge},
                      {"fraction", q.fraction},
                      {"hfov", q.hfov},
                      {"compass_reading", q.compass_reading},
                      {"true_node", q.true_node},
                      {"lateral_offset", q.lateral_offset},
                      {"yaw", q.yaw},
                      {"location", {{"lat", q.location.lat}, {"lon", q.location.lon}}}});
    }
    return {{"config", synth_config_to_json(city.config())},
            {"landmarks", std::move(landmarks)},
            {"yaw_error", city.yaw_error()},
            {"queries", std::move(qs)}};
}

LoadedScenario scenario_from_json(const nlohmann::json& doc, CityGraph graph, EmbeddingDatabase db,
                                  const EmbeddingDatabase& query_embeddings) {
    try {
        SynthConfig cfg = synth_config_from_json(doc.at("config"));
        std::vector<Vec3> landmarks;
        for (const auto& x : doc.at("landmarks")) {
            landmarks.emplace_back(x.at(0).get<double>(), x.at(1).get<double>(), x.at(2).get<double>());
        }
        std::map<std::string, double> yaw_error = doc.at("yaw_error").get<std::map<std::string, double>>();
        db.validate_against(graph);
        std::vector<QueryScenario> queries;
        for (const auto& j : doc.at("queries")) {
            QueryScenario q;
            q.id = j.at("id").get<std::string>();
            q.edge = j.at("edge").get<std::string>();
            (void)graph.edge(q.edge);
            q.fraction = j.at("fraction").get<double>();
            if (!(q.fraction >= 0.0 && q.fraction <= 1.0)) throw Error(Errc::schema, "fraction out of range", q.id);
            q.hfov = j.at("hfov").get<double>();
            q.compass_reading = j.at("compass_reading").get<double>();
            q.true_node = j.at("true_node").get<std::string>();
            q.lateral_offset = j.at("lateral_offset").get<double>();
            q.yaw = j.at("yaw").get<double>();
            q.location = {j.at("location").at("lat").get<double>(), j.at("location").at("lon").get<double>()};
            q.embedding = query_embeddings.at(q.id);
            queries.push_back(std::move(q));
        }
        return {SyntheticCity(std::move(cfg), std::move(graph), std::move(landmarks), std::move(yaw_error), std::move(db)),
                std::move(queries)};
    } catch (const nlohmann::json::exception& ex) {
        throw Error(Errc::schema, std::string("bad scenario file: ") + ex.what());
    }
}

EmbeddingDatabase query_embedding_table(const std::vector<QueryScenario>& queries) {
    std::map<std::string, Embedding> entries;
    for (const auto& q : queries) entries.emplace(q.id, q.embedding);
    return EmbeddingDatabase(entries);
}

}  // namespace peng
