#include "peng/priors.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>

#include "peng/error.hpp"
#include "peng/match_backend.hpp"
#include "peng/pipeline.hpp"
#include "peng/rng.hpp"

namespace peng {

namespace {

constexpr std::array<char, 4> kMagic{'P', 'P', 'R', 'I'};
constexpr std::uint32_t kVersion = 1;
constexpr double kDeg = std::numbers::pi / 180.0;

static_assert(std::endian::native == std::endian::little, "prior files assume a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void put_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void put_str(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_rotation(std::ostream& out, const Rotation& r) {
    const auto& q = r.quaternion();
    put_f64(out, q.w());
    put_f64(out, q.x());
    put_f64(out, q.y());
    put_f64(out, q.z());
}

struct Reader {
    std::istream& in;
    std::string what;

    void raw(void* dst, std::size_t n) {
        if (!in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n))) {
            throw Error(Errc::schema, "truncated prior file", what);
        }
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof v);
        return v;
    }
    double f64() {
        double v;
        raw(&v, sizeof v);
        return v;
    }
    std::string str() {
        std::string s(u32(), '\0');
        raw(s.data(), s.size());
        return s;
    }
    Rotation rotation() {
        const double w = f64(), x = f64(), y = f64(), z = f64();
        const Eigen::Quaterniond q(w, x, y, z);
        if (!(std::abs(q.norm() - 1.0) < 1e-6)) throw Error(Errc::schema, "non-unit quaternion in prior file", what);
        return Rotation(q);
    }
};

}  // namespace

const EdgePrior* PriorStore::find(const std::string& edge_id) const {
    const auto it = edges_.find(edge_id);
    return it == edges_.end() ? nullptr : &it->second;
}

void PriorStore::set(const std::string& edge_id, EdgePrior prior) {
    failed_.erase(edge_id);
    edges_[edge_id] = std::move(prior);
}

void PriorStore::mark_failed(const std::string& edge_id, std::string reason) {
    edges_.erase(edge_id);
    failed_[edge_id] = std::move(reason);
}

void PriorStore::validate_against(const CityGraph& graph) const {
    for (const auto& [id, prior] : edges_) {
        if (!graph.edges().count(id)) throw Error(Errc::dangling_reference, "prior for unknown edge", id);
        if (prior.nodes != graph.reference_chain(id) || prior.attitudes.size() != prior.nodes.size()) {
            throw Error(Errc::schema, "prior chain does not match the graph", id);
        }
    }
    for (const auto& [id, reason] : failed_) {
        if (!graph.edges().count(id)) throw Error(Errc::dangling_reference, "prior for unknown edge", id);
    }
}

bool operator==(const PriorStore& a, const PriorStore& b) {
    if (a.failed_ != b.failed_ || a.edges_.size() != b.edges_.size()) return false;
    auto same = [](const Rotation& x, const Rotation& y) { return x.quaternion().coeffs() == y.quaternion().coeffs(); };
    for (const auto& [id, pa] : a.edges_) {
        const EdgePrior* pb = b.find(id);
        if (!pb || pa.nodes != pb->nodes || !same(pa.median, pb->median)) return false;
        for (std::size_t i = 0; i < pa.attitudes.size(); ++i) {
            if (!same(pa.attitudes[i], pb->attitudes[i])) return false;
        }
    }
    return true;
}

PriorStore precompute_priors(const CityGraph& graph, const MatchBackend& backend, const PipelineConfig& cfg) {
    cfg.validate();
    PriorStore store;
    for (const auto& [edge_id, edge] : graph.edges()) {
        const std::vector<std::string> chain = graph.reference_chain(edge_id);
        const std::size_t m = chain.size();
        EdgePrior prior;
        prior.nodes = chain;
        prior.attitudes.resize(m);
        try {
            // Each pair fixes the yaw of both of its views: the baseline
            // direction seen from one camera against the known graph bearing.
            std::vector<std::vector<double>> yaws(m);
            auto observe = [&](std::size_t from, std::size_t to, const Pose& relative, const std::string& key) {
                const Vec3 c = relative_offset_body(relative);
                if (std::hypot(c.x(), c.y()) < 1e-9) {
                    throw Error(Errc::degenerate_geometry, "zero baseline between references", key);
                }
                const double baseline = std::atan2(c.x(), c.y()) / kDeg;
                // Poses live in the graph's local frame, so the bearing must too.
                const LocalPoint a = graph.to_local(graph.location(chain[from]));
                const LocalPoint b = graph.to_local(graph.location(chain[to]));
                const double world = std::atan2(b.east - a.east, b.north - a.north) / kDeg;
                yaws[from].push_back(wrap_degrees(world - baseline));
            };
            for (std::size_t j = 0; j + 1 < m; ++j) {
                const PairHandle h{{chain[j], edge_id}, {chain[j + 1], edge_id}};
                const CorrespondenceSet matches = backend.match_pair(h);
                RansacConfig rc = cfg.ransac_offline;
                rc.seed = derive_seed(cfg.seed, "ransac/priors/" + h.key());
                const PoseEstimate est = relative_pose_from_matches(matches, backend.intrinsics(h.query), rc);
                observe(j, j + 1, est.pose, h.key());
                observe(j + 1, j, est.pose.inverse(), h.key());
            }
            for (std::size_t j = 0; j < m; ++j) {
                double yaw = yaws[j].front();
                if (yaws[j].size() == 2) yaw = wrap_degrees(yaw + 0.5 * wrap_degrees(yaws[j][1] - yaw));
                prior.attitudes[j] = heading_attitude(yaw);
            }
            prior.median = median_rotation(prior.attitudes);
            store.set(edge_id, std::move(prior));
        } catch (const Error& e) {
            store.mark_failed(edge_id, e.what());
        }
    }
    return store;
}

void save_priors(const PriorStore& store, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write prior file", path.string());
    out.write(kMagic.data(), 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(store.edges().size()));
    put_u32(out, static_cast<std::uint32_t>(store.failed().size()));
    for (const auto& [id, prior] : store.edges()) {
        put_str(out, id);
        put_u32(out, static_cast<std::uint32_t>(prior.nodes.size()));
        for (std::size_t i = 0; i < prior.nodes.size(); ++i) {
            put_str(out, prior.nodes[i]);
            put_rotation(out, prior.attitudes[i]);
        }
        put_rotation(out, prior.median);
    }
    for (const auto& [id, reason] : store.failed()) {
        put_str(out, id);
        put_str(out, reason);
    }
    if (!out) throw Error(Errc::io, "failed writing prior file", path.string());
}

PriorStore load_priors(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open prior file", path.string());
    Reader r{in, path.string()};
    std::array<char, 4> magic{};
    r.raw(magic.data(), 4);
    if (magic != kMagic) throw Error(Errc::schema, "not a prior file", path.string());
    if (r.u32() != kVersion) throw Error(Errc::schema, "unsupported prior file version", path.string());
    const std::uint32_t edges = r.u32();
    const std::uint32_t failed = r.u32();
    PriorStore store;
    for (std::uint32_t e = 0; e < edges; ++e) {
        const std::string id = r.str();
        EdgePrior prior;
        const std::uint32_t n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            prior.nodes.push_back(r.str());
            prior.attitudes.push_back(r.rotation());
        }
        prior.median = r.rotation();
        store.set(id, std::move(prior));
    }
    for (std::uint32_t f = 0; f < failed; ++f) {
        const std::string id = r.str();
        store.mark_failed(id, r.str());
    }
    return store;
}

nlohmann::json priors_to_json(const PriorStore& store) {
    auto rot = [](const Rotation& r) {
        const auto& q = r.quaternion();
        const Vec3 e = r.euler_deg();
        return nlohmann::json{{"quaternion", {q.w(), q.x(), q.y(), q.z()}}, {"euler_deg", {e.x(), e.y(), e.z()}}};
    };
    nlohmann::json edges = nlohmann::json::object();
    for (const auto& [id, prior] : store.edges()) {
        nlohmann::json refs = nlohmann::json::array();
        for (std::size_t i = 0; i < prior.nodes.size(); ++i) {
            nlohmann::json ref = rot(prior.attitudes[i]);
            ref["node"] = prior.nodes[i];
            refs.push_back(std::move(ref));
        }
        edges[id] = {{"references", std::move(refs)}, {"median", rot(prior.median)}};
    }
    return {{"edges", std::move(edges)}, {"failed", store.failed()}};
}

}  // namespace peng
