#include "peng/match_backend.hpp"

#include <algorithm>
#include <cmath>

#include "peng/error.hpp"
#include "peng/rng.hpp"

namespace peng {

nlohmann::json view_to_json(const ViewKey& v) { return {{"id", v.id}, {"edge", v.edge}}; }

ViewKey view_from_json(const nlohmann::json& j) {
    return {j.at("id").get<std::string>(), j.value("edge", std::string())};
}

namespace {

struct ResolvedView {
    Pose pose;
    CameraIntrinsics K;
    Vec3 position;
};

}  // namespace

CorrespondenceSet synthetic_match(const SyntheticCity& scene, std::span<const QueryScenario> queries,
                                  const PairHandle& handle, const MatchQuality& q, std::uint64_t seed) {
    SyntheticBackend backend(scene, queries, q, seed);
    return backend.match_pair(handle);
}

SyntheticBackend::SyntheticBackend(const SyntheticCity& city, std::span<const QueryScenario> queries,
                                   MatchQuality quality, std::uint64_t seed)
    : city_(city), queries_(queries), quality_(quality), seed_(seed) {
    quality_.validate();
    for (std::size_t i = 0; i < queries_.size(); ++i) query_index_[queries_[i].id] = i;
}

const QueryScenario* SyntheticBackend::find_query(const std::string& id) const {
    const auto it = query_index_.find(id);
    return it == query_index_.end() ? nullptr : &queries_[it->second];
}

Pose SyntheticBackend::truth_pose(const ViewKey& view) const {
    if (view.edge.empty()) {
        if (const QueryScenario* q = find_query(view.id)) return query_pose(city_, *q);
        throw Error(Errc::unknown_id, "unknown query view", view.id);
    }
    const CityGraph& g = city_.graph();
    if (!g.edges().count(view.edge)) throw Error(Errc::unknown_id, "unknown edge in view", view.edge);
    if (!g.is_primary(view.id) && !g.is_secondary(view.id)) throw Error(Errc::unknown_id, "unknown node in view", view.id);
    try {
        return city_.reference_pose(view.id, view.edge);
    } catch (const Error& e) {
        throw Error(Errc::unknown_id, e.what(), view.key());
    }
}

CameraIntrinsics SyntheticBackend::intrinsics(const ViewKey& view) const {
    if (view.edge.empty()) {
        if (const QueryScenario* q = find_query(view.id)) return query_intrinsics(city_, *q);
        throw Error(Errc::unknown_id, "unknown query view", view.id);
    }
    (void)truth_pose(view);
    return city_.reference_intrinsics();
}

CorrespondenceSet SyntheticBackend::match_pair(const PairHandle& handle) const {
    const Pose ref = truth_pose(handle.reference);
    const Pose qry = truth_pose(handle.query);
    const CameraIntrinsics kr = intrinsics(handle.reference);
    const CameraIntrinsics kq = intrinsics(handle.query);

    std::vector<int> shared;
    for (int i : city_.landmarks_near(ref.centre(), city_.config().max_view_range)) {
        const Vec3& x = city_.landmarks()[i];
        if (city_.visible(ref, kr, x) && city_.visible(qry, kq, x)) shared.push_back(i);
    }
    if (static_cast<int>(shared.size()) < quality_.min_shared_landmarks) {
        throw Error(Errc::insufficient_overlap,
                    std::to_string(shared.size()) + " shared landmarks, need " +
                        std::to_string(quality_.min_shared_landmarks),
                    handle.key());
    }

    Rng rng(derive_seed(seed_, "backend/" + handle.key()));
    if (static_cast<int>(shared.size()) > quality_.max_pairs) {
        for (int k = 0; k < quality_.max_pairs; ++k) {
            const std::size_t j = k + rng.below(shared.size() - k);
            std::swap(shared[k], shared[j]);
        }
        shared.resize(quality_.max_pairs);
        std::sort(shared.begin(), shared.end());
    }

    CorrespondenceSet out;
    out.source = name();
    out.pairs.reserve(shared.size());
    for (int i : shared) {
        const Vec3& x = city_.landmarks()[i];
        Correspondence c;
        c.world = ref.apply(x);
        c.pixel = project(kq, qry, x);
        if (quality_.pixel_noise_sigma > 0.0) {
            c.pixel.x() += rng.normal(0.0, quality_.pixel_noise_sigma);
            c.pixel.y() += rng.normal(0.0, quality_.pixel_noise_sigma);
        }
        out.pairs.push_back(c);
    }

    const std::size_t n = out.pairs.size();
    const auto corrupt = static_cast<std::size_t>(std::lround(quality_.outlier_rate * static_cast<double>(n)));
    if (corrupt > 0) {
        std::vector<int> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
        for (std::size_t k = 0; k < corrupt; ++k) {
            const std::size_t j = k + rng.below(n - k);
            std::swap(order[k], order[j]);
        }
        out.corrupted.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(corrupt));
        std::sort(out.corrupted.begin(), out.corrupted.end());
        for (int i : out.corrupted) out.pairs[i].pixel = Vec2(rng.uniform(0.0, kq.width), rng.uniform(0.0, kq.height));
    }
    return out;
}

// --- protocol --------------------------------------------------------------------

nlohmann::json correspondences_to_json(const CorrespondenceSet& set) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& c : set.pairs) {
        pairs.push_back({{"world", {c.world.x(), c.world.y(), c.world.z()}}, {"pixel", {c.pixel.x(), c.pixel.y()}}});
    }
    return {{"correspondences", std::move(pairs)}, {"corrupted", set.corrupted}, {"source", set.source}};
}

CorrespondenceSet correspondences_from_json(const nlohmann::json& j) {
    try {
        CorrespondenceSet set;
        for (const auto& c : j.at("correspondences")) {
            const auto& w = c.at("world");
            const auto& p = c.at("pixel");
            Correspondence corr{{w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>()},
                                {p.at(0).get<double>(), p.at(1).get<double>()}};
            if (!corr.world.allFinite() || !corr.pixel.allFinite()) {
                throw Error(Errc::schema, "non-finite correspondence from backend");
            }
            set.pairs.push_back(corr);
        }
        if (j.contains("corrupted")) set.corrupted = j["corrupted"].get<std::vector<int>>();
        set.source = j.value("source", std::string("subprocess"));
        return set;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(Errc::schema, std::string("malformed correspondence response: ") + ex.what());
    }
}

nlohmann::json intrinsics_to_json(const CameraIntrinsics& K) {
    return {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
}

CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
    try {
        CameraIntrinsics K;
        K.fx = j.at("fx").get<double>();
        K.fy = j.at("fy").get<double>();
        K.cx = j.at("cx").get<double>();
        K.cy = j.at("cy").get<double>();
        K.width = j.at("width").get<int>();
        K.height = j.at("height").get<int>();
        if (!(K.fx > 0.0 && K.fy > 0.0)) throw Error(Errc::schema, "focal lengths must be positive");
        return K;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(Errc::schema, std::string("malformed intrinsics: ") + ex.what());
    }
}

Errc errc_from_string(std::string_view name) {
    for (int i = 0; i <= static_cast<int>(Errc::io); ++i) {
        if (to_string(static_cast<Errc>(i)) == name) return static_cast<Errc>(i);
    }
    return Errc::io;
}

nlohmann::json serve_request(const MatchBackend& backend, const nlohmann::json& request) {
    try {
        const std::string op = request.at("op").get<std::string>();
        if (op == "match") {
            const auto& pair = request.at("pair");
            const PairHandle h{view_from_json(pair.at("reference")), view_from_json(pair.at("query"))};
            return correspondences_to_json(backend.match_pair(h));
        }
        if (op == "intrinsics") return intrinsics_to_json(backend.intrinsics(view_from_json(request.at("view"))));
        return {{"error", {{"code", to_string(Errc::invalid_argument)}, {"message", "unknown op " + op}}}};
    } catch (const Error& e) {
        return {{"error", {{"code", to_string(e.code())}, {"message", e.what()}, {"subject", e.subject()}}}};
    } catch (const nlohmann::json::exception& e) {
        return {{"error", {{"code", to_string(Errc::schema)}, {"message", e.what()}}}};
    }
}

}  // namespace peng
