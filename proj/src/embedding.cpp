#include "peng/embedding.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "peng/error.hpp"
#include "peng/simd/kernels.hpp"

namespace peng {

namespace {

constexpr std::array<char, 4> kMagic{'P', 'E', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "embedding files assume a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& in, const std::string& what) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error(Errc::schema, "truncated embedding file", what);
    return v;
}

}  // namespace

void Embedding::validate(const std::string& id) const {
    if (values.empty()) throw Error(Errc::schema, "embedding has zero dimension", id);
    double sq = 0.0;
    for (float v : values) {
        if (!std::isfinite(v)) throw Error(Errc::schema, "embedding has a non-finite value", id);
        sq += static_cast<double>(v) * v;
    }
    if (!(sq > 0.0)) throw Error(Errc::zero_norm, "embedding has zero norm", id);
}

EmbeddingDatabase::EmbeddingDatabase(const std::map<std::string, Embedding>& entries) {
    for (const auto& [id, e] : entries) {
        e.validate(id);
        if (dim_ == 0) dim_ = e.dim();
        if (e.dim() != dim_) {
            throw Error(Errc::dimension_mismatch,
                        "embedding dimension " + std::to_string(e.dim()) + " differs from " + std::to_string(dim_), id);
        }
        ids_.push_back(id);
        data_.insert(data_.end(), e.values.begin(), e.values.end());
        double sq = 0.0;
        for (float v : e.values) sq += static_cast<double>(v) * v;
        norms_.push_back(std::sqrt(sq));
    }
}

bool EmbeddingDatabase::contains(const std::string& id) const {
    return std::binary_search(ids_.begin(), ids_.end(), id);
}

Embedding EmbeddingDatabase::at(const std::string& id) const {
    const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) throw Error(Errc::unknown_id, "no embedding for id", id);
    const auto r = row(static_cast<std::size_t>(it - ids_.begin()));
    return {std::vector<float>(r.begin(), r.end())};
}

void EmbeddingDatabase::validate_against(const CityGraph& graph) const {
    for (const auto& id : ids_) {
        if (!graph.is_primary(id)) throw Error(Errc::dangling_reference, "embedding id is not a primary node", id);
    }
}

std::vector<CandidateScore> score_candidates(const Embedding& query, const EmbeddingDatabase& db) {
    if (db.empty()) throw Error(Errc::empty_database, "embedding database is empty");
    if (query.dim() != db.dim()) {
        throw Error(Errc::dimension_mismatch, "query dimension " + std::to_string(query.dim()) +
                                                  " differs from database dimension " + std::to_string(db.dim()));
    }
    query.validate("query");

    const std::size_t n = db.size();
    std::vector<double> dots(n);
    simd::active_kernels().dot_rows(query.values.data(), db.data().data(), n, db.dim(), dots.data());
    double qn = 0.0;
    for (float v : query.values) qn += static_cast<double>(v) * v;
    qn = std::sqrt(qn);

    std::vector<CandidateScore> out(n);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
        const double c = std::clamp(dots[i] / (qn * db.norm(i)), -1.0, 1.0);
        out[i].node = db.ids()[i];
        out[i].raw_cosine = c;
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }
    for (auto& s : out) s.confidence = hi > lo ? (s.raw_cosine - lo) / (hi - lo) : 1.0;
    // ids are already ascending, so a stable sort breaks ties by id.
    std::stable_sort(out.begin(), out.end(),
                     [](const CandidateScore& a, const CandidateScore& b) { return a.raw_cosine > b.raw_cosine; });
    return out;
}

CandidateSet select_candidates(std::span<const CandidateScore> scores, double theta_c, int k) {
    if (!(theta_c >= 0.0 && theta_c <= 1.0)) throw Error(Errc::invalid_argument, "theta_c must lie in [0, 1]");
    if (k < 1) throw Error(Errc::invalid_argument, "k must be >= 1");
    CandidateSet set;
    set.theta_c = theta_c;
    set.k = k;
    const std::size_t limit = std::min<std::size_t>(scores.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < limit; ++i) {
        if (scores[i].confidence > theta_c) set.candidates.push_back(scores[i]);
    }
    return set;
}

double departure_bearing(const CityGraph& graph, const std::string& edge_id, const std::string& from) {
    const Edge& e = graph.edge(edge_id);
    if (from == e.a) return e.bearing;
    if (from == e.b) return wrap_degrees(e.bearing + 180.0);
    throw Error(Errc::invalid_argument, "node is not an endpoint of edge " + edge_id, from);
}

std::vector<std::string> compass_filter_edges(const CityGraph& graph, const std::string& candidate,
                                              double compass_yaw, double yaw_threshold) {
    if (!(yaw_threshold > 0.0 && yaw_threshold <= 180.0)) {
        throw Error(Errc::invalid_argument, "yaw threshold must lie in (0, 180]");
    }
    std::vector<std::pair<double, std::string>> kept;
    for (const auto& edge_id : graph.incident_edges(candidate)) {
        const double d = angular_distance(departure_bearing(graph, edge_id, candidate), compass_yaw);
        if (d <= yaw_threshold) kept.emplace_back(d, edge_id);
    }
    std::sort(kept.begin(), kept.end());
    std::vector<std::string> out;
    out.reserve(kept.size());
    for (auto& [d, id] : kept) out.push_back(std::move(id));
    return out;
}

EmbeddingDatabase load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open embedding file", path.string());
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    if (in && magic == kMagic) {
        const std::string what = path.string();
        const std::uint32_t version = get_u32(in, what);
        if (version != kVersion) throw Error(Errc::schema, "unsupported embedding file version", what);
        const std::uint32_t dim = get_u32(in, what);
        const std::uint32_t count = get_u32(in, what);
        std::map<std::string, Embedding> entries;
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t len = get_u32(in, what);
            std::string id(len, '\0');
            Embedding e{std::vector<float>(dim)};
            if (!in.read(id.data(), len) ||
                !in.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(dim * sizeof(float)))) {
                throw Error(Errc::schema, "truncated embedding file", what);
            }
            if (!entries.emplace(id, std::move(e)).second) throw Error(Errc::schema, "duplicate embedding id", id);
        }
        return EmbeddingDatabase(entries);
    }
    in.clear();
    in.seekg(0);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(Errc::schema, std::string("embedding file is neither binary nor JSON: ") + ex.what(),
                    path.string());
    }
    return embeddings_from_json(doc);
}

void save_embeddings(const EmbeddingDatabase& db, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write embedding file", path.string());
    out.write(kMagic.data(), 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(db.dim()));
    put_u32(out, static_cast<std::uint32_t>(db.size()));
    for (std::size_t i = 0; i < db.size(); ++i) {
        const std::string& id = db.ids()[i];
        put_u32(out, static_cast<std::uint32_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
        const auto r = db.row(i);
        out.write(reinterpret_cast<const char*>(r.data()), static_cast<std::streamsize>(r.size() * sizeof(float)));
    }
    if (!out) throw Error(Errc::io, "failed writing embedding file", path.string());
}

EmbeddingDatabase embeddings_from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("embeddings") || !doc["embeddings"].is_object()) {
        throw Error(Errc::schema, "embedding JSON needs an \"embeddings\" object");
    }
    std::map<std::string, Embedding> entries;
    for (const auto& [id, values] : doc["embeddings"].items()) {
        if (!values.is_array()) throw Error(Errc::schema, "embedding must be an array of numbers", id);
        Embedding e;
        for (const auto& v : values) {
            if (!v.is_number()) throw Error(Errc::schema, "embedding must be an array of numbers", id);
            e.values.push_back(v.get<float>());
        }
        entries.emplace(id, std::move(e));
    }
    EmbeddingDatabase db(entries);
    if (doc.contains("dim") && db.size() > 0 && doc["dim"].get<std::size_t>() != db.dim()) {
        throw Error(Errc::dimension_mismatch, "declared dim does not match the embeddings");
    }
    return db;
}

nlohmann::json embeddings_to_json(const EmbeddingDatabase& db) {
    nlohmann::json doc{{"dim", db.dim()}, {"embeddings", nlohmann::json::object()}};
    for (std::size_t i = 0; i < db.size(); ++i) {
        const auto r = db.row(i);
        doc["embeddings"][db.ids()[i]] = std::vector<float>(r.begin(), r.end());
    }
    return doc;
}

}  // namespace peng
