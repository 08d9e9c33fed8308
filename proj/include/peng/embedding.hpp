#pragma once

// Stage 1: cosine retrieval of primary nodes, min-max confidences, candidate
// thresholding and compass filtering of candidate edges.

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "peng/citygraph.hpp"

namespace peng {

inline constexpr std::size_t kDefaultEmbeddingDim = 768;

struct Embedding {
    std::vector<float> values;

    std::size_t dim() const noexcept { return values.size(); }
    /// Finite and non-zero; throws Errc::zero_norm / Errc::schema otherwise.
    void validate(const std::string& id = {}) const;
};

/// Dense row-major store, rows ordered by id.
class EmbeddingDatabase {
public:
    EmbeddingDatabase() = default;
    explicit EmbeddingDatabase(const std::map<std::string, Embedding>& entries);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return ids_.size(); }
    bool empty() const noexcept { return ids_.empty(); }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    const std::vector<float>& data() const noexcept { return data_; }
    double norm(std::size_t i) const { return norms_[i]; }

    bool contains(const std::string& id) const;
    /// Throws Errc::unknown_id.
    Embedding at(const std::string& id) const;

    /// Every id must be a primary node of `graph`.
    void validate_against(const CityGraph& graph) const;

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::vector<double> norms_;
};

struct CandidateScore {
    std::string node;
    double raw_cosine = 0.0;
    double confidence = 0.0;
};

struct CandidateSet {
    std::vector<CandidateScore> candidates;
    double theta_c = 0.0;
    int k = 0;
};

/// Cosine of the query against every entry, min-max rescaled to [0, 1].
/// When all cosines are equal (including a single entry) every confidence is
/// 1. Sorted by descending cosine, ties by id.
std::vector<CandidateScore> score_candidates(const Embedding& query, const EmbeddingDatabase& db);

/// Members with confidence > theta_c among the first k, order preserved.
CandidateSet select_candidates(std::span<const CandidateScore> scores, double theta_c, int k);

/// Incident edges of `candidate` whose bearing leaving the candidate lies
/// within yaw_threshold of compass_yaw. Sorted by that angular difference,
/// then edge id.
std::vector<std::string> compass_filter_edges(const CityGraph& graph, const std::string& candidate,
                                              double compass_yaw, double yaw_threshold);

/// Bearing of `edge` leaving primary node `from`.
double departure_bearing(const CityGraph& graph, const std::string& edge_id, const std::string& from);

// --- files -------------------------------------------------------------------
//
// Binary layout, little-endian:
//   "PEMB" | u32 version (1) | u32 dim | u32 count |
//   count x ( u32 id_length | id bytes | dim x f32 )
// JSON alternative: {"dim": d, "embeddings": {"<id>": [..], ...}}.

EmbeddingDatabase load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingDatabase& db, const std::filesystem::path& path);
EmbeddingDatabase embeddings_from_json(const nlohmann::json& doc);
nlohmann::json embeddings_to_json(const EmbeddingDatabase& db);

}  // namespace peng
