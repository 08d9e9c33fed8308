#pragma once

// Two-stage localisation: embedding retrieval of candidate junctions, then
// relative pose estimation along their compass-consistent edges with median
// attitude gating and confidence fusion.

#include <optional>
#include <string>
#include <vector>

#include "peng/citygraph.hpp"
#include "peng/embedding.hpp"
#include "peng/geometry.hpp"
#include "peng/pnp.hpp"

namespace peng {

class MatchBackend;
class PriorStore;

enum class FusionPolicy { product, sum };

struct PipelineConfig {
    double theta_c = 0.9;
    int k = 5;
    double theta_re = 3.0;  // degrees, against the weighted rotation error
    int theta_n = 5;        // candidate nodes processed at most
    double yaw_threshold = 22.5;
    Vec3 axis_weights = Vec3(1.0, 0.25, 1.0);
    RansacConfig ransac_offline = offline_ransac();
    RansacConfig ransac_online = online_ransac();
    FusionPolicy fusion = FusionPolicy::product;
    /// Refine against the neighbours of t_p; when false the edge position is
    /// the location of reference t_p itself.
    bool refine = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Query {
    std::string id;
    Embedding embedding;
    double compass_reading = 0.0;
};

struct EdgePoseResult {
    std::string edge;
    std::string candidate;
    int t_p = 0;                // index into the edge's reference chain
    PoseEstimate refined;       // estimate against reference t_p (or the heavier neighbour)
    Rotation attitude;          // query body -> world
    LocalPoint position;        // combined estimate before projection onto the edge
    double rotation_error = 0.0;
    double fraction = 0.0;
    int neighbours_used = 0;    // 0 means the t_p estimate was used alone
    bool degraded = false;
    double stage1_confidence = 0.0;
    double stage2_confidence = 0.0;
    double fused_score = 0.0;
};

struct EdgeFailure {
    std::string edge;
    std::string candidate;
    std::string reason;
};

struct LocalisationResult {
    std::string query;
    GeoCoordinate position;
    Rotation rotation;
    double heading = 0.0;
    std::string edge;
    double fraction = 0.0;
    double stage1_confidence = 0.0;
    double stage2_confidence = 0.0;
    double fused_score = 0.0;
    int edges_processed = 0;
    int candidates_processed = 0;
    bool early_stop = false;
    bool low_confidence = false;  // candidate set was empty; top node used
    std::vector<EdgePoseResult> per_edge;
    std::vector<EdgeFailure> failures;
    double stage2_seconds = 0.0;
};

/// Index of the best position estimate: most inliers, then lower RMS
/// (1e-6 px tolerance), then shorter translation. -1 when all are empty.
int select_position(const std::vector<std::optional<PoseEstimate>>& estimates);

/// Position and refined pose of a query on one edge. Throws
/// Errc::edge_failure when no reference yields a pose.
EdgePoseResult process_edge(const Query& query, const CityGraph& graph, const std::string& edge_id,
                            const PriorStore* store, const MatchBackend& backend, const PipelineConfig& cfg);

/// Stage-2 confidences 1 - minmax(rotation error) (1 when degenerate) and the
/// fused scores, in place.
void fuse_scores(std::vector<EdgePoseResult>& results, FusionPolicy policy);

/// Full two-stage localisation. `store` may be null (cold mode).
/// Throws Errc::no_estimate when every processed edge failed.
LocalisationResult localise(const Query& query, const CityGraph& graph, const EmbeddingDatabase& db,
                            const PriorStore* store, const MatchBackend& backend, const PipelineConfig& cfg);

struct QueryOutcome {
    std::string query;
    std::optional<LocalisationResult> result;
    std::string error;  // set when result is empty
};

/// Localises every query with `workers` threads; output sorted by query id.
std::vector<QueryOutcome> localise_all(const std::vector<Query>& queries, const CityGraph& graph,
                                       const EmbeddingDatabase& db, const PriorStore* store,
                                       const MatchBackend& backend, const PipelineConfig& cfg, int workers);

}  // namespace peng
