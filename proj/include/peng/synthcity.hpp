#pragma once

// Ground-truth simulator: road graph, reference camera views, a 3D landmark
// field beside the roads, embeddings with controlled retrieval confusion and
// query scenarios. Everything is a deterministic function of SynthConfig.
//
// All reference views on an edge face the edge's capture direction a -> b;
// primary endpoints contribute one crop per incident edge. Queries are placed
// on an edge facing a -> b and their retrieval ground truth is endpoint a.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "peng/citygraph.hpp"
#include "peng/embedding.hpp"
#include "peng/geometry.hpp"

namespace peng {

struct MatchQuality {
    double pixel_noise_sigma = 0.0;
    double outlier_rate = 0.0;
    int min_shared_landmarks = 10;
    int max_pairs = 100;  // seeded subsample above this many shared landmarks

    void validate() const;
};

enum class Topology { grid, delaunay };

struct SynthConfig {
    Topology topology = Topology::grid;
    int grid_rows = 4;
    int grid_cols = 4;
    double edge_length_mean = 116.0;
    double edge_length_sigma = 5.0;  // junction position jitter, metres
    double secondary_spacing = 9.83;
    double landmark_density = 1.5;  // per metre of road, both sides
    double landmark_lateral_sigma = 4.0;
    double road_half_width = 6.0;
    double landmark_max_height = 10.0;
    double camera_height = 2.5;
    double max_view_range = 40.0;
    double reference_hfov = 90.0;
    int image_width = 512;
    int image_height = 384;

    // Yaw perturbations, degrees.
    double reference_yaw_jitter = 0.0;  // recorded reference yaw vs. edge bearing
    double yaw_metadata_noise = 0.0;    // true camera yaw vs. recorded yaw
    double query_yaw_jitter = 0.0;
    double compass_noise_sigma = 0.0;

    double query_lateral_sigma = 0.0;  // metres
    double query_hfov = 90.0;
    int query_count = 200;

    std::size_t embedding_dim = kDefaultEmbeddingDim;
    double embedding_margin = 0.2;
    double embedding_noise_sigma = 0.0;

    MatchQuality match_quality;
    GeoCoordinate origin{40.75, -74.0};
    std::uint64_t seed = 1;

    void validate() const;
};

struct QueryScenario {
    std::string id;
    std::string edge;
    double fraction = 0.0;
    double hfov = 90.0;
    Embedding embedding;
    double compass_reading = 0.0;

    // Ground truth.
    std::string true_node;
    double lateral_offset = 0.0;
    double yaw = 0.0;  // compass heading
    GeoCoordinate location;
};

class SyntheticCity {
public:
    SyntheticCity(SynthConfig cfg, CityGraph graph, std::vector<Vec3> landmarks,
                  std::map<std::string, double> yaw_error, EmbeddingDatabase db);

    const SynthConfig& config() const noexcept { return cfg_; }
    const CityGraph& graph() const noexcept { return graph_; }
    const std::vector<Vec3>& landmarks() const noexcept { return landmarks_; }
    const std::map<std::string, double>& yaw_error() const noexcept { return yaw_error_; }
    const EmbeddingDatabase& db() const noexcept { return db_; }

    CameraIntrinsics reference_intrinsics() const;

    /// Camera position of a graph node (local frame, camera height applied).
    Vec3 node_position(const std::string& node_id) const;

    /// Ground-truth world -> camera pose of the crop at `node_id` for `edge_id`.
    Pose reference_pose(const std::string& node_id, const std::string& edge_id) const;

    /// Landmark indices within `radius` of `p` (horizontal), ascending.
    std::vector<int> landmarks_near(const Vec3& p, double radius) const;

    /// In front, within the view range and inside the image.
    bool visible(const Pose& pose, const CameraIntrinsics& K, const Vec3& x) const;

private:
    std::pair<long, long> cell_of(const Vec3& p) const;

    SynthConfig cfg_;
    CityGraph graph_;
    std::vector<Vec3> landmarks_;
    std::map<std::string, double> yaw_error_;
    EmbeddingDatabase db_;
    std::map<std::pair<long, long>, std::vector<int>> cells_;
};

SyntheticCity generate_city(const SynthConfig& cfg);

/// One random unit vector per primary node.
EmbeddingDatabase generate_reference_embeddings(const CityGraph& graph, const SynthConfig& cfg);

/// Embedding for a query whose true node is `node`: the unit vector
/// normalize(r + alpha * base) with r orthogonal to the base, alpha chosen so
/// the cosine advantage over the best other node equals `margin`, then
/// isotropic gaussian noise of total standard deviation `noise_sigma` and
/// renormalisation.
Embedding make_query_embedding(const EmbeddingDatabase& db, const std::string& node, double margin,
                               double noise_sigma, std::uint64_t seed);

struct QueryOptions {
    std::optional<double> fixed_fraction;
    std::optional<std::string> fixed_edge;
};

std::vector<QueryScenario> generate_queries(const SyntheticCity& city, int n, double hfov, std::uint64_t seed,
                                            const QueryOptions& opts = {});

/// Truth attitude / pose / intrinsics of a query.
Rotation query_attitude(const QueryScenario& q);
Vec3 query_position(const SyntheticCity& city, const QueryScenario& q);
Pose query_pose(const SyntheticCity& city, const QueryScenario& q);
CameraIntrinsics query_intrinsics(const SyntheticCity& city, const QueryScenario& q);

// --- persistence ---------------------------------------------------------------
//
// A scenario file holds the synthesis config, landmarks, per-node yaw errors
// and the queries without their embeddings (those live in an embedding file).

nlohmann::json synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& doc);

nlohmann::json scenario_to_json(const SyntheticCity& city, const std::vector<QueryScenario>& queries);

struct LoadedScenario {
    SyntheticCity city;
    std::vector<QueryScenario> queries;
};

/// `query_embeddings` supplies each query's embedding by id.
LoadedScenario scenario_from_json(const nlohmann::json& doc, CityGraph graph, EmbeddingDatabase db,
                                  const EmbeddingDatabase& query_embeddings);

EmbeddingDatabase query_embedding_table(const std::vector<QueryScenario>& queries);

}  // namespace peng
