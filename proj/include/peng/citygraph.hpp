#pragma once

// Two-class road-network graph: primary nodes at junctions, secondary nodes
// sampled along the roads between them. Angles are degrees, north-aligned and
// clockwise-positive (compass convention).

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace peng {

/// Metres per degree of latitude used by the equirectangular projection.
inline constexpr double kMetresPerDegree = 111320.0;

struct GeoCoordinate {
    double lat = 0.0;
    double lon = 0.0;

    friend bool operator==(const GeoCoordinate&, const GeoCoordinate&) = default;
};

struct LocalPoint {
    double east = 0.0;
    double north = 0.0;
};

/// Validates ranges and finiteness; throws Errc::schema with `what` as subject.
void validate_coordinate(const GeoCoordinate& p, const std::string& what);

/// Equirectangular projection about `origin`. Requires |p.lat - origin.lat| < 1.
LocalPoint to_local(const GeoCoordinate& origin, const GeoCoordinate& p);
GeoCoordinate from_local(const GeoCoordinate& origin, const LocalPoint& p);

/// Wraps into (-180, 180].
double wrap_degrees(double angle);

/// min(|a-b|, 360-|a-b|) in [0, 180].
double angular_distance(double a, double b);

/// North-aligned bearing a -> b in (-180, 180]. Computed in a local metric
/// frame centred on the mean latitude of the two points, which makes
/// bearing(a,b) and bearing(b,a) exactly opposite.
double bearing(const GeoCoordinate& a, const GeoCoordinate& b);

struct PrimaryNode {
    std::string id;
    GeoCoordinate location;
    double yaw = 0.0;
    std::vector<std::pair<std::string, double>> bearings;  // neighbour id, degrees
    std::optional<std::string> embedding_ref;
};

struct SecondaryNode {
    std::string id;
    std::string edge;
    GeoCoordinate location;
    double yaw = 0.0;
    int index_on_edge = 0;  // 1-based ordinal from endpoint a
};

struct Edge {
    std::string id;
    std::string a;
    std::string b;
    std::vector<std::string> secondaries;
    double length_m = 0.0;
    double bearing = 0.0;  // a -> b
};

/// Immutable after construction; every accessor is const and safe to call
/// from concurrent query workers.
class CityGraph {
public:
    /// Validates referential integrity, ranges and secondary ordering.
    /// Edge lengths and bearings are recomputed from node locations; a given
    /// `length_m` (non-zero) must agree with the polyline within 1%.
    /// Primary bearings are derived from the edges when none are supplied.
    static CityGraph build(GeoCoordinate frame_origin,
                           std::vector<PrimaryNode> primaries,
                           std::vector<SecondaryNode> secondaries,
                           std::vector<Edge> edges);

    const GeoCoordinate& frame_origin() const noexcept { return origin_; }

    const std::map<std::string, PrimaryNode>& primaries() const noexcept { return primaries_; }
    const std::map<std::string, SecondaryNode>& secondaries() const noexcept { return secondaries_; }
    const std::map<std::string, Edge>& edges() const noexcept { return edges_; }

    const PrimaryNode& primary(const std::string& id) const;
    const SecondaryNode& secondary(const std::string& id) const;
    const Edge& edge(const std::string& id) const;
    bool is_primary(const std::string& id) const { return primaries_.count(id) != 0; }
    bool is_secondary(const std::string& id) const { return secondaries_.count(id) != 0; }
    GeoCoordinate location(const std::string& node_id) const;

    /// Edge ids touching a primary node, sorted by id.
    const std::vector<std::string>& incident_edges(const std::string& primary_id) const;

    /// Node ids along the edge: a, secondaries in order, b. Index into this
    /// list is the "reference index" used by the pose pipeline.
    std::vector<std::string> reference_chain(const std::string& edge_id) const;

    /// Local-frame polyline (a, secondaries, b) and its cumulative arc lengths.
    std::span<const LocalPoint> polyline(const std::string& edge_id) const;
    std::span<const double> arc_lengths(const std::string& edge_id) const;

    LocalPoint to_local(const GeoCoordinate& p) const { return peng::to_local(origin_, p); }
    GeoCoordinate from_local(const LocalPoint& p) const { return peng::from_local(origin_, p); }

private:
    struct EdgeGeometry {
        std::vector<LocalPoint> points;
        std::vector<double> cumulative;
    };

    CityGraph() = default;

    const EdgeGeometry& geometry(const std::string& edge_id) const;

    GeoCoordinate origin_;
    std::map<std::string, PrimaryNode> primaries_;
    std::map<std::string, SecondaryNode> secondaries_;
    std::map<std::string, Edge> edges_;
    std::map<std::string, std::vector<std::string>> incident_;
    std::map<std::string, EdgeGeometry> geometry_;
};

CityGraph load_graph(const std::filesystem::path& path);
CityGraph graph_from_json(const nlohmann::json& doc);
nlohmann::json graph_to_json(const CityGraph& graph);
void save_graph(const CityGraph& graph, const std::filesystem::path& path);

/// Point at `fraction` of the arc length along a -> secondaries -> b.
GeoCoordinate interpolate_on_edge(const CityGraph& graph, const std::string& edge_id, double fraction);
LocalPoint interpolate_on_edge_local(const CityGraph& graph, const std::string& edge_id, double fraction);

/// Arc length of the closest polyline point to `p`.
double project_onto_edge(const CityGraph& graph, const std::string& edge_id, const LocalPoint& p);

/// Euclidean distance from `p` to the edge polyline, metres.
double distance_to_edge(const CityGraph& graph, const std::string& edge_id, const LocalPoint& p);

/// Yaw of the reference crop taken at `node_id` for processing `edge_id`:
/// a secondary node's own yaw, or the edge bearing (a -> b) at a primary
/// endpoint, whose panorama can be cropped in any direction.
double view_yaw(const CityGraph& graph, const std::string& node_id, const std::string& edge_id);

}  // namespace peng
