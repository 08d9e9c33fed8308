#include "peng/citygraph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

#include "peng/error.hpp"

namespace peng {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

bool finite(double v) { return std::isfinite(v); }

void check_angle(double value, const std::string& what, const std::string& subject) {
    if (!finite(value) || value < -180.0 || value > 180.0) {
        throw Error(Errc::schema, what + " out of [-180, 180] on " + subject, subject);
    }
}

double segment_length(const LocalPoint& p, const LocalPoint& q) {
    return std::hypot(q.east - p.east, q.north - p.north);
}

}  // namespace

void validate_coordinate(const GeoCoordinate& p, const std::string& what) {
    if (!finite(p.lat) || !finite(p.lon) || p.lat < -90.0 || p.lat > 90.0 || p.lon < -180.0 ||
        p.lon > 180.0) {
        throw Error(Errc::schema, "coordinate out of range on " + what, what);
    }
}

LocalPoint to_local(const GeoCoordinate& origin, const GeoCoordinate& p) {
    if (!(std::abs(p.lat - origin.lat) < 1.0)) {
        throw Error(Errc::out_of_region, "point is more than 1 degree of latitude from the frame origin");
    }
    const double north = (p.lat - origin.lat) * kMetresPerDegree;
    const double east = (p.lon - origin.lon) * kMetresPerDegree * std::cos(origin.lat * kDegToRad);
    return {east, north};
}

GeoCoordinate from_local(const GeoCoordinate& origin, const LocalPoint& p) {
    const double lat = origin.lat + p.north / kMetresPerDegree;
    const double lon = origin.lon + p.east / (kMetresPerDegree * std::cos(origin.lat * kDegToRad));
    return {lat, lon};
}

double wrap_degrees(double angle) {
    double wrapped = std::fmod(angle, 360.0);
    if (wrapped <= -180.0) wrapped += 360.0;
    if (wrapped > 180.0) wrapped -= 360.0;
    return wrapped;
}

double angular_distance(double a, double b) {
    const double d = std::abs(std::fmod(a - b, 360.0));
    return std::min(d, 360.0 - d);
}

double bearing(const GeoCoordinate& a, const GeoCoordinate& b) {
    const double mean_lat = 0.5 * (a.lat + b.lat);
    const double north = (b.lat - a.lat) * kMetresPerDegree;
    const double east = (b.lon - a.lon) * kMetresPerDegree * std::cos(mean_lat * kDegToRad);
    if (north == 0.0 && east == 0.0) {
        throw Error(Errc::degenerate_geometry, "bearing between coincident points");
    }
    const double deg = std::atan2(east, north) / kDegToRad;
    return deg == -180.0 ? 180.0 : deg;
}

CityGraph CityGraph::build(GeoCoordinate frame_origin,
                           std::vector<PrimaryNode> primaries,
                           std::vector<SecondaryNode> secondaries,
                           std::vector<Edge> edges) {
    CityGraph g;
    validate_coordinate(frame_origin, "frame_origin");
    g.origin_ = frame_origin;

    for (auto& p : primaries) {
        if (p.id.empty()) throw Error(Errc::schema, "primary node with empty id");
        validate_coordinate(p.location, p.id);
        check_angle(p.yaw, "yaw", p.id);
        if (g.primaries_.count(p.id) || g.secondaries_.count(p.id)) {
            throw Error(Errc::schema, "duplicate node id " + p.id, p.id);
        }
        g.primaries_.emplace(p.id, std::move(p));
    }
    for (auto& s : secondaries) {
        if (s.id.empty()) throw Error(Errc::schema, "secondary node with empty id");
        validate_coordinate(s.location, s.id);
        check_angle(s.yaw, "yaw", s.id);
        if (g.primaries_.count(s.id) || g.secondaries_.count(s.id)) {
            throw Error(Errc::schema, "duplicate node id " + s.id, s.id);
        }
        g.secondaries_.emplace(s.id, std::move(s));
    }

    std::set<std::string> claimed;
    for (auto& e : edges) {
        if (e.id.empty()) throw Error(Errc::schema, "edge with empty id");
        if (g.edges_.count(e.id)) throw Error(Errc::schema, "duplicate edge id " + e.id, e.id);
        for (const auto* end : {&e.a, &e.b}) {
            if (!g.primaries_.count(*end)) {
                throw Error(Errc::dangling_reference,
                            "edge " + e.id + " references missing node \"" + *end + "\"", *end);
            }
        }
        if (e.a == e.b) throw Error(Errc::schema, "edge " + e.id + " is a self-loop", e.id);

        EdgeGeometry geom;
        geom.points.push_back(g.to_local(g.primaries_.at(e.a).location));
        int previous_index = 0;
        double previous_distance = 0.0;
        for (const auto& sid : e.secondaries) {
            auto it = g.secondaries_.find(sid);
            if (it == g.secondaries_.end()) {
                throw Error(Errc::dangling_reference,
                            "edge " + e.id + " references missing node \"" + sid + "\"", sid);
            }
            if (it->second.edge != e.id) {
                throw Error(Errc::dangling_reference,
                            "secondary " + sid + " claims edge \"" + it->second.edge + "\" but is listed on " + e.id,
                            sid);
            }
            if (!claimed.insert(sid).second) {
                throw Error(Errc::schema, "secondary " + sid + " listed twice", sid);
            }
            const LocalPoint pt = g.to_local(it->second.location);
            const double distance = segment_length(geom.points.front(), pt);
            if (it->second.index_on_edge <= previous_index || distance <= previous_distance) {
                throw Error(Errc::unordered_secondaries,
                            "secondaries of edge " + e.id + " are not ordered from endpoint a (at " + sid + ")",
                            e.id);
            }
            previous_index = it->second.index_on_edge;
            previous_distance = distance;
            geom.points.push_back(pt);
        }
        geom.points.push_back(g.to_local(g.primaries_.at(e.b).location));

        geom.cumulative.assign(geom.points.size(), 0.0);
        for (std::size_t i = 1; i < geom.points.size(); ++i) {
            geom.cumulative[i] = geom.cumulative[i - 1] + segment_length(geom.points[i - 1], geom.points[i]);
        }
        const double length = geom.cumulative.back();
        if (!(length > 0.0)) throw Error(Errc::schema, "edge " + e.id + " has zero length", e.id);
        if (e.length_m != 0.0 && std::abs(e.length_m - length) > 0.01 * length) {
            throw Error(Errc::schema,
                        "edge " + e.id + " length_m disagrees with node locations by more than 1%", e.id);
        }
        e.length_m = length;
        e.bearing = bearing(g.primaries_.at(e.a).location, g.primaries_.at(e.b).location);

        g.incident_[e.a].push_back(e.id);
        g.incident_[e.b].push_back(e.id);
        g.geometry_.emplace(e.id, std::move(geom));
        g.edges_.emplace(e.id, std::move(e));
    }

    for (const auto& [sid, s] : g.secondaries_) {
        if (!g.edges_.count(s.edge)) {
            throw Error(Errc::dangling_reference,
                        "secondary " + sid + " references missing edge \"" + s.edge + "\"", s.edge);
        }
        if (!claimed.count(sid)) {
            throw Error(Errc::dangling_reference,
                        "secondary " + sid + " is not listed on edge " + s.edge, sid);
        }
    }

    for (auto& [pid, p] : g.primaries_) {
        auto& inc = g.incident_[pid];
        std::sort(inc.begin(), inc.end());
        std::set<std::string> neighbours;
        for (const auto& eid : inc) {
            const Edge& e = g.edges_.at(eid);
            neighbours.insert(e.a == pid ? e.b : e.a);
        }
        if (p.bearings.empty()) {
            for (const auto& n : neighbours) {
                p.bearings.emplace_back(n, bearing(p.location, g.primaries_.at(n).location));
            }
        } else {
            for (const auto& [n, value] : p.bearings) {
                if (!g.primaries_.count(n)) {
                    throw Error(Errc::dangling_reference,
                                "bearing on " + pid + " references missing node \"" + n + "\"", n);
                }
                if (!neighbours.count(n)) {
                    throw Error(Errc::dangling_reference,
                                "bearing on " + pid + " references non-neighbour \"" + n + "\"", n);
                }
                check_angle(value, "bearing", pid);
            }
        }
    }
    return g;
}

const PrimaryNode& CityGraph::primary(const std::string& id) const {
    auto it = primaries_.find(id);
    if (it == primaries_.end()) throw Error(Errc::unknown_id, "unknown primary node " + id, id);
    return it->second;
}

const SecondaryNode& CityGraph::secondary(const std::string& id) const {
    auto it = secondaries_.find(id);
    if (it == secondaries_.end()) throw Error(Errc::unknown_id, "unknown secondary node " + id, id);
    return it->second;
}

const Edge& CityGraph::edge(const std::string& id) const {
    auto it = edges_.find(id);
    if (it == edges_.end()) throw Error(Errc::unknown_id, "unknown edge " + id, id);
    return it->second;
}

GeoCoordinate CityGraph::location(const std::string& node_id) const {
    if (auto it = primaries_.find(node_id); it != primaries_.end()) return it->second.location;
    if (auto it = secondaries_.find(node_id); it != secondaries_.end()) return it->second.location;
    throw Error(Errc::unknown_id, "unknown node " + node_id, node_id);
}

const std::vector<std::string>& CityGraph::incident_edges(const std::string& primary_id) const {
    primary(primary_id);
    static const std::vector<std::string> none;
    auto it = incident_.find(primary_id);
    return it == incident_.end() ? none : it->second;
}

std::vector<std::string> CityGraph::reference_chain(const std::string& edge_id) const {
    const Edge& e = edge(edge_id);
    std::vector<std::string> chain;
    chain.reserve(e.secondaries.size() + 2);
    chain.push_back(e.a);
    chain.insert(chain.end(), e.secondaries.begin(), e.secondaries.end());
    chain.push_back(e.b);
    return chain;
}

const CityGraph::EdgeGeometry& CityGraph::geometry(const std::string& edge_id) const {
    auto it = geometry_.find(edge_id);
    if (it == geometry_.end()) throw Error(Errc::unknown_id, "unknown edge " + edge_id, edge_id);
    return it->second;
}

std::span<const LocalPoint> CityGraph::polyline(const std::string& edge_id) const {
    return geometry(edge_id).points;
}

std::span<const double> CityGraph::arc_lengths(const std::string& edge_id) const {
    return geometry(edge_id).cumulative;
}

// --- JSON -------------------------------------------------------------------

namespace {

using nlohmann::json;

const json& require(const json& obj, const char* key, const std::string& subject) {
    if (!obj.is_object() || !obj.contains(key)) {
        throw Error(Errc::schema, std::string("missing field \"") + key + "\" on " + subject, subject);
    }
    return obj.at(key);
}

double number(const json& obj, const char* key, const std::string& subject) {
    const json& v = require(obj, key, subject);
    if (!v.is_number()) {
        throw Error(Errc::schema, std::string("field \"") + key + "\" on " + subject + " is not a number", subject);
    }
    return v.get<double>();
}

std::string text(const json& obj, const char* key, const std::string& subject) {
    const json& v = require(obj, key, subject);
    if (!v.is_string()) {
        throw Error(Errc::schema, std::string("field \"") + key + "\" on " + subject + " is not a string", subject);
    }
    return v.get<std::string>();
}

GeoCoordinate coordinate(const json& obj, const std::string& subject) {
    return {number(obj, "lat", subject), number(obj, "lon", subject)};
}

json coordinate_json(const GeoCoordinate& c) { return json{{"lat", c.lat}, {"lon", c.lon}}; }

}  // namespace

CityGraph graph_from_json(const json& doc) {
    if (!doc.is_object()) throw Error(Errc::schema, "graph document is not an object");
    const GeoCoordinate origin = coordinate(require(doc, "frame_origin", "graph"), "frame_origin");

    std::vector<PrimaryNode> primaries;
    for (const auto& item : require(doc, "primaries", "graph")) {
        PrimaryNode p;
        p.id = text(item, "id", "primary");
        p.location = coordinate(require(item, "location", p.id), p.id);
        p.yaw = number(item, "yaw", p.id);
        if (item.contains("bearings")) {
            for (const auto& b : item.at("bearings")) {
                p.bearings.emplace_back(text(b, "neighbour", p.id), number(b, "bearing", p.id));
            }
        }
        if (item.contains("embedding_ref") && !item.at("embedding_ref").is_null()) {
            p.embedding_ref = text(item, "embedding_ref", p.id);
        }
        primaries.push_back(std::move(p));
    }

    std::vector<SecondaryNode> secondaries;
    if (doc.contains("secondaries")) {
        for (const auto& item : doc.at("secondaries")) {
            SecondaryNode s;
            s.id = text(item, "id", "secondary");
            s.edge = text(item, "edge", s.id);
            s.location = coordinate(require(item, "location", s.id), s.id);
            s.yaw = number(item, "yaw", s.id);
            const json& idx = require(item, "index_on_edge", s.id);
            if (!idx.is_number_integer()) throw Error(Errc::schema, "index_on_edge is not an integer on " + s.id, s.id);
            s.index_on_edge = idx.get<int>();
            secondaries.push_back(std::move(s));
        }
    }

    std::vector<Edge> edges;
    for (const auto& item : require(doc, "edges", "graph")) {
        Edge e;
        e.id = text(item, "id", "edge");
        e.a = text(item, "a", e.id);
        e.b = text(item, "b", e.id);
        if (item.contains("secondaries")) {
            for (const auto& sid : item.at("secondaries")) {
                if (!sid.is_string()) throw Error(Errc::schema, "secondary id is not a string on " + e.id, e.id);
                e.secondaries.push_back(sid.get<std::string>());
            }
        }
        if (item.contains("length_m")) e.length_m = number(item, "length_m", e.id);
        edges.push_back(std::move(e));
    }
    return CityGraph::build(origin, std::move(primaries), std::move(secondaries), std::move(edges));
}

json graph_to_json(const CityGraph& graph) {
    json doc;
    doc["frame_origin"] = coordinate_json(graph.frame_origin());
    json primaries = json::array();
    for (const auto& [id, p] : graph.primaries()) {
        json bearings = json::array();
        for (const auto& [n, b] : p.bearings) bearings.push_back({{"neighbour", n}, {"bearing", b}});
        json item{{"id", id}, {"location", coordinate_json(p.location)}, {"yaw", p.yaw}, {"bearings", bearings}};
        if (p.embedding_ref) item["embedding_ref"] = *p.embedding_ref;
        primaries.push_back(std::move(item));
    }
    json secondaries = json::array();
    for (const auto& [id, s] : graph.secondaries()) {
        secondaries.push_back({{"id", id},
                               {"edge", s.edge},
                               {"location", coordinate_json(s.location)},
                               {"yaw", s.yaw},
                               {"index_on_edge", s.index_on_edge}});
    }
    json edges = json::array();
    for (const auto& [id, e] : graph.edges()) {
        edges.push_back({{"id", id}, {"a", e.a}, {"b", e.b}, {"secondaries", e.secondaries}, {"length_m", e.length_m}});
    }
    doc["primaries"] = std::move(primaries);
    doc["secondaries"] = std::move(secondaries);
    doc["edges"] = std::move(edges);
    return doc;
}

CityGraph load_graph(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io, "cannot open graph file " + path.string(), path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& ex) {
        throw Error(Errc::schema, std::string("malformed graph JSON: ") + ex.what(), path.string());
    }
    return graph_from_json(doc);
}

void save_graph(const CityGraph& graph, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(Errc::io, "cannot write graph file " + path.string(), path.string());
    out << graph_to_json(graph).dump(1) << '\n';
}

// --- edge geometry ----------------------------------------------------------

LocalPoint interpolate_on_edge_local(const CityGraph& graph, const std::string& edge_id, double fraction) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw Error(Errc::invalid_argument, "fraction must lie in [0, 1]", edge_id);
    }
    const auto points = graph.polyline(edge_id);
    const auto cumulative = graph.arc_lengths(edge_id);
    if (fraction == 0.0) return points.front();
    if (fraction == 1.0) return points.back();
    const double s = fraction * cumulative.back();
    auto upper = std::upper_bound(cumulative.begin(), cumulative.end(), s);
    std::size_t i = static_cast<std::size_t>(std::distance(cumulative.begin(), upper));
    i = std::clamp<std::size_t>(i, 1, points.size() - 1);
    const double seg = cumulative[i] - cumulative[i - 1];
    const double t = seg > 0.0 ? (s - cumulative[i - 1]) / seg : 0.0;
    const LocalPoint& p = points[i - 1];
    const LocalPoint& q = points[i];
    return {p.east + t * (q.east - p.east), p.north + t * (q.north - p.north)};
}

GeoCoordinate interpolate_on_edge(const CityGraph& graph, const std::string& edge_id, double fraction) {
    const auto& e = graph.edge(edge_id);
    if (fraction == 0.0) return graph.primary(e.a).location;
    if (fraction == 1.0) return graph.primary(e.b).location;
    return graph.from_local(interpolate_on_edge_local(graph, edge_id, fraction));
}

namespace {

struct Closest {
    double arc = 0.0;
    double distance = 0.0;
};

Closest closest_on_edge(const CityGraph& graph, const std::string& edge_id, const LocalPoint& p) {
    const auto points = graph.polyline(edge_id);
    const auto cumulative = graph.arc_lengths(edge_id);
    Closest best{0.0, std::numeric_limits<double>::infinity()};
    for (std::size_t i = 1; i < points.size(); ++i) {
        const double dx = points[i].east - points[i - 1].east;
        const double dy = points[i].north - points[i - 1].north;
        const double len2 = dx * dx + dy * dy;
        double t = 0.0;
        if (len2 > 0.0) {
            t = ((p.east - points[i - 1].east) * dx + (p.north - points[i - 1].north) * dy) / len2;
            t = std::clamp(t, 0.0, 1.0);
        }
        const double ex = points[i - 1].east + t * dx - p.east;
        const double ey = points[i - 1].north + t * dy - p.north;
        const double d = std::hypot(ex, ey);
        if (d < best.distance) best = {cumulative[i - 1] + t * std::sqrt(len2), d};
    }
    return best;
}

}  // namespace

double project_onto_edge(const CityGraph& graph, const std::string& edge_id, const LocalPoint& p) {
    return closest_on_edge(graph, edge_id, p).arc;
}

double distance_to_edge(const CityGraph& graph, const std::string& edge_id, const LocalPoint& p) {
    return closest_on_edge(graph, edge_id, p).distance;
}

double view_yaw(const CityGraph& graph, const std::string& node_id, const std::string& edge_id) {
    const Edge& e = graph.edge(edge_id);
    if (graph.is_secondary(node_id)) {
        const auto& s = graph.secondary(node_id);
        if (s.edge != edge_id) {
            throw Error(Errc::invalid_argument, "secondary " + node_id + " is not on edge " + edge_id, node_id);
        }
        return s.yaw;
    }
    if (node_id != e.a && node_id != e.b) {
        throw Error(Errc::invalid_argument, "node " + node_id + " is not an endpoint of " + edge_id, node_id);
    }
    return e.bearing;
}

}  // namespace peng
