#pragma once

// Offline pose priors: per edge, an absolute attitude for every reference
// crop (a, secondaries..., b) recovered from relative poses between
// consecutive references, plus the edge's median attitude.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "peng/citygraph.hpp"
#include "peng/geometry.hpp"

namespace peng {

class MatchBackend;
struct PipelineConfig;

struct EdgePrior {
    std::vector<std::string> nodes;    // reference chain order
    std::vector<Rotation> attitudes;   // body -> world, one per node
    Rotation median;                   // median edge attitude
};

class PriorStore {
public:
    const std::map<std::string, EdgePrior>& edges() const noexcept { return edges_; }
    /// Edges whose priors could not be estimated, with the reason.
    const std::map<std::string, std::string>& failed() const noexcept { return failed_; }

    const EdgePrior* find(const std::string& edge_id) const;
    void set(const std::string& edge_id, EdgePrior prior);
    void mark_failed(const std::string& edge_id, std::string reason);

    /// Every stored chain must match the graph's reference chain.
    void validate_against(const CityGraph& graph) const;

    friend bool operator==(const PriorStore& a, const PriorStore& b);

private:
    std::map<std::string, EdgePrior> edges_;
    std::map<std::string, std::string> failed_;
};

/// Relative poses between consecutive references with the offline RANSAC
/// budget. Each pair gives both of its views a heading: the local-frame
/// bearing to the other node minus the baseline direction seen in the view's
/// own body frame. Interior references average their two observations.
PriorStore precompute_priors(const CityGraph& graph, const MatchBackend& backend, const PipelineConfig& cfg);

// Binary layout, little-endian:
//   "PPRI" | u32 version (1) | u32 edge_count | u32 failed_count |
//   edge_count x ( str edge | u32 n | n x ( str node | 4 x f64 wxyz ) | 4 x f64 median ) |
//   failed_count x ( str edge | str reason )
// with str = u32 length | bytes.
void save_priors(const PriorStore& store, const std::filesystem::path& path);
PriorStore load_priors(const std::filesystem::path& path);
nlohmann::json priors_to_json(const PriorStore& store);

}  // namespace peng
