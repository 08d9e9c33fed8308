#pragma once

// Localisation metrics, CDF files, record/metrics JSON and the four-row
// ablation harness.
//
// A query that produced no estimate has error +infinity: it stays in every
// denominator, is never within K metres, and is written as null.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "peng/citygraph.hpp"
#include "peng/pipeline.hpp"
#include "peng/synthcity.hpp"

namespace peng {

struct EvalRecord {
    std::string query;
    GeoCoordinate truth;
    std::optional<GeoCoordinate> estimate;
    double error_m = 0.0;  // +infinity without an estimate
    int edges_processed = 0;
    double fused_score = 0.0;
    bool low_confidence = false;
    std::string error;
};

struct MetricsSummary {
    double median_m = 0.0;
    double top1m = 0.0;  // percentages of all queries
    double top5m = 0.0;
    double top25m = 0.0;
    /// (error, fraction of queries with error <= it), one entry per distinct
    /// finite error. Ends at the fraction of queries with an estimate.
    std::vector<std::pair<double, double>> cdf;

    friend bool operator==(const MetricsSummary&, const MetricsSummary&) = default;
};

/// Throws Errc::invalid_argument on empty input. Even counts average the two
/// middle errors.
MetricsSummary compute_metrics(std::span<const double> errors);
MetricsSummary compute_metrics(std::span<const EvalRecord> records);

/// Percentage of errors <= k metres.
double top_k_percent(std::span<const double> errors, double k);

/// CSV with header "error_m,cdf".
void export_cdf(const MetricsSummary& summary, const std::filesystem::path& path);
std::string cdf_to_csv(const MetricsSummary& summary);

/// Rebuilds the error multiset from a CDF (smallest query count consistent
/// with every cumulative fraction) and summarises it.
MetricsSummary import_cdf(const std::filesystem::path& path);
MetricsSummary summary_from_csv(const std::string& csv);

/// Error between truth and estimate in the graph's local frame.
double position_error(const CityGraph& graph, const GeoCoordinate& truth, const GeoCoordinate& estimate);

std::vector<EvalRecord> make_records(const CityGraph& graph, const std::vector<QueryScenario>& queries,
                                     const std::vector<QueryOutcome>& outcomes);

nlohmann::json records_to_json(const std::vector<EvalRecord>& records);
std::vector<EvalRecord> records_from_json(const nlohmann::json& doc);
nlohmann::json metrics_to_json(const MetricsSummary& summary, std::span<const EvalRecord> records);

std::vector<Query> pipeline_queries(const std::vector<QueryScenario>& queries);

/// Stage-1-only estimate: the location of the top-ranked primary node.
GeoCoordinate stage1_position(const Query& query, const CityGraph& graph, const EmbeddingDatabase& db);

struct AblationRow {
    std::string name;
    MetricsSummary summary;
    std::vector<EvalRecord> records;
    double stage2_seconds = 0.0;  // summed over queries
    int ransac_iterations = 0;
};

struct AblationTable {
    std::uint64_t scenario_hash = 0;
    std::uint64_t seed = 0;
    std::vector<AblationRow> rows;  // cvgl, 1-pose, 2-pose, priors
};

/// Hash of everything a row consumes: city, queries and their embeddings.
std::uint64_t scenario_hash(const SyntheticCity& city, const std::vector<QueryScenario>& queries);

AblationTable run_ablation(const SyntheticCity& city, const std::vector<QueryScenario>& queries,
                           const PipelineConfig& cfg, int workers);

nlohmann::json ablation_to_json(const AblationTable& table);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace peng
