#include "peng/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "peng/error.hpp"
#include "peng/match_backend.hpp"
#include "peng/priors.hpp"
#include "peng/rng.hpp"

namespace peng {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json geo_json(const GeoCoordinate& g) { return {{"lat", g.lat}, {"lon", g.lon}}; }

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double top_k_percent(std::span<const double> errors, double k) {
    if (errors.empty()) return 0.0;
    const auto n = std::count_if(errors.begin(), errors.end(), [k](double e) { return e <= k; });
    return 100.0 * static_cast<double>(n) / static_cast<double>(errors.size());
}

MetricsSummary compute_metrics(std::span<const double> errors) {
    if (errors.empty()) throw Error(Errc::invalid_argument, "no records to summarise");
    std::vector<double> e(errors.begin(), errors.end());
    for (double v : e) {
        if (std::isnan(v) || v < 0.0) throw Error(Errc::invalid_argument, "errors must be non-negative");
    }
    std::sort(e.begin(), e.end());
    const std::size_t n = e.size();
    MetricsSummary s;
    s.median_m = n % 2 == 1 ? e[n / 2] : (e[n / 2 - 1] + e[n / 2]) / 2.0;
    s.top1m = top_k_percent(e, 1.0);
    s.top5m = top_k_percent(e, 5.0);
    s.top25m = top_k_percent(e, 25.0);
    for (std::size_t i = 0; i < n && std::isfinite(e[i]); ++i) {
        if (i + 1 < n && e[i + 1] == e[i]) continue;
        s.cdf.emplace_back(e[i], static_cast<double>(i + 1) / static_cast<double>(n));
    }
    return s;
}

MetricsSummary compute_metrics(std::span<const EvalRecord> records) {
    std::vector<double> errors;
    errors.reserve(records.size());
    for (const auto& r : records) errors.push_back(r.error_m);
    return compute_metrics(errors);
}

std::string cdf_to_csv(const MetricsSummary& summary) {
    std::string out = "error_m,cdf\n";
    for (const auto& [e, c] : summary.cdf) out += format_double(e) + "," + format_double(c) + "\n";
    return out;
}

void export_cdf(const MetricsSummary& summary, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write CDF file", path.string());
    out << cdf_to_csv(summary);
    if (!out) throw Error(Errc::io, "failed writing CDF file", path.string());
}

MetricsSummary summary_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != "error_m,cdf") throw Error(Errc::schema, "CDF file needs header error_m,cdf");
    std::vector<std::pair<double, double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw Error(Errc::schema, "bad CDF row: " + line);
        double e = 0.0;
        double c = 0.0;
        const auto r1 = std::from_chars(line.data(), line.data() + comma, e);
        const auto r2 = std::from_chars(line.data() + comma + 1, line.data() + line.size(), c);
        if (r1.ec != std::errc() || r2.ec != std::errc()) throw Error(Errc::schema, "bad CDF row: " + line);
        if (!rows.empty() && (e <= rows.back().first || c < rows.back().second)) {
            throw Error(Errc::schema, "CDF rows must be increasing: " + line);
        }
        if (!(c > 0.0 && c <= 1.0)) throw Error(Errc::schema, "CDF value out of range: " + line);
        rows.emplace_back(e, c);
    }
    if (rows.empty()) {
        // Every query failed; one infinite error reproduces the summary.
        const double inf[] = {kInf};
        return compute_metrics(inf);
    }

    constexpr std::int64_t kMaxCount = 10'000'000;
    std::int64_t count = 0;
    for (std::int64_t n = 1; n <= kMaxCount && count == 0; ++n) {
        bool ok = true;
        for (const auto& [e, c] : rows) {
            const double x = c * static_cast<double>(n);
            if (std::abs(x - std::round(x)) > 1e-6) {
                ok = false;
                break;
            }
        }
        if (ok) count = n;
    }
    if (count == 0) throw Error(Errc::schema, "CDF fractions do not share a query count");

    std::vector<double> errors;
    std::int64_t seen = 0;
    for (const auto& [e, c] : rows) {
        const auto upto = static_cast<std::int64_t>(std::llround(c * static_cast<double>(count)));
        errors.insert(errors.end(), static_cast<std::size_t>(upto - seen), e);
        seen = upto;
    }
    errors.insert(errors.end(), static_cast<std::size_t>(count - seen), kInf);
    return compute_metrics(errors);
}

MetricsSummary import_cdf(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open CDF file", path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return summary_from_csv(text.str());
}

double position_error(const CityGraph& graph, const GeoCoordinate& truth, const GeoCoordinate& estimate) {
    const LocalPoint a = graph.to_local(truth);
    const LocalPoint b = graph.to_local(estimate);
    return std::hypot(a.east - b.east, a.north - b.north);
}

std::vector<EvalRecord> make_records(const CityGraph& graph, const std::vector<QueryScenario>& queries,
                                     const std::vector<QueryOutcome>& outcomes) {
    std::map<std::string, const QueryScenario*> truth;
    for (const auto& q : queries) truth[q.id] = &q;
    std::vector<EvalRecord> out;
    out.reserve(outcomes.size());
    for (const auto& o : outcomes) {
        const auto it = truth.find(o.query);
        if (it == truth.end()) throw Error(Errc::unknown_id, "outcome for unknown query", o.query);
        EvalRecord r;
        r.query = o.query;
        r.truth = it->second->location;
        if (o.result) {
            r.estimate = o.result->position;
            r.error_m = position_error(graph, r.truth, *r.estimate);
            r.edges_processed = o.result->edges_processed;
            r.fused_score = o.result->fused_score;
            r.low_confidence = o.result->low_confidence;
        } else {
            r.error_m = kInf;
            r.error = o.error;
        }
        out.push_back(std::move(r));
    }
    std::sort(out.begin(), out.end(), [](const EvalRecord& a, const EvalRecord& b) { return a.query < b.query; });
    return out;
}

nlohmann::json records_to_json(const std::vector<EvalRecord>& records) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records) {
        nlohmann::json j{{"query", r.query},
                         {"true", geo_json(r.truth)},
                         {"estimated", r.estimate ? geo_json(*r.estimate) : nlohmann::json(nullptr)},
                         {"error_m", number_or_null(r.error_m)},
                         {"edges_processed", r.edges_processed},
                         {"fused_score", r.fused_score},
                         {"low_confidence", r.low_confidence}};
        if (!r.error.empty()) j["error"] = r.error;
        arr.push_back(std::move(j));
    }
    return arr;
}

std::vector<EvalRecord> records_from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) throw Error(Errc::schema, "records file must be a JSON array");
    std::vector<EvalRecord> out;
    try {
        for (const auto& j : doc) {
            EvalRecord r;
            r.query = j.at("query").get<std::string>();
            r.truth = {j.at("true").at("lat").get<double>(), j.at("true").at("lon").get<double>()};
            if (!j.at("estimated").is_null()) {
                r.estimate = GeoCoordinate{j["estimated"].at("lat").get<double>(), j["estimated"].at("lon").get<double>()};
            }
            r.error_m = j.at("error_m").is_null() ? kInf : j["error_m"].get<double>();
            if (!(r.error_m >= 0.0)) throw Error(Errc::schema, "negative error", r.query);
            if (r.estimate.has_value() != std::isfinite(r.error_m)) {
                throw Error(Errc::schema, "error_m must be null exactly when there is no estimate", r.query);
            }
            r.edges_processed = j.value("edges_processed", 0);
            r.fused_score = j.value("fused_score", 0.0);
            r.low_confidence = j.value("low_confidence", false);
            r.error = j.value("error", std::string());
            out.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw Error(Errc::schema, std::string("bad records file: ") + ex.what());
    }
    return out;
}

nlohmann::json metrics_to_json(const MetricsSummary& s, std::span<const EvalRecord> records) {
    nlohmann::json cdf = nlohmann::json::array();
    for (const auto& [e, c] : s.cdf) cdf.push_back({e, c});
    const auto failures = std::count_if(records.begin(), records.end(), [](const EvalRecord& r) { return !r.estimate; });
    return {{"queries", records.size()},
            {"failures", failures},
            {"median_m", number_or_null(s.median_m)},
            {"top1m", s.top1m},
            {"top5m", s.top5m},
            {"top25m", s.top25m},
            {"cdf", std::move(cdf)}};
}

std::vector<Query> pipeline_queries(const std::vector<QueryScenario>& queries) {
    std::vector<Query> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back({q.id, q.embedding, q.compass_reading});
    return out;
}

GeoCoordinate stage1_position(const Query& query, const CityGraph& graph, const EmbeddingDatabase& db) {
    return graph.location(score_candidates(query.embedding, db).front().node);
}

std::uint64_t scenario_hash(const SyntheticCity& city, const std::vector<QueryScenario>& queries) {
    std::string blob = graph_to_json(city.graph()).dump();
    blob += scenario_to_json(city, queries).dump();
    for (const auto& q : queries) {
        blob.append(reinterpret_cast<const char*>(q.embedding.values.data()), q.embedding.values.size() * sizeof(float));
    }
    const auto& data = city.db().data();
    blob.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
    return fnv1a64(blob);
}

AblationTable run_ablation(const SyntheticCity& city, const std::vector<QueryScenario>& queries,
                           const PipelineConfig& cfg, int workers) {
    cfg.validate();
    const CityGraph& graph = city.graph();
    const SyntheticBackend backend(city, queries, city.config().match_quality, city.config().seed);
    const std::vector<Query> qs = pipeline_queries(queries);

    AblationTable table;
    table.scenario_hash = scenario_hash(city, queries);
    table.seed = cfg.seed;

    {
        AblationRow row;
        row.name = "cvgl";
        std::vector<QueryOutcome> outcomes;
        for (const auto& q : qs) {
            LocalisationResult r;
            r.query = q.id;
            r.position = stage1_position(q, graph, city.db());
            outcomes.push_back({q.id, std::move(r), {}});
        }
        row.records = make_records(graph, queries, outcomes);
        row.summary = compute_metrics(row.records);
        table.rows.push_back(std::move(row));
    }

    auto pipeline_row = [&](const std::string& name, const PipelineConfig& c, const PriorStore* store) {
        AblationRow row;
        row.name = name;
        const auto outcomes = localise_all(qs, graph, city.db(), store, backend, c, workers);
        for (const auto& o : outcomes) {
            if (o.result) row.stage2_seconds += o.result->stage2_seconds;
        }
        row.ransac_iterations = store ? c.ransac_online.max_iterations : c.ransac_offline.max_iterations;
        row.records = make_records(graph, queries, outcomes);
        row.summary = compute_metrics(row.records);
        table.rows.push_back(std::move(row));
    };

    PipelineConfig one = cfg;
    one.refine = false;
    pipeline_row("1-pose", one, nullptr);

    PipelineConfig two = cfg;
    two.refine = true;
    pipeline_row("2-pose", two, nullptr);

    const PriorStore store = precompute_priors(graph, backend, two);
    pipeline_row("priors", two, &store);
    return table;
}

nlohmann::json ablation_to_json(const AblationTable& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : table.rows) {
        nlohmann::json j = metrics_to_json(r.summary, r.records);
        j["name"] = r.name;
        j["stage2_seconds"] = r.stage2_seconds;
        j["ransac_iterations"] = r.ransac_iterations;
        j.erase("cdf");
        rows.push_back(std::move(j));
    }
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(table.scenario_hash));
    return {{"scenario_hash", hash}, {"seed", table.seed}, {"rows", std::move(rows)}};
}

}  // namespace peng
