// peng: synthesise a city, precompute priors, localise queries, evaluate and
// run the ablation grid. Every option below is also a key in the --config
// file; command-line flags take precedence over file values.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "peng/citygraph.hpp"
#include "peng/embedding.hpp"
#include "peng/error.hpp"
#include "peng/evalkit.hpp"
#include "peng/match_backend.hpp"
#include "peng/pipeline.hpp"
#include "peng/priors.hpp"
#include "peng/synthcity.hpp"

namespace fs = std::filesystem;
using namespace peng;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNoEstimate = 3 };

struct Options {
    std::uint64_t seed = 1;
    std::string topology = "grid";
    std::string fusion = "product";
    std::string backend = "synthetic";
    std::string backend_command;
    std::vector<double> axis_weights{1.0, 0.25, 1.0};
    double epsilon = 2.0;
    int offline_iterations = 400;
    int online_iterations = 100;
    int workers = 0;
    SynthConfig synth;
    PipelineConfig pipeline;
};

void add_config_options(CLI::App& app, Options& o) {
    auto& s = o.synth;
    auto& p = o.pipeline;
    const char* g_run = "Run";
    app.add_option("--seed", o.seed, "Master seed for every random stream")->group(g_run)->capture_default_str();
    app.add_option("--workers", o.workers, "Query worker threads (0 = hardware concurrency)")->group(g_run);
    app.add_option("--backend", o.backend, "Match backend")
        ->check(CLI::IsMember({"synthetic", "subprocess"}))->group(g_run)->capture_default_str();
    app.add_option("--backend_command", o.backend_command, "Server command line for the subprocess backend")->group(g_run);

    const char* g_pipe = "Pipeline";
    app.add_option("--theta_c", p.theta_c, "Stage-1 confidence threshold")->group(g_pipe)->capture_default_str();
    app.add_option("--k", p.k, "Candidate cap")->group(g_pipe)->capture_default_str();
    app.add_option("--theta_re", p.theta_re, "Early-stop rotation error, degrees")->group(g_pipe)->capture_default_str();
    app.add_option("--theta_n", p.theta_n, "Candidate nodes processed at most")->group(g_pipe)->capture_default_str();
    app.add_option("--yaw_threshold", p.yaw_threshold, "Compass filter half-width, degrees")->group(g_pipe)->capture_default_str();
    app.add_option("--axis_weights", o.axis_weights, "Euler X Y Z weights")->expected(3)->group(g_pipe)->capture_default_str();
    app.add_option("--fusion", o.fusion, "Confidence fusion policy")
        ->check(CLI::IsMember({"product", "sum"}))->group(g_pipe)->capture_default_str();
    app.add_option("--ransac_epsilon", o.epsilon, "Inlier threshold, pixels")->group(g_pipe)->capture_default_str();
    app.add_option("--ransac_offline_iterations", o.offline_iterations, "RANSAC and refinement budget without priors")
        ->group(g_pipe)->capture_default_str();
    app.add_option("--ransac_online_iterations", o.online_iterations, "RANSAC and refinement budget with priors")
        ->group(g_pipe)->capture_default_str();

    const char* g_syn = "Synthesis";
    app.add_option("--topology", o.topology, "City layout")
        ->check(CLI::IsMember({"grid", "delaunay"}))->group(g_syn)->capture_default_str();
    app.add_option("--grid_rows", s.grid_rows)->group(g_syn)->capture_default_str();
    app.add_option("--grid_cols", s.grid_cols)->group(g_syn)->capture_default_str();
    app.add_option("--edge_length_mean", s.edge_length_mean, "Metres")->group(g_syn)->capture_default_str();
    app.add_option("--edge_length_sigma", s.edge_length_sigma, "Junction jitter, metres")->group(g_syn)->capture_default_str();
    app.add_option("--secondary_spacing", s.secondary_spacing, "Metres")->group(g_syn)->capture_default_str();
    app.add_option("--landmark_density", s.landmark_density, "Per metre of road")->group(g_syn)->capture_default_str();
    app.add_option("--landmark_lateral_sigma", s.landmark_lateral_sigma)->group(g_syn)->capture_default_str();
    app.add_option("--road_half_width", s.road_half_width)->group(g_syn)->capture_default_str();
    app.add_option("--max_view_range", s.max_view_range)->group(g_syn)->capture_default_str();
    app.add_option("--reference_yaw_jitter", s.reference_yaw_jitter)->group(g_syn)->capture_default_str();
    app.add_option("--yaw_metadata_noise", s.yaw_metadata_noise)->group(g_syn)->capture_default_str();
    app.add_option("--query_yaw_jitter", s.query_yaw_jitter)->group(g_syn)->capture_default_str();
    app.add_option("--compass_noise_sigma", s.compass_noise_sigma)->group(g_syn)->capture_default_str();
    app.add_option("--query_lateral_sigma", s.query_lateral_sigma)->group(g_syn)->capture_default_str();
    app.add_option("--query_hfov", s.query_hfov)->check(CLI::IsMember({70.0, 90.0, 120.0}))->group(g_syn)->capture_default_str();
    app.add_option("--query_count", s.query_count)->group(g_syn)->capture_default_str();
    app.add_option("--embedding_dim", s.embedding_dim)->group(g_syn)->capture_default_str();
    app.add_option("--embedding_margin", s.embedding_margin)->group(g_syn)->capture_default_str();
    app.add_option("--embedding_noise_sigma", s.embedding_noise_sigma)->group(g_syn)->capture_default_str();
    app.add_option("--pixel_noise_sigma", s.match_quality.pixel_noise_sigma)->group(g_syn)->capture_default_str();
    app.add_option("--outlier_rate", s.match_quality.outlier_rate)->group(g_syn)->capture_default_str();
    app.add_option("--min_shared_landmarks", s.match_quality.min_shared_landmarks)->group(g_syn)->capture_default_str();
    app.add_option("--max_pairs", s.match_quality.max_pairs)->group(g_syn)->capture_default_str();
}

void finalise(Options& o) {
    o.synth.seed = o.seed;
    o.synth.topology = o.topology == "grid" ? Topology::grid : Topology::delaunay;
    o.pipeline.seed = o.seed;
    o.pipeline.fusion = o.fusion == "product" ? FusionPolicy::product : FusionPolicy::sum;
    o.pipeline.axis_weights = Vec3(o.axis_weights[0], o.axis_weights[1], o.axis_weights[2]);
    o.pipeline.ransac_offline = {o.epsilon, o.offline_iterations, o.offline_iterations, 0};
    o.pipeline.ransac_online = {o.epsilon, o.online_iterations, o.online_iterations, 0};
    if (o.workers <= 0) o.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    o.synth.validate();
    o.pipeline.validate();
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io, "cannot open file", path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
        throw Error(Errc::schema, std::string("invalid JSON: ") + ex.what(), path.string());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write file", path.string());
    out << text;
    if (!out) throw Error(Errc::io, "failed writing file", path.string());
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

struct Data {
    fs::path dir;
    fs::path graph() const { return dir / "graph.json"; }
    fs::path db() const { return dir / "db.emb"; }
    fs::path queries() const { return dir / "queries.emb"; }
    fs::path scenario() const { return dir / "scenario.json"; }
};

LoadedScenario load_data(const Data& d) {
    CityGraph graph = load_graph(d.graph());
    EmbeddingDatabase db = load_embeddings(d.db());
    const EmbeddingDatabase qdb = load_embeddings(d.queries());
    return scenario_from_json(read_json(d.scenario()), std::move(graph), std::move(db), qdb);
}

std::vector<std::string> split_command(const std::string& cmd) {
    std::istringstream in(cmd);
    std::vector<std::string> argv;
    for (std::string tok; in >> tok;) argv.push_back(tok);
    return argv;
}

std::unique_ptr<MatchBackend> make_backend(const Options& o, const LoadedScenario& s) {
    if (o.backend == "subprocess") {
        if (o.backend_command.empty()) throw Error(Errc::invalid_argument, "--backend subprocess needs --backend_command");
        return std::make_unique<SubprocessBackend>(split_command(o.backend_command));
    }
    return std::make_unique<SyntheticBackend>(s.city, s.queries, s.city.config().match_quality, s.city.config().seed);
}

int exit_code_for(Errc code) {
    switch (code) {
        case Errc::invalid_argument: return kUsage;
        case Errc::no_estimate: return kNoEstimate;
        default: return kData;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PEnG graph-based localisation: synthesis, priors, localisation and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "Key-value config file (TOML/INI)");
    Options o;
    add_config_options(app, o);

    Data data{"data"};
    auto* synth = app.add_subcommand("synth", "Generate a synthetic city and query scenarios");
    synth->add_option("--out", data.dir, "Output directory")->capture_default_str();

    fs::path priors_out = "priors.bin";
    fs::path priors_json;
    auto* priors = app.add_subcommand("priors", "Precompute reference pose priors");
    priors->add_option("--data", data.dir, "Directory written by synth")->capture_default_str();
    priors->add_option("--out", priors_out)->capture_default_str();
    priors->add_option("--json", priors_json, "Also write a JSON export");

    fs::path priors_in;
    fs::path records_out = "records.json";
    bool no_refine = false;
    auto* localise_cmd = app.add_subcommand("localise", "Localise every query");
    localise_cmd->add_option("--data", data.dir)->capture_default_str();
    localise_cmd->add_option("--priors", priors_in, "Prior store; omit for cold mode");
    localise_cmd->add_option("--out", records_out)->capture_default_str();
    localise_cmd->add_flag("--no_refine", no_refine, "Use the t_p reference position without neighbour refinement");

    fs::path records_in = "records.json";
    fs::path metrics_out = "metrics.json";
    fs::path cdf_out = "cdf.csv";
    auto* eval = app.add_subcommand("eval", "Summarise a records file");
    eval->add_option("--records", records_in)->capture_default_str();
    eval->add_option("--metrics", metrics_out)->capture_default_str();
    eval->add_option("--cdf", cdf_out)->capture_default_str();

    fs::path ablation_out = "ablation.json";
    auto* ablate = app.add_subcommand("ablate", "Run the cvgl / 1-pose / 2-pose / priors grid");
    ablate->add_option("--data", data.dir)->capture_default_str();
    ablate->add_option("--out", ablation_out)->capture_default_str();

    auto* defaults = app.add_subcommand("defaults", "Print every config key with its default value");

    auto* serve = app.add_subcommand("serve-matches", "Answer match requests on stdin/stdout from a synthetic city");
    serve->add_option("--data", data.dir)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (*defaults) {
            std::cout << app.config_to_str(true, true);
            return kOk;
        }
        finalise(o);

        if (*synth) {
            const SyntheticCity city = generate_city(o.synth);
            const auto queries = generate_queries(city, o.synth.query_count, o.synth.query_hfov, o.seed);
            fs::create_directories(data.dir);
            save_graph(city.graph(), data.graph());
            save_embeddings(city.db(), data.db());
            save_embeddings(query_embedding_table(queries), data.queries());
            write_json(data.scenario(), scenario_to_json(city, queries));
            std::printf("%zu primaries, %zu secondaries, %zu edges, %zu landmarks, %zu queries -> %s\n",
                        city.graph().primaries().size(), city.graph().secondaries().size(),
                        city.graph().edges().size(), city.landmarks().size(), queries.size(), data.dir.c_str());
            return kOk;
        }

        if (*serve) {
            const LoadedScenario s = load_data(data);
            const SyntheticBackend backend(s.city, s.queries, s.city.config().match_quality, s.city.config().seed);
            std::string line;
            while (std::getline(std::cin, line)) {
                nlohmann::json response;
                try {
                    response = serve_request(backend, nlohmann::json::parse(line));
                } catch (const nlohmann::json::exception& ex) {
                    response = {{"error", {{"code", "schema"}, {"message", ex.what()}}}};
                }
                std::cout << response.dump() << '\n' << std::flush;
            }
            return kOk;
        }

        if (*priors) {
            const LoadedScenario s = load_data(data);
            const auto backend = make_backend(o, s);
            const PriorStore store = precompute_priors(s.city.graph(), *backend, o.pipeline);
            save_priors(store, priors_out);
            if (!priors_json.empty()) write_json(priors_json, priors_to_json(store));
            std::printf("priors for %zu edges, %zu failed -> %s\n", store.edges().size(), store.failed().size(),
                        priors_out.c_str());
            return kOk;
        }

        if (*localise_cmd) {
            const LoadedScenario s = load_data(data);
            const auto backend = make_backend(o, s);
            std::optional<PriorStore> store;
            if (!priors_in.empty()) {
                store = load_priors(priors_in);
                store->validate_against(s.city.graph());
            }
            PipelineConfig cfg = o.pipeline;
            cfg.refine = !no_refine;
            const auto outcomes = localise_all(pipeline_queries(s.queries), s.city.graph(), s.city.db(),
                                               store ? &*store : nullptr, *backend, cfg, o.workers);
            const auto records = make_records(s.city.graph(), s.queries, outcomes);
            write_json(records_out, records_to_json(records));
            const auto failed = std::count_if(records.begin(), records.end(), [](const EvalRecord& r) { return !r.estimate; });
            std::printf("%zu queries, %td without estimate -> %s\n", records.size(), failed, records_out.c_str());
            return failed == static_cast<std::ptrdiff_t>(records.size()) ? kNoEstimate : kOk;
        }

        if (*eval) {
            const auto records = records_from_json(read_json(records_in));
            const MetricsSummary summary = compute_metrics(records);
            write_json(metrics_out, metrics_to_json(summary, records));
            export_cdf(summary, cdf_out);
            std::printf("median %s m, top-1m %.2f%%, top-5m %.2f%%, top-25m %.2f%%\n", format_double(summary.median_m).c_str(),
                        summary.top1m, summary.top5m, summary.top25m);
            return kOk;
        }

        if (*ablate) {
            const LoadedScenario s = load_data(data);
            const AblationTable table = run_ablation(s.city, s.queries, o.pipeline, o.workers);
            write_json(ablation_out, ablation_to_json(table));
            for (const auto& row : table.rows) {
                std::printf("%-8s median %10s m  top-1m %6.2f%%  top-5m %6.2f%%  top-25m %6.2f%%  stage2 %.2fs\n",
                            row.name.c_str(), format_double(row.summary.median_m).c_str(), row.summary.top1m,
                            row.summary.top5m, row.summary.top25m, row.stage2_seconds);
            }
            return kOk;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "peng: %s%s%s\n", e.what(), e.subject().empty() ? "" : " [", e.subject().empty() ? "" : (e.subject() + "]").c_str());
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "peng: %s\n", e.what());
        return kData;
    }
    return kUsage;
}
