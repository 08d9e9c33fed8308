#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "peng/error.hpp"
#include "peng/evalkit.hpp"
#include "peng/match_backend.hpp"
#include "peng/pipeline.hpp"
#include "peng/priors.hpp"
#include "peng/rng.hpp"
#include "peng/synthcity.hpp"
#include "support.hpp"

using namespace peng;

namespace {

SynthConfig noiseless(int rows = 3, int cols = 3) {
    SynthConfig c;
    c.grid_rows = rows;
    c.grid_cols = cols;
    c.embedding_dim = 64;
    c.seed = 3;
    return c;
}

/// Delegates to a synthetic backend but fails chosen handles.
class FaultyBackend final : public MatchBackend {
public:
    FaultyBackend(const MatchBackend& inner, std::function<bool(const PairHandle&)> fail, Errc code)
        : inner_(inner), fail_(std::move(fail)), code_(code) {}
    std::string name() const override { return "faulty"; }
    CorrespondenceSet match_pair(const PairHandle& h) const override {
        if (fail_(h)) throw Error(code_, "injected failure", h.key());
        return inner_.match_pair(h);
    }
    CameraIntrinsics intrinsics(const ViewKey& v) const override { return inner_.intrinsics(v); }

private:
    const MatchBackend& inner_;
    std::function<bool(const PairHandle&)> fail_;
    Errc code_;
};

std::string edge_at(const CityGraph& g, std::size_t i) { return std::next(g.edges().begin(), i)->first; }

double fraction_at(const CityGraph& g, const std::string& edge, double arc) {
    return arc / g.arc_lengths(edge).back();
}

struct World {
    SyntheticCity city;
    std::vector<QueryScenario> queries;
    World(const SynthConfig& c, int n, QueryOptions opts = {})
        : city(generate_city(c)), queries(generate_queries(city, n, 90, c.seed, opts)) {}
    SyntheticBackend backend() const { return SyntheticBackend(city, queries, city.config().match_quality, city.config().seed); }
    Query query(std::size_t i) const { return pipeline_queries(queries)[i]; }
};

PipelineConfig pipeline_config() {
    PipelineConfig cfg;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST(Priors, NoiselessMedianMatchesEdgeBearing) {
    const SyntheticCity city = generate_city(noiseless());
    const SyntheticBackend backend(city, {}, MatchQuality{}, 1);
    const PriorStore store = precompute_priors(city.graph(), backend, pipeline_config());
    EXPECT_TRUE(store.failed().empty());
    for (const auto& [id, e] : city.graph().edges()) {
        const EdgePrior* p = store.find(id);
        ASSERT_NE(p, nullptr);
        EXPECT_LT(p->median.angle_to(heading_attitude(e.bearing)), 1e-6) << id;
        for (std::size_t j = 0; j < p->nodes.size(); ++j) {
            EXPECT_LT(p->attitudes[j].angle_to(camera_attitude(city.reference_pose(p->nodes[j], id))), 1e-6);
        }
    }
}

TEST(Priors, RecoversNoisyYawMetadata) {
    SynthConfig c = noiseless();
    c.yaw_metadata_noise = 5.0;
    const SyntheticCity city = generate_city(c);
    const SyntheticBackend backend(city, {}, MatchQuality{}, 1);
    const PriorStore store = precompute_priors(city.graph(), backend, pipeline_config());
    for (const auto& [id, p] : store.edges()) {
        for (std::size_t j = 0; j < p.nodes.size(); ++j) {
            EXPECT_LT(p.attitudes[j].angle_to(camera_attitude(city.reference_pose(p.nodes[j], id))), 1e-6);
        }
    }
}

TEST(Priors, SingleSecondaryEdge) {
    SynthConfig c = noiseless(2, 2);
    c.edge_length_mean = 20.0;
    c.edge_length_sigma = 1.0;
    const SyntheticCity city = generate_city(c);
    const SyntheticBackend backend(city, {}, MatchQuality{}, 1);
    const PriorStore store = precompute_priors(city.graph(), backend, pipeline_config());
    ASSERT_EQ(store.edges().size(), city.graph().edges().size());
    for (const auto& [id, p] : store.edges()) {
        EXPECT_EQ(p.nodes.size(), 3u);
        EXPECT_LT(p.median.angle_to(heading_attitude(city.graph().edge(id).bearing)), 1e-6);
    }
}

TEST(Priors, BackendFailureFlagsOnlyThatEdge) {
    const SyntheticCity city = generate_city(noiseless());
    const SyntheticBackend inner(city, {}, MatchQuality{}, 1);
    const FaultyBackend backend(inner, [&](const PairHandle& h) { return h.reference.edge == edge_at(city.graph(), 2); }, Errc::insufficient_overlap);
    const PriorStore store = precompute_priors(city.graph(), backend, pipeline_config());
    EXPECT_EQ(store.failed().size(), 1u);
    EXPECT_TRUE(store.failed().count(edge_at(city.graph(), 2)));
    EXPECT_EQ(store.find(edge_at(city.graph(), 2)), nullptr);
    EXPECT_EQ(store.edges().size(), city.graph().edges().size() - 1);
}

TEST(Priors, FileRoundTripIsByteIdentical) {
    SynthConfig c = noiseless();
    c.match_quality.pixel_noise_sigma = 0.5;
    const SyntheticCity city = generate_city(c);
    const SyntheticBackend inner(city, {}, c.match_quality, 1);
    const FaultyBackend backend(inner, [&](const PairHandle& h) { return h.reference.edge == edge_at(city.graph(), 1); }, Errc::insufficient_overlap);
    const PriorStore store = precompute_priors(city.graph(), backend, pipeline_config());
    const auto dir = std::filesystem::temp_directory_path() / "peng_priors_rt";
    std::filesystem::create_directories(dir);
    save_priors(store, dir / "a.bin");
    const PriorStore back = load_priors(dir / "a.bin");
    EXPECT_TRUE(back == store);
    save_priors(back, dir / "b.bin");
    auto bytes = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    EXPECT_EQ(bytes(dir / "a.bin"), bytes(dir / "b.bin"));
    EXPECT_EQ(priors_to_json(back), priors_to_json(store));
    EXPECT_NO_THROW(back.validate_against(city.graph()));

    std::string raw = bytes(dir / "a.bin");
    std::ofstream(dir / "bad.bin", std::ios::binary) << raw.substr(0, raw.size() / 2);
    EXPECT_THROW(load_priors(dir / "bad.bin"), Error);
    std::ofstream(dir / "magic.bin", std::ios::binary) << "XXXX" << raw.substr(4);
    EXPECT_THROW(load_priors(dir / "magic.bin"), Error);
}

TEST(EdgePosition, QueryAtSecondaryIndex) {
    SynthConfig c = noiseless();
    const SyntheticCity probe = generate_city(c);
    const std::string edge = edge_at(probe.graph(), 3);
    const auto arcs = probe.graph().arc_lengths(edge);
    ASSERT_GE(arcs.size(), 11u);
    for (std::size_t index : {std::size_t{5}, std::size_t{0}, arcs.size() - 1}) {
        QueryOptions opts;
        opts.fixed_edge = edge;
        opts.fixed_fraction = fraction_at(probe.graph(), edge, arcs[index]);
        const World w(c, 1, opts);
        const SyntheticBackend backend = w.backend();
        const EdgePoseResult r = process_edge(w.query(0), w.city.graph(), edge, nullptr, backend, pipeline_config());
        EXPECT_EQ(r.t_p, static_cast<int>(index));
        EXPECT_NEAR(r.fraction, *opts.fixed_fraction, 1e-9);
    }
}

TEST(EdgePosition, MidwayBetweenSecondaries) {
    SynthConfig c = noiseless();
    const SyntheticCity probe = generate_city(c);
    const std::string edge = edge_at(probe.graph(), 4);
    const auto arcs = probe.graph().arc_lengths(edge);
    QueryOptions opts;
    opts.fixed_edge = edge;
    opts.fixed_fraction = fraction_at(probe.graph(), edge, 0.5 * (arcs[4] + arcs[5]));
    const World w(c, 1, opts);
    const SyntheticBackend backend = w.backend();
    for (const PriorStore* store : {static_cast<const PriorStore*>(nullptr)}) {
        const EdgePoseResult r = process_edge(w.query(0), w.city.graph(), edge, store, backend, pipeline_config());
        EXPECT_NEAR(r.fraction, *opts.fixed_fraction, 1e-6);
        EXPECT_EQ(r.neighbours_used, 2);
        EXPECT_FALSE(r.degraded);
        EXPECT_NEAR(r.rotation_error, 0.0, 1e-6);
    }
}

TEST(EdgePosition, AllMatchesDegenerateIsEdgeFailure) {
    const World w(noiseless(), 3);
    const SyntheticBackend inner = w.backend();
    const FaultyBackend backend(inner, [](const PairHandle&) { return true; }, Errc::degenerate_solution);
    try {
        process_edge(w.query(0), w.city.graph(), w.queries[0].edge, nullptr, backend, pipeline_config());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::edge_failure);
        EXPECT_EQ(e.subject(), w.queries[0].edge);
    }
}

TEST(EdgePosition, OccludedNeighbourFallsBackToOther) {
    SynthConfig c = noiseless();
    const SyntheticCity probe = generate_city(c);
    const std::string edge = edge_at(probe.graph(), 4);
    const auto arcs = probe.graph().arc_lengths(edge);
    const auto chain = probe.graph().reference_chain(edge);
    QueryOptions opts;
    opts.fixed_edge = edge;
    opts.fixed_fraction = fraction_at(probe.graph(), edge, arcs[5]);
    const World w(c, 1, opts);
    const SyntheticBackend inner = w.backend();
    const std::string hidden = chain[6];
    const FaultyBackend backend(inner, [&](const PairHandle& h) { return h.reference.id == hidden; }, Errc::insufficient_overlap);
    const EdgePoseResult r = process_edge(w.query(0), w.city.graph(), edge, nullptr, backend, pipeline_config());
    EXPECT_EQ(r.t_p, 5);
    EXPECT_EQ(r.neighbours_used, 1);
    EXPECT_TRUE(r.degraded);
    EXPECT_NEAR(r.fraction, *opts.fixed_fraction, 1e-6);
}

TEST(EdgePosition, WithoutRefinementUsesReferenceLocation) {
    SynthConfig c = noiseless();
    const World w(c, 5);
    const SyntheticBackend backend = w.backend();
    PipelineConfig cfg = pipeline_config();
    cfg.refine = false;
    const EdgePoseResult r = process_edge(w.query(1), w.city.graph(), w.queries[1].edge, nullptr, backend, cfg);
    EXPECT_NEAR(r.fraction * w.city.graph().arc_lengths(r.edge).back(), w.city.graph().arc_lengths(r.edge)[r.t_p], 1e-6);
}

TEST(SelectPosition, TieBreaks) {
    auto est = [](int inliers, double rms, double tnorm) {
        PoseEstimate e;
        e.inlier_count = inliers;
        e.rms_reprojection = rms;
        e.pose.translation = Vec3(tnorm, 0, 0);
        return std::optional<PoseEstimate>(e);
    };
    EXPECT_EQ(select_position({std::nullopt, std::nullopt}), -1);
    EXPECT_EQ(select_position({est(10, 0.1, 1), est(12, 0.9, 1)}), 1);
    EXPECT_EQ(select_position({est(10, 0.5, 1), est(10, 0.2, 1)}), 1);
    EXPECT_EQ(select_position({est(10, 0.2, 3), std::nullopt, est(10, 0.2 + 1e-9, 2)}), 2);
    EXPECT_EQ(select_position({est(10, 0.2, 2), est(10, 0.2, 2)}), 0);
}

TEST(Fusion, ArgmaxInvariantToMonotoneRescaling) {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<EdgePoseResult> a(2 + rng.below(5));
        for (auto& r : a) {
            r.stage1_confidence = 0.93;
            r.rotation_error = rng.uniform(0, 20);
        }
        std::vector<EdgePoseResult> b = a;
        for (auto& r : b) r.rotation_error = std::exp(0.3 * r.rotation_error) + 2.0;
        for (FusionPolicy p : {FusionPolicy::product, FusionPolicy::sum}) {
            fuse_scores(a, p);
            fuse_scores(b, p);
            auto best = [](const std::vector<EdgePoseResult>& v) {
                return std::max_element(v.begin(), v.end(), [](auto& x, auto& y) { return x.fused_score < y.fused_score; }) - v.begin();
            };
            ASSERT_EQ(best(a), best(b));
        }
    }
}

TEST(Fusion, SingleEdgeHasFullStageTwoConfidence) {
    std::vector<EdgePoseResult> one(1);
    one[0].stage1_confidence = 0.8;
    one[0].rotation_error = 7.0;
    fuse_scores(one, FusionPolicy::product);
    EXPECT_EQ(one[0].stage2_confidence, 1.0);
    EXPECT_DOUBLE_EQ(one[0].fused_score, 0.8);
}

TEST(Localise, NoiselessEarlyStopOnTrueEdge) {
    const World w(noiseless(), 40);
    const SyntheticBackend backend = w.backend();
    const auto outcomes = localise_all(pipeline_queries(w.queries), w.city.graph(), w.city.db(), nullptr, backend,
                                       pipeline_config(), 2);
    const auto records = make_records(w.city.graph(), w.queries, outcomes);
    for (std::size_t i = 0; i < records.size(); ++i) {
        ASSERT_TRUE(outcomes[i].result) << outcomes[i].error;
        EXPECT_EQ(outcomes[i].result->edges_processed, 1);
        EXPECT_TRUE(outcomes[i].result->early_stop);
        EXPECT_LE(records[i].error_m, 1e-3);
    }
}

TEST(Localise, TrueNodeRankedSecondStillWins) {
    const World w(noiseless(4, 4), 10);
    const SyntheticBackend backend = w.backend();
    const QueryScenario& s = w.queries[2];
    // A far-away decoy ranked first, the true node close behind.
    std::string decoy;
    double far = 0;
    const LocalPoint here = w.city.graph().to_local(s.location);
    for (const auto& [id, p] : w.city.graph().primaries()) {
        const LocalPoint q = w.city.graph().to_local(p.location);
        const double d = std::hypot(q.east - here.east, q.north - here.north);
        if (d > far) {
            far = d;
            decoy = id;
        }
    }
    const Embedding eb = w.city.db().at(decoy), et = w.city.db().at(s.true_node);
    Query q = w.query(2);
    for (std::size_t i = 0; i < q.embedding.values.size(); ++i) q.embedding.values[i] = eb.values[i] + 0.97f * et.values[i];
    PipelineConfig cfg = pipeline_config();
    cfg.theta_c = 0.8;
    const LocalisationResult r = localise(q, w.city.graph(), w.city.db(), nullptr, backend, cfg);
    EXPECT_EQ(r.candidates_processed, 2);
    EXPECT_EQ(r.edge, s.edge);
    EXPECT_LT(position_error(w.city.graph(), s.location, r.position), 1e-3);
}

TEST(Localise, EmptyCandidateSetFallsBackToTopNode) {
    const World w(noiseless(), 5);
    const SyntheticBackend backend = w.backend();
    PipelineConfig cfg = pipeline_config();
    cfg.theta_c = 1.0;
    const LocalisationResult r = localise(w.query(0), w.city.graph(), w.city.db(), nullptr, backend, cfg);
    EXPECT_TRUE(r.low_confidence);
    EXPECT_EQ(r.candidates_processed, 1);
    EXPECT_LT(position_error(w.city.graph(), w.queries[0].location, r.position), 1e-3);
}

TEST(Localise, TotalFailureIsNoEstimate) {
    const World w(noiseless(), 2);
    const SyntheticBackend inner = w.backend();
    const FaultyBackend backend(inner, [](const PairHandle&) { return true; }, Errc::insufficient_overlap);
    try {
        localise(w.query(0), w.city.graph(), w.city.db(), nullptr, backend, pipeline_config());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::no_estimate);
    }
    const auto outcomes = localise_all(pipeline_queries(w.queries), w.city.graph(), w.city.db(), nullptr, backend,
                                       pipeline_config(), 2);
    for (const auto& o : outcomes) {
        EXPECT_FALSE(o.result);
        EXPECT_FALSE(o.error.empty());
    }
}

TEST(Localise, NoisySuiteInvariants) {
    SynthConfig c = test::noisy_suite(4);
    c.grid_rows = 4;
    c.grid_cols = 4;
    const World w(c, 60);
    const SyntheticBackend backend = w.backend();
    const PipelineConfig cfg = pipeline_config();
    const PriorStore store = precompute_priors(w.city.graph(), backend, cfg);
    for (const PriorStore* st : {static_cast<const PriorStore*>(nullptr), &store}) {
        const auto one = localise_all(pipeline_queries(w.queries), w.city.graph(), w.city.db(), st, backend, cfg, 1);
        const auto four = localise_all(pipeline_queries(w.queries), w.city.graph(), w.city.db(), st, backend, cfg, 4);
        EXPECT_EQ(records_to_json(make_records(w.city.graph(), w.queries, one)),
                  records_to_json(make_records(w.city.graph(), w.queries, four)));
        for (std::size_t i = 0; i + 1 < one.size(); ++i) EXPECT_LT(one[i].query, one[i + 1].query);
        for (const auto& o : one) {
            if (!o.result) continue;
            const LocalisationResult& r = *o.result;
            // The returned point lies on the winning edge.
            EXPECT_LT(distance_to_edge(w.city.graph(), r.edge, w.city.graph().to_local(r.position)), 1e-9);
            if (r.early_stop) {
                const auto& last = r.per_edge.back();
                EXPECT_EQ(last.edge, r.edge);
                EXPECT_LE(last.rotation_error, cfg.theta_re);
                for (std::size_t k = 0; k + 1 < r.per_edge.size(); ++k) EXPECT_GT(r.per_edge[k].rotation_error, cfg.theta_re);
                std::set<std::string> nodes;
                for (const auto& e : r.per_edge) nodes.insert(e.candidate);
                EXPECT_LE(static_cast<int>(nodes.size()), r.candidates_processed);
            }
            EXPECT_LE(r.candidates_processed, cfg.theta_n);
            EXPECT_GE(r.fused_score, 0.0);
            EXPECT_LE(r.fused_score, 1.0);
        }
    }
}

TEST(Localise, Deterministic) {
    const World w(test::noisy_suite(2), 12);
    const SyntheticBackend backend = w.backend();
    auto attempt = [&](std::size_t i) -> std::pair<std::optional<LocalisationResult>, std::string> {
        try {
            return {localise(w.query(i), w.city.graph(), w.city.db(), nullptr, backend, pipeline_config()), {}};
        } catch (const Error& e) {
            return {std::nullopt, e.what()};
        }
    };
    int solved = 0;
    for (std::size_t i = 0; i < w.queries.size(); ++i) {
        const auto [a, ea] = attempt(i);
        const auto [b, eb] = attempt(i);
        ASSERT_EQ(a.has_value(), b.has_value());
        EXPECT_EQ(ea, eb);
        if (!a) continue;
        ++solved;
        EXPECT_EQ(a->position, b->position);
        EXPECT_EQ(a->rotation.quaternion().coeffs(), b->rotation.quaternion().coeffs());
        EXPECT_EQ(a->edge, b->edge);
        EXPECT_EQ(a->fused_score, b->fused_score);
    }
    EXPECT_GT(solved, 6);
}

TEST(Localise, MedianErrorGrowsWithNoise) {
    auto median_for = [](double pixel, double embedding) {
        SynthConfig c = test::noisy_suite(7);
        c.match_quality.pixel_noise_sigma = pixel;
        c.embedding_noise_sigma = embedding;
        const World w(c, 200);
        const SyntheticBackend backend = w.backend();
        const auto outcomes = localise_all(pipeline_queries(w.queries), w.city.graph(), w.city.db(), nullptr, backend,
                                           pipeline_config(), 4);
        return compute_metrics(make_records(w.city.graph(), w.queries, outcomes)).median_m;
    };
    double previous = 0.0;
    for (double pixel : {0.25, 0.5, 1.0}) {
        const double m = median_for(pixel, 0.5);
        EXPECT_GE(m, previous) << "pixel sigma " << pixel;
        previous = m;
    }
    previous = 0.0;
    for (double embedding : {0.25, 0.5, 1.0}) {
        const double m = median_for(0.5, embedding);
        EXPECT_GE(m, previous) << "embedding sigma " << embedding;
        previous = m;
    }
}

TEST(PipelineConfig, Validation) {
    PipelineConfig c;
    c.theta_c = 1.2;
    EXPECT_THROW(c.validate(), Error);
    c = PipelineConfig{};
    c.k = 0;
    EXPECT_THROW(c.validate(), Error);
    c = PipelineConfig{};
    c.axis_weights = Vec3(1, 0, 1);
    EXPECT_THROW(c.validate(), Error);
    EXPECT_NO_THROW(PipelineConfig{}.validate());
}
