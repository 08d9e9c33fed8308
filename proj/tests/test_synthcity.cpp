#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "peng/embedding.hpp"
#include "peng/error.hpp"
#include "peng/synthcity.hpp"

using namespace peng;

namespace {

SynthConfig small(int rows, int cols, std::uint64_t seed = 1) {
    SynthConfig c;
    c.grid_rows = rows;
    c.grid_cols = cols;
    c.seed = seed;
    c.embedding_dim = 64;
    return c;
}

struct Recall {
    int top1 = 0;
    int top5 = 0;
};

Recall recall(const SyntheticCity& city, const std::vector<QueryScenario>& queries) {
    Recall r;
    for (const auto& q : queries) {
        const auto s = score_candidates(q.embedding, city.db());
        for (std::size_t i = 0; i < std::min<std::size_t>(5, s.size()); ++i) {
            if (s[i].node != q.true_node) continue;
            r.top1 += i == 0;
            ++r.top5;
        }
    }
    return r;
}

}  // namespace

TEST(Synth, TwoByTwoCounts) {
    const SyntheticCity city = generate_city(small(2, 2));
    EXPECT_EQ(city.graph().primaries().size(), 4u);
    EXPECT_EQ(city.graph().edges().size(), 4u);
}

TEST(Synth, SecondariesAtPaperSpacing) {
    const SyntheticCity city = generate_city(small(3, 3));
    for (const auto& [id, e] : city.graph().edges()) {
        EXPECT_GE(e.secondaries.size(), 10u) << id << " length " << e.length_m;
        EXPECT_LE(e.secondaries.size(), 12u) << id << " length " << e.length_m;
    }
    SynthConfig exact = small(2, 2);
    exact.edge_length_sigma = 0.0;
    const SyntheticCity straight = generate_city(exact);
    for (const auto& [id, e] : straight.graph().edges()) EXPECT_EQ(e.secondaries.size(), 11u) << id;
}

TEST(Synth, DegenerateConfig) {
    SynthConfig c = small(0, 3);
    EXPECT_THROW(generate_city(c), Error);
    c = small(2, 2);
    c.embedding_margin = -0.1;
    EXPECT_THROW(generate_city(c), Error);
}

TEST(Synth, DeterministicFiles) {
    const SyntheticCity a = generate_city(small(3, 3, 9));
    const SyntheticCity b = generate_city(small(3, 3, 9));
    EXPECT_EQ(graph_to_json(a.graph()).dump(), graph_to_json(b.graph()).dump());
    EXPECT_EQ(a.db().data(), b.db().data());
    const auto qa = generate_queries(a, 20, 90, 9);
    const auto qb = generate_queries(b, 20, 90, 9);
    EXPECT_EQ(scenario_to_json(a, qa).dump(), scenario_to_json(b, qb).dump());
    const SyntheticCity c = generate_city(small(3, 3, 10));
    EXPECT_NE(graph_to_json(a.graph()).dump(), graph_to_json(c.graph()).dump());
}

TEST(Synth, GraphRoundTripPassesValidation) {
    for (Topology topo : {Topology::grid, Topology::delaunay}) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            SynthConfig c = small(3, 4, seed);
            c.topology = topo;
            const SyntheticCity city = generate_city(c);
            const CityGraph back = graph_from_json(graph_to_json(city.graph()));
            EXPECT_EQ(graph_to_json(back), graph_to_json(city.graph()));
            EXPECT_NO_THROW(city.db().validate_against(back));
        }
    }
}

TEST(Synth, EveryLandmarkVisibleFromSomeReference) {
    const SyntheticCity city = generate_city(small(3, 3, 4));
    const CameraIntrinsics K = city.reference_intrinsics();
    std::vector<bool> seen(city.landmarks().size(), false);
    for (const auto& [eid, e] : city.graph().edges()) {
        for (const auto& node : city.graph().reference_chain(eid)) {
            const Pose pose = city.reference_pose(node, eid);
            for (int i : city.landmarks_near(city.node_position(node), city.config().max_view_range)) {
                if (city.visible(pose, K, city.landmarks()[i])) seen[i] = true;
            }
        }
    }
    EXPECT_EQ(std::count(seen.begin(), seen.end(), false), 0);
}

TEST(Synth, EveryNodeHasATruthPose) {
    const SyntheticCity city = generate_city(small(2, 3));
    for (const auto& [eid, e] : city.graph().edges()) {
        for (const auto& node : city.graph().reference_chain(eid)) {
            const Pose p = city.reference_pose(node, eid);
            EXPECT_LT((p.centre() - city.node_position(node)).norm(), 1e-9);
        }
    }
}

TEST(SynthEmbeddings, NoiselessRetrievalIsPerfect) {
    SynthConfig c = small(4, 4);
    const SyntheticCity city = generate_city(c);
    const auto queries = generate_queries(city, 200, 90, 3);
    EXPECT_EQ(recall(city, queries).top1, 200);
}

TEST(SynthEmbeddings, NoMarginLargeNoiseIsChance) {
    SynthConfig c = small(4, 4);
    c.embedding_margin = 0.0;
    c.embedding_noise_sigma = 50.0;
    const SyntheticCity city = generate_city(c);
    const auto queries = generate_queries(city, 3200, 90, 5);
    // Chance is 1/16: 200 expected, binomial sd about 13.7.
    const int top1 = recall(city, queries).top1;
    EXPECT_GT(top1, 200 - 5 * 14);
    EXPECT_LT(top1, 200 + 5 * 14);
}

TEST(SynthEmbeddings, TunedMarginRecallAtFiveExceedsRecallAtOne) {
    SynthConfig c = small(6, 6);
    c.embedding_dim = 768;
    c.embedding_margin = 0.02;
    c.embedding_noise_sigma = 0.5;
    const SyntheticCity city = generate_city(c);
    const auto queries = generate_queries(city, 200, 90, 1);
    const Recall r = recall(city, queries);
    EXPECT_GT(r.top1, 200 * 0.45);
    EXPECT_LT(r.top1, 200 * 0.75);
    EXPECT_GT(r.top5, r.top1);
}

TEST(SynthEmbeddings, GapAtLeastMarginMinusThreeSigma) {
    SynthConfig c = small(4, 4);
    c.embedding_dim = 128;
    const SyntheticCity city = generate_city(c);
    for (double sigma : {0.05, 0.2, 0.5}) {
        int ok = 0;
        const int trials = 1000;
        for (int t = 0; t < trials; ++t) {
            const std::string& node = city.db().ids()[t % city.db().size()];
            const Embedding q = make_query_embedding(city.db(), node, 0.2, sigma, 1000 + t);
            const auto s = score_candidates(q, city.db());
            double self = 0, other = -1;
            for (const auto& cs : s) {
                if (cs.node == node) {
                    self = cs.raw_cosine;
                } else {
                    other = std::max(other, cs.raw_cosine);
                }
            }
            ok += self - other >= 0.2 - 3 * sigma;
        }
        EXPECT_GE(ok, trials * 99 / 100) << sigma;
    }
}

TEST(SynthQueries, ForcedFractionZeroIsAtPrimary) {
    const SyntheticCity city = generate_city(small(3, 3));
    QueryOptions opts;
    opts.fixed_fraction = 0.0;
    const auto q = generate_queries(city, 1, 90, 2, opts);
    ASSERT_EQ(q.size(), 1u);
    const Edge& e = city.graph().edge(q[0].edge);
    EXPECT_EQ(q[0].location, city.graph().primary(e.a).location);
    EXPECT_EQ(q[0].true_node, e.a);
}

TEST(SynthQueries, CardinalityAndIds) {
    const SyntheticCity city = generate_city(small(3, 3));
    const auto q = generate_queries(city, 200, 90, 2);
    std::set<std::string> ids;
    for (const auto& s : q) {
        ids.insert(s.id);
        EXPECT_GE(s.fraction, 0.0);
        EXPECT_LE(s.fraction, 1.0);
        EXPECT_EQ(s.hfov, 90.0);
    }
    EXPECT_EQ(ids.size(), 200u);
}

TEST(SynthQueries, FovFromSupportedSet) {
    const SyntheticCity city = generate_city(small(2, 2));
    for (double f : {70.0, 90.0, 120.0}) EXPECT_NO_THROW(generate_queries(city, 2, f, 1));
    EXPECT_THROW(generate_queries(city, 2, 100.0, 1), Error);
    EXPECT_THROW(generate_queries(city, 0, 90.0, 1), Error);
}

TEST(SynthQueries, CompassIsYawPlusNoise) {
    SynthConfig c = small(3, 3);
    const SyntheticCity exact = generate_city(c);
    for (const auto& q : generate_queries(exact, 50, 90, 4)) {
        EXPECT_EQ(q.compass_reading, q.yaw);
        EXPECT_NEAR(angular_distance(q.yaw, exact.graph().edge(q.edge).bearing), 0.0, 1e-9);
    }
    c.compass_noise_sigma = 5.0;
    const SyntheticCity noisy = generate_city(c);
    double sum2 = 0;
    const auto qs = generate_queries(noisy, 400, 90, 4);
    for (const auto& q : qs) sum2 += std::pow(wrap_degrees(q.compass_reading - q.yaw), 2);
    EXPECT_NEAR(std::sqrt(sum2 / qs.size()), 5.0, 0.75);
}

TEST(SynthQueries, ScenarioJsonRoundTrip) {
    const SyntheticCity city = generate_city(small(3, 3));
    const auto q = generate_queries(city, 30, 120, 6);
    const auto doc = scenario_to_json(city, q);
    const LoadedScenario back =
        scenario_from_json(doc, graph_from_json(graph_to_json(city.graph())), city.db(), query_embedding_table(q));
    EXPECT_EQ(scenario_to_json(back.city, back.queries).dump(), doc.dump());
    ASSERT_EQ(back.queries.size(), q.size());
    EXPECT_EQ(back.queries[3].embedding.values, q[3].embedding.values);
    EXPECT_EQ(back.city.landmarks(), city.landmarks());
}
