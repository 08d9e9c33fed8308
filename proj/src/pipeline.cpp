#include "peng/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "peng/error.hpp"
#include "peng/match_backend.hpp"
#include "peng/priors.hpp"
#include "peng/rng.hpp"

namespace peng {

void PipelineConfig::validate() const {
    if (!(theta_c >= 0.0 && theta_c <= 1.0)) throw Error(Errc::invalid_argument, "theta_c must lie in [0, 1]");
    if (k < 1) throw Error(Errc::invalid_argument, "k must be >= 1");
    if (!(theta_re > 0.0)) throw Error(Errc::invalid_argument, "theta_re must be positive");
    if (theta_n < 1) throw Error(Errc::invalid_argument, "theta_n must be >= 1");
    if (!(yaw_threshold > 0.0 && yaw_threshold <= 180.0)) {
        throw Error(Errc::invalid_argument, "yaw_threshold must lie in (0, 180]");
    }
    if (!(axis_weights.minCoeff() > 0.0)) throw Error(Errc::invalid_argument, "axis weights must be positive");
    ransac_offline.validate();
    ransac_online.validate();
}

namespace {

struct EdgeContext {
    std::vector<std::string> chain;
    std::vector<LocalPoint> positions;
    std::vector<Rotation> attitudes;
    Rotation median;
    bool has_priors = false;
};

EdgeContext edge_context(const CityGraph& graph, const std::string& edge_id, const PriorStore* store) {
    EdgeContext ctx;
    ctx.chain = graph.reference_chain(edge_id);
    for (const auto& node : ctx.chain) ctx.positions.push_back(graph.to_local(graph.location(node)));
    const EdgePrior* prior = store ? store->find(edge_id) : nullptr;
    if (prior && prior->nodes == ctx.chain) {
        ctx.attitudes = prior->attitudes;
        ctx.median = prior->median;
        ctx.has_priors = true;
    } else {
        for (const auto& node : ctx.chain) ctx.attitudes.push_back(heading_attitude(view_yaw(graph, node, edge_id)));
        ctx.median = median_rotation(ctx.attitudes);
    }
    return ctx;
}

// World -> camera pose of reference j at ground level; heights cancel in the
// relative transfers below.
Pose reference_world_pose(const EdgeContext& ctx, std::size_t j) {
    return camera_pose(ctx.attitudes[j], Vec3(ctx.positions[j].east, ctx.positions[j].north, 0.0));
}

/// Query-from-reference-j pose implied by a query-from-reference-k estimate.
Pose transfer(const EdgeContext& ctx, const Pose& q_from_k, std::size_t k, std::size_t j) {
    return q_from_k * reference_world_pose(ctx, k) * reference_world_pose(ctx, j).inverse();
}

struct Placed {
    LocalPoint position;
    Rotation attitude;
};

Placed place(const EdgeContext& ctx, std::size_t j, const Pose& relative) {
    const Vec3 offset = ctx.attitudes[j] * relative_offset_body(relative);
    return {{ctx.positions[j].east + offset.x(), ctx.positions[j].north + offset.y()},
            compose_attitude(ctx.attitudes[j], relative)};
}

std::optional<PoseEstimate> try_estimate(const Query& query, const std::string& edge_id, const std::string& node,
                                         const MatchBackend& backend, const CameraIntrinsics& K,
                                         const RansacConfig& base, std::uint64_t seed, const char* stage,
                                         const std::optional<Pose>& init, std::string& why) {
    const PairHandle h{{node, edge_id}, {query.id, ""}};
    try {
        const CorrespondenceSet matches = backend.match_pair(h);
        RansacConfig rc = base;
        rc.seed = derive_seed(seed, std::string("ransac/") + stage + "/" + h.key());
        return relative_pose_from_matches(matches, K, rc, init);
    } catch (const Error& e) {
        if (e.code() == Errc::unknown_id || e.code() == Errc::io || e.code() == Errc::schema) throw;
        why = e.what();
        return std::nullopt;
    }
}

}  // namespace

int select_position(const std::vector<std::optional<PoseEstimate>>& estimates) {
    constexpr double kRmsTolerance = 1e-6;
    int best = -1;
    for (int i = 0; i < static_cast<int>(estimates.size()); ++i) {
        if (!estimates[i]) continue;
        if (best < 0) {
            best = i;
            continue;
        }
        const PoseEstimate& a = *estimates[i];
        const PoseEstimate& b = *estimates[best];
        if (a.inlier_count != b.inlier_count) {
            if (a.inlier_count > b.inlier_count) best = i;
            continue;
        }
        if (std::abs(a.rms_reprojection - b.rms_reprojection) > kRmsTolerance) {
            if (a.rms_reprojection < b.rms_reprojection) best = i;
            continue;
        }
        if (a.pose.translation.norm() < b.pose.translation.norm()) best = i;
    }
    return best;
}

EdgePoseResult process_edge(const Query& query, const CityGraph& graph, const std::string& edge_id,
                            const PriorStore* store, const MatchBackend& backend, const PipelineConfig& cfg) {
    const EdgeContext ctx = edge_context(graph, edge_id, store);
    const RansacConfig& rcfg = ctx.has_priors ? cfg.ransac_online : cfg.ransac_offline;
    const CameraIntrinsics K = backend.intrinsics({query.id, ""});
    const std::size_t m = ctx.chain.size();

    // Coarse position: every reference on the edge.
    std::vector<std::optional<PoseEstimate>> estimates(m);
    std::string why = "no reference produced a pose";
    int best = -1;
    for (std::size_t j = 0; j < m; ++j) {
        std::optional<Pose> init;
        if (ctx.has_priors && best >= 0) init = transfer(ctx, estimates[best]->pose, static_cast<std::size_t>(best), j);
        estimates[j] = try_estimate(query, edge_id, ctx.chain[j], backend, K, rcfg, cfg.seed, "position", init, why);
        if (estimates[j]) best = select_position(estimates);
    }
    if (best < 0) throw Error(Errc::edge_failure, why, edge_id);
    const std::size_t tp = static_cast<std::size_t>(best);

    EdgePoseResult r;
    r.edge = edge_id;
    r.t_p = best;
    r.refined = *estimates[tp];

    if (!cfg.refine) {
        r.position = ctx.positions[tp];
        r.attitude = place(ctx, tp, estimates[tp]->pose).attitude;
    } else {
        const std::size_t lo = tp == 0 ? 0 : tp - 1;
        const std::size_t hi = std::min(tp + 1, m - 1);
        struct Sample {
            std::size_t ref;
            PoseEstimate est;
        };
        std::vector<Sample> samples;
        for (std::size_t j : {lo, hi}) {
            const Pose init = transfer(ctx, estimates[tp]->pose, tp, j);
            std::string ignored;
            if (auto est = try_estimate(query, edge_id, ctx.chain[j], backend, K, rcfg, cfg.seed, "refine", init, ignored)) {
                samples.push_back({j, std::move(*est)});
            }
        }
        r.neighbours_used = static_cast<int>(samples.size());
        r.degraded = samples.size() < 2;
        if (samples.empty()) {
            const Placed p = place(ctx, tp, estimates[tp]->pose);
            r.position = p.position;
            r.attitude = p.attitude;
        } else {
            double w_total = 0.0;
            double east = 0.0;
            double north = 0.0;
            Rotation att;
            for (std::size_t i = 0; i < samples.size(); ++i) {
                const Placed p = place(ctx, samples[i].ref, samples[i].est.pose);
                const double w = static_cast<double>(samples[i].est.inlier_count);
                east += w * p.position.east;
                north += w * p.position.north;
                att = i == 0 ? p.attitude : att.slerp(p.attitude, w / (w_total + w));
                w_total += w;
            }
            r.position = {east / w_total, north / w_total};
            r.attitude = att;
            const auto heavier = std::max_element(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
                return a.est.inlier_count < b.est.inlier_count;
            });
            r.refined = heavier->est;
        }
    }

    const double length = graph.arc_lengths(edge_id).back();
    r.fraction = std::clamp(project_onto_edge(graph, edge_id, r.position) / length, 0.0, 1.0);
    r.rotation_error = weighted_rotation_error(r.attitude, ctx.median, cfg.axis_weights);
    return r;
}

void fuse_scores(std::vector<EdgePoseResult>& results, FusionPolicy policy) {
    if (results.empty()) return;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& r : results) {
        lo = std::min(lo, r.rotation_error);
        hi = std::max(hi, r.rotation_error);
    }
    for (auto& r : results) {
        r.stage2_confidence = hi > lo ? 1.0 - (r.rotation_error - lo) / (hi - lo) : 1.0;
        r.fused_score = policy == FusionPolicy::product ? r.stage1_confidence * r.stage2_confidence
                                                        : 0.5 * (r.stage1_confidence + r.stage2_confidence);
    }
}

LocalisationResult localise(const Query& query, const CityGraph& graph, const EmbeddingDatabase& db,
                            const PriorStore* store, const MatchBackend& backend, const PipelineConfig& cfg) {
    cfg.validate();
    LocalisationResult out;
    out.query = query.id;

    const std::vector<CandidateScore> scores = score_candidates(query.embedding, db);
    std::vector<CandidateScore> candidates = select_candidates(scores, cfg.theta_c, cfg.k).candidates;
    if (candidates.empty()) {
        candidates.push_back(scores.front());
        out.low_confidence = true;
    }

    const auto start = std::chrono::steady_clock::now();
    int halted = -1;
    for (const auto& cand : candidates) {
        if (out.candidates_processed >= cfg.theta_n || halted >= 0) break;
        ++out.candidates_processed;
        for (const auto& edge_id : compass_filter_edges(graph, cand.node, query.compass_reading, cfg.yaw_threshold)) {
            ++out.edges_processed;
            try {
                EdgePoseResult r = process_edge(query, graph, edge_id, store, backend, cfg);
                r.candidate = cand.node;
                r.stage1_confidence = cand.confidence;
                out.per_edge.push_back(std::move(r));
                if (out.per_edge.back().rotation_error <= cfg.theta_re) {
                    halted = static_cast<int>(out.per_edge.size()) - 1;
                    break;
                }
            } catch (const Error& e) {
                if (e.code() != Errc::edge_failure) throw;
                out.failures.push_back({edge_id, cand.node, e.what()});
            }
        }
    }
    out.stage2_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (out.per_edge.empty()) {
        std::string detail = std::to_string(out.edges_processed) + " edges processed, none produced a pose";
        if (!out.failures.empty()) detail += "; first failure on " + out.failures.front().edge + ": " + out.failures.front().reason;
        throw Error(Errc::no_estimate, detail, query.id);
    }

    fuse_scores(out.per_edge, cfg.fusion);
    std::size_t winner = 0;
    if (halted >= 0) {
        winner = static_cast<std::size_t>(halted);
        out.early_stop = true;
    } else {
        for (std::size_t i = 1; i < out.per_edge.size(); ++i) {
            const auto& a = out.per_edge[i];
            const auto& b = out.per_edge[winner];
            if (a.fused_score > b.fused_score ||
                (a.fused_score == b.fused_score && a.rotation_error < b.rotation_error)) {
                winner = i;
            }
        }
    }
    const EdgePoseResult& w = out.per_edge[winner];
    out.edge = w.edge;
    out.fraction = w.fraction;
    out.position = interpolate_on_edge(graph, w.edge, w.fraction);
    out.rotation = w.attitude;
    out.heading = compass_heading(w.attitude);
    out.stage1_confidence = w.stage1_confidence;
    out.stage2_confidence = w.stage2_confidence;
    out.fused_score = w.fused_score;
    return out;
}

std::vector<QueryOutcome> localise_all(const std::vector<Query>& queries, const CityGraph& graph,
                                       const EmbeddingDatabase& db, const PriorStore* store,
                                       const MatchBackend& backend, const PipelineConfig& cfg, int workers) {
    cfg.validate();
    std::vector<QueryOutcome> out(queries.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < queries.size(); i = next++) {
            out[i].query = queries[i].id;
            try {
                out[i].result = localise(queries[i], graph, db, store, backend, cfg);
            } catch (const std::exception& e) {
                out[i].error = e.what();
            }
        }
    };
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(queries.size())));
    if (n == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < n; ++t) pool.emplace_back(work);
    }
    std::sort(out.begin(), out.end(), [](const QueryOutcome& a, const QueryOutcome& b) { return a.query < b.query; });
    return out;
}

}  // namespace peng
