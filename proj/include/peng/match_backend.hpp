#pragma once

// Seam where a pointmap-matching network would sit. A backend turns a
// (reference view, query view) pair into PnP-ready correspondences: 3D
// points in the reference camera frame paired with query-image pixels.

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "peng/geometry.hpp"
#include "peng/error.hpp"
#include "peng/pnp.hpp"
#include "peng/synthcity.hpp"

namespace peng {

/// A graph node's crop for one edge, or a query image (edge empty).
struct ViewKey {
    std::string id;
    std::string edge;

    auto operator<=>(const ViewKey&) const = default;
    std::string key() const { return edge.empty() ? id : id + "@" + edge; }
};

struct PairHandle {
    ViewKey reference;
    ViewKey query;

    auto operator<=>(const PairHandle&) const = default;
    std::string key() const { return reference.key() + "|" + query.key(); }
};

nlohmann::json view_to_json(const ViewKey& v);
ViewKey view_from_json(const nlohmann::json& j);

class MatchBackend {
public:
    virtual ~MatchBackend() = default;
    virtual std::string name() const = 0;
    /// Deterministic per handle. Throws Errc::unknown_id or
    /// Errc::insufficient_overlap.
    virtual CorrespondenceSet match_pair(const PairHandle& handle) const = 0;
    /// Intrinsics of the image behind a view.
    virtual CameraIntrinsics intrinsics(const ViewKey& view) const = 0;
};

/// Ground-truth correspondences from a synthetic city.
CorrespondenceSet synthetic_match(const SyntheticCity& scene, std::span<const QueryScenario> queries,
                                  const PairHandle& handle, const MatchQuality& q, std::uint64_t seed);

class SyntheticBackend final : public MatchBackend {
public:
    /// Both referenced objects must outlive the backend.
    SyntheticBackend(const SyntheticCity& city, std::span<const QueryScenario> queries, MatchQuality quality,
                     std::uint64_t seed);

    std::string name() const override { return "synthetic"; }
    CorrespondenceSet match_pair(const PairHandle& handle) const override;
    CameraIntrinsics intrinsics(const ViewKey& view) const override;

    /// World -> camera ground truth for any resolvable view.
    Pose truth_pose(const ViewKey& view) const;

    const MatchQuality& quality() const noexcept { return quality_; }

private:
    const QueryScenario* find_query(const std::string& id) const;

    const SyntheticCity& city_;
    std::span<const QueryScenario> queries_;
    std::map<std::string, std::size_t> query_index_;
    MatchQuality quality_;
    std::uint64_t seed_;
};

/// Talks to an external matcher over stdin/stdout, one JSON object per line.
///
///   request  {"op":"match","pair":{"reference":{"id","edge"},"query":{"id","edge"}},"paths":{...}}
///   response {"correspondences":[{"world":[x,y,z],"pixel":[u,v]},...],"corrupted":[...]}
///   request  {"op":"intrinsics","view":{"id","edge"}}
///   response {"fx":..,"fy":..,"cx":..,"cy":..,"width":..,"height":..}
///
/// Any response may instead be {"error":{"code":"<errc>","message":"..."}}.
/// Calls are serialised over the single pipe.
class SubprocessBackend final : public MatchBackend {
public:
    SubprocessBackend(std::vector<std::string> argv, std::map<std::string, std::string> paths = {});
    ~SubprocessBackend() override;
    SubprocessBackend(const SubprocessBackend&) = delete;
    SubprocessBackend& operator=(const SubprocessBackend&) = delete;

    std::string name() const override { return "subprocess"; }
    CorrespondenceSet match_pair(const PairHandle& handle) const override;
    CameraIntrinsics intrinsics(const ViewKey& view) const override;

private:
    nlohmann::json call(const nlohmann::json& request) const;

    std::vector<std::string> argv_;
    std::map<std::string, std::string> paths_;
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    mutable std::string buffer_;
    mutable std::mutex mutex_;
};

/// Protocol helpers shared with server implementations.
nlohmann::json correspondences_to_json(const CorrespondenceSet& set);
CorrespondenceSet correspondences_from_json(const nlohmann::json& j);
nlohmann::json intrinsics_to_json(const CameraIntrinsics& K);
CameraIntrinsics intrinsics_from_json(const nlohmann::json& j);
Errc errc_from_string(std::string_view name);

/// Answers protocol requests using `backend`; returns the response line.
nlohmann::json serve_request(const MatchBackend& backend, const nlohmann::json& request);

}  // namespace peng
