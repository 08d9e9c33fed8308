#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace peng {

enum class Errc {
    schema,
    dangling_reference,
    unordered_secondaries,
    out_of_region,
    degenerate_geometry,
    unknown_id,
    dimension_mismatch,
    empty_database,
    zero_norm,
    invalid_argument,
    behind_camera,
    too_few_correspondences,
    degenerate_solution,
    insufficient_overlap,
    edge_failure,
    no_estimate,
    io,
};

std::string_view to_string(Errc code);

/// Every failure in the library is reported through this type. `subject`
/// carries the offending node/edge/query id when there is one.
class Error : public std::runtime_error {
public:
    Error(Errc code, std::string message, std::string subject = {})
        : std::runtime_error(std::string(to_string(code)) + ": " + message),
          code_(code),
          subject_(std::move(subject)) {}

    Errc code() const noexcept { return code_; }
    const std::string& subject() const noexcept { return subject_; }

private:
    Errc code_;
    std::string subject_;
};

inline std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::schema: return "schema";
        case Errc::dangling_reference: return "dangling-reference";
        case Errc::unordered_secondaries: return "unordered-secondaries";
        case Errc::out_of_region: return "out-of-region";
        case Errc::degenerate_geometry: return "degenerate-geometry";
        case Errc::unknown_id: return "unknown-id";
        case Errc::dimension_mismatch: return "dimension-mismatch";
        case Errc::empty_database: return "empty-database";
        case Errc::zero_norm: return "zero-norm";
        case Errc::invalid_argument: return "invalid-argument";
        case Errc::behind_camera: return "behind-camera";
        case Errc::too_few_correspondences: return "too-few-correspondences";
        case Errc::degenerate_solution: return "degenerate-solution";
        case Errc::insufficient_overlap: return "insufficient-overlap";
        case Errc::edge_failure: return "edge-failure";
        case Errc::no_estimate: return "no-estimate";
        case Errc::io: return "io";
    }
    return "unknown";
}

}  // namespace peng
