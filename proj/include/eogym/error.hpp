#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eogym {

// Machine-readable failure codes shared by every module. The kebab-case
// spelling from to_string() is what appears in observations, wire messages
// and CLI diagnostics.
enum class ErrorCode {
    io_error,
    unreadable_manifest,
    invalid_record,
    duplicate_record,
    asymmetric_companion,
    duplicate_order_key,
    unknown_record,
    no_temporal_group,
    out_of_range,
    degenerate_aoi,
    missing_provenance,
    invalid_dims,
    invalid_box,
    dimension_mismatch,
    missing_band,
    unknown_platform,
    unknown_theme,
    unknown_family,
    unknown_tool,
    illegal_arguments,
    no_ground_truth,
    backend_failure,
    budget_exhausted,
    session_closed,
    unknown_task,
    unknown_session,
    missing_start_record,
    protocol_error,
    empty_input,
    invalid_argument,
    undefined_kappa,
    remote_failure,
    division_by_zero,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace eogym
