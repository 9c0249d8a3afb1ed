#include "eogym/error.hpp"

namespace eogym {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::io_error: return "io-error";
        case ErrorCode::unreadable_manifest: return "unreadable-manifest";
        case ErrorCode::invalid_record: return "invalid-record";
        case ErrorCode::duplicate_record: return "duplicate-record";
        case ErrorCode::asymmetric_companion: return "asymmetric-companion";
        case ErrorCode::duplicate_order_key: return "duplicate-order-key";
        case ErrorCode::unknown_record: return "unknown-record";
        case ErrorCode::no_temporal_group: return "no-temporal-group";
        case ErrorCode::out_of_range: return "out-of-range";
        case ErrorCode::degenerate_aoi: return "degenerate-aoi";
        case ErrorCode::missing_provenance: return "missing-provenance";
        case ErrorCode::invalid_dims: return "invalid-dims";
        case ErrorCode::invalid_box: return "invalid-box";
        case ErrorCode::dimension_mismatch: return "dimension-mismatch";
        case ErrorCode::missing_band: return "missing-band";
        case ErrorCode::unknown_platform: return "unknown-platform";
        case ErrorCode::unknown_theme: return "unknown-theme";
        case ErrorCode::unknown_family: return "unknown-family";
        case ErrorCode::unknown_tool: return "unknown-tool";
        case ErrorCode::illegal_arguments: return "illegal-arguments";
        case ErrorCode::no_ground_truth: return "no-ground-truth";
        case ErrorCode::backend_failure: return "backend-failure";
        case ErrorCode::budget_exhausted: return "budget-exhausted";
        case ErrorCode::session_closed: return "session-closed";
        case ErrorCode::unknown_task: return "unknown-task";
        case ErrorCode::unknown_session: return "unknown-session";
        case ErrorCode::missing_start_record: return "missing-start-record";
        case ErrorCode::protocol_error: return "protocol-error";
        case ErrorCode::empty_input: return "empty-input";
        case ErrorCode::invalid_argument: return "invalid-argument";
        case ErrorCode::undefined_kappa: return "undefined-kappa";
        case ErrorCode::remote_failure: return "remote-failure";
        case ErrorCode::division_by_zero: return "division-by-zero";
    }
    return "unknown";
}

}  // namespace eogym
