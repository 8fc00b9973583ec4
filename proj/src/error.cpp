#include "ccnn/error.hpp"

namespace ccnn {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::bad_magic: return "bad magic";
    case ErrorCode::unsupported_version: return "unsupported version";
    case ErrorCode::truncated_blob: return "truncated blob";
    case ErrorCode::unknown_layer_kind: return "unknown layer kind";
    case ErrorCode::shape_mismatch: return "shape mismatch";
    case ErrorCode::empty_model: return "empty model";
    case ErrorCode::invalid_model: return "invalid model";
    case ErrorCode::empty_eval_set: return "empty evaluation set";
    case ErrorCode::label_out_of_range: return "label out of range";
    case ErrorCode::io_failure: return "i/o failure";
    case ErrorCode::parse_error: return "parse error";
    case ErrorCode::format_mismatch: return "format mismatch";
    case ErrorCode::accumulator_width: return "accumulator too narrow";
    case ErrorCode::index_out_of_range: return "index out of range";
    case ErrorCode::invalid_config: return "invalid configuration";
    case ErrorCode::no_feasible_config: return "no feasible configuration";
    case ErrorCode::infeasible_tolerance: return "infeasible tolerance";
    }
    return "unknown error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

}  // namespace ccnn
