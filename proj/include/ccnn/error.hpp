#pragma once

#include <stdexcept>
#include <string>

namespace ccnn {

enum class ErrorCode {
    bad_magic,
    unsupported_version,
    truncated_blob,
    unknown_layer_kind,
    shape_mismatch,
    empty_model,
    invalid_model,
    empty_eval_set,
    label_out_of_range,
    io_failure,
    parse_error,
    format_mismatch,
    accumulator_width,
    index_out_of_range,
    invalid_config,
    no_feasible_config,
    infeasible_tolerance,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }
    // The message without the code prefix.
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

}  // namespace ccnn
