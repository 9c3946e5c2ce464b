#pragma once

#include <stdexcept>
#include <string>

namespace lsaq {

enum class Errc {
    invalid_argument,
    duplicate_name,
    shape_mismatch,
    truncated,
    bad_header,
    out_of_bounds,
    overlapping,
    missing_tensor,
    dimension_mismatch,
    insufficient_memory,
    no_budget,
    bad_unit,
    unmatched_layer,
    not_matrix,
    missing_scales,
    io,
};

const char* to_string(Errc code);

// Single exception type for the toolkit; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace lsaq
