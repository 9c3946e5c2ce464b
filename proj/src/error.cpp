#include "lsaq/error.hpp"

namespace lsaq {

const char* to_string(Errc code) {
    switch (code) {
        case Errc::invalid_argument: return "invalid argument";
        case Errc::duplicate_name: return "duplicate name";
        case Errc::shape_mismatch: return "shape mismatch";
        case Errc::truncated: return "truncated file";
        case Errc::bad_header: return "malformed header";
        case Errc::out_of_bounds: return "offsets out of bounds";
        case Errc::overlapping: return "overlapping entries";
        case Errc::missing_tensor: return "missing tensor";
        case Errc::dimension_mismatch: return "dimension mismatch";
        case Errc::insufficient_memory: return "insufficient memory";
        case Errc::no_budget: return "no memory budget";
        case Errc::bad_unit: return "unparseable size";
        case Errc::unmatched_layer: return "unmatched layer";
        case Errc::not_matrix: return "not a matrix";
        case Errc::missing_scales: return "missing scales";
        case Errc::io: return "i/o error";
    }
    return "unknown error";
}

}  // namespace lsaq
