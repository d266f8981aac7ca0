#include "error.hpp"

namespace nelastic {

const char* error_kind_name(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Usage: return "usage";
        case ErrorKind::Config: return "config";
        case ErrorKind::Hypothesis: return "hypothesis";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::Invariant: return "invariant";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

}  // namespace nelastic
