#include "aerodiff/error.hpp"

namespace aerodiff {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Schedule: return "schedule";
        case ErrorKind::Index: return "index";
        case ErrorKind::Data: return "data";
        case ErrorKind::Plan: return "plan";
        case ErrorKind::Inference: return "inference";
        case ErrorKind::Config: return "config";
        case ErrorKind::Numerical: return "numerical";
        case ErrorKind::Normalization: return "normalization";
        case ErrorKind::Condition: return "condition";
        case ErrorKind::Statistics: return "statistics";
        case ErrorKind::Parse: return "parse";
        case ErrorKind::Validation: return "validation";
        case ErrorKind::Protocol: return "protocol";
        case ErrorKind::Evaluation: return "evaluation";
        case ErrorKind::Import: return "import";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace aerodiff
