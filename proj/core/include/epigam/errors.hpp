#pragma once

#include <stdexcept>
#include <string>

namespace epigam {

/// Base class for every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define EPIGAM_DEFINE_ERROR(Name, tag)                                  \
    class Name : public Error {                                         \
    public:                                                             \
        explicit Name(const std::string& message) : Error(tag, message) {} \
    }

EPIGAM_DEFINE_ERROR(InvalidInputError, "invalid_input");
EPIGAM_DEFINE_ERROR(DomainError, "domain");
EPIGAM_DEFINE_ERROR(NumericalError, "numerical");
EPIGAM_DEFINE_ERROR(ConfigError, "configuration");
EPIGAM_DEFINE_ERROR(LookupError, "lookup");
EPIGAM_DEFINE_ERROR(ShapeError, "shape");
EPIGAM_DEFINE_ERROR(SchemaError, "schema");
EPIGAM_DEFINE_ERROR(PreconditionError, "precondition");
EPIGAM_DEFINE_ERROR(EmptyMetricError, "empty_metric");
EPIGAM_DEFINE_ERROR(AutodiffError, "autodiff");
EPIGAM_DEFINE_ERROR(DivergenceError, "divergence");
EPIGAM_DEFINE_ERROR(ArtifactError, "artifact");
EPIGAM_DEFINE_ERROR(IoError, "io");

#undef EPIGAM_DEFINE_ERROR

} // namespace epigam
