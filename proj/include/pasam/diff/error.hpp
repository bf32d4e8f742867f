#pragma once

#include <stdexcept>
#include <string>

namespace pasam {

/// Base for every error raised by the library. `kind()` is a short stable tag
/// used by the CLI to build single-line machine-parsable reasons.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define PASAM_DEFINE_ERROR(Name, tag)                                  \
    class Name : public Error {                                        \
    public:                                                            \
        explicit Name(const std::string& what) : Error(tag, what) {}   \
    };

PASAM_DEFINE_ERROR(DimensionError, "dimension")
PASAM_DEFINE_ERROR(ParameterError, "parameter")
PASAM_DEFINE_ERROR(DomainError, "domain")
PASAM_DEFINE_ERROR(BoundsError, "bounds")
PASAM_DEFINE_ERROR(ContractError, "contract")
PASAM_DEFINE_ERROR(ConfigError, "config")
PASAM_DEFINE_ERROR(InputError, "input")
PASAM_DEFINE_ERROR(IoError, "io")
PASAM_DEFINE_ERROR(NumericError, "numeric")
PASAM_DEFINE_ERROR(CompatibilityError, "compatibility")
PASAM_DEFINE_ERROR(UsageError, "usage")

#undef PASAM_DEFINE_ERROR

}  // namespace pasam
