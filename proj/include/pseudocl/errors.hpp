#pragma once

#include <stdexcept>
#include <string>

namespace pseudocl {

/// Base of every error thrown by the library. `kind()` is a stable short tag
/// used by the CLI for machine-parseable diagnostics.
class Error : public std::runtime_error {
public:
    Error(const char* kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    const char* kind() const noexcept { return kind_; }

private:
    const char* kind_;
};

#define PSEUDOCL_DEFINE_ERROR(Name, tag)                                    \
    class Name : public Error {                                             \
    public:                                                                 \
        explicit Name(const std::string& what) : Error(tag, what) {}        \
    };

PSEUDOCL_DEFINE_ERROR(InputShapeError, "input-shape")
PSEUDOCL_DEFINE_ERROR(ParameterError, "parameter")
PSEUDOCL_DEFINE_ERROR(LabelError, "label")
PSEUDOCL_DEFINE_ERROR(DataError, "data")
PSEUDOCL_DEFINE_ERROR(CardinalityError, "cardinality")
PSEUDOCL_DEFINE_ERROR(SelectionError, "selection")
PSEUDOCL_DEFINE_ERROR(DegenerateScaleError, "degenerate-scale")
PSEUDOCL_DEFINE_ERROR(NumericError, "numeric")
PSEUDOCL_DEFINE_ERROR(FormatError, "format")
PSEUDOCL_DEFINE_ERROR(IoError, "io")
PSEUDOCL_DEFINE_ERROR(ProtocolError, "protocol")

#undef PSEUDOCL_DEFINE_ERROR

}  // namespace pseudocl
