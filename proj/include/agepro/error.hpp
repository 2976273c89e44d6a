#pragma once

#include <stdexcept>
#include <string>

namespace agepro {

/// Base of every error raised by the library. `kind()` names the failure
/// class so callers (the CLI in particular) can map it without RTTI games.
class Error : public std::runtime_error {
public:
    Error(const char* kind, const std::string& what)
        : std::runtime_error(std::string(kind) + ": " + what), kind_(kind) {}

    const char* kind() const noexcept { return kind_; }

private:
    const char* kind_;
};

#define AGEPRO_DEFINE_ERROR(Name)                                   \
    class Name : public Error {                                     \
    public:                                                         \
        explicit Name(const std::string& what) : Error(#Name, what) {} \
    };

AGEPRO_DEFINE_ERROR(ParseError)
AGEPRO_DEFINE_ERROR(MalformedLandmarks)
AGEPRO_DEFINE_ERROR(SchemaError)
AGEPRO_DEFINE_ERROR(RangeError)
AGEPRO_DEFINE_ERROR(IoError)
AGEPRO_DEFINE_ERROR(LandmarkOutOfBounds)
AGEPRO_DEFINE_ERROR(DegenerateShape)
AGEPRO_DEFINE_ERROR(EmptyInput)
AGEPRO_DEFINE_ERROR(ShapeError)
AGEPRO_DEFINE_ERROR(NumericError)
AGEPRO_DEFINE_ERROR(DegenerateAtom)
AGEPRO_DEFINE_ERROR(DegenerateInput)
AGEPRO_DEFINE_ERROR(DataError)
AGEPRO_DEFINE_ERROR(ConfigError)

#undef AGEPRO_DEFINE_ERROR

}  // namespace agepro
