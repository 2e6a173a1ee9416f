#pragma once

#include <stdexcept>
#include <string>

namespace fairsparse {

// Base for every error raised by the library. `kind()` is the stable,
// machine-readable tag printed by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

#define FAIRSPARSE_DEFINE_ERROR(Name)                                    \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  };

FAIRSPARSE_DEFINE_ERROR(DimensionError)
FAIRSPARSE_DEFINE_ERROR(RankError)
FAIRSPARSE_DEFINE_ERROR(IndexError)
FAIRSPARSE_DEFINE_ERROR(NumericError)
FAIRSPARSE_DEFINE_ERROR(RangeError)
FAIRSPARSE_DEFINE_ERROR(MonotonicityError)
FAIRSPARSE_DEFINE_ERROR(ConfigError)
FAIRSPARSE_DEFINE_ERROR(ParseError)
FAIRSPARSE_DEFINE_ERROR(FormatError)
FAIRSPARSE_DEFINE_ERROR(StateError)
FAIRSPARSE_DEFINE_ERROR(AggregationError)
FAIRSPARSE_DEFINE_ERROR(IoError)

#undef FAIRSPARSE_DEFINE_ERROR

}  // namespace fairsparse
