#ifndef DRDID_ERRORS_HPP
#define DRDID_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace drdid {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// CSV / ingestion
struct MalformedFile : Error { using Error::Error; };
struct SchemaViolation : Error { using Error::Error; };
struct DegenerateDesign : Error { using Error::Error; };

// Feature expansion
struct NonPositiveLog : Error { using Error::Error; };

// Model fitting
struct SingularInformation : Error { using Error::Error; };

// Estimation
struct MissingNuisance : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };

// Bootstrap
struct TooManyFailures : Error { using Error::Error; };

} // namespace drdid

#endif
