#pragma once

#include <stdexcept>
#include <string>

namespace region_r1 {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numeric / data errors
struct ZeroVectorError : Error { using Error::Error; };
struct DimensionMismatchError : Error { using Error::Error; };
struct EmptyDatasetError : Error { using Error::Error; };
struct EmptyConditioningSetError : Error { using Error::Error; };
struct MissingPositiveError : Error { using Error::Error; };
struct MissingClassError : Error { using Error::Error; };
struct NonFiniteGradientError : Error { using Error::Error; };

// Geometry / configuration errors
struct MalformedBoxError : Error { using Error::Error; };
struct OutOfBoundsError : Error { using Error::Error; };
struct ConfigInfeasibleError : Error { using Error::Error; };

// Ingestion errors
struct SchemaError : Error {
    SchemaError(std::size_t row, const std::string& field, const std::string& what)
        : Error("row " + std::to_string(row) + ", field '" + field + "': " + what),
          row(row),
          field(field) {}
    std::size_t row;
    std::string field;
};

// Decision-parser errors
struct ParseError : Error { using Error::Error; };
struct NoDecisionFieldError : ParseError { using ParseError::ParseError; };
struct UnknownDecisionValueError : ParseError { using ParseError::ParseError; };
struct MissingToolCallError : ParseError { using ParseError::ParseError; };
struct BadBBoxArityError : ParseError { using ParseError::ParseError; };
struct MalformedJsonError : ParseError { using ParseError::ParseError; };

struct IoError : Error { using Error::Error; };

}  // namespace region_r1
