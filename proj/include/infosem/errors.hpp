#pragma once

#include <stdexcept>
#include <string>

namespace infosem {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// numkit
struct SingularMatrix : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct InvalidScale : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };

// autodiff
struct UnregisteredPrimitive : Error { using Error::Error; };

// models / training
struct MissingInput : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };

// dataio
struct ParseError : Error { using Error::Error; };
struct DuplicateGene : Error { using Error::Error; };
struct EmptyFile : Error { using Error::Error; };
struct UnknownGene : Error { using Error::Error; };
struct DuplicateEdge : Error { using Error::Error; };
struct InvalidLabel : Error { using Error::Error; };
struct MissingGeneEmbedding : Error { using Error::Error; };
struct NegativeValueWithLog1p : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct SchemaVersionMismatch : Error { using Error::Error; };

// evalbench
struct TooFewGenes : Error { using Error::Error; };
struct DegenerateLabels : Error { using Error::Error; };
struct DegenerateInput : Error { using Error::Error; };

} // namespace infosem
