#pragma once

#include <stdexcept>
#include <string>

namespace patrec {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: ConfigError -> 2, DependencyError -> 3, DataError (and subtypes) -> 4.

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A required upstream artifact (split file, pattern store, checkpoint) is missing.
struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input line; message carries the line number.
struct ParseError : DataError {
    using DataError::DataError;
};

// Structurally valid input violating a declared schema (e.g. attrs list
// length differs from items length).
struct SchemaError : DataError {
    using DataError::DataError;
};

// A caller violated an operation precondition (wrong attribute type,
// out-of-range target, item missing from the catalog).
struct InputError : DataError {
    using DataError::DataError;
};

// Tensor shape mismatch; message names the op and the offending dims.
struct ShapeError : DataError {
    using DataError::DataError;
};

// Programming-contract violation (non-scalar loss, double backward, mixed
// tapes): a bug in calling code, not in the data.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

}  // namespace patrec
