#pragma once

#include <stdexcept>
#include <string>

namespace ga {

/// Violated precondition of a public operation.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Operand shapes do not conform.
class ShapeError : public ContractError {
public:
    using ContractError::ContractError;
};

/// A point id (or other key) was not found.
class LookupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file; the message carries file/row/column context.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ga
