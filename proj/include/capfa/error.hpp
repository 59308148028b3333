#pragma once

#include <stdexcept>
#include <string>

namespace capfa {

// Bad or inconsistent input data (maps to CLI exit code 2).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Optimizer or linear algebra failure (exit code 3).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Precondition violated by the caller.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Results were produced but failed a quality diagnostic, e.g. MCMC
// non-mixing (exit code 4).
class DiagnosticError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace capfa
