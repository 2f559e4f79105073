#pragma once

#include <stdexcept>
#include <string>

namespace passorder {

/// Bad user-supplied configuration (geometry, demand, training flags).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (e.g. an order that is not a permutation).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// File could not be read, written or parsed.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A request the library refuses to run as stated (e.g. unbounded enumeration for large N).
class RefusalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure during training (non-finite gradient and similar).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace passorder
