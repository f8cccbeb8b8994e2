#pragma once

#include <stdexcept>
#include <string>

namespace subact {

// Configuration problems map to CLI exit code 2, data problems to 3.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

}  // namespace subact
