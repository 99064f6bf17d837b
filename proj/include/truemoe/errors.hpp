#pragma once

#include <stdexcept>
#include <string>

namespace truemoe {

// Every failure raised by the library derives from Error. The CLI maps the
// categories onto exit codes (config 2, state 3, I/O 4).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class StateError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class DecodeError : public IoError {
public:
    using IoError::IoError;
};

}  // namespace truemoe
