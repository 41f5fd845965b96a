#pragma once

#include <stdexcept>
#include <string>

namespace hita {

// Base of every error the library raises. Subclasses name the failure class;
// the message carries the offending key, constraint, path or shape.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class StateError : public Error {
public:
    using Error::Error;
};

// A required artifact (checkpoint, token dump) is missing or does not match.
class DependencyError : public Error {
public:
    using Error::Error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

}    // namespace hita
