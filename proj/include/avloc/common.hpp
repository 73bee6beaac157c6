#pragma once

#include <stdexcept>
#include <string>

namespace avloc {

// Error taxonomy. The CLI maps these onto process exit codes:
//   ConfigError / DomainError / ShapeError -> 1 (bad configuration or input)
//   StateError / IoError                  -> 2 (missing or unusable artifact)
//   NumericError                          -> 3 (runtime numeric failure)
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ShapeError : public DomainError {
public:
    using DomainError::DomainError;
};

class StateError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitMissingArtifact = 2;
inline constexpr int kExitNumeric = 3;

inline constexpr const char* kVersion = "0.1.0";

} // namespace avloc
