#pragma once

#include <stdexcept>
#include <string>

namespace diffbody {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    using Error::Error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

// Raised for malformed inputs to pure numeric routines (shape mismatch etc).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace diffbody
