#ifndef MSDNN_ERRORS_HPP
#define MSDNN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace msdnn {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

struct MetricError : std::runtime_error {
    explicit MetricError(const std::string& msg) : std::runtime_error("metric error: " + msg) {}
};

} // namespace msdnn

#endif
