#pragma once

#include <stdexcept>
#include <string>

namespace apo {

// Exit-code carrying error categories surfaced by the CLI.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class MissingArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace apo
