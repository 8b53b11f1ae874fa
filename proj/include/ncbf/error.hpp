#pragma once

#include <stdexcept>
#include <string>

namespace ncbf {

/// Invalid configuration: shapes, ranges, unknown keys, missing inputs.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (empty batch, wrong output arity).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed file contents. Carries the 1-based line where parsing stopped.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& path, std::size_t line, const std::string& what)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace ncbf
