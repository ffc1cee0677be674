#ifndef GIFKIT_ERRORS_HPP
#define GIFKIT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace gifkit {

/// Base class of every error raised by the library. `code()` is a short,
/// stable, machine-parsable identifier; `what()` carries the human text.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

    /// Process exit status used by the command line tool.
    virtual int exit_status() const noexcept { return 1; }

private:
    std::string code_;
};

class InputError : public Error {
public:
    explicit InputError(const std::string& m) : Error("E_INPUT", m) {}
    int exit_status() const noexcept override { return 2; }
};

class ParseError : public Error {
public:
    ParseError(const std::string& m, std::size_t line)
        : Error("E_PARSE", "line " + std::to_string(line) + ": " + m), line_(line) {}
    std::size_t line() const noexcept { return line_; }
    int exit_status() const noexcept override { return 3; }

private:
    std::size_t line_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error("E_CONFIG", m) {}
    int exit_status() const noexcept override { return 4; }
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& m) : Error("E_NUMERIC", m) {}
    int exit_status() const noexcept override { return 5; }
};

class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& m) : Error("E_DIVERGENCE", m) {}
    int exit_status() const noexcept override { return 6; }
};

class SingularityError : public Error {
public:
    explicit SingularityError(const std::string& m) : Error("E_SINGULAR", m) {}
    int exit_status() const noexcept override { return 7; }
};

class UnsupportedError : public Error {
public:
    explicit UnsupportedError(const std::string& m) : Error("E_UNSUPPORTED", m) {}
    int exit_status() const noexcept override { return 8; }
};

class IoError : public Error {
public:
    explicit IoError(const std::string& m) : Error("E_IO", m) {}
    int exit_status() const noexcept override { return 9; }
};

} // namespace gifkit

#endif // GIFKIT_ERRORS_HPP
