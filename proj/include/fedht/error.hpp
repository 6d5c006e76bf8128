#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedht {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

/// Argument outside the domain of a theory formula (e.g. tau <= tau_star).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Contraction factor >= 1, so a round-count bound does not exist.
class TheoryInvalidError : public Error {
public:
    using Error::Error;
};

class EstimationError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::string source, std::size_t line, const std::string& what)
        : Error(source + ":" + std::to_string(line) + ": " + what),
          source_(std::move(source)), line_(line) {}

    const std::string& source() const noexcept { return source_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string source_;
    std::size_t line_;
};

/// A local iterate became non-finite.
class DivergenceError : public Error {
public:
    DivergenceError(std::size_t round, std::size_t client, std::size_t step)
        : Error("divergence at round " + std::to_string(round) + ", client " +
                std::to_string(client) + ", local step " + std::to_string(step)),
          round_(round), client_(client), step_(step) {}

    std::size_t round() const noexcept { return round_; }
    std::size_t client() const noexcept { return client_; }
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t round_;
    std::size_t client_;
    std::size_t step_;
};

}  // namespace fedht
