#pragma once

#include <stdexcept>
#include <string>

namespace qadapt {

/// Base of every error raised by the toolkit. `kind()` is a stable short tag
/// used by the CLI when it prints the one-line error record.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

/// Filesystem read/write failure.
class StorageError : public Error {
public:
    StorageError(const std::string& path, const std::string& what)
        : Error("storage", path + ": " + what), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// A file exists but does not follow its declared format.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error("format", what) {}
};

/// A caller broke an operation's precondition (shape, range, consistency).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error("contract", what) {}
};

/// Missing or rejected credentials for a remote service.
class CredentialError : public Error {
public:
    explicit CredentialError(const std::string& what) : Error("credential", what) {}
};

/// Network failure after retries were exhausted.
class TransportError : public Error {
public:
    explicit TransportError(const std::string& what) : Error("transport", what) {}
};

/// Numerical breakdown during optimization.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

}  // namespace qadapt
