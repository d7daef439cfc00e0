#pragma once

#include <cassert>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace mtpatcher {

// Typed error codes shared across all pipeline stages.
enum class ErrorCode {
    InvalidArgument,
    MissingBinding,
    ParseFailure,
    SpanMismatch,
    EmptyAnalogy,
    AuthError,
    BackendBusy,
    RateLimitExhausted,
    NetworkError,
    RequestRejected,
    MalformedResponse,
    NoScriptMatch,
    SampleTooLarge,
    SplitTooLarge,
    DuplicateWord,
    LengthMismatch,
    EmptyCorpus,
    ConfigError,
    MissingInput,
    StageFailure,
    ResumeMismatch,
    LockHeld,
    IoError,
};

const char* error_code_name(ErrorCode code);

struct Error {
    ErrorCode code;
    std::string message;

    std::string to_string() const {
        return std::string(error_code_name(code)) + ": " + message;
    }
};

inline Error make_error(ErrorCode code, std::string message) {
    return Error{code, std::move(message)};
}

/// Either a value or a typed Error. value() throws std::runtime_error when
/// called on an error result, so tests can unwrap with a readable message.
template <typename T>
class Result {
public:
    Result(T value) : state_(std::move(value)) {}
    Result(Error error) : state_(std::move(error)) {}

    bool ok() const { return std::holds_alternative<T>(state_); }
    explicit operator bool() const { return ok(); }

    const T& value() const& {
        if (!ok()) throw std::runtime_error("Result::value on error: " + error().to_string());
        return std::get<T>(state_);
    }
    T& value() & {
        if (!ok()) throw std::runtime_error("Result::value on error: " + error().to_string());
        return std::get<T>(state_);
    }
    T&& value() && {
        if (!ok()) throw std::runtime_error("Result::value on error: " + error().to_string());
        return std::get<T>(std::move(state_));
    }
    const T& operator*() const& { return value(); }
    T& operator*() & { return value(); }
    T&& operator*() && { return std::move(*this).value(); }
    const T* operator->() const { return &value(); }
    T* operator->() { return &value(); }

    const Error& error() const {
        assert(!ok());
        return std::get<Error>(state_);
    }
    ErrorCode code() const { return error().code; }

private:
    std::variant<T, Error> state_;
};

struct Unit {};
using Status = Result<Unit>;

inline Status ok_status() { return Status(Unit{}); }

}  // namespace mtpatcher
