#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rsgen {

// Root of every error raised by the library. The CLI maps subclasses onto
// exit codes, so keep the hierarchy shallow.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& what)
        : Error("invalid " + field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

// Raised when one or more rows fail to decode. Carries every offending id.
class RecordError : public Error {
public:
    explicit RecordError(std::vector<std::string> source_ids);

    const std::vector<std::string>& source_ids() const noexcept { return ids_; }

private:
    std::vector<std::string> ids_;
};

class IoError : public Error {
public:
    using Error::Error;
};

class StateError : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class InternalError : public Error {
public:
    using Error::Error;
};

// A long-running job stopped early; `last_completed` is the last step/epoch/task
// whose result was durably recorded.
class JobError : public Error {
public:
    JobError(const std::string& what, long long last_completed)
        : Error(what), last_completed_(last_completed) {}

    long long last_completed() const noexcept { return last_completed_; }

private:
    long long last_completed_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class MissingArtifactError : public Error {
public:
    using Error::Error;
};

}  // namespace rsgen
