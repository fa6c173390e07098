// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace stepwise {

/// Base class for every error raised by this library. The CLI maps the three
/// branches below onto exit codes (config=2, backend=3, data=4).
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class BackendError : public Error {
  public:
    using Error::Error;
};

class DataError : public Error {
  public:
    using Error::Error;
};

// --- config ---

class ConfigParseError : public ConfigError {
  public:
    using ConfigError::ConfigError;
};

class UnknownKeyError : public ConfigError {
  public:
    explicit UnknownKeyError(const std::string& key)
        : ConfigError("unknown config key: " + key) {}
};

/// A remote backend was selected without a usable endpoint or auth token.
class MissingEndpointError : public ConfigError {
  public:
    using ConfigError::ConfigError;
};

// --- backend ---

class BackendUnavailable : public BackendError {
  public:
    using BackendError::BackendError;
};

/// The backend returned an unusable completion (empty text) even after retry.
class MalformedCompletion : public BackendError {
  public:
    using BackendError::BackendError;
};

/// A reward backend replied with a non-numeric value or one outside [0,1].
/// Out-of-range replies are rejected, never clamped.
class InvalidProbability : public BackendError {
  public:
    using BackendError::BackendError;
};

/// Every candidate of a search round (or every rollout of a batch) failed.
class AllCandidatesFailed : public BackendError {
  public:
    using BackendError::BackendError;
};

// --- data ---

/// A domain type invariant was violated on a construction path.
class DomainError : public DataError {
  public:
    using DataError::DataError;
};

class EmptyAfterNormalization : public DataError {
  public:
    using DataError::DataError;
};

/// Joining the given segments with the reserved separator would not split
/// back into the same segments.
class SeparatorCollision : public DataError {
  public:
    using DataError::DataError;
};

class EmptyScoreList : public DataError {
  public:
    using DataError::DataError;
};

class NoAnswersAvailable : public DataError {
  public:
    using DataError::DataError;
};

class MissingGoldAnswer : public DataError {
  public:
    using DataError::DataError;
};

class UnverifiedRollout : public DataError {
  public:
    using DataError::DataError;
};

class UnparseableAugmentation : public DataError {
  public:
    using DataError::DataError;
};

}  // namespace stepwise
