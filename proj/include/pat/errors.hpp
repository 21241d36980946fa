/*
 * Copyright 2026 The patprune Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace pat {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Inconsistent layer chain, tensor shape or mask shape.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A gradient or loss went non-finite during training.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& what, int epoch = -1)
        : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// Misuse of an API contract (missing forward pass, empty inputs, ...).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Pruning could not be scheduled or selected under the given constraints.
class PruneError : public Error {
public:
    using Error::Error;
};

/// Bad configuration value or missing mode-specific field.
class ConfigError : public Error {
public:
    using Error::Error;
};

// File format errors. Each on-disk failure mode has its own type so callers
// can tell a wrong file from a damaged one.
class FormatError : public Error {
public:
    using Error::Error;
};

class TruncatedError : public Error {
public:
    using Error::Error;
};

class CountMismatchError : public Error {
public:
    using Error::Error;
};

class VersionError : public Error {
public:
    using Error::Error;
};

class CorruptError : public Error {
public:
    using Error::Error;
};

class SpecMismatchError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace pat
