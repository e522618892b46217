// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace pixdec {

/// Tensor shapes that do not line up (mismatched operands, indivisible sides).
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A scalar argument outside its admissible range (t outside [0,1], M > N, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Archive could not be read or does not verify.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IntegrityError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class VersionError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class MissingCheckpointError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

/// Non-finite loss during optimization.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace pixdec
