// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

#include <stdexcept>
#include <string>

namespace colornerf {

/// Lab value that does not map into the sRGB cube.
class OutOfGamutError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A single colorizer query failed; the caller may skip the patch.
class ColorizerError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Wire-format violation on the subprocess colorizer channel.
class ProtocolError : public ColorizerError {
public:
  using ColorizerError::ColorizerError;
};

/// The colorizer can no longer answer any query (child exited, pipe closed).
class ColorizerUnavailable : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class NonFiniteGradient : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace colornerf
