// Copyright 2026 The PIE Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace pie {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or dimension bookkeeping.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside an operation's mathematical domain (log of x <= 0, division by zero).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// A coupling scale collapsed to (near) zero so the inverse is undefined.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration, unknown keys, invalid hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated data / checkpoint files.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace pie
