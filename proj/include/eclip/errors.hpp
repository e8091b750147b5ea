// Copyright 2026-present the eclip project
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

namespace eclip {

// Root of every error this library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extents do not agree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed data (out-of-range token id, schema violation, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure; message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

// A persisted file is truncated or carries a bad header.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Generator transport failed (timeout, broken pipe, HTTP error). Retriable.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace eclip
