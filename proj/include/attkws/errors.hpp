/* Copyright 2026 The attkws Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace attkws {

// Common base so callers can catch everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimension mismatch.
struct ShapeError : Error {
  using Error::Error;
};

// NaN or non-finite values where finite math is required.
struct NumericError : Error {
  using Error::Error;
};

// Invalid hyperparameter or model/task combination.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed RIFF/WAVE container.
struct DecodeError : Error {
  using Error::Error;
};

// Well-formed WAV that uses an encoding we do not handle.
struct UnsupportedFormat : Error {
  using Error::Error;
};

// Dataset directory or split list problems.
struct ManifestError : Error {
  using Error::Error;
};

// Corrupt, truncated or version-incompatible checkpoint file.
struct CheckpointError : Error {
  using Error::Error;
};

// CLI-level I/O failure (cannot write an output file, etc).
struct CliError : Error {
  using Error::Error;
};

}  // namespace attkws
