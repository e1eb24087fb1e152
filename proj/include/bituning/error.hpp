/*
 * Copyright 2026 The bituning Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
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

namespace bituning {

// Process exit codes used by the command line driver.
enum class ExitCode : int { kOk = 0, kValidation = 1, kNumerical = 2, kIo = 3 };

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kValidation)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Shapes that do not line up for an operation.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension error: " + what) {}
};

// NaN or Inf produced or supplied anywhere in the numeric pipeline.
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& what)
      : Error("non-finite value: " + what, ExitCode::kNumerical) {}
};

// Inputs that are well-shaped but mathematically unusable (zero-norm rows, empty pools).
class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& what)
      : Error("degenerate input: " + what, ExitCode::kNumerical) {}
};

class EmptyPoolError : public Error {
 public:
  explicit EmptyPoolError(const std::string& what) : Error("empty key pool: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("i/o: " + what, ExitCode::kIo) {}
};

// Malformed delimited input. Line numbers are 1-based and count the header.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class RaggedRowError : public ParseError {
 public:
  RaggedRowError(std::size_t line, std::size_t got, std::size_t expected)
      : ParseError("ragged row: " + std::to_string(got) + " fields, expected " +
                       std::to_string(expected),
                   line) {}
};

class NonNumericCellError : public ParseError {
 public:
  NonNumericCellError(std::size_t line, std::size_t column, const std::string& cell)
      : ParseError("non-numeric cell '" + cell + "' in column " + std::to_string(column), line) {}
};

}  // namespace bituning
