/* Copyright 2026 The Datapipe Authors. All Rights Reserved.

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
#ifndef DATAPIPE_ERRORS_HPP_
#define DATAPIPE_ERRORS_HPP_

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace datapipe {

enum class ErrorCode {
  kInvalidArity,
  kInvalidAttr,
  kTypeMismatch,
  kMalformedInput,
  kValidationFailed,
  kDuplicateName,
  kUnknownUdf,
  kMissingFile,
  kUdfError,
  kFingerprintMismatch,
  kVersionMismatch,
  kCorruptBlob,
  kConcurrentCacheFill,
  kRewriteDiverged,
  kRuleProducedInvalidGraph,
  kDomainError,
  kGridTooLarge,
  kParseError,
  kInternal,
};

const char* ErrorCodeName(ErrorCode code);

// Base class for all errors raised by the library. Carries a machine-readable
// code so callers can dispatch without string matching.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Element does not match the expected type; identifies the offending
// component.
class TypeMismatchError : public PipelineError {
 public:
  TypeMismatchError(int component_index, const std::string& message)
      : PipelineError(ErrorCode::kTypeMismatch,
                      "component " + std::to_string(component_index) + ": " +
                          message),
        component_index_(component_index) {}

  int component_index() const { return component_index_; }

 private:
  int component_index_;
};

class MalformedInputError : public PipelineError {
 public:
  MalformedInputError(size_t position, const std::string& reason)
      : PipelineError(ErrorCode::kMalformedInput,
                      "at byte " + std::to_string(position) + ": " + reason),
        position_(position) {}

  size_t position() const { return position_; }

 private:
  size_t position_;
};

// A user-defined function failed while processing the element at
// `element_index` (zero-based position in the node's input sequence).
class UdfError : public PipelineError {
 public:
  UdfError(uint64_t element_index, const std::string& cause)
      : PipelineError(ErrorCode::kUdfError,
                      "element " + std::to_string(element_index) + ": " +
                          cause),
        element_index_(element_index) {}

  uint64_t element_index() const { return element_index_; }

 private:
  uint64_t element_index_;
};

class ParseError : public PipelineError {
 public:
  ParseError(int line, int column, const std::string& message)
      : PipelineError(ErrorCode::kParseError,
                      "line " + std::to_string(line) + ", col " +
                          std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace datapipe

#endif  // DATAPIPE_ERRORS_HPP_
