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
#include "datapipe/errors.hpp"

namespace datapipe {

const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArity:
      return "InvalidArity";
    case ErrorCode::kInvalidAttr:
      return "InvalidAttr";
    case ErrorCode::kTypeMismatch:
      return "TypeMismatch";
    case ErrorCode::kMalformedInput:
      return "MalformedInput";
    case ErrorCode::kValidationFailed:
      return "ValidationFailed";
    case ErrorCode::kDuplicateName:
      return "DuplicateName";
    case ErrorCode::kUnknownUdf:
      return "UnknownUdf";
    case ErrorCode::kMissingFile:
      return "MissingFile";
    case ErrorCode::kUdfError:
      return "UdfError";
    case ErrorCode::kFingerprintMismatch:
      return "FingerprintMismatch";
    case ErrorCode::kVersionMismatch:
      return "VersionMismatch";
    case ErrorCode::kCorruptBlob:
      return "CorruptBlob";
    case ErrorCode::kConcurrentCacheFill:
      return "ConcurrentCacheFill";
    case ErrorCode::kRewriteDiverged:
      return "RewriteDiverged";
    case ErrorCode::kRuleProducedInvalidGraph:
      return "RuleProducedInvalidGraph";
    case ErrorCode::kDomainError:
      return "DomainError";
    case ErrorCode::kGridTooLarge:
      return "GridTooLarge";
    case ErrorCode::kParseError:
      return "ParseError";
    case ErrorCode::kInternal:
      return "Internal";
  }
  return "Unknown";
}

}  // namespace datapipe
