// Copyright 2026 The Authors.
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

namespace pcore {

// Broad failure categories. The CLI maps these onto exit codes.
enum class ErrorKind {
  kInvalidArgument,
  kConfig,
  kIo,
  kFormat,
  kBudget,
  kDiverged,
};

inline const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kBudget: return "budget";
    case ErrorKind::kDiverged: return "diverged";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// IDX parse failures are distinguishable by reason.
enum class IdxFailure { kBadMagic, kTruncated, kCountMismatch };

class IdxError : public Error {
 public:
  IdxError(IdxFailure reason, const std::string& what)
      : Error(ErrorKind::kFormat, what), reason_(reason) {}

  IdxFailure reason() const { return reason_; }

 private:
  IdxFailure reason_;
};

inline void require(bool cond, const std::string& what,
                    ErrorKind kind = ErrorKind::kInvalidArgument) {
  if (!cond) throw Error(kind, what);
}

}  // namespace pcore
