// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace chunkflow {

enum class ErrorKind {
  kInvalidShape,
  kOracleFailure,
  kDomain,
  kConfig,
  kDiracKernel,
  kSingularDrift,
  kLayout,
  kShape,
  kLevel,
  kWeighting,
  kRewardEvaluation,
  kIo,
  kDependency,
  kTrainingFailure,
  kFormat,
};

const char* error_kind_name(ErrorKind kind);

// Single exception type for the library; the kind maps 1:1 onto the C API
// error codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace chunkflow
