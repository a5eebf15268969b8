#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace inkuba {

enum class ErrorKind {
  ConfigInvalid,
  TemplateInvalid,
  TemplateMissing,
  TrainingDataEmpty,
  IdOutOfRange,
  VocabMismatch,
  CorpusMismatch,
  PairInvalid,
  LabelUnknown,
  ContextTooLong,
  DataInvalid,
  Io,
  NumericalDivergence,
};

std::string_view to_string(ErrorKind kind);

// Process exit code for an error kind: 1 user/config, 2 data, 3 numerical.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace inkuba
