#include "inkuba/error.hpp"

namespace inkuba {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::TemplateInvalid: return "TemplateInvalid";
    case ErrorKind::TemplateMissing: return "TemplateMissing";
    case ErrorKind::TrainingDataEmpty: return "TrainingDataEmpty";
    case ErrorKind::IdOutOfRange: return "IdOutOfRange";
    case ErrorKind::VocabMismatch: return "VocabMismatch";
    case ErrorKind::CorpusMismatch: return "CorpusMismatch";
    case ErrorKind::PairInvalid: return "PairInvalid";
    case ErrorKind::LabelUnknown: return "LabelUnknown";
    case ErrorKind::ContextTooLong: return "ContextTooLong";
    case ErrorKind::DataInvalid: return "DataInvalid";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::NumericalDivergence: return "NumericalDivergence";
  }
  return "Unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigInvalid:
    case ErrorKind::TemplateInvalid:
    case ErrorKind::TemplateMissing:
    case ErrorKind::Io:
      return 1;
    case ErrorKind::NumericalDivergence:
      return 3;
    default:
      return 2;
  }
}

}  // namespace inkuba
