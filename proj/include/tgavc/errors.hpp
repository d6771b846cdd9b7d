#pragma once

#include <stdexcept>
#include <string>

namespace tgavc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  /// Throws a copy of the same error type with "context: " prepended.
  [[noreturn]] virtual void rethrow_with_context(const std::string& context) const {
    throw Error(context + ": " + what());
  }
};

#define TGAVC_DEFINE_ERROR(Name)                                                   \
  class Name : public Error {                                                      \
   public:                                                                         \
    using Error::Error;                                                            \
    [[noreturn]] void rethrow_with_context(const std::string& context) const override { \
      throw Name(context + ": " + what());                                         \
    }                                                                              \
  };

TGAVC_DEFINE_ERROR(DecodeError)
TGAVC_DEFINE_ERROR(EmptyInputError)
TGAVC_DEFINE_ERROR(ParameterError)
TGAVC_DEFINE_ERROR(FileError)
TGAVC_DEFINE_ERROR(TokenizationError)
TGAVC_DEFINE_ERROR(AlignmentError)
TGAVC_DEFINE_ERROR(ValidationError)
TGAVC_DEFINE_ERROR(ContractError)
TGAVC_DEFINE_ERROR(CheckpointError)
TGAVC_DEFINE_ERROR(ConfigError)
TGAVC_DEFINE_ERROR(NonFiniteError)

#undef TGAVC_DEFINE_ERROR

}  // namespace tgavc
