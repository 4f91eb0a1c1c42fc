#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace mfm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define MFM_DEFINE_ERROR(Name)            \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
    const char* kind() const noexcept override { return #Name; } \
  }

MFM_DEFINE_ERROR(PreconditionError);
MFM_DEFINE_ERROR(ShapeMismatch);
MFM_DEFINE_ERROR(DimensionMismatch);
MFM_DEFINE_ERROR(FactorizationFailure);
MFM_DEFINE_ERROR(NonFiniteGradient);
MFM_DEFINE_ERROR(NonFiniteScore);
MFM_DEFINE_ERROR(NonFiniteState);
MFM_DEFINE_ERROR(NonFiniteLoss);
MFM_DEFINE_ERROR(NonFiniteProposal);
MFM_DEFINE_ERROR(TooFewSamples);
MFM_DEFINE_ERROR(DegenerateWeights);
MFM_DEFINE_ERROR(ConfigError);
MFM_DEFINE_ERROR(IoError);

#undef MFM_DEFINE_ERROR

inline void require(bool cond, const std::string& what) {
  if (!cond) throw PreconditionError(what);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
  return m.allFinite();
}

}  // namespace mfm
