#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gmilab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
// On-disk representation matrices are float32, row-major (NPY C-order).
using FloatMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Base class for every error raised by the library. Each failure mode named by
// the data contracts has its own subclass so callers can dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GMILAB_DEFINE_ERROR(Name)        \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  };

GMILAB_DEFINE_ERROR(MissingFileError)
GMILAB_DEFINE_ERROR(FormatError)
GMILAB_DEFINE_ERROR(ShapeMismatchError)
GMILAB_DEFINE_ERROR(LabelLengthError)
GMILAB_DEFINE_ERROR(NonDenseLabelError)
GMILAB_DEFINE_ERROR(InvalidDataError)
GMILAB_DEFINE_ERROR(MissingAttributeError)
GMILAB_DEFINE_ERROR(UnsplittableClassError)
GMILAB_DEFINE_ERROR(SharedMarginalError)
GMILAB_DEFINE_ERROR(PreconditionError)
GMILAB_DEFINE_ERROR(DegenerateInputError)
GMILAB_DEFINE_ERROR(NotSymmetricError)
GMILAB_DEFINE_ERROR(SizeGuardError)
GMILAB_DEFINE_ERROR(DimensionMismatchError)
GMILAB_DEFINE_ERROR(EmptyStratumError)
GMILAB_DEFINE_ERROR(TokenRangeError)
GMILAB_DEFINE_ERROR(ConfigError)

#undef GMILAB_DEFINE_ERROR

}  // namespace gmilab
