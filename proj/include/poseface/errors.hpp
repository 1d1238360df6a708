#pragma once

#include <stdexcept>
#include <string>

namespace poseface {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor operands with incompatible or unexpected shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, domain violations, or failed numeric sanity checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A landmark scaled outside the target raster.
class OutOfFrameError : public Error {
 public:
  using Error::Error;
};

// Ill-conditioned linear systems (collinear correspondences and the like).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// A matrix column with (near-)zero norm where a unit column is required.
class DegenerateColumnError : public DegenerateError {
 public:
  using DegenerateError::DegenerateError;
};

// A feature row with (near-)zero norm where a unit embedding is required.
class DegenerateEmbeddingError : public DegenerateError {
 public:
  using DegenerateError::DegenerateError;
};

// A score set missing one of the two label populations.
class DegenerateScoreError : public Error {
 public:
  using Error::Error;
};

// Fold partitions that cannot support cross-validation.
class FoldError : public Error {
 public:
  using Error::Error;
};

// Use of an autoencoder that has not been trained and frozen.
class NotPretrainedError : public Error {
 public:
  using Error::Error;
};

// An empty training or evaluation collection.
class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

// Malformed bytes or text in a serialized artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

// An invalid dataset or model specification.
class SpecError : public Error {
 public:
  using Error::Error;
};

// An invalid or unknown run configuration entry.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A required input artifact that does not exist on disk.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace poseface
