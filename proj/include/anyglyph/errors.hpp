#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace anyglyph {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ANYGLYPH_ERROR(Name)          \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  }

ANYGLYPH_ERROR(ShapeMismatch);
ANYGLYPH_ERROR(InvalidRange);
ANYGLYPH_ERROR(StepOutOfRange);
ANYGLYPH_ERROR(UnrenderableCodepoint);
ANYGLYPH_ERROR(CanvasTooSmall);
ANYGLYPH_ERROR(EmptyCharset);
ANYGLYPH_ERROR(IOFailure);
ANYGLYPH_ERROR(UntrainedModel);
ANYGLYPH_ERROR(EmptyPrompt);
ANYGLYPH_ERROR(InvalidCoefficient);
ANYGLYPH_ERROR(ImageTooSmall);
ANYGLYPH_ERROR(TooFewSamples);
ANYGLYPH_ERROR(NonFiniteFeatures);
ANYGLYPH_ERROR(ManifestMismatch);
ANYGLYPH_ERROR(DatasetEmpty);
ANYGLYPH_ERROR(CorruptCheckpoint);
ANYGLYPH_ERROR(VersionMismatch);
ANYGLYPH_ERROR(InvalidConfig);

#undef ANYGLYPH_ERROR

/// Raised when a training step produces a NaN/Inf loss. Carries the step and
/// the sample ids of the offending batch.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(long step, std::vector<std::string> batch_ids)
      : Error(make_message(step, batch_ids)), step_(step), batch_ids_(std::move(batch_ids)) {}

  long step() const { return step_; }
  const std::vector<std::string>& batch_ids() const { return batch_ids_; }

 private:
  static std::string make_message(long step, const std::vector<std::string>& ids) {
    std::string msg = "non-finite loss at step " + std::to_string(step) + "; batch:";
    for (const auto& id : ids) msg += " " + id;
    return msg;
  }

  long step_;
  std::vector<std::string> batch_ids_;
};

}  // namespace anyglyph
