#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prosolabel {

// Every failure the library reports carries one of these codes so callers
// (and tests) can branch on the kind without parsing messages.
enum class Errc {
  MalformedRecord,
  UnknownSymbol,
  AlignmentMismatch,
  UnlabeledUtterance,
  EmptyWaveform,
  InvalidBand,
  BadMagic,
  HeaderShapeMismatch,
  NonFiniteValue,
  LayerCountMismatch,
  DurationSumMismatch,
  MissingStream,
  PhonemeCountMismatch,
  DimMismatch,
  EmptyMask,
  NonFiniteGradient,
  InvalidConfig,
  Io,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MalformedRecord: return "MalformedRecord";
    case Errc::UnknownSymbol: return "UnknownSymbol";
    case Errc::AlignmentMismatch: return "AlignmentMismatch";
    case Errc::UnlabeledUtterance: return "UnlabeledUtterance";
    case Errc::EmptyWaveform: return "EmptyWaveform";
    case Errc::InvalidBand: return "InvalidBand";
    case Errc::BadMagic: return "BadMagic";
    case Errc::HeaderShapeMismatch: return "HeaderShapeMismatch";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::LayerCountMismatch: return "LayerCountMismatch";
    case Errc::DurationSumMismatch: return "DurationSumMismatch";
    case Errc::MissingStream: return "MissingStream";
    case Errc::PhonemeCountMismatch: return "PhonemeCountMismatch";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace prosolabel
