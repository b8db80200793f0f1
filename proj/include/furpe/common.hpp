#pragma once

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace furpe {

// Error hierarchy. The CLI maps these onto process exit codes:
// ConfigError/ValidationError -> 3, IoError -> 4, NumericError -> 5.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// One expert / one sub-model of the layered body model.
enum class Part { Body, Face, LeftHand, RightHand };

// Keypoint grouping used by the detector and the confidence thresholds
// (both hands share the "hand" group).
enum class PartClass { Body, Face, Hand };

enum class Side { None, Left, Right };

inline const char* to_string(Part p) {
  switch (p) {
    case Part::Body: return "body";
    case Part::Face: return "face";
    case Part::LeftHand: return "left_hand";
    case Part::RightHand: return "right_hand";
  }
  return "?";
}

inline const char* to_string(PartClass c) {
  switch (c) {
    case PartClass::Body: return "body";
    case PartClass::Face: return "face";
    case PartClass::Hand: return "hand";
  }
  return "?";
}

inline const char* to_string(Side s) {
  switch (s) {
    case Side::None: return "none";
    case Side::Left: return "left";
    case Side::Right: return "right";
  }
  return "?";
}

inline Part part_from_string(const std::string& s) {
  if (s == "body") return Part::Body;
  if (s == "face") return Part::Face;
  if (s == "left_hand") return Part::LeftHand;
  if (s == "right_hand") return Part::RightHand;
  throw ValidationError("unknown part tag: " + s);
}

inline PartClass part_class_from_string(const std::string& s) {
  if (s == "body") return PartClass::Body;
  if (s == "face") return PartClass::Face;
  if (s == "hand") return PartClass::Hand;
  throw ValidationError("unknown part class: " + s);
}

inline Side side_from_string(const std::string& s) {
  if (s == "none") return Side::None;
  if (s == "left") return Side::Left;
  if (s == "right") return Side::Right;
  throw ValidationError("unknown side: " + s);
}

inline PartClass part_class_of(Part p) {
  switch (p) {
    case Part::Body: return PartClass::Body;
    case Part::Face: return PartClass::Face;
    default: return PartClass::Hand;
  }
}

// Per-group detector confidence thresholds (body/hand/face).
struct ConfThresholds {
  double body = 0.1;
  double hand = 0.2;
  double face = 0.4;

  double for_class(PartClass c) const {
    switch (c) {
      case PartClass::Body: return body;
      case PartClass::Hand: return hand;
      case PartClass::Face: return face;
    }
    return body;
  }
};

// Log verbosity, controlled by the FURPE_LOG environment variable
// (error|warn|info|debug). Defaults to warn.
enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline LogLevel log_level_from_env() {
  const char* v = std::getenv("FURPE_LOG");
  if (!v) return LogLevel::Warn;
  std::string s(v);
  if (s == "error") return LogLevel::Error;
  if (s == "warn") return LogLevel::Warn;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Warn;
}

}  // namespace furpe
