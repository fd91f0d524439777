#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace lre {

enum class Modality { TXT = 0, IMG = 1, VID = 2, DOC = 3 };

inline constexpr std::array<Modality, 4> kAllModalities = {
    Modality::TXT, Modality::IMG, Modality::VID, Modality::DOC};

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::TXT: return "txt";
    case Modality::IMG: return "img";
    case Modality::VID: return "vid";
    case Modality::DOC: return "doc";
  }
  return "?";
}

inline Modality modality_from_string(const std::string& s) {
  if (s == "txt") return Modality::TXT;
  if (s == "img") return Modality::IMG;
  if (s == "vid") return Modality::VID;
  if (s == "doc") return Modality::DOC;
  throw std::invalid_argument("unknown modality: " + s);
}

// Grid geometry shared by IMG/VID/DOC payloads.
inline constexpr int kGridSide = 6;
inline constexpr int kGridCells = kGridSide * kGridSide;
inline constexpr int kVidFrames = 4;
inline constexpr int kShapeCount = 6;
inline constexpr int kColorCount = 6;
inline constexpr int kDocWordCount = 12;
inline constexpr int kDocRoleCount = 4;

// Raw feature width per cell before the learned projection into the model
// dimension. TXT payloads are plain tokens and carry no feature cells.
inline constexpr int raw_feature_dim(Modality m) {
  switch (m) {
    case Modality::TXT: return 0;
    case Modality::IMG: return kShapeCount + kColorCount + 2 * kGridSide;       // 24
    case Modality::VID: return kShapeCount + kColorCount + 2 * kGridSide + kVidFrames;  // 28
    case Modality::DOC: return kDocWordCount + kDocRoleCount + 2 * kGridSide;  // 28
  }
  return 0;
}

}  // namespace lre
