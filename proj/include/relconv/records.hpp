#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "relconv/error.hpp"

namespace relconv {

enum class Gender { M, F };
enum class View { PA, AP };
enum class Split { Train, Val, Test };

inline std::string_view to_string(Gender g) { return g == Gender::M ? "M" : "F"; }
inline std::string_view to_string(View v) { return v == View::PA ? "PA" : "AP"; }
inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

inline Gender parse_gender(std::string_view s) {
  if (s == "M") return Gender::M;
  if (s == "F") return Gender::F;
  throw ValidationError("unknown gender '" + std::string(s) + "'");
}

inline View parse_view(std::string_view s) {
  if (s == "PA") return View::PA;
  if (s == "AP") return View::AP;
  throw ValidationError("unknown view position '" + std::string(s) + "'");
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val" || s == "validation") return Split::Val;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

/// Metadata for one image. `labels` holds one 0/1 entry per class; all zero
/// means no finding.
struct ImageRecord {
  std::string image_id;
  std::string patient_id;
  int age = 0;
  Gender gender = Gender::M;
  View view = View::PA;
  std::vector<std::uint8_t> labels;
  Split split = Split::Train;

  bool operator==(const ImageRecord&) const = default;
};

inline std::vector<ImageRecord> records_in(const std::vector<ImageRecord>& records, Split split) {
  std::vector<ImageRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

}  // namespace relconv
