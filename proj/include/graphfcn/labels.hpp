#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "graphfcn/errors.hpp"

namespace gfcn {

using Label = std::uint8_t;

/// Pixels/nodes carrying this value are excluded from losses and metrics.
inline constexpr Label kIgnoreLabel = 255;

/// H×W grid of class indices, row-major.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Label> data;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, Label fill = 0)
      : height(h), width(w), data(h * w, fill) {}

  Label& at(std::size_t r, std::size_t c) { return data[r * width + c]; }
  Label at(std::size_t r, std::size_t c) const { return data[r * width + c]; }
  std::size_t size() const noexcept { return data.size(); }

  bool operator==(const LabelMap&) const = default;
};

/// Throws ValidationError if any non-ignore label is >= num_classes.
inline void validate_labels(const LabelMap& map, std::size_t num_classes) {
  for (std::size_t i = 0; i < map.size(); ++i) {
    const Label v = map.data[i];
    if (v != kIgnoreLabel && v >= num_classes) {
      throw ValidationError("label " + std::to_string(v) + " at pixel (" +
                            std::to_string(i / map.width) + "," +
                            std::to_string(i % map.width) + ") exceeds class count " +
                            std::to_string(num_classes));
    }
  }
}

}  // namespace gfcn
