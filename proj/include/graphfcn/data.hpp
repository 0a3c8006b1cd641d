#pragma once

// Synthetic shape dataset and binary PPM/PGM raster I/O.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphfcn/errors.hpp"
#include "graphfcn/labels.hpp"
#include "graphfcn/tensor.hpp"

namespace gfcn {

struct Sample {
  Tensor image;  ///< 3×H×W in [0,1]
  LabelMap labels;
  std::string id;
};

// ------------------------------------------------------------------ generator

namespace detail {

struct Box {
  long r0, c0, r1, c1;  // inclusive-exclusive

  bool overlaps(const Box& o, long margin) const {
    return !(r1 + margin <= o.r0 || o.r1 + margin <= r0 || c1 + margin <= o.c0 || o.c1 + margin <= c0);
  }
};

// Base colors for classes 1..3 (rectangle, disc, triangle).
inline constexpr double kShapeColors[3][3] = {
    {0.85, 0.25, 0.20},
    {0.20, 0.75, 0.30},
    {0.25, 0.35, 0.85},
};

inline bool inside_shape(int kind, const Box& b, double y, double x) {
  const double h = static_cast<double>(b.r1 - b.r0), w = static_cast<double>(b.c1 - b.c0);
  const double ly = y - static_cast<double>(b.r0), lx = x - static_cast<double>(b.c0);
  switch (kind) {
    case 1:
      return true;
    case 2: {
      const double dy = (ly - h / 2) / (h / 2), dx = (lx - w / 2) / (w / 2);
      return dx * dx + dy * dy <= 1.0;
    }
    default: {
      // Apex at the top centre, base along the bottom edge.
      const double t = ly / h;
      return std::abs(lx - w / 2) <= t * w / 2;
    }
  }
}

}  // namespace detail

/// count images of textured background (class 0) with 1–3 non-overlapping
/// filled shapes; shape kind k ∈ {rectangle, disc, triangle} is class k.
inline std::vector<Sample> generate_shapes(std::size_t count, std::size_t height, std::size_t width,
                                           std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2 || num_classes > 4) {
    throw ParameterError("generate_shapes: num_classes must lie in [2, 4], got " + std::to_string(num_classes));
  }
  if (height < 32 || width < 32) throw ParameterError("generate_shapes: images must be at least 32x32");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  const long H = static_cast<long>(height), W = static_cast<long>(width);
  const std::size_t shape_classes = num_classes - 1;

  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "shape_%05zu", n);
    s.id = id;
    s.image = Tensor({3, height, width});
    s.labels = LabelMap(height, width, 0);

    double base[3], amp[3], phase[3];
    for (int c = 0; c < 3; ++c) {
      base[c] = 0.3 + 0.3 * unit(rng);
      amp[c] = 0.05 + 0.1 * unit(rng);
      phase[c] = 6.283185307179586 * unit(rng);
    }
    const double fy = 0.1 + 0.4 * unit(rng), fx = 0.1 + 0.4 * unit(rng);
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c)
          s.image.at(c, y, x) = base[c] + amp[c] * std::sin(fx * x + fy * y + phase[c]);

    const int num_shapes = 1 + static_cast<int>(unit(rng) * 3.0);
    std::vector<detail::Box> placed;
    const long min_side = std::max(6L, std::min(H, W) / 5), max_side = std::min(H, W) * 2 / 5;
    for (int k = 0; k < num_shapes; ++k) {
      const int kind = 1 + static_cast<int>(unit(rng) * static_cast<double>(shape_classes));
      double color[3];
      for (int c = 0; c < 3; ++c) color[c] = detail::kShapeColors[kind - 1][c] + 0.24 * (unit(rng) - 0.5);
      for (int attempt = 0; attempt < 50; ++attempt) {
        const long bh = min_side + static_cast<long>(unit(rng) * static_cast<double>(max_side - min_side + 1));
        const long bw = min_side + static_cast<long>(unit(rng) * static_cast<double>(max_side - min_side + 1));
        const long r0 = static_cast<long>(unit(rng) * static_cast<double>(H - bh + 1));
        const long c0 = static_cast<long>(unit(rng) * static_cast<double>(W - bw + 1));
        const detail::Box box{r0, c0, r0 + bh, c0 + bw};
        if (std::any_of(placed.begin(), placed.end(), [&](const auto& p) { return p.overlaps(box, 2); })) {
          continue;
        }
        placed.push_back(box);
        for (long y = box.r0; y < box.r1; ++y)
          for (long x = box.c0; x < box.c1; ++x) {
            if (!detail::inside_shape(kind, box, y + 0.5, x + 0.5)) continue;
            s.labels.at(y, x) = static_cast<Label>(kind);
            for (int c = 0; c < 3; ++c) s.image.at(c, y, x) = color[c];
          }
        break;
      }
    }
    for (auto& v : s.image.data()) v = std::clamp(v + noise(rng), 0.0, 1.0);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- raster I/O

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::string& header,
                        const std::vector<unsigned char>& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

/// Netpbm header: magic, width, height, maxval, one whitespace byte.
struct PnmHeader {
  std::size_t width = 0, height = 0, maxval = 0, data_offset = 0;
};

inline PnmHeader parse_pnm_header(const std::vector<unsigned char>& bytes, const char* magic) {
  std::size_t pos = 0;
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw FormatError(std::string("expected magic ") + magic, 0);
  }
  pos = 2;
  auto is_space = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  auto read_number = [&](const char* field) {
    for (;;) {
      while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') {
      throw FormatError(std::string("expected ") + field, pos);
    }
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (pos - start > 9) throw FormatError(std::string(field) + " too large", start);
      ++pos;
    }
    return v;
  };
  PnmHeader h;
  h.width = read_number("width");
  h.height = read_number("height");
  const std::size_t maxval_at = pos;
  h.maxval = read_number("maxval");
  if (h.width == 0 || h.height == 0) throw FormatError("zero image extent", maxval_at);
  if (h.maxval == 0 || h.maxval > 255) throw FormatError("maxval must lie in [1, 255]", maxval_at);
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw FormatError("expected whitespace after maxval", pos);
  h.data_offset = pos + 1;
  return h;
}

inline std::string pnm_header(const char* magic, std::size_t w, std::size_t h) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

}  // namespace detail

/// Reads a binary P6 image as 3×H×W in [0,1].
inline Tensor read_ppm(const std::filesystem::path& path) {
  const auto bytes = detail::read_bytes(path);
  const auto h = detail::parse_pnm_header(bytes, "P6");
  const std::size_t need = h.width * h.height * 3;
  if (bytes.size() < h.data_offset + need) {
    throw FormatError("truncated pixel data in '" + path.string() + "'", bytes.size());
  }
  Tensor img({3, h.height, h.width});
  const double scale = static_cast<double>(h.maxval);
  for (std::size_t y = 0; y < h.height; ++y)
    for (std::size_t x = 0; x < h.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = bytes[h.data_offset + (y * h.width + x) * 3 + c] / scale;
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("write_ppm expects 3×H×W, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<unsigned char> body(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        body[(y * w + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0));
  detail::write_bytes(path, detail::pnm_header("P6", w, h), body);
}

/// Reads a binary P5 label raster verbatim.
inline LabelMap read_pgm(const std::filesystem::path& path) {
  const auto bytes = detail::read_bytes(path);
  const auto h = detail::parse_pnm_header(bytes, "P5");
  if (bytes.size() < h.data_offset + h.width * h.height) {
    throw FormatError("truncated pixel data in '" + path.string() + "'", bytes.size());
  }
  LabelMap m(h.height, h.width);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset), m.size(), m.data.begin());
  return m;
}

inline void write_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  detail::write_bytes(path, detail::pnm_header("P5", labels.width, labels.height),
                      std::vector<unsigned char>(labels.data.begin(), labels.data.end()));
}

inline void write_prediction(const LabelMap& labels, const std::filesystem::path& path) { write_pgm(path, labels); }

inline Sample read_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                          std::size_t num_classes) {
  Sample s;
  s.image = read_ppm(image_path);
  s.labels = read_pgm(label_path);
  if (s.labels.height != s.image.dim(1) || s.labels.width != s.image.dim(2)) {
    throw ValidationError("image '" + image_path.string() + "' and labels '" + label_path.string() +
                          "' differ in size");
  }
  validate_labels(s.labels, num_classes);
  s.id = image_path.stem().string();
  return s;
}

// ----------------------------------------------------------- dataset layout

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// root/images/<id>.ppm, root/labels/<id>.pgm, root/split.json.
inline void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  nlohmann::ordered_json split;
  split["train"] = nlohmann::ordered_json::array();
  split["test"] = nlohmann::ordered_json::array();
  auto emit = [&](const std::vector<Sample>& part, const char* key) {
    for (const auto& s : part) {
      write_ppm(root / "images" / (s.id + ".ppm"), s.image);
      write_pgm(root / "labels" / (s.id + ".pgm"), s.labels);
      split[key].push_back(s.id);
    }
  };
  emit(ds.train, "train");
  emit(ds.test, "test");
  std::ofstream(root / "split.json") << split.dump(2) << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& root, std::size_t num_classes) {
  std::ifstream in(root / "split.json");
  if (!in) throw Error("missing split.json in '" + root.string() + "'");
  nlohmann::json split;
  try {
    split = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("split.json: " + std::string(e.what()), e.byte);
  }
  Dataset ds;
  auto load = [&](const char* key, std::vector<Sample>& dst) {
    if (!split.contains(key) || !split[key].is_array()) throw ValidationError(std::string("split.json lacks '") + key + "' array");
    for (const auto& id : split[key]) {
      const std::string name = id.get<std::string>();
      dst.push_back(read_sample(root / "images" / (name + ".ppm"), root / "labels" / (name + ".pgm"), num_classes));
    }
  };
  load("train", ds.train);
  load("test", ds.test);
  return ds;
}

}  // namespace gfcn
