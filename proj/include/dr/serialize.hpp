#pragma once

#include <optional>
#include <string>

#include "dr/distill.hpp"
#include "dr/models.hpp"

namespace dr {

/// Checkpoint container: magic line, little-endian u64 JSON header length,
/// JSON header, then a flat little-endian float64 payload.
void save_params(const std::string& path, const ModelSpec& model,
                 const Params<double>& params);
Params<double> load_params(const std::string& path, const ModelSpec& model);

/// Distilled-memory artifact: JSON header (shapes, labels, distill config,
/// seeds, optional image shape for export) + float64 payload holding the
/// samples then the one-hot labels.
void save_memory(const std::string& path, const DistilledMemory<double>& mem,
                 const DistillConfig& cfg,
                 const std::optional<Shape>& image_shape);
struct LoadedMemory {
  DistilledMemory<double> memory;
  DistillConfig config;
  std::optional<Shape> image_shape;
};
LoadedMemory load_memory(const std::string& path);

/// 8-bit grayscale PGM. Pixels are clamped to [0,1] and scaled to 0..255
/// rounding half up (0.5 -> 128).
void write_pgm(const std::string& path, const double* pixels, std::size_t h,
               std::size_t w);

}  // namespace dr
