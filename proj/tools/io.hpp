#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffcollage/core.hpp"
#include "diffcollage/graph.hpp"

namespace dc::cli {

/// One sample per row, %.17g, no header.
void write_samples_csv(const std::string& path, const std::vector<Vector>& samples);
/// Inverse of write_samples_csv. Throws IoError naming the row on ragged or non-numeric input.
std::vector<Vector> read_samples_csv(const std::string& path);

void write_text(const std::string& path, const std::string& text);
void write_json(const std::string& path, const nlohmann::ordered_json& doc);
void ensure_directory(const std::string& path);
bool file_exists(const std::string& path);

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel
};

void write_pgm(const std::string& path, const GrayImage& image);
void write_ppm(const std::string& path, const RgbImage& image);

/// Writes renders of the samples according to the graph layout shape and
/// returns the written file names (relative to dir). Values map affinely from
/// [min, max] over the rendered samples to 0..255.
std::vector<std::string> render_samples(const std::string& dir, const JointLayout& layout,
                                        const std::vector<Vector>& samples, std::size_t max_items = 8);

} // namespace dc::cli
