#pragma once

// PNG and CSV import/export for masks, score rasters and per-patch maps.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "punchhole/aggregate.hpp"
#include "punchhole/grid.hpp"

namespace punchhole::io {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Decodes any PNG to 8-bit gray. Throws InvalidArgument on undecodable data.
GrayImage decode_png(std::span<const std::uint8_t> bytes);
GrayImage read_png(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const GrayImage& image);
void write_png(const std::filesystem::path& path, const GrayImage& image);

/// Any non-zero pixel is important.
GroundTruthMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const GroundTruthMask& mask);

/// Scores in [0,1] map linearly onto 0..255.
GrayImage quantize(const ScoreRaster& raster);

/// Rows `level,row,col,score` under a header line.
void write_scores_csv(std::ostream& out, const ImportanceMap& map);
void write_scores_csv(const std::filesystem::path& path, const ImportanceMap& map);
/// Reads a map written by write_scores_csv. Only the grid shape (level,
/// rows, cols) is recoverable, so patch_side and image size are left 0.
ImportanceMap read_scores_csv(std::istream& in);
ImportanceMap read_scores_csv(const std::filesystem::path& path);

/// Rows `worker_id,x,y,w,h`, header optional; grouped by worker in order of
/// first appearance.
std::vector<BoxAnnotation> read_boxes_csv(std::istream& in);
std::vector<BoxAnnotation> read_boxes_csv(const std::filesystem::path& path);

}  // namespace punchhole::io
