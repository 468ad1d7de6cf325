#pragma once

// Square-patch partition of an image at nested resolution levels.
//
// Level 0 uses the configured base patch side; every refinement halves the
// side (integer division). Patches on the right and bottom borders are
// clipped to the image, so the rects of one level always tile the image.

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace punchhole {

struct ImageRef {
  std::string id;
  int width = 0;
  int height = 0;
  std::string source;

  bool operator==(const ImageRef&) const = default;
};

struct PixelRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  std::int64_t area() const { return std::int64_t{w} * h; }
  bool operator==(const PixelRect&) const = default;
};

/// Area of the intersection of two rects; 0 when they do not overlap.
std::int64_t overlap_area(const PixelRect& a, const PixelRect& b);

struct PatchId {
  int level = 0;
  int row = 0;
  int col = 0;

  auto operator<=>(const PatchId&) const = default;
};

std::string to_string(const PatchId& id);

struct GridLevel {
  int level = 0;
  int patch_side = 0;
  int rows = 0;
  int cols = 0;
  int width = 0;
  int height = 0;

  std::size_t patch_count() const { return static_cast<std::size_t>(rows) * cols; }
  bool contains(const PatchId& id) const;
  /// Row-major index of a patch; the id must belong to this grid.
  std::size_t index_of(const PatchId& id) const;
  PatchId id_at(std::size_t index) const;
  /// Pixel rect of a patch. Throws InvalidArgument for foreign ids.
  PixelRect rect(const PatchId& id) const;

  bool operator==(const GridLevel&) const = default;
};

/// Per-pixel importance, stored row-major as 0/1 bytes.
class GroundTruthMask {
 public:
  GroundTruthMask() = default;
  GroundTruthMask(int width, int height);
  GroundTruthMask(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  bool at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool important) {
    pixels_[static_cast<std::size_t>(y) * width_ + x] = important ? 1 : 0;
  }
  void fill(const PixelRect& rect, bool important);
  std::span<const std::uint8_t> row(int y) const {
    return {pixels_.data() + static_cast<std::size_t>(y) * width_, static_cast<std::size_t>(width_)};
  }
  std::span<const std::uint8_t> pixels() const { return pixels_; }
  /// Number of important pixels.
  std::int64_t area() const;

  bool operator==(const GroundTruthMask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Row-major per-pixel scores in [0,1].
struct ScoreRaster {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

GridLevel partition(int width, int height, int base_patch_side);

/// Next finer level. Throws RefinementExhausted at one-pixel patches.
GridLevel refine(const GridLevel& level);

PixelRect patch_rect(const GridLevel& grid, const PatchId& id, const ImageRef& image);

/// Patches of `child_grid` whose rects intersect the parent's rect.
/// For power-of-two sides these are the (at most four) quadrants; odd sides
/// produce children that straddle two parents.
std::vector<PatchId> children(const PatchId& parent, const GridLevel& parent_grid,
                              const GridLevel& child_grid);

/// Patches holding at least one important pixel.
std::vector<PatchId> coarsen_mask(const GroundTruthMask& mask, const GridLevel& grid);

/// Paints each listed patch's score over its pixels; unlisted patches are 0.
ScoreRaster rasterize_patches(const std::map<PatchId, double>& patches, const GridLevel& grid,
                              const ImageRef& image);

}  // namespace punchhole
