#include "punchhole/grid.hpp"

#include <algorithm>

#include "punchhole/errors.hpp"
#include "punchhole/kernels.hpp"

namespace punchhole {
namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

void require_image_matches(const GridLevel& grid, const ImageRef& image) {
  if (image.width != grid.width || image.height != grid.height) {
    throw InvalidArgument("image " + std::to_string(image.width) + "x" +
                          std::to_string(image.height) + " does not match grid " +
                          std::to_string(grid.width) + "x" + std::to_string(grid.height));
  }
}

}  // namespace

std::int64_t overlap_area(const PixelRect& a, const PixelRect& b) {
  const int x0 = std::max(a.x, b.x);
  const int y0 = std::max(a.y, b.y);
  const int x1 = std::min(a.x + a.w, b.x + b.w);
  const int y1 = std::min(a.y + a.h, b.y + b.h);
  if (x1 <= x0 || y1 <= y0) return 0;
  return std::int64_t{x1 - x0} * (y1 - y0);
}

std::string to_string(const PatchId& id) {
  return "(" + std::to_string(id.level) + "," + std::to_string(id.row) + "," +
         std::to_string(id.col) + ")";
}

bool GridLevel::contains(const PatchId& id) const {
  return id.level == level && id.row >= 0 && id.row < rows && id.col >= 0 && id.col < cols;
}

std::size_t GridLevel::index_of(const PatchId& id) const {
  return static_cast<std::size_t>(id.row) * cols + id.col;
}

PatchId GridLevel::id_at(std::size_t index) const {
  return {level, static_cast<int>(index / cols), static_cast<int>(index % cols)};
}

PixelRect GridLevel::rect(const PatchId& id) const {
  if (!contains(id)) throw InvalidArgument("patch " + to_string(id) + " is not in this grid");
  const int x = id.col * patch_side;
  const int y = id.row * patch_side;
  return {x, y, std::min(patch_side, width - x), std::min(patch_side, height - y)};
}

GroundTruthMask::GroundTruthMask(int width, int height)
    : GroundTruthMask(width, height,
                      std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                                static_cast<std::size_t>(std::max(height, 0)))) {}

GroundTruthMask::GroundTruthMask(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width < 1 || height < 1) throw InvalidArgument("mask dimensions must be positive");
  if (pixels_.size() != static_cast<std::size_t>(width) * height) {
    throw InvalidArgument("mask pixel count does not match its dimensions");
  }
  for (auto& p : pixels_) p = p != 0 ? 1 : 0;
}

void GroundTruthMask::fill(const PixelRect& rect, bool important) {
  for (int y = rect.y; y < rect.y + rect.h; ++y) {
    auto* row_begin = pixels_.data() + static_cast<std::size_t>(y) * width_;
    std::fill(row_begin + rect.x, row_begin + rect.x + rect.w, important ? 1 : 0);
  }
}

std::int64_t GroundTruthMask::area() const {
  return static_cast<std::int64_t>(kernels::count_nonzero(pixels_));
}

GridLevel partition(int width, int height, int base_patch_side) {
  if (width < 1 || height < 1) throw InvalidArgument("image dimensions must be positive");
  if (base_patch_side < 1) throw InvalidArgument("base patch side must be at least 1");
  if (base_patch_side > std::max(width, height)) {
    throw InvalidArgument("base patch side exceeds the image");
  }
  return {0,      base_patch_side, ceil_div(height, base_patch_side), ceil_div(width, base_patch_side),
          width, height};
}

GridLevel refine(const GridLevel& level) {
  if (level.patch_side <= 1) {
    throw RefinementExhausted("level " + std::to_string(level.level) +
                              " already has one-pixel patches");
  }
  const int side = level.patch_side / 2;
  return {level.level + 1,
          side,
          ceil_div(level.height, side),
          ceil_div(level.width, side),
          level.width,
          level.height};
}

PixelRect patch_rect(const GridLevel& grid, const PatchId& id, const ImageRef& image) {
  require_image_matches(grid, image);
  return grid.rect(id);
}

std::vector<PatchId> children(const PatchId& parent, const GridLevel& parent_grid,
                              const GridLevel& child_grid) {
  if (child_grid.level != parent_grid.level + 1 || child_grid.width != parent_grid.width ||
      child_grid.height != parent_grid.height ||
      child_grid.patch_side != parent_grid.patch_side / 2) {
    throw InvalidArgument("child grid is not the refinement of the parent grid");
  }
  const PixelRect r = parent_grid.rect(parent);
  const int side = child_grid.patch_side;
  std::vector<PatchId> out;
  for (int row = r.y / side; row <= (r.y + r.h - 1) / side; ++row) {
    for (int col = r.x / side; col <= (r.x + r.w - 1) / side; ++col) {
      out.push_back({child_grid.level, row, col});
    }
  }
  return out;
}

std::vector<PatchId> coarsen_mask(const GroundTruthMask& mask, const GridLevel& grid) {
  if (mask.width() != grid.width || mask.height() != grid.height) {
    throw InvalidArgument("mask dimensions do not match the grid");
  }
  std::vector<PatchId> out;
  for (std::size_t i = 0; i < grid.patch_count(); ++i) {
    const PatchId id = grid.id_at(i);
    const PixelRect r = grid.rect(id);
    for (int y = r.y; y < r.y + r.h; ++y) {
      if (kernels::any_nonzero(mask.row(y).subspan(r.x, r.w))) {
        out.push_back(id);
        break;
      }
    }
  }
  return out;
}

ScoreRaster rasterize_patches(const std::map<PatchId, double>& patches, const GridLevel& grid,
                              const ImageRef& image) {
  require_image_matches(grid, image);
  ScoreRaster raster{grid.width, grid.height,
                     std::vector<double>(static_cast<std::size_t>(grid.width) * grid.height, 0.0)};
  for (const auto& [id, score] : patches) {
    if (!(score >= 0.0 && score <= 1.0)) {
      throw InvalidArgument("score for patch " + to_string(id) + " is outside [0,1]");
    }
    const PixelRect r = grid.rect(id);
    for (int y = r.y; y < r.y + r.h; ++y) {
      auto* row = raster.values.data() + static_cast<std::size_t>(y) * grid.width;
      std::fill(row + r.x, row + r.x + r.w, score);
    }
  }
  return raster;
}

}  // namespace punchhole
