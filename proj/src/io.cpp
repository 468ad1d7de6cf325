#include "punchhole/io.hpp"

#include <png.h>

#include <charconv>
#include <fstream>
#include <istream>
#include <iterator>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "punchhole/errors.hpp"
#include "punchhole/kernels.hpp"

namespace punchhole::io {
namespace {

std::string shortest(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& text, std::size_t line_no) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw InvalidArgument("line " + std::to_string(line_no) + ": '" + text + "' is not a number");
  }
  return value;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return in;
}

}  // namespace

GrayImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw InvalidArgument("empty image upload");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw InvalidArgument(std::string("undecodable PNG: ") + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  GrayImage out{static_cast<int>(image.width), static_cast<int>(image.height), {}};
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw InvalidArgument("undecodable PNG: " + message);
  }
  if (out.width < 1 || out.height < 1) throw InvalidArgument("PNG has no pixels");
  return out;
}

GrayImage read_png(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

std::vector<std::uint8_t> encode_png(const GrayImage& gray) {
  if (gray.pixels.size() != static_cast<std::size_t>(gray.width) * gray.height) {
    throw InvalidArgument("pixel buffer does not match image dimensions");
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(gray.width);
  image.height = static_cast<png_uint_32>(gray.height);
  image.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, gray.pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, gray.pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

GroundTruthMask read_mask_png(const std::filesystem::path& path) {
  auto image = read_png(path);
  return GroundTruthMask(image.width, image.height, std::move(image.pixels));
}

void write_mask_png(const std::filesystem::path& path, const GroundTruthMask& mask) {
  GrayImage image{mask.width(), mask.height(), {}};
  image.pixels.reserve(mask.pixels().size());
  for (auto p : mask.pixels()) image.pixels.push_back(p ? 255 : 0);
  write_png(path, image);
}

GrayImage quantize(const ScoreRaster& raster) {
  GrayImage image{raster.width, raster.height, std::vector<std::uint8_t>(raster.values.size())};
  kernels::quantize_unit(raster.values, image.pixels);
  return image;
}

void write_scores_csv(std::ostream& out, const ImportanceMap& map) {
  out << "level,row,col,score\n";
  for (std::size_t i = 0; i < map.scores.size(); ++i) {
    const PatchId id = map.grid.id_at(i);
    out << id.level << ',' << id.row << ',' << id.col << ',' << shortest(map.scores[i]) << '\n';
  }
}

void write_scores_csv(const std::filesystem::path& path, const ImportanceMap& map) {
  std::ofstream out(path, std::ios::trunc);
  write_scores_csv(out, map);
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

ImportanceMap read_scores_csv(std::istream& in) {
  std::map<std::pair<int, int>, double> cells;
  int level = -1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_csv(line);
    if (fields.empty() || (fields.size() == 1 && fields[0].empty())) continue;
    if (fields[0] == "level") continue;
    if (fields.size() != 4) {
      throw InvalidArgument("line " + std::to_string(line_no) + ": expected level,row,col,score");
    }
    const int lv = parse_number<int>(fields[0], line_no);
    const int row = parse_number<int>(fields[1], line_no);
    const int col = parse_number<int>(fields[2], line_no);
    const double score = parse_number<double>(fields[3], line_no);
    if (level >= 0 && lv != level) throw InvalidArgument("scores CSV mixes levels");
    if (row < 0 || col < 0) throw InvalidArgument("line " + std::to_string(line_no) + ": negative index");
    if (!(score >= 0.0 && score <= 1.0)) {
      throw InvalidArgument("line " + std::to_string(line_no) + ": score outside [0,1]");
    }
    level = lv;
    if (!cells.emplace(std::pair{row, col}, score).second) {
      throw InvalidArgument("line " + std::to_string(line_no) + ": duplicate patch");
    }
  }
  if (cells.empty()) throw InvalidArgument("scores CSV has no rows");
  int rows = 0, cols = 0;
  for (const auto& [rc, _] : cells) {
    rows = std::max(rows, rc.first + 1);
    cols = std::max(cols, rc.second + 1);
  }
  if (cells.size() != static_cast<std::size_t>(rows) * cols) {
    throw InvalidArgument("scores CSV does not cover a full grid");
  }
  ImportanceMap map;
  map.grid = GridLevel{level, 0, rows, cols, 0, 0};
  map.scores.resize(cells.size());
  for (const auto& [rc, score] : cells) {
    map.scores[static_cast<std::size_t>(rc.first) * cols + rc.second] = score;
  }
  return map;
}

ImportanceMap read_scores_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_scores_csv(in);
}

std::vector<BoxAnnotation> read_boxes_csv(std::istream& in) {
  std::vector<BoxAnnotation> out;
  std::map<std::string, std::size_t> slot;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_csv(line);
    if (fields.empty() || (fields.size() == 1 && fields[0].empty())) continue;
    if (fields[0] == "worker_id") continue;
    if (fields.size() != 5) {
      throw InvalidArgument("line " + std::to_string(line_no) + ": expected worker_id,x,y,w,h");
    }
    PixelRect box{parse_number<int>(fields[1], line_no), parse_number<int>(fields[2], line_no),
                  parse_number<int>(fields[3], line_no), parse_number<int>(fields[4], line_no)};
    auto [it, fresh] = slot.emplace(fields[0], out.size());
    if (fresh) out.push_back({fields[0], {}});
    out[it->second].boxes.push_back(box);
  }
  return out;
}

std::vector<BoxAnnotation> read_boxes_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_boxes_csv(in);
}

}  // namespace punchhole::io
