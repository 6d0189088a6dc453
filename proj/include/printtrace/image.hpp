#ifndef PRINTTRACE_IMAGE_HPP
#define PRINTTRACE_IMAGE_HPP

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "printtrace/common.hpp"

namespace printtrace {

/// Grayscale raster with 8- or 16-bit samples stored row-major.
///
/// Instances are validated on construction and never mutated afterwards.
/// Crops remember where they came from (`origin_row`, `origin_col`).
class DocumentImage {
 public:
  DocumentImage(int width, int height, int bit_depth, std::vector<std::uint16_t> pixels)
      : width_(width), height_(height), bit_depth_(bit_depth), pixels_(std::move(pixels)) {
    if (bit_depth_ != 8 && bit_depth_ != 16)
      throw InvalidArgument("bit depth must be 8 or 16, got " + std::to_string(bit_depth_));
    if (width_ < 3 || height_ < 3)
      throw InvalidArgument("image must be at least 3x3, got " + std::to_string(width_) + "x" +
                            std::to_string(height_));
    if (pixels_.size() != static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_))
      throw InvalidArgument("pixel count does not match width x height");
    const auto limit = max_value();
    for (auto v : pixels_)
      if (v > limit) throw InvalidArgument("intensity " + std::to_string(v) + " exceeds bit depth");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int bit_depth() const noexcept { return bit_depth_; }
  std::uint32_t max_value() const noexcept { return bit_depth_ == 8 ? 255u : 65535u; }

  std::uint16_t at(int row, int col) const noexcept {
    return pixels_[static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col)];
  }
  std::span<const std::uint16_t> pixels() const noexcept { return pixels_; }
  std::span<const std::uint16_t> row(int r) const noexcept {
    return std::span<const std::uint16_t>(pixels_).subspan(static_cast<std::size_t>(r) * width_, width_);
  }

  const std::optional<std::string>& source_path() const noexcept { return source_path_; }
  const std::optional<std::string>& printer_label() const noexcept { return printer_label_; }
  int origin_row() const noexcept { return origin_row_; }
  int origin_col() const noexcept { return origin_col_; }

  DocumentImage with_source_path(std::string p) const {
    auto copy = *this;
    copy.source_path_ = std::move(p);
    return copy;
  }
  DocumentImage with_printer_label(std::string label) const {
    auto copy = *this;
    copy.printer_label_ = std::move(label);
    return copy;
  }
  DocumentImage with_origin(int row, int col) const {
    auto copy = *this;
    copy.origin_row_ = row;
    copy.origin_col_ = col;
    return copy;
  }

  friend bool operator==(const DocumentImage& a, const DocumentImage& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.bit_depth_ == b.bit_depth_ &&
           a.pixels_ == b.pixels_;
  }

 private:
  int width_;
  int height_;
  int bit_depth_;
  std::vector<std::uint16_t> pixels_;
  std::optional<std::string> source_path_;
  std::optional<std::string> printer_label_;
  int origin_row_ = 0;
  int origin_col_ = 0;
};

namespace detail {

class PgmHeaderReader {
 public:
  explicit PgmHeaderReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  void expect_magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || bytes_[1] != '5')
      throw FormatError("not a binary PGM: magic must be \"P5\"", 0);
    pos_ = 2;
  }

  // Skips whitespace and '#' comments, then reads one unsigned decimal token.
  std::uint64_t read_number(const char* what) {
    skip_space_and_comments();
    const auto start = pos_;
    std::uint64_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 0xFFFFFFFFull) throw FormatError(std::string("malformed header: ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("malformed header: expected ") + what, start);
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw FormatError("malformed header: missing whitespace before raster", pos_);
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else {
        break;
      }
    }
    if (pos_ >= bytes_.size()) throw FormatError("malformed header: unexpected end of file", pos_);
  }

  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Decodes a binary PGM held in memory.
inline DocumentImage decode_pgm(std::span<const unsigned char> bytes) {
  detail::PgmHeaderReader reader(bytes);
  reader.expect_magic();
  const auto width = reader.read_number("width");
  const auto height = reader.read_number("height");
  const auto maxval = reader.read_number("maxval");
  const auto offset = reader.raster_offset();
  if (maxval != 255 && maxval != 65535)
    throw FormatError("unsupported maxval " + std::to_string(maxval) + " (expected 255 or 65535)", offset - 1);
  const int depth = maxval == 255 ? 8 : 16;
  const std::size_t bytes_per_sample = depth == 8 ? 1 : 2;
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  const std::size_t needed = count * bytes_per_sample;
  if (bytes.size() - offset < needed)
    throw FormatError("truncated payload: expected " + std::to_string(needed) + " bytes, found " +
                          std::to_string(bytes.size() - offset),
                      bytes.size());
  std::vector<std::uint16_t> pixels(count);
  const unsigned char* p = bytes.data() + offset;
  if (depth == 8) {
    for (std::size_t i = 0; i < count; ++i) pixels[i] = p[i];
  } else {
    for (std::size_t i = 0; i < count; ++i)
      pixels[i] = static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]);
  }
  return DocumentImage(static_cast<int>(width), static_cast<int>(height), depth, std::move(pixels));
}

inline std::vector<unsigned char> encode_pgm(const DocumentImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n" +
                             std::to_string(img.max_value()) + "\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  const auto px = img.pixels();
  if (img.bit_depth() == 8) {
    out.reserve(out.size() + px.size());
    for (auto v : px) out.push_back(static_cast<unsigned char>(v));
  } else {
    out.reserve(out.size() + 2 * px.size());
    for (auto v : px) {
      out.push_back(static_cast<unsigned char>(v >> 8));
      out.push_back(static_cast<unsigned char>(v & 0xFF));
    }
  }
  return out;
}

inline DocumentImage load_pgm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  try {
    return decode_pgm(bytes).with_source_path(path.string());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

/// Writes `img` as binary PGM (16-bit samples big-endian).
inline void save_pgm(const DocumentImage& img, const std::filesystem::path& path) {
  const auto bytes = encode_pgm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Rescales intensities between 8 and 16 bits using the exact factor 257.
inline DocumentImage normalize_depth(const DocumentImage& img, int target) {
  if (target != 8 && target != 16) throw InvalidArgument("target depth must be 8 or 16");
  if (img.bit_depth() == target) return img;
  std::vector<std::uint16_t> out(img.pixels().begin(), img.pixels().end());
  if (target == 16) {
    for (auto& v : out) v = static_cast<std::uint16_t>(v * 257u);
  } else {
    // round-half-up of v / 257
    for (auto& v : out) v = static_cast<std::uint16_t>((2u * v + 257u) / 514u);
  }
  DocumentImage result(img.width(), img.height(), target, std::move(out));
  result = result.with_origin(img.origin_row(), img.origin_col());
  if (img.source_path()) result = result.with_source_path(*img.source_path());
  if (img.printer_label()) result = result.with_printer_label(*img.printer_label());
  return result;
}

}  // namespace printtrace

#endif  // PRINTTRACE_IMAGE_HPP
