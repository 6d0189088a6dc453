#ifndef PRINTTRACE_FORMATS_HPP
#define PRINTTRACE_FORMATS_HPP

// Little-endian binary containers:
//
//   descriptor batch  "PSLT" v1  variant u8, count u32, dim u32, count*dim f32,
//                     then per record: doc_id u32, component_id u32,
//                     centroid_row f32, centroid_col f32, bbox i32 x4
//   pooled features   "PSLP" v1  variant u8, count u32, dim u32, layout,
//                     count*dim f32, then per record: doc_id u32,
//                     block u32 x2, member_count u32
//   reference bank    "PBNK" v1  layout, variant u8, dim u32, printer table,
//                     then per block: block u32 x2, entry count u32 and
//                     entries of (printer u32, dim f32)
//
// layout = mode u8, n_c u32, n_w u32, n_h u32, n_p u32

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "printtrace/common.hpp"
#include "printtrace/image.hpp"
#include "printtrace/pooling.hpp"
#include "printtrace/predict.hpp"
#include "printtrace/psltd.hpp"

namespace printtrace {

inline constexpr std::uint32_t kFormatVersion = 1;

inline void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

  const std::vector<unsigned char>& data() const noexcept { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> data) : data_(data) {}

  void expect_magic(std::string_view magic) {
    need(magic.size(), "magic");
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0)
      throw FormatError("bad magic: expected \"" + std::string(magic) + "\"", pos_);
    pos_ += magic.size();
  }
  std::uint8_t u8() {
    need(1, "u8");
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::string str(std::uint32_t n) {
    need(n, "string");
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const noexcept { return pos_; }
  /// Rejects a record count whose payload cannot fit in the remaining bytes.
  void expect_records(std::uint64_t count, std::uint64_t record_bytes, std::size_t count_at) const {
    if (record_bytes && count > (data_.size() - pos_) / record_bytes)
      throw FormatError("record count " + std::to_string(count) + " exceeds the container size", count_at);
  }
  void expect_end() const {
    if (pos_ != data_.size()) throw FormatError("trailing bytes after container", pos_);
  }
  void version() {
    const auto at = pos_;
    const auto v = u32();
    if (v != kFormatVersion) throw FormatError("unsupported container version " + std::to_string(v), at);
  }
  Variant variant() {
    const auto at = pos_;
    const auto v = u8();
    if (v > 1) throw FormatError("unknown descriptor variant " + std::to_string(v), at);
    return static_cast<Variant>(v);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) throw FormatError(std::string("truncated container while reading ") + what, pos_);
  }
  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
};

namespace detail {
inline void write_spec(ByteWriter& w, const PoolingSpec& s) {
  w.u8(static_cast<std::uint8_t>(s.mode));
  w.u32(s.n_c);
  w.u32(s.n_w);
  w.u32(s.n_h);
  w.u32(s.n_p);
}
inline PoolingSpec read_spec(ByteReader& r) {
  const auto at = r.offset();
  const auto mode = r.u8();
  if (mode > 2) throw FormatError("unknown pooling mode " + std::to_string(mode), at);
  PoolingSpec s;
  s.mode = static_cast<PoolingMode>(mode);
  s.n_c = r.u32();
  s.n_w = r.u32();
  s.n_h = r.u32();
  s.n_p = r.u32();
  return s;
}
template <typename T>
T decode_file(const std::filesystem::path& path, T (*decode)(std::span<const unsigned char>)) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Descriptor batches

/// Letter descriptors of one or more documents.
struct DescriptorBatch {
  Variant variant = Variant::Approx;
  std::vector<std::uint32_t> doc_ids;
  std::vector<LetterFeature> letters;
};

/// Rounds descriptor values and centroids to the 32-bit precision used on disk.
inline LetterFeature to_storage_precision(const LetterFeature& f) {
  LetterFeature out{f.component, Descriptor(f.descriptor.variant(), round_to_float(f.descriptor.values()))};
  out.component.centroid_row = static_cast<double>(static_cast<float>(f.component.centroid_row));
  out.component.centroid_col = static_cast<double>(static_cast<float>(f.component.centroid_col));
  return out;
}

inline std::vector<unsigned char> encode_batch(const DescriptorBatch& batch) {
  if (batch.doc_ids.size() != batch.letters.size()) throw InvalidArgument("batch doc_ids/letters size mismatch");
  const auto dim = static_cast<std::uint32_t>(dimension(batch.variant));
  ByteWriter w;
  w.bytes("PSLT");
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(batch.variant));
  w.u32(static_cast<std::uint32_t>(batch.letters.size()));
  w.u32(dim);
  for (const auto& l : batch.letters) {
    if (l.descriptor.size() != dim) throw InvalidArgument("descriptor length does not match the batch variant");
    for (double v : l.descriptor.values()) w.f32(v);
  }
  for (std::size_t i = 0; i < batch.letters.size(); ++i) {
    const auto& c = batch.letters[i].component;
    w.u32(batch.doc_ids[i]);
    w.u32(c.id);
    w.f32(c.centroid_row);
    w.f32(c.centroid_col);
    w.i32(c.bbox.row_min);
    w.i32(c.bbox.col_min);
    w.i32(c.bbox.row_max);
    w.i32(c.bbox.col_max);
  }
  return w.data();
}

/// Component areas are not stored; decoded components carry area 0.
inline DescriptorBatch decode_batch(std::span<const unsigned char> bytes) {
  ByteReader r(bytes);
  r.expect_magic("PSLT");
  r.version();
  DescriptorBatch batch;
  batch.variant = r.variant();
  const auto count = r.u32();
  const auto dim_at = r.offset();
  const auto dim = r.u32();
  if (dim != dimension(batch.variant)) throw FormatError("dimension does not match variant", dim_at);
  r.expect_records(count, 4ull * dim + 32, dim_at - 4);
  std::vector<std::vector<double>> values(count, std::vector<double>(dim));
  for (auto& v : values)
    for (auto& x : v) x = r.f32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ConnectedComponent c;
    batch.doc_ids.push_back(r.u32());
    c.id = r.u32();
    c.centroid_row = r.f32();
    c.centroid_col = r.f32();
    c.bbox.row_min = r.i32();
    c.bbox.col_min = r.i32();
    c.bbox.row_max = r.i32();
    c.bbox.col_max = r.i32();
    batch.letters.push_back({c, Descriptor(batch.variant, std::move(values[i]))});
  }
  r.expect_end();
  return batch;
}

inline void save_batch(const DescriptorBatch& batch, const std::filesystem::path& path) {
  write_file_bytes(path, encode_batch(batch));
}

inline DescriptorBatch load_batch(const std::filesystem::path& path) {
  return detail::decode_file<DescriptorBatch>(path, &decode_batch);
}

// ---------------------------------------------------------------------------
// Pooled features

struct PooledBatch {
  Variant variant = Variant::Approx;
  PoolingSpec spec;
  std::vector<PooledFeature> features;
};

inline std::vector<unsigned char> encode_pooled(const PooledBatch& batch) {
  const auto dim = static_cast<std::uint32_t>(dimension(batch.variant));
  ByteWriter w;
  w.bytes("PSLP");
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(batch.variant));
  w.u32(static_cast<std::uint32_t>(batch.features.size()));
  w.u32(dim);
  detail::write_spec(w, batch.spec);
  for (const auto& f : batch.features) {
    if (f.vector.size() != dim) throw InvalidArgument("pooled vector length does not match the variant");
    for (double v : f.vector) w.f32(v);
  }
  for (const auto& f : batch.features) {
    w.u32(f.doc_id);
    w.u32(f.block.a);
    w.u32(f.block.b);
    w.u32(f.member_count);
  }
  return w.data();
}

inline PooledBatch decode_pooled(std::span<const unsigned char> bytes) {
  ByteReader r(bytes);
  r.expect_magic("PSLP");
  r.version();
  PooledBatch batch;
  batch.variant = r.variant();
  const auto count = r.u32();
  const auto dim_at = r.offset();
  const auto dim = r.u32();
  if (dim != dimension(batch.variant)) throw FormatError("dimension does not match variant", dim_at);
  batch.spec = detail::read_spec(r);
  r.expect_records(count, 4ull * dim + 16, dim_at - 4);
  batch.features.resize(count);
  for (auto& f : batch.features) {
    f.vector.resize(dim);
    for (auto& x : f.vector) x = r.f32();
  }
  for (auto& f : batch.features) {
    f.doc_id = r.u32();
    f.block.a = r.u32();
    f.block.b = r.u32();
    f.member_count = r.u32();
  }
  r.expect_end();
  return batch;
}

inline void save_pooled(const PooledBatch& batch, const std::filesystem::path& path) {
  write_file_bytes(path, encode_pooled(batch));
}

inline PooledBatch load_pooled(const std::filesystem::path& path) {
  return detail::decode_file<PooledBatch>(path, &decode_pooled);
}

// ---------------------------------------------------------------------------
// Reference banks

inline std::vector<unsigned char> encode_bank(const ReferenceBank& bank) {
  ByteWriter w;
  w.bytes("PBNK");
  w.u32(kFormatVersion);
  detail::write_spec(w, bank.spec());
  w.u8(static_cast<std::uint8_t>(bank.variant()));
  w.u32(static_cast<std::uint32_t>(dimension(bank.variant())));
  w.u32(static_cast<std::uint32_t>(bank.printers().size()));
  for (const auto& p : bank.printers()) {
    w.u32(static_cast<std::uint32_t>(p.size()));
    w.bytes(p);
  }
  w.u32(static_cast<std::uint32_t>(bank.entries().size()));
  for (const auto& [block, list] : bank.entries()) {
    w.u32(block.a);
    w.u32(block.b);
    w.u32(static_cast<std::uint32_t>(list.size()));
    for (const auto& e : list) {
      w.u32(e.printer);
      for (double v : e.vector) w.f32(v);
    }
  }
  return w.data();
}

inline ReferenceBank decode_bank(std::span<const unsigned char> bytes) {
  ByteReader r(bytes);
  r.expect_magic("PBNK");
  r.version();
  const auto spec = detail::read_spec(r);
  const auto variant = r.variant();
  const auto dim_at = r.offset();
  const auto dim = r.u32();
  if (dim != dimension(variant)) throw FormatError("dimension does not match variant", dim_at);
  const auto printers_at = r.offset();
  const auto n_printers = r.u32();
  r.expect_records(n_printers, 4, printers_at);
  std::vector<std::string> printers(n_printers);
  for (auto& p : printers) p = r.str(r.u32());
  std::map<BlockId, std::vector<BankEntry>> entries;
  const auto blocks = r.u32();
  for (std::uint32_t b = 0; b < blocks; ++b) {
    BlockId id{r.u32(), r.u32()};
    auto& list = entries[id];
    const auto list_at = r.offset();
    const auto n = r.u32();
    r.expect_records(n, 4ull + 4ull * dim, list_at);
    list.resize(n);
    for (auto& e : list) {
      const auto at = r.offset();
      e.printer = r.u32();
      if (e.printer >= printers.size()) throw FormatError("printer index out of range", at);
      e.vector.resize(dim);
      for (auto& x : e.vector) x = r.f32();
    }
  }
  r.expect_end();
  try {
    return ReferenceBank(spec, variant, std::move(printers), std::move(entries));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid bank: ") + e.what(), r.offset());
  }
}

inline void save_bank(const ReferenceBank& bank, const std::filesystem::path& path) {
  write_file_bytes(path, encode_bank(bank));
}

inline ReferenceBank load_bank(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("bank file '" + path.string() + "' does not exist");
  return detail::decode_file<ReferenceBank>(path, &decode_bank);
}

}  // namespace printtrace

#endif  // PRINTTRACE_FORMATS_HPP
