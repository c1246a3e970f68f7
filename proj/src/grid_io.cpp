#include "ssc/grid_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "ssc/errors.hpp"
#include "ssc/metrics.hpp"

namespace ssc {

namespace {

constexpr char kMagic[4] = {'S', 'Y', 'M', 'V'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v == 0 || v > std::numeric_limits<std::uint32_t>::max()) {
    throw ShapeError(std::string("encode_grid: ") + what + " out of u32 range");
  }
  return static_cast<std::uint32_t>(v);
}

void put_header(std::vector<std::uint8_t>& out, GridPayload type,
                const std::array<std::size_t, 3>& dims) {
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kGridVersion);
  out.push_back(static_cast<std::uint8_t>(type));
  out.push_back(0);
  for (auto d : dims) put_u32(out, checked_u32(d, "dimension"));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated ") + what, bytes_.size());
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    need(n, what);
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Multiplies extents, rejecting zero and anything past what a size_t can hold.
std::size_t checked_volume(const std::array<std::uint32_t, 4>& dims, std::size_t n,
                           std::size_t elem_bytes, std::size_t offset) {
  std::size_t total = elem_bytes;
  for (std::size_t i = 0; i < n; ++i) {
    if (dims[i] == 0) throw FormatError("zero grid dimension", offset + 4 * i);
    if (total > std::numeric_limits<std::size_t>::max() / dims[i]) {
      throw FormatError("grid dimensions overflow", offset + 4 * i);
    }
    total *= dims[i];
  }
  return total;
}

}  // namespace

std::vector<std::uint8_t> encode_grid(const VoxelLabels& labels) {
  if (labels.labels.size() != labels.dims[0] * labels.dims[1] * labels.dims[2]) {
    throw ShapeError("encode_grid: label count does not match dims");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kGridHeaderBytes + labels.count());
  put_header(out, GridPayload::labels, labels.dims);
  out.insert(out.end(), labels.labels.begin(), labels.labels.end());
  return out;
}

std::vector<std::uint8_t> encode_grid(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("encode_grid: logits must be [X, Y, Z, K]");
  std::vector<std::uint8_t> out;
  out.reserve(kGridHeaderBytes + 4 + 4 * logits.size());
  put_header(out, GridPayload::logits, {logits.dim(0), logits.dim(1), logits.dim(2)});
  put_u32(out, checked_u32(logits.dim(3), "num_classes"));
  for (double v : logits.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

GridData decode_grid(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto* magic = r.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic", 0);
  const std::size_t version_at = r.pos();
  if (r.u16("version") != kGridVersion) throw FormatError("unsupported version", version_at);
  const std::size_t type_at = r.pos();
  const auto type = r.u8("payload type");
  if (type > 1) throw FormatError("unknown payload type", type_at);
  const std::size_t reserved_at = r.pos();
  if (r.u8("reserved byte") != 0) throw FormatError("reserved byte must be zero", reserved_at);

  const std::size_t dims_at = r.pos();
  std::array<std::uint32_t, 4> dims{};
  for (int a = 0; a < 3; ++a) dims[a] = r.u32("dimensions");
  const std::array<std::size_t, 3> xyz{dims[0], dims[1], dims[2]};

  if (static_cast<GridPayload>(type) == GridPayload::labels) {
    const std::size_t n = checked_volume(dims, 3, 1, dims_at);
    VoxelLabels labels;
    labels.dims = xyz;
    const auto* p = r.take(n, "label payload");
    labels.labels.assign(p, p + n);
    if (r.remaining() != 0) throw FormatError("trailing bytes after payload", r.pos());
    return labels;
  }

  dims[3] = r.u32("num_classes");
  const std::size_t nbytes = checked_volume(dims, 4, 4, dims_at);
  const auto* p = r.take(nbytes, "logit payload");
  std::vector<double> values(nbytes / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
    values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after payload", r.pos());
  return Tensor({xyz[0], xyz[1], xyz[2], dims[3]}, std::move(values));
}

void save_grid(const VoxelLabels& labels, const std::filesystem::path& path) {
  write_binary_file(path, encode_grid(labels));
}

void save_grid(const Tensor& logits, const std::filesystem::path& path) {
  write_binary_file(path, encode_grid(logits));
}

GridData load_grid(const std::filesystem::path& path) {
  return decode_grid(read_binary_file(path));
}

VoxelLabels load_label_grid(const std::filesystem::path& path) {
  auto data = load_grid(path);
  if (auto* labels = std::get_if<VoxelLabels>(&data)) return std::move(*labels);
  return argmax_labels(std::get<Tensor>(data));
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace ssc
