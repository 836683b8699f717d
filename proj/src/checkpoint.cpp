#include "occludox/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "occludox/error.hpp"
#include "occludox/pnm.hpp"

namespace occludox {
namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'O', 'A', 'C'};
constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxRank = 8;

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
  }

  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors, CheckpointDtype dtype) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.dims()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.push_back(static_cast<std::uint8_t>(dtype));
    for (Real v : t.value.values()) {
      if (dtype == CheckpointDtype::kF64) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
      } else {
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  const std::size_t version_at = r.offset();
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const auto count = r.le<std::uint32_t>("entry count");
  std::vector<NamedTensor> out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::size_t name_at = r.offset();
    const auto name_len = r.le<std::uint32_t>("name length");
    if (name_len > kMaxNameLength) throw FormatError("checkpoint entry name too long", name_at);
    auto name_bytes = r.take(name_len, "name");
    NamedTensor t;
    t.name.assign(name_bytes.begin(), name_bytes.end());
    const std::size_t rank_at = r.offset();
    const auto rank = r.le<std::uint32_t>("rank");
    if (rank > kMaxRank) throw FormatError("checkpoint rank " + std::to_string(rank) + " too large", rank_at);
    Shape dims;
    std::size_t elements = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.le<std::uint32_t>("dims");
      dims.push_back(d);
      elements *= d;
      if (elements > bytes.size()) throw FormatError("checkpoint dims exceed file size", r.offset() - 4);
    }
    const std::size_t dtype_at = r.offset();
    const auto dtype = r.le<std::uint8_t>("dtype");
    if (dtype > 1) throw FormatError("unknown checkpoint dtype tag " + std::to_string(dtype), dtype_at);
    const std::size_t width = dtype == 1 ? 8 : 4;
    auto payload = r.take(elements * width, "payload");
    std::vector<Real> values(elements);
    for (std::size_t i = 0; i < elements; ++i) {
      const std::uint8_t* p = payload.data() + i * width;
      if (width == 8) {
        std::uint64_t u = 0;
        for (std::size_t b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(p[b]) << (8 * b);
        values[i] = std::bit_cast<double>(u);
      } else {
        std::uint32_t u = 0;
        for (std::size_t b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(p[b]) << (8 * b);
        values[i] = std::bit_cast<float>(u);
      }
    }
    t.value = Tensor(std::move(dims), std::move(values));
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last checkpoint entry", r.offset());
  return out;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  params.check_consistent();
  write_file_bytes(path, encode_checkpoint(params.tensors));
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ConvNetSpec& spec) {
  const auto bytes = read_file_bytes(path);
  ModelParams p{spec, {}};
  try {
    p.tensors = decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
  p.check_consistent();
  return p;
}

}  // namespace occludox
