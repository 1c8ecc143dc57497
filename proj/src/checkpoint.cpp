#include "forensicflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "forensicflow/error.hpp"

namespace ff {

namespace {

void put_le(std::vector<std::uint8_t>& b, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string rest() { return str(b_.size() - pos_); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> b{'F', 'F', 'C', 'K'};
  put_le(b, kCheckpointVersion, 4);
  put_le(b, ckpt.entries.size(), 4);
  for (const auto& e : ckpt.entries) {
    if (e.name.size() > 0xFFFF) throw FormatError("parameter name too long: " + e.name.substr(0, 40) + "...");
    if (e.dims.size() > 0xFF) throw FormatError("rank too large for '" + e.name + "'");
    put_le(b, e.name.size(), 2);
    b.insert(b.end(), e.name.begin(), e.name.end());
    put_le(b, e.dims.size(), 1);
    std::size_t numel = 1;
    for (auto d : e.dims) {
      put_le(b, d, 4);
      numel *= d;
    }
    if (numel != e.values.size()) throw FormatError("entry '" + e.name + "' dims disagree with its value count");
    for (float v : e.values) put_le(b, std::bit_cast<std::uint32_t>(v), 4);
  }
  b.insert(b.end(), ckpt.metadata.begin(), ckpt.metadata.end());
  return b;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != "FFCK") throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.le(4);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.le(4);
  Checkpoint ckpt;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str(static_cast<std::size_t>(r.le(2)));
    const auto rank = r.le(1);
    std::size_t numel = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      e.dims.push_back(static_cast<std::uint32_t>(r.le(4)));
      numel *= e.dims.back();
    }
    e.values.resize(numel);
    for (auto& v : e.values) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.le(4)));
    ckpt.entries.push_back(std::move(e));
  }
  ckpt.metadata = r.rest();
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint snapshot(const ParamRegistry& registry, std::string metadata) {
  Checkpoint ckpt;
  ckpt.metadata = std::move(metadata);
  for (const auto& p : registry.entries()) {
    CheckpointEntry e;
    e.name = p.name;
    for (auto d : p.tensor.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
    const auto data = p.tensor.data();
    e.values.assign(data.begin(), data.end());
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

void restore(ParamRegistry& registry, const Checkpoint& ckpt) {
  if (ckpt.entries.size() != registry.size()) {
    throw IntegrityError("checkpoint holds " + std::to_string(ckpt.entries.size()) + " tensors, model has " +
                         std::to_string(registry.size()));
  }
  for (const auto& e : ckpt.entries) {
    auto* p = registry.find(e.name);
    if (!p) throw IntegrityError("checkpoint tensor '" + e.name + "' has no counterpart in the model");
    const auto& shape = p->tensor.shape();
    const bool same = shape.size() == e.dims.size() && std::equal(shape.begin(), shape.end(), e.dims.begin());
    if (!same) throw IntegrityError("shape mismatch for '" + e.name + "': model " + shape_str(shape));
    auto dst = p->tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = e.values[i];
  }
}

}  // namespace ff
