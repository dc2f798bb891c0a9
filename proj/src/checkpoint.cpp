#include "bset/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "bset/error.hpp"
#include "bset/hash.hpp"

namespace bset {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return need(1)[0]; }
  std::uint32_t u32() {
    auto b = need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text(std::size_t n) {
    auto b = need(n);
    return {b.begin(), b.end()};
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> need(std::size_t n) {
    if (remaining() < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'B', 'S', 'E', 'T'};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(checkpoint.arch.input.size()));
  for (auto d : checkpoint.arch.input) w.u64(d);
  w.u32(static_cast<std::uint32_t>(checkpoint.arch.layers.size()));
  for (const auto& l : checkpoint.arch.layers) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u32(l.units);
    w.u32(l.kernel);
    w.u32(l.padding);
    w.u32(l.pool);
    w.f64(l.rate);
  }
  w.u32(static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& t : checkpoint.tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u32(static_cast<std::uint32_t>(t.tensor.rank()));
    for (auto d : t.tensor.shape()) w.u64(d);
    for (double v : t.tensor.values()) w.f64(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.remaining() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint: bad magic (expected \"BSET\")");
  }
  r.text(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  const auto rank = r.u32();
  for (std::uint32_t i = 0; i < rank; ++i) c.arch.input.push_back(r.u64());
  const auto layers = r.u32();
  for (std::uint32_t i = 0; i < layers; ++i) {
    LayerSpec l;
    const auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::softmax)) {
      throw FormatError("unknown layer kind " + std::to_string(kind) + " in checkpoint");
    }
    l.kind = static_cast<LayerKind>(kind);
    l.units = r.u32();
    l.kernel = r.u32();
    l.padding = r.u32();
    l.pool = r.u32();
    l.rate = r.f64();
    c.arch.layers.push_back(l);
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.text(r.u32());
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    const std::size_t n = shape_size(shape);
    if (shape.empty() || n == 0 || n > r.remaining() / 8) {
      throw FormatError("tensor '" + t.name + "' has invalid shape " + shape_string(shape));
    }
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    t.tensor = Tensor(std::move(shape), std::move(values));
    c.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint payload");
  return c;
}

std::vector<std::uint8_t> encode_model(const Model& model) {
  Checkpoint c;
  c.arch = model.arch;
  c.tensors.assign(model.params.begin(), model.params.end());
  return encode_checkpoint(c);
}

Model decode_model(std::span<const std::uint8_t> bytes) {
  Checkpoint c = decode_checkpoint(bytes);
  if (c.arch.layers.empty()) throw FormatError("checkpoint holds no layer table");
  ModelParameters params;
  for (auto& t : c.tensors) params.add(std::move(t.name), std::move(t.tensor));
  return Model::from_parameters(std::move(c.arch), std::move(params));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_file_bytes(path, encode_model(model));
}

Model load_model(const std::filesystem::path& path) { return decode_model(read_file_bytes(path)); }

void save_tensors(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path) {
  Checkpoint c;
  c.tensors = tensors;
  write_file_bytes(path, encode_checkpoint(c));
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path)).tensors;
}

std::string model_fingerprint(const Model& model) { return sha256_hex(encode_model(model)); }

}  // namespace bset
