#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "surfreg/error.hpp"
#include "surfreg/model.hpp"

namespace SURFREG_NAMESPACE {

namespace {

// Layout (all integers little-endian):
//   "MRGCKPT" + version byte '1'
//   u32 float width in bytes
//   u32 header entries, each: u32 key length, key, u32 value length, value
//   u32 tensor count, each: u32 name length, name, u32 rank, u64 dims...,
//       row-major values of the declared width
constexpr char kMagicPrefix[] = "MRGCKPT";
constexpr char kVersion = '1';

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.append(c, n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  void bytes(void* p, std::size_t n, const char* what) {
    if (pos_ + n > data_.size()) {
      throw TruncatedFileError(std::string("checkpoint truncated while reading ") + what);
    }
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    if (pos_ + n > data_.size()) {
      throw TruncatedFileError(std::string("checkpoint truncated while reading ") + what);
    }
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::string& path,
                     const KeyValues& extra_header) {
  KeyValues header = config.to_key_values();
  header["model.init_scheme"] = "he-uniform;gauss-0.02";
  for (const auto& [k, v] : extra_header) header[k] = v;

  Writer w;
  w.bytes(kMagicPrefix, 7);
  w.bytes(&kVersion, 1);
  w.u32(static_cast<std::uint32_t>(kRealBytes));
  w.u32(static_cast<std::uint32_t>(header.size()));
  for (const auto& [k, v] : header) {
    w.str(k);
    w.str(v);
  }
  const auto named = params.named();
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& nt : named) {
    w.str(nt.name);
    w.u32(static_cast<std::uint32_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) w.u64(d);
    const auto v = nt.tensor.values();
    w.bytes(v.data(), v.size() * sizeof(Real));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw FormatError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));

  char magic[8];
  r.bytes(magic, 8, "magic");
  if (std::memcmp(magic, kMagicPrefix, 7) != 0) throw FormatError("not a checkpoint (bad magic): " + path);
  if (magic[7] != kVersion) {
    throw VersionError(std::string("checkpoint format version '") + magic[7] +
                       "' is not supported (expected '" + kVersion + "')");
  }
  const std::uint32_t width = r.u32("float width");
  if (width != kRealBytes) {
    throw PrecisionError("checkpoint stores " + std::to_string(width * 8) +
                         "-bit floats but this build uses " + std::to_string(kRealBytes * 8) +
                         "-bit floats");
  }

  Checkpoint ck;
  const std::uint32_t entries = r.u32("header size");
  for (std::uint32_t i = 0; i < entries; ++i) {
    std::string k = r.str("header key");
    ck.header[k] = r.str("header value");
  }
  KeyValues model_keys;
  for (const auto& [k, v] : ck.header) {
    if (k.rfind("model.", 0) == 0 && k != "model.init_scheme") model_keys[k] = v;
  }
  ck.config.apply(model_keys);
  ck.config.validate();
  ck.params = ModelParams::init(ck.config);

  const auto expected = ck.params.named();
  const std::uint32_t count = r.u32("tensor count");
  if (count != expected.size()) {
    throw DimensionError("checkpoint holds " + std::to_string(count) + " tensors, configuration implies " +
                         std::to_string(expected.size()));
  }
  for (const auto& nt : expected) {
    const std::string name = r.str("tensor name");
    if (name != nt.name) throw DimensionError("checkpoint tensor '" + name + "' where '" + nt.name + "' was expected");
    const std::uint32_t rank = r.u32("tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64("tensor dims"));
    if (shape != nt.tensor.shape()) {
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_string(shape) +
                           ", configuration implies " + shape_string(nt.tensor.shape()));
    }
    Tensor t = nt.tensor;
    auto dst = t.mutable_values();
    r.bytes(dst.data(), dst.size() * sizeof(Real), "tensor values");
    detail::check_finite(dst, "checkpoint load");
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint tensors: " + path);
  return ck;
}

}  // namespace SURFREG_NAMESPACE
