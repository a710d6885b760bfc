#include "esfpnet/archive.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace esfp {

namespace {

constexpr char kMagic[8] = {'E', 'S', 'F', 'P', 'A', 'R', 'C', '\0'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<unsigned char>& bytes() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t n) : data_(data), n_(n) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto len = get<std::uint32_t>();
    need(len);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
    pos_ += len;
    return s;
  }
  const unsigned char* take(std::size_t n) {
    need(n);
    const unsigned char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > n_ - pos_) throw FormatError("archive truncated at byte " + std::to_string(pos_));
  }
  const unsigned char* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a(const unsigned char* data, std::size_t n, std::uint64_t h) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

const NamedTensor* Archive::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<unsigned char> encode_archive(const Archive& archive) {
  Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put(archive.version);
  w.put_string(archive.variant);
  w.put(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& t : archive.tensors) {
    std::int64_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != static_cast<std::int64_t>(t.values.size()))
      throw FormatError("tensor '" + t.name + "': dims do not match value count");
    w.put_string(t.name);
    w.put(static_cast<std::uint8_t>(t.dtype));
    w.put(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.put(d);
    if (t.dtype == DType::f32) {
      for (double v : t.values) w.put(static_cast<float>(v));
    } else {
      w.put_bytes(t.values.data(), t.values.size() * sizeof(double));
    }
  }
  auto& bytes = w.bytes();
  const std::uint64_t sum = fnv1a(bytes.data(), bytes.size());
  w.put(sum);
  return std::move(bytes);
}

Archive decode_archive(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t))
    throw FormatError("archive truncated: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("not an ESFP archive (bad magic)");

  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (fnv1a(bytes.data(), body) != stored)
    throw FormatError("archive checksum mismatch (truncated or corrupted file)");

  Reader r(bytes.data(), body);
  r.take(sizeof(kMagic));
  Archive a;
  a.version = r.get<std::uint32_t>();
  if (a.version != kArchiveVersion)
    throw FormatError("unsupported archive version " + std::to_string(a.version));
  a.variant = r.get_string();
  const auto count = r.get<std::uint32_t>();
  a.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_string();
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw FormatError("tensor '" + t.name + "': unknown dtype");
    t.dtype = static_cast<DType>(dtype);
    const auto rank = r.get<std::uint32_t>();
    std::int64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::int64_t>();
      if (d < 0) throw FormatError("tensor '" + t.name + "': negative dimension");
      t.dims.push_back(d);
      n *= d;
    }
    t.values.resize(static_cast<std::size_t>(n));
    if (t.dtype == DType::f32) {
      const unsigned char* p = r.take(static_cast<std::size_t>(n) * sizeof(float));
      for (std::int64_t k = 0; k < n; ++k) {
        float v;
        std::memcpy(&v, p + k * sizeof(float), sizeof(float));
        t.values[static_cast<std::size_t>(k)] = v;
      }
    } else {
      const unsigned char* p = r.take(static_cast<std::size_t>(n) * sizeof(double));
      std::memcpy(t.values.data(), p, static_cast<std::size_t>(n) * sizeof(double));
    }
    a.tensors.push_back(std::move(t));
  }
  if (r.position() != body) throw FormatError("trailing bytes before checksum");
  return a;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  const auto bytes = encode_archive(archive);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

}  // namespace esfp
