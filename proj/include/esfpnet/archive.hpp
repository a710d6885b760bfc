#pragma once

// Named-tensor container used for both model files and pretrained encoder
// weight archives.
//
// Layout (little-endian):
//   magic     8 bytes  "ESFPARC\0"
//   version   u32      (kArchiveVersion)
//   variant   u32 length + bytes   (empty for a bare weight archive)
//   count     u32
//   count x { name: u32 length + bytes; dtype: u8 (0 = f32, 1 = f64);
//             rank: u32; dims: rank x i64; data: prod(dims) values }
//   checksum  u64      FNV-1a over every preceding byte

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace esfp {

inline constexpr std::uint32_t kArchiveVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

/// Truncated, corrupted, or wrong-version file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stored tensor disagrees with the model that is loading it.
class TensorMismatchError : public std::runtime_error {
 public:
  TensorMismatchError(std::string tensor_name, const std::string& what)
      : std::runtime_error(what), tensor(std::move(tensor_name)) {}
  std::string tensor;
};

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> dims;
  DType dtype = DType::f32;
  std::vector<double> values;  // widened; f32 payloads round-trip exactly
};

struct Archive {
  std::uint32_t version = kArchiveVersion;
  std::string variant;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

std::vector<unsigned char> encode_archive(const Archive& archive);
Archive decode_archive(const std::vector<unsigned char>& bytes);

std::uint64_t fnv1a(const unsigned char* data, std::size_t n,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace esfp
