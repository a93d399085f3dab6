#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "enaet/tensor.hpp"

// Checkpoint container: a flat binary archive of named typed entries with a
// trailing checksum. Entries hold tensors (float or double), 64-bit integer
// scalars, or byte strings. Loading a tensor into a buffer of the wrong
// element type or shape is an error; every failure names the offending key.

namespace enaet {

inline constexpr char kArchiveMagic[8] = {'E', 'N', 'A', 'E', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kArchiveVersion = 1;

class Archive {
 public:
  void put_f32(const std::string& key, const float* data, const std::vector<int>& dims);
  void put_f64(const std::string& key, const double* data, const std::vector<int>& dims);
  void put_i64(const std::string& key, std::int64_t value);
  void put_u64(const std::string& key, std::uint64_t value);
  void put_str(const std::string& key, const std::string& value);

  template <typename T>
  void put_tensor(const std::string& key, const Tensor<T>& t);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::vector<std::string> keys() const;

  // The target must already carry the stored shape.
  template <typename T>
  void get_tensor(const std::string& key, Tensor<T>& t) const;
  std::vector<int> tensor_dims(const std::string& key) const;
  void get_f64_buffer(const std::string& key, double* data, std::size_t count) const;
  void get_f32_buffer(const std::string& key, float* data, std::size_t count) const;
  std::int64_t get_i64(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::string get_str(const std::string& key) const;

  void save(const std::string& path) const;
  static Archive load(const std::string& path);

 private:
  struct Entry {
    std::uint8_t dtype = 0;  // 0 f32, 1 f64, 2 i64, 3 u64, 4 bytes
    std::vector<std::int64_t> dims;
    std::vector<unsigned char> bytes;
  };
  const Entry& fetch(const std::string& key, std::uint8_t dtype) const;
  std::map<std::string, Entry> entries_;  // ordered for stable files
};

}  // namespace enaet
