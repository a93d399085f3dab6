#include "enaet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace enaet {

namespace {

constexpr const char* kTypeNames[5] = {"f32", "f64", "i64", "u64", "bytes"};

std::uint64_t fnv1a(const unsigned char* data, std::size_t n, std::uint64_t h) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void append_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

struct Cursor {
  const unsigned char* p;
  std::size_t left;
  const std::string& path;

  void take(void* dst, std::size_t n) {
    if (n > left) throw std::runtime_error(path + ": truncated archive");
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    unsigned char b[4];
    take(b, 4);
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    unsigned char b[8];
    take(b, 8);
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
};

}  // namespace

void Archive::put_f32(const std::string& key, const float* data, const std::vector<int>& dims) {
  Entry e;
  e.dtype = 0;
  std::size_t n = 1;
  for (int d : dims) {
    e.dims.push_back(d);
    n *= static_cast<std::size_t>(d);
  }
  e.bytes.resize(n * sizeof(float));
  std::memcpy(e.bytes.data(), data, e.bytes.size());
  entries_[key] = std::move(e);
}

void Archive::put_f64(const std::string& key, const double* data, const std::vector<int>& dims) {
  Entry e;
  e.dtype = 1;
  std::size_t n = 1;
  for (int d : dims) {
    e.dims.push_back(d);
    n *= static_cast<std::size_t>(d);
  }
  e.bytes.resize(n * sizeof(double));
  std::memcpy(e.bytes.data(), data, e.bytes.size());
  entries_[key] = std::move(e);
}

void Archive::put_i64(const std::string& key, std::int64_t value) {
  Entry e;
  e.dtype = 2;
  e.bytes.resize(8);
  std::memcpy(e.bytes.data(), &value, 8);
  entries_[key] = std::move(e);
}

void Archive::put_u64(const std::string& key, std::uint64_t value) {
  Entry e;
  e.dtype = 3;
  e.bytes.resize(8);
  std::memcpy(e.bytes.data(), &value, 8);
  entries_[key] = std::move(e);
}

void Archive::put_str(const std::string& key, const std::string& value) {
  Entry e;
  e.dtype = 4;
  e.bytes.assign(value.begin(), value.end());
  entries_[key] = std::move(e);
}

template <typename T>
void Archive::put_tensor(const std::string& key, const Tensor<T>& t) {
  if constexpr (sizeof(T) == sizeof(float))
    put_f32(key, reinterpret_cast<const float*>(t.data()), t.dims());
  else
    put_f64(key, reinterpret_cast<const double*>(t.data()), t.dims());
}

template void Archive::put_tensor<float>(const std::string&, const Tensor<float>&);
template void Archive::put_tensor<double>(const std::string&, const Tensor<double>&);

std::vector<std::string> Archive::keys() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

const Archive::Entry& Archive::fetch(const std::string& key, std::uint8_t dtype) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw std::runtime_error("archive: missing entry `" + key + "`");
  if (it->second.dtype != dtype)
    throw std::runtime_error("archive: entry `" + key + "` holds " +
                             kTypeNames[it->second.dtype] + ", expected " + kTypeNames[dtype]);
  return it->second;
}

template <typename T>
void Archive::get_tensor(const std::string& key, Tensor<T>& t) const {
  const std::uint8_t want = (sizeof(T) == sizeof(float)) ? 0 : 1;
  const Entry& e = fetch(key, want);
  if (static_cast<std::size_t>(e.dims.size()) != static_cast<std::size_t>(t.ndim()))
    throw std::runtime_error("archive: entry `" + key + "` rank mismatch");
  for (std::size_t i = 0; i < e.dims.size(); ++i)
    if (e.dims[i] != t.dim(static_cast<int>(i)))
      throw std::runtime_error("archive: entry `" + key + "` shape mismatch");
  std::memcpy(t.data(), e.bytes.data(), e.bytes.size());
}

template void Archive::get_tensor<float>(const std::string&, Tensor<float>&) const;
template void Archive::get_tensor<double>(const std::string&, Tensor<double>&) const;

std::vector<int> Archive::tensor_dims(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw std::runtime_error("archive: missing entry `" + key + "`");
  if (it->second.dtype > 1)
    throw std::runtime_error("archive: entry `" + key + "` is not a tensor");
  std::vector<int> dims;
  for (std::int64_t d : it->second.dims) dims.push_back(static_cast<int>(d));
  return dims;
}

void Archive::get_f64_buffer(const std::string& key, double* data, std::size_t count) const {
  const Entry& e = fetch(key, 1);
  if (e.bytes.size() != count * sizeof(double))
    throw std::runtime_error("archive: entry `" + key + "` size mismatch");
  std::memcpy(data, e.bytes.data(), e.bytes.size());
}

void Archive::get_f32_buffer(const std::string& key, float* data, std::size_t count) const {
  const Entry& e = fetch(key, 0);
  if (e.bytes.size() != count * sizeof(float))
    throw std::runtime_error("archive: entry `" + key + "` size mismatch");
  std::memcpy(data, e.bytes.data(), e.bytes.size());
}

std::int64_t Archive::get_i64(const std::string& key) const {
  const Entry& e = fetch(key, 2);
  std::int64_t v;
  std::memcpy(&v, e.bytes.data(), 8);
  return v;
}

std::uint64_t Archive::get_u64(const std::string& key) const {
  const Entry& e = fetch(key, 3);
  std::uint64_t v;
  std::memcpy(&v, e.bytes.data(), 8);
  return v;
}

std::string Archive::get_str(const std::string& key) const {
  const Entry& e = fetch(key, 4);
  return std::string(e.bytes.begin(), e.bytes.end());
}

void Archive::save(const std::string& path) const {
  std::vector<unsigned char> body;
  body.insert(body.end(), kArchiveMagic, kArchiveMagic + 8);
  append_u32(body, kArchiveVersion);
  append_u64(body, entries_.size());
  for (const auto& [key, e] : entries_) {
    append_u32(body, static_cast<std::uint32_t>(key.size()));
    body.insert(body.end(), key.begin(), key.end());
    body.push_back(e.dtype);
    append_u32(body, static_cast<std::uint32_t>(e.dims.size()));
    for (std::int64_t d : e.dims) append_u64(body, static_cast<std::uint64_t>(d));
    append_u64(body, e.bytes.size());
    body.insert(body.end(), e.bytes.begin(), e.bytes.end());
  }
  const std::uint64_t sum = fnv1a(body.data(), body.size(), 1469598103934665603ull);
  append_u64(body, sum);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(body.data()),
            static_cast<std::streamsize>(body.size()));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Archive Archive::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::vector<unsigned char> body((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (body.size() < 8 + 4 + 8 + 8) throw std::runtime_error(path + ": truncated archive");

  const std::uint64_t stored_sum = [&] {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(body[body.size() - 8 + static_cast<std::size_t>(i)])
           << (8 * i);
    return v;
  }();
  const std::uint64_t actual =
      fnv1a(body.data(), body.size() - 8, 1469598103934665603ull);
  if (stored_sum != actual) throw std::runtime_error(path + ": checksum mismatch, archive corrupt");

  Cursor cur{body.data(), body.size() - 8, path};
  char magic[8];
  cur.take(magic, 8);
  if (std::memcmp(magic, kArchiveMagic, 8) != 0)
    throw std::runtime_error(path + ": not a checkpoint archive");
  const std::uint32_t version = cur.u32();
  if (version != kArchiveVersion)
    throw std::runtime_error(path + ": unsupported archive version " + std::to_string(version));

  Archive a;
  const std::uint64_t count = cur.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t klen = cur.u32();
    std::string key(klen, '\0');
    cur.take(key.data(), klen);
    Entry e;
    cur.take(&e.dtype, 1);
    if (e.dtype > 4) throw std::runtime_error(path + ": unknown entry type");
    const std::uint32_t ndim = cur.u32();
    for (std::uint32_t d = 0; d < ndim; ++d)
      e.dims.push_back(static_cast<std::int64_t>(cur.u64()));
    const std::uint64_t nbytes = cur.u64();
    e.bytes.resize(nbytes);
    cur.take(e.bytes.data(), nbytes);
    a.entries_[key] = std::move(e);
  }
  return a;
}

}  // namespace enaet
