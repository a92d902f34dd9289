#include "pmst/container.hpp"

#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace pmst::container {

namespace {

constexpr char kMagic[4] = {'P', 'M', 'S', 'T'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_bytes(std::FILE* f, const void* p, size_t n) {
  PMST_CHECK(std::fwrite(p, 1, n, f) == n, "container: short write");
}

void read_bytes(std::FILE* f, void* p, size_t n) {
  PMST_CHECK(std::fread(p, 1, n, f) == n, "container: truncated file");
}

template <typename T>
void write_pod(std::FILE* f, T v) {
  write_bytes(f, &v, sizeof(T));
}

template <typename T>
T read_pod(std::FILE* f) {
  T v;
  read_bytes(f, &v, sizeof(T));
  return v;
}

struct DirEntry {
  std::string name;
  uint8_t dtype;
  std::vector<int64_t> shape;
  uint64_t offset;
  uint64_t nbytes;
};

}  // namespace

void save(const std::string& path, const std::string& header,
          const std::map<std::string, Tensor>& tensors) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  PMST_CHECK(f != nullptr, "container: cannot open for write: " + path);

  write_bytes(f.get(), kMagic, 4);
  write_pod<uint32_t>(f.get(), kVersion);
  write_pod<uint64_t>(f.get(), header.size());
  write_bytes(f.get(), header.data(), header.size());

  write_pod<uint64_t>(f.get(), tensors.size());
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    write_pod<uint32_t>(f.get(), static_cast<uint32_t>(name.size()));
    write_bytes(f.get(), name.data(), name.size());
    write_pod<uint8_t>(f.get(), 0);  // dtype 0 = float64
    write_pod<uint32_t>(f.get(), static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) write_pod<uint64_t>(f.get(), static_cast<uint64_t>(d));
    uint64_t nbytes = static_cast<uint64_t>(t.data.size()) * sizeof(double);
    write_pod<uint64_t>(f.get(), offset);
    write_pod<uint64_t>(f.get(), nbytes);
    offset += nbytes;
  }
  for (const auto& [name, t] : tensors)
    write_bytes(f.get(), t.data.data(), t.data.size() * sizeof(double));
}

namespace {

std::string read_preamble(std::FILE* f, const std::string& path) {
  char magic[4];
  read_bytes(f, magic, 4);
  PMST_CHECK(std::memcmp(magic, kMagic, 4) == 0, "container: bad magic in " + path);
  uint32_t version = read_pod<uint32_t>(f);
  PMST_CHECK(version == kVersion,
             "container: unsupported format version " + std::to_string(version) + " in " + path);
  uint64_t hlen = read_pod<uint64_t>(f);
  std::string header(hlen, '\0');
  read_bytes(f, header.data(), hlen);
  return header;
}

}  // namespace

File load(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  PMST_CHECK(f != nullptr, "container: cannot open: " + path);

  File out;
  out.header = read_preamble(f.get(), path);

  uint64_t count = read_pod<uint64_t>(f.get());
  std::vector<DirEntry> dir(count);
  for (auto& e : dir) {
    uint32_t nlen = read_pod<uint32_t>(f.get());
    e.name.resize(nlen);
    read_bytes(f.get(), e.name.data(), nlen);
    e.dtype = read_pod<uint8_t>(f.get());
    PMST_CHECK(e.dtype == 0, "container: unknown dtype tag");
    uint32_t ndim = read_pod<uint32_t>(f.get());
    e.shape.resize(ndim);
    for (auto& d : e.shape) d = static_cast<int64_t>(read_pod<uint64_t>(f.get()));
    e.offset = read_pod<uint64_t>(f.get());
    e.nbytes = read_pod<uint64_t>(f.get());
  }

  // offsets must tile the payload without overlap
  uint64_t expect = 0;
  for (const auto& e : dir) {
    PMST_CHECK(e.offset == expect, "container: overlapping or misordered tensor payload");
    expect += e.nbytes;
  }

  for (const auto& e : dir) {
    Tensor t(e.shape);
    PMST_CHECK(static_cast<uint64_t>(t.numel()) * sizeof(double) == e.nbytes,
               "container: directory/shape size mismatch for " + e.name);
    read_bytes(f.get(), t.data.data(), e.nbytes);
    out.tensors.emplace(e.name, std::move(t));
  }
  return out;
}

std::string load_header(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  PMST_CHECK(f != nullptr, "container: cannot open: " + path);
  return read_preamble(f.get(), path);
}

}  // namespace pmst::container
