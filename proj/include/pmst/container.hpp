#ifndef PMST_CONTAINER_HPP
#define PMST_CONTAINER_HPP

#include <map>
#include <string>

#include "pmst/tensor.hpp"

namespace pmst::container {

// Self-describing tensor container: magic "PMST", version, UTF-8 header
// (JSON), tensor directory (name, dtype tag, shape, payload offset), then
// little-endian float64 payload. Round trips are bit-exact.
constexpr uint32_t kVersion = 1;

struct File {
  std::string header;  // JSON document, format-specific
  std::map<std::string, Tensor> tensors;
};

void save(const std::string& path, const std::string& header,
          const std::map<std::string, Tensor>& tensors);
File load(const std::string& path);

// loads only the header (cheap peek at config/vocab)
std::string load_header(const std::string& path);

}  // namespace pmst::container

#endif
