#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stretchlab/core/errors.hpp"
#include "stretchlab/core/tensor.hpp"

namespace stretchlab {

// Self-describing array container: named nd-arrays stored as .npy members of
// an uncompressed zip, plus optional raw members (e.g. a JSON manifest).
// Write order and timestamps are fixed so outputs are byte-stable.

struct NpzEntry {
  std::string dtype;  // "<f4", "<f8", "<i4", "|u1"; empty for raw members
  std::vector<int> shape;
  std::vector<uint8_t> bytes;
};

class NpzWriter {
 public:
  void add(const std::string& name, const Tensor<float>& t);
  void add(const std::string& name, const Tensor<double>& t);
  void add(const std::string& name, const Tensor<int32_t>& t);
  void add(const std::string& name, const Tensor<uint8_t>& t);
  void add_raw(const std::string& name, const std::string& contents);
  void save(const std::string& path) const;

 private:
  struct Member {
    std::string file_name;
    std::vector<uint8_t> bytes;
  };
  std::vector<Member> members_;
  void add_npy(const std::string& name, const char* dtype, int elem_size,
               const std::vector<int>& shape, const void* data);
};

class NpzReader {
 public:
  explicit NpzReader(const std::string& path);

  bool has(const std::string& name) const;
  std::vector<std::string> names() const;

  const NpzEntry& entry(const std::string& name) const;
  std::string raw(const std::string& name) const;

  template <typename T>
  Tensor<T> tensor(const std::string& name) const;

 private:
  std::map<std::string, NpzEntry> entries_;
};

}  // namespace stretchlab
