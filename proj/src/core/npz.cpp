#include "stretchlab/core/npz.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace stretchlab {

namespace {

uint32_t crc32_of(const uint8_t* data, size_t n) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void put16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put32(std::string& s, uint32_t v) {
  put16(s, static_cast<uint16_t>(v & 0xFFFF));
  put16(s, static_cast<uint16_t>(v >> 16));
}

uint16_t get16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t get32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

constexpr uint16_t kDosDate = 0x0021;  // 1980-01-01, fixed for reproducibility

std::string npy_header(const char* dtype, const std::vector<int>& shape) {
  std::string dict = "{'descr': '";
  dict += dtype;
  dict += "', 'fortran_order': False, 'shape': (";
  for (size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ",";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  size_t unpadded = 10 + dict.size() + 1;
  size_t padded = (unpadded + 63) / 64 * 64;
  dict.append(padded - unpadded, ' ');
  dict.push_back('\n');

  std::string out("\x93NUMPY\x01\x00", 8);
  put16(out, static_cast<uint16_t>(dict.size()));
  out += dict;
  return out;
}

}  // namespace

void NpzWriter::add_npy(const std::string& name, const char* dtype, int elem_size,
                        const std::vector<int>& shape, const void* data) {
  std::string header = npy_header(dtype, shape);
  int64_t count = Tensor<float>::count(shape);
  Member m;
  m.file_name = name + ".npy";
  m.bytes.resize(header.size() + static_cast<size_t>(count) * elem_size);
  std::memcpy(m.bytes.data(), header.data(), header.size());
  if (count > 0)
    std::memcpy(m.bytes.data() + header.size(), data,
                static_cast<size_t>(count) * elem_size);
  members_.push_back(std::move(m));
}

void NpzWriter::add(const std::string& name, const Tensor<float>& t) {
  add_npy(name, "<f4", 4, t.shape, t.data.data());
}
void NpzWriter::add(const std::string& name, const Tensor<double>& t) {
  add_npy(name, "<f8", 8, t.shape, t.data.data());
}
void NpzWriter::add(const std::string& name, const Tensor<int32_t>& t) {
  add_npy(name, "<i4", 4, t.shape, t.data.data());
}
void NpzWriter::add(const std::string& name, const Tensor<uint8_t>& t) {
  add_npy(name, "|u1", 1, t.shape, t.data.data());
}

void NpzWriter::add_raw(const std::string& name, const std::string& contents) {
  Member m;
  m.file_name = name;
  m.bytes.assign(contents.begin(), contents.end());
  members_.push_back(std::move(m));
}

void NpzWriter::save(const std::string& path) const {
  std::string out;
  std::string central;
  for (const Member& m : members_) {
    uint32_t crc = crc32_of(m.bytes.data(), m.bytes.size());
    uint32_t offset = static_cast<uint32_t>(out.size());
    uint32_t sz = static_cast<uint32_t>(m.bytes.size());

    put32(out, 0x04034b50);
    put16(out, 20);  // version needed
    put16(out, 0);   // flags
    put16(out, 0);   // method: store
    put16(out, 0);   // mod time
    put16(out, kDosDate);
    put32(out, crc);
    put32(out, sz);
    put32(out, sz);
    put16(out, static_cast<uint16_t>(m.file_name.size()));
    put16(out, 0);  // extra len
    out += m.file_name;
    out.append(reinterpret_cast<const char*>(m.bytes.data()), m.bytes.size());

    put32(central, 0x02014b50);
    put16(central, 20);  // version made by
    put16(central, 20);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, kDosDate);
    put32(central, crc);
    put32(central, sz);
    put32(central, sz);
    put16(central, static_cast<uint16_t>(m.file_name.size()));
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);  // disk number
    put16(central, 0);  // internal attrs
    put32(central, 0);  // external attrs
    put32(central, offset);
    central += m.file_name;
  }
  uint32_t cd_offset = static_cast<uint32_t>(out.size());
  out += central;
  put32(out, 0x06054b50);
  put16(out, 0);
  put16(out, 0);
  put16(out, static_cast<uint16_t>(members_.size()));
  put16(out, static_cast<uint16_t>(members_.size()));
  put32(out, static_cast<uint32_t>(central.size()));
  put32(out, cd_offset);
  put16(out, 0);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path);
}

namespace {

NpzEntry parse_npy(const uint8_t* data, size_t n, const std::string& name) {
  if (n < 10 || std::memcmp(data, "\x93NUMPY", 6) != 0)
    throw IoError("bad npy member: " + name);
  uint16_t hlen = get16(data + 8);
  std::string header(reinterpret_cast<const char*>(data + 10), hlen);

  NpzEntry e;
  auto dpos = header.find("'descr':");
  auto q1 = header.find('\'', dpos + 8);
  auto q2 = header.find('\'', q1 + 1);
  e.dtype = header.substr(q1 + 1, q2 - q1 - 1);
  if (header.find("'fortran_order': False") == std::string::npos)
    throw IoError("fortran order unsupported: " + name);
  auto sp = header.find("'shape':");
  auto p1 = header.find('(', sp);
  auto p2 = header.find(')', p1);
  std::string dims = header.substr(p1 + 1, p2 - p1 - 1);
  size_t pos = 0;
  while (pos < dims.size()) {
    while (pos < dims.size() && (dims[pos] == ' ' || dims[pos] == ',')) ++pos;
    if (pos >= dims.size()) break;
    size_t end = pos;
    while (end < dims.size() && isdigit(dims[end])) ++end;
    e.shape.push_back(std::stoi(dims.substr(pos, end - pos)));
    pos = end;
  }
  size_t data_off = 10 + hlen;
  e.bytes.assign(data + data_off, data + n);
  return e;
}

}  // namespace

NpzReader::NpzReader(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 22) throw IoError("truncated container: " + path);

  // EOCD without archive comment.
  const uint8_t* eocd = buf.data() + buf.size() - 22;
  if (get32(eocd) != 0x06054b50) throw IoError("bad container trailer: " + path);
  uint16_t n_entries = get16(eocd + 10);
  uint32_t cd_off = get32(eocd + 16);

  const uint8_t* p = buf.data() + cd_off;
  for (uint16_t i = 0; i < n_entries; ++i) {
    if (get32(p) != 0x02014b50) throw IoError("bad central directory: " + path);
    uint16_t method = get16(p + 10);
    uint32_t usize = get32(p + 24);
    uint16_t name_len = get16(p + 28);
    uint16_t extra_len = get16(p + 30);
    uint16_t comment_len = get16(p + 32);
    uint32_t local_off = get32(p + 42);
    std::string fname(reinterpret_cast<const char*>(p + 46), name_len);
    if (method != 0) throw IoError("compressed members unsupported: " + fname);

    const uint8_t* lh = buf.data() + local_off;
    if (get32(lh) != 0x04034b50) throw IoError("bad local header: " + fname);
    uint16_t lname = get16(lh + 26);
    uint16_t lextra = get16(lh + 28);
    const uint8_t* data = lh + 30 + lname + lextra;

    if (fname.size() > 4 && fname.substr(fname.size() - 4) == ".npy") {
      entries_[fname.substr(0, fname.size() - 4)] = parse_npy(data, usize, fname);
    } else {
      NpzEntry e;
      e.bytes.assign(data, data + usize);
      entries_[fname] = std::move(e);
    }
    p += 46 + name_len + extra_len + comment_len;
  }
}

bool NpzReader::has(const std::string& name) const { return entries_.count(name) > 0; }

std::vector<std::string> NpzReader::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

const NpzEntry& NpzReader::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IoError("missing container member: " + name);
  return it->second;
}

std::string NpzReader::raw(const std::string& name) const {
  const NpzEntry& e = entry(name);
  return std::string(e.bytes.begin(), e.bytes.end());
}

namespace {

template <typename T>
const char* dtype_tag();
template <>
const char* dtype_tag<float>() { return "<f4"; }
template <>
const char* dtype_tag<double>() { return "<f8"; }
template <>
const char* dtype_tag<int32_t>() { return "<i4"; }
template <>
const char* dtype_tag<uint8_t>() { return "|u1"; }

}  // namespace

template <typename T>
Tensor<T> NpzReader::tensor(const std::string& name) const {
  const NpzEntry& e = entry(name);
  if (e.dtype != dtype_tag<T>())
    throw IoError("dtype mismatch for " + name + ": stored " + e.dtype);
  Tensor<T> t(e.shape);
  if (e.bytes.size() != t.data.size() * sizeof(T))
    throw IoError("payload size mismatch for " + name);
  std::memcpy(t.data.data(), e.bytes.data(), e.bytes.size());
  return t;
}

template Tensor<float> NpzReader::tensor<float>(const std::string&) const;
template Tensor<double> NpzReader::tensor<double>(const std::string&) const;
template Tensor<int32_t> NpzReader::tensor<int32_t>(const std::string&) const;
template Tensor<uint8_t> NpzReader::tensor<uint8_t>(const std::string&) const;

}  // namespace stretchlab
