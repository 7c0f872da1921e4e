#pragma once

// Binary checkpoint / field-grid formats and CSV helpers.
//
// Parameter checkpoint ("VFPAR1"): the 6 magic bytes, then one record
// per param: u32 name length, name bytes, u32 rank, u64 dims[rank],
// little-endian float64 values.  Complex-weight tensors serialize
// through the same path; their re/im interleaving is part of the shape.
//
// Field grid ("VFGRID1"): the 7 magic bytes, u32 rank, u64 dims[rank],
// row-major little-endian float64 values.

#include <bit>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "vflow/nn.hpp"

namespace vflow {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace detail {

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ConfigError("truncated binary stream");
  return v;
}

}  // namespace detail

inline void write_array_record(std::ostream& os, const std::string& name, const Array& a) {
  detail::write_pod<std::uint32_t>(os, std::uint32_t(name.size()));
  os.write(name.data(), std::streamsize(name.size()));
  detail::write_pod<std::uint32_t>(os, std::uint32_t(a.rank()));
  for (std::size_t d : a.shape) detail::write_pod<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(a.data.data()),
           std::streamsize(a.data.size() * sizeof(double)));
}

inline bool read_array_record(std::istream& is, std::string& name, Array& a) {
  std::uint32_t nl = 0;
  is.read(reinterpret_cast<char*>(&nl), sizeof(nl));
  if (is.gcount() == 0) return false;  // clean EOF
  if (!is) throw ConfigError("truncated record header");
  name.resize(nl);
  is.read(name.data(), nl);
  const auto rank = detail::read_pod<std::uint32_t>(is);
  Shape s(rank);
  for (auto& d : s) d = std::size_t(detail::read_pod<std::uint64_t>(is));
  a = Array(s);
  is.read(reinterpret_cast<char*>(a.data.data()),
          std::streamsize(a.data.size() * sizeof(double)));
  if (!is) throw ConfigError("truncated record payload for " + name);
  return true;
}

inline void save_params(const std::string& path, const ParamRefs& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os.write("VFPAR1", 6);
  for (const Param* p : params) write_array_record(os, p->name, p->value);
  if (!os) throw ConfigError("write failed on " + path);
}

inline void load_params(const std::string& path, const ParamRefs& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  char magic[6];
  is.read(magic, 6);
  if (!is || std::string(magic, 6) != "VFPAR1")
    throw ConfigError(path + " is not a parameter checkpoint");
  std::map<std::string, Array> loaded;
  std::string name;
  Array a;
  while (read_array_record(is, name, a)) {
    if (!loaded.emplace(name, std::move(a)).second)
      throw ConfigError("duplicate param " + name + " in " + path);
  }
  for (Param* p : params) {
    auto it = loaded.find(p->name);
    if (it == loaded.end()) throw ConfigError("checkpoint missing param " + p->name);
    if (it->second.shape != p->value.shape)
      throw ConfigError("shape mismatch for " + p->name + ": file " +
                        shape_str(it->second.shape) + " vs model " +
                        shape_str(p->value.shape));
    p->value = std::move(it->second);
    loaded.erase(it);
  }
  if (!loaded.empty())
    throw ConfigError("checkpoint has unknown param " + loaded.begin()->first);
}

inline void write_grid(std::ostream& os, const Array& a) {
  os.write("VFGRID1", 7);
  detail::write_pod<std::uint32_t>(os, std::uint32_t(a.rank()));
  for (std::size_t d : a.shape) detail::write_pod<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(a.data.data()),
           std::streamsize(a.data.size() * sizeof(double)));
}

inline bool read_grid(std::istream& is, Array& a) {
  char magic[7];
  is.read(magic, 7);
  if (is.gcount() == 0) return false;
  if (!is || std::string(magic, 7) != "VFGRID1") throw ConfigError("bad field-grid magic");
  const auto rank = detail::read_pod<std::uint32_t>(is);
  Shape s(rank);
  for (auto& d : s) d = std::size_t(detail::read_pod<std::uint64_t>(is));
  a = Array(s);
  is.read(reinterpret_cast<char*>(a.data.data()),
          std::streamsize(a.data.size() * sizeof(double)));
  if (!is) throw ConfigError("truncated field grid");
  return true;
}

inline void save_grid(const std::string& path, const Array& a) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  write_grid(os, a);
}

inline Array load_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  Array a;
  if (!read_grid(is, a)) throw ConfigError(path + " holds no field grid");
  return a;
}

// ====================== CSV ======================
// %.17g round-trips doubles exactly, which the replay contract relies on.

inline std::string fmt_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter() = default;

  void open(const std::string& path, const std::vector<std::string>& header) {
    os_.open(path);
    if (!os_) throw ConfigError("cannot open " + path + " for writing");
    for (std::size_t i = 0; i < header.size(); ++i) os_ << (i ? "," : "") << header[i];
    os_ << "\n";
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << "\n";
    os_.flush();
  }

  bool is_open() const { return os_.is_open(); }

 private:
  std::ofstream os_;
};

}  // namespace vflow
