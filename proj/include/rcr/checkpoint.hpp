#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "rcr/adam.hpp"
#include "rcr/model.hpp"

namespace rcr {

// Flat binary container: magic "RCRW", version u32, count-prefixed named
// f32 arrays (name length u16, name bytes, rank u32, dims u32 each, values),
// then count-prefixed named u64 counters. Little-endian, bit-exact.

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct CheckpointData {
  std::vector<NamedArray> arrays;
  std::vector<std::pair<std::string, std::uint64_t>> counters;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
  const std::uint64_t* find_counter(const std::string& name) const {
    for (const auto& c : counters)
      if (c.first == name) return &c.second;
    return nullptr;
  }
};

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'R', 'C', 'R', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& os) : os_(os) {}
  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    os_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  void put_bytes(const void* data, size_t n) {
    os_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void put_name(const std::string& name) {
    require(name.size() <= 0xffff, "checkpoint: name too long");
    put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    put_bytes(name.data(), name.size());
  }

 private:
  std::ostream& os_;
};

class ByteReader {
 public:
  explicit ByteReader(std::istream& is) : is_(is) {}
  template <class T>
  T get(const char* what) {
    T value;
    is_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is_) throw FormatError(std::string("checkpoint: truncated ") + what, offset_);
    offset_ += sizeof(T);
    return value;
  }
  void get_bytes(void* data, size_t n, const char* what) {
    is_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!is_) throw FormatError(std::string("checkpoint: truncated ") + what, offset_);
    offset_ += n;
  }
  std::string get_name() {
    const auto len = get<std::uint16_t>("name length");
    std::string name(len, '\0');
    get_bytes(name.data(), len, "name");
    return name;
  }
  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& is_;
  std::uint64_t offset_ = 0;
};

}  // namespace detail

inline void write_checkpoint_file(const std::string& path, const CheckpointData& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  detail::ByteWriter w(os);
  w.put_bytes(detail::kCheckpointMagic, 4);
  w.put<std::uint32_t>(detail::kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(data.arrays.size()));
  for (const auto& a : data.arrays) {
    w.put_name(a.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(a.dims.size()));
    std::uint64_t count = 1;
    for (auto d : a.dims) {
      w.put<std::uint32_t>(d);
      count *= d;
    }
    detail::require(count == a.data.size(), "checkpoint: dims do not match data size");
    w.put_bytes(a.data.data(), a.data.size() * sizeof(float));
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(data.counters.size()));
  for (const auto& [name, value] : data.counters) {
    w.put_name(name);
    w.put<std::uint64_t>(value);
  }
  os.flush();
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline CheckpointData read_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  detail::ByteReader r(is);
  char magic[4];
  r.get_bytes(magic, 4, "magic");
  if (std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != detail::kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);

  CheckpointData data;
  const auto array_count = r.get<std::uint32_t>("array count");
  data.arrays.resize(array_count);
  for (auto& a : data.arrays) {
    a.name = r.get_name();
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("checkpoint: implausible rank for " + a.name, r.offset());
    std::uint64_t count = 1;
    a.dims.resize(rank);
    for (auto& d : a.dims) {
      d = r.get<std::uint32_t>("dim");
      count *= d;
    }
    a.data.resize(count);
    r.get_bytes(a.data.data(), count * sizeof(float), ("array " + a.name).c_str());
  }
  const auto counter_count = r.get<std::uint32_t>("counter count");
  data.counters.resize(counter_count);
  for (auto& [name, value] : data.counters) {
    name = r.get_name();
    value = r.get<std::uint64_t>("counter value");
  }
  return data;
}

namespace detail {

template <class S>
NamedArray to_named_array(const std::string& name, const Matrix<S>& m, int rank) {
  NamedArray a;
  a.name = name;
  if (rank == 1) {
    a.dims = {static_cast<std::uint32_t>(m.size())};
  } else {
    a.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  }
  a.data.resize(static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      a.data[static_cast<size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
  return a;
}

template <class S>
void from_named_array(const NamedArray& a, Matrix<S>& m) {
  std::uint64_t count = 1;
  for (auto d : a.dims) count *= d;
  if (count != static_cast<std::uint64_t>(m.size()))
    throw std::invalid_argument("checkpoint: array size mismatch for " + a.name);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = static_cast<S>(a.data[static_cast<size_t>(i * m.cols() + j)]);
}

}  // namespace detail

/// Serializes parameters, BN running statistics, and schedule counters.
template <class S>
CheckpointData checkpoint_from_model(RcrModel<S>& model,
                                     const AdamOptimizer<S>* optimizer = nullptr) {
  CheckpointData data;
  for (auto* p : model.parameters())
    data.arrays.push_back(detail::to_named_array(p->name, p->w, p->rank));
  for (auto* bn : model.batchnorms()) {
    const std::string base = bn->gamma.name.substr(0, bn->gamma.name.rfind('.'));
    data.arrays.push_back(detail::to_named_array(base + ".running_mean", bn->running_mean, 1));
    data.arrays.push_back(detail::to_named_array(base + ".running_var", bn->running_var, 1));
    data.counters.emplace_back(base + ".samples_seen",
                               static_cast<std::uint64_t>(bn->samples_seen));
  }
  if (optimizer)
    data.counters.emplace_back("adam.step_count",
                               static_cast<std::uint64_t>(optimizer->step_count()));
  return data;
}

/// Restores a model (and optionally an optimizer's step counter) from a
/// parsed checkpoint. Shapes must match the constructed model exactly.
template <class S>
void checkpoint_to_model(const CheckpointData& data, RcrModel<S>& model,
                         AdamOptimizer<S>* optimizer = nullptr) {
  for (auto* p : model.parameters()) {
    const NamedArray* a = data.find(p->name);
    detail::require(a != nullptr, ("checkpoint: missing array " + p->name).c_str());
    detail::from_named_array(*a, p->w);
  }
  for (auto* bn : model.batchnorms()) {
    const std::string base = bn->gamma.name.substr(0, bn->gamma.name.rfind('.'));
    const NamedArray* mean = data.find(base + ".running_mean");
    const NamedArray* var = data.find(base + ".running_var");
    detail::require(mean && var, "checkpoint: missing BN running statistics");
    detail::from_named_array(*mean, bn->running_mean);
    detail::from_named_array(*var, bn->running_var);
    if (const auto* seen = data.find_counter(base + ".samples_seen"))
      bn->samples_seen = static_cast<std::int64_t>(*seen);
  }
  if (optimizer) {
    if (const auto* steps = data.find_counter("adam.step_count"))
      optimizer->set_step_count(static_cast<std::int64_t>(*steps));
  }
}

template <class S>
void save_checkpoint(const std::string& path, RcrModel<S>& model,
                     const AdamOptimizer<S>* optimizer = nullptr) {
  write_checkpoint_file(path, checkpoint_from_model(model, optimizer));
}

template <class S>
void load_checkpoint(const std::string& path, RcrModel<S>& model,
                     AdamOptimizer<S>* optimizer = nullptr) {
  checkpoint_to_model(read_checkpoint_file(path), model, optimizer);
}

/// Key=value sidecar describing a checkpoint (hyperparameters, class order).
inline void write_meta_file(const std::string& path,
                            const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("meta: cannot open for writing: " + path);
  for (const auto& [k, v] : entries) os << k << " = " << v << "\n";
}

inline std::vector<std::pair<std::string, std::string>> read_meta_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("meta: cannot open: " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return entries;
}

}  // namespace rcr
