#include "tunein/params.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace tunein {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
Tensor<T>& ParameterSet<T>::create(const std::string& name, Shape shape) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto t = Tensor<T>::zeros(std::move(shape), true);
  return params_.emplace(name, std::move(t)).first->second;
}

template <typename T>
Tensor<T>& ParameterSet<T>::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

template <typename T>
std::vector<std::string> ParameterSet<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& kv : params_) out.push_back(kv.first);
  return out;
}

template <typename T>
std::vector<std::string> ParameterSet<T>::names_with_prefix(const std::vector<std::string>& prefixes) const {
  std::vector<std::string> out;
  for (const auto& kv : params_) {
    for (const auto& p : prefixes) {
      if (kv.first.rfind(p, 0) == 0) {
        out.push_back(kv.first);
        break;
      }
    }
  }
  return out;
}

template <typename T>
std::size_t ParameterSet<T>::count() const {
  std::size_t n = 0;
  for (const auto& kv : params_) n += kv.second.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& kv : params_) kv.second.zero_grad();
}

template <typename T>
void init_uniform(Tensor<T>& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void init_normal(Tensor<T>& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void init_constant(Tensor<T>& t, double value) {
  for (auto& v : t.mutable_data()) v = static_cast<T>(value);
}

namespace {

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
  char b[2];
  std::memcpy(b, &v, 2);
  out.append(b, 2);
}

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void take(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw CheckpointError("truncated checkpoint: " + path_);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U get() {
    U v;
    take(&v, sizeof(U));
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open for writing: " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void write_container(const std::string& path, const std::vector<NamedArray>& arrays) {
  std::string out = "GALR1";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (a.name.size() > 0xFFFF) throw CheckpointError("parameter name too long: " + a.name);
    if (a.shape.size() > 0xFF) throw CheckpointError("parameter rank too large: " + a.name);
    if (numel_of(a.shape) != a.data.size()) throw CheckpointError("array size mismatch: " + a.name);
    put_u16(out, static_cast<std::uint16_t>(a.name.size()));
    out += a.name;
    put_u8(out, static_cast<std::uint8_t>(a.shape.size()));
    for (const auto d : a.shape) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));
  }
  write_file_atomic(path, out);
}

std::vector<NamedArray> read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  Reader r(ss.str(), path);
  char magic[5];
  r.take(magic, 5);
  if (std::memcmp(magic, "GALR1", 5) != 0) throw CheckpointError("bad checkpoint magic: " + path);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto len = r.get<std::uint16_t>();
    a.name.resize(len);
    r.take(a.name.data(), len);
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t k = 0; k < rank; ++k) a.shape.push_back(r.get<std::uint32_t>());
    a.data.resize(numel_of(a.shape));
    r.take(a.data.data(), a.data.size() * sizeof(float));
    arrays.push_back(std::move(a));
  }
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint: " + path);
  return arrays;
}

template <typename T>
std::vector<NamedArray> to_arrays(const ParameterSet<T>& params, const std::string& prefix) {
  std::vector<NamedArray> out;
  for (const auto& [name, t] : params.map()) {
    NamedArray a{prefix + name, t.shape(), {}};
    a.data.assign(t.values().begin(), t.values().end());
    out.push_back(std::move(a));
  }
  return out;
}

template <typename T>
void assign_arrays(ParameterSet<T>& params, const std::vector<NamedArray>& arrays, const std::string& prefix) {
  std::unordered_map<std::string, const NamedArray*> index;
  for (const auto& a : arrays) index[a.name] = &a;
  for (auto& [name, t] : params.map()) {
    auto it = index.find(prefix + name);
    if (it == index.end()) throw CheckpointError("checkpoint lacks parameter " + prefix + name);
    if (it->second->shape != t.shape()) {
      throw CheckpointError("shape mismatch for " + prefix + name + ": checkpoint " + shape_str(it->second->shape) +
                            ", model " + shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    std::transform(it->second->data.begin(), it->second->data.end(), dst.begin(),
                   [](float v) { return static_cast<T>(v); });
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void init_uniform(Tensor<float>&, double, Rng&);
template void init_uniform(Tensor<double>&, double, Rng&);
template void init_normal(Tensor<float>&, double, Rng&);
template void init_normal(Tensor<double>&, double, Rng&);
template void init_constant(Tensor<float>&, double);
template void init_constant(Tensor<double>&, double);
template std::vector<NamedArray> to_arrays(const ParameterSet<float>&, const std::string&);
template std::vector<NamedArray> to_arrays(const ParameterSet<double>&, const std::string&);
template void assign_arrays(ParameterSet<float>&, const std::vector<NamedArray>&, const std::string&);
template void assign_arrays(ParameterSet<double>&, const std::vector<NamedArray>&, const std::string&);

}  // namespace tunein
