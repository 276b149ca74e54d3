#include "protoshape/serialize.hpp"

#include <cstring>
#include <fstream>

#include "protoshape/geometry.hpp"

namespace ps {
namespace {

constexpr char kMagic[4] = {'P', 'S', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& f, const std::string& path) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError("checkpoint truncated: " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);
  f.write(kMagic, 4);
  put<uint32_t>(f, kVersion);
  put<uint64_t>(f, ck.config_hash);
  put<uint32_t>(f, static_cast<uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    put<uint32_t>(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint32_t>(f, static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) put<int32_t>(f, d);
    const auto& v = t.data();
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!f) throw IoError("save_checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("load_checkpoint: bad magic in " + path);
  uint32_t version = get<uint32_t>(f, path);
  if (version != kVersion) throw IoError("load_checkpoint: unsupported version in " + path);
  Checkpoint ck;
  ck.config_hash = get<uint64_t>(f, path);
  uint32_t n = get<uint32_t>(f, path);
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t len = get<uint32_t>(f, path);
    std::string name(len, '\0');
    f.read(name.data(), len);
    uint32_t rank = get<uint32_t>(f, path);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = get<int32_t>(f, path);
    std::vector<double> data(static_cast<size_t>(numel_of(shape)));
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!f) throw IoError("checkpoint truncated: " + path);
    ck.tensors[name] = Tensor::from(shape, std::move(data));
  }
  return ck;
}

void pack_params(Checkpoint& ck, const std::string& prefix, const Params& p) {
  for (const auto& [k, v] : p.t)
    ck.tensors[prefix + k] = Tensor::from(v.shape(), v.data());
}

Params unpack_params(const Checkpoint& ck, const std::string& prefix) {
  Params p;
  for (const auto& [k, v] : ck.tensors)
    if (k.rfind(prefix, 0) == 0)
      p.t[k.substr(prefix.size())] = Tensor::from(v.shape(), v.data(), true);
  return p;
}

void pack_adam(Checkpoint& ck, const std::string& prefix, const Adam& opt) {
  pack_scalar(ck, prefix + "step_count", static_cast<double>(opt.step_count));
  for (const auto& [k, v] : opt.m)
    ck.tensors[prefix + "m." + k] = Tensor::from({static_cast<int>(v.size())}, v);
  for (const auto& [k, v] : opt.v)
    ck.tensors[prefix + "v." + k] = Tensor::from({static_cast<int>(v.size())}, v);
}

void unpack_adam(const Checkpoint& ck, const std::string& prefix, Adam& opt) {
  opt.step_count = static_cast<long long>(unpack_scalar(ck, prefix + "step_count"));
  opt.m.clear();
  opt.v.clear();
  for (const auto& [k, t] : ck.tensors) {
    if (k.rfind(prefix + "m.", 0) == 0) opt.m[k.substr(prefix.size() + 2)] = t.data();
    if (k.rfind(prefix + "v.", 0) == 0) opt.v[k.substr(prefix.size() + 2)] = t.data();
  }
}

void pack_scalar(Checkpoint& ck, const std::string& name, double v) {
  ck.tensors[name] = Tensor::scalar(v);
}

double unpack_scalar(const Checkpoint& ck, const std::string& name) {
  auto it = ck.tensors.find(name);
  if (it == ck.tensors.end()) throw IoError("checkpoint entry missing: " + name);
  return it->second.item();
}

bool has_entry(const Checkpoint& ck, const std::string& name) {
  return ck.tensors.count(name) > 0;
}

}  // namespace ps
