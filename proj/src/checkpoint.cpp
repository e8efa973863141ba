#include "gvae/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace gvae {

namespace {

constexpr char kMagic[4] = {'G', 'V', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& path) {
  uint32_t n = get<uint32_t>(in, path);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return s;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& kv : tensors)
    if (kv.first == name) return &kv.second;
  return nullptr;
}

const Tensor& Checkpoint::require(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
  return *t;
}

void Checkpoint::save(const std::string& path) const {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp);
    out.write(kMagic, 4);
    put<uint32_t>(out, kVersion);
    put_string(out, kind);
    put_string(out, config_text);
    put<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      put_string(out, name);
      put<uint32_t>(out, static_cast<uint32_t>(t.rank()));
      for (int i = 0; i < t.rank(); ++i) put<int64_t>(out, t.dim(i));
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    put<uint64_t>(out, rng_seed);
    if (!out) throw std::runtime_error("checkpoint write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  uint32_t version = get<uint32_t>(in, path);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  Checkpoint c;
  c.kind = get_string(in, path);
  c.config_text = get_string(in, path);
  uint32_t n = get<uint32_t>(in, path);
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = get_string(in, path);
    uint32_t rank = get<uint32_t>(in, path);
    std::vector<long> dims;
    long numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      long d = static_cast<long>(get<int64_t>(in, path));
      dims.push_back(d);
      numel *= d;
    }
    Tensor t(dims);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint tensor in " + path);
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  c.rng_seed = get<uint64_t>(in, path);
  return c;
}

}  // namespace gvae
