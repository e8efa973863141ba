#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gvae/tensor.hpp"

namespace gvae {

// Binary container for trained state: format version, config text, named
// weight arrays with shapes, optimizer state, RNG seed. Tensor order is
// preserved, so save -> load -> save is byte-identical. Files are written to
// a temporary name and renamed into place.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::string kind;  // "vae" or "expert"
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> tensors;
  uint64_t rng_seed = 0;

  void add(const std::string& name, const Tensor& t) { tensors.emplace_back(name, t); }
  const Tensor* find(const std::string& name) const;
  const Tensor& require(const std::string& name) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace gvae
