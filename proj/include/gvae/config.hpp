#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gvae {

// Flat sectioned key=value text config. Keys are stored as "section.key" in
// insertion order so serialize() round-trips deterministically.
class ConfigMap {
 public:
  void set(const std::string& key, const std::string& value);
  void set_double(const std::string& key, double v);
  void set_long(const std::string& key, long v);
  void set_bool(const std::string& key, bool v);

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback = "") const;
  double get_double(const std::string& key, double fallback) const;
  long get_long(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  static ConfigMap parse_text(const std::string& text);
  static ConfigMap parse_file(const std::string& path);
  std::string serialize() const;

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

enum class TrainMode { Vanilla, UnsupervisedGuided, SupervisedGuided };

const char* mode_name(TrainMode m);
TrainMode mode_from_name(const std::string& s);

// Harness-level experiment description; validate() throws naming the
// offending field.
struct ExperimentConfig {
  TrainMode mode = TrainMode::Vanilla;
  std::string dataset;  // "shapes:PATH" or "mnist:DIR"
  std::string out_dir = "out";

  // vae
  long d_z = 10;
  long d_z_def = 0;
  double kl_weight = 1.0;
  long width = 8;
  int depth = 0;
  uint64_t seed = 1;

  // optimization
  long epochs = 10;
  long batch = 64;
  double lr = 1e-3;
  long log_every = 25;
  long checkpoint_every = 0;  // epochs; 0 = final only

  // guidance (unsupervised)
  double dpca_weight = 1.0;
  bool geometry_on = true;
  bool unit_norm_on = true;
  std::string deformation_preset = "auto";

  // guidance (supervised)
  std::vector<std::string> attributes;  // parity | lt5 | square
  double excitation_weight = 1.0;
  double inhibition_lambda = 1.0;
  bool inhibition_on = true;
  long inhibition_hidden = 64;
  bool kl_on = true;

  void validate() const;
  ConfigMap to_config() const;
  static ExperimentConfig from_config(const ConfigMap& c);

  double effective_kl_weight() const { return kl_on ? kl_weight : 0.0; }
};

}  // namespace gvae
