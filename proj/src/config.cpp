#include "gvae/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gvae {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void ConfigMap::set(const std::string& key, const std::string& value) {
  for (auto& kv : items_)
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  items_.emplace_back(key, value);
}

void ConfigMap::set_double(const std::string& key, double v) { set(key, format_double(v)); }
void ConfigMap::set_long(const std::string& key, long v) { set(key, std::to_string(v)); }
void ConfigMap::set_bool(const std::string& key, bool v) { set(key, v ? "on" : "off"); }

bool ConfigMap::has(const std::string& key) const {
  for (const auto& kv : items_)
    if (kv.first == key) return true;
  return false;
}

std::string ConfigMap::get(const std::string& key, const std::string& fallback) const {
  for (const auto& kv : items_)
    if (kv.first == key) return kv.second;
  return fallback;
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  return std::stod(get(key));
}

long ConfigMap::get_long(const std::string& key, long fallback) const {
  if (!has(key)) return fallback;
  return std::stol(get(key));
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = get(key);
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config key '" + key + "': expected on/off, got '" + v + "'");
}

ConfigMap ConfigMap::parse_text(const std::string& text) {
  ConfigMap c;
  std::istringstream in(text);
  std::string line, section;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    c.set(section.empty() ? key : section + "." + key, value);
  }
  return c;
}

ConfigMap ConfigMap::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

std::string ConfigMap::serialize() const {
  std::ostringstream os;
  std::string section;
  for (const auto& kv : items_) {
    size_t dot = kv.first.find('.');
    std::string sec = dot == std::string::npos ? "" : kv.first.substr(0, dot);
    std::string key = dot == std::string::npos ? kv.first : kv.first.substr(dot + 1);
    if (sec != section) {
      os << "[" << sec << "]\n";
      section = sec;
    }
    os << key << " = " << kv.second << "\n";
  }
  return os.str();
}

const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::Vanilla: return "vanilla";
    case TrainMode::UnsupervisedGuided: return "unsupervised_guided";
    case TrainMode::SupervisedGuided: return "supervised_guided";
  }
  return "?";
}

TrainMode mode_from_name(const std::string& s) {
  if (s == "vanilla") return TrainMode::Vanilla;
  if (s == "unsupervised_guided") return TrainMode::UnsupervisedGuided;
  if (s == "supervised_guided") return TrainMode::SupervisedGuided;
  throw std::invalid_argument("experiment.mode: unknown mode '" + s + "'");
}

void ExperimentConfig::validate() const {
  if (dataset.empty()) throw std::invalid_argument("experiment.dataset: missing");
  if (dataset.rfind("shapes:", 0) != 0 && dataset.rfind("mnist:", 0) != 0)
    throw std::invalid_argument("experiment.dataset: expected 'shapes:PATH' or 'mnist:DIR'");
  if (d_z < 1) throw std::invalid_argument("vae.d_z: must be >= 1");
  if (d_z_def < 0 || d_z_def > d_z)
    throw std::invalid_argument("vae.d_z_def: must be in [0, d_z]");
  if (kl_weight < 0) throw std::invalid_argument("vae.kl_weight: must be >= 0");
  if (epochs < 1) throw std::invalid_argument("train.epochs: must be >= 1");
  if (batch < 1) throw std::invalid_argument("train.batch: must be >= 1");
  if (!(lr > 0)) throw std::invalid_argument("train.lr: must be > 0");
  if (mode == TrainMode::SupervisedGuided) {
    if (attributes.empty())
      throw std::invalid_argument("supervised.attributes: required in supervised mode");
    if (static_cast<long>(attributes.size()) >= d_z)
      throw std::invalid_argument("supervised.attributes: must leave content dims free");
    if (d_z_def != 0)
      throw std::invalid_argument("vae.d_z_def: deformation split applies only to "
                                  "unsupervised modes");
  } else {
    if (!attributes.empty())
      throw std::invalid_argument("supervised.attributes: only valid in supervised mode");
    if (!inhibition_on)
      throw std::invalid_argument("supervised.inhibition: toggle applies only to "
                                  "supervised mode");
  }
  if (mode == TrainMode::UnsupervisedGuided) {
    if (geometry_on && d_z_def < 1)
      throw std::invalid_argument("vae.d_z_def: geometry guidance needs d_z_def >= 1");
    if (d_z_def >= d_z)
      throw std::invalid_argument("vae.d_z_def: must leave content dims for the basis");
  }
  if (mode == TrainMode::Vanilla) {
    if (dpca_weight != 0.0 && dpca_weight != 1.0) {
      // weight is ignored in vanilla mode; reject obviously inconsistent configs
      throw std::invalid_argument("guidance.dpca_weight: not applicable in vanilla mode");
    }
  }
}

ConfigMap ExperimentConfig::to_config() const {
  ConfigMap c;
  c.set("experiment.mode", mode_name(mode));
  c.set("experiment.dataset", dataset);
  c.set("experiment.out_dir", out_dir);
  c.set_long("experiment.seed", static_cast<long>(seed));
  c.set_long("vae.d_z", d_z);
  c.set_long("vae.d_z_def", d_z_def);
  c.set_double("vae.kl_weight", kl_weight);
  c.set_bool("vae.kl", kl_on);
  c.set_long("vae.width", width);
  c.set_long("vae.depth", depth);
  c.set_long("train.epochs", epochs);
  c.set_long("train.batch", batch);
  c.set_double("train.lr", lr);
  c.set_long("train.log_every", log_every);
  c.set_long("train.checkpoint_every", checkpoint_every);
  c.set_double("guidance.dpca_weight", dpca_weight);
  c.set_bool("guidance.geometry", geometry_on);
  c.set_bool("guidance.unit_norm", unit_norm_on);
  c.set("guidance.deformation", deformation_preset);
  std::string attrs;
  for (size_t i = 0; i < attributes.size(); ++i) {
    if (i) attrs += ",";
    attrs += attributes[i];
  }
  c.set("supervised.attributes", attrs);
  c.set_double("supervised.excitation_weight", excitation_weight);
  c.set_double("supervised.inhibition_lambda", inhibition_lambda);
  c.set_bool("supervised.inhibition", inhibition_on);
  c.set_long("supervised.inhibition_hidden", inhibition_hidden);
  return c;
}

ExperimentConfig ExperimentConfig::from_config(const ConfigMap& c) {
  ExperimentConfig e;
  e.mode = mode_from_name(c.get("experiment.mode", "vanilla"));
  e.dataset = c.get("experiment.dataset");
  e.out_dir = c.get("experiment.out_dir", "out");
  e.seed = static_cast<uint64_t>(c.get_long("experiment.seed", 1));
  e.d_z = c.get_long("vae.d_z", 10);
  e.d_z_def = c.get_long("vae.d_z_def", 0);
  e.kl_weight = c.get_double("vae.kl_weight", 1.0);
  e.kl_on = c.get_bool("vae.kl", true);
  e.width = c.get_long("vae.width", 8);
  e.depth = static_cast<int>(c.get_long("vae.depth", 0));
  e.epochs = c.get_long("train.epochs", 10);
  e.batch = c.get_long("train.batch", 64);
  e.lr = c.get_double("train.lr", 1e-3);
  e.log_every = c.get_long("train.log_every", 25);
  e.checkpoint_every = c.get_long("train.checkpoint_every", 0);
  e.dpca_weight = c.get_double("guidance.dpca_weight", 1.0);
  e.geometry_on = c.get_bool("guidance.geometry", true);
  e.unit_norm_on = c.get_bool("guidance.unit_norm", true);
  e.deformation_preset = c.get("guidance.deformation", "auto");
  std::string attrs = c.get("supervised.attributes", "");
  std::istringstream as(attrs);
  std::string tok;
  while (std::getline(as, tok, ','))
    if (!tok.empty()) e.attributes.push_back(tok);
  e.excitation_weight = c.get_double("supervised.excitation_weight", 1.0);
  e.inhibition_lambda = c.get_double("supervised.inhibition_lambda", 1.0);
  e.inhibition_on = c.get_bool("supervised.inhibition", true);
  e.inhibition_hidden = c.get_long("supervised.inhibition_hidden", 64);
  return e;
}

}  // namespace gvae
