#include "hvae/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "hvae/error.hpp"

namespace hvae {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N out{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ContractError("config: bad value for '" + key + "': " + text);
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

KvDoc KvDoc::parse(const std::string& text) {
  KvDoc doc;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ContractError("config line " + std::to_string(lineno) + ": empty key");
    doc.values_[key] = trim(t.substr(eq + 1));
  }
  return doc;
}

KvDoc KvDoc::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string KvDoc::str() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

void KvDoc::set(const std::string& key, double value) { values_[key] = format_double(value); }

const std::string& KvDoc::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ContractError("config: missing key '" + key + "'");
  return it->second;
}

std::string KvDoc::get_or(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int KvDoc::get_int(const std::string& key, int fallback) const {
  return contains(key) ? parse_number<int>(key, get(key)) : fallback;
}

long long KvDoc::get_i64(const std::string& key, long long fallback) const {
  return contains(key) ? parse_number<long long>(key, get(key)) : fallback;
}

std::uint64_t KvDoc::get_u64(const std::string& key, std::uint64_t fallback) const {
  return contains(key) ? parse_number<std::uint64_t>(key, get(key)) : fallback;
}

double KvDoc::get_double(const std::string& key, double fallback) const {
  return contains(key) ? parse_number<double>(key, get(key)) : fallback;
}

bool KvDoc::get_bool(const std::string& key, bool fallback) const {
  if (!contains(key)) return fallback;
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractError("config: bad boolean for '" + key + "': " + v);
}

std::vector<int> KvDoc::get_ints(const std::string& key, const std::vector<int>& fallback) const {
  if (!contains(key)) return fallback;
  std::vector<int> out;
  std::string item;
  std::istringstream in(get(key));
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<int>(key, item));
  }
  return out;
}

void KvDoc::merge(const KvDoc& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ContractError("ModelConfig: " + what);
  };
  need(T >= 2, "T must be >= 2");
  need(w >= 1, "w must be >= 1");
  need(K >= 1 && d >= 1 && z_dim >= 1, "K, d and z_dim must be positive");
  need(channels >= 1 && height >= 1 && width >= 1, "image dims must be positive");
  need(trunk_hidden >= 1 && h >= 1 && head_width >= 1 && decoder_hidden >= 1, "layer widths must be positive");
  need(alpha == 1.0, "alpha is fixed at 1.0");
  need(kernel >= 1 && kernel % 2 == 1, "kernel must be odd");
  need(!conv_channels.empty(), "at least one conv layer is required");
  for (const int c : conv_channels) need(c >= 1, "conv channels must be positive");
  const int f = 1 << conv_channels.size();
  need(height % f == 0 && width % f == 0,
       "image size must be divisible by 2^" + std::to_string(conv_channels.size()));
  need(omega_init >= 0, "omega_init must be >= 0");
}

void ModelConfig::write(KvDoc& doc) const {
  doc.set("model.T", T);
  doc.set("model.K", K);
  doc.set("model.d", d);
  doc.set("model.z_dim", z_dim);
  doc.set("model.w", w);
  doc.set("model.channels", channels);
  doc.set("model.height", height);
  doc.set("model.width", width);
  doc.set("model.alpha", alpha);
  doc.set("model.flavor", symplectic::to_string(flavor));
  std::string convs;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (i) convs += ",";
    convs += std::to_string(conv_channels[i]);
  }
  doc.set("model.conv_channels", convs);
  doc.set("model.kernel", kernel);
  doc.set("model.trunk_hidden", trunk_hidden);
  doc.set("model.h", h);
  doc.set("model.head_width", head_width);
  doc.set("model.decoder_hidden", decoder_hidden);
  doc.set("model.channel_affine", channel_affine);
  doc.set("model.omega_init", omega_init);
}

ModelConfig ModelConfig::read(const KvDoc& doc) {
  ModelConfig c;
  c.T = doc.get_int("model.T", c.T);
  c.K = doc.get_int("model.K", c.K);
  c.d = doc.get_int("model.d", c.d);
  c.z_dim = doc.get_int("model.z_dim", c.z_dim);
  c.w = doc.get_int("model.w", c.w);
  c.channels = doc.get_int("model.channels", c.channels);
  c.height = doc.get_int("model.height", c.height);
  c.width = doc.get_int("model.width", c.width);
  c.alpha = doc.get_double("model.alpha", c.alpha);
  if (doc.contains("model.flavor")) c.flavor = symplectic::flavor_from_string(doc.get("model.flavor"));
  c.conv_channels = doc.get_ints("model.conv_channels", c.conv_channels);
  c.kernel = doc.get_int("model.kernel", c.kernel);
  c.trunk_hidden = doc.get_int("model.trunk_hidden", c.trunk_hidden);
  c.h = doc.get_int("model.h", c.h);
  c.head_width = doc.get_int("model.head_width", c.head_width);
  c.decoder_hidden = doc.get_int("model.decoder_hidden", c.decoder_hidden);
  c.channel_affine = doc.get_bool("model.channel_affine", c.channel_affine);
  c.omega_init = doc.get_double("model.omega_init", c.omega_init);
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  if (!(lr > 0)) throw ContractError("TrainConfig: lr must be > 0");
  if (batch < 1) throw ContractError("TrainConfig: batch must be >= 1");
  if (steps < 0) throw ContractError("TrainConfig: steps must be >= 0");
  if (checkpoint_every < 0) throw ContractError("TrainConfig: checkpoint_every must be >= 0");
}

void TrainConfig::write(KvDoc& doc) const {
  model.write(doc);
  doc.set("train.lr", lr);
  doc.set("train.batch", batch);
  doc.set("train.steps", steps);
  doc.set("train.seed", std::to_string(seed));
  doc.set("train.checkpoint_every", checkpoint_every);
  doc.set("train.log_wall_time", log_wall_time);
}

TrainConfig TrainConfig::read(const KvDoc& doc) {
  TrainConfig c;
  c.model = ModelConfig::read(doc);
  c.lr = doc.get_double("train.lr", c.lr);
  c.batch = doc.get_int("train.batch", c.batch);
  c.steps = doc.get_int("train.steps", c.steps);
  c.seed = doc.get_u64("train.seed", c.seed);
  c.checkpoint_every = doc.get_int("train.checkpoint_every", c.checkpoint_every);
  c.log_wall_time = doc.get_bool("train.log_wall_time", c.log_wall_time);
  c.validate();
  return c;
}

ModelConfig toy_config() {
  ModelConfig c;
  c.T = 3;
  c.K = 2;
  c.d = 1;
  c.z_dim = 2;
  c.w = 2;
  c.channels = 1;
  c.height = 2;
  c.width = 2;
  c.conv_channels = {2};
  c.kernel = 3;
  c.trunk_hidden = 3;
  c.h = 3;
  c.head_width = 3;
  c.decoder_hidden = 3;
  c.omega_init = 0.3;
  return c;
}

}  // namespace hvae
