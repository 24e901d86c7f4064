#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hvae/symplectic.hpp"

namespace hvae {

/// Ordered key=value document. Lines starting with '#' are comments.
class KvDoc {
 public:
  static KvDoc parse(const std::string& text);
  static KvDoc load(const std::string& path);
  std::string str() const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, const char* value) { values_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, int value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }

  bool contains(const std::string& key) const { return values_.contains(key); }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  long long get_i64(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;

  /// Copies every entry of `other`, overwriting existing keys.
  void merge(const KvDoc& other);
  const std::map<std::string, std::string>& entries() const noexcept { return values_; }
  bool operator==(const KvDoc&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

/// Formats a double so that parsing it back yields the same value.
std::string format_double(double v);

struct ModelConfig {
  int T = 8;
  int K = 3;
  int d = 6;
  int z_dim = 64;
  int w = 4;
  int channels = 3;
  int height = 16;
  int width = 16;
  double alpha = 1.0;
  symplectic::Flavor flavor = symplectic::Flavor::FullSymplectic;
  /// Output channels of the stride-2 trunk convolutions; the decoder mirrors them.
  std::vector<int> conv_channels{16, 32};
  int kernel = 5;
  int trunk_hidden = 256;
  int h = 256;
  int head_width = 64;
  int decoder_hidden = 256;
  /// Per-channel affine after each conv stands in for batch normalisation.
  bool channel_affine = false;
  double omega_init = 0.05;

  void validate() const;
  int frame_size() const { return channels * height * width; }
  /// Spatial size where the trunk stops and the decoder starts.
  int bottleneck_height() const { return height >> conv_channels.size(); }
  int bottleneck_width() const { return width >> conv_channels.size(); }

  void write(KvDoc& doc) const;
  /// Unlisted keys keep their defaults.
  static ModelConfig read(const KvDoc& doc);
  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  ModelConfig model;
  double lr = 2e-4;
  int batch = 8;
  int steps = 2000;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  ///< 0 writes only the final checkpoint
  /// Wall time makes logs non-reproducible, so it is opt-in.
  bool log_wall_time = false;

  void validate() const;
  void write(KvDoc& doc) const;
  static TrainConfig read(const KvDoc& doc);
};

/// 2x2x1 images, T=3, K=2, d=1, z_dim=2: small enough for exhaustive gradient checks.
ModelConfig toy_config();

}  // namespace hvae
