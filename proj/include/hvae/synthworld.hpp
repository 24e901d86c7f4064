#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hvae/rng.hpp"
#include "hvae/tensor.hpp"

namespace hvae::synth {

using nn::Tensor;

enum class ShapeKind : int { Square = 0, Disc = 1, Cross = 2 };
enum class ActionKind : int { Orbit = 0, Pulse = 1, Slide = 2 };

constexpr int kShapes = 3;
constexpr int kHues = 6;
constexpr int kIdentities = kShapes * kHues;
constexpr int kMaxActions = 3;
constexpr int kChannels = 3;

std::string to_string(ShapeKind s);
std::string to_string(ActionKind a);

struct ContentFactors {
  ShapeKind shape = ShapeKind::Square;
  int hue = 0;

  int identity() const { return static_cast<int>(shape) * kHues + hue; }
  static ContentFactors from_identity(int identity);
  bool operator==(const ContentFactors&) const = default;
};

/// RGB in [-1, 1] of each hue.
std::array<float, 3> hue_rgb(int hue);

/// Held out for evaluation: one identity per shape, each with its own hue.
const std::vector<int>& eval_identities();
bool is_eval_identity(int identity);

struct WorldConfig {
  int T = 8;     ///< period and sequence length
  int K = 3;     ///< actions in use, the first K of ActionKind
  int res = 16;  ///< square image side
  void validate() const;
};

/// Pulse radius ratio giving a 2:1 area ratio between phase 0 and phase T/2.
double pulse_amplitude();

/// [3, res, res] in [-1, 1]; background -1. Any integer phase is reduced mod T.
Tensor<float> render_frame(const ContentFactors& content, ActionKind action, int phase, const WorldConfig& world);
/// [length, 3, res, res]; frame t shows phase (offset + t) mod T.
Tensor<float> render_sequence(const ContentFactors& content, ActionKind action, int offset, int length,
                              const WorldConfig& world);

/// Foreground pixel count of a frame (any channel off the background).
int object_area(const Tensor<float>& frame);

struct SequenceRecord {
  std::uint16_t action = 0;
  std::uint16_t identity = 0;
  std::uint8_t phase = 0;  ///< offset of frame 1
  bool operator==(const SequenceRecord&) const = default;
};

/// Minibatch view: images [N, T, C, H, W], one-hot actions [N, K].
struct SequenceBatch {
  Tensor<float> images;
  Tensor<float> actions;
  std::vector<int> labels;
  std::vector<int> identities;
  std::vector<int> phases;
  int size() const { return static_cast<int>(labels.size()); }
};

/// In-memory SEQD dataset.
struct Dataset {
  int T = 0, C = 0, H = 0, W = 0, K = 0;
  std::vector<SequenceRecord> records;
  std::vector<float> frames;  ///< N * T * C * H * W

  int size() const { return static_cast<int>(records.size()); }
  std::size_t sequence_size() const { return static_cast<std::size_t>(T) * C * H * W; }
  Tensor<float> sequence(int i) const;
  SequenceBatch batch(const std::vector<int>& indices) const;
  SequenceBatch all() const;
  WorldConfig world() const { return {T, K, H}; }
  bool operator==(const Dataset&) const = default;
};

/// "SEQD0001", u32 N, T, C, H, W, K; per sequence u16 action, u16 identity,
/// u8 phase offset, then T C H W float32 values. Little-endian throughout.
std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::string_view bytes);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

struct DatasetPair {
  Dataset train;
  Dataset eval;
};

/// Identity-disjoint train/eval sets with labels balanced over the K actions.
DatasetPair make_datasets(int n_train, int n_eval, std::uint64_t seed, const WorldConfig& world = {});
/// Writes <dir>/train.seqd and <dir>/eval.seqd.
void make_dataset_files(const std::string& dir, int n_train, int n_eval, std::uint64_t seed,
                        const WorldConfig& world = {});

/// Permutation of 0..n-1 for one epoch.
std::vector<int> epoch_order(int n, std::uint64_t seed, std::uint64_t epoch);

/// Endless minibatches; each epoch visits every sequence once in a seeded order.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, int batch, std::uint64_t seed);
  SequenceBatch next();
  std::vector<int> next_indices();
  std::uint64_t epoch() const noexcept { return epoch_; }
  /// Skips `batches` minibatches, as when resuming.
  void skip(std::int64_t batches);

 private:
  const Dataset* ds_;
  int batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<int> order_;
  std::size_t pos_ = 0;
};

}  // namespace hvae::synth
