#include "hvae/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "hvae/binary.hpp"
#include "hvae/error.hpp"

namespace hvae::synth {

namespace {

constexpr std::string_view kMagic = "SEQD0001";
// Geometry in units of a 16-pixel canvas.
constexpr double kCanvas = 16.0;
constexpr double kCentre = 8.0;
constexpr double kRadius = 3.0;
constexpr double kOrbitRadius = 4.0;
constexpr double kPulseRadius = 2.8;
constexpr double kSlideAmplitude = 4.0;

struct Pose {
  double cx, cy, r;
};

Pose pose_of(ActionKind action, int phase, int period) {
  const double theta = 2.0 * std::numbers::pi * phase / period;
  const double c = std::cos(theta), s = std::sin(theta);
  switch (action) {
    case ActionKind::Orbit:
      return {kCentre + kOrbitRadius * c, kCentre + kOrbitRadius * s, kRadius};
    case ActionKind::Pulse:
      return {kCentre, kCentre, kPulseRadius * (1.0 + pulse_amplitude() * c)};
    case ActionKind::Slide:
      return {kCentre + kSlideAmplitude * c, kCentre, kRadius};
  }
  throw ContractError("unknown action");
}

bool inside(ShapeKind shape, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (shape) {
    case ShapeKind::Square:
      return ax <= r && ay <= r;
    case ShapeKind::Disc:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::Cross:
      return (ax <= r && ay <= r / 3.0) || (ax <= r / 3.0 && ay <= r);
  }
  return false;
}

int mod(int a, int m) { return ((a % m) + m) % m; }

}  // namespace

std::string to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::Square: return "square";
    case ShapeKind::Disc: return "disc";
    case ShapeKind::Cross: return "cross";
  }
  return "?";
}

std::string to_string(ActionKind a) {
  switch (a) {
    case ActionKind::Orbit: return "orbit";
    case ActionKind::Pulse: return "pulse";
    case ActionKind::Slide: return "slide";
  }
  return "?";
}

ContentFactors ContentFactors::from_identity(int identity) {
  if (identity < 0 || identity >= kIdentities) throw IndexError("identity " + std::to_string(identity) + " out of range");
  return {static_cast<ShapeKind>(identity / kHues), identity % kHues};
}

std::array<float, 3> hue_rgb(int hue) {
  static constexpr std::array<std::array<float, 3>, kHues> table{{
      {1, -1, -1}, {1, 1, -1}, {-1, 1, -1}, {-1, 1, 1}, {-1, -1, 1}, {1, -1, 1},
  }};
  if (hue < 0 || hue >= kHues) throw IndexError("hue out of range");
  return table[static_cast<std::size_t>(hue)];
}

const std::vector<int>& eval_identities() {
  static const std::vector<int> ids{0 * kHues + 0, 1 * kHues + 2, 2 * kHues + 4};
  return ids;
}

bool is_eval_identity(int identity) {
  const auto& ids = eval_identities();
  return std::find(ids.begin(), ids.end(), identity) != ids.end();
}

void WorldConfig::validate() const {
  if (T < 2) throw ContractError("world: T must be >= 2");
  if (T > 255) throw ContractError("world: T must fit the u8 phase field");
  if (K < 1 || K > kMaxActions) throw ContractError("world: K must be in 1..3");
  if (res < 4) throw ContractError("world: resolution must be >= 4");
}

double pulse_amplitude() { return (std::numbers::sqrt2 - 1.0) / (std::numbers::sqrt2 + 1.0); }

Tensor<float> render_frame(const ContentFactors& content, ActionKind action, int phase, const WorldConfig& world) {
  world.validate();
  const int res = world.res;
  const Pose pose = pose_of(action, mod(phase, world.T), world.T);
  const auto rgb = hue_rgb(content.hue);
  Tensor<float> img({kChannels, res, res}, -1.0f);
  const double scale = kCanvas / res;
  const std::size_t plane = static_cast<std::size_t>(res) * res;
  for (int y = 0; y < res; ++y) {
    const double dy = (y + 0.5) * scale - pose.cy;
    for (int x = 0; x < res; ++x) {
      const double dx = (x + 0.5) * scale - pose.cx;
      if (!inside(content.shape, dx, dy, pose.r)) continue;
      const std::size_t at = static_cast<std::size_t>(y) * res + x;
      for (int c = 0; c < kChannels; ++c) img[c * plane + at] = rgb[static_cast<std::size_t>(c)];
    }
  }
  return img;
}

Tensor<float> render_sequence(const ContentFactors& content, ActionKind action, int offset, int length,
                              const WorldConfig& world) {
  if (length < 0) throw IndexError("render_sequence: negative length");
  Tensor<float> out({length, kChannels, world.res, world.res});
  const std::size_t fsz = static_cast<std::size_t>(kChannels) * world.res * world.res;
  for (int t = 0; t < length; ++t) {
    const auto f = render_frame(content, action, offset + t, world);
    std::copy_n(f.data(), fsz, out.data() + static_cast<std::size_t>(t) * fsz);
  }
  return out;
}

int object_area(const Tensor<float>& frame) {
  if (frame.rank() != 3) throw ShapeError("object_area: expected [C, H, W]");
  const std::size_t plane = static_cast<std::size_t>(frame.dim(1)) * frame.dim(2);
  int n = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    bool fg = false;
    for (int c = 0; c < frame.dim(0); ++c) fg = fg || frame[c * plane + i] != -1.0f;
    n += fg;
  }
  return n;
}

Tensor<float> Dataset::sequence(int i) const {
  if (i < 0 || i >= size()) throw IndexError("dataset: sequence index out of range");
  const std::size_t n = sequence_size();
  const auto* begin = frames.data() + static_cast<std::size_t>(i) * n;
  return Tensor<float>({T, C, H, W}, std::vector<float>(begin, begin + n));
}

SequenceBatch Dataset::batch(const std::vector<int>& indices) const {
  SequenceBatch b;
  const int n = static_cast<int>(indices.size());
  const std::size_t seq = sequence_size();
  b.images = Tensor<float>({n, T, C, H, W});
  b.actions = Tensor<float>({n, K});
  for (int j = 0; j < n; ++j) {
    const int i = indices[static_cast<std::size_t>(j)];
    if (i < 0 || i >= size()) throw IndexError("dataset: sequence index out of range");
    std::copy_n(frames.data() + static_cast<std::size_t>(i) * seq, seq, b.images.data() + static_cast<std::size_t>(j) * seq);
    const auto& r = records[static_cast<std::size_t>(i)];
    b.actions[static_cast<std::size_t>(j * K + r.action)] = 1.0f;
    b.labels.push_back(r.action);
    b.identities.push_back(r.identity);
    b.phases.push_back(r.phase);
  }
  return b;
}

SequenceBatch Dataset::all() const {
  std::vector<int> idx(static_cast<std::size_t>(size()));
  for (int i = 0; i < size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  return batch(idx);
}

std::string encode_dataset(const Dataset& ds) {
  io::ByteWriter w;
  w.bytes(kMagic);
  for (const int v : {ds.size(), ds.T, ds.C, ds.H, ds.W, ds.K}) w.u32(static_cast<std::uint32_t>(v));
  const std::size_t seq = ds.sequence_size();
  if (ds.frames.size() != seq * ds.records.size()) throw ShapeError("dataset: frame buffer does not match records");
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    w.u16(r.action);
    w.u16(r.identity);
    w.u8(r.phase);
    w.f32s(ds.frames.data() + i * seq, seq);
  }
  return w.take();
}

Dataset decode_dataset(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (bytes.size() < kMagic.size()) throw FormatError("dataset: truncated magic", 0);
  if (bytes.substr(0, 4) != kMagic.substr(0, 4)) throw FormatError("dataset: bad magic", 0);
  if (bytes.substr(4, 4) != kMagic.substr(4, 4)) throw FormatError("dataset: unsupported version", 4);
  r.bytes(kMagic.size());
  Dataset ds;
  const std::uint32_t n = r.u32();
  std::uint32_t dims[5];
  for (auto& d : dims) {
    d = r.u32();
    if (d == 0 || d > 65535) r.fail("dataset: implausible header dimension " + std::to_string(d));
  }
  ds.T = static_cast<int>(dims[0]);
  ds.C = static_cast<int>(dims[1]);
  ds.H = static_cast<int>(dims[2]);
  ds.W = static_cast<int>(dims[3]);
  ds.K = static_cast<int>(dims[4]);
  const std::size_t seq = ds.sequence_size();
  const std::size_t record = 5 + seq * sizeof(float);
  if (n > r.remaining() / record) r.fail("dataset: truncated, header promises " + std::to_string(n) + " sequences");
  ds.records.reserve(n);
  ds.frames.resize(seq * n);
  for (std::uint32_t i = 0; i < n; ++i) {
    SequenceRecord rec;
    rec.action = r.u16();
    if (rec.action >= ds.K) r.fail("dataset: action label out of range");
    rec.identity = r.u16();
    rec.phase = r.u8();
    if (rec.phase >= ds.T) r.fail("dataset: phase offset out of range");
    r.f32s(ds.frames.data() + static_cast<std::size_t>(i) * seq, seq);
    ds.records.push_back(rec);
  }
  r.expect_end();
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) { io::write_file(path, encode_dataset(ds)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

namespace {

Dataset build_split(int n, const std::vector<int>& identities, Rng& rng, const WorldConfig& world) {
  Dataset ds;
  ds.T = world.T;
  ds.C = kChannels;
  ds.H = ds.W = world.res;
  ds.K = world.K;
  // One shuffled (identity, phase) pool per action; action i mod K keeps labels balanced.
  std::vector<std::vector<std::pair<int, int>>> pools(static_cast<std::size_t>(world.K));
  for (int k = 0; k < world.K; ++k) {
    auto& pool = pools[static_cast<std::size_t>(k)];
    for (const int id : identities)
      for (int ph = 0; ph < world.T; ++ph) pool.emplace_back(id, ph);
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.uniform_int(i)]);
  }
  const std::size_t per_action = static_cast<std::size_t>((n + world.K - 1) / world.K);
  if (per_action > pools[0].size()) {
    throw CapacityError("requested " + std::to_string(n) + " sequences, split holds " +
                        std::to_string(pools[0].size() * static_cast<std::size_t>(world.K)));
  }
  for (int i = 0; i < n; ++i) {
    const int k = i % world.K;
    const auto [id, ph] = pools[static_cast<std::size_t>(k)][static_cast<std::size_t>(i / world.K)];
    ds.records.push_back({static_cast<std::uint16_t>(k), static_cast<std::uint16_t>(id), static_cast<std::uint8_t>(ph)});
    const auto seq = render_sequence(ContentFactors::from_identity(id), static_cast<ActionKind>(k), ph, world.T, world);
    ds.frames.insert(ds.frames.end(), seq.values().begin(), seq.values().end());
  }
  return ds;
}

}  // namespace

DatasetPair make_datasets(int n_train, int n_eval, std::uint64_t seed, const WorldConfig& world) {
  world.validate();
  if (n_train < 0 || n_eval < 0) throw CapacityError("sequence counts must be >= 0");
  const long long total = static_cast<long long>(kIdentities) * world.K * world.T;
  if (static_cast<long long>(n_train) + n_eval > total) {
    throw CapacityError("requested " + std::to_string(n_train + n_eval) + " sequences, world holds " +
                        std::to_string(total));
  }
  std::vector<int> train_ids, eval_ids;
  for (int id = 0; id < kIdentities; ++id) (is_eval_identity(id) ? eval_ids : train_ids).push_back(id);
  Rng rng(seed);
  Rng train_rng = rng.split(0), eval_rng = rng.split(1);
  return {build_split(n_train, train_ids, train_rng, world), build_split(n_eval, eval_ids, eval_rng, world)};
}

void make_dataset_files(const std::string& dir, int n_train, int n_eval, std::uint64_t seed, const WorldConfig& world) {
  const auto pair = make_datasets(n_train, n_eval, seed, world);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  save_dataset((std::filesystem::path(dir) / "train.seqd").string(), pair.train);
  save_dataset((std::filesystem::path(dir) / "eval.seqd").string(), pair.eval);
}

std::vector<int> epoch_order(int n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<int> order(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng(seed).split(epoch);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

BatchStream::BatchStream(const Dataset& ds, int batch, std::uint64_t seed) : ds_(&ds), batch_(batch), seed_(seed) {
  if (batch < 1) throw ContractError("batch must be >= 1");
  if (ds.size() == 0) throw ContractError("dataset is empty");
  order_ = epoch_order(ds.size(), seed_, epoch_);
}

std::vector<int> BatchStream::next_indices() {
  std::vector<int> idx;
  while (static_cast<int>(idx.size()) < batch_) {
    if (pos_ == order_.size()) {
      ++epoch_;
      order_ = epoch_order(ds_->size(), seed_, epoch_);
      pos_ = 0;
    }
    idx.push_back(order_[pos_++]);
  }
  return idx;
}

SequenceBatch BatchStream::next() { return ds_->batch(next_indices()); }

void BatchStream::skip(std::int64_t batches) {
  for (std::int64_t i = 0; i < batches; ++i) next_indices();
}

}  // namespace hvae::synth
