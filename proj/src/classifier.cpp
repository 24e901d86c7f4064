#include "hvae/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "hvae/checkpoint.hpp"
#include "hvae/ops.hpp"
#include "hvae/optim.hpp"

namespace hvae::cls {

namespace {

constexpr int kKernel = 3;

std::string conv_name(std::size_t i) { return "cls.conv" + std::to_string(i); }

// Each step t sees frame t stacked with the change to frame t+1, so the
// readout can tell motions apart by direction and not only by where the
// object sits (small-amplitude motion all looks centred).
template <typename T>
Tensor<T> frame_pairs(const ClassifierConfig& c, const Tensor<T>& images) {
  const int n = images.dim(0), len = images.dim(1);
  const std::size_t fsz = static_cast<std::size_t>(c.channels) * c.height * c.width;
  Tensor<T> out({n * (len - 1), 2 * c.channels, c.height, c.width});
  T* dst = out.data();
  for (int i = 0; i < n; ++i) {
    const T* seq = images.data() + static_cast<std::size_t>(i) * len * fsz;
    for (int t = 0; t + 1 < len; ++t) {
      const T* a = seq + t * fsz;
      const T* b = a + fsz;
      for (std::size_t j = 0; j < fsz; ++j) dst[j] = a[j];
      for (std::size_t j = 0; j < fsz; ++j) dst[fsz + j] = b[j] - a[j];
      dst += 2 * fsz;
    }
  }
  return out;
}

template <typename T>
nn::Var logits(nn::Graph<T>& g, const ClassifierConfig& c, const nn::BoundParameters<T>& p,
               const Tensor<T>& images) {
  const int len = images.dim(1) - 1;
  nn::Var x = g.constant(frame_pairs(c, images));
  for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
    const auto name = conv_name(i);
    x = nn::leaky_relu(g, nn::bias_channels(g, nn::conv2d(g, x, p[name + ".k"], 2, kKernel / 2), p[name + ".b"]));
  }
  const auto& s = g.shape(x);
  x = nn::reshape(g, x, {s[0], s[1] * s[2] * s[3]});
  x = nn::leaky_relu(g, nn::dense(g, x, p["cls.fc.W"], p["cls.fc.b"]));
  return nn::dense(g, nn::mean_groups(g, x, len), p["cls.out.W"], p["cls.out.b"]);
}

void check_input(const ClassifierConfig& c, const Tensor<float>& images) {
  if (images.rank() != 5 || images.dim(2) != c.channels || images.dim(3) != c.height || images.dim(4) != c.width) {
    throw ShapeError("classifier: images must be [N, T, " + std::to_string(c.channels) + ", " +
                     std::to_string(c.height) + ", " + std::to_string(c.width) + "], got " +
                     nn::shape_str(images.shape()));
  }
  if (images.dim(0) < 1) throw ShapeError("classifier: empty batch");
  if (images.dim(1) < 2) throw ShapeError("classifier: needs at least two frames");
}

// Sequences whose frames never change carry no motion to classify.
void reject_constant(const synth::Dataset& ds) {
  const std::size_t fsz = static_cast<std::size_t>(ds.C) * ds.H * ds.W;
  for (int i = 0; i < ds.size(); ++i) {
    const float* s = ds.frames.data() + static_cast<std::size_t>(i) * ds.sequence_size();
    bool moves = false;
    for (int t = 1; t < ds.T && !moves; ++t)
      for (std::size_t j = 0; j < fsz && !moves; ++j) moves = s[t * fsz + j] != s[j];
    if (!moves) throw ContractError("classifier: sequence " + std::to_string(i) + " is constant over time");
  }
}

int output_height(const ClassifierConfig& c) {
  int h = c.height;
  for (std::size_t i = 0; i < c.conv_channels.size(); ++i) h = (h + 2 * (kKernel / 2) - kKernel) / 2 + 1;
  return h;
}

int output_width(const ClassifierConfig& c) {
  int w = c.width;
  for (std::size_t i = 0; i < c.conv_channels.size(); ++i) w = (w + 2 * (kKernel / 2) - kKernel) / 2 + 1;
  return w;
}

}  // namespace

void ClassifierConfig::validate() const {
  if (K < 1) throw ContractError("classifier: K must be >= 1");
  if (channels < 1 || height < 1 || width < 1) throw ContractError("classifier: bad image size");
  if (conv_channels.empty()) throw ContractError("classifier: needs at least one conv layer");
  for (const int c : conv_channels)
    if (c < 1) throw ContractError("classifier: conv widths must be >= 1");
  if (hidden < 1) throw ContractError("classifier: hidden must be >= 1");
}

void ClassifierConfig::write(KvDoc& doc) const {
  doc.set("classifier.K", K);
  doc.set("classifier.channels", channels);
  doc.set("classifier.height", height);
  doc.set("classifier.width", width);
  std::string widths;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) widths += (i ? "," : "") + std::to_string(conv_channels[i]);
  doc.set("classifier.conv_channels", widths);
  doc.set("classifier.hidden", hidden);
}

ClassifierConfig ClassifierConfig::read(const KvDoc& doc) {
  ClassifierConfig c;
  c.K = doc.get_int("classifier.K", c.K);
  c.channels = doc.get_int("classifier.channels", c.channels);
  c.height = doc.get_int("classifier.height", c.height);
  c.width = doc.get_int("classifier.width", c.width);
  c.conv_channels = doc.get_ints("classifier.conv_channels", c.conv_channels);
  c.hidden = doc.get_int("classifier.hidden", c.hidden);
  c.validate();
  return c;
}

nn::ParameterStore<float> make_params(const ClassifierConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  nn::ParameterStore<float> p;
  auto normal = [&](const std::string& name, nn::Shape shape, double stddev) {
    Tensor<float> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<float>(stddev * rng.normal());
    p.add(name, std::move(t));
  };
  const double gain = std::sqrt(2.0 / (1.0 + 0.04));
  int in_c = 2 * cfg.channels;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const int out_c = cfg.conv_channels[i];
    normal(conv_name(i) + ".k", {out_c, in_c, kKernel, kKernel}, gain / std::sqrt(in_c * kKernel * kKernel));
    p.add(conv_name(i) + ".b", Tensor<float>({out_c}));
    in_c = out_c;
  }
  const int flat = in_c * output_height(cfg) * output_width(cfg);
  normal("cls.fc.W", {flat, cfg.hidden}, gain / std::sqrt(flat));
  p.add("cls.fc.b", Tensor<float>({cfg.hidden}));
  normal("cls.out.W", {cfg.hidden, cfg.K}, 1.0 / std::sqrt(cfg.hidden));
  p.add("cls.out.b", Tensor<float>({cfg.K}));
  return p;
}

ActionClassifier::ActionClassifier(ClassifierConfig cfg, nn::ParameterStore<float> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  const auto ref = make_params(cfg_, 0);
  if (ref.names() != params_.names()) throw ParameterShapeError("classifier: parameter names do not match");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_.tensors()[i].shape() != ref.tensors()[i].shape()) {
      throw ParameterShapeError("classifier: wrong shape for " + params_.names()[i]);
    }
  }
}

ActionClassifier ActionClassifier::init(const ClassifierConfig& cfg, std::uint64_t seed) {
  return ActionClassifier(cfg, make_params(cfg, seed));
}

Tensor<float> ActionClassifier::predict_proba(const Tensor<float>& images) const {
  check_input(cfg_, images);
  nn::Graph<float> g;
  const nn::BoundParameters<float> p(g, params_, false);
  return nn::softmax_rows(g.value(logits(g, cfg_, p, images)));
}

std::vector<int> ActionClassifier::predict(const Tensor<float>& images) const {
  const auto prob = predict_proba(images);
  std::vector<int> out;
  for (int i = 0; i < prob.dim(0); ++i) {
    int best = 0;
    for (int k = 1; k < cfg_.K; ++k)
      if (prob[static_cast<std::size_t>(i * cfg_.K + k)] > prob[static_cast<std::size_t>(i * cfg_.K + best)]) best = k;
    out.push_back(best);
  }
  return out;
}

double ActionClassifier::accuracy(const synth::Dataset& ds) const {
  if (ds.size() == 0) throw ContractError("classifier: empty dataset");
  int hits = 0;
  constexpr int kChunk = 64;
  for (int at = 0; at < ds.size(); at += kChunk) {
    std::vector<int> idx;
    for (int i = at; i < std::min(ds.size(), at + kChunk); ++i) idx.push_back(i);
    const auto b = ds.batch(idx);
    const auto pred = predict(b.images);
    for (std::size_t j = 0; j < pred.size(); ++j) hits += pred[j] == b.labels[j];
  }
  return static_cast<double>(hits) / ds.size();
}

void ActionClassifier::save(const std::string& path) const {
  KvDoc doc;
  doc.set("kind", "classifier");
  cfg_.write(doc);
  io::save_checkpoint(path, doc, params_);
}

ActionClassifier ActionClassifier::load(const std::string& path) {
  auto ck = io::load_checkpoint(path);
  if (ck.config.get_or("kind", "") != "classifier") throw FormatError("checkpoint does not hold a classifier", 0);
  return ActionClassifier(ClassifierConfig::read(ck.config), std::move(ck.tensors));
}

ActionClassifier ActionClassifier::train(const synth::Dataset& train, const synth::Dataset& eval,
                                         const ClassifierTraining& opts, Report* report) {
  if (train.size() == 0 || eval.size() == 0) throw ContractError("classifier: empty dataset");
  reject_constant(train);
  ClassifierConfig cfg;
  cfg.K = train.K;
  cfg.channels = train.C;
  cfg.height = train.H;
  cfg.width = train.W;
  ActionClassifier model = init(cfg, opts.seed);
  nn::AdamState<float> adam;
  synth::BatchStream stream(train, opts.batch, opts.seed ^ 0x636c73ULL);
  Report rep;
  for (int step = 1; step <= opts.max_steps; ++step) {
    const auto b = stream.next();
    nn::Graph<float> g;
    const nn::BoundParameters<float> p(g, model.params_, true);
    const auto loss = nn::softmax_cross_entropy(g, logits(g, cfg, p, b.images), b.labels);
    g.backward(loss);
    nn::adam_step(model.params_.tensors(), p.gradients(g), adam, {opts.lr});
    if (step % opts.eval_every == 0 || step == opts.max_steps) {
      rep.steps = step;
      rep.eval_accuracy = model.accuracy(eval);
      if (rep.eval_accuracy >= opts.accuracy_floor && step >= opts.min_steps) {
        rep.train_accuracy = model.accuracy(train);
        if (report) *report = rep;
        return model;
      }
    }
  }
  throw TrainingFailure("classifier reached eval accuracy " + std::to_string(rep.eval_accuracy) + " after " +
                        std::to_string(opts.max_steps) + " steps, below the floor " +
                        std::to_string(opts.accuracy_floor));
}

}  // namespace hvae::cls
