#include "hvae/model.hpp"

#include <cmath>
#include <numeric>

#include "hvae/error.hpp"

namespace hvae::vae {

namespace {

using nn::Shape;
using symplectic::HamiltonianSpec;

std::string conv_name(std::size_t i) { return "enc.conv" + std::to_string(i); }
std::string tconv_name(std::size_t i) { return "dec.tconv" + std::to_string(i); }
std::string omega_name(int k) { return "omega" + std::to_string(k); }
std::string pos_name(int k) { return "pos" + std::to_string(k); }
std::string mom_name(int k) { return "mom" + std::to_string(k); }

constexpr int kDecoderKernel = 4;
constexpr std::uint64_t kMotionSeed = 0x6d6f74696f6eULL;

template <typename T>
class Initializer {
 public:
  Initializer(ParameterStore<T>& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  void normal(const std::string& name, Shape shape, double stddev) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(stddev * rng_.normal());
    store_.add(name, std::move(t));
  }
  void constant(const std::string& name, Shape shape, double value) {
    store_.add(name, Tensor<T>(std::move(shape), static_cast<T>(value)));
  }
  void dense(const std::string& prefix, int in, int out, double gain) {
    normal(prefix + ".W", {in, out}, gain / std::sqrt(static_cast<double>(in)));
    constant(prefix + ".b", {out}, 0.0);
  }
  Rng& rng() { return rng_; }

 private:
  ParameterStore<T>& store_;
  Rng rng_;
};

const double kLeakyGain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));

symplectic::HamiltonianParams omega_params(const HamiltonianSpec& spec, const Tensor<double>& raw) {
  return symplectic::HamiltonianParams(spec, std::vector<double>(raw.values().begin(), raw.values().end()));
}

}  // namespace

template <typename T>
ParameterStore<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterStore<T> store;
  Initializer<T> init(store, seed);
  const int L = static_cast<int>(cfg.conv_channels.size());
  const int flat = cfg.conv_channels.back() * cfg.bottleneck_height() * cfg.bottleneck_width();

  int in_c = cfg.channels;
  for (int i = 0; i < L; ++i) {
    const int out_c = cfg.conv_channels[static_cast<std::size_t>(i)];
    const std::string n = conv_name(static_cast<std::size_t>(i));
    init.normal(n + ".k", {out_c, in_c, cfg.kernel, cfg.kernel},
                kLeakyGain / std::sqrt(static_cast<double>(in_c * cfg.kernel * cfg.kernel)));
    init.constant(n + ".b", {out_c}, 0.0);
    if (cfg.channel_affine) {
      init.constant(n + ".gamma", {out_c}, 1.0);
      init.constant(n + ".beta", {out_c}, 0.0);
    }
    in_c = out_c;
  }
  init.dense("enc.fc1", flat, cfg.trunk_hidden, kLeakyGain);
  init.dense("enc.fc2", cfg.trunk_hidden, cfg.h, kLeakyGain);

  init.dense("content.update", cfg.h + cfg.z_dim, cfg.z_dim, 1.0);
  init.dense("content.cand", cfg.h + cfg.z_dim, cfg.z_dim, 1.0);
  init.dense("content.mu", cfg.z_dim, cfg.z_dim, 1.0);
  init.dense("content.logsig", cfg.z_dim, cfg.z_dim, 0.1);

  auto head = [&](const std::string& p) {
    init.dense(p + ".fc1", cfg.h + cfg.K, cfg.head_width, kLeakyGain);
    init.dense(p + ".fc2", cfg.head_width, cfg.head_width, kLeakyGain);
    init.dense(p + ".mu", cfg.head_width, cfg.d, 1.0);
    init.dense(p + ".logsig", cfg.head_width, cfg.d, 0.1);
  };
  for (int k = 0; k < cfg.K; ++k) head(pos_name(k));
  for (int k = 0; k < cfg.K; ++k) {
    // Starts as the identity filter (lag 0) with a little noise on every lag.
    Tensor<T> tcn({cfg.w, cfg.h});
    for (int j = 0; j < cfg.w; ++j)
      for (int f = 0; f < cfg.h; ++f) {
        tcn[static_cast<std::size_t>(j * cfg.h + f)] =
            static_cast<T>((j == 0 ? 1.0 : 0.0) + 0.1 * init.rng().normal());
      }
    store.add(mom_name(k) + ".tcn", std::move(tcn));
    head(mom_name(k));
  }

  init.dense("dec.fc1", cfg.z_dim + cfg.K * cfg.d, cfg.decoder_hidden, kLeakyGain);
  init.dense("dec.fc2", cfg.decoder_hidden, flat, kLeakyGain);
  for (int i = 0; i < L; ++i) {
    const int ci = cfg.conv_channels[static_cast<std::size_t>(L - 1 - i)];
    const int co = i == L - 1 ? cfg.channels : cfg.conv_channels[static_cast<std::size_t>(L - 2 - i)];
    const std::string n = tconv_name(static_cast<std::size_t>(i));
    // Each output pixel of a stride-2, kernel-4 transpose conv sees 4 taps per input channel.
    const double gain = i == L - 1 ? 1.0 : kLeakyGain;
    init.normal(n + ".k", {ci, co, kDecoderKernel, kDecoderKernel}, gain / std::sqrt(4.0 * ci));
    init.constant(n + ".b", {co}, 0.0);
    if (cfg.channel_affine && i != L - 1) {
      init.constant(n + ".gamma", {co}, 1.0);
      init.constant(n + ".beta", {co}, 0.0);
    }
  }

  const HamiltonianSpec spec(cfg.d, cfg.flavor);
  for (int k = 0; k < cfg.K; ++k) {
    const auto p = symplectic::HamiltonianParams::random(spec, init.rng(), cfg.omega_init);
    Tensor<T> t({spec.parameter_count()});
    for (int i = 0; i < spec.parameter_count(); ++i) t[static_cast<std::size_t>(i)] = static_cast<T>(p.raw()[static_cast<std::size_t>(i)]);
    store.add(omega_name(k), std::move(t));
  }
  return store;
}

template <typename T>
Var rollout_op(Graph<T>& g, Var s_ref, Var omega, const HamiltonianSpec& spec, const std::vector<int>& t_ref,
               int length, const matexp::ExpConfig& cfg) {
  const Shape& ss = g.shape(s_ref);
  const int d = spec.d();
  const int dim = 2 * d;
  if (ss.size() != 2 || ss[1] != dim) throw ShapeError("rollout: s_ref must be [n, " + std::to_string(dim) + "]");
  const int n = ss[0];
  if (static_cast<int>(t_ref.size()) != n) throw ShapeError("rollout: one t_ref per row is required");
  if (g.shape(omega) != Shape{spec.parameter_count()}) throw ParameterShapeError("rollout: omega has the wrong size");
  if (length < 1) throw IndexError("rollout: length must be >= 1");

  const auto h = symplectic::assemble_hamiltonian(omega_params(spec, g.value(omega).template cast<double>()));
  // The transition Jacobian factor e^{tr H} is dropped from the objective; that is only valid at trace 0.
  if (std::abs(h.trace()) > 1e-10) throw ContractError("rollout: generator trace is not zero");
  const auto props = symplectic::propagators(h.values(), 1.0, cfg);

  std::vector<std::vector<Eigen::VectorXd>> states(static_cast<std::size_t>(n));
  Tensor<T> out({n * length, dim});
  const Tensor<T>& sv = g.value(s_ref);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd s0(dim);
    for (int c = 0; c < dim; ++c) s0(c) = static_cast<double>(sv[static_cast<std::size_t>(i * dim + c)]);
    if (t_ref[static_cast<std::size_t>(i)] < 1 || t_ref[static_cast<std::size_t>(i)] > length) {
      throw IndexError("rollout: t_ref out of range");
    }
    auto& traj = states[static_cast<std::size_t>(i)];
    traj = symplectic::rollout_stacked(s0, props, t_ref[static_cast<std::size_t>(i)], length);
    for (int t = 0; t < length; ++t)
      for (int c = 0; c < dim; ++c)
        out[static_cast<std::size_t>((i * length + t) * dim + c)] = static_cast<T>(traj[static_cast<std::size_t>(t)](c));
  }

  return g.record(std::move(out), {s_ref, omega},
                  [s_ref, omega, spec, t_ref, length, dim, n, states = std::move(states), hv = h.values(), props,
                   cfg](Graph<T>& gr, const Tensor<T>& grad) {
                    Eigen::MatrixXd d_fwd = Eigen::MatrixXd::Zero(dim, dim);
                    Eigen::MatrixXd d_bwd = Eigen::MatrixXd::Zero(dim, dim);
                    Tensor<T>* gs = gr.accumulator(s_ref);
                    auto grad_row = [&](int i, int t) {
                      Eigen::VectorXd v(dim);
                      for (int c = 0; c < dim; ++c) v(c) = static_cast<double>(grad[static_cast<std::size_t>((i * length + t) * dim + c)]);
                      return v;
                    };
                    for (int i = 0; i < n; ++i) {
                      const auto& traj = states[static_cast<std::size_t>(i)];
                      const int r = t_ref[static_cast<std::size_t>(i)] - 1;
                      Eigen::VectorXd total = grad_row(i, r);
                      // Forward branch: s_t = F s_{t-1} for t > r.
                      Eigen::VectorXd a = Eigen::VectorXd::Zero(dim);
                      for (int t = length - 1; t > r; --t) {
                        a = grad_row(i, t) + props.forward.transpose() * a;
                        d_fwd += a * traj[static_cast<std::size_t>(t - 1)].transpose();
                      }
                      if (r < length - 1) total += props.forward.transpose() * a;
                      // Backward branch: s_t = B s_{t+1} for t < r.
                      Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
                      for (int t = 0; t < r; ++t) {
                        b = grad_row(i, t) + props.backward.transpose() * b;
                        d_bwd += b * traj[static_cast<std::size_t>(t + 1)].transpose();
                      }
                      if (r > 0) total += props.backward.transpose() * b;
                      if (gs) {
                        for (int c = 0; c < dim; ++c) (*gs)[static_cast<std::size_t>(i * dim + c)] += static_cast<T>(total(c));
                      }
                    }
                    if (Tensor<T>* go = gr.accumulator(omega)) {
                      const Eigen::MatrixXd ht = hv.transpose();
                      const Eigen::MatrixXd dh = matexp::expm_frechet(ht, d_fwd, cfg) - matexp::expm_frechet(-ht, d_bwd, cfg);
                      const auto raw = symplectic::assemble_pullback(spec, dh);
                      for (std::size_t j = 0; j < raw.size(); ++j) (*go)[j] += static_cast<T>(raw[j]);
                    }
                  });
}

template <typename T>
Net<T>::Net(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& params, bool trainable)
    : g_(&g), cfg_(&cfg), params_(&params), bound_(g, params, trainable) {}

template <typename T>
Net<T>::Net(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& params, std::vector<Var> leaves)
    : g_(&g), cfg_(&cfg), params_(&params), bound_(params, std::move(leaves)) {}

template <typename T>
Var Net<T>::trunk(Var frames) const {
  const ModelConfig& c = *cfg_;
  const Shape& fs = g_->shape(frames);
  if (fs.size() != 4 || fs[1] != c.channels || fs[2] != c.height || fs[3] != c.width) {
    throw ShapeError("trunk: expected [M, " + std::to_string(c.channels) + ", " + std::to_string(c.height) + ", " +
                     std::to_string(c.width) + "], got " + nn::shape_str(fs));
  }
  const int m = fs[0];
  Var x = frames;
  for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
    const std::string n = conv_name(i);
    x = nn::bias_channels(*g_, nn::conv2d(*g_, x, param(n + ".k"), 2, c.kernel / 2), param(n + ".b"));
    if (c.channel_affine) x = nn::channel_affine(*g_, x, param(n + ".gamma"), param(n + ".beta"));
    x = nn::leaky_relu(*g_, x, T(0.2));
  }
  x = nn::reshape(*g_, x, {m, static_cast<int>(nn::numel(g_->shape(x)) / static_cast<std::size_t>(m))});
  x = nn::leaky_relu(*g_, nn::dense(*g_, x, param("enc.fc1.W"), param("enc.fc1.b")), T(0.2));
  return nn::leaky_relu(*g_, nn::dense(*g_, x, param("enc.fc2.W"), param("enc.fc2.b")), T(0.2));
}

template <typename T>
GaussianPosterior Net<T>::content(Var emb, int n, int len) const {
  const ModelConfig& c = *cfg_;
  if (g_->shape(emb) != Shape{n * len, c.h}) throw ShapeError("content: embeddings must be [n len, h]");
  if (len < 1) throw ShapeError("content: empty sequence");
  Var hidden = g_->constant(Tensor<T>({n, c.z_dim}));
  std::vector<int> rows(static_cast<std::size_t>(n));
  for (int t = 0; t < len; ++t) {
    for (int i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i * len + t;
    const Var x = nn::concat_cols(*g_, {nn::gather_rows(*g_, emb, rows), hidden});
    const Var u = nn::sigmoid(*g_, nn::dense(*g_, x, param("content.update.W"), param("content.update.b")));
    const Var cand = nn::tanh_act(*g_, nn::dense(*g_, x, param("content.cand.W"), param("content.cand.b")));
    hidden = nn::add(*g_, hidden, nn::mul(*g_, u, nn::sub(*g_, cand, hidden)));
  }
  return {nn::dense(*g_, hidden, param("content.mu.W"), param("content.mu.b")),
          nn::dense(*g_, hidden, param("content.logsig.W"), param("content.logsig.b"))};
}

template <typename T>
Var Net<T>::one_hot(int m, int k) const {
  Tensor<T> u({m, cfg_->K});
  for (int i = 0; i < m; ++i) u[static_cast<std::size_t>(i * cfg_->K + k)] = T(1);
  return g_->constant(std::move(u));
}

template <typename T>
GaussianPosterior Net<T>::head(const std::string& prefix, Var features) const {
  Var x = nn::leaky_relu(*g_, nn::dense(*g_, features, param(prefix + ".fc1.W"), param(prefix + ".fc1.b")), T(0.2));
  x = nn::leaky_relu(*g_, nn::dense(*g_, x, param(prefix + ".fc2.W"), param(prefix + ".fc2.b")), T(0.2));
  return {nn::dense(*g_, x, param(prefix + ".mu.W"), param(prefix + ".mu.b")),
          nn::dense(*g_, x, param(prefix + ".logsig.W"), param(prefix + ".logsig.b"))};
}

template <typename T>
GaussianPosterior Net<T>::position(Var emb, int k) const {
  if (k < 0 || k >= cfg_->K) throw LabelError("position: action out of range");
  const int m = g_->shape(emb).at(0);
  return head(pos_name(k), nn::concat_cols(*g_, {emb, one_hot(m, k)}));
}

template <typename T>
GaussianPosterior Net<T>::momentum(Var emb, int n, int len, const std::vector<int>& rows, int k) const {
  if (k < 0 || k >= cfg_->K) throw LabelError("momentum: action out of range");
  if (len < 1 || n < 1) throw ShapeError("momentum: empty window");
  if (g_->shape(emb) != Shape{n * len, cfg_->h}) throw ShapeError("momentum: embeddings must be [n len, h]");
  if (static_cast<int>(rows.size()) != n) throw ShapeError("momentum: one end row per sequence");
  const Var seq = nn::reshape(*g_, emb, {n, len, cfg_->h});
  const Var filtered = nn::reshape(*g_, nn::temporal_conv(*g_, seq, param(mom_name(k) + ".tcn")), {n * len, cfg_->h});
  std::vector<int> pick(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= len) throw IndexError("momentum: window end out of range");
    pick[static_cast<std::size_t>(i)] = i * len + r;
  }
  return head(mom_name(k), nn::concat_cols(*g_, {nn::gather_rows(*g_, filtered, pick), one_hot(n, k)}));
}

template <typename T>
Var Net<T>::rollout(Var s_ref, int k, const std::vector<int>& t_ref, int length) const {
  return rollout_op(*g_, s_ref, param(omega_name(k)), HamiltonianSpec(cfg_->d, cfg_->flavor), t_ref, length);
}

template <typename T>
Var Net<T>::decode(Var z_rows, Var q_all) const {
  const ModelConfig& c = *cfg_;
  const int m = g_->shape(z_rows).at(0);
  if (g_->shape(z_rows) != Shape{m, c.z_dim} || g_->shape(q_all) != Shape{m, c.K * c.d}) {
    throw ShapeError("decode: expected [M, z_dim] and [M, K d]");
  }
  Var x = nn::concat_cols(*g_, {z_rows, q_all});
  x = nn::leaky_relu(*g_, nn::dense(*g_, x, param("dec.fc1.W"), param("dec.fc1.b")), T(0.2));
  x = nn::leaky_relu(*g_, nn::dense(*g_, x, param("dec.fc2.W"), param("dec.fc2.b")), T(0.2));
  x = nn::reshape(*g_, x, {m, c.conv_channels.back(), c.bottleneck_height(), c.bottleneck_width()});
  const std::size_t L = c.conv_channels.size();
  for (std::size_t i = 0; i < L; ++i) {
    const std::string n = tconv_name(i);
    x = nn::bias_channels(*g_, nn::tconv2d(*g_, x, param(n + ".k"), 2, 1), param(n + ".b"));
    if (i + 1 < L) {
      if (c.channel_affine) x = nn::channel_affine(*g_, x, param(n + ".gamma"), param(n + ".beta"));
      x = nn::leaky_relu(*g_, x, T(0.2));
    }
  }
  return nn::tanh_act(*g_, x);
}

template <typename T>
symplectic::HamiltonianMatrix Net<T>::hamiltonian(int k) const {
  return symplectic::assemble_hamiltonian(
      omega_params(HamiltonianSpec(cfg_->d, cfg_->flavor), params_->get(omega_name(k)).template cast<double>()));
}

template <typename T>
Encoding encode(const Net<T>& net, const Tensor<T>& images, const std::vector<int>& actions, const Rng& rng,
                const EncodeOptions& opts) {
  const ModelConfig& c = net.config();
  Graph<T>& g = net.graph();
  if (images.rank() != 5 || images.dim(2) != c.channels || images.dim(3) != c.height || images.dim(4) != c.width) {
    throw ShapeError("encode: images must be [N, T, C, H, W], got " + nn::shape_str(images.shape()));
  }
  const int n = images.dim(0);
  const int len = images.dim(1);
  if (n < 1 || len < 1) throw ShapeError("encode: empty batch");
  if (static_cast<int>(actions.size()) != n) throw ShapeError("encode: one action per sequence");
  if (opts.t_ref < 0 || opts.t_ref > len) throw IndexError("encode: t_ref out of range");
  if (opts.horizon < 0) throw IndexError("encode: negative horizon");
  const int out_len = opts.horizon > 0 ? opts.horizon : len;

  Encoding enc;
  enc.groups.assign(static_cast<std::size_t>(c.K), {});
  for (int i = 0; i < n; ++i) {
    const int a = actions[static_cast<std::size_t>(i)];
    if (a < 0 || a >= c.K) throw LabelError("encode: action " + std::to_string(a) + " out of range");
    enc.groups[static_cast<std::size_t>(a)].push_back(i);
  }

  // Per-sequence draws in a fixed order: t_ref, eps_z, eps_q, eps_p.
  enc.t_ref.resize(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> eps_z(static_cast<std::size_t>(n)), eps_q(eps_z), eps_p(eps_z);
  for (int i = 0; i < n; ++i) {
    Rng r = rng.split(static_cast<std::uint64_t>(i));
    const auto ii = static_cast<std::size_t>(i);
    const int drawn = 1 + static_cast<int>(r.uniform_int(static_cast<std::uint64_t>(len)));
    enc.t_ref[ii] = opts.t_ref > 0 ? opts.t_ref : drawn;
    for (int j = 0; j < c.z_dim; ++j) eps_z[ii].push_back(r.normal());
    for (int j = 0; j < c.d; ++j) eps_q[ii].push_back(r.normal());
    for (int j = 0; j < c.d; ++j) eps_p[ii].push_back(r.normal());
  }
  auto eps_tensor = [](const std::vector<std::vector<double>>& src, const std::vector<int>& rows, int width) {
    Tensor<T> t({static_cast<int>(rows.size()), width});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < width; ++j) t[i * static_cast<std::size_t>(width) + static_cast<std::size_t>(j)] = static_cast<T>(src[static_cast<std::size_t>(rows[i])][static_cast<std::size_t>(j)]);
    return t;
  };

  const Var frames = g.constant(images.reshaped({n * len, c.channels, c.height, c.width}));
  const Var emb = net.trunk(frames);

  enc.z_post = net.content(emb, n, len);
  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  enc.z = opts.sample ? nn::reparam_sample(g, enc.z_post, eps_tensor(eps_z, all, c.z_dim)) : enc.z_post.mu;

  enc.q_post.resize(static_cast<std::size_t>(c.K));
  enc.p_post.resize(static_cast<std::size_t>(c.K));
  std::vector<nn::Placement> q_blocks, s_blocks;
  for (int k = 0; k < c.K; ++k) {
    const auto& grp = enc.groups[static_cast<std::size_t>(k)];
    if (grp.empty()) continue;
    const int m = static_cast<int>(grp.size());
    std::vector<int> ref_rows, seq_rows, ends, trefs, dest;
    for (const int i : grp) {
      const int tr = enc.t_ref[static_cast<std::size_t>(i)];
      ref_rows.push_back(i * len + tr - 1);
      ends.push_back(tr - 1);
      trefs.push_back(tr);
      for (int t = 0; t < len; ++t) seq_rows.push_back(i * len + t);
      for (int t = 0; t < out_len; ++t) dest.push_back(i * out_len + t);
    }
    const auto qp = net.position(nn::gather_rows(g, emb, ref_rows), k);
    const auto pp = net.momentum(nn::gather_rows(g, emb, seq_rows), m, len, ends, k);
    enc.q_post[static_cast<std::size_t>(k)] = qp;
    enc.p_post[static_cast<std::size_t>(k)] = pp;
    const Var q = opts.sample ? nn::reparam_sample(g, qp, eps_tensor(eps_q, grp, c.d)) : qp.mu;
    const Var p = opts.sample ? nn::reparam_sample(g, pp, eps_tensor(eps_p, grp, c.d)) : pp.mu;
    const Var states = net.rollout(nn::concat_cols(g, {q, p}), k, trefs, out_len);
    q_blocks.push_back({nn::slice_cols(g, states, 0, c.d), dest, k * c.d});
    s_blocks.push_back({states, dest, 2 * k * c.d});
  }
  enc.q_all = nn::place_blocks(g, n * out_len, c.K * c.d, q_blocks);
  enc.states_all = nn::place_blocks(g, n * out_len, 2 * c.K * c.d, s_blocks);
  return enc;
}

template <typename T>
ElboTerms elbo(const Net<T>& net, const Tensor<T>& images, const std::vector<int>& actions, const Rng& rng) {
  const ModelConfig& c = net.config();
  Graph<T>& g = net.graph();
  ElboTerms out;
  out.encoding = encode(net, images, actions, rng, {true, 0});
  const Encoding& enc = out.encoding;
  const int n = images.dim(0);
  const int len = images.dim(1);
  std::vector<int> z_rows;
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < len; ++t) z_rows.push_back(i);
  out.images = net.decode(nn::gather_rows(g, enc.z, z_rows), enc.q_all);

  const T inv_n = T(1) / static_cast<T>(n);
  auto kl_sum = [&](const std::vector<GaussianPosterior>& posts) {
    Var acc;
    for (const auto& p : posts) {
      if (!p.mu.valid()) continue;
      const Var kl = nn::kl_std_normal(g, p);
      acc = acc.valid() ? nn::add(g, acc, kl) : kl;
    }
    return nn::scale(g, acc, inv_n);
  };
  out.kl_q = kl_sum(enc.q_post);
  out.kl_p = kl_sum(enc.p_post);
  out.kl_z = nn::scale(g, nn::kl_std_normal(g, enc.z_post), inv_n);
  const Var target = g.constant(images.reshaped({n * len, c.channels, c.height, c.width}));
  out.recon = nn::scale(g, nn::half_squared_error(g, out.images, target), inv_n);
  out.loss = nn::add(g, nn::add(g, out.kl_q, out.kl_p), nn::add(g, out.kl_z, out.recon));
  return out;
}

int action_from_one_hot(std::span<const float> u) {
  int hot = -1;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u[i] == 1.0f) {
      if (hot >= 0) throw LabelError("action label has several hot entries");
      hot = static_cast<int>(i);
    } else if (u[i] != 0.0f) {
      throw LabelError("action label entries must be 0 or 1");
    }
  }
  if (hot < 0) throw LabelError("action label has no hot entry");
  return hot;
}

// ---------------------------------------------------------------------------

namespace {

PosteriorValues values_of(const Graph<float>& g, const GaussianPosterior& p) {
  PosteriorValues out;
  for (const float v : g.value(p.mu).values()) out.mu.push_back(v);
  for (const float v : g.value(p.log_sigma).values()) out.log_sigma.push_back(v);
  return out;
}

Tensor<float> as_batch(const Tensor<float>& t, int extra_rank) {
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  if (t.rank() != extra_rank) throw ShapeError("expected rank " + std::to_string(extra_rank) + ", got " + nn::shape_str(t.shape()));
  return t.reshaped(std::move(s));
}

}  // namespace

Model::Model(ModelConfig cfg, ParameterStore<float> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  const auto expected = init_parameters<float>(cfg_, 0);
  if (expected.names() != params_.names()) throw ContractError("Model: parameter names do not match the config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected.tensors()[i].shape() != params_.tensors()[i].shape()) {
      throw ParameterShapeError("Model: parameter " + expected.names()[i] + " has shape " +
                                nn::shape_str(params_.tensors()[i].shape()) + ", expected " +
                                nn::shape_str(expected.tensors()[i].shape()));
    }
  }
}

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) { return Model(cfg, init_parameters<float>(cfg, seed)); }

symplectic::HamiltonianMatrix Model::hamiltonian(int k) const {
  if (k < 0 || k >= cfg_.K) throw LabelError("hamiltonian: action out of range");
  Graph<float> g;
  return Net<float>(g, cfg_, params_, false).hamiltonian(k);
}

PosteriorValues Model::encode_content(const Tensor<float>& sequence) const {
  Graph<float> g;
  const Net<float> net(g, cfg_, params_, false);
  if (sequence.rank() != 4 || sequence.dim(0) < 1) throw ShapeError("encode_content: expected [T, C, H, W]");
  const Var emb = net.trunk(g.constant(sequence));
  return values_of(g, net.content(emb, 1, sequence.dim(0)));
}

PosteriorValues Model::encode_position(const Tensor<float>& frame, std::span<const float> u) const {
  if (static_cast<int>(u.size()) != cfg_.K) throw LabelError("encode_position: label must have K entries");
  const int k = action_from_one_hot(u);
  Graph<float> g;
  const Net<float> net(g, cfg_, params_, false);
  return values_of(g, net.position(net.trunk(g.constant(as_batch(frame, 3))), k));
}

PosteriorValues Model::encode_momentum(const Tensor<float>& window, std::span<const float> u) const {
  if (static_cast<int>(u.size()) != cfg_.K) throw LabelError("encode_momentum: label must have K entries");
  const int k = action_from_one_hot(u);
  if (window.rank() != 4) throw ShapeError("encode_momentum: expected [w, C, H, W]");
  const int have = window.dim(0);
  if (have < 1) throw ShapeError("encode_momentum: empty window");
  // Front padding by replication, so the filter always sees w frames.
  const int len = std::max(have, cfg_.w);
  const std::size_t fsz = static_cast<std::size_t>(cfg_.frame_size());
  Tensor<float> padded({len, cfg_.channels, cfg_.height, cfg_.width});
  for (int t = 0; t < len; ++t) {
    const int src = std::max(0, t - (len - have));
    std::copy_n(window.data() + static_cast<std::size_t>(src) * fsz, fsz, padded.data() + static_cast<std::size_t>(t) * fsz);
  }
  Graph<float> g;
  const Net<float> net(g, cfg_, params_, false);
  return values_of(g, net.momentum(net.trunk(g.constant(padded)), 1, len, {len - 1}, k));
}

namespace {

std::vector<LatentSample> unpack_latents(const ModelConfig& cfg, const Tensor<float>& z, const Tensor<float>& states,
                                         int n, int len, const std::vector<int>& actions,
                                         const std::vector<int>& t_ref) {
  const int width = 2 * cfg.K * cfg.d;
  std::vector<LatentSample> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    LatentSample& ls = out[static_cast<std::size_t>(i)];
    ls.action = actions[static_cast<std::size_t>(i)];
    ls.t_ref = t_ref[static_cast<std::size_t>(i)];
    for (int j = 0; j < cfg.z_dim; ++j) ls.z.push_back(z[static_cast<std::size_t>(i * cfg.z_dim + j)]);
    for (int t = 0; t < len; ++t) {
      std::vector<symplectic::PhaseState> blocks;
      const float* row = states.data() + static_cast<std::size_t>((i * len + t) * width);
      for (int k = 0; k < cfg.K; ++k) {
        symplectic::PhaseState ps = symplectic::PhaseState::zeros(cfg.d);
        for (int j = 0; j < cfg.d; ++j) {
          ps.q(j) = row[2 * k * cfg.d + j];
          ps.p(j) = row[2 * k * cfg.d + cfg.d + j];
        }
        blocks.push_back(std::move(ps));
      }
      ls.motion.emplace_back(std::move(blocks), ls.action);
    }
  }
  return out;
}

}  // namespace

std::vector<LatentSample> Model::infer_latents(const Tensor<float>& images, const std::vector<int>& actions,
                                               std::uint64_t seed) const {
  Graph<float> g;
  const Net<float> net(g, cfg_, params_, false);
  const Encoding enc = encode(net, images, actions, Rng(seed), {true, 0});
  return unpack_latents(cfg_, g.value(enc.z), g.value(enc.states_all), images.dim(0), images.dim(1), actions,
                        enc.t_ref);
}

std::vector<LatentSample> Model::generate_latents(int k, int n, int length, std::uint64_t seed) const {
  if (n < 1) throw ShapeError("generate: n must be >= 1");
  if (k < 0 || k >= cfg_.K) throw LabelError("generate: action out of range");
  if (length < 1) throw IndexError("generate: length must be >= 1");
  const Tensor<float> z = prior_content(n, seed);
  const Tensor<float> s = prior_motion(n, seed ^ kMotionSeed);
  Graph<float> g;
  const Net<float> net(g, cfg_, params_, false);
  const Var states = net.rollout(g.constant(s), k, std::vector<int>(static_cast<std::size_t>(n), 1), length);
  std::vector<int> rows(static_cast<std::size_t>(n * length));
  std::iota(rows.begin(), rows.end(), 0);
  const Var all = nn::place_blocks(g, n * length, 2 * cfg_.K * cfg_.d, {nn::Placement{states, rows, 2 * k * cfg_.d}});
  return unpack_latents(cfg_, z, g.value(all), n, length, std::vector<int>(static_cast<std::size_t>(n), k),
                        std::vector<int>(static_cast<std::size_t>(n), 1));
}

Tensor<float> Model::prior_content(int n, std::uint64_t seed) const {
  Rng rng(seed);
  Tensor<float> z({n, cfg_.z_dim});
  for (int i = 0; i < n; ++i) {
    Rng r = rng.split(static_cast<std::uint64_t>(i));
    for (int j = 0; j < cfg_.z_dim; ++j) z[static_cast<std::size_t>(i * cfg_.z_dim + j)] = static_cast<float>(r.normal());
  }
  return z;
}

Tensor<float> Model::prior_motion(int n, std::uint64_t seed) const {
  Rng rng(seed);
  Tensor<float> s({n, 2 * cfg_.d});
  for (int i = 0; i < n; ++i) {
    Rng r = rng.split(static_cast<std::uint64_t>(i));
    for (int j = 0; j < 2 * cfg_.d; ++j) s[static_cast<std::size_t>(i * 2 * cfg_.d + j)] = static_cast<float>(r.normal());
  }
  return s;
}

Tensor<float> Model::reconstruct(const Tensor<float>& images, const std::vector<int>& actions, int t_ref) const {
  Graph<float> g;
  const Net<float> net(g, cfg_, params_, false);
  const Encoding enc = encode(net, images, actions, Rng(0), {false, t_ref});
  const int n = images.dim(0);
  const int len = images.dim(1);
  std::vector<int> z_rows;
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < len; ++t) z_rows.push_back(i);
  return g.value(net.decode(nn::gather_rows(g, enc.z, z_rows), enc.q_all)).reshaped(images.shape());
}

Tensor<float> Model::extrapolate(const Tensor<float>& images, const std::vector<int>& actions, int t_ref,
                                 int length) const {
  if (length < 1) throw IndexError("extrapolate: length must be >= 1");
  Graph<float> g;
  const Net<float> net(g, cfg_, params_, false);
  const Encoding enc = encode(net, images, actions, Rng(0), {false, t_ref, length});
  const int n = images.dim(0);
  std::vector<int> z_rows;
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < length; ++t) z_rows.push_back(i);
  return g.value(net.decode(nn::gather_rows(g, enc.z, z_rows), enc.q_all))
      .reshaped({n, length, cfg_.channels, cfg_.height, cfg_.width});
}

Tensor<float> Model::decode_rollout(Graph<float>& g, const Net<float>& net, Var z, Var s_ref, int n, int k,
                                    int length) const {
  const Var states = net.rollout(s_ref, k, std::vector<int>(static_cast<std::size_t>(n), 1), length);
  std::vector<int> rows, z_rows;
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < length; ++t) {
      rows.push_back(i * length + t);
      z_rows.push_back(i);
    }
  const Var q_all = nn::place_blocks(g, n * length, cfg_.K * cfg_.d,
                                     {nn::Placement{nn::slice_cols(g, states, 0, cfg_.d), rows, k * cfg_.d}});
  const Var x = net.decode(nn::gather_rows(g, z, z_rows), q_all);
  return g.value(x).reshaped({n, length, cfg_.channels, cfg_.height, cfg_.width});
}

Tensor<float> Model::generate(int k, int n, int length, std::uint64_t seed) const {
  if (n < 1) throw ShapeError("generate: n must be >= 1");
  // Motion draws use a second family of streams so that they do not depend on z_dim.
  return generate_with_content(prior_content(n, seed), k, length, seed ^ kMotionSeed);
}

Tensor<float> Model::generate_with_content(const Tensor<float>& z, int k, int length, std::uint64_t seed) const {
  if (k < 0 || k >= cfg_.K) throw LabelError("generate: action out of range");
  if (z.rank() != 2 || z.dim(1) != cfg_.z_dim) throw ShapeError("generate: z must be [n, z_dim]");
  if (length < 1) throw IndexError("generate: length must be >= 1");
  const int n = z.dim(0);
  Graph<float> g;
  const Net<float> net(g, cfg_, params_, false);
  return decode_rollout(g, net, g.constant(z), g.constant(prior_motion(n, seed)), n, k, length);
}

Tensor<float> Model::content_means(const Tensor<float>& images) const {
  if (images.rank() != 5) throw ShapeError("content_means: expected [N, T, C, H, W]");
  const int n = images.dim(0);
  const int len = images.dim(1);
  Graph<float> g;
  const Net<float> net(g, cfg_, params_, false);
  const Var emb = net.trunk(g.constant(images.reshaped({n * len, cfg_.channels, cfg_.height, cfg_.width})));
  return g.value(net.content(emb, n, len).mu);
}

Tensor<float> Model::image_to_sequence(const Tensor<float>& frames, int k, int length) const {
  if (k < 0 || k >= cfg_.K) throw LabelError("image_to_sequence: action out of range");
  if (frames.rank() != 4 || frames.dim(0) < 1) throw ShapeError("image_to_sequence: expected [N, C, H, W]");
  const int n = frames.dim(0);
  const int len = cfg_.T;
  const std::size_t fsz = static_cast<std::size_t>(cfg_.frame_size());
  // The single frame stands in for a whole sequence: content and the momentum window both see copies.
  Tensor<float> replicated({n * len, cfg_.channels, cfg_.height, cfg_.width});
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < len; ++t) {
      std::copy_n(frames.data() + static_cast<std::size_t>(i) * fsz, fsz,
                  replicated.data() + static_cast<std::size_t>(i * len + t) * fsz);
    }
  Graph<float> g;
  const Net<float> net(g, cfg_, params_, false);
  const Var emb = net.trunk(g.constant(std::move(replicated)));
  const Var z = net.content(emb, n, len).mu;
  std::vector<int> first(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) first[static_cast<std::size_t>(i)] = i * len;
  const Var q = net.position(nn::gather_rows(g, emb, first), k).mu;
  const Var p = net.momentum(emb, n, len, std::vector<int>(static_cast<std::size_t>(n), 0), k).mu;
  return decode_rollout(g, net, z, nn::concat_cols(g, {q, p}), n, k, length);
}

Model::Swapped Model::motion_swap(const Tensor<float>& x1, const std::vector<int>& u1, const Tensor<float>& x2,
                                  const std::vector<int>& u2, int t_ref) const {
  if (x1.shape() != x2.shape()) throw ShapeError("motion_swap: sequences must have equal shapes");
  Graph<float> g;
  const Net<float> net(g, cfg_, params_, false);
  const Encoding e1 = encode(net, x1, u1, Rng(0), {false, t_ref});
  const Encoding e2 = encode(net, x2, u2, Rng(0), {false, t_ref});
  const int n = x1.dim(0);
  const int len = x1.dim(1);
  std::vector<int> z_rows;
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < len; ++t) z_rows.push_back(i);
  const Var a = net.decode(nn::gather_rows(g, e1.z, z_rows), e2.q_all);
  const Var b = net.decode(nn::gather_rows(g, e2.z, z_rows), e1.q_all);
  return {g.value(a).reshaped(x1.shape()), g.value(b).reshaped(x1.shape())};
}

#define HVAE_INSTANTIATE_MODEL(T)                                                                            \
  template ParameterStore<T> init_parameters<T>(const ModelConfig&, std::uint64_t);                          \
  template Var rollout_op<T>(Graph<T>&, Var, Var, const HamiltonianSpec&, const std::vector<int>&, int,      \
                             const matexp::ExpConfig&);                                                      \
  template class Net<T>;                                                                                     \
  template Encoding encode<T>(const Net<T>&, const Tensor<T>&, const std::vector<int>&, const Rng&,          \
                              const EncodeOptions&);                                                         \
  template ElboTerms elbo<T>(const Net<T>&, const Tensor<T>&, const std::vector<int>&, const Rng&);

HVAE_INSTANTIATE_MODEL(float)
HVAE_INSTANTIATE_MODEL(double)

}  // namespace hvae::vae
