#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hvae/config.hpp"
#include "hvae/ops.hpp"
#include "hvae/params.hpp"
#include "hvae/rng.hpp"
#include "hvae/symplectic.hpp"

namespace hvae::vae {

using nn::GaussianPosterior;
using nn::Graph;
using nn::ParameterStore;
using nn::Tensor;
using nn::Var;

/// Fresh parameters for `cfg`, drawn from `seed` in registration order.
template <typename T>
ParameterStore<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// The latent flow as one graph op. s_ref [n, 2d] holds [q; p] per row;
/// row i sits at time t_ref[i] (1-based). Output [n * length, 2d] with row
/// i * length + (t - 1) holding s_t. Gradients reach omega through the
/// Frechet derivative of both one-step propagators.
template <typename T>
Var rollout_op(Graph<T>& g, Var s_ref, Var omega, const symplectic::HamiltonianSpec& spec,
               const std::vector<int>& t_ref, int length, const matexp::ExpConfig& cfg = {});

/// Network pieces bound to one graph.
template <typename T>
class Net {
 public:
  Net(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& params, bool trainable);
  /// Uses existing leaves (store order) in place of the store's values.
  Net(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& params, std::vector<Var> leaves);

  Graph<T>& graph() const noexcept { return *g_; }
  const ModelConfig& config() const noexcept { return *cfg_; }
  Var param(const std::string& name) const { return bound_[name]; }
  const nn::BoundParameters<T>& bound() const noexcept { return bound_; }

  /// frames [M, C, H, W] -> embeddings [M, h].
  Var trunk(Var frames) const;
  /// emb [n * len, h], sequence-major -> posterior over z [n, z_dim].
  GaussianPosterior content(Var emb, int n, int len) const;
  /// emb [m, h] -> posterior over q^k [m, d].
  GaussianPosterior position(Var emb, int k) const;
  /// emb [n * len, h]; the window ends at time index `rows[i]` (0-based) of sequence i.
  GaussianPosterior momentum(Var emb, int n, int len, const std::vector<int>& rows, int k) const;
  Var rollout(Var s_ref, int k, const std::vector<int>& t_ref, int length) const;
  /// z_rows [M, z_dim], q_all [M, K d] -> images [M, C, H, W] in [-1, 1].
  Var decode(Var z_rows, Var q_all) const;

  symplectic::HamiltonianMatrix hamiltonian(int k) const;

 private:
  Var one_hot(int m, int k) const;
  GaussianPosterior head(const std::string& prefix, Var features) const;

  Graph<T>* g_;
  const ModelConfig* cfg_;
  const ParameterStore<T>* params_;
  nn::BoundParameters<T> bound_;
};

struct EncodeOptions {
  bool sample = true;  ///< false uses posterior means
  int t_ref = 0;       ///< 1-based reference frame; 0 draws one per sequence
  int horizon = 0;     ///< frames to roll out; 0 matches the input length
};

struct Encoding {
  GaussianPosterior z_post;
  Var z;                                 ///< [N, z_dim]
  std::vector<GaussianPosterior> q_post;  ///< per action; invalid Vars when unused
  std::vector<GaussianPosterior> p_post;
  std::vector<std::vector<int>> groups;  ///< sequence indices per action
  Var q_all;       ///< [N T, K d], positions of every frame
  Var states_all;  ///< [N T, 2 K d], full phase points laid out (q1, p1, q2, p2, ...)
  std::vector<int> t_ref;
};

/// images [N, T, C, H, W]. Per-sequence randomness comes from rng.split(i).
template <typename T>
Encoding encode(const Net<T>& net, const Tensor<T>& images, const std::vector<int>& actions,
                const Rng& rng, const EncodeOptions& opts = {});

struct ElboTerms {
  Var loss;  ///< kl_q + kl_p + kl_z + recon, averaged over sequences
  Var kl_q;
  Var kl_p;
  Var kl_z;
  Var recon;
  Var images;  ///< decoded [N T, C, H, W]
  Encoding encoding;
};

template <typename T>
ElboTerms elbo(const Net<T>& net, const Tensor<T>& images, const std::vector<int>& actions,
               const Rng& rng);

/// Inverse of a one-hot row; throws LabelError otherwise.
int action_from_one_hot(std::span<const float> u);

struct LatentSample {
  std::vector<double> z;
  std::vector<symplectic::MotionState> motion;  ///< s_1..s_T
  int t_ref = 1;
  int action = 0;
};

struct PosteriorValues {
  std::vector<double> mu;
  std::vector<double> log_sigma;
};

/// Float model with the inference and generation tasks.
class Model {
 public:
  Model(ModelConfig cfg, ParameterStore<float> params);
  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  const ParameterStore<float>& parameters() const noexcept { return params_; }
  ParameterStore<float>& parameters() noexcept { return params_; }

  symplectic::HamiltonianMatrix hamiltonian(int k) const;

  /// sequence [T', C, H, W].
  PosteriorValues encode_content(const Tensor<float>& sequence) const;
  /// frame [C, H, W], u one-hot over K.
  PosteriorValues encode_position(const Tensor<float>& frame, std::span<const float> u) const;
  /// window [w', C, H, W] ending at the current frame; shorter windows are
  /// padded at the front by repeating their first frame.
  PosteriorValues encode_momentum(const Tensor<float>& window, std::span<const float> u) const;

  std::vector<LatentSample> infer_latents(const Tensor<float>& images, const std::vector<int>& actions,
                                          std::uint64_t seed) const;

  /// Posterior-mean reconstruction [N, T, C, H, W] from reference frame t_ref.
  Tensor<float> reconstruct(const Tensor<float>& images, const std::vector<int>& actions, int t_ref) const;

  /// Posterior means as in reconstruct, rolled out over `length` frames from frame 1.
  Tensor<float> extrapolate(const Tensor<float>& images, const std::vector<int>& actions, int t_ref,
                            int length) const;

  /// n sequences of `length` frames with z, q1, p1 drawn from the prior.
  Tensor<float> generate(int k, int n, int length, std::uint64_t seed) const;
  /// Latents behind generate(k, n, length, seed), laid out like infer_latents.
  std::vector<LatentSample> generate_latents(int k, int n, int length, std::uint64_t seed) const;
  /// Prior motion for action k paired with given content rows z [n, z_dim].
  Tensor<float> generate_with_content(const Tensor<float>& z, int k, int length, std::uint64_t seed) const;
  /// Posterior-mean content [N, z_dim] of each sequence.
  Tensor<float> content_means(const Tensor<float>& images) const;

  /// frames [N, C, H, W] -> [N, length, C, H, W] by unrolling from the first frame.
  Tensor<float> image_to_sequence(const Tensor<float>& frames, int k, int length) const;

  struct Swapped {
    Tensor<float> first_to_second;  ///< content of 1 with motion of 2
    Tensor<float> second_to_first;
  };
  Swapped motion_swap(const Tensor<float>& x1, const std::vector<int>& u1, const Tensor<float>& x2,
                      const std::vector<int>& u2, int t_ref) const;

 private:
  Tensor<float> prior_content(int n, std::uint64_t seed) const;
  Tensor<float> prior_motion(int n, std::uint64_t seed) const;
  Tensor<float> decode_rollout(Graph<float>& g, const Net<float>& net, Var z, Var s_ref, int n, int k,
                               int length) const;

  ModelConfig cfg_;
  ParameterStore<float> params_;
};

}  // namespace hvae::vae
