#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvae/classifier.hpp"
#include "hvae/metrics.hpp"
#include "hvae/model.hpp"
#include "hvae/synthworld.hpp"

namespace hvae::eval {

/// Reference frame used by the deterministic evaluation paths.
int eval_t_ref(const ModelConfig& cfg);

/// Posterior-mean reconstruction of every sequence, scored per frame.
metrics::SequenceScores reconstruction_scores(const vae::Model& model, const synth::Dataset& ds);

/// Unrolls `length` frames from frame 1 and scores them against the
/// periodic ground truth rendered by the synthetic world.
metrics::SequenceScores rollout_scores(const vae::Model& model, const synth::Dataset& ds, int length);

struct DisentanglementReport {
  int n_samples = 0;
  double accuracy = 0;
  double intra_entropy = 0;  ///< mean entropy of each prediction
  double inter_entropy = 0;  ///< entropy of the mean prediction
  std::vector<double> per_action_accuracy;
};

/// Content means from real sequences, motion from the prior, scored by the classifier.
DisentanglementReport eval_disentanglement(const vae::Model& model, const cls::ActionClassifier& classifier,
                                           const synth::Dataset& ds, int n_samples, std::uint64_t seed);

/// Entropy (nats) of each row of a probability table [N, K].
std::vector<double> row_entropies(const nn::Tensor<float>& prob);
double mean_row_entropy(const nn::Tensor<float>& prob);
double entropy_of_mean(const nn::Tensor<float>& prob);

struct SwapPair {
  int first = 0, second = 0;
  double mse_first_to_second = 0;  ///< content of first, motion of second
  double mse_second_to_first = 0;
};

struct SwapReport {
  std::vector<SwapPair> pairs;
  double mean = 0, p50 = 0, p90 = 0, max = 0;
  double reconstruction_mse = 0;  ///< same data, for scale
};

/// Swaps motion across random cross-action pairs and scores each result
/// against the exact render of (content of one, action and phase of the other).
SwapReport eval_swap_fidelity(const vae::Model& model, const synth::Dataset& ds, int n_pairs, std::uint64_t seed);
/// Pairs given explicitly; first == second is allowed.
SwapReport eval_swap_pairs(const vae::Model& model, const synth::Dataset& ds,
                           const std::vector<std::pair<int, int>>& pairs);

/// Ground truth of `length` frames continuing sequence i of ds.
nn::Tensor<float> render_truth(const synth::Dataset& ds, const std::vector<int>& indices, int length);

std::string to_json(const metrics::SequenceScores& s);
std::string to_json(const DisentanglementReport& r);
std::string to_json(const SwapReport& r);

}  // namespace hvae::eval
