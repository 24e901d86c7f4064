#include "hvae/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

namespace hvae::eval {

namespace {

constexpr int kChunk = 64;

std::vector<std::vector<int>> chunks(int n) {
  std::vector<std::vector<int>> out;
  for (int at = 0; at < n; at += kChunk) {
    std::vector<int> c;
    for (int i = at; i < std::min(n, at + kChunk); ++i) c.push_back(i);
    out.push_back(std::move(c));
  }
  return out;
}

// Frame-count weighted merge of per-chunk scores.
void accumulate(metrics::SequenceScores& total, const metrics::SequenceScores& part, double weight) {
  if (total.per_time.empty()) total.per_time.resize(part.per_time.size());
  for (std::size_t t = 0; t < part.per_time.size(); ++t) {
    total.per_time[t].mse += weight * part.per_time[t].mse;
    total.per_time[t].psnr += weight * part.per_time[t].psnr;
    total.per_time[t].ssim += weight * part.per_time[t].ssim;
  }
  total.mean.mse += weight * part.mean.mse;
  total.mean.psnr += weight * part.mean.psnr;
  total.mean.ssim += weight * part.mean.ssim;
}

double sequence_mse(const nn::Tensor<float>& a, const nn::Tensor<float>& b, int i) {
  const std::size_t n = a.size() / a.dim(0);
  const std::span<const float> x(a.data() + i * n, n), y(b.data() + i * n, n);
  // model space [-1, 1] -> unit range scales squared error by 1/4
  return metrics::mse(x, y) / 4.0;
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (static_cast<double>(v.size()) - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

nlohmann::ordered_json scores_json(const metrics::SequenceScores& s) {
  nlohmann::ordered_json j;
  j["mse"] = s.mean.mse;
  j["psnr"] = s.mean.psnr;
  j["ssim"] = s.mean.ssim;
  auto& per = j["per_frame"] = nlohmann::ordered_json::array();
  for (const auto& f : s.per_time) per.push_back({{"mse", f.mse}, {"psnr", f.psnr}, {"ssim", f.ssim}});
  return j;
}

}  // namespace

int eval_t_ref(const ModelConfig& cfg) { return std::max(1, cfg.T / 2); }

nn::Tensor<float> render_truth(const synth::Dataset& ds, const std::vector<int>& indices, int length) {
  const auto world = ds.world();
  nn::Tensor<float> out({static_cast<int>(indices.size()), length, ds.C, ds.H, ds.W});
  std::size_t at = 0;
  for (const int i : indices) {
    const auto& r = ds.records.at(static_cast<std::size_t>(i));
    const auto s = synth::render_sequence(synth::ContentFactors::from_identity(r.identity),
                                          static_cast<synth::ActionKind>(r.action), r.phase, length, world);
    std::copy(s.values().begin(), s.values().end(), out.data() + at);
    at += s.size();
  }
  return out;
}

metrics::SequenceScores reconstruction_scores(const vae::Model& model, const synth::Dataset& ds) {
  metrics::SequenceScores total;
  for (const auto& idx : chunks(ds.size())) {
    const auto b = ds.batch(idx);
    const auto rec = model.reconstruct(b.images, b.labels, eval_t_ref(model.config()));
    accumulate(total, metrics::score_sequences(rec, b.images), static_cast<double>(idx.size()) / ds.size());
  }
  return total;
}

metrics::SequenceScores rollout_scores(const vae::Model& model, const synth::Dataset& ds, int length) {
  metrics::SequenceScores total;
  for (const auto& idx : chunks(ds.size())) {
    const auto b = ds.batch(idx);
    const auto pred = model.extrapolate(b.images, b.labels, 1, length);
    accumulate(total, metrics::score_sequences(pred, render_truth(ds, idx, length)),
               static_cast<double>(idx.size()) / ds.size());
  }
  return total;
}

std::vector<double> row_entropies(const nn::Tensor<float>& prob) {
  std::vector<double> out;
  const int k = prob.dim(1);
  for (int i = 0; i < prob.dim(0); ++i) {
    double h = 0;
    for (int j = 0; j < k; ++j) {
      const double p = prob[static_cast<std::size_t>(i * k + j)];
      if (p > 0) h -= p * std::log(p);
    }
    out.push_back(h);
  }
  return out;
}

double mean_row_entropy(const nn::Tensor<float>& prob) {
  const auto h = row_entropies(prob);
  return std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size());
}

double entropy_of_mean(const nn::Tensor<float>& prob) {
  const int n = prob.dim(0), k = prob.dim(1);
  double h = 0;
  for (int j = 0; j < k; ++j) {
    double m = 0;
    for (int i = 0; i < n; ++i) m += prob[static_cast<std::size_t>(i * k + j)];
    m /= n;
    if (m > 0) h -= m * std::log(m);
  }
  return h;
}

DisentanglementReport eval_disentanglement(const vae::Model& model, const cls::ActionClassifier& classifier,
                                           const synth::Dataset& ds, int n_samples, std::uint64_t seed) {
  const auto& cfg = model.config();
  if (n_samples < 1) throw ContractError("eval_disentanglement: n_samples must be >= 1");
  if (ds.size() == 0) throw ContractError("eval_disentanglement: empty dataset");
  if (classifier.config().K != cfg.K) throw ShapeError("eval_disentanglement: classifier and model disagree on K");
  Rng rng(seed);
  // sample i asks for action i mod K with the content of a random real sequence
  std::vector<std::vector<int>> sources(static_cast<std::size_t>(cfg.K));
  for (int i = 0; i < n_samples; ++i) {
    sources[static_cast<std::size_t>(i % cfg.K)].push_back(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(ds.size()))));
  }
  DisentanglementReport rep;
  rep.n_samples = n_samples;
  nn::Tensor<float> all_prob({n_samples, cfg.K});
  int row = 0, hits = 0;
  for (int k = 0; k < cfg.K; ++k) {
    const auto& src = sources[static_cast<std::size_t>(k)];
    int hits_k = 0;
    for (std::size_t at = 0; at < src.size(); at += kChunk) {
      const std::vector<int> idx(src.begin() + static_cast<long>(at),
                                 src.begin() + static_cast<long>(std::min(src.size(), at + kChunk)));
      const auto z = model.content_means(ds.batch(idx).images);
      const auto seq = model.generate_with_content(z, k, cfg.T, rng.split(static_cast<std::uint64_t>(k) << 32 | at).next_u64());
      const auto prob = classifier.predict_proba(seq);
      for (int i = 0; i < prob.dim(0); ++i, ++row) {
        int best = 0;
        for (int j = 0; j < cfg.K; ++j) {
          const float p = prob[static_cast<std::size_t>(i * cfg.K + j)];
          all_prob[static_cast<std::size_t>(row * cfg.K + j)] = p;
          if (p > prob[static_cast<std::size_t>(i * cfg.K + best)]) best = j;
        }
        hits_k += best == k;
      }
    }
    hits += hits_k;
    rep.per_action_accuracy.push_back(src.empty() ? 0.0 : static_cast<double>(hits_k) / src.size());
  }
  rep.accuracy = static_cast<double>(hits) / n_samples;
  rep.intra_entropy = mean_row_entropy(all_prob);
  rep.inter_entropy = entropy_of_mean(all_prob);
  return rep;
}

SwapReport eval_swap_pairs(const vae::Model& model, const synth::Dataset& ds,
                           const std::vector<std::pair<int, int>>& pairs) {
  SwapReport rep;
  const int t_ref = eval_t_ref(model.config());
  for (std::size_t at = 0; at < pairs.size(); at += kChunk) {
    std::vector<int> a, b;
    for (std::size_t i = at; i < std::min(pairs.size(), at + kChunk); ++i) {
      a.push_back(pairs[i].first);
      b.push_back(pairs[i].second);
    }
    const auto ba = ds.batch(a), bb = ds.batch(b);
    const auto sw = model.motion_swap(ba.images, ba.labels, bb.images, bb.labels, t_ref);
    // Targets: identity of one sequence moving with the action and phase of the other.
    nn::Tensor<float> t_ab({static_cast<int>(a.size()), ds.T, ds.C, ds.H, ds.W}), t_ba(t_ab.shape());
    std::size_t off = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const auto& ra = ds.records.at(static_cast<std::size_t>(a[j]));
      const auto& rb = ds.records.at(static_cast<std::size_t>(b[j]));
      const auto sab = synth::render_sequence(synth::ContentFactors::from_identity(ra.identity),
                                              static_cast<synth::ActionKind>(rb.action), rb.phase, ds.T, ds.world());
      const auto sba = synth::render_sequence(synth::ContentFactors::from_identity(rb.identity),
                                              static_cast<synth::ActionKind>(ra.action), ra.phase, ds.T, ds.world());
      std::copy(sab.values().begin(), sab.values().end(), t_ab.data() + off);
      std::copy(sba.values().begin(), sba.values().end(), t_ba.data() + off);
      off += sab.size();
    }
    for (std::size_t j = 0; j < a.size(); ++j) {
      rep.pairs.push_back({a[j], b[j], sequence_mse(sw.first_to_second, t_ab, static_cast<int>(j)),
                           sequence_mse(sw.second_to_first, t_ba, static_cast<int>(j))});
    }
  }
  std::vector<double> all;
  for (const auto& p : rep.pairs) {
    all.push_back(p.mse_first_to_second);
    all.push_back(p.mse_second_to_first);
  }
  if (!all.empty()) {
    rep.mean = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
    rep.p50 = percentile(all, 0.5);
    rep.p90 = percentile(all, 0.9);
    rep.max = *std::max_element(all.begin(), all.end());
  }
  rep.reconstruction_mse = reconstruction_scores(model, ds).mean.mse;
  return rep;
}

SwapReport eval_swap_fidelity(const vae::Model& model, const synth::Dataset& ds, int n_pairs, std::uint64_t seed) {
  if (n_pairs < 0) throw ContractError("eval_swap_fidelity: n_pairs must be >= 0");
  std::vector<std::vector<int>> by_action(static_cast<std::size_t>(ds.K));
  for (int i = 0; i < ds.size(); ++i) by_action[ds.records[static_cast<std::size_t>(i)].action].push_back(i);
  int populated = 0;
  for (const auto& v : by_action) populated += !v.empty();
  if (n_pairs > 0 && populated < 2) throw ContractError("eval_swap_fidelity: needs sequences of two actions");
  Rng rng(seed);
  std::vector<std::pair<int, int>> pairs;
  while (static_cast<int>(pairs.size()) < n_pairs) {
    const int i = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(ds.size())));
    const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(ds.size())));
    if (ds.records[static_cast<std::size_t>(i)].action == ds.records[static_cast<std::size_t>(j)].action) continue;
    pairs.emplace_back(i, j);
  }
  return eval_swap_pairs(model, ds, pairs);
}

std::string to_json(const metrics::SequenceScores& s) { return scores_json(s).dump(); }

std::string to_json(const DisentanglementReport& r) {
  nlohmann::ordered_json j;
  j["n_samples"] = r.n_samples;
  j["accuracy"] = r.accuracy;
  j["intra_entropy"] = r.intra_entropy;
  j["inter_entropy"] = r.inter_entropy;
  j["per_action_accuracy"] = r.per_action_accuracy;
  return j.dump();
}

std::string to_json(const SwapReport& r) {
  nlohmann::ordered_json j;
  j["n_pairs"] = r.pairs.size();
  j["mean"] = r.mean;
  j["p50"] = r.p50;
  j["p90"] = r.p90;
  j["max"] = r.max;
  j["reconstruction_mse"] = r.reconstruction_mse;
  auto& arr = j["pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : r.pairs) {
    arr.push_back({{"first", p.first}, {"second", p.second}, {"mse_first_to_second", p.mse_first_to_second},
                   {"mse_second_to_first", p.mse_second_to_first}});
  }
  return j.dump();
}

}  // namespace hvae::eval
