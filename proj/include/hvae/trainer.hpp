#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "hvae/checkpoint.hpp"
#include "hvae/config.hpp"
#include "hvae/model.hpp"
#include "hvae/optim.hpp"
#include "hvae/synthworld.hpp"

namespace hvae::train {

struct MetricsRecord {
  std::int64_t step = 0;  ///< completed optimiser steps, starting at 1
  double loss = 0, kl_q = 0, kl_p = 0, kl_z = 0, recon = 0;
  double mse = 0, psnr = 0, ssim = 0;  ///< batch reconstruction, per frame
  std::optional<double> wall_time;

  std::string to_json() const;
  static MetricsRecord from_json(const std::string& line);
};

struct TrainState {
  TrainConfig config;
  vae::Model model;
  nn::AdamState<float> adam;
  std::int64_t step = 0;
};

TrainState initial_state(const TrainConfig& cfg);

/// Model parameters plus Adam moments ("adam.m/<name>", "adam.v/<name>")
/// and the step counters, so a resumed run continues exactly.
void save_state(const std::string& path, const TrainState& state);
TrainState load_state(const std::string& path);

/// Loads the model part of any training checkpoint.
vae::Model load_model(const std::string& path);
void save_model(const std::string& path, const vae::Model& model);

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_step;
  std::function<void(const TrainState&)> on_checkpoint;
};

/// One optimiser step on a batch; returns its metrics.
MetricsRecord train_step(TrainState& state, const synth::SequenceBatch& batch);

/// Steps until state.step == state.config.steps. The minibatch order and the
/// per-step noise depend only on the seed and the step index.
void run(TrainState& state, const synth::Dataset& data, const TrainHooks& hooks = {});

/// Command-line style driver: trains into <out_dir>/checkpoint.hvae and
/// appends to <out_dir>/metrics.jsonl. A resume path continues that run.
struct TrainJob {
  TrainConfig config;
  std::string data_path;
  std::string out_dir;
  std::string resume_path;
};
TrainState run_job(const TrainJob& job);

}  // namespace hvae::train
