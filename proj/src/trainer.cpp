#include "hvae/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "hvae/binary.hpp"
#include "hvae/metrics.hpp"

namespace hvae::train {

namespace {

constexpr const char* kAdamM = "adam.m/";
constexpr const char* kAdamV = "adam.v/";
constexpr std::uint64_t kNoiseStream = 0x656c626fULL;

KvDoc state_doc(const TrainState& s) {
  KvDoc doc;
  doc.set("kind", "hvae");
  s.config.write(doc);
  doc.set("state.step", static_cast<long long>(s.step));
  doc.set("state.adam_step", static_cast<long long>(s.adam.step));
  return doc;
}

vae::Model model_from(const io::Checkpoint& ck) {
  if (ck.config.get_or("kind", "hvae") != "hvae") throw FormatError("checkpoint does not hold a sequence model", 0);
  const auto cfg = ModelConfig::read(ck.config);
  nn::ParameterStore<float> params;
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    const auto& name = ck.tensors.names()[i];
    if (name.starts_with("adam.")) continue;
    params.add(name, ck.tensors.tensors()[i]);
  }
  return vae::Model(cfg, std::move(params));
}

}  // namespace

std::string MetricsRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["loss"] = loss;
  j["kl_q"] = kl_q;
  j["kl_p"] = kl_p;
  j["kl_z"] = kl_z;
  j["recon"] = recon;
  j["mse"] = mse;
  j["psnr"] = psnr;
  j["ssim"] = ssim;
  if (wall_time) j["wall_time"] = *wall_time;
  return j.dump();
}

MetricsRecord MetricsRecord::from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  MetricsRecord r;
  r.step = j.at("step").get<std::int64_t>();
  r.loss = j.at("loss");
  r.kl_q = j.at("kl_q");
  r.kl_p = j.at("kl_p");
  r.kl_z = j.at("kl_z");
  r.recon = j.at("recon");
  r.mse = j.at("mse");
  r.psnr = j.at("psnr");
  r.ssim = j.at("ssim");
  if (j.contains("wall_time")) r.wall_time = j.at("wall_time").get<double>();
  return r;
}

TrainState initial_state(const TrainConfig& cfg) {
  cfg.validate();
  return {cfg, vae::Model::init(cfg.model, cfg.seed), {}, 0};
}

void save_state(const std::string& path, const TrainState& s) {
  const auto& params = s.model.parameters();
  nn::ParameterStore<float> all;
  for (std::size_t i = 0; i < params.size(); ++i) all.add(params.names()[i], params.tensors()[i]);
  if (!s.adam.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) all.add(kAdamM + params.names()[i], s.adam.m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) all.add(kAdamV + params.names()[i], s.adam.v[i]);
  }
  io::save_checkpoint(path, state_doc(s), all);
}

TrainState load_state(const std::string& path) {
  const auto ck = io::load_checkpoint(path);
  TrainState s{TrainConfig::read(ck.config), model_from(ck), {}, ck.config.get_i64("state.step", 0)};
  s.adam.step = ck.config.get_i64("state.adam_step", 0);
  const auto& names = s.model.parameters().names();
  if (ck.tensors.contains(kAdamM + names.front())) {
    for (const auto& n : names) s.adam.m.push_back(ck.tensors.get(kAdamM + n));
    for (const auto& n : names) s.adam.v.push_back(ck.tensors.get(kAdamV + n));
  }
  return s;
}

vae::Model load_model(const std::string& path) { return model_from(io::load_checkpoint(path)); }

void save_model(const std::string& path, const vae::Model& model) {
  KvDoc doc;
  doc.set("kind", "hvae");
  model.config().write(doc);
  io::save_checkpoint(path, doc, model.parameters());
}

MetricsRecord train_step(TrainState& s, const synth::SequenceBatch& batch) {
  auto& params = s.model.parameters();
  nn::Graph<float> g;
  const vae::Net<float> net(g, s.model.config(), params, true);
  const Rng noise = Rng(s.config.seed ^ kNoiseStream).split(static_cast<std::uint64_t>(s.step));
  const auto terms = vae::elbo(net, batch.images, batch.labels, noise);
  g.backward(terms.loss);
  nn::adam_step(params.tensors(), net.bound().gradients(g), s.adam, {s.config.lr});
  ++s.step;

  MetricsRecord r;
  r.step = s.step;
  r.loss = g.value(terms.loss)[0];
  r.kl_q = g.value(terms.kl_q)[0];
  r.kl_p = g.value(terms.kl_p)[0];
  r.kl_z = g.value(terms.kl_z)[0];
  r.recon = g.value(terms.recon)[0];
  const auto scores = metrics::score_sequences(g.value(terms.images).reshaped(batch.images.shape()), batch.images);
  r.mse = scores.mean.mse;
  r.psnr = scores.mean.psnr;
  r.ssim = scores.mean.ssim;
  return r;
}

void run(TrainState& s, const synth::Dataset& data, const TrainHooks& hooks) {
  s.config.validate();
  if (data.T != s.model.config().T || data.C != s.model.config().channels || data.H != s.model.config().height ||
      data.W != s.model.config().width || data.K != s.model.config().K) {
    throw ShapeError("train: dataset dimensions do not match the model config");
  }
  synth::BatchStream stream(data, s.config.batch, s.config.seed);
  stream.skip(s.step);
  const auto t0 = std::chrono::steady_clock::now();
  while (s.step < s.config.steps) {
    auto rec = train_step(s, stream.next());
    if (s.config.log_wall_time) {
      rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    if (hooks.on_step) hooks.on_step(rec);
    if (hooks.on_checkpoint && s.config.checkpoint_every > 0 && s.step % s.config.checkpoint_every == 0 &&
        s.step < s.config.steps) {
      hooks.on_checkpoint(s);
    }
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(s);
}

TrainState run_job(const TrainJob& job) {
  const auto data = synth::load_dataset(job.data_path);
  TrainState s = initial_state(job.config);
  if (!job.resume_path.empty()) {
    s = load_state(job.resume_path);
    // Only the horizon may change on resume.
    s.config.steps = job.config.steps;
    s.config.checkpoint_every = job.config.checkpoint_every;
    s.config.log_wall_time = job.config.log_wall_time;
  }
  std::error_code ec;
  std::filesystem::create_directories(job.out_dir, ec);
  if (ec) throw IoError("cannot create " + job.out_dir + ": " + ec.message());
  const auto out = std::filesystem::path(job.out_dir);
  const std::string ckpt = (out / "checkpoint.hvae").string();
  const auto log_path = out / "metrics.jsonl";
  std::string kept;
  if (!job.resume_path.empty() && std::filesystem::exists(log_path)) {
    // Drop records past the checkpoint, e.g. from a run that died between saves.
    std::ifstream in(log_path, std::ios::binary);
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && MetricsRecord::from_json(line).step <= s.step) kept += line + '\n';
    }
  }
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  log << kept;
  if (!log) throw IoError("cannot open " + log_path.string());
  TrainHooks hooks;
  hooks.on_step = [&](const MetricsRecord& r) {
    log << r.to_json() << '\n';
    log.flush();
    if (!log) throw IoError("write failed: " + log_path.string());
  };
  hooks.on_checkpoint = [&](const TrainState& st) { save_state(ckpt, st); };
  run(s, data, hooks);
  return s;
}

}  // namespace hvae::train
