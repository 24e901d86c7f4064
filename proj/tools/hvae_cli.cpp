#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "hvae/binary.hpp"
#include "hvae/checkpoint.hpp"
#include "hvae/classifier.hpp"
#include "hvae/evaluate.hpp"
#include "hvae/image_io.hpp"
#include "hvae/trainer.hpp"

using namespace hvae;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--seed", c.seed, "Seed for every random draw");
  cmd->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  auto* o = cmd->add_option("--out", c.out, "Output path");
  if (out_required) o->required();
}

KvDoc config_doc(const Common& c) { return c.config.empty() ? KvDoc{} : KvDoc::load(c.config); }

void write_text(const std::string& path, const std::string& text) {
  io::write_file(path, text);
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::vector<int> first_n(const synth::Dataset& ds, int n) {
  std::vector<int> idx;
  for (int i = 0; i < std::min(n, ds.size()); ++i) idx.push_back(i);
  return idx;
}

nn::Tensor<float> stack(const std::vector<nn::Tensor<float>>& parts) {
  // Concatenates [n_i, T, C, H, W] along the first axis.
  nn::Shape shape = parts.front().shape();
  shape[0] = 0;
  for (const auto& p : parts) shape[0] += p.dim(0);
  nn::Tensor<float> out(shape);
  std::size_t at = 0;
  for (const auto& p : parts) {
    if (p.rank() != 5 || p.dim(1) != shape[1]) throw ShapeError("grid rows need equal lengths");
    std::copy(p.values().begin(), p.values().end(), out.data() + at);
    at += p.size();
  }
  return out;
}

nn::Tensor<float> rows_of(const nn::Tensor<float>& x, int i) {
  nn::Shape shape = x.shape();
  shape[0] = 1;
  const std::size_t n = x.size() / x.dim(0);
  return nn::Tensor<float>(shape, std::vector<float>(x.data() + i * n, x.data() + (i + 1) * n));
}

nlohmann::ordered_json residual_json(const symplectic::OperatorResiduals& r) {
  return {{"algebra", r.algebra}, {"trace", r.trace}, {"group", r.group}, {"volume", r.volume},
          {"reversibility", r.reversibility}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hamiltonian sequence VAE on a synthetic moving-shapes world"};
  app.require_subcommand(1);

  // gen-data
  Common gd;
  int n_train = 360, n_eval = 72;
  synth::WorldConfig world;
  auto* gen_data = app.add_subcommand("gen-data", "Render train.seqd and eval.seqd");
  add_common(gen_data, gd, true);
  gen_data->add_option("--train", n_train, "Training sequences");
  gen_data->add_option("--eval", n_eval, "Evaluation sequences");
  gen_data->add_option("--res", world.res, "Image side in pixels");
  gen_data->add_option("--T", world.T, "Sequence length and period");
  gen_data->add_option("--K", world.K, "Number of actions (1-3)");

  // train
  Common tr;
  std::string data, resume;
  std::optional<int> steps, batch, ckpt_every;
  std::optional<double> lr;
  bool wall_time = false;
  auto* train = app.add_subcommand("train", "Train the model; writes checkpoint.hvae and metrics.jsonl");
  add_common(train, tr, true);
  train->add_option("--data", data, "Training SEQD file")->required()->check(CLI::ExistingFile);
  train->add_option("--steps", steps, "Total optimiser steps");
  train->add_option("--lr", lr, "Adam learning rate");
  train->add_option("--batch", batch, "Sequences per step");
  train->add_option("--checkpoint-every", ckpt_every, "Intermediate checkpoint interval");
  train->add_option("--resume", resume, "Continue from a training checkpoint")->check(CLI::ExistingFile);
  train->add_flag("--wall-time", wall_time, "Log elapsed seconds (breaks byte-identical logs)");

  // model consumers
  std::string ckpt;
  Common rc;
  int n_show = 8, t_ref = 0;
  auto* reconstruct = app.add_subcommand("reconstruct", "Grid of sequences and their reconstructions");
  add_common(reconstruct, rc, true);
  reconstruct->add_option("--ckpt", ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  reconstruct->add_option("--data", data, "SEQD file")->required()->check(CLI::ExistingFile);
  reconstruct->add_option("--n", n_show, "Sequences to show");
  reconstruct->add_option("--t-ref", t_ref, "Reference frame (default T/2)");

  Common ge;
  int action = -1, n_gen = 4, length = 0;
  auto* generate = app.add_subcommand("generate", "Sample sequences from the prior");
  add_common(generate, ge, true);
  generate->add_option("--ckpt", ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  generate->add_option("--action", action, "Action index (default: every action)");
  generate->add_option("--n", n_gen, "Sequences per action");
  generate->add_option("--len", length, "Frames per sequence (default T)");

  Common is;
  int index = 0;
  auto* img2seq = app.add_subcommand("img2seq", "Unroll every action from one frame");
  add_common(img2seq, is, true);
  img2seq->add_option("--ckpt", ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  img2seq->add_option("--data", data, "SEQD file")->required()->check(CLI::ExistingFile);
  img2seq->add_option("--index", index, "Sequence whose first frame is used");
  img2seq->add_option("--len", length, "Frames to unroll (default 2T)");

  Common sw;
  int first = 0, second = -1;
  auto* swap = app.add_subcommand("swap", "Exchange motion between two sequences");
  add_common(swap, sw, true);
  swap->add_option("--ckpt", ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  swap->add_option("--data", data, "SEQD file")->required()->check(CLI::ExistingFile);
  swap->add_option("--first", first, "First sequence");
  swap->add_option("--second", second, "Second sequence (default: first one with another action)");

  Common ev;
  std::string classifier_path, train_data;
  int n_samples = 300, n_pairs = 100;
  auto* evaluate = app.add_subcommand("eval", "Reconstruction, rollout, disentanglement and swap report (JSON)");
  add_common(evaluate, ev, false);
  evaluate->add_option("--ckpt", ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--data", data, "Evaluation SEQD file")->required()->check(CLI::ExistingFile);
  auto* cls_opt = evaluate->add_option("--classifier", classifier_path, "Classifier checkpoint")->check(CLI::ExistingFile);
  evaluate->add_option("--train-data", train_data, "Train a classifier on this SEQD file first")
      ->check(CLI::ExistingFile)
      ->excludes(cls_opt);
  evaluate->add_option("--samples", n_samples, "Generated sequences for the classifier");
  evaluate->add_option("--pairs", n_pairs, "Cross-action swap pairs");
  evaluate->add_option("--len", length, "Rollout length (default 2T)");

  Common co;
  double t_op = 1.0;
  auto* check = app.add_subcommand("check-operator", "Invariant residuals of each learned generator");
  add_common(check, co, false);
  check->add_option("--ckpt", ckpt, "Model checkpoint (default: fresh initialisation)")->check(CLI::ExistingFile);
  check->add_option("--t", t_op, "Flow time");

  Common tc;
  std::string eval_data;
  auto* train_cls = app.add_subcommand("train-classifier", "Fit the action classifier used by eval");
  add_common(train_cls, tc, true);
  train_cls->add_option("--data", data, "Training SEQD file")->required()->check(CLI::ExistingFile);
  train_cls->add_option("--eval-data", eval_data, "Held-out SEQD file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (*gen_data) {
      const KvDoc doc = config_doc(gd);
      auto set_if = [&](const char* key, int& v, const std::string& flag) {
        if (gen_data->count(flag) == 0) v = doc.get_int(key, v);
      };
      set_if("data.train", n_train, "--train");
      set_if("data.eval", n_eval, "--eval");
      set_if("data.res", world.res, "--res");
      set_if("data.T", world.T, "--T");
      set_if("data.K", world.K, "--K");
      synth::make_dataset_files(gd.out, n_train, n_eval, gd.seed, world);
      std::cout << "wrote " << (fs::path(gd.out) / "train.seqd").string() << " (" << n_train << ") and "
                << (fs::path(gd.out) / "eval.seqd").string() << " (" << n_eval << ")\n";
    } else if (*train) {
      const auto ds = synth::load_dataset(data);
      KvDoc doc = config_doc(tr);
      // Image and action sizes follow the data unless the config says otherwise.
      for (const auto& [key, v] : {std::pair{"model.T", ds.T}, {"model.K", ds.K}, {"model.channels", ds.C},
                                   {"model.height", ds.H}, {"model.width", ds.W}}) {
        if (!doc.contains(key)) doc.set(key, v);
      }
      train::TrainJob job;
      job.config = TrainConfig::read(doc);
      if (train->count("--seed")) job.config.seed = tr.seed;
      if (steps) job.config.steps = *steps;
      if (lr) job.config.lr = *lr;
      if (batch) job.config.batch = *batch;
      if (ckpt_every) job.config.checkpoint_every = *ckpt_every;
      if (wall_time) job.config.log_wall_time = true;
      job.config.validate();
      job.data_path = data;
      job.out_dir = tr.out;
      job.resume_path = resume;
      const auto st = train::run_job(job);
      std::cout << "trained to step " << st.step << "; checkpoint " << (fs::path(tr.out) / "checkpoint.hvae").string()
                << "\n";
    } else if (*reconstruct) {
      const auto model = train::load_model(ckpt);
      const auto ds = synth::load_dataset(data);
      const auto b = ds.batch(first_n(ds, n_show));
      const int tr_ = t_ref > 0 ? t_ref : eval::eval_t_ref(model.config());
      const auto rec = model.reconstruct(b.images, b.labels, tr_);
      std::vector<nn::Tensor<float>> rows;
      for (int i = 0; i < b.size(); ++i) {
        rows.push_back(rows_of(b.images, i));
        rows.push_back(rows_of(rec, i));
      }
      ensure_parent(rc.out);
      io::export_grid(stack(rows), rc.out);
      const auto s = metrics::score_sequences(rec, b.images);
      std::cout << "mse " << s.mean.mse << " psnr " << s.mean.psnr << " ssim " << s.mean.ssim << "\n";
    } else if (*generate) {
      const auto model = train::load_model(ckpt);
      const int len = length > 0 ? length : model.config().T;
      std::vector<nn::Tensor<float>> rows;
      for (int k = 0; k < model.config().K; ++k) {
        if (action >= 0 && k != action) continue;
        rows.push_back(model.generate(k, n_gen, len, ge.seed + static_cast<std::uint64_t>(k)));
      }
      if (rows.empty()) throw LabelError("generate: action out of range");
      ensure_parent(ge.out);
      io::export_grid(stack(rows), ge.out);
      std::cout << "wrote " << stack(rows).dim(0) << " sequences of " << len << " frames to " << ge.out << "\n";
    } else if (*img2seq) {
      const auto model = train::load_model(ckpt);
      const auto ds = synth::load_dataset(data);
      const int len = length > 0 ? length : 2 * model.config().T;
      const auto frame = ds.sequence(index);
      nn::Tensor<float> x({1, ds.C, ds.H, ds.W}, std::vector<float>(frame.data(), frame.data() + ds.C * ds.H * ds.W));
      std::vector<nn::Tensor<float>> rows;
      for (int k = 0; k < model.config().K; ++k) rows.push_back(model.image_to_sequence(x, k, len));
      ensure_parent(is.out);
      io::export_grid(stack(rows), is.out);
      std::cout << "wrote " << rows.size() << " sequences of " << len << " frames to " << is.out << "\n";
    } else if (*swap) {
      const auto model = train::load_model(ckpt);
      const auto ds = synth::load_dataset(data);
      if (second < 0) {
        for (int j = 0; j < ds.size() && second < 0; ++j)
          if (ds.records.at(static_cast<std::size_t>(j)).action != ds.records.at(static_cast<std::size_t>(first)).action) second = j;
        if (second < 0) second = first;
      }
      const auto b1 = ds.batch({first}), b2 = ds.batch({second});
      const auto out = model.motion_swap(b1.images, b1.labels, b2.images, b2.labels, eval::eval_t_ref(model.config()));
      ensure_parent(sw.out);
      io::export_grid(stack({b1.images, b2.images, out.first_to_second, out.second_to_first}), sw.out);
      const auto rep = eval::eval_swap_pairs(model, ds, {{first, second}});
      std::cout << "swap " << first << " <-> " << second << ": mse " << rep.pairs[0].mse_first_to_second << " / "
                << rep.pairs[0].mse_second_to_first << "\n";
    } else if (*evaluate) {
      const auto model = train::load_model(ckpt);
      const auto ds = synth::load_dataset(data);
      const int len = length > 0 ? length : 2 * model.config().T;
      nlohmann::ordered_json j;
      j["reconstruction"] = nlohmann::json::parse(eval::to_json(eval::reconstruction_scores(model, ds)));
      j["rollout"] = nlohmann::json::parse(eval::to_json(eval::rollout_scores(model, ds, len)));
      std::optional<cls::ActionClassifier> classifier;
      if (!classifier_path.empty()) {
        classifier = cls::ActionClassifier::load(classifier_path);
      } else if (!train_data.empty()) {
        cls::ClassifierTraining opts;
        opts.seed = ev.seed;
        classifier = cls::ActionClassifier::train(synth::load_dataset(train_data), ds, opts);
      }
      if (classifier) {
        j["classifier_accuracy"] = classifier->accuracy(ds);
        j["disentanglement"] = nlohmann::json::parse(
            eval::to_json(eval::eval_disentanglement(model, *classifier, ds, n_samples, ev.seed)));
      }
      j["swap"] = nlohmann::json::parse(eval::to_json(eval::eval_swap_fidelity(model, ds, n_pairs, ev.seed)));
      const std::string text = j.dump(2) + "\n";
      if (!ev.out.empty()) {
        ensure_parent(ev.out);
        write_text(ev.out, text);
      }
      std::cout << text;
    } else if (*check) {
      const vae::Model model = [&] {
        if (!ckpt.empty()) return train::load_model(ckpt);
        TrainConfig cfg = TrainConfig::read(config_doc(co));
        return vae::Model::init(cfg.model, co.seed);
      }();
      nlohmann::ordered_json j;
      j["t"] = t_op;
      double worst = 0;
      for (int k = 0; k < model.config().K; ++k) {
        const auto r = symplectic::residuals(model.hamiltonian(k), t_op);
        worst = std::max(worst, r.group);
        j["actions"].push_back(residual_json(r));
      }
      j["max_symplecticity_residual"] = worst;
      const std::string text = j.dump(2) + "\n";
      if (!co.out.empty()) {
        ensure_parent(co.out);
        write_text(co.out, text);
      }
      std::cout << text;
    } else if (*train_cls) {
      cls::ClassifierTraining opts;
      opts.seed = tc.seed;
      cls::ActionClassifier::Report rep;
      const auto c = cls::ActionClassifier::train(synth::load_dataset(data), synth::load_dataset(eval_data), opts, &rep);
      ensure_parent(tc.out);
      c.save(tc.out);
      std::cout << "classifier eval accuracy " << rep.eval_accuracy << " after " << rep.steps << " steps\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
