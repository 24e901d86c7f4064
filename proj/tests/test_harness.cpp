#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "hvae/binary.hpp"
#include "hvae/classifier.hpp"
#include "hvae/evaluate.hpp"
#include "hvae/image_io.hpp"
#include "hvae/metrics.hpp"
#include "hvae/trainer.hpp"
#include "test_util.hpp"

using namespace hvae;
using nn::Tensor;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("hvae_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor<float> uniform_image(Rng& rng, nn::Shape shape) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform());
  return t;
}

// SSIM of one window position, written straight from the definition.
double ssim_single_window(const Tensor<float>& a, const Tensor<float>& b) {
  const int n = a.dim(1);
  std::vector<double> g(static_cast<std::size_t>(n));
  double total = 0;
  for (int i = 0; i < n; ++i) total += g[static_cast<std::size_t>(i)] = std::exp(-std::pow(i - (n - 1) / 2.0, 2) / (2 * 1.5 * 1.5));
  double out = 0;
  for (int c = 0; c < a.dim(0); ++c) {
    double mx = 0, my = 0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double w = g[static_cast<std::size_t>(y)] * g[static_cast<std::size_t>(x)] / (total * total);
        mx += w * a[static_cast<std::size_t>((c * n + y) * n + x)];
        my += w * b[static_cast<std::size_t>((c * n + y) * n + x)];
      }
    double vx = 0, vy = 0, cxy = 0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double w = g[static_cast<std::size_t>(y)] * g[static_cast<std::size_t>(x)] / (total * total);
        const double dx = a[static_cast<std::size_t>((c * n + y) * n + x)] - mx;
        const double dy = b[static_cast<std::size_t>((c * n + y) * n + x)] - my;
        vx += w * dx * dx;
        vy += w * dy * dy;
        cxy += w * dx * dy;
      }
    const double c1 = 1e-4, c2 = 9e-4;
    out += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return out / a.dim(0);
}

ModelConfig desk_small() {
  ModelConfig c;  // desk defaults with narrower layers to keep tests quick
  c.z_dim = 16;
  c.conv_channels = {8, 16};
  c.trunk_hidden = 64;
  c.h = 64;
  c.head_width = 32;
  c.decoder_hidden = 64;
  return c;
}

std::string slurp(const fs::path& p) { return io::read_file(p.string()); }

}  // namespace

TEST_CASE("metrics closed forms") {
  Rng rng(1);
  const auto a = uniform_image(rng, {3, 16, 16});
  CHECK(metrics::mse(a, a) == 0.0);
  CHECK(metrics::psnr(a, a) == 99.0);
  CHECK(metrics::ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  // an offset of 0.1 everywhere gives MSE 0.01 and PSNR 20 dB
  Tensor<float> x({1, 4, 4}, 0.25f), y({1, 4, 4}, 0.35f);
  CHECK(metrics::mse(x, y) == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(metrics::psnr_from_mse(0.01) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(metrics::psnr_from_mse(1e-12) == 99.0);
  CHECK(metrics::psnr_from_mse(1.0) == doctest::Approx(0.0));

  CHECK_THROWS_AS(metrics::mse(x, a), ShapeError);
  CHECK_THROWS_AS(metrics::ssim(x, a), ShapeError);
  CHECK_THROWS_AS(metrics::ssim(Tensor<float>({16, 16}), Tensor<float>({16, 16})), ShapeError);
}

TEST_CASE("ssim matches the direct formula on a single window") {
  Rng rng(2);
  const auto a = uniform_image(rng, {3, 11, 11});
  const auto b = uniform_image(rng, {3, 11, 11});
  CHECK(metrics::ssim(a, b) == doctest::Approx(ssim_single_window(a, b)).epsilon(1e-10));
  // smaller than the window: the window shrinks to the image
  const auto c = uniform_image(rng, {1, 5, 5});
  const auto d = uniform_image(rng, {1, 5, 5});
  CHECK(metrics::ssim(c, d) == doctest::Approx(ssim_single_window(c, d)).epsilon(1e-10));
}

TEST_CASE("ssim of a test card against its negative is negative") {
  Tensor<float> card({1, 16, 16}), neg({1, 16, 16});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const float v = ((x / 2 + y / 2) % 2) ? 1.0f : 0.0f;
      card[static_cast<std::size_t>(y * 16 + x)] = v;
      neg[static_cast<std::size_t>(y * 16 + x)] = 1.0f - v;
    }
  CHECK(metrics::ssim(card, neg) < 0.0);
}

TEST_CASE("metric sanity on random pairs") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = uniform_image(rng, {3, 12, 12});
    auto b = uniform_image(rng, {3, 12, 12});
    const double m = metrics::mse(a, b), s = metrics::ssim(a, b);
    CHECK(m >= 0);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    CHECK(std::abs(metrics::ssim(a, a) - 1.0) < 1e-9);
    // a single changed pixel already moves SSIM away from 1
    b = a;
    b[5] += 0.1f;
    CHECK(metrics::mse(a, b) > 0);
    CHECK(metrics::ssim(a, b) < 1.0 - 1e-9);
  }
}

TEST_CASE("sequence scores average frames in unit range") {
  Tensor<float> truth({2, 3, 1, 4, 4}, -1.0f), pred({2, 3, 1, 4, 4}, -1.0f);
  // model-space offset 0.2 is 0.1 in [0, 1]
  for (std::size_t i = 0; i < 16; ++i) pred[i] = -0.8f;
  const auto s = metrics::score_sequences(pred, truth);
  REQUIRE(s.per_time.size() == 3u);
  CHECK(s.per_time[0].mse == doctest::Approx(0.005).epsilon(1e-5));
  CHECK(s.per_time[1].mse == 0.0);
  CHECK(s.per_time[1].psnr == 99.0);
  CHECK(s.mean.mse == doctest::Approx(0.005 / 3).epsilon(1e-5));
}

TEST_CASE("ppm quantisation and round trip") {
  CHECK(io::quantize(-1.0f) == 0);
  CHECK(io::quantize(1.0f) == 255);
  CHECK(io::quantize(-7.0f) == 0);
  CHECK(io::quantize(3.0f) == 255);
  CHECK(io::quantize(0.0f) == 128);
  CHECK(io::quantize(std::nanf("")) == 0);
  for (int v = 0; v < 256; ++v) CHECK(io::quantize(io::dequantize(static_cast<std::uint8_t>(v))) == v);

  // one sequence of one frame gives an H x W image
  Rng rng(4);
  const auto seq = hvae::testing::random_tensor<float>(rng, {1, 1, 3, 5, 7}, 0.7);
  const auto grid = io::make_grid(seq);
  CHECK(grid.width == 7);
  CHECK(grid.height == 5);
  const std::string bytes = io::encode_ppm(grid);
  CHECK(bytes.substr(0, 11) == "P6\n7 5\n255\n");
  CHECK(bytes.size() == 11u + 7 * 5 * 3);
  const auto back = io::decode_ppm(bytes);
  CHECK(back == grid);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 7; ++x) {
        CHECK(back.pixels[static_cast<std::size_t>((y * 7 + x) * 3 + c)] ==
              io::quantize(seq[static_cast<std::size_t>((c * 5 + y) * 7 + x)]));
      }

  const auto dir = scratch("ppm");
  io::export_grid(seq, (dir / "g.ppm").string());
  CHECK(io::read_ppm((dir / "g.ppm").string()) == grid);
  fs::remove_all(dir);
}

TEST_CASE("grid tiles rows by sequence and columns by time") {
  Tensor<float> seq({2, 3, 1, 2, 2}, -1.0f);
  seq[static_cast<std::size_t>((1 * 3 + 2) * 4)] = 1.0f;  // sequence 1, frame 2, pixel (0, 0)
  const auto g = io::make_grid(seq);
  CHECK(g.width == 6);
  CHECK(g.height == 4);
  const std::size_t at = (static_cast<std::size_t>(2) * 6 + 4) * 3;
  for (int c = 0; c < 3; ++c) CHECK(g.pixels[at + c] == 255);
  int lit = 0;
  for (const auto v : g.pixels) lit += v == 255;
  CHECK(lit == 3);
  CHECK_THROWS_AS(io::make_grid(Tensor<float>({1, 1, 2, 2, 2})), ShapeError);
}

TEST_CASE("ppm parser rejects malformed files") {
  const io::Rgb8 img{2, 1, {1, 2, 3, 4, 5, 6}};
  const std::string good = io::encode_ppm(img);
  CHECK(io::decode_ppm("P6 # comment\n2 1\n255\n" + good.substr(good.size() - 6)) == img);
  CHECK_THROWS_AS(io::decode_ppm("P5\n2 1\n255\n123456"), FormatError);
  CHECK_THROWS_AS(io::decode_ppm(good.substr(0, good.size() - 1)), FormatError);
  CHECK_THROWS_AS(io::decode_ppm(good + "x"), FormatError);
  CHECK_THROWS_AS(io::decode_ppm("P6\n2 1\n65535\n123456"), FormatError);
  CHECK_THROWS_AS(io::decode_ppm("P6\nx 1\n255\n123456"), FormatError);
}

TEST_CASE("entropies of simple predictors") {
  Tensor<float> uniform({4, 3}, 1.0f / 3);
  CHECK(eval::mean_row_entropy(uniform) == doctest::Approx(std::log(3.0)).epsilon(1e-6));
  CHECK(eval::entropy_of_mean(uniform) == doctest::Approx(std::log(3.0)).epsilon(1e-6));
  // confident and balanced: no per-sample uncertainty, full diversity
  Tensor<float> onehot({3, 3});
  for (int i = 0; i < 3; ++i) onehot[static_cast<std::size_t>(i * 3 + i)] = 1.0f;
  CHECK(eval::mean_row_entropy(onehot) == 0.0);
  CHECK(eval::entropy_of_mean(onehot) == doctest::Approx(std::log(3.0)).epsilon(1e-6));
}

TEST_CASE("action classifier") {
  const auto data = synth::make_datasets(90, 36, 5);
  cls::ClassifierTraining opts;
  opts.seed = 3;
  opts.min_steps = 200;
  cls::ActionClassifier::Report rep;
  const auto c = cls::ActionClassifier::train(data.train, data.eval, opts, &rep);
  CHECK(rep.eval_accuracy >= 0.99);
  // the classifier reproduces its own reported accuracy on the same data
  CHECK(c.accuracy(data.eval) == rep.eval_accuracy);
  const auto again = cls::ActionClassifier::train(data.train, data.eval, opts);
  CHECK(again.parameters() == c.parameters());

  const auto prob = c.predict_proba(data.eval.all().images);
  for (int i = 0; i < prob.dim(0); ++i) {
    double s = 0;
    for (int k = 0; k < 3; ++k) s += prob[static_cast<std::size_t>(i * 3 + k)];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }

  const auto dir = scratch("cls");
  c.save((dir / "c.hvae").string());
  const auto loaded = cls::ActionClassifier::load((dir / "c.hvae").string());
  CHECK(loaded.parameters() == c.parameters());
  CHECK_THROWS_AS(train::load_model((dir / "c.hvae").string()), FormatError);
  fs::remove_all(dir);

  cls::ClassifierTraining hopeless = opts;
  hopeless.accuracy_floor = 1.5;
  hopeless.max_steps = 20;
  hopeless.eval_every = 10;
  CHECK_THROWS_AS(cls::ActionClassifier::train(data.train, data.eval, hopeless), TrainingFailure);

  auto frozen = data.train;
  const std::size_t fsz = static_cast<std::size_t>(frozen.C) * frozen.H * frozen.W;
  for (int t = 1; t < frozen.T; ++t) std::copy_n(frozen.frames.data(), fsz, frozen.frames.data() + t * fsz);
  CHECK_THROWS_AS(cls::ActionClassifier::train(frozen, data.eval, opts), ContractError);
  CHECK_THROWS_AS(c.predict_proba(Tensor<float>({1, 8, 3, 8, 8})), ShapeError);
}

TEST_CASE("metrics records serialise to one JSON line") {
  train::MetricsRecord r;
  r.step = 12;
  r.loss = 1.5;
  r.kl_q = 0.25;
  r.recon = 1.0 / 3;
  r.ssim = 0.875;
  const auto line = r.to_json();
  CHECK(line.find('\n') == std::string::npos);
  CHECK(line.find("wall_time") == std::string::npos);
  const auto back = train::MetricsRecord::from_json(line);
  CHECK(back.step == 12);
  CHECK(back.recon == r.recon);
  CHECK(back.ssim == 0.875);
  r.wall_time = 2.5;
  CHECK(train::MetricsRecord::from_json(r.to_json()).wall_time == 2.5);
}

TEST_CASE("zero steps leave the initialisation untouched") {
  const auto dir = scratch("zero");
  synth::make_dataset_files((dir / "data").string(), 12, 3, 1);
  train::TrainJob job;
  job.config.model = desk_small();
  job.config.steps = 0;
  job.config.seed = 9;
  job.data_path = (dir / "data" / "train.seqd").string();
  job.out_dir = (dir / "run").string();
  train::run_job(job);
  const auto model = train::load_model((dir / "run" / "checkpoint.hvae").string());
  CHECK(model.parameters() == vae::Model::init(job.config.model, 9).parameters());
  CHECK(slurp(dir / "run" / "metrics.jsonl").empty());
  fs::remove_all(dir);
}

TEST_CASE("training is deterministic and resumes exactly") {
  const auto dir = scratch("resume");
  synth::make_dataset_files((dir / "data").string(), 30, 6, 2);
  train::TrainJob job;
  job.config.model = desk_small();
  job.config.steps = 12;
  job.config.seed = 4;
  job.config.lr = 1e-3;
  job.data_path = (dir / "data" / "train.seqd").string();

  job.out_dir = (dir / "a").string();
  train::run_job(job);
  job.out_dir = (dir / "b").string();
  train::run_job(job);
  CHECK(slurp(dir / "a" / "checkpoint.hvae") == slurp(dir / "b" / "checkpoint.hvae"));
  CHECK(slurp(dir / "a" / "metrics.jsonl") == slurp(dir / "b" / "metrics.jsonl"));

  // 5 steps, then resume to 12: same bytes as the straight run
  job.out_dir = (dir / "c").string();
  job.config.steps = 5;
  job.config.checkpoint_every = 2;
  train::run_job(job);
  const auto mid = train::load_state((dir / "c" / "checkpoint.hvae").string());
  CHECK(mid.step == 5);
  CHECK(mid.adam.step == 5);
  job.config.steps = 12;
  job.config.checkpoint_every = 0;
  job.resume_path = (dir / "c" / "checkpoint.hvae").string();
  const auto fin = train::run_job(job);
  CHECK(fin.step == 12);
  CHECK(slurp(dir / "c" / "checkpoint.hvae") == slurp(dir / "a" / "checkpoint.hvae"));
  CHECK(slurp(dir / "c" / "metrics.jsonl") == slurp(dir / "a" / "metrics.jsonl"));

  std::istringstream lines(slurp(dir / "c" / "metrics.jsonl"));
  std::int64_t expect = 1;
  for (std::string line; std::getline(lines, line); ++expect) CHECK(train::MetricsRecord::from_json(line).step == expect);
  CHECK(expect == 13);
  fs::remove_all(dir);
}

TEST_CASE("resume drops log records past the checkpoint") {
  const auto dir = scratch("trim");
  synth::make_dataset_files((dir / "data").string(), 12, 3, 3);
  train::TrainJob job;
  job.config.model = desk_small();
  job.config.steps = 4;
  job.data_path = (dir / "data" / "train.seqd").string();
  job.out_dir = (dir / "run").string();
  train::run_job(job);
  // pretend a later run logged steps 5 and 6 and died before saving
  const std::string ckpt = (dir / "run" / "checkpoint.hvae").string();
  const std::string kept = slurp(dir / "run" / "metrics.jsonl");
  {
    std::ofstream log(dir / "run" / "metrics.jsonl", std::ios::app);
    train::MetricsRecord r;
    r.step = 5;
    log << r.to_json() << '\n';
    r.step = 6;
    log << r.to_json() << '\n';
  }
  job.resume_path = ckpt;
  job.config.steps = 4;
  train::run_job(job);
  CHECK(slurp(dir / "run" / "metrics.jsonl") == kept);
  fs::remove_all(dir);
}

TEST_CASE("two hundred desk steps lower the ELBO") {
  const auto data = synth::make_datasets(360, 0, 7);
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.seed = 1;
  auto st = train::initial_state(cfg);
  std::vector<double> loss;
  train::run(st, data.train, {[&](const train::MetricsRecord& r) { loss.push_back(r.loss); }, {}});
  REQUIRE(loss.size() == 200u);
  double early = 0, late = 0;
  for (int i = 0; i < 50; ++i) early += loss[static_cast<std::size_t>(i)];
  for (int i = 150; i < 200; ++i) late += loss[static_cast<std::size_t>(i)];
  CHECK(late < early);
}

TEST_CASE("evaluation reports on an untrained model") {
  const auto data = synth::make_datasets(30, 12, 8);
  const auto model = vae::Model::init(desk_small(), 2);

  // swapping a sequence with itself reproduces its reconstruction error
  const auto self = eval::eval_swap_pairs(model, data.eval, {{0, 0}, {5, 5}});
  const auto rec0 = model.reconstruct(data.eval.batch({0}).images, {data.eval.records[0].action}, 4);
  CHECK(self.pairs[0].mse_first_to_second == doctest::Approx(metrics::mse(metrics::to_unit(rec0), metrics::to_unit(data.eval.batch({0}).images))).epsilon(1e-9));
  CHECK(self.pairs[0].mse_first_to_second == self.pairs[0].mse_second_to_first);

  const auto rep = eval::eval_swap_fidelity(model, data.eval, 7, 3);
  REQUIRE(rep.pairs.size() == 7u);
  for (const auto& p : rep.pairs) {
    CHECK(data.eval.records[static_cast<std::size_t>(p.first)].action !=
          data.eval.records[static_cast<std::size_t>(p.second)].action);
  }
  CHECK(rep.p50 <= rep.p90);
  CHECK(rep.p90 <= rep.max);
  CHECK(rep.reconstruction_mse == doctest::Approx(eval::reconstruction_scores(model, data.eval).mean.mse));

  const auto roll = eval::rollout_scores(model, data.eval, 16);
  CHECK(roll.per_time.size() == 16u);

  const auto c = cls::ActionClassifier::init({}, 6);
  const auto d = eval::eval_disentanglement(model, c, data.eval, 30, 1);
  CHECK(d.n_samples == 30);
  CHECK(d.per_action_accuracy.size() == 3u);
  CHECK(d.accuracy >= 0.0);
  CHECK(d.accuracy <= 1.0);
  CHECK(d.inter_entropy <= std::log(3.0) + 1e-9);
  CHECK(d.intra_entropy <= d.inter_entropy + 1e-9);  // concavity of entropy
  CHECK(eval::eval_disentanglement(model, c, data.eval, 30, 1).accuracy == d.accuracy);
}

TEST_CASE("ground truth continues the periodic sequence") {
  const auto data = synth::make_datasets(9, 0, 2);
  const auto truth = eval::render_truth(data.train, {0, 4}, 16);
  CHECK(truth.shape() == nn::Shape{2, 16, 3, 16, 16});
  const std::size_t fsz = 3 * 16 * 16, seq = 8 * fsz;
  const auto orig = data.train.sequence(4);
  for (std::size_t j = 0; j < seq; ++j) {
    CHECK(truth[16 * fsz + j] == orig[j]);
    CHECK(truth[16 * fsz + seq + j] == orig[j]);
  }
}
