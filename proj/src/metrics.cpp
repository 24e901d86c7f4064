#include "hvae/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "hvae/error.hpp"

namespace hvae::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_window(int size) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < size; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * kSigma * kSigma));
    total += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= total;
  return w;
}

void require_same(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + nn::shape_str(a.shape()) + " and " + nn::shape_str(b.shape()));
  }
}

Tensor<float> frame_of(const Tensor<float>& x, int n, int t) {
  const int c = x.dim(2), h = x.dim(3), w = x.dim(4);
  const std::size_t fsz = static_cast<std::size_t>(c) * h * w;
  const auto* p = x.data() + (static_cast<std::size_t>(n) * x.dim(1) + t) * fsz;
  return Tensor<float>({c, h, w}, std::vector<float>(p, p + fsz));
}

}  // namespace

Tensor<float> to_unit(const Tensor<float>& x) {
  Tensor<float> out = x;
  for (auto& v : out.values()) v = (v + 1.0f) * 0.5f;
  return out;
}

double mse(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("mse: size mismatch");
  if (a.empty()) throw ShapeError("mse: empty input");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double mse(const Tensor<float>& a, const Tensor<float>& b) {
  require_same(a, b, "mse");
  return mse(a.values(), b.values());
}

double psnr_from_mse(double m) {
  if (m <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double psnr(const Tensor<float>& a, const Tensor<float>& b) { return psnr_from_mse(mse(a, b)); }

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
  require_same(a, b, "ssim");
  if (a.rank() != 3) throw ShapeError("ssim: expected [C, H, W]");
  const int channels = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (channels < 1 || h < 1 || w < 1) throw ShapeError("ssim: empty image");
  const int wh = std::min(kWindow, h), ww = std::min(kWindow, w);
  const auto gy = gaussian_window(wh), gx = gaussian_window(ww);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  double total = 0;
  for (int c = 0; c < channels; ++c) {
    const float* x = a.data() + c * plane;
    const float* y = b.data() + c * plane;
    double acc = 0;
    int count = 0;
    for (int i = 0; i + wh <= h; ++i) {
      for (int j = 0; j + ww <= w; ++j) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int u = 0; u < wh; ++u) {
          for (int v = 0; v < ww; ++v) {
            const double g = gy[static_cast<std::size_t>(u)] * gx[static_cast<std::size_t>(v)];
            const std::size_t at = static_cast<std::size_t>(i + u) * w + (j + v);
            const double p = x[at], q = y[at];
            mx += g * p;
            my += g * q;
            xx += g * p * p;
            yy += g * q * q;
            xy += g * p * q;
          }
        }
        const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
        acc += ((2 * mx * my + kC1) * (2 * cxy + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
        ++count;
      }
    }
    total += acc / count;
  }
  return total / channels;
}

FrameScores score_frame(const Tensor<float>& a, const Tensor<float>& b) {
  const double m = mse(a, b);
  return {m, psnr_from_mse(m), ssim(a, b)};
}

SequenceScores score_sequences(const Tensor<float>& pred, const Tensor<float>& truth) {
  require_same(pred, truth, "score_sequences");
  if (pred.rank() != 5) throw ShapeError("score_sequences: expected [N, T, C, H, W]");
  const int n = pred.dim(0), len = pred.dim(1);
  if (n < 1 || len < 1) throw ShapeError("score_sequences: empty batch");
  const auto up = to_unit(pred), ut = to_unit(truth);
  SequenceScores out;
  out.per_time.resize(static_cast<std::size_t>(len));
  for (int t = 0; t < len; ++t) {
    auto& slot = out.per_time[static_cast<std::size_t>(t)];
    for (int i = 0; i < n; ++i) {
      const auto s = score_frame(frame_of(up, i, t), frame_of(ut, i, t));
      slot.mse += s.mse / n;
      slot.psnr += s.psnr / n;
      slot.ssim += s.ssim / n;
    }
    out.mean.mse += slot.mse / len;
    out.mean.psnr += slot.psnr / len;
    out.mean.ssim += slot.ssim / len;
  }
  return out;
}

}  // namespace hvae::metrics
