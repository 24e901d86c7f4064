#pragma once

#include <span>
#include <vector>

#include "hvae/tensor.hpp"

namespace hvae::metrics {

using nn::Tensor;

constexpr double kPsnrCap = 99.0;

/// Maps model space [-1, 1] to [0, 1].
Tensor<float> to_unit(const Tensor<float>& x);

/// Inputs in [0, 1]; shapes must agree.
double mse(std::span<const float> a, std::span<const float> b);
double mse(const Tensor<float>& a, const Tensor<float>& b);
/// 10 log10(1 / mse), capped at 99 for exact matches.
double psnr_from_mse(double mse);
double psnr(const Tensor<float>& a, const Tensor<float>& b);
/// Channel-averaged SSIM of [C, H, W] images in [0, 1]: Gaussian 11x11
/// window with sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, over the valid region.
/// Images smaller than the window use a window cropped to fit.
double ssim(const Tensor<float>& a, const Tensor<float>& b);

struct FrameScores {
  double mse = 0, psnr = 0, ssim = 0;
};

FrameScores score_frame(const Tensor<float>& a, const Tensor<float>& b);

struct SequenceScores {
  std::vector<FrameScores> per_time;  ///< averaged over sequences
  FrameScores mean;                   ///< averaged over every frame
};

/// pred and truth [N, T, C, H, W] in model space [-1, 1].
SequenceScores score_sequences(const Tensor<float>& pred, const Tensor<float>& truth);

}  // namespace hvae::metrics
