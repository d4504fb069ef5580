#pragma once

#include <vector>

#include <torch/torch.h>

#include "chroma/color_math.hpp"

namespace chroma {

/// [3,H,W] float tensor scaled to [-1,1].
torch::Tensor image_to_tensor(const RgbImage& img);
torch::Tensor images_to_batch(const std::vector<RgbImage>& imgs);

/// Accepts [3,H,W] or [1,3,H,W] in [-1,1]; clamps into [0,1].
RgbImage tensor_to_image(const torch::Tensor& t);
std::vector<RgbImage> batch_to_images(const torch::Tensor& t);

/// [1,H,W] tensor with values as stored.
torch::Tensor plane_to_tensor(const GrayImage& g);
GrayImage tensor_to_plane(const torch::Tensor& t);

}  // namespace chroma
