#include "chroma/tensor_image.hpp"

#include <stdexcept>

namespace chroma {

torch::Tensor image_to_tensor(const RgbImage& img) {
    auto hwc = torch::from_blob(const_cast<float*>(img.pixels.data()), {img.height, img.width, 3}, torch::kFloat32);
    return hwc.permute({2, 0, 1}).mul(2.0).sub(1.0).contiguous();
}

torch::Tensor images_to_batch(const std::vector<RgbImage>& imgs) {
    std::vector<torch::Tensor> ts;
    ts.reserve(imgs.size());
    for (const auto& img : imgs) ts.push_back(image_to_tensor(img));
    return torch::stack(ts);
}

RgbImage tensor_to_image(const torch::Tensor& t) {
    torch::Tensor x = t.detach().to(torch::kCPU, torch::kFloat32);
    if (x.dim() == 4) {
        if (x.size(0) != 1) throw std::invalid_argument("tensor_to_image: expected a single image");
        x = x[0];
    }
    if (x.dim() != 3 || x.size(0) != 3) throw std::invalid_argument("tensor_to_image: expected [3,H,W]");
    x = x.add(1.0).mul(0.5).clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
    RgbImage img(static_cast<int>(x.size(0)), static_cast<int>(x.size(1)));
    std::copy(x.data_ptr<float>(), x.data_ptr<float>() + x.numel(), img.pixels.begin());
    return img;
}

std::vector<RgbImage> batch_to_images(const torch::Tensor& t) {
    std::vector<RgbImage> out;
    for (int64_t i = 0; i < t.size(0); ++i) out.push_back(tensor_to_image(t[i]));
    return out;
}

torch::Tensor plane_to_tensor(const GrayImage& g) {
    return torch::from_blob(const_cast<float*>(g.values.data()), {1, g.height, g.width}, torch::kFloat32).clone();
}

GrayImage tensor_to_plane(const torch::Tensor& t) {
    torch::Tensor x = t.detach().to(torch::kCPU, torch::kFloat32).squeeze().contiguous();
    if (x.dim() != 2) throw std::invalid_argument("tensor_to_plane: expected a single plane");
    GrayImage g(static_cast<int>(x.size(0)), static_cast<int>(x.size(1)));
    std::copy(x.data_ptr<float>(), x.data_ptr<float>() + x.numel(), g.values.begin());
    return g;
}

}  // namespace chroma
