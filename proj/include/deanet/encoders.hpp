#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "deanet/core_types.hpp"

namespace deanet {

/// Five backbone feature maps at scales 1/1 .. 1/16 with doubling widths.
struct EncoderPyramid {
    std::vector<FeatureMap> stages;
};

/// Low-level edge features at 1/4 input resolution.
struct LocalSemanticFeatures {
    FeatureMap f_l;
};

/// Backbone encoder: per stage two (3x3 conv -> batch norm -> ReLU) blocks,
/// 2x2 max pooling between stages. Widths [w, 2w, 4w, 8w, 16w].
struct BackboneEncoderImpl : torch::nn::Module {
    explicit BackboneEncoderImpl(int64_t base_width = 64);

    EncoderPyramid forward(const ImageBatch& batch);
    std::vector<torch::Tensor> forward_tensors(const torch::Tensor& x);

    std::vector<int64_t> stage_widths;
    std::vector<torch::nn::Sequential> blocks;
    torch::nn::MaxPool2d pool{nullptr};
};
TORCH_MODULE(BackboneEncoder);

/// Local semantic-guided encoder: residual-network stem truncated after its
/// stride-4 stage (7x7/2 conv -> max pool -> two basic blocks), projected by
/// a 1x1 conv to `out_channels`.
struct LocalSemanticEncoderImpl : torch::nn::Module {
    explicit LocalSemanticEncoderImpl(int64_t out_channels = 64);

    LocalSemanticFeatures forward(const ImageBatch& batch);
    torch::Tensor forward_tensor(const torch::Tensor& x);

    void freeze();
    bool frozen() const { return frozen_; }

    int64_t out_channels;
    torch::nn::Conv2d conv1{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr};
    torch::nn::MaxPool2d pool{nullptr};
    torch::nn::Sequential layer1{nullptr};
    torch::nn::Conv2d proj{nullptr};

  private:
    bool frozen_ = false;
};
TORCH_MODULE(LocalSemanticEncoder);

/// Loads pre-trained weights into the LD encoder from a torch archive.
/// Throws DataError on a missing or unreadable checkpoint; `required`
/// distinguishes "fall back to random init" from "forbidden by config".
void load_ld_weights(LocalSemanticEncoder& encoder, const std::string& path, bool required);

/// Writes the LD encoder parameters as a loadable checkpoint.
void save_ld_weights(const LocalSemanticEncoder& encoder, const std::string& path);

} // namespace deanet
