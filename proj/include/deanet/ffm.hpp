#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "deanet/core_types.hpp"

namespace deanet {

struct FfmConfig {
    std::array<int64_t, 4> dilation_rates{1, 2, 4, 8};
    int64_t out_channels = 0;

    /// Throws ConfigError unless rates are strictly increasing with rate[0] == 1.
    void validate() const;
};

/// LD-only skip fusion (also the "+LD" ablation row): resize f_l to f_h's
/// grid, 1x1-project to f_h's width, concatenate, 1x1-project back.
struct LevelFusionImpl : torch::nn::Module {
    LevelFusionImpl(int64_t ld_channels, int64_t backbone_channels);

    torch::Tensor forward(const torch::Tensor& f_l, const torch::Tensor& f_h);

    torch::nn::Conv2d ld_proj{nullptr};
    torch::nn::Conv2d fuse_proj{nullptr};
};
TORCH_MODULE(LevelFusion);

/// Feature Fusion Module: fuses LD low-level features with one backbone
/// stage via channel attention, a cascade of dilated convolutions and a
/// residual projection.
struct FeatureFusionImpl : torch::nn::Module {
    FeatureFusionImpl(int64_t ld_channels, int64_t backbone_channels, FfmConfig cfg = {});

    /// F_h'.
    torch::Tensor fuse_levels(const torch::Tensor& f_l, const torch::Tensor& f_h);

    /// F_a = F_h' * sigmoid(conv1x1(global_avg_pool(F_h'))).
    torch::Tensor channel_attention(const torch::Tensor& f_h_prime);

    /// F_i from dilated 3x3 convs; F_1' = F_1, F_i' = F_{i-1} + F_i (raw
    /// previous branch) for i in [2,4].
    std::vector<torch::Tensor> multiscale_cascade(const torch::Tensor& f_h_prime);

    /// F_m = relu(conv1x1(cat(F_1'..F_4', F_a))) + conv1x1(F_h').
    torch::Tensor forward(const torch::Tensor& f_l, const torch::Tensor& f_h);

    FeatureMap forward(const FeatureMap& f_l, const FeatureMap& f_h);

    FfmConfig cfg;
    LevelFusion fuse{nullptr};
    torch::nn::Conv2d attention_conv{nullptr};
    std::vector<torch::nn::Conv2d> branch_convs;
    torch::nn::Conv2d fusion_conv{nullptr};   // 5C -> C
    torch::nn::Conv2d residual_proj{nullptr}; // G in the residual term
};
TORCH_MODULE(FeatureFusion);

} // namespace deanet
