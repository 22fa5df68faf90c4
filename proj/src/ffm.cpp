#include "deanet/ffm.hpp"

namespace deanet {

namespace F = torch::nn::functional;

void FfmConfig::validate() const {
    if (dilation_rates[0] != 1) {
        throw ConfigError("ffm dilation_rates[0] must be 1");
    }
    for (size_t i = 1; i < dilation_rates.size(); ++i) {
        if (dilation_rates[i] <= dilation_rates[i - 1]) {
            throw ConfigError("ffm dilation_rates must be strictly increasing");
        }
    }
}

LevelFusionImpl::LevelFusionImpl(int64_t ld_channels, int64_t backbone_channels) {
    using namespace torch::nn;
    ld_proj = register_module("ld_proj",
                              Conv2d(Conv2dOptions(ld_channels, backbone_channels, 1)));
    fuse_proj = register_module(
        "fuse_proj", Conv2d(Conv2dOptions(backbone_channels * 2, backbone_channels, 1)));
}

torch::Tensor LevelFusionImpl::forward(const torch::Tensor& f_l, const torch::Tensor& f_h) {
    if (f_l.size(0) != f_h.size(0)) {
        throw ShapeError("fuse_levels batch-size mismatch: " + std::to_string(f_l.size(0)) +
                         " vs " + std::to_string(f_h.size(0)));
    }
    auto resized = f_l;
    if (f_l.size(2) != f_h.size(2) || f_l.size(3) != f_h.size(3)) {
        resized = F::interpolate(f_l, F::InterpolateFuncOptions()
                                          .size(std::vector<int64_t>{f_h.size(2), f_h.size(3)})
                                          .mode(torch::kBilinear)
                                          .align_corners(false));
    }
    auto projected = ld_proj->forward(resized);
    return fuse_proj->forward(torch::cat({projected, f_h}, 1));
}

FeatureFusionImpl::FeatureFusionImpl(int64_t ld_channels, int64_t backbone_channels,
                                     FfmConfig cfg_)
    : cfg(cfg_) {
    using namespace torch::nn;
    cfg.out_channels = backbone_channels;
    cfg.validate();
    fuse = register_module("fuse", LevelFusion(ld_channels, backbone_channels));
    attention_conv = register_module(
        "attention_conv", Conv2d(Conv2dOptions(backbone_channels, backbone_channels, 1)));
    for (size_t i = 0; i < cfg.dilation_rates.size(); ++i) {
        const int64_t rate = cfg.dilation_rates[i];
        branch_convs.push_back(Conv2d(Conv2dOptions(backbone_channels, backbone_channels, 3)
                                          .padding(rate)
                                          .dilation(rate)));
        register_module("branch" + std::to_string(i + 1), branch_convs.back());
    }
    fusion_conv = register_module(
        "fusion_conv", Conv2d(Conv2dOptions(backbone_channels * 5, backbone_channels, 1)));
    residual_proj = register_module(
        "residual_proj", Conv2d(Conv2dOptions(backbone_channels, backbone_channels, 1)));
}

torch::Tensor FeatureFusionImpl::fuse_levels(const torch::Tensor& f_l, const torch::Tensor& f_h) {
    return fuse->forward(f_l, f_h);
}

torch::Tensor FeatureFusionImpl::channel_attention(const torch::Tensor& f_h_prime) {
    auto pooled = F::adaptive_avg_pool2d(f_h_prime, F::AdaptiveAvgPool2dFuncOptions(1));
    auto weights = torch::sigmoid(attention_conv->forward(pooled));
    return f_h_prime * weights;
}

std::vector<torch::Tensor> FeatureFusionImpl::multiscale_cascade(const torch::Tensor& f_h_prime) {
    std::vector<torch::Tensor> raw;
    raw.reserve(branch_convs.size());
    for (auto& conv : branch_convs) {
        raw.push_back(conv->forward(f_h_prime));
    }
    std::vector<torch::Tensor> cascaded;
    cascaded.reserve(raw.size());
    cascaded.push_back(raw[0]);
    for (size_t i = 1; i < raw.size(); ++i) {
        cascaded.push_back(raw[i - 1] + raw[i]); // sum with the previous raw branch
    }
    return cascaded;
}

torch::Tensor FeatureFusionImpl::forward(const torch::Tensor& f_l, const torch::Tensor& f_h) {
    auto f_h_prime = fuse_levels(f_l, f_h);
    auto f_a = channel_attention(f_h_prime);
    auto cascaded = multiscale_cascade(f_h_prime);
    cascaded.push_back(f_a);
    auto fused = torch::relu(fusion_conv->forward(torch::cat(cascaded, 1)));
    return fused + residual_proj->forward(f_h_prime);
}

FeatureMap FeatureFusionImpl::forward(const FeatureMap& f_l, const FeatureMap& f_h) {
    return FeatureMap{forward(f_l.data, f_h.data), Stage::FM};
}

} // namespace deanet
