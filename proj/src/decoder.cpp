#include "deanet/decoder.hpp"

namespace deanet {

namespace F = torch::nn::functional;

DeepFeatureBlockImpl::DeepFeatureBlockImpl(int64_t skip_channels, int64_t deep_channels) {
    using namespace torch::nn;
    gate_conv = register_module("gate_conv",
                                Conv2d(Conv2dOptions(skip_channels, skip_channels, 1)));
    up_proj = register_module("up_proj",
                              Conv2d(Conv2dOptions(deep_channels, skip_channels, 1)));
    reduce = register_module(
        "reduce",
        Sequential(Conv2d(Conv2dOptions(skip_channels * 2, skip_channels, 3).padding(1).bias(false)),
                   BatchNorm2d(skip_channels), ReLU(ReLUOptions().inplace(true))));
}

DeepFeatureBlockImpl::Trace DeepFeatureBlockImpl::forward_trace(const torch::Tensor& f_m,
                                                                const torch::Tensor& f_n) {
    if (f_n.size(2) * 2 != f_m.size(2) || f_n.size(3) * 2 != f_m.size(3)) {
        throw ShapeError("deep feature must be at exactly half the skip resolution, got " +
                         std::to_string(f_n.size(2)) + "x" + std::to_string(f_n.size(3)) +
                         " under " + std::to_string(f_m.size(2)) + "x" +
                         std::to_string(f_m.size(3)));
    }
    Trace t;
    auto pooled = F::adaptive_max_pool2d(f_m, F::AdaptiveMaxPool2dFuncOptions(1));
    t.f_m_prime = f_m + torch::sigmoid(gate_conv->forward(pooled));
    auto up = F::interpolate(f_n, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
    t.up = up_proj->forward(up);
    t.f_c = torch::cat({t.f_m_prime + t.up, t.up}, 1);
    t.f_s = reduce->forward(t.f_c);
    return t;
}

torch::Tensor DeepFeatureBlockImpl::forward(const torch::Tensor& f_m, const torch::Tensor& f_n) {
    return forward_trace(f_m, f_n).f_s;
}

FeatureMap DeepFeatureBlockImpl::forward(const FeatureMap& f_m, const FeatureMap& f_n) {
    return FeatureMap{forward(f_m.data, f_n.data), Stage::FS};
}

BoundaryAttentionImpl::BoundaryAttentionImpl(int64_t channels_) : channels(channels_) {
    using namespace torch::nn;
    TORCH_CHECK(channels % 2 == 0, "boundary attention needs an even channel count");
    const int64_t half = channels / 2;
    shared_conv = register_module("shared_conv",
                                  Conv2d(Conv2dOptions(channels, channels, 3).padding(1)));
    a_row = register_module(
        "a_row", Conv2d(Conv2dOptions(channels, half, {7, 1}).padding({3, 0})));
    a_col = register_module("a_col",
                            Conv2d(Conv2dOptions(half, half, {1, 7}).padding({0, 3})));
    b_col = register_module(
        "b_col", Conv2d(Conv2dOptions(channels, half, {1, 7}).padding({0, 3})));
    b_row = register_module("b_row",
                            Conv2d(Conv2dOptions(half, half, {7, 1}).padding({3, 0})));
    map_conv = register_module("map_conv", Conv2d(Conv2dOptions(channels, 1, 1)));
    threshold_conv = register_module("threshold_conv", Conv2d(Conv2dOptions(1, 1, 1)));
    refine_conv = register_module("refine_conv", Conv2d(Conv2dOptions(2, 1, 1)));
    enhance_conv = register_module("enhance_conv",
                                   Conv2d(Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor BoundaryAttentionImpl::boundary_features(const torch::Tensor& f_s) {
    auto shared = shared_conv->forward(f_s);
    auto path_a = a_col->forward(a_row->forward(shared));
    auto path_b = b_row->forward(b_col->forward(shared));
    return torch::cat({path_a, path_b}, 1);
}

torch::Tensor BoundaryAttentionImpl::boundary_map(const torch::Tensor& f_g) {
    return torch::sigmoid(map_conv->forward(f_g));
}

torch::Tensor BoundaryAttentionImpl::adaptive_threshold(const torch::Tensor& m_g) {
    auto pooled = F::adaptive_avg_pool2d(m_g, F::AdaptiveAvgPool2dFuncOptions(1));
    return threshold_conv->forward(pooled);
}

torch::Tensor BoundaryAttentionImpl::threshold(const torch::Tensor& m_g,
                                               const torch::Tensor& delta) {
    // The comparison is non-differentiable; M_t is a constant w.r.t. inputs.
    return (m_g >= delta).to(m_g.dtype());
}

torch::Tensor BoundaryAttentionImpl::refine(const torch::Tensor& m_t, const torch::Tensor& m_g) {
    return torch::sigmoid(refine_conv->forward(torch::cat({m_t, m_g}, 1)));
}

DecoderStageOutput BoundaryAttentionImpl::forward(const torch::Tensor& f_s) {
    auto f_g = boundary_features(f_s);
    auto m_g = boundary_map(f_g);
    auto delta = adaptive_threshold(m_g);
    auto m_t = threshold(m_g, delta);
    auto m_b = refine(m_t, m_g);
    auto enhanced = enhance_conv->forward(f_s * m_g + f_s * m_t) + f_s;
    return DecoderStageOutput{FeatureMap{enhanced, Stage::FSPrime}, FeatureMap{m_g, Stage::MG},
                              FeatureMap{m_t, Stage::MT}, FeatureMap{m_b, Stage::MB},
                              ThresholdValue{delta}};
}

DecoderStageOutput BoundaryAttentionImpl::forward(const FeatureMap& f_s) {
    return forward(f_s.data);
}

} // namespace deanet
