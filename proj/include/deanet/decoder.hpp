#pragma once

#include <torch/torch.h>

#include "deanet/core_types.hpp"

namespace deanet {

/// Everything one decoder stage produces: the enhanced feature map plus the
/// boundary intermediates kept for supervision and inspection.
struct DecoderStageOutput {
    FeatureMap f_s_prime; // enhanced stage feature
    FeatureMap m_g;       // soft boundary map, B x 1 x H x W, values in (0,1)
    FeatureMap m_t;       // thresholded boundary map, exactly binary
    FeatureMap m_b;       // refined boundary weight map, values in (0,1)
    ThresholdValue delta; // per-sample adaptive threshold
};

/// Deep Feature Decoder Block. Branch 1 adds a pooled channel gate to the
/// fused skip feature; branch 2 concatenates it with the upsampled deeper
/// feature; a 3x3 conv block reduces to the stage width.
struct DeepFeatureBlockImpl : torch::nn::Module {
    DeepFeatureBlockImpl(int64_t skip_channels, int64_t deep_channels);

    struct Trace {
        torch::Tensor f_m_prime; // branch 1 output
        torch::Tensor up;        // projected upsampled deep feature
        torch::Tensor f_c;       // branch 2 concat
        torch::Tensor f_s;       // reduced stage output
    };

    /// Throws ShapeError unless f_n's spatial dims are exactly half of f_m's.
    torch::Tensor forward(const torch::Tensor& f_m, const torch::Tensor& f_n);
    Trace forward_trace(const torch::Tensor& f_m, const torch::Tensor& f_n);

    FeatureMap forward(const FeatureMap& f_m, const FeatureMap& f_n);

    torch::nn::Conv2d gate_conv{nullptr}; // 1x1 on the max-pooled descriptor
    torch::nn::Conv2d up_proj{nullptr};   // deep_channels -> skip_channels
    torch::nn::Sequential reduce{nullptr};
};
TORCH_MODULE(DeepFeatureBlock);

/// Boundary Enhanced Attention. Predicts a soft boundary map from two
/// asymmetric convolution paths, binarizes it with a per-sample adaptive
/// threshold and re-injects both maps multiplicatively around a residual.
struct BoundaryAttentionImpl : torch::nn::Module {
    explicit BoundaryAttentionImpl(int64_t channels);

    torch::Tensor boundary_features(const torch::Tensor& f_s);                   // F_g
    torch::Tensor boundary_map(const torch::Tensor& f_g);                        // M_g
    torch::Tensor adaptive_threshold(const torch::Tensor& m_g);                  // delta
    static torch::Tensor threshold(const torch::Tensor& m_g,
                                   const torch::Tensor& delta);                  // M_t
    torch::Tensor refine(const torch::Tensor& m_t, const torch::Tensor& m_g);    // M_b

    DecoderStageOutput forward(const torch::Tensor& f_s);
    DecoderStageOutput forward(const FeatureMap& f_s);

    int64_t channels;
    torch::nn::Conv2d shared_conv{nullptr}; // 3x3, C -> C
    torch::nn::Conv2d a_row{nullptr};       // 7x1, C -> C/2
    torch::nn::Conv2d a_col{nullptr};       // 1x7, C/2 -> C/2
    torch::nn::Conv2d b_col{nullptr};       // 1x7, C -> C/2
    torch::nn::Conv2d b_row{nullptr};       // 7x1, C/2 -> C/2
    torch::nn::Conv2d map_conv{nullptr};    // 1x1, C -> 1
    torch::nn::Conv2d threshold_conv{nullptr}; // 1x1 on pooled M_g; no gradient reaches it
    torch::nn::Conv2d refine_conv{nullptr};    // 1x1, 2 -> 1
    torch::nn::Conv2d enhance_conv{nullptr};   // 3x3, C -> C
};
TORCH_MODULE(BoundaryAttention);

} // namespace deanet
