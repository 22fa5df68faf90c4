#pragma once

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "deanet/core_types.hpp"
#include "deanet/decoder.hpp"
#include "deanet/encoders.hpp"
#include "deanet/ffm.hpp"

namespace deanet {

/// Ablation rows: each variant adds exactly one module to the previous one.
enum class Variant {
    Backbone,         // plain encoder/decoder
    BackboneLd,       // + local semantic encoder (fuse-only skips)
    BackboneLdFfm,    // + full feature fusion on every skip
    BackboneLdFfmBea, // + boundary-enhanced attention per decoder stage
    Full,             // + deep feature decoder blocks (DEA-Net)
};

Variant variant_from_string(const std::string& name);
const char* to_string(Variant v);

struct ModelConfig {
    Variant variant = Variant::Full;
    int64_t base_width = 64;
    int64_t ld_channels = 64;
    FfmConfig ffm;
    std::string ld_weights_path;
    bool ld_weights_required = false;
    bool freeze_ld = false;
    double ld_lr_multiplier = 0.1;
};

struct NetworkOutputs {
    FeatureMap final_logits;                // B x 3 x H x W
    std::vector<FeatureMap> stage_logits;   // shallowest..deepest, all at full resolution
    std::vector<DecoderStageOutput> stages; // boundary maps; empty for variants without BEA
};

/// Decoder stage used by the non-DFB ablation rows: bilinear upsample +
/// 1x1 projection of the deep feature, concat with the skip, two 3x3 convs.
struct PlainDecoderBlockImpl : torch::nn::Module {
    PlainDecoderBlockImpl(int64_t skip_channels, int64_t deep_channels);

    torch::Tensor forward(const torch::Tensor& skip, const torch::Tensor& deep);

    torch::nn::Conv2d up_proj{nullptr};
    torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(PlainDecoderBlock);

struct DeaNetImpl : torch::nn::Module {
    explicit DeaNetImpl(ModelConfig cfg = {});

    NetworkOutputs forward(const ImageBatch& batch);
    NetworkOutputs forward_tensor(const torch::Tensor& x);

    bool has_ld() const { return cfg.variant != Variant::Backbone; }
    bool has_ffm() const {
        return cfg.variant == Variant::BackboneLdFfm || cfg.variant == Variant::BackboneLdFfmBea ||
               cfg.variant == Variant::Full;
    }
    bool has_bea() const {
        return cfg.variant == Variant::BackboneLdFfmBea || cfg.variant == Variant::Full;
    }
    bool has_dfb() const { return cfg.variant == Variant::Full; }

    /// Canonical description of the constructed graph; the hash of this
    /// string is stored in checkpoints and must match on resume.
    std::string architecture_description() const;
    std::string architecture_hash() const;

    /// LD parameters get a reduced learning rate (or are frozen) per config.
    std::vector<torch::Tensor> ld_parameters() const;
    std::vector<torch::Tensor> main_parameters() const;

    ModelConfig cfg;
    BackboneEncoder backbone{nullptr};
    LocalSemanticEncoder ld{nullptr};
    std::vector<FeatureFusion> ffms;
    std::vector<LevelFusion> fusers;
    std::vector<DeepFeatureBlock> dfbs;
    std::vector<PlainDecoderBlock> plain_blocks;
    std::vector<BoundaryAttention> beas;
    std::vector<torch::nn::Conv2d> heads;
};
TORCH_MODULE(DeaNet);

/// Constructs exactly one ablation row of Table-1 shape.
DeaNet build_ablation(Variant variant, ModelConfig base = {});
DeaNet build_ablation(const std::string& variant_name, ModelConfig base = {});

struct LossConfig {
    std::array<double, 4> stage_weights{1.0, 0.8, 0.6, 0.4};
    double variance_lambda = 0.1;
    double mb_lambda = 0.0;

    /// Throws ConfigError unless weights are >= 0 with at least one > 0.
    void validate() const;
};

struct LossBreakdown {
    torch::Tensor total;
    std::vector<torch::Tensor> stage_ce;  // mean cross-entropy per stage
    std::vector<torch::Tensor> stage_var; // population variance of the per-pixel CE map
    torch::Tensor mb_term;                // boundary supervision; defined iff enabled
};

/// Deep-supervised 3-class cross-entropy with a variance penalty per stage,
/// plus optional supervision of the M_b boundary maps.
LossBreakdown compute_loss(const NetworkOutputs& outputs, const TripleMask& target,
                           const LossConfig& cfg);

} // namespace deanet
