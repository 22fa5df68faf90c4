#include "deanet/network.hpp"

#include <functional>
#include <sstream>

namespace deanet {

namespace F = torch::nn::functional;

Variant variant_from_string(const std::string& name) {
    if (name == "backbone") return Variant::Backbone;
    if (name == "backbone+ld") return Variant::BackboneLd;
    if (name == "backbone+ld+ffm") return Variant::BackboneLdFfm;
    if (name == "backbone+ld+ffm+bea") return Variant::BackboneLdFfmBea;
    if (name == "full") return Variant::Full;
    throw ConfigError("unknown model variant: '" + name +
                      "' (expected backbone, backbone+ld, backbone+ld+ffm, "
                      "backbone+ld+ffm+bea or full)");
}

const char* to_string(Variant v) {
    switch (v) {
    case Variant::Backbone: return "backbone";
    case Variant::BackboneLd: return "backbone+ld";
    case Variant::BackboneLdFfm: return "backbone+ld+ffm";
    case Variant::BackboneLdFfmBea: return "backbone+ld+ffm+bea";
    case Variant::Full: return "full";
    }
    return "?";
}

PlainDecoderBlockImpl::PlainDecoderBlockImpl(int64_t skip_channels, int64_t deep_channels) {
    using namespace torch::nn;
    up_proj = register_module("up_proj",
                              Conv2d(Conv2dOptions(deep_channels, skip_channels, 1)));
    body = register_module(
        "body",
        Sequential(
            Conv2d(Conv2dOptions(skip_channels * 2, skip_channels, 3).padding(1).bias(false)),
            BatchNorm2d(skip_channels), ReLU(ReLUOptions().inplace(true)),
            Conv2d(Conv2dOptions(skip_channels, skip_channels, 3).padding(1).bias(false)),
            BatchNorm2d(skip_channels), ReLU(ReLUOptions().inplace(true))));
}

torch::Tensor PlainDecoderBlockImpl::forward(const torch::Tensor& skip,
                                             const torch::Tensor& deep) {
    auto up = F::interpolate(deep, F::InterpolateFuncOptions()
                                       .scale_factor(std::vector<double>{2.0, 2.0})
                                       .mode(torch::kBilinear)
                                       .align_corners(false));
    up = up_proj->forward(up);
    return body->forward(torch::cat({skip, up}, 1));
}

DeaNetImpl::DeaNetImpl(ModelConfig cfg_) : cfg(std::move(cfg_)) {
    backbone = register_module("backbone", BackboneEncoder(cfg.base_width));
    const auto& widths = backbone->stage_widths;

    if (has_ld()) {
        ld = register_module("ld", LocalSemanticEncoder(cfg.ld_channels));
        load_ld_weights(ld, cfg.ld_weights_path, cfg.ld_weights_required);
        if (cfg.freeze_ld) ld->freeze();
    }

    for (int i = 0; i < 4; ++i) {
        if (has_ffm()) {
            ffms.push_back(FeatureFusion(cfg.ld_channels, widths[i], cfg.ffm));
            register_module("ffm" + std::to_string(i + 1), ffms.back());
        } else if (has_ld()) {
            fusers.push_back(LevelFusion(cfg.ld_channels, widths[i]));
            register_module("fuse" + std::to_string(i + 1), fusers.back());
        }
        if (has_dfb()) {
            dfbs.push_back(DeepFeatureBlock(widths[i], widths[i + 1]));
            register_module("dfb" + std::to_string(i + 1), dfbs.back());
        } else {
            plain_blocks.push_back(PlainDecoderBlock(widths[i], widths[i + 1]));
            register_module("dec" + std::to_string(i + 1), plain_blocks.back());
        }
        if (has_bea()) {
            beas.push_back(BoundaryAttention(widths[i]));
            register_module("bea" + std::to_string(i + 1), beas.back());
        }
        heads.push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(widths[i], kNumClasses, 1)));
        register_module("head" + std::to_string(i + 1), heads.back());
    }
}

NetworkOutputs DeaNetImpl::forward(const ImageBatch& batch) {
    return forward_tensor(validate_shapes(batch).data);
}

NetworkOutputs DeaNetImpl::forward_tensor(const torch::Tensor& x) {
    auto encoder_stages = backbone->forward_tensors(x);

    torch::Tensor f_l;
    if (has_ld()) f_l = ld->forward_tensor(x);

    std::vector<torch::Tensor> skips(4);
    for (int i = 0; i < 4; ++i) {
        if (has_ffm()) {
            skips[i] = ffms[i]->forward(f_l, encoder_stages[i]);
        } else if (has_ld()) {
            skips[i] = fusers[i]->forward(f_l, encoder_stages[i]);
        } else {
            skips[i] = encoder_stages[i];
        }
    }

    NetworkOutputs out;
    out.stages.resize(has_bea() ? 4 : 0);
    std::vector<torch::Tensor> stage_features(4);

    auto deep = encoder_stages[4];
    for (int k = 3; k >= 0; --k) { // deepest decoder stage first
        torch::Tensor f_s = has_dfb() ? dfbs[k]->forward(skips[k], deep)
                                      : plain_blocks[k]->forward(skips[k], deep);
        if (has_bea()) {
            auto stage_out = beas[k]->forward(f_s);
            stage_features[k] = stage_out.f_s_prime.data;
            out.stages[k] = std::move(stage_out);
        } else {
            stage_features[k] = f_s;
        }
        deep = stage_features[k];
    }

    const std::vector<int64_t> full_size{x.size(2), x.size(3)};
    out.stage_logits.reserve(4);
    for (int k = 0; k < 4; ++k) {
        auto logits = heads[k]->forward(stage_features[k]);
        if (logits.size(2) != full_size[0] || logits.size(3) != full_size[1]) {
            logits = F::interpolate(logits, F::InterpolateFuncOptions()
                                                .size(full_size)
                                                .mode(torch::kBilinear)
                                                .align_corners(false));
        }
        out.stage_logits.emplace_back(logits, Stage::Logits);
    }
    // The shallowest head is the network's prediction.
    out.final_logits = out.stage_logits[0];
    return out;
}

std::string DeaNetImpl::architecture_description() const {
    std::ostringstream desc;
    desc << "deanet variant=" << to_string(cfg.variant) << " base_width=" << cfg.base_width
         << " classes=" << kNumClasses << " stages=5 decoder_depth=4";
    if (has_ld()) desc << " ld_channels=" << cfg.ld_channels;
    if (has_ffm()) {
        desc << " dilation_rates=";
        for (size_t i = 0; i < cfg.ffm.dilation_rates.size(); ++i) {
            desc << (i ? "," : "") << cfg.ffm.dilation_rates[i];
        }
    }
    return desc.str();
}

std::string DeaNetImpl::architecture_hash() const {
    std::ostringstream hex;
    hex << std::hex << std::hash<std::string>{}(architecture_description());
    return hex.str();
}

std::vector<torch::Tensor> DeaNetImpl::ld_parameters() const {
    if (!has_ld() || ld->frozen()) return {};
    return ld->parameters();
}

std::vector<torch::Tensor> DeaNetImpl::main_parameters() const {
    std::vector<torch::Tensor> params;
    const auto ld_set = [&] {
        std::vector<void*> ptrs;
        if (has_ld()) {
            for (const auto& p : ld->parameters()) ptrs.push_back(p.unsafeGetTensorImpl());
        }
        return ptrs;
    }();
    for (const auto& p : parameters()) {
        if (!p.requires_grad()) continue;
        const bool in_ld =
            std::find(ld_set.begin(), ld_set.end(), p.unsafeGetTensorImpl()) != ld_set.end();
        if (!in_ld) params.push_back(p);
    }
    return params;
}

DeaNet build_ablation(Variant variant, ModelConfig base) {
    base.variant = variant;
    return DeaNet(base);
}

DeaNet build_ablation(const std::string& variant_name, ModelConfig base) {
    return build_ablation(variant_from_string(variant_name), std::move(base));
}

void LossConfig::validate() const {
    bool any_positive = false;
    for (double w : stage_weights) {
        if (w < 0) throw ConfigError("loss stage weights must be >= 0");
        if (w > 0) any_positive = true;
    }
    if (!any_positive) throw ConfigError("at least one loss stage weight must be > 0");
    if (variance_lambda < 0 || mb_lambda < 0) {
        throw ConfigError("loss lambdas must be >= 0");
    }
}

LossBreakdown compute_loss(const NetworkOutputs& outputs, const TripleMask& target,
                           const LossConfig& cfg) {
    cfg.validate();
    validate_triple_mask(target);
    TORCH_CHECK(outputs.stage_logits.size() == cfg.stage_weights.size(),
                "expected one logit map per stage weight");
    const auto& first = outputs.stage_logits[0].data;
    if (first.size(0) != target.data.size(0) || first.size(2) != target.data.size(1) ||
        first.size(3) != target.data.size(2)) {
        throw ShapeError("loss target shape does not match logits");
    }

    LossBreakdown breakdown;
    auto total = torch::zeros({}, first.options());
    for (size_t k = 0; k < outputs.stage_logits.size(); ++k) {
        auto ce_map = F::cross_entropy(
            outputs.stage_logits[k].data, target.data,
            F::CrossEntropyFuncOptions().reduction(torch::kNone));
        auto mean_ce = ce_map.mean();
        auto variance = (ce_map - mean_ce).pow(2).mean();
        breakdown.stage_ce.push_back(mean_ce);
        breakdown.stage_var.push_back(variance);
        total = total + cfg.stage_weights[k] * (mean_ce + cfg.variance_lambda * variance);
    }

    if (cfg.mb_lambda > 0 && !outputs.stages.empty()) {
        auto boundary_gt =
            (target.data == kBoundary).to(first.dtype()).unsqueeze(1); // B x 1 x H x W
        auto mb_total = torch::zeros({}, first.options());
        for (const auto& stage : outputs.stages) {
            const auto& m_b = stage.m_b.data;
            auto gt = boundary_gt;
            if (gt.size(2) != m_b.size(2) || gt.size(3) != m_b.size(3)) {
                gt = F::interpolate(gt, F::InterpolateFuncOptions()
                                            .size(std::vector<int64_t>{m_b.size(2), m_b.size(3)})
                                            .mode(torch::kNearest));
            }
            mb_total = mb_total + F::binary_cross_entropy(m_b, gt);
        }
        breakdown.mb_term = mb_total / static_cast<double>(outputs.stages.size());
        total = total + cfg.mb_lambda * breakdown.mb_term;
    }

    breakdown.total = total;
    return breakdown;
}

} // namespace deanet
