#include "deanet/encoders.hpp"

#include <filesystem>

namespace deanet {

namespace {

torch::nn::Sequential make_stage(int64_t in_ch, int64_t out_ch) {
    using namespace torch::nn;
    return Sequential(
        Conv2d(Conv2dOptions(in_ch, out_ch, 3).padding(1).bias(false)),
        BatchNorm2d(out_ch),
        ReLU(ReLUOptions().inplace(true)),
        Conv2d(Conv2dOptions(out_ch, out_ch, 3).padding(1).bias(false)),
        BatchNorm2d(out_ch),
        ReLU(ReLUOptions().inplace(true)));
}

/// Two 3x3 convs with an identity shortcut, the stride-1 residual block of
/// the LD feature extractor.
struct BasicBlockImpl : torch::nn::Module {
    BasicBlockImpl(int64_t channels) {
        using namespace torch::nn;
        conv1 = register_module(
            "conv1", Conv2d(Conv2dOptions(channels, channels, 3).padding(1).bias(false)));
        bn1 = register_module("bn1", BatchNorm2d(channels));
        conv2 = register_module(
            "conv2", Conv2d(Conv2dOptions(channels, channels, 3).padding(1).bias(false)));
        bn2 = register_module("bn2", BatchNorm2d(channels));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto out = torch::relu(bn1->forward(conv1->forward(x)));
        out = bn2->forward(conv2->forward(out));
        return torch::relu(out + x);
    }

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(BasicBlock);

} // namespace

BackboneEncoderImpl::BackboneEncoderImpl(int64_t base_width) {
    stage_widths = {base_width, base_width * 2, base_width * 4, base_width * 8, base_width * 16};
    int64_t in_ch = 3;
    for (size_t i = 0; i < stage_widths.size(); ++i) {
        blocks.push_back(make_stage(in_ch, stage_widths[i]));
        register_module("stage" + std::to_string(i + 1), blocks.back());
        in_ch = stage_widths[i];
    }
    pool = register_module("pool", torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2)));
}

std::vector<torch::Tensor> BackboneEncoderImpl::forward_tensors(const torch::Tensor& x) {
    if (x.size(2) < kSizeMultiple || x.size(3) < kSizeMultiple) {
        throw ShapeError("input too small for four halvings: " + std::to_string(x.size(2)) + "x" +
                         std::to_string(x.size(3)));
    }
    std::vector<torch::Tensor> stages;
    auto cur = x;
    for (size_t i = 0; i < blocks.size(); ++i) {
        if (i > 0) cur = pool->forward(cur);
        cur = blocks[i]->forward(cur);
        stages.push_back(cur);
    }
    return stages;
}

EncoderPyramid BackboneEncoderImpl::forward(const ImageBatch& batch) {
    EncoderPyramid pyramid;
    for (auto& t : forward_tensors(batch.data)) {
        pyramid.stages.emplace_back(std::move(t), Stage::FH);
    }
    return pyramid;
}

LocalSemanticEncoderImpl::LocalSemanticEncoderImpl(int64_t out_channels_)
    : out_channels(out_channels_) {
    using namespace torch::nn;
    conv1 = register_module("conv1",
                            Conv2d(Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
    bn1 = register_module("bn1", BatchNorm2d(64));
    pool = register_module("pool", MaxPool2d(MaxPool2dOptions(3).stride(2).padding(1)));
    layer1 = register_module("layer1", Sequential(BasicBlock(64), BasicBlock(64)));
    proj = register_module("proj", Conv2d(Conv2dOptions(64, out_channels, 1)));
}

torch::Tensor LocalSemanticEncoderImpl::forward_tensor(const torch::Tensor& x) {
    auto out = torch::relu(bn1->forward(conv1->forward(x)));
    out = pool->forward(out);
    out = layer1->forward(out);
    return proj->forward(out);
}

LocalSemanticFeatures LocalSemanticEncoderImpl::forward(const ImageBatch& batch) {
    return LocalSemanticFeatures{FeatureMap{forward_tensor(batch.data), Stage::FL}};
}

void LocalSemanticEncoderImpl::freeze() {
    for (auto& p : parameters()) {
        p.set_requires_grad(false);
    }
    frozen_ = true;
}

void load_ld_weights(LocalSemanticEncoder& encoder, const std::string& path, bool required) {
    if (path.empty()) {
        if (required) {
            throw DataError("LD pre-trained weights required by config (model.ld_weights_required) "
                            "but model.ld_weights_path is empty; falling back to random "
                            "initialization is forbidden by config");
        }
        return; // random initialization
    }
    if (!std::filesystem::exists(path)) {
        throw DataError("LD weights checkpoint not found: " + path);
    }
    try {
        torch::serialize::InputArchive archive;
        archive.load_from(path);
        encoder->load(archive);
    } catch (const c10::Error& e) {
        throw DataError("LD weights checkpoint unreadable or incompatible: " + path + " (" +
                        e.what_without_backtrace() + ")");
    }
}

void save_ld_weights(const LocalSemanticEncoder& encoder, const std::string& path) {
    torch::serialize::OutputArchive archive;
    encoder->save(archive);
    archive.save_to(path);
}

} // namespace deanet
