#include "deanet/core_types.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace deanet {

const char* to_string(Stage s) {
    switch (s) {
    case Stage::FL: return "F_l";
    case Stage::FH: return "F_h";
    case Stage::FHPrime: return "F_h'";
    case Stage::FA: return "F_a";
    case Stage::F1Prime: return "F_1'";
    case Stage::F2Prime: return "F_2'";
    case Stage::F3Prime: return "F_3'";
    case Stage::F4Prime: return "F_4'";
    case Stage::FM: return "F_m";
    case Stage::FMPrime: return "F_m'";
    case Stage::FN: return "F_n";
    case Stage::FC: return "F_c";
    case Stage::FS: return "F_s";
    case Stage::FG: return "F_g";
    case Stage::MG: return "M_g";
    case Stage::MT: return "M_t";
    case Stage::MB: return "M_b";
    case Stage::FSPrime: return "F_s'";
    case Stage::Logits: return "logits";
    }
    return "?";
}

std::vector<int32_t> InstanceMap::instance_ids() const {
    std::set<int32_t> distinct;
    for (int32_t v : ids) {
        if (v > 0) distinct.insert(v);
    }
    return {distinct.begin(), distinct.end()};
}

bool all_finite(const torch::Tensor& t) {
    return torch::isfinite(t).all().item<bool>();
}

ImageBatch validate_shapes(const ImageBatch& batch) {
    const auto& t = batch.data;
    if (t.dim() != 4) {
        throw ShapeError("image batch must be B x 3 x H x W, got rank " + std::to_string(t.dim()));
    }
    if (t.size(1) != 3) {
        throw ShapeError("image batch must have 3 channels, got " + std::to_string(t.size(1)));
    }
    const int64_t h = t.size(2), w = t.size(3);
    if (h % kSizeMultiple != 0 || w % kSizeMultiple != 0) {
        std::ostringstream msg;
        msg << "spatial size " << h << "x" << w << " is not a multiple of " << kSizeMultiple;
        throw ShapeError(msg.str());
    }
    if (!all_finite(t)) {
        throw ValidationError("image batch contains non-finite values");
    }
    return batch;
}

torch::Tensor one_hot(const TripleMask& mask) {
    return torch::nn::functional::one_hot(mask.data, kNumClasses)
        .permute({0, 3, 1, 2})
        .to(torch::kFloat32);
}

TripleMask triple_mask_from_one_hot(const torch::Tensor& encoded) {
    return TripleMask{encoded.argmax(1)};
}

void validate_triple_mask(const TripleMask& mask) {
    const auto min = mask.data.min().item<int64_t>();
    const auto max = mask.data.max().item<int64_t>();
    if (min < kBackground || max > kBoundary) {
        throw ValidationError("triple mask values outside {0,1,2}: range [" + std::to_string(min) +
                              ", " + std::to_string(max) + "]");
    }
}

torch::Tensor to_tensor(const InstanceMap& map) {
    auto t = torch::empty({map.height, map.width}, torch::kInt32);
    std::copy(map.ids.begin(), map.ids.end(), t.data_ptr<int32_t>());
    return t;
}

InstanceMap instance_map_from_tensor(const torch::Tensor& t) {
    TORCH_CHECK(t.dim() == 2, "instance map tensor must be H x W");
    auto contig = t.to(torch::kInt32).contiguous();
    InstanceMap map(static_cast<int>(contig.size(0)), static_cast<int>(contig.size(1)));
    const int32_t* p = contig.data_ptr<int32_t>();
    std::copy(p, p + map.ids.size(), map.ids.begin());
    return map;
}

} // namespace deanet
