#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "deanet/errors.hpp"

namespace deanet {

// Class indices are a fixed contract shared by the loss, the mask files and
// the post-processing.
inline constexpr int64_t kBackground = 0;
inline constexpr int64_t kInterior = 1;
inline constexpr int64_t kBoundary = 2;
inline constexpr int64_t kNumClasses = 3;

// Spatial sizes must survive four halvings with integral dimensions.
inline constexpr int64_t kSizeMultiple = 16;

/// Named stages of the forward graph. Producing operation per stage:
///   FL       local semantic encoder output
///   FH       backbone encoder stage
///   FHPrime  fuse_levels
///   FA       channel_attention
///   F1Prime..F4Prime  multiscale_cascade
///   FM       ffm_forward
///   FMPrime  DFB branch 1
///   FN       previous decoder stage / bottleneck
///   FC       DFB branch 2 concat
///   FS       DFB output convolution
///   FG       bea_boundary_features
///   MG       bea_boundary_map
///   MT       bea_threshold
///   MB       bea_refine
///   FSPrime  bea_forward
enum class Stage {
    FL,
    FH,
    FHPrime,
    FA,
    F1Prime,
    F2Prime,
    F3Prime,
    F4Prime,
    FM,
    FMPrime,
    FN,
    FC,
    FS,
    FG,
    MG,
    MT,
    MB,
    FSPrime,
    Logits,
};

const char* to_string(Stage s);

/// Intermediate activation tensor, batch-major B x C x H x W.
struct FeatureMap {
    torch::Tensor data;
    Stage stage = Stage::FH;

    FeatureMap() = default;
    FeatureMap(torch::Tensor t, Stage s) : data(std::move(t)), stage(s) {}
};

/// Batch of RGB tiles in [0,1], B x 3 x H x W, with per-sample source ids.
struct ImageBatch {
    torch::Tensor data;
    std::vector<std::string> ids;
};

/// Per-sample adaptive threshold, shape B x 1 x 1 x 1.
struct ThresholdValue {
    torch::Tensor value;
};

/// Per-pixel class map over {background, interior, boundary}, B x H x W int64.
struct TripleMask {
    torch::Tensor data;
};

/// Per-pixel gland identifiers, 0 = background. Ids need not be contiguous.
struct InstanceMap {
    int height = 0;
    int width = 0;
    std::vector<int32_t> ids;

    InstanceMap() = default;
    InstanceMap(int h, int w) : height(h), width(w), ids(static_cast<size_t>(h) * w, 0) {}

    int32_t& at(int y, int x) { return ids[static_cast<size_t>(y) * width + x]; }
    int32_t at(int y, int x) const { return ids[static_cast<size_t>(y) * width + x]; }

    /// Distinct positive ids, ascending.
    std::vector<int32_t> instance_ids() const;
};

struct MetricReport {
    double f1 = 0.0;
    double object_dice = 0.0;
    double object_hausdorff = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double pixel_dice = 0.0;
};

bool all_finite(const torch::Tensor& t);

/// Returns the batch unchanged iff every ImageBatch invariant holds.
/// Throws ShapeError (rank, channel count, non-multiple-of-16) or
/// ValidationError (non-finite values).
ImageBatch validate_shapes(const ImageBatch& batch);

/// B x H x W {0,1,2} -> B x 3 x H x W one-hot float tensor.
torch::Tensor one_hot(const TripleMask& mask);

/// Inverse of one_hot; argmax over the class dimension.
TripleMask triple_mask_from_one_hot(const torch::Tensor& encoded);

/// Throws ValidationError unless every value is in {0,1,2}.
void validate_triple_mask(const TripleMask& mask);

/// H x W int32 tensor <-> InstanceMap.
torch::Tensor to_tensor(const InstanceMap& map);
InstanceMap instance_map_from_tensor(const torch::Tensor& t);

} // namespace deanet
