#pragma once

#include <vector>

#include <torch/torch.h>

#include "deanet/core_types.hpp"

namespace deanet {

struct PostprocessConfig {
    int min_object_area = 100; // interior pixels
    bool fill_holes = true;
    bool boundary_reassign = true;

    void validate() const;
};

// Boundary-class pixels farther than this from every surviving component
// stay background.
inline constexpr double kReassignMaxDistance = 8.0;

/// Instance extraction from a per-pixel class map (values {0,1,2}):
/// 4-connected components of the interior class, filtered by interior area,
/// then boundary pixels assigned to the nearest surviving component by exact
/// Euclidean distance, then holes filled.
InstanceMap instances_from_classes(const InstanceMap& classes, const PostprocessConfig& cfg);

/// Argmax over the class dimension, then instances_from_classes per sample.
std::vector<InstanceMap> instances_from_logits(const torch::Tensor& logits,
                                               const PostprocessConfig& cfg);

/// 4-connected component labeling of the positive pixels; labels are 1..K in
/// scan order. Exposed for the post-processing invariants.
InstanceMap label_components_4(const InstanceMap& foreground);

} // namespace deanet
