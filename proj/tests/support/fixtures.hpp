#pragma once

// Synthetic gland-like fixtures: instance maps of elliptical blobs (some
// touching), rendered into color images whose background / interior /
// boundary appearance is learnable at desk scale.

#include <cstdint>
#include <string>

#include <opencv2/core.hpp>

#include "deanet/core_types.hpp"

namespace fixtures {

struct SynthOptions {
    int height = 64;
    int width = 64;
    int min_glands = 3;
    int max_glands = 6;
    int boundary_width = 2;
    bool touching_pair = true; // force at least one pair of adjacent glands
};

struct SynthSample {
    cv::Mat image;     // 8UC3 BGR
    cv::Mat instances; // 32SC1
};

SynthSample make_synth_sample(uint64_t seed, const SynthOptions& options = {});

/// Writes `n_train` + `n_test` synthetic samples in the GlaS pair layout
/// (train_i.bmp / train_i_anno.bmp, testA_i.bmp / ...) under `dir`.
void write_glas_fixture(const std::string& dir, int n_train, int n_test, uint64_t seed,
                        const SynthOptions& options = {});

/// Random label map for metric oracles: a few rectangles and ellipses with
/// arbitrary (non-contiguous) positive ids; later shapes overwrite earlier.
deanet::InstanceMap random_instance_map(uint64_t seed, int height, int width, int max_objects,
                                        bool allow_empty = false);

} // namespace fixtures
