#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "deanet/core_types.hpp"

namespace deanet {

enum class DatasetKind { Glas, Crag };

DatasetKind dataset_from_string(const std::string& name);
const char* to_string(DatasetKind kind);

struct ManifestEntry {
    std::string name;
    std::string image_path;
    std::string annotation_path;
    std::string split; // train / testA / testB / test
    std::string grade; // empty when the dataset carries none
};

struct DatasetManifest {
    DatasetKind kind = DatasetKind::Glas;
    std::string root;
    std::vector<ManifestEntry> entries;
    std::vector<std::string> warnings; // count mismatches vs the official layout

    std::vector<ManifestEntry> split(const std::string& tag) const;
    std::map<std::string, size_t> split_counts() const;
};

/// Scans a GlaS root (`<name>.bmp` / `<name>_anno.bmp` pairs) or a CRAG root
/// (`<split>/Images` + `<split>/Annotation` directories). Every image must
/// have a parseable annotation of matching size; count mismatches against the
/// official splits are reported as warnings, not errors.
DatasetManifest load_manifest(const std::string& root_dir, DatasetKind kind);

/// "85/60/20 OK"-style summary; `ok` reports whether counts match the
/// official layout.
std::string verify_counts(const DatasetManifest& manifest, bool* ok = nullptr);

// -- raster I/O -------------------------------------------------------------

cv::Mat load_image(const std::string& path);               // 8UC3, BGR
cv::Mat load_instance_annotation(const std::string& path); // 32SC1, 0 = background

InstanceMap instance_map_from_cv(const cv::Mat& labels);
cv::Mat instance_map_to_cv(const InstanceMap& map);

/// 3 x H x W float tensor, RGB, values in [0,1].
torch::Tensor image_to_tensor(const cv::Mat& bgr);
/// H x W int64 tensor from an 8-bit class mask.
torch::Tensor mask_to_tensor(const cv::Mat& mask);

// -- triple masks -----------------------------------------------------------

/// Per-instance boundary banding: a pixel of instance v is boundary iff its
/// Chebyshev distance to any non-v pixel (or the image edge) is < width.
/// Touching instances each contribute their own band.
cv::Mat make_triple_mask_cv(const cv::Mat& instances, int boundary_width);

/// Spec-level wrapper producing a single-sample (1 x H x W) TripleMask.
TripleMask make_triple_mask(const InstanceMap& instances, int boundary_width);

/// Loads the cached triple mask for an entry, generating and caching it when
/// absent. `cache_dir` empty disables caching.
cv::Mat ensure_triple_mask(const ManifestEntry& entry, int boundary_width,
                           const std::string& cache_dir);

// -- augmentation -----------------------------------------------------------

struct AugmentConfig {
    double hflip_prob = 0.5;
    double rotation_deg = 180.0; // uniform in [-r, r]
    double scale_min = 0.8;
    double scale_max = 1.25;
    double elastic_alpha = 100.0; // displacement strength, pixels
    double elastic_sigma = 10.0;  // smoothing of the displacement field
    int crop_h = 416;
    int crop_w = 416;

    /// Throws ConfigError when the crop is not a multiple of 16 or ranges
    /// are inverted.
    void validate() const;

    static AugmentConfig identity(int h, int w);
};

struct AugmentedSample {
    cv::Mat image;     // 8UC3
    cv::Mat triple;    // 8UC1, values {0,1,2}
    cv::Mat instances; // 32SC1
};

/// Applies one spatial transform (flip, affine, elastic, crop) to all three
/// rasters: bilinear resampling for the image, nearest for both masks.
/// Deterministic for a fixed seed. Throws DataError when the requested crop
/// exceeds what reflection padding can provide.
AugmentedSample augment(const cv::Mat& image, const cv::Mat& triple, const cv::Mat& instances,
                        const AugmentConfig& cfg, uint64_t seed);

/// Mixes run seed, epoch and entry index into one augmentation seed, so the
/// sample stream is a pure function of (seed, epoch).
uint64_t mix_seed(uint64_t seed, uint64_t epoch, uint64_t index);

} // namespace deanet
