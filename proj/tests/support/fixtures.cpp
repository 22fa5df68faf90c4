#include "fixtures.hpp"

#include <filesystem>
#include <map>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "deanet/data.hpp"

namespace fixtures {

namespace {

cv::Vec3b jitter(std::mt19937_64& rng, cv::Vec3i base, int amplitude) {
    std::uniform_int_distribution<int> noise(-amplitude, amplitude);
    cv::Vec3b out;
    for (int k = 0; k < 3; ++k) {
        out[k] = static_cast<uint8_t>(std::clamp(base[k] + noise(rng), 0, 255));
    }
    return out;
}

} // namespace

SynthSample make_synth_sample(uint64_t seed, const SynthOptions& options) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> count_dist(options.min_glands, options.max_glands);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const int h = options.height, w = options.width;
    cv::Mat instances(h, w, CV_32S, cv::Scalar(0));

    const int count = count_dist(rng);
    int32_t next_id = 0;
    auto draw_gland = [&](cv::Point center) {
        const int ax = 6 + static_cast<int>(unit(rng) * (w / 6));
        const int ay = 6 + static_cast<int>(unit(rng) * (h / 6));
        const double angle = unit(rng) * 180.0;
        cv::ellipse(instances, center, cv::Size(ax, ay), angle, 0, 360, cv::Scalar(++next_id),
                    cv::FILLED);
        return cv::Size(ax, ay);
    };

    if (options.touching_pair) {
        // Two glands sharing an edge: their interiors are separable only
        // through the boundary class.
        const cv::Point c1(w / 4 + static_cast<int>(unit(rng) * w / 8),
                           h / 3 + static_cast<int>(unit(rng) * h / 4));
        const auto size1 = draw_gland(c1);
        const cv::Point c2(c1.x + size1.width + 4 + static_cast<int>(unit(rng) * 4), c1.y);
        draw_gland(c2);
    }
    while (next_id < count) {
        draw_gland(cv::Point(static_cast<int>(unit(rng) * w), static_cast<int>(unit(rng) * h)));
    }

    // Overdrawn or off-image glands may have shrunk; drop tiny remnants.
    std::map<int32_t, int> areas;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int32_t v = instances.at<int32_t>(y, x);
            if (v > 0) areas[v]++;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int32_t& v = instances.at<int32_t>(y, x);
            if (v > 0 && areas[v] < 30) v = 0;
        }
    }

    const cv::Mat triple = deanet::make_triple_mask_cv(instances, options.boundary_width);

    cv::Mat image(h, w, CV_8UC3);
    const cv::Vec3i background(215, 190, 228); // pinkish stroma, BGR
    const cv::Vec3i boundary(120, 60, 120);    // dark rim
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const uint8_t cls = triple.at<uint8_t>(y, x);
            if (cls == deanet::kBackground) {
                image.at<cv::Vec3b>(y, x) = jitter(rng, background, 10);
            } else if (cls == deanet::kBoundary) {
                image.at<cv::Vec3b>(y, x) = jitter(rng, boundary, 10);
            } else {
                const int32_t id = instances.at<int32_t>(y, x);
                const cv::Vec3i interior(185 - (id * 7) % 25, 120 + (id * 11) % 30,
                                         170 + (id * 5) % 20);
                image.at<cv::Vec3b>(y, x) = jitter(rng, interior, 10);
            }
        }
    }
    return {image, instances};
}

void write_glas_fixture(const std::string& dir, int n_train, int n_test, uint64_t seed,
                        const SynthOptions& options) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto write_one = [&](const std::string& name, uint64_t sample_seed) {
        auto sample = make_synth_sample(sample_seed, options);
        cv::imwrite((fs::path(dir) / (name + ".bmp")).string(), sample.image);
        cv::Mat anno8;
        sample.instances.convertTo(anno8, CV_8U);
        cv::imwrite((fs::path(dir) / (name + "_anno.bmp")).string(), anno8);
    };
    for (int i = 1; i <= n_train; ++i) {
        write_one("train_" + std::to_string(i), seed * 1000003ULL + i);
    }
    for (int i = 1; i <= n_test; ++i) {
        write_one("testA_" + std::to_string(i), seed * 2000003ULL + 500 + i);
    }
}

deanet::InstanceMap random_instance_map(uint64_t seed, int height, int width, int max_objects,
                                        bool allow_empty) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    deanet::InstanceMap map(height, width);

    const int min_objects = allow_empty ? 0 : 1;
    const int count =
        min_objects + static_cast<int>(unit(rng) * (max_objects - min_objects + 1));
    for (int k = 0; k < count; ++k) {
        const int32_t id = 1 + static_cast<int32_t>(unit(rng) * 97); // non-contiguous ids
        const int cy = static_cast<int>(unit(rng) * height);
        const int cx = static_cast<int>(unit(rng) * width);
        const int ry = 1 + static_cast<int>(unit(rng) * (height / 4));
        const int rx = 1 + static_cast<int>(unit(rng) * (width / 4));
        const bool ellipse = unit(rng) < 0.5;
        for (int y = std::max(0, cy - ry); y <= std::min(height - 1, cy + ry); ++y) {
            for (int x = std::max(0, cx - rx); x <= std::min(width - 1, cx + rx); ++x) {
                if (ellipse) {
                    const double dy = double(y - cy) / ry, dx = double(x - cx) / rx;
                    if (dy * dy + dx * dx > 1.0) continue;
                }
                map.at(y, x) = id;
            }
        }
    }
    return map;
}

} // namespace fixtures
