#include "deanet/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace deanet {

namespace fs = std::filesystem;

DatasetKind dataset_from_string(const std::string& name) {
    if (name == "glas") return DatasetKind::Glas;
    if (name == "crag") return DatasetKind::Crag;
    throw ConfigError("unknown dataset: '" + name + "' (expected glas or crag)");
}

const char* to_string(DatasetKind kind) {
    return kind == DatasetKind::Glas ? "glas" : "crag";
}

std::vector<ManifestEntry> DatasetManifest::split(const std::string& tag) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
        if (e.split == tag) out.push_back(e);
    }
    return out;
}

std::map<std::string, size_t> DatasetManifest::split_counts() const {
    std::map<std::string, size_t> counts;
    for (const auto& e : entries) counts[e.split]++;
    return counts;
}

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

bool is_image_file(const fs::path& p) {
    static const std::vector<std::string> exts = {".bmp", ".png", ".jpg", ".jpeg", ".tif",
                                                  ".tiff"};
    const auto ext = lower(p.extension().string());
    return std::find(exts.begin(), exts.end(), ext) != exts.end();
}

std::string glas_split_of(const std::string& name) {
    if (name.rfind("train", 0) == 0) return "train";
    if (name.rfind("testA", 0) == 0) return "testA";
    if (name.rfind("testB", 0) == 0) return "testB";
    return "other";
}

std::map<std::string, std::string> read_grade_csv(const fs::path& path) {
    std::map<std::string, std::string> grades;
    std::ifstream in(path);
    if (!in) return grades;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first && lower(line).find("name") != std::string::npos) {
            first = false;
            continue; // header
        }
        first = false;
        auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        auto trim = [](std::string s) {
            auto is_space = [](unsigned char c) { return std::isspace(c) || c == '"'; };
            while (!s.empty() && is_space(s.front())) s.erase(s.begin());
            while (!s.empty() && is_space(s.back())) s.pop_back();
            return s;
        };
        auto name = trim(line.substr(0, comma));
        auto grade = trim(line.substr(comma + 1));
        if (!name.empty()) grades[name] = grade;
    }
    return grades;
}

void check_pair(const ManifestEntry& entry) {
    auto img = load_image(entry.image_path);
    auto anno = load_instance_annotation(entry.annotation_path);
    if (img.size() != anno.size()) {
        throw DataError("annotation size mismatch for " + entry.name + ": image " +
                        std::to_string(img.cols) + "x" + std::to_string(img.rows) +
                        ", annotation " + std::to_string(anno.cols) + "x" +
                        std::to_string(anno.rows));
    }
}

DatasetManifest load_glas(const std::string& root_dir) {
    DatasetManifest manifest;
    manifest.kind = DatasetKind::Glas;
    manifest.root = root_dir;

    auto grades = read_grade_csv(fs::path(root_dir) / "Grade.csv");

    std::vector<fs::path> images;
    for (const auto& item : fs::directory_iterator(root_dir)) {
        if (!item.is_regular_file() || !is_image_file(item.path())) continue;
        const auto stem = item.path().stem().string();
        if (stem.size() > 5 && stem.substr(stem.size() - 5) == "_anno") continue;
        images.push_back(item.path());
    }
    std::sort(images.begin(), images.end());

    for (const auto& img : images) {
        ManifestEntry entry;
        entry.name = img.stem().string();
        entry.image_path = img.string();
        auto anno = img.parent_path() / (entry.name + "_anno" + img.extension().string());
        if (!fs::exists(anno)) {
            throw DataError("missing annotation pair for " + img.string() + " (expected " +
                            anno.string() + ")");
        }
        entry.annotation_path = anno.string();
        entry.split = glas_split_of(entry.name);
        if (auto it = grades.find(entry.name); it != grades.end()) entry.grade = it->second;
        check_pair(entry);
        manifest.entries.push_back(std::move(entry));
    }

    if (manifest.entries.empty()) {
        throw DataError("zero matched image/annotation pairs under " + root_dir);
    }

    const auto counts = manifest.split_counts();
    auto count_of = [&](const char* tag) {
        auto it = counts.find(tag);
        return it == counts.end() ? size_t{0} : it->second;
    };
    if (count_of("train") != 85 || count_of("testA") != 60 || count_of("testB") != 20) {
        std::ostringstream warn;
        warn << "GlaS split counts " << count_of("train") << "/" << count_of("testA") << "/"
             << count_of("testB") << " differ from the official 85/60/20";
        manifest.warnings.push_back(warn.str());
    }
    return manifest;
}

DatasetManifest load_crag(const std::string& root_dir) {
    DatasetManifest manifest;
    manifest.kind = DatasetKind::Crag;
    manifest.root = root_dir;

    auto add_split = [&](const fs::path& dir, const std::string& split) {
        const auto images_dir = dir / "Images";
        const auto anno_dir = dir / "Annotation";
        if (!fs::is_directory(images_dir) || !fs::is_directory(anno_dir)) return false;

        std::vector<fs::path> images;
        for (const auto& item : fs::directory_iterator(images_dir)) {
            if (item.is_regular_file() && is_image_file(item.path())) images.push_back(item.path());
        }
        std::sort(images.begin(), images.end());

        for (const auto& img : images) {
            ManifestEntry entry;
            entry.name = img.stem().string();
            entry.image_path = img.string();
            entry.split = split;
            for (const auto* ext : {".png", ".bmp", ".tif", ".tiff", ".jpg"}) {
                auto candidate = anno_dir / (entry.name + ext);
                if (fs::exists(candidate)) {
                    entry.annotation_path = candidate.string();
                    break;
                }
            }
            if (entry.annotation_path.empty()) {
                throw DataError("missing annotation pair for " + img.string() + " under " +
                                anno_dir.string());
            }
            check_pair(entry);
            manifest.entries.push_back(std::move(entry));
        }
        return true;
    };

    bool any = add_split(root_dir, "train"); // flat layout: Images/ + Annotation/ at the root
    for (const auto& item : fs::directory_iterator(root_dir)) {
        if (item.is_directory()) {
            any = add_split(item.path(), item.path().filename().string()) || any;
        }
    }
    if (!any || manifest.entries.empty()) {
        throw DataError("zero matched image/annotation pairs under " + root_dir +
                        " (expected <split>/Images and <split>/Annotation)");
    }

    const auto counts = manifest.split_counts();
    auto count_of = [&](const char* tag) {
        auto it = counts.find(tag);
        return it == counts.end() ? size_t{0} : it->second;
    };
    if (count_of("train") != 173 || count_of("test") != 40) {
        std::ostringstream warn;
        warn << "CRAG split counts " << count_of("train") << "/" << count_of("test")
             << " differ from the official 173/40";
        manifest.warnings.push_back(warn.str());
    }
    return manifest;
}

} // namespace

DatasetManifest load_manifest(const std::string& root_dir, DatasetKind kind) {
    if (!fs::is_directory(root_dir)) {
        throw DataError("dataset root is not a directory: " + root_dir);
    }
    return kind == DatasetKind::Glas ? load_glas(root_dir) : load_crag(root_dir);
}

std::string verify_counts(const DatasetManifest& manifest, bool* ok) {
    const auto counts = manifest.split_counts();
    auto count_of = [&](const char* tag) {
        auto it = counts.find(tag);
        return it == counts.end() ? size_t{0} : it->second;
    };
    std::ostringstream out;
    bool matches = false;
    if (manifest.kind == DatasetKind::Glas) {
        matches = count_of("train") == 85 && count_of("testA") == 60 && count_of("testB") == 20;
        out << count_of("train") << "/" << count_of("testA") << "/" << count_of("testB")
            << (matches ? " OK" : " MISMATCH (official GlaS is 85/60/20)");
    } else {
        matches = count_of("train") == 173 && count_of("test") == 40;
        out << count_of("train") << "/" << count_of("test")
            << (matches ? " OK" : " MISMATCH (official CRAG is 173/40)");
    }
    if (ok) *ok = matches;
    return out.str();
}

cv::Mat load_image(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
    if (img.empty()) {
        throw DataError("unreadable image: " + path);
    }
    return img;
}

cv::Mat load_instance_annotation(const std::string& path) {
    cv::Mat raw = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (raw.empty()) {
        throw DataError("unreadable annotation: " + path);
    }
    if (raw.channels() > 1) {
        // Paletted label images decode to 3 channels with identical planes.
        std::vector<cv::Mat> planes;
        cv::split(raw, planes);
        raw = planes[0];
    }
    cv::Mat labels;
    raw.convertTo(labels, CV_32S);
    return labels;
}

InstanceMap instance_map_from_cv(const cv::Mat& labels) {
    CV_Assert(labels.type() == CV_32S);
    InstanceMap map(labels.rows, labels.cols);
    for (int y = 0; y < labels.rows; ++y) {
        const int32_t* row = labels.ptr<int32_t>(y);
        std::copy(row, row + labels.cols, map.ids.begin() + static_cast<size_t>(y) * labels.cols);
    }
    return map;
}

cv::Mat instance_map_to_cv(const InstanceMap& map) {
    cv::Mat labels(map.height, map.width, CV_32S);
    for (int y = 0; y < map.height; ++y) {
        int32_t* row = labels.ptr<int32_t>(y);
        std::copy(map.ids.begin() + static_cast<size_t>(y) * map.width,
                  map.ids.begin() + static_cast<size_t>(y + 1) * map.width, row);
    }
    return labels;
}

torch::Tensor image_to_tensor(const cv::Mat& bgr) {
    CV_Assert(bgr.type() == CV_8UC3);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8);
    return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).clone();
}

torch::Tensor mask_to_tensor(const cv::Mat& mask) {
    CV_Assert(mask.type() == CV_8UC1);
    auto t = torch::from_blob(mask.data, {mask.rows, mask.cols}, torch::kUInt8);
    return t.to(torch::kInt64).clone();
}

cv::Mat make_triple_mask_cv(const cv::Mat& instances, int boundary_width) {
    CV_Assert(instances.type() == CV_32S);
    if (boundary_width < 1) {
        throw ConfigError("boundary_width must be >= 1");
    }
    const int h = instances.rows, w = instances.cols;
    cv::Mat triple(h, w, CV_8U, cv::Scalar(kBackground));
    for (int y = 0; y < h; ++y) {
        const int32_t* row = instances.ptr<int32_t>(y);
        for (int x = 0; x < w; ++x) {
            const int32_t id = row[x];
            if (id <= 0) continue;
            bool boundary = false;
            for (int dy = -boundary_width; dy <= boundary_width && !boundary; ++dy) {
                const int ny = y + dy;
                for (int dx = -boundary_width; dx <= boundary_width; ++dx) {
                    const int nx = x + dx;
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w ||
                        instances.at<int32_t>(ny, nx) != id) {
                        boundary = true;
                        break;
                    }
                }
            }
            triple.at<uint8_t>(y, x) = boundary ? kBoundary : kInterior;
        }
    }
    return triple;
}

TripleMask make_triple_mask(const InstanceMap& instances, int boundary_width) {
    auto triple = make_triple_mask_cv(instance_map_to_cv(instances), boundary_width);
    return TripleMask{mask_to_tensor(triple).unsqueeze(0)};
}

cv::Mat ensure_triple_mask(const ManifestEntry& entry, int boundary_width,
                           const std::string& cache_dir) {
    fs::path cache_path;
    if (!cache_dir.empty()) {
        cache_path = fs::path(cache_dir) /
                     (entry.name + "_triple_w" + std::to_string(boundary_width) + ".png");
        if (fs::exists(cache_path)) {
            cv::Mat cached = cv::imread(cache_path.string(), cv::IMREAD_UNCHANGED);
            if (!cached.empty() && cached.type() == CV_8U) return cached;
        }
    }
    auto triple = make_triple_mask_cv(load_instance_annotation(entry.annotation_path),
                                      boundary_width);
    if (!cache_dir.empty()) {
        fs::create_directories(cache_dir);
        cv::imwrite(cache_path.string(), triple);
    }
    return triple;
}

void AugmentConfig::validate() const {
    if (crop_h % kSizeMultiple != 0 || crop_w % kSizeMultiple != 0) {
        throw ConfigError("crop size must be a multiple of " + std::to_string(kSizeMultiple));
    }
    if (hflip_prob < 0 || hflip_prob > 1) throw ConfigError("hflip_prob must be in [0,1]");
    if (scale_min > scale_max || scale_min <= 0) throw ConfigError("invalid scale range");
    if (elastic_alpha < 0 || elastic_sigma <= 0) throw ConfigError("invalid elastic parameters");
}

AugmentConfig AugmentConfig::identity(int h, int w) {
    AugmentConfig cfg;
    cfg.hflip_prob = 0;
    cfg.rotation_deg = 0;
    cfg.scale_min = cfg.scale_max = 1.0;
    cfg.elastic_alpha = 0;
    cfg.crop_h = h;
    cfg.crop_w = w;
    return cfg;
}

uint64_t mix_seed(uint64_t seed, uint64_t epoch, uint64_t index) {
    // splitmix64 over the packed inputs
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (epoch + 1) + 0xbf58476d1ce4e5b9ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

AugmentedSample augment(const cv::Mat& image, const cv::Mat& triple, const cv::Mat& instances,
                        const AugmentConfig& cfg, uint64_t seed) {
    CV_Assert(image.size() == triple.size() && image.size() == instances.size());
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    AugmentedSample out{image.clone(), triple.clone(), instances.clone()};

    // horizontal flip
    if (cfg.hflip_prob > 0 && unit(rng) < cfg.hflip_prob) {
        cv::flip(out.image, out.image, 1);
        cv::flip(out.triple, out.triple, 1);
        cv::flip(out.instances, out.instances, 1);
    }

    // affine: rotation + isotropic scale about the center
    const double angle = cfg.rotation_deg > 0
                             ? (unit(rng) * 2.0 - 1.0) * cfg.rotation_deg
                             : 0.0;
    const double scale = cfg.scale_min == cfg.scale_max
                             ? cfg.scale_min
                             : cfg.scale_min + unit(rng) * (cfg.scale_max - cfg.scale_min);
    if (angle != 0.0 || scale != 1.0) {
        const cv::Point2f center(out.image.cols / 2.0f, out.image.rows / 2.0f);
        cv::Mat m = cv::getRotationMatrix2D(center, angle, scale);
        cv::warpAffine(out.image, out.image, m, out.image.size(), cv::INTER_LINEAR,
                       cv::BORDER_REFLECT_101);
        cv::warpAffine(out.triple, out.triple, m, out.triple.size(), cv::INTER_NEAREST,
                       cv::BORDER_CONSTANT, cv::Scalar(kBackground));
        cv::warpAffine(out.instances, out.instances, m, out.instances.size(), cv::INTER_NEAREST,
                       cv::BORDER_CONSTANT, cv::Scalar(0));
    }

    // elastic deformation via a smoothed random displacement field
    if (cfg.elastic_alpha > 0) {
        cv::Mat dx(out.image.size(), CV_32F), dy(out.image.size(), CV_32F);
        for (int y = 0; y < dx.rows; ++y) {
            float* rx = dx.ptr<float>(y);
            float* ry = dy.ptr<float>(y);
            for (int x = 0; x < dx.cols; ++x) {
                rx[x] = static_cast<float>(unit(rng) * 2.0 - 1.0);
                ry[x] = static_cast<float>(unit(rng) * 2.0 - 1.0);
            }
        }
        cv::GaussianBlur(dx, dx, cv::Size(0, 0), cfg.elastic_sigma);
        cv::GaussianBlur(dy, dy, cv::Size(0, 0), cfg.elastic_sigma);
        cv::Mat map_x(out.image.size(), CV_32F), map_y(out.image.size(), CV_32F);
        for (int y = 0; y < map_x.rows; ++y) {
            float* mx = map_x.ptr<float>(y);
            float* my = map_y.ptr<float>(y);
            const float* rx = dx.ptr<float>(y);
            const float* ry = dy.ptr<float>(y);
            for (int x = 0; x < map_x.cols; ++x) {
                mx[x] = x + static_cast<float>(cfg.elastic_alpha) * rx[x];
                my[x] = y + static_cast<float>(cfg.elastic_alpha) * ry[x];
            }
        }
        cv::remap(out.image, out.image, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
        cv::remap(out.triple, out.triple, map_x, map_y, cv::INTER_NEAREST, cv::BORDER_CONSTANT,
                  cv::Scalar(kBackground));
        cv::remap(out.instances, out.instances, map_x, map_y, cv::INTER_NEAREST,
                  cv::BORDER_CONSTANT, cv::Scalar(0));
    }

    // pad (if needed) and crop
    int pad_h = std::max(0, cfg.crop_h - out.image.rows);
    int pad_w = std::max(0, cfg.crop_w - out.image.cols);
    if (pad_h > 0 || pad_w > 0) {
        if (pad_h >= out.image.rows || pad_w >= out.image.cols) {
            throw DataError("crop " + std::to_string(cfg.crop_w) + "x" + std::to_string(cfg.crop_h) +
                            " larger than the padded image (" + std::to_string(out.image.cols) +
                            "x" + std::to_string(out.image.rows) + ")");
        }
        cv::copyMakeBorder(out.image, out.image, 0, pad_h, 0, pad_w, cv::BORDER_REFLECT_101);
        cv::copyMakeBorder(out.triple, out.triple, 0, pad_h, 0, pad_w, cv::BORDER_CONSTANT,
                           cv::Scalar(kBackground));
        cv::copyMakeBorder(out.instances, out.instances, 0, pad_h, 0, pad_w, cv::BORDER_CONSTANT,
                           cv::Scalar(0));
    }
    if (out.image.rows != cfg.crop_h || out.image.cols != cfg.crop_w) {
        const int max_y = out.image.rows - cfg.crop_h;
        const int max_x = out.image.cols - cfg.crop_w;
        const int off_y = max_y > 0 ? static_cast<int>(unit(rng) * (max_y + 1)) : 0;
        const int off_x = max_x > 0 ? static_cast<int>(unit(rng) * (max_x + 1)) : 0;
        const cv::Rect roi(std::min(off_x, max_x), std::min(off_y, max_y), cfg.crop_w, cfg.crop_h);
        out.image = out.image(roi).clone();
        out.triple = out.triple(roi).clone();
        out.instances = out.instances(roi).clone();
    }
    return out;
}

} // namespace deanet
