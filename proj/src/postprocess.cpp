#include "deanet/postprocess.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <queue>

namespace deanet {

void PostprocessConfig::validate() const {
    if (min_object_area < 0) {
        throw ConfigError("min_object_area must be >= 0");
    }
}

InstanceMap label_components_4(const InstanceMap& foreground) {
    const int h = foreground.height, w = foreground.width;
    InstanceMap labels(h, w);
    int32_t next = 0;
    std::queue<std::pair<int, int>> frontier;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (foreground.at(y, x) <= 0 || labels.at(y, x) != 0) continue;
            ++next;
            labels.at(y, x) = next;
            frontier.emplace(y, x);
            while (!frontier.empty()) {
                auto [cy, cx] = frontier.front();
                frontier.pop();
                constexpr int dy[] = {-1, 1, 0, 0};
                constexpr int dx[] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = cy + dy[k], nx = cx + dx[k];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    if (foreground.at(ny, nx) > 0 && labels.at(ny, nx) == 0) {
                        labels.at(ny, nx) = next;
                        frontier.emplace(ny, nx);
                    }
                }
            }
        }
    }
    return labels;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Exact squared-Euclidean distance transform that also carries the label of
/// the nearest seed pixel (two-pass separable lower-envelope construction).
struct NearestSeed {
    std::vector<double> dist2;
    std::vector<int32_t> label;
};

NearestSeed nearest_seed_transform(const InstanceMap& seeds) {
    const int h = seeds.height, w = seeds.width;
    const size_t n = static_cast<size_t>(h) * w;

    // Column pass: nearest seed row within each column.
    std::vector<double> col_dist2(n, kInf);
    std::vector<int> col_row(n, -1);
    for (int x = 0; x < w; ++x) {
        int last = -1;
        for (int y = 0; y < h; ++y) {
            if (seeds.at(y, x) > 0) last = y;
            if (last >= 0) {
                col_dist2[static_cast<size_t>(y) * w + x] = double(y - last) * (y - last);
                col_row[static_cast<size_t>(y) * w + x] = last;
            }
        }
        last = -1;
        for (int y = h - 1; y >= 0; --y) {
            if (seeds.at(y, x) > 0) last = y;
            if (last >= 0) {
                const double d = double(last - y) * (last - y);
                auto idx = static_cast<size_t>(y) * w + x;
                if (d < col_dist2[idx]) {
                    col_dist2[idx] = d;
                    col_row[idx] = last;
                }
            }
        }
    }

    // Row pass: lower envelope of parabolas f(x') + (x - x')^2.
    NearestSeed out;
    out.dist2.assign(n, kInf);
    out.label.assign(n, 0);
    std::vector<int> v(w);      // sites of the envelope parabolas
    std::vector<double> z(w + 1); // envelope breakpoints
    for (int y = 0; y < h; ++y) {
        const size_t row_off = static_cast<size_t>(y) * w;
        int k = -1;
        for (int x = 0; x < w; ++x) {
            const double f = col_dist2[row_off + x];
            if (f == kInf) continue;
            double s;
            while (k >= 0) {
                const double fv = col_dist2[row_off + v[k]];
                s = ((f + double(x) * x) - (fv + double(v[k]) * v[k])) / (2.0 * (x - v[k]));
                if (s <= z[k]) {
                    --k;
                } else {
                    break;
                }
            }
            if (k < 0) {
                k = 0;
                v[0] = x;
                z[0] = -kInf;
                z[1] = kInf;
            } else {
                ++k;
                v[k] = x;
                z[k] = s;
                z[k + 1] = kInf;
            }
        }
        if (k < 0) continue; // empty row reach
        int j = 0;
        for (int x = 0; x < w; ++x) {
            while (z[j + 1] < x) ++j;
            const int sx = v[j];
            const double d = col_dist2[row_off + sx] + double(x - sx) * (x - sx);
            out.dist2[row_off + x] = d;
            out.label[row_off + x] = seeds.at(col_row[row_off + sx], sx);
        }
    }
    return out;
}

void fill_holes(InstanceMap& labels) {
    const int h = labels.height, w = labels.width;
    // Flood background from the border; anything 0 left afterwards is a hole.
    std::vector<uint8_t> outside(static_cast<size_t>(h) * w, 0);
    std::queue<std::pair<int, int>> frontier;
    auto push = [&](int y, int x) {
        const auto idx = static_cast<size_t>(y) * w + x;
        if (!outside[idx] && labels.at(y, x) == 0) {
            outside[idx] = 1;
            frontier.emplace(y, x);
        }
    };
    for (int x = 0; x < w; ++x) {
        push(0, x);
        push(h - 1, x);
    }
    for (int y = 0; y < h; ++y) {
        push(y, 0);
        push(y, w - 1);
    }
    while (!frontier.empty()) {
        auto [cy, cx] = frontier.front();
        frontier.pop();
        constexpr int dy[] = {-1, 1, 0, 0};
        constexpr int dx[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
            const int ny = cy + dy[k], nx = cx + dx[k];
            if (ny >= 0 && ny < h && nx >= 0 && nx < w) push(ny, nx);
        }
    }

    // A hole is filled only when it touches exactly one instance.
    InstanceMap hole_ids = [&] {
        InstanceMap holes(h, w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (labels.at(y, x) == 0 && !outside[static_cast<size_t>(y) * w + x]) {
                    holes.at(y, x) = 1;
                }
            }
        }
        return label_components_4(holes);
    }();

    std::map<int32_t, int32_t> fill_with; // hole id -> instance id (-1 = ambiguous)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int32_t hole = hole_ids.at(y, x);
            if (hole == 0) continue;
            constexpr int dy[] = {-1, 1, 0, 0};
            constexpr int dx[] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const int ny = y + dy[k], nx = x + dx[k];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                const int32_t neighbor = labels.at(ny, nx);
                if (neighbor <= 0) continue;
                auto [it, inserted] = fill_with.try_emplace(hole, neighbor);
                if (!inserted && it->second != neighbor) it->second = -1;
            }
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int32_t hole = hole_ids.at(y, x);
            if (hole == 0) continue;
            auto it = fill_with.find(hole);
            if (it != fill_with.end() && it->second > 0) labels.at(y, x) = it->second;
        }
    }
}

} // namespace

InstanceMap instances_from_classes(const InstanceMap& classes, const PostprocessConfig& cfg) {
    cfg.validate();
    const int h = classes.height, w = classes.width;

    InstanceMap interior(h, w);
    for (size_t i = 0; i < classes.ids.size(); ++i) {
        interior.ids[i] = classes.ids[i] == kInterior ? 1 : 0;
    }
    InstanceMap labels = label_components_4(interior);

    // Filter on interior area before boundary pixels are attached.
    std::map<int32_t, int64_t> areas;
    for (int32_t v : labels.ids) {
        if (v > 0) areas[v]++;
    }
    std::map<int32_t, int32_t> remap;
    int32_t next = 0;
    for (const auto& [id, area] : areas) {
        if (area >= cfg.min_object_area) remap[id] = ++next;
    }
    for (auto& v : labels.ids) {
        if (v > 0) {
            auto it = remap.find(v);
            v = it == remap.end() ? 0 : it->second;
        }
    }

    if (cfg.boundary_reassign && next > 0) {
        auto nearest = nearest_seed_transform(labels);
        const double bound2 = kReassignMaxDistance * kReassignMaxDistance;
        for (size_t i = 0; i < classes.ids.size(); ++i) {
            if (classes.ids[i] == kBoundary && labels.ids[i] == 0 && nearest.dist2[i] <= bound2) {
                labels.ids[i] = nearest.label[i];
            }
        }
    }

    if (cfg.fill_holes && next > 0) {
        fill_holes(labels);
    }
    return labels;
}

std::vector<InstanceMap> instances_from_logits(const torch::Tensor& logits,
                                               const PostprocessConfig& cfg) {
    TORCH_CHECK(logits.dim() == 4 && logits.size(1) == kNumClasses,
                "expected B x 3 x H x W logits");
    auto classes = logits.argmax(1).to(torch::kInt32).contiguous();
    std::vector<InstanceMap> out;
    out.reserve(classes.size(0));
    for (int64_t b = 0; b < classes.size(0); ++b) {
        out.push_back(instances_from_classes(instance_map_from_tensor(classes[b]), cfg));
    }
    return out;
}

} // namespace deanet
