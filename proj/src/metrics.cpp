#include "deanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

namespace deanet {

namespace {

struct OverlapTable {
    std::map<int32_t, int64_t> pred_area;
    std::map<int32_t, int64_t> gt_area;
    std::map<std::pair<int32_t, int32_t>, int64_t> intersection; // (pred, gt) -> pixels
};

OverlapTable overlaps(const InstanceMap& pred, const InstanceMap& gt) {
    TORCH_CHECK(pred.height == gt.height && pred.width == gt.width,
                "instance maps must share dimensions");
    OverlapTable table;
    for (size_t i = 0; i < pred.ids.size(); ++i) {
        const int32_t p = pred.ids[i], g = gt.ids[i];
        if (p > 0) table.pred_area[p]++;
        if (g > 0) table.gt_area[g]++;
        if (p > 0 && g > 0) table.intersection[{p, g}]++;
    }
    return table;
}

double set_dice(int64_t area_a, int64_t area_b, int64_t intersection) {
    if (area_a + area_b == 0) return 1.0;
    return 2.0 * intersection / static_cast<double>(area_a + area_b);
}

double point_set_distance(const std::vector<std::pair<int, int>>& from,
                          const std::vector<std::pair<int, int>>& to) {
    double worst = 0.0;
    for (const auto& [ay, ax] : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [by, bx] : to) {
            const double d = double(ay - by) * (ay - by) + double(ax - bx) * (ax - bx);
            if (d < best) best = d;
        }
        if (best > worst) worst = best;
    }
    return std::sqrt(worst);
}

double hausdorff(const std::vector<std::pair<int, int>>& a,
                 const std::vector<std::pair<int, int>>& b) {
    return std::max(point_set_distance(a, b), point_set_distance(b, a));
}

double min_boundary_gap(const std::vector<std::pair<int, int>>& a,
                        const std::vector<std::pair<int, int>>& b) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [ay, ax] : a) {
        for (const auto& [by, bx] : b) {
            const double d = double(ay - by) * (ay - by) + double(ax - bx) * (ax - bx);
            if (d < best) best = d;
        }
    }
    return best;
}

} // namespace

std::vector<std::pair<int, int>> boundary_pixels(const InstanceMap& map, int32_t id) {
    std::vector<std::pair<int, int>> pixels;
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            if (map.at(y, x) != id) continue;
            bool edge = y == 0 || y == map.height - 1 || x == 0 || x == map.width - 1;
            if (!edge) {
                edge = map.at(y - 1, x) != id || map.at(y + 1, x) != id ||
                       map.at(y, x - 1) != id || map.at(y, x + 1) != id;
            }
            if (edge) pixels.emplace_back(y, x);
        }
    }
    return pixels;
}

DetectionScore object_f1(const InstanceMap& pred, const InstanceMap& gt) {
    const auto table = overlaps(pred, gt);

    struct Candidate {
        int64_t intersection;
        int32_t pred_id;
        int32_t gt_id;
    };
    std::vector<Candidate> candidates;
    for (const auto& [key, inter] : table.intersection) {
        const auto [p, g] = key;
        // TP rule: the prediction covers more than half of the GT object.
        if (2 * inter > table.gt_area.at(g)) {
            candidates.push_back({inter, p, g});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.intersection != b.intersection) return a.intersection > b.intersection;
        if (a.pred_id != b.pred_id) return a.pred_id < b.pred_id;
        return a.gt_id < b.gt_id;
    });

    DetectionScore score;
    std::set<int32_t> used_pred, used_gt;
    for (const auto& c : candidates) {
        if (used_pred.count(c.pred_id) || used_gt.count(c.gt_id)) continue;
        used_pred.insert(c.pred_id);
        used_gt.insert(c.gt_id);
        score.matches.pairs.push_back({c.pred_id, c.gt_id, c.intersection});
    }
    for (const auto& [p, _] : table.pred_area) {
        if (!used_pred.count(p)) score.matches.unmatched_pred.push_back(p);
    }
    for (const auto& [g, _] : table.gt_area) {
        if (!used_gt.count(g)) score.matches.unmatched_gt.push_back(g);
    }

    const auto tp = static_cast<double>(score.matches.pairs.size());
    score.precision = table.pred_area.empty() ? 0.0 : tp / table.pred_area.size();
    score.recall = table.gt_area.empty() ? 0.0 : tp / table.gt_area.size();
    score.f1 = (score.precision + score.recall) == 0.0
                   ? 0.0
                   : 2.0 * score.precision * score.recall / (score.precision + score.recall);
    return score;
}

double object_dice(const InstanceMap& pred, const InstanceMap& gt) {
    const auto table = overlaps(pred, gt);
    if (table.pred_area.empty() && table.gt_area.empty()) return 1.0;

    // Maximal-overlap counterpart per object, per direction.
    auto side = [&](const std::map<int32_t, int64_t>& own,
                    const std::map<int32_t, int64_t>& other, bool own_is_gt) {
        int64_t total = 0;
        for (const auto& [_, area] : own) total += area;
        if (total == 0) return 0.0;
        double sum = 0.0;
        for (const auto& [id, area] : own) {
            int64_t best_inter = 0;
            int32_t best_other = 0;
            for (const auto& [other_id, _] : other) {
                const auto key = own_is_gt ? std::make_pair(other_id, id)
                                           : std::make_pair(id, other_id);
                auto it = table.intersection.find(key);
                const int64_t inter = it == table.intersection.end() ? 0 : it->second;
                if (inter > best_inter) {
                    best_inter = inter;
                    best_other = other_id;
                }
            }
            const double weight = static_cast<double>(area) / total;
            const double dice =
                best_other == 0 ? 0.0 : set_dice(area, other.at(best_other), best_inter);
            sum += weight * dice;
        }
        return sum;
    };

    const double gt_side = side(table.gt_area, table.pred_area, /*own_is_gt=*/true);
    const double pred_side = side(table.pred_area, table.gt_area, /*own_is_gt=*/false);
    return 0.5 * (gt_side + pred_side);
}

double object_hausdorff(const InstanceMap& pred, const InstanceMap& gt) {
    const auto table = overlaps(pred, gt);
    if (table.pred_area.empty() && table.gt_area.empty()) return 0.0;
    const double diagonal =
        std::sqrt(double(pred.height) * pred.height + double(pred.width) * pred.width);
    if (table.pred_area.empty() || table.gt_area.empty()) return diagonal;

    std::map<int32_t, std::vector<std::pair<int, int>>> pred_boundary, gt_boundary;
    for (const auto& [id, _] : table.pred_area) pred_boundary[id] = boundary_pixels(pred, id);
    for (const auto& [id, _] : table.gt_area) gt_boundary[id] = boundary_pixels(gt, id);

    auto side = [&](const std::map<int32_t, int64_t>& own,
                    const std::map<int32_t, std::vector<std::pair<int, int>>>& own_boundary,
                    const std::map<int32_t, int64_t>& other,
                    const std::map<int32_t, std::vector<std::pair<int, int>>>& other_boundary,
                    bool own_is_gt) {
        int64_t total = 0;
        for (const auto& [_, area] : own) total += area;
        double sum = 0.0;
        for (const auto& [id, area] : own) {
            int64_t best_inter = 0;
            int32_t counterpart = 0;
            for (const auto& [other_id, _] : other) {
                const auto key = own_is_gt ? std::make_pair(other_id, id)
                                           : std::make_pair(id, other_id);
                auto it = table.intersection.find(key);
                const int64_t inter = it == table.intersection.end() ? 0 : it->second;
                if (inter > best_inter) {
                    best_inter = inter;
                    counterpart = other_id;
                }
            }
            if (counterpart == 0) {
                // No overlap: pair with the object whose boundary is nearest.
                double best_gap = std::numeric_limits<double>::infinity();
                for (const auto& [other_id, pixels] : other_boundary) {
                    const double gap = min_boundary_gap(own_boundary.at(id), pixels);
                    if (gap < best_gap) {
                        best_gap = gap;
                        counterpart = other_id;
                    }
                }
            }
            const double weight = static_cast<double>(area) / total;
            sum += weight * hausdorff(own_boundary.at(id), other_boundary.at(counterpart));
        }
        return sum;
    };

    const double gt_side =
        side(table.gt_area, gt_boundary, table.pred_area, pred_boundary, /*own_is_gt=*/true);
    const double pred_side =
        side(table.pred_area, pred_boundary, table.gt_area, gt_boundary, /*own_is_gt=*/false);
    return 0.5 * (gt_side + pred_side);
}

double pixel_dice(const InstanceMap& pred, const InstanceMap& gt) {
    int64_t inter = 0, pred_fg = 0, gt_fg = 0;
    for (size_t i = 0; i < pred.ids.size(); ++i) {
        const bool p = pred.ids[i] > 0, g = gt.ids[i] > 0;
        pred_fg += p;
        gt_fg += g;
        inter += p && g;
    }
    if (pred_fg + gt_fg == 0) return 1.0;
    return 2.0 * inter / static_cast<double>(pred_fg + gt_fg);
}

MetricReport compute_report(const InstanceMap& pred, const InstanceMap& gt) {
    MetricReport report;
    const auto detection = object_f1(pred, gt);
    report.f1 = detection.f1;
    report.precision = detection.precision;
    report.recall = detection.recall;
    report.object_dice = object_dice(pred, gt);
    report.object_hausdorff = object_hausdorff(pred, gt);
    report.pixel_dice = pixel_dice(pred, gt);
    return report;
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
    MetricReport mean;
    if (reports.empty()) return mean;
    for (const auto& r : reports) {
        mean.f1 += r.f1;
        mean.object_dice += r.object_dice;
        mean.object_hausdorff += r.object_hausdorff;
        mean.precision += r.precision;
        mean.recall += r.recall;
        mean.pixel_dice += r.pixel_dice;
    }
    const double n = static_cast<double>(reports.size());
    mean.f1 /= n;
    mean.object_dice /= n;
    mean.object_hausdorff /= n;
    mean.precision /= n;
    mean.recall /= n;
    mean.pixel_dice /= n;
    return mean;
}

EvaluationResult evaluate_dataset(const ForwardFn& forward, const DatasetManifest& manifest,
                                  const EvalOptions& options) {
    torch::NoGradGuard no_grad;
    EvaluationResult result;

    std::vector<std::string> splits = options.splits;
    if (splits.empty()) {
        std::set<std::string> seen;
        for (const auto& e : manifest.entries) {
            if (seen.insert(e.split).second) splits.push_back(e.split);
        }
    }

    std::map<std::string, std::vector<MetricReport>> per_split;
    for (const auto& split : splits) {
        for (const auto& entry : manifest.split(split)) {
            auto image = load_image(entry.image_path);
            auto gt = instance_map_from_cv(load_instance_annotation(entry.annotation_path));

            const int pad_h =
                (kSizeMultiple - image.rows % kSizeMultiple) % static_cast<int>(kSizeMultiple);
            const int pad_w =
                (kSizeMultiple - image.cols % kSizeMultiple) % static_cast<int>(kSizeMultiple);
            cv::Mat padded = image;
            if (pad_h || pad_w) {
                cv::copyMakeBorder(image, padded, 0, pad_h, 0, pad_w, cv::BORDER_REFLECT_101);
            }
            auto logits = forward(image_to_tensor(padded).unsqueeze(0));
            logits = logits.slice(2, 0, image.rows).slice(3, 0, image.cols);
            auto instances = instances_from_logits(logits, options.post);

            ImageMetrics im;
            im.name = entry.name;
            im.split = split;
            im.report = compute_report(instances[0], gt);
            per_split[split].push_back(im.report);
            result.per_image.push_back(std::move(im));
        }
    }

    std::vector<MetricReport> all;
    std::vector<MetricReport> split_means;
    for (const auto& split : splits) {
        auto it = per_split.find(split);
        if (it == per_split.end() || it->second.empty()) continue;
        SplitSummary summary;
        summary.split = split;
        summary.images = it->second.size();
        summary.mean = mean_report(it->second);
        split_means.push_back(summary.mean);
        all.insert(all.end(), it->second.begin(), it->second.end());
        result.splits.push_back(std::move(summary));
    }
    if (result.splits.size() > 1) {
        // Both test-set aggregations: per-image over the union, and the mean
        // of the per-split means.
        SplitSummary image_mean;
        image_mean.split = "all(image-mean)";
        image_mean.images = all.size();
        image_mean.mean = mean_report(all);
        result.splits.push_back(std::move(image_mean));

        SplitSummary split_mean;
        split_mean.split = "all(split-mean)";
        split_mean.images = all.size();
        split_mean.mean = mean_report(split_means);
        result.splits.push_back(std::move(split_mean));
    }
    return result;
}

void write_metrics_csv(const EvaluationResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write metrics csv: " + path);
    out << "split,name,f1,object_dice,object_hausdorff,precision,recall,pixel_dice\n";
    out << std::fixed << std::setprecision(6);
    for (const auto& im : result.per_image) {
        out << im.split << ',' << im.name << ',' << im.report.f1 << ',' << im.report.object_dice
            << ',' << im.report.object_hausdorff << ',' << im.report.precision << ','
            << im.report.recall << ',' << im.report.pixel_dice << '\n';
    }
    for (const auto& s : result.splits) {
        out << s.split << ",MEAN," << s.mean.f1 << ',' << s.mean.object_dice << ','
            << s.mean.object_hausdorff << ',' << s.mean.precision << ',' << s.mean.recall << ','
            << s.mean.pixel_dice << '\n';
    }
}

std::string format_metric_table(const EvaluationResult& result) {
    std::ostringstream out;
    out << std::left << std::setw(22) << "Split" << std::right << std::setw(8) << "F1(%)"
        << std::setw(10) << "Dice(%)" << std::setw(12) << "Hausdorff" << "\n";
    out << std::string(52, '-') << "\n";
    out << std::fixed << std::setprecision(1);
    for (const auto& s : result.splits) {
        out << std::left << std::setw(22) << s.split << std::right << std::setw(8)
            << s.mean.f1 * 100.0 << std::setw(10) << s.mean.object_dice * 100.0
            << std::setw(12) << std::setprecision(3) << s.mean.object_hausdorff
            << std::setprecision(1) << "\n";
    }
    return out.str();
}

} // namespace deanet
