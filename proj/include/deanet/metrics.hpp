#pragma once

#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "deanet/core_types.hpp"
#include "deanet/data.hpp"
#include "deanet/postprocess.hpp"

namespace deanet {

/// Greedy overlap matching between predicted and ground-truth objects.
struct MatchTable {
    struct Pair {
        int32_t pred_id;
        int32_t gt_id;
        int64_t intersection;
    };
    std::vector<Pair> pairs; // true positives; each id appears at most once
    std::vector<int32_t> unmatched_pred;
    std::vector<int32_t> unmatched_gt;
};

struct DetectionScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    MatchTable matches;
};

/// Challenge detection rule: a prediction is a true positive when it covers
/// more than 50% of a ground-truth object; candidates are accepted largest
/// intersection first, each object matched at most once.
DetectionScore object_f1(const InstanceMap& pred, const InstanceMap& gt);

/// Area-weighted symmetric object-level Dice: every object is paired with
/// its maximally-overlapping counterpart (Dice 0 when none overlaps).
double object_dice(const InstanceMap& pred, const InstanceMap& gt);

/// Area-weighted symmetric object-level Hausdorff over boundary pixel sets
/// (exact Euclidean). Objects without an overlapping counterpart are paired
/// with the nearest-boundary object of the other map; against an entirely
/// empty map the distance is the image diagonal.
double object_hausdorff(const InstanceMap& pred, const InstanceMap& gt);

/// Dice of the binary foregrounds (any positive id).
double pixel_dice(const InstanceMap& pred, const InstanceMap& gt);

/// Boundary pixels of each object: object pixels with a 4-neighbor outside
/// the object or at the image edge.
std::vector<std::pair<int, int>> boundary_pixels(const InstanceMap& map, int32_t id);

MetricReport compute_report(const InstanceMap& pred, const InstanceMap& gt);

// -- dataset-level evaluation ------------------------------------------------

using ForwardFn = std::function<torch::Tensor(const torch::Tensor&)>; // logits from a batch

struct EvalOptions {
    PostprocessConfig post;
    std::vector<std::string> splits; // empty = every split in the manifest
};

struct ImageMetrics {
    std::string name;
    std::string split;
    MetricReport report;
};

struct SplitSummary {
    std::string split;
    size_t images = 0;
    MetricReport mean;
};

struct EvaluationResult {
    std::vector<ImageMetrics> per_image;
    std::vector<SplitSummary> splits; // per split, plus combined rows for GlaS
};

/// Runs the model over every evaluation image (reflect-padded to a multiple
/// of 16), extracts instances and scores them against the ground truth.
EvaluationResult evaluate_dataset(const ForwardFn& forward, const DatasetManifest& manifest,
                                  const EvalOptions& options);

MetricReport mean_report(const std::vector<MetricReport>& reports);

/// CSV rows: split/name, F1, objDice, objHausdorff, precision, recall, pixelDice.
void write_metrics_csv(const EvaluationResult& result, const std::string& path);

/// Text table in the reporting column order F1 (%), Dice (%), Hausdorff.
std::string format_metric_table(const EvaluationResult& result);

} // namespace deanet
