#include "deanet/train.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace deanet {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lr < 0) throw ConfigError("lr must be >= 0");
    if (val_interval < 1 || ckpt_interval < 1) throw ConfigError("intervals must be >= 1");
    if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("val_fraction must be in [0,1)");
    if (boundary_width < 1) throw ConfigError("boundary_width must be >= 1");
    aug.validate();
    loss.validate();
    post.validate();
}

void configure_determinism(uint64_t seed, bool deterministic) {
    torch::manual_seed(seed);
    if (deterministic) {
        at::set_num_threads(1);
    }
}

namespace {

struct LoadedSample {
    cv::Mat image;
    cv::Mat triple;
    cv::Mat instances;
    std::string name;
};

std::vector<LoadedSample> load_samples(const std::vector<ManifestEntry>& entries,
                                       int boundary_width, const std::string& cache_dir) {
    std::vector<LoadedSample> samples;
    samples.reserve(entries.size());
    for (const auto& entry : entries) {
        LoadedSample s;
        s.name = entry.name;
        s.image = load_image(entry.image_path);
        s.instances = load_instance_annotation(entry.annotation_path);
        s.triple = ensure_triple_mask(entry, boundary_width, cache_dir);
        samples.push_back(std::move(s));
    }
    return samples;
}

struct Batch {
    ImageBatch images;
    TripleMask target;
};

Batch assemble_batch(const std::vector<LoadedSample>& samples, const std::vector<size_t>& indices,
                     const AugmentConfig& aug, uint64_t seed, uint64_t epoch) {
    std::vector<torch::Tensor> images, masks;
    Batch batch;
    for (size_t idx : indices) {
        const auto& s = samples[idx];
        auto augmented = augment(s.image, s.triple, s.instances, aug, mix_seed(seed, epoch, idx));
        images.push_back(image_to_tensor(augmented.image));
        masks.push_back(mask_to_tensor(augmented.triple));
        batch.images.ids.push_back(s.name);
    }
    batch.images.data = torch::stack(images);
    batch.target.data = torch::stack(masks);
    return batch;
}

double foreground_dice(const torch::Tensor& logits, const torch::Tensor& target) {
    auto pred_fg = logits.argmax(1) != kBackground;
    auto gt_fg = target != kBackground;
    const double inter = (pred_fg & gt_fg).sum().item<double>();
    const double denom = pred_fg.sum().item<double>() + gt_fg.sum().item<double>();
    return denom == 0 ? 1.0 : 2.0 * inter / denom;
}

std::string csv_header() {
    return "epoch,loss,ce_s1,ce_s2,ce_s3,ce_s4,var_s1,var_s2,var_s3,var_s4,mb,"
           "val_f1,val_obj_dice,val_obj_hausdorff";
}

} // namespace

void save_checkpoint(const std::string& path, DeaNet& model, torch::optim::Adam& optimizer,
                     const CheckpointMeta& meta) {
    torch::serialize::OutputArchive archive;
    archive.write("epoch", torch::tensor(meta.epoch));
    archive.write("arch_hash", meta.arch_hash);
    archive.write("config", meta.config_snapshot);
    torch::serialize::OutputArchive model_archive;
    model->save(model_archive);
    archive.write("model", model_archive);
    torch::serialize::OutputArchive opt_archive;
    optimizer.save(opt_archive);
    archive.write("optimizer", opt_archive);
    archive.save_to(path);
}

namespace {

CheckpointMeta read_meta(torch::serialize::InputArchive& archive, const std::string& path) {
    CheckpointMeta meta;
    torch::Tensor epoch;
    archive.read("epoch", epoch);
    meta.epoch = epoch.item<int64_t>();
    c10::IValue hash, config;
    archive.read("arch_hash", hash);
    archive.read("config", config);
    meta.arch_hash = hash.toStringRef();
    meta.config_snapshot = config.toStringRef();
    (void)path;
    return meta;
}

torch::serialize::InputArchive open_checkpoint(const std::string& path) {
    if (!fs::exists(path)) {
        throw DataError("checkpoint not found: " + path);
    }
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path);
    } catch (const c10::Error& e) {
        throw DataError("checkpoint unreadable: " + path + " (" + e.what_without_backtrace() +
                        ")");
    }
    return archive;
}

} // namespace

CheckpointMeta peek_checkpoint(const std::string& path) {
    auto archive = open_checkpoint(path);
    return read_meta(archive, path);
}

CheckpointMeta load_checkpoint(const std::string& path, DeaNet& model,
                               torch::optim::Adam* optimizer) {
    auto archive = open_checkpoint(path);
    auto meta = read_meta(archive, path);
    if (meta.arch_hash != model->architecture_hash()) {
        throw ConfigError("checkpoint architecture mismatch: checkpoint " + meta.arch_hash +
                          " vs model " + model->architecture_hash() + " (" +
                          model->architecture_description() + ")");
    }
    torch::serialize::InputArchive model_archive;
    archive.read("model", model_archive);
    model->load(model_archive);
    if (optimizer) {
        torch::serialize::InputArchive opt_archive;
        archive.read("optimizer", opt_archive);
        optimizer->load(opt_archive);
    }
    return meta;
}

TrainResult train(DeaNet& model, const DatasetManifest& manifest, const TrainConfig& cfg) {
    cfg.validate();

    auto train_entries = manifest.split("train");
    if (train_entries.empty()) {
        throw DataError("training split is empty");
    }
    const size_t val_count =
        static_cast<size_t>(static_cast<double>(train_entries.size()) * cfg.val_fraction);
    std::vector<ManifestEntry> val_entries(train_entries.end() - val_count, train_entries.end());
    train_entries.resize(train_entries.size() - val_count);

    auto samples = load_samples(train_entries, cfg.boundary_width, cfg.cache_dir);

    std::vector<torch::optim::OptimizerParamGroup> groups;
    groups.emplace_back(model->main_parameters(),
                        std::make_unique<torch::optim::AdamOptions>(cfg.lr));
    if (auto ld_params = model->ld_parameters(); !ld_params.empty()) {
        groups.emplace_back(ld_params, std::make_unique<torch::optim::AdamOptions>(
                                           cfg.lr * model->cfg.ld_lr_multiplier));
    }
    torch::optim::Adam optimizer(groups, torch::optim::AdamOptions(cfg.lr));

    CheckpointMeta meta;
    meta.arch_hash = model->architecture_hash();
    meta.config_snapshot =
        cfg.config_snapshot.empty() ? model->architecture_description() : cfg.config_snapshot;

    int start_epoch = 1;
    if (!cfg.resume.empty()) {
        auto resumed = load_checkpoint(cfg.resume, model, &optimizer);
        start_epoch = static_cast<int>(resumed.epoch) + 1;
    }

    TrainResult result;
    std::ofstream csv;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        result.metrics_csv = (fs::path(cfg.out_dir) / "metrics.csv").string();
        csv.open(result.metrics_csv, cfg.resume.empty() ? std::ios::out : std::ios::app);
        if (cfg.resume.empty()) csv << csv_header() << "\n";
        csv << std::fixed << std::setprecision(6);
    }

    auto run_validation = [&]() -> std::optional<MetricReport> {
        if (val_entries.empty()) return std::nullopt;
        model->eval();
        DatasetManifest val_manifest = manifest;
        val_manifest.entries = val_entries;
        EvalOptions options;
        options.post = cfg.post;
        options.splits = {"train"};
        auto eval = evaluate_dataset(
            [&](const torch::Tensor& x) { return model->forward_tensor(x).final_logits.data; },
            val_manifest, options);
        model->train();
        if (eval.splits.empty()) return std::nullopt;
        return eval.splits[0].mean;
    };

    double best_val_dice = -1.0;
    double best_loss = std::numeric_limits<double>::infinity();
    model->train();
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
        // Batch order must be a pure function of (seed, epoch): restart from
        // the identity permutation before every shuffle.
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(),
                     std::mt19937_64(mix_seed(cfg.seed, static_cast<uint64_t>(epoch), 0x5eedULL)));

        double epoch_loss = 0.0, epoch_dice = 0.0;
        std::array<double, 4> epoch_ce{}, epoch_var{};
        double epoch_mb = 0.0;
        int batches = 0;

        for (size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const size_t end = std::min(order.size(), begin + cfg.batch_size);
            std::vector<size_t> indices(order.begin() + begin, order.begin() + end);
            auto batch = assemble_batch(samples, indices, cfg.aug, cfg.seed,
                                        static_cast<uint64_t>(epoch));

            optimizer.zero_grad();
            auto outputs = model->forward(batch.images);
            auto loss = compute_loss(outputs, batch.target, cfg.loss);
            loss.total.backward();
            optimizer.step();

            epoch_loss += loss.total.item<double>();
            for (int k = 0; k < 4; ++k) {
                epoch_ce[k] += loss.stage_ce[k].item<double>();
                epoch_var[k] += loss.stage_var[k].item<double>();
            }
            if (loss.mb_term.defined()) epoch_mb += loss.mb_term.item<double>();
            epoch_dice += foreground_dice(outputs.final_logits.data.detach(), batch.target.data);
            ++batches;
        }

        epoch_loss /= batches;
        epoch_dice /= batches;
        for (auto& v : epoch_ce) v /= batches;
        for (auto& v : epoch_var) v /= batches;
        epoch_mb /= batches;

        std::optional<MetricReport> val;
        if (epoch % cfg.val_interval == 0 || epoch == cfg.epochs) {
            val = run_validation();
        }

        if (csv.is_open()) {
            csv << epoch << ',' << epoch_loss;
            for (double v : epoch_ce) csv << ',' << v;
            for (double v : epoch_var) csv << ',' << v;
            csv << ',' << epoch_mb;
            if (val) {
                csv << ',' << val->f1 << ',' << val->object_dice << ',' << val->object_hausdorff;
            } else {
                csv << ",,,";
            }
            csv << '\n';
            csv.flush();
        }

        meta.epoch = epoch;
        if (!cfg.out_dir.empty()) {
            bool improved = false;
            if (val) {
                improved = val->object_dice > best_val_dice;
                if (improved) {
                    best_val_dice = val->object_dice;
                    result.best_val_object_dice = best_val_dice;
                }
            } else if (val_entries.empty()) {
                // No validation split: fall back to best training loss.
                improved = epoch_loss < best_loss;
                if (improved) best_loss = epoch_loss;
            }
            if (improved) {
                result.best_checkpoint = (fs::path(cfg.out_dir) / "ckpt_best.pt").string();
                save_checkpoint(result.best_checkpoint, model, optimizer, meta);
            }
            if (epoch % cfg.ckpt_interval == 0) {
                save_checkpoint(
                    (fs::path(cfg.out_dir) / ("ckpt_epoch" + std::to_string(epoch) + ".pt"))
                        .string(),
                    model, optimizer, meta);
            }
        }

        result.epochs_run = epoch;
        result.final_loss = epoch_loss;
        result.final_train_pixel_dice = epoch_dice;
    }

    if (!cfg.out_dir.empty() && cfg.epochs >= start_epoch) {
        result.final_checkpoint = (fs::path(cfg.out_dir) / "ckpt_final.pt").string();
        save_checkpoint(result.final_checkpoint, model, optimizer, meta);
        if (result.best_checkpoint.empty()) result.best_checkpoint = result.final_checkpoint;
    }
    return result;
}

} // namespace deanet
