#pragma once

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "deanet/data.hpp"
#include "deanet/metrics.hpp"
#include "deanet/network.hpp"

namespace deanet {

struct TrainConfig {
    int epochs = 1000;
    int batch_size = 4;
    double lr = 5e-4;
    uint64_t seed = 0;
    bool deterministic = false;
    int val_interval = 1;   // epochs between validation passes
    int ckpt_interval = 100; // epochs between periodic checkpoints
    double val_fraction = 0.1; // last fraction of training entries held out
    int boundary_width = 2;
    AugmentConfig aug;
    LossConfig loss;
    PostprocessConfig post;
    std::string out_dir;    // run directory; empty disables artifacts
    std::string cache_dir;  // triple-mask cache; empty disables caching
    std::string resume;     // checkpoint to resume from
    std::string config_snapshot; // resolved config text embedded in checkpoints

    void validate() const;
};

struct TrainResult {
    int epochs_run = 0;
    double final_loss = 0.0;
    double final_train_pixel_dice = 0.0; // train-mode foreground dice, last epoch
    double best_val_object_dice = 0.0;
    std::string best_checkpoint;
    std::string final_checkpoint;
    std::string metrics_csv;
};

/// Adam training loop with deep supervision, per-epoch CSV logging,
/// best/interval checkpoints and deterministic batch order under a fixed
/// seed. The sample stream is a pure function of (seed, epoch).
TrainResult train(DeaNet& model, const DatasetManifest& manifest, const TrainConfig& cfg);

/// Applies deterministic-mode process settings (manual seed, single-threaded
/// kernels). Call before constructing the model.
void configure_determinism(uint64_t seed, bool deterministic);

// -- checkpoints --------------------------------------------------------------

struct CheckpointMeta {
    int64_t epoch = 0;
    std::string arch_hash;
    std::string config_snapshot;
};

void save_checkpoint(const std::string& path, DeaNet& model, torch::optim::Adam& optimizer,
                     const CheckpointMeta& meta);

/// Restores model (and optimizer when given). Throws ConfigError when the
/// stored architecture hash differs from the constructed model's.
CheckpointMeta load_checkpoint(const std::string& path, DeaNet& model,
                               torch::optim::Adam* optimizer = nullptr);

/// Loads only the metadata block (for inspection).
CheckpointMeta peek_checkpoint(const std::string& path);

} // namespace deanet
