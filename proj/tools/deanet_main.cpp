#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "deanet/config.hpp"
#include "deanet/metrics.hpp"
#include "deanet/network.hpp"
#include "deanet/postprocess.hpp"
#include "deanet/train.hpp"

namespace fs = std::filesystem;
using namespace deanet;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<int64_t> seed;
    bool deterministic = false;
    bool overwrite = false;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration file");
    cmd->add_option("--override", args.overrides, "key=value override (repeatable)");
    cmd->add_option("--seed", args.seed, "run seed");
    cmd->add_flag("--deterministic", args.deterministic, "single-threaded reproducible mode");
    cmd->add_flag("--overwrite", args.overwrite, "allow reusing an existing run directory");
    cmd->add_option("--out", args.out_dir, "output root directory");
}

RunConfig resolve_config(const CommonArgs& args) {
    KeyValueConfig kv;
    if (!args.config_path.empty()) {
        kv = KeyValueConfig::from_file(args.config_path);
    }
    for (const auto& o : args.overrides) kv.apply_override(o);
    if (args.seed) kv.set("run.seed", std::to_string(*args.seed));
    if (args.deterministic) kv.set("run.deterministic", "true");
    if (args.overwrite) kv.set("run.overwrite", "true");
    if (!args.out_dir.empty()) kv.set("run.out_dir", args.out_dir);
    return RunConfig::resolve(kv);
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y%m%d-%H%M%S");
    return out.str();
}

fs::path prepare_run_dir(const RunConfig& cfg) {
    const auto leaf = cfg.run_name.empty() ? "run-" + timestamp() : cfg.run_name;
    const fs::path dir = fs::path(cfg.out_dir) / leaf;
    if (fs::exists(dir) && !fs::is_empty(dir) && !cfg.overwrite) {
        throw ConfigError("output directory exists: " + dir.string() +
                          " (pass --overwrite to reuse it)");
    }
    fs::create_directories(dir);
    std::ofstream snapshot(dir / "config.resolved.cfg");
    snapshot << cfg.raw.dump();
    return dir;
}

DatasetManifest load_dataset(const RunConfig& cfg) {
    if (cfg.data_root.empty()) {
        throw ConfigError("data.root is not set");
    }
    if (!fs::is_directory(cfg.data_root)) {
        throw DataError("dataset root does not exist: " + cfg.data_root);
    }
    auto manifest = load_manifest(cfg.data_root, cfg.dataset);
    for (const auto& warning : manifest.warnings) {
        std::cerr << "warning: " << warning << "\n";
    }
    return manifest;
}

std::vector<std::string> default_eval_splits(const RunConfig& cfg) {
    return cfg.dataset == DatasetKind::Glas ? std::vector<std::string>{"testA", "testB"}
                                            : std::vector<std::string>{"test"};
}

DeaNet build_model(const RunConfig& cfg) {
    configure_determinism(cfg.train.seed, cfg.train.deterministic);
    return DeaNet(cfg.model);
}

DeaNet load_model(const RunConfig& cfg, const std::string& checkpoint) {
    auto model = build_model(cfg);
    load_checkpoint(checkpoint, model);
    model->eval();
    return model;
}

ForwardFn forward_fn(DeaNet& model) {
    return [&model](const torch::Tensor& x) { return model->forward_tensor(x).final_logits.data; };
}

int cmd_train(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto manifest = load_dataset(cfg);
    const auto run_dir = prepare_run_dir(cfg);

    auto model = build_model(cfg);
    auto train_cfg = cfg.train;
    train_cfg.out_dir = run_dir.string();
    train_cfg.cache_dir = resolve_cache_dir(cfg);
    train_cfg.config_snapshot = cfg.raw.dump();

    const auto result = train(model, manifest, train_cfg);
    std::cout << "trained " << to_string(cfg.model.variant) << " for " << result.epochs_run
              << " epochs, final loss " << result.final_loss << "\n"
              << "metrics: " << result.metrics_csv << "\n"
              << "checkpoints: " << result.best_checkpoint << " / " << result.final_checkpoint
              << "\n";
    return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint,
                 std::vector<std::string> splits) {
    auto cfg = resolve_config(args);
    auto manifest = load_dataset(cfg);
    const auto run_dir = prepare_run_dir(cfg);

    auto model = load_model(cfg, checkpoint);
    EvalOptions options;
    options.post = cfg.train.post;
    options.splits = splits.empty() ? default_eval_splits(cfg) : splits;

    const auto result = evaluate_dataset(forward_fn(model), manifest, options);
    write_metrics_csv(result, (run_dir / "metrics.csv").string());
    const auto table = format_metric_table(result);
    std::ofstream(run_dir / "report.txt") << table;
    std::cout << table;
    return 0;
}

int cmd_predict(const CommonArgs& args, const std::string& checkpoint,
                std::vector<std::string> splits, bool dump_boundary_maps) {
    auto cfg = resolve_config(args);
    auto manifest = load_dataset(cfg);
    const auto run_dir = prepare_run_dir(cfg);

    auto model = load_model(cfg, checkpoint);
    torch::NoGradGuard no_grad;
    if (splits.empty()) splits = default_eval_splits(cfg);

    size_t written = 0;
    for (const auto& split : splits) {
        for (const auto& entry : manifest.split(split)) {
            auto image = load_image(entry.image_path);
            const int pad_h = (16 - image.rows % 16) % 16;
            const int pad_w = (16 - image.cols % 16) % 16;
            cv::Mat padded = image;
            if (pad_h || pad_w) {
                cv::copyMakeBorder(image, padded, 0, pad_h, 0, pad_w, cv::BORDER_REFLECT_101);
            }
            auto outputs = model->forward_tensor(image_to_tensor(padded).unsqueeze(0));
            auto logits =
                outputs.final_logits.data.slice(2, 0, image.rows).slice(3, 0, image.cols);
            auto instances = instances_from_logits(logits, cfg.train.post)[0];

            cv::Mat labels16(instances.height, instances.width, CV_16U);
            for (int y = 0; y < instances.height; ++y) {
                for (int x = 0; x < instances.width; ++x) {
                    labels16.at<uint16_t>(y, x) = static_cast<uint16_t>(instances.at(y, x));
                }
            }
            cv::imwrite((run_dir / (entry.name + "_inst.png")).string(), labels16);
            ++written;

            if (dump_boundary_maps && !outputs.stages.empty()) {
                auto dump = [&](const torch::Tensor& map, const std::string& tag, int stage) {
                    auto scaled = (map[0][0] * 255.0).clamp(0, 255).to(torch::kUInt8).contiguous();
                    cv::Mat gray(static_cast<int>(scaled.size(0)), static_cast<int>(scaled.size(1)),
                                 CV_8U, scaled.data_ptr<uint8_t>());
                    cv::imwrite((run_dir / (entry.name + "_s" + std::to_string(stage + 1) + "_" +
                                            tag + ".png"))
                                    .string(),
                                gray.clone());
                };
                for (size_t k = 0; k < outputs.stages.size(); ++k) {
                    dump(outputs.stages[k].m_g.data, "mg", static_cast<int>(k));
                    dump(outputs.stages[k].m_t.data, "mt", static_cast<int>(k));
                    dump(outputs.stages[k].m_b.data, "mb", static_cast<int>(k));
                }
            }
        }
    }
    std::cout << "wrote " << written << " instance maps to " << run_dir << "\n";
    return 0;
}

struct PaperReferenceRow {
    const char* variant;
    double f1, dice, hausdorff;
};

// Reported GlaS ablation results used for side-by-side comparison.
constexpr PaperReferenceRow kPaperAblation[] = {
    {"backbone", 86.1, 85.1, 87.318},
    {"backbone+ld", 87.4, 86.9, 72.181},
    {"backbone+ld+ffm", 88.1, 87.8, 68.405},
    {"backbone+ld+ffm+bea", 89.1, 88.8, 63.786},
    {"full", 89.3, 89.6, 60.774},
};

int cmd_ablate(const CommonArgs& args, bool with_paper_reference) {
    auto cfg = resolve_config(args);
    auto manifest = load_dataset(cfg);
    const auto run_dir = prepare_run_dir(cfg);

    std::vector<std::string> variants = {"backbone", "backbone+ld", "backbone+ld+ffm",
                                         "backbone+ld+ffm+bea", "full"};
    if (cfg.raw.has("ablate.variants")) {
        variants.clear();
        std::stringstream ss(cfg.raw.get("ablate.variants", ""));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) variants.push_back(item);
        }
    }

    struct Row {
        std::string variant;
        MetricReport mean;
    };
    std::vector<Row> rows;

    for (const auto& name : variants) {
        auto model_cfg = cfg.model;
        model_cfg.variant = variant_from_string(name);
        configure_determinism(cfg.train.seed, cfg.train.deterministic);
        auto model = DeaNet(model_cfg);

        auto train_cfg = cfg.train;
        train_cfg.out_dir = (run_dir / name).string();
        train_cfg.cache_dir = resolve_cache_dir(cfg);
        std::cout << "[ablate] training " << name << "...\n";
        train(model, manifest, train_cfg);

        model->eval();
        EvalOptions options;
        options.post = cfg.train.post;
        options.splits = default_eval_splits(cfg);
        auto eval = evaluate_dataset(forward_fn(model), manifest, options);

        Row row;
        row.variant = name;
        // Prefer the per-image mean across all test splits.
        row.mean = eval.splits.empty() ? MetricReport{} : eval.splits.back().mean;
        for (const auto& s : eval.splits) {
            if (s.split == "all(image-mean)") row.mean = s.mean;
        }
        rows.push_back(std::move(row));
    }

    std::ostringstream table;
    table << std::left << std::setw(22) << "Methods" << std::right << std::setw(8) << "F1(%)"
          << std::setw(10) << "Dice(%)" << std::setw(12) << "Hausdorff";
    if (with_paper_reference) {
        table << std::setw(10) << "refF1" << std::setw(10) << "refDice" << std::setw(12)
              << "refHaus";
    }
    table << "\n" << std::string(with_paper_reference ? 84 : 52, '-') << "\n";
    std::ofstream csv(run_dir / "ablation.csv");
    csv << "variant,f1,object_dice,object_hausdorff\n" << std::fixed << std::setprecision(6);
    for (const auto& row : rows) {
        table << std::left << std::setw(22) << row.variant << std::right << std::fixed
              << std::setprecision(1) << std::setw(8) << row.mean.f1 * 100.0 << std::setw(10)
              << row.mean.object_dice * 100.0 << std::setw(12) << std::setprecision(3)
              << row.mean.object_hausdorff;
        if (with_paper_reference) {
            bool found = false;
            for (const auto& ref : kPaperAblation) {
                if (row.variant == ref.variant) {
                    table << std::setprecision(1) << std::setw(10) << ref.f1 << std::setw(10)
                          << ref.dice << std::setw(12) << std::setprecision(3) << ref.hausdorff;
                    found = true;
                }
            }
            if (!found) table << std::setw(32) << "-";
        }
        table << "\n";
        csv << row.variant << ',' << row.mean.f1 << ',' << row.mean.object_dice << ','
            << row.mean.object_hausdorff << '\n';
    }
    std::ofstream(run_dir / "ablation.txt") << table.str();
    std::cout << table.str();
    return 0;
}

int cmd_make_masks(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto manifest = load_dataset(cfg);
    const auto cache_dir = resolve_cache_dir(cfg);
    if (cache_dir.empty()) {
        throw ConfigError("no cache directory (set data.root or DEANET_CACHE)");
    }
    size_t count = 0;
    for (const auto& entry : manifest.entries) {
        ensure_triple_mask(entry, cfg.train.boundary_width, cache_dir);
        ++count;
    }
    std::cout << "cached " << count << " triple masks (width " << cfg.train.boundary_width
              << ") under " << cache_dir << "\n";
    return 0;
}

int cmd_verify_data(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto manifest = load_dataset(cfg);
    bool ok = false;
    std::cout << to_string(cfg.dataset) << " " << verify_counts(manifest, &ok) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"DEA-Net gland segmentation"};
    app.require_subcommand(1);

    CommonArgs train_args, eval_args, predict_args, ablate_args, masks_args, verify_args;
    std::string eval_checkpoint, predict_checkpoint;
    std::vector<std::string> eval_splits, predict_splits;
    bool dump_boundary_maps = false;
    bool with_paper_reference = false;

    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd, train_args);

    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
    add_common(eval_cmd, eval_args);
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "trained checkpoint")->required();
    eval_cmd->add_option("--split", eval_splits, "splits to evaluate (repeatable)");

    auto* predict_cmd = app.add_subcommand("predict", "write instance-map PNGs");
    add_common(predict_cmd, predict_args);
    predict_cmd->add_option("--checkpoint", predict_checkpoint, "trained checkpoint")->required();
    predict_cmd->add_option("--split", predict_splits, "splits to predict (repeatable)");
    predict_cmd->add_flag("--dump-boundary-maps", dump_boundary_maps,
                          "export per-stage M_g/M_t/M_b maps");

    auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate every ablation variant");
    add_common(ablate_cmd, ablate_args);
    ablate_cmd->add_flag("--with-paper-reference", with_paper_reference,
                         "attach reported reference rows");

    auto* masks_cmd = app.add_subcommand("make-masks", "generate cached triple masks");
    add_common(masks_cmd, masks_args);

    auto* verify_cmd = app.add_subcommand("verify-data", "check dataset layout and counts");
    add_common(verify_cmd, verify_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(train_args);
        if (eval_cmd->parsed()) return cmd_evaluate(eval_args, eval_checkpoint, eval_splits);
        if (predict_cmd->parsed()) {
            return cmd_predict(predict_args, predict_checkpoint, predict_splits,
                               dump_boundary_maps);
        }
        if (ablate_cmd->parsed()) return cmd_ablate(ablate_args, with_paper_reference);
        if (masks_cmd->parsed()) return cmd_make_masks(masks_args);
        if (verify_cmd->parsed()) return cmd_verify_data(verify_args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
