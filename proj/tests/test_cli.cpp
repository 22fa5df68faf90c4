#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "deanet/config.hpp"
#include "support/fixtures.hpp"

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

using namespace deanet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("deanet_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string cli_path() {
    const char* env = std::getenv("DEANET_CLI");
    REQUIRE_MESSAGE(env != nullptr, "DEANET_CLI must point at the deanet binary");
    return env;
}

int run_cli(const std::string& args, const fs::path& log) {
    const auto cmd = cli_path() + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("key-value config files parse with comments and sections") {
    TempDir dir("cfg");
    const auto path = dir.path / "run.cfg";
    std::ofstream(path) << "# comment line\n"
                        << "data.dataset = glas\n"
                        << "train.lr = 5e-4   # trailing comment\n"
                        << "loss.stage_weights = 1.0, 0.8, 0.6, 0.4\n"
                        << "run.deterministic = true\n";
    auto kv = KeyValueConfig::from_file(path.string());
    CHECK(kv.get("data.dataset", "") == "glas");
    CHECK(kv.get_real("train.lr", 0) == doctest::Approx(5e-4));
    CHECK(kv.get_flag("run.deterministic", false));
    const auto weights = kv.get_reals("loss.stage_weights", {});
    REQUIRE(weights.size() == 4);
    CHECK(weights[1] == doctest::Approx(0.8));
}

TEST_CASE("malformed config lines and values are config errors") {
    TempDir dir("cfg_bad");
    const auto path = dir.path / "bad.cfg";
    std::ofstream(path) << "data.dataset glas\n";
    CHECK_THROWS_AS(KeyValueConfig::from_file(path.string()), ConfigError);

    KeyValueConfig kv;
    kv.set("train.epochs", "ten");
    CHECK_THROWS_AS(kv.get_int("train.epochs", 1), ConfigError);
    kv.set("run.deterministic", "maybe");
    CHECK_THROWS_AS(kv.get_flag("run.deterministic", false), ConfigError);
    CHECK_THROWS_AS(kv.apply_override("no-equals-sign"), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::from_file("/nonexistent.cfg"), ConfigError);
}

TEST_CASE("overrides win over file values and dump is sorted") {
    KeyValueConfig kv;
    kv.set("train.lr", "1e-3");
    kv.set("a.key", "1");
    kv.apply_override("train.lr=5e-4");
    CHECK(kv.get_real("train.lr", 0) == doctest::Approx(5e-4));
    const auto dump = kv.dump();
    CHECK(dump.find("a.key = 1\n") < dump.find("train.lr = 5e-4\n"));
}

TEST_CASE("resolved run config carries the documented defaults") {
    KeyValueConfig kv;
    auto cfg = RunConfig::resolve(kv);
    CHECK(cfg.dataset == DatasetKind::Glas);
    CHECK(cfg.model.variant == Variant::Full);
    CHECK(cfg.model.base_width == 64);
    CHECK(cfg.train.epochs == 1000);
    CHECK(cfg.train.batch_size == 4);
    CHECK(cfg.train.lr == doctest::Approx(5e-4));
    CHECK(cfg.train.aug.crop_h == 416);
    CHECK(cfg.train.boundary_width == 2);
    CHECK(cfg.train.loss.variance_lambda == doctest::Approx(0.1));
    CHECK(cfg.train.post.min_object_area == 100);
    CHECK(cfg.model.ld_lr_multiplier == doctest::Approx(0.1));
    CHECK_FALSE(cfg.model.freeze_ld);

    kv.set("data.dataset", "crag");
    auto crag = RunConfig::resolve(kv);
    CHECK(crag.train.aug.crop_h == 512);
}

TEST_CASE("cache dir resolution honors DEANET_CACHE") {
    KeyValueConfig kv;
    kv.set("data.root", "/data/root");
    auto cfg = RunConfig::resolve(kv);
    unsetenv("DEANET_CACHE");
    CHECK(resolve_cache_dir(cfg) == "/data/root/cache");
    setenv("DEANET_CACHE", "/tmp/deanet-cache-test", 1);
    CHECK(resolve_cache_dir(cfg) == "/tmp/deanet-cache-test");
    unsetenv("DEANET_CACHE");
}

TEST_CASE("cli: missing dataset root exits 3 and names the path") {
    TempDir out("cli_missing");
    const auto log = out.path / "log.txt";
    const int code = run_cli("verify-data --override data.root=/no/such/dir", log);
    CHECK(code == 3);
    CHECK(slurp(log).find("/no/such/dir") != std::string::npos);
}

TEST_CASE("cli: missing config key for data root exits 2") {
    TempDir out("cli_nocfg");
    const auto log = out.path / "log.txt";
    const int code = run_cli("verify-data", log);
    CHECK(code == 2);
}

TEST_CASE("cli: verify-data reports fixture counts") {
    TempDir data("cli_verify"), out("cli_verify_out");
    fixtures::SynthOptions options;
    options.height = options.width = 32;
    fixtures::write_glas_fixture(data.path.string(), 3, 2, 40, options);
    const auto log = out.path / "log.txt";
    const int code = run_cli("verify-data --override data.root=" + data.path.string(), log);
    CHECK(code == 0);
    const auto text = slurp(log);
    CHECK(text.find("3/2/0") != std::string::npos);
    CHECK(text.find("MISMATCH") != std::string::npos);
}

TEST_CASE("cli: train smoke run produces artifacts and respects overwrite") {
    TempDir data("cli_train"), out("cli_train_out");
    fixtures::SynthOptions options;
    options.height = options.width = 32;
    fixtures::write_glas_fixture(data.path.string(), 3, 0, 41, options);

    std::ostringstream args;
    args << "train --override data.root=" << data.path.string()
         << " --override run.out_dir=" << out.path.string()
         << " --override run.name=smoke"
         << " --override model.base_width=4 --override model.ld_channels=4"
         << " --override train.epochs=1 --override train.batch_size=2"
         << " --override train.val_fraction=0"
         << " --override aug.crop_h=32 --override aug.crop_w=32"
         << " --override post.min_object_area=4"
         << " --seed 7";
    const auto log = out.path / "log.txt";
    REQUIRE(run_cli(args.str(), log) == 0);
    CHECK(fs::exists(out.path / "smoke" / "ckpt_final.pt"));
    CHECK(fs::exists(out.path / "smoke" / "metrics.csv"));
    CHECK(fs::exists(out.path / "smoke" / "config.resolved.cfg"));

    // same run directory without --overwrite refuses to clobber
    CHECK(run_cli(args.str(), log) == 2);
    CHECK(slurp(log).find("--overwrite") != std::string::npos);
    // with --overwrite it reuses the directory
    CHECK(run_cli(args.str() + " --overwrite", log) == 0);

    // evaluate the produced checkpoint on the train split
    std::ostringstream eval_args;
    eval_args << "evaluate --checkpoint " << (out.path / "smoke" / "ckpt_final.pt").string()
              << " --override data.root=" << data.path.string()
              << " --override run.out_dir=" << out.path.string()
              << " --override run.name=eval --split train"
              << " --override model.base_width=4 --override model.ld_channels=4"
              << " --override post.min_object_area=4 --seed 7";
    REQUIRE(run_cli(eval_args.str(), log) == 0);
    CHECK(fs::exists(out.path / "eval" / "metrics.csv"));
    CHECK(slurp(log).find("F1(%)") != std::string::npos);

    // predict writes one instance PNG per image
    std::ostringstream pred_args;
    pred_args << "predict --checkpoint " << (out.path / "smoke" / "ckpt_final.pt").string()
              << " --override data.root=" << data.path.string()
              << " --override run.out_dir=" << out.path.string()
              << " --override run.name=pred --split train --dump-boundary-maps"
              << " --override model.base_width=4 --override model.ld_channels=4 --seed 7";
    REQUIRE(run_cli(pred_args.str(), log) == 0);
    CHECK(fs::exists(out.path / "pred" / "train_1_inst.png"));
    CHECK(fs::exists(out.path / "pred" / "train_1_s1_mg.png"));
    CHECK(fs::exists(out.path / "pred" / "train_1_s1_mt.png"));
    CHECK(fs::exists(out.path / "pred" / "train_1_s1_mb.png"));
}

TEST_CASE("cli: make-masks caches triple masks") {
    TempDir data("cli_masks"), out("cli_masks_out");
    fixtures::SynthOptions options;
    options.height = options.width = 32;
    fixtures::write_glas_fixture(data.path.string(), 2, 0, 42, options);
    const auto cache = out.path / "cache";
    setenv("DEANET_CACHE", cache.c_str(), 1);
    const auto log = out.path / "log.txt";
    const int code = run_cli("make-masks --override data.root=" + data.path.string(), log);
    unsetenv("DEANET_CACHE");
    CHECK(code == 0);
    CHECK(fs::exists(cache / "train_1_triple_w2.png"));
    CHECK(fs::exists(cache / "train_2_triple_w2.png"));
}

TEST_CASE("cli: checkpoint for the wrong variant exits 2") {
    TempDir data("cli_wrongvar"), out("cli_wrongvar_out");
    fixtures::SynthOptions options;
    options.height = options.width = 32;
    fixtures::write_glas_fixture(data.path.string(), 2, 0, 43, options);

    std::ostringstream train_args;
    train_args << "train --override data.root=" << data.path.string()
               << " --override run.out_dir=" << out.path.string()
               << " --override run.name=m --override model.variant=backbone"
               << " --override model.base_width=4 --override train.epochs=1"
               << " --override train.batch_size=2 --override train.val_fraction=0"
               << " --override aug.crop_h=32 --override aug.crop_w=32 --seed 1";
    const auto log = out.path / "log.txt";
    REQUIRE(run_cli(train_args.str(), log) == 0);

    std::ostringstream eval_args;
    eval_args << "evaluate --checkpoint " << (out.path / "m" / "ckpt_final.pt").string()
              << " --override data.root=" << data.path.string()
              << " --override run.out_dir=" << out.path.string()
              << " --override run.name=e --split train"
              << " --override model.variant=full --override model.base_width=4 --seed 1";
    CHECK(run_cli(eval_args.str(), log) == 2);
    CHECK(slurp(log).find("architecture") != std::string::npos);
}

TEST_CASE("cli: ablate runs the requested variants and emits the table") {
    TempDir data("cli_ablate"), out("cli_ablate_out");
    fixtures::SynthOptions options;
    options.height = options.width = 32;
    fixtures::write_glas_fixture(data.path.string(), 4, 2, 44, options);

    std::ostringstream args;
    args << "ablate --override data.root=" << data.path.string()
         << " --override run.out_dir=" << out.path.string()
         << " --override run.name=ab"
         << " --override ablate.variants=backbone,full"
         << " --override model.base_width=4 --override model.ld_channels=4"
         << " --override train.epochs=1 --override train.batch_size=2"
         << " --override train.val_fraction=0"
         << " --override aug.crop_h=32 --override aug.crop_w=32"
         << " --override post.min_object_area=4"
         << " --seed 3 --with-paper-reference";
    const auto log = out.path / "log.txt";
    REQUIRE(run_cli(args.str(), log) == 0);
    const auto text = slurp(log);
    CHECK(text.find("backbone") != std::string::npos);
    CHECK(text.find("full") != std::string::npos);
    CHECK(text.find("refF1") != std::string::npos);
    CHECK(text.find("86.1") != std::string::npos); // reference row attached

    std::ifstream csv(out.path / "ab" / "ablation.csv");
    REQUIRE(csv.good());
    std::string header;
    std::getline(csv, header);
    CHECK(header == "variant,f1,object_dice,object_hausdorff");
    int rows = 0;
    for (std::string line; std::getline(csv, line);) ++rows;
    CHECK(rows == 2);
}

TEST_CASE("cli: the resolved config snapshot reproduces the run") {
    TempDir data("cli_repro"), out("cli_repro_out");
    fixtures::SynthOptions options;
    options.height = options.width = 32;
    fixtures::write_glas_fixture(data.path.string(), 4, 0, 45, options);

    std::ostringstream args;
    args << "train --deterministic --seed 11"
         << " --override data.root=" << data.path.string()
         << " --override run.out_dir=" << out.path.string()
         << " --override run.name=orig"
         << " --override model.base_width=4 --override model.ld_channels=4"
         << " --override train.epochs=1 --override train.batch_size=2"
         << " --override train.val_fraction=0"
         << " --override aug.crop_h=32 --override aug.crop_w=32"
         << " --override post.min_object_area=4";
    const auto log = out.path / "log.txt";
    REQUIRE(run_cli(args.str(), log) == 0);

    std::ostringstream replay;
    replay << "train --config " << (out.path / "orig" / "config.resolved.cfg").string()
           << " --override run.name=replay";
    REQUIRE(run_cli(replay.str(), log) == 0);

    CHECK(slurp(out.path / "orig" / "metrics.csv") ==
          slurp(out.path / "replay" / "metrics.csv"));
    CHECK(!slurp(out.path / "orig" / "metrics.csv").empty());
}
