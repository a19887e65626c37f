#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "detune/config.hpp"
#include "detune/ensemble.hpp"
#include "detune/fsio.hpp"
#include "detune/metrics.hpp"
#include "detune/nn.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace detune;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string output;
};

const char* cli_binary() {
    const char* bin = std::getenv("DETUNE_CLI");
    REQUIRE_MESSAGE(bin != nullptr,
                    "DETUNE_CLI must point at the command-line binary");
    return bin;
}

RunResult run_cli(const std::string& args, const fs::path& scratch) {
    const std::string out_file = (scratch / "cmd_output.txt").string();
    const std::string cmd =
        std::string(cli_binary()) + " " + args + " > " + out_file + " 2>&1";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    if (raw != -1 && WIFEXITED(raw)) r.code = WEXITSTATUS(raw);
    r.output = fsio::read_file(out_file);
    return r;
}

struct Workspace {
    fs::path dir;
    explicit Workspace(const std::string& name)
        : dir(fs::temp_directory_path() / name) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }
    std::string file(const std::string& name) const {
        return (dir / name).string();
    }
};

// Desk-scale configuration: every stage finishes in well under a second.
const char* kTinyConfig = R"({
  "seed": 42,
  "dataset": {"n_train": 24, "n_delays": 4,
              "n_test_deltas": 3, "n_test_per_delta": 3},
  "model": {"n_bins": 16, "hidden": [8, 6], "epochs": 2,
            "batch_size": 16, "patience": 2},
  "ensemble": {"m": 2},
  "bayes": {"n_grid": 100},
  "ood": {"omega_list": [1.0, 1.5], "sigma_tau_list": [0.0, 0.5],
          "n_trajectories": 8},
  "timing": {"counts": [1, 4], "repetitions": 10}
})";

std::string write_config(const Workspace& ws, const char* text,
                         const std::string& name = "config.json") {
    const std::string path = ws.file(name);
    std::ofstream out(path);
    out << text;
    return path;
}

} // namespace

TEST_CASE("full pipeline: generate, train, evaluate, analyze, quantize") {
    Workspace ws("detune_cli_pipeline");
    const std::string cfg_path = write_config(ws, kTinyConfig);
    const std::string base = "--config " + cfg_path + " --out-dir " +
                             (ws.dir / "artifacts").string() + " ";
    const fs::path art = ws.dir / "artifacts";

    // -- dataset generation, byte-stable across runs
    auto r = run_cli(base + "generate --split train", ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(art / "train.jsonl"));
    CHECK(fs::exists(art / "train.jsonl.manifest.json"));

    r = run_cli(base + "generate --split train --out " + ws.file("again.jsonl"),
                ws.dir);
    REQUIRE(r.code == 0);
    CHECK(fsio::read_file((art / "train.jsonl").string()) ==
          fsio::read_file(ws.file("again.jsonl")));

    r = run_cli(base + "generate --split test", ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(art / "test.jsonl"));

    // -- single network
    r = run_cli(base + "train-single --data " + (art / "train.jsonl").string(),
                ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(art / "single.model.json"));
    REQUIRE(fs::exists(art / "single.train_log.csv"));
    {
        std::ifstream log((art / "single.train_log.csv").string());
        std::string header;
        std::getline(log, header);
        CHECK(header == "epoch,train_loss,val_loss");
    }
    CHECK_NOTHROW(nn::load_model((art / "single.model.json").string()));

    // -- ensemble (two members) with per-member logs
    r = run_cli(base + "--threads 2 train-ensemble --data " +
                    (art / "train.jsonl").string(),
                ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(art / "ensemble" / "ensemble.json"));
    CHECK(fs::exists(art / "ensemble" / "member_00.model.json"));
    CHECK(fs::exists(art / "ensemble" / "member_01.model.json"));
    CHECK(fs::exists(art / "ensemble" / "member_00.train_log.csv"));
    const auto ens =
        ensemble::load_ensemble((art / "ensemble").string());
    CHECK(ens.members.size() == 2);

    // -- evaluation of all three estimators with bounds attached
    r = run_cli(base + "eval --test " + (art / "test.jsonl").string() +
                    " --model " + (art / "single.model.json").string() +
                    " --ensemble " + (art / "ensemble").string() +
                    " --bayes --with-crb",
                ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    const auto reports =
        metrics::read_metrics_csv((art / "metrics.csv").string());
    REQUIRE(reports.size() == 3);
    CHECK(reports[0].estimator == "single");
    CHECK(reports[1].estimator == "ensemble");
    CHECK(reports[2].estimator == "bayes");
    for (const auto& rep : reports) {
        CHECK(rep.bins.size() == 3);
        // The bound is undefined at delta = 0 (zero Fisher information by
        // symmetry) and that bin's cell stays empty; the rest carry values.
        for (const auto& bin : rep.bins)
            CHECK(bin.crb.has_value() == (bin.delta > 0.0));
    }

    // -- bayes-only shortcut writes the same kind of report
    r = run_cli(base + "bayes-eval --test " + (art / "test.jsonl").string() +
                    " --out " + ws.file("bayes_only.csv"),
                ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    const auto bayes_only = metrics::read_metrics_csv(ws.file("bayes_only.csv"));
    REQUIRE(bayes_only.size() == 1);
    CHECK(bayes_only[0].estimator == "bayes");
    CHECK(bayes_only[0].overall_rmse == reports[2].overall_rmse);

    // -- bound curve recomputed from the stored metrics
    r = run_cli(base + "crb --metrics " + (art / "metrics.csv").string(),
                ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    {
        std::ifstream in((art / "crb.csv").string());
        std::string header;
        std::getline(in, header);
        CHECK(header == "delta,fisher,bias_slope,bound");
        std::string line;
        std::size_t rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 3);
    }
    r = run_cli(base + "crb --metrics " + (art / "metrics.csv").string() +
                    " --estimator nonexistent",
                ws.dir);
    CHECK(r.code == 2);

    // -- distribution-shift uncertainty sweep
    r = run_cli(base + "ood --ensemble " + (art / "ensemble").string(),
                ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    {
        std::ifstream in((art / "ood.csv").string());
        std::string header;
        std::getline(in, header);
        CHECK(header == "shift,value,avg_sigma2");
        std::string line;
        std::size_t rows = 0, omega_rows = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ++rows;
            if (line.rfind("omega,", 0) == 0) ++omega_rows;
        }
        CHECK(rows == 4);
        CHECK(omega_rows == 2);
    }

    // -- inference timing table
    r = run_cli(base + "time --ensemble " + (art / "ensemble").string(),
                ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    {
        std::ifstream in((art / "timing.csv").string());
        std::string header;
        std::getline(in, header);
        CHECK(header == "method,n_trajectories,seconds");
        std::string line;
        std::size_t ensemble_rows = 0, bayes_rows = 0;
        while (std::getline(in, line)) {
            if (line.rfind("ensemble,", 0) == 0) ++ensemble_rows;
            if (line.rfind("bayes-grid,", 0) == 0) ++bayes_rows;
        }
        CHECK(ensemble_rows == 2); // counts {1, 4}
        CHECK(bayes_rows == 2);
    }

    // -- int8 conversion of the single model and of the whole ensemble
    r = run_cli(base + "quantize --model " +
                    (art / "single.model.json").string() + " --out " +
                    ws.file("single.int8.json"),
                ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    const auto fsize = fs::file_size(art / "single.model.json");
    const auto qsize = fs::file_size(ws.file("single.int8.json"));
    // JSON boilerplate dominates this deliberately tiny model, so the ratio
    // sits below the asymptotic value; it must still shrink substantially.
    CHECK(double(fsize) / double(qsize) >= 2.5);
    const auto qm = nn::load_model(ws.file("single.int8.json"));
    CHECK(qm.precision == nn::Precision::Int8);

    r = run_cli(base + "quantize --ensemble " + (art / "ensemble").string() +
                    " --out " + ws.file("ensemble_int8"),
                ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    const auto qens = ensemble::load_ensemble(ws.file("ensemble_int8"));
    for (const auto& m : qens.members)
        CHECK(m.precision == nn::Precision::Int8);
}

TEST_CASE("hyperparameter search produces ranked trials and a best config") {
    Workspace ws("detune_cli_tune");
    const std::string cfg_path = write_config(ws, kTinyConfig);
    const std::string base = "--config " + cfg_path + " --out-dir " +
                             (ws.dir / "artifacts").string() + " ";
    const fs::path art = ws.dir / "artifacts";

    auto r = run_cli(base + "generate --split train", ws.dir);
    REQUIRE(r.code == 0);
    r = run_cli(base + "tune --data " + (art / "train.jsonl").string() +
                    " --trials 2",
                ws.dir);
    INFO(r.output);
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(art / "trials.csv"));
    REQUIRE(fs::exists(art / "best.json"));

    const auto best = config::load_config((art / "best.json").string());
    CHECK_NOTHROW(best.validate());
    CHECK(best.model.head == "scalar");
    {
        std::ifstream in((art / "trials.csv").string());
        std::string header;
        std::getline(in, header);
        CHECK(header ==
              "trial,status,n_bins,loss,lr,beta1,beta2,epochs,batch_size,"
              "dropout,patience,val_rmse");
    }
}

TEST_CASE("seed precedence: the flag overrides the config") {
    Workspace ws("detune_cli_seed");
    const std::string cfg_path = write_config(ws, kTinyConfig);
    const std::string base = "--config " + cfg_path + " ";

    auto r = run_cli(base + "--seed 1 generate --split train --out " +
                         ws.file("s1.jsonl"),
                     ws.dir);
    REQUIRE(r.code == 0);
    r = run_cli(base + "--seed 1 generate --split train --out " +
                    ws.file("s1b.jsonl"),
                ws.dir);
    REQUIRE(r.code == 0);
    r = run_cli(base + "--seed 2 generate --split train --out " +
                    ws.file("s2.jsonl"),
                ws.dir);
    REQUIRE(r.code == 0);
    CHECK(fsio::read_file(ws.file("s1.jsonl")) ==
          fsio::read_file(ws.file("s1b.jsonl")));
    CHECK(fsio::read_file(ws.file("s1.jsonl")) !=
          fsio::read_file(ws.file("s2.jsonl")));
    // The default-config seed (42) differs from both overrides.
    r = run_cli(base + "generate --split train --out " + ws.file("s42.jsonl"),
                ws.dir);
    REQUIRE(r.code == 0);
    CHECK(fsio::read_file(ws.file("s42.jsonl")) !=
          fsio::read_file(ws.file("s1.jsonl")));
}

TEST_CASE("exit codes separate usage, config, io and numerical failures") {
    Workspace ws("detune_cli_errors");
    const std::string cfg_path = write_config(ws, kTinyConfig);

    // Usage errors -> 2.
    CHECK(run_cli("", ws.dir).code == 2);
    CHECK(run_cli("no-such-command", ws.dir).code == 2);
    CHECK(run_cli("generate --split nowhere", ws.dir).code == 2);
    CHECK(run_cli("generate", ws.dir).code == 2); // --split is required
    const std::string base = "--config " + cfg_path + " ";
    CHECK(run_cli(base + "eval --test missing.jsonl", ws.dir).code ==
          2); // no estimator requested
    CHECK(run_cli(base + "quantize --model a --ensemble b", ws.dir).code == 2);

    // Configuration errors -> 2.
    const std::string bad_json = write_config(ws, "{oops", "bad.json");
    CHECK(run_cli("--config " + bad_json + " generate --split train --out " +
                      ws.file("x.jsonl"),
                  ws.dir)
              .code == 2);
    const std::string unknown_key =
        write_config(ws, R"({"model": {"bins": 3}})", "unknown.json");
    CHECK(run_cli("--config " + unknown_key +
                      " generate --split train --out " + ws.file("y.jsonl"),
                  ws.dir)
              .code == 2);
    const std::string inconsistent = write_config(
        ws, R"({"model": {"head": "gaussian", "loss": "rmse"}})",
        "inconsistent.json");
    CHECK(run_cli("--config " + inconsistent +
                      " generate --split train --out " + ws.file("z.jsonl"),
                  ws.dir)
              .code == 2);

    // Missing files -> 3.
    CHECK(run_cli("--config /nonexistent/config.json generate --split train",
                  ws.dir)
              .code == 3);
    CHECK(run_cli(base + "train-single --data " + ws.file("missing.jsonl"),
                  ws.dir)
              .code == 3);
    CHECK(run_cli(base + "ood --ensemble " + ws.file("missing_dir"), ws.dir)
              .code == 3);

    // Numerical failures -> 4: a drive too weak for the delay window.
    const std::string weak_drive = write_config(
        ws,
        R"({"physics": {"omega": 0.05},
            "dataset": {"n_train": 2, "n_delays": 2}})",
        "weak.json");
    const auto r = run_cli("--config " + weak_drive +
                               " generate --split train --out " +
                               ws.file("w.jsonl"),
                           ws.dir);
    INFO(r.output);
    CHECK(r.code == 4);

    // Help is not an error.
    CHECK(run_cli("--help", ws.dir).code == 0);
    CHECK(run_cli("generate --help", ws.dir).code == 0);
}
