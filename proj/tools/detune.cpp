// Command-line front end: every experiment is one subcommand plus a config
// file, and all artifacts (datasets, models, CSVs) land under --out-dir.

#include "detune/bayes.hpp"
#include "detune/config.hpp"
#include "detune/dataset.hpp"
#include "detune/ensemble.hpp"
#include "detune/errors.hpp"
#include "detune/experiments.hpp"
#include "detune/kernels.hpp"
#include "detune/metrics.hpp"
#include "detune/nn.hpp"
#include "detune/physics.hpp"
#include "detune/tune.hpp"

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace detune;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out_dir = ".";
    int threads = 0;
};

config::ExperimentConfig effective_config(const GlobalArgs& g) {
    config::ExperimentConfig cfg = g.config_path.empty()
                                       ? config::default_config()
                                       : config::load_config(g.config_path);
    if (g.seed_given) cfg.seed = g.seed;
    cfg.validate();
    return cfg;
}

std::string in_out_dir(const GlobalArgs& g, const std::string& name) {
    return (fs::path(g.out_dir) / name).string();
}

double tau_upper(const config::ExperimentConfig& cfg) {
    return physics::kDefaultTauMaxOverGamma / cfg.physics.gamma;
}

nn::TrainConfig train_config(const config::ExperimentConfig& cfg) {
    nn::TrainConfig tc;
    tc.loss = cfg.loss_kind();
    tc.lr = cfg.model.lr;
    tc.beta1 = cfg.model.beta1;
    tc.beta2 = cfg.model.beta2;
    tc.epochs = cfg.model.epochs;
    tc.batch_size = cfg.model.batch_size;
    tc.patience = cfg.model.patience;
    tc.seed = cfg.seed;
    return tc;
}

ensemble::EnsembleTrainConfig ensemble_config(
    const config::ExperimentConfig& cfg, bool adversarial) {
    ensemble::EnsembleTrainConfig ec;
    ec.n_members = cfg.ensemble.m;
    ec.n_bins = cfg.model.n_bins;
    ec.hidden = cfg.model.hidden;
    ec.dropout = cfg.model.dropout;
    ec.tau_min = 0.0;
    ec.tau_max = tau_upper(cfg);
    ec.train = train_config(cfg);
    ec.adversarial = adversarial;
    ec.epsilon = cfg.ensemble.epsilon;
    return ec;
}

std::uintmax_t tree_size(const std::string& path) {
    if (fs::is_directory(path)) {
        std::uintmax_t total = 0;
        for (const auto& entry : fs::recursive_directory_iterator(path))
            if (entry.is_regular_file()) total += entry.file_size();
        return total;
    }
    return fs::file_size(path);
}

// ---------------------------------------------------------------------------
// subcommand bodies

void cmd_generate(const GlobalArgs& g, const std::string& split,
                  std::string out_path) {
    const config::ExperimentConfig cfg = effective_config(g);
    if (out_path.empty()) out_path = in_out_dir(g, split + ".jsonl");
    const dataset::LabeledSet set = split == "train"
                                        ? dataset::generate_train_set(cfg)
                                        : dataset::generate_test_set(cfg);
    dataset::write_jsonl(set, cfg, split, out_path);
    std::cout << "wrote " << out_path << " (" << set.examples.size()
              << " trajectories)\n";
}

void cmd_train_single(const GlobalArgs& g, const std::string& data_path,
                      std::string model_out, std::string log_out) {
    const config::ExperimentConfig cfg = effective_config(g);
    if (model_out.empty()) model_out = in_out_dir(g, "single.model.json");
    if (log_out.empty()) log_out = in_out_dir(g, "single.train_log.csv");

    const dataset::LabeledSet data = dataset::read_jsonl(data_path);
    nn::MlpModel model = nn::make_model(
        cfg.model.n_bins, cfg.model.hidden, cfg.head_kind(), cfg.model.dropout,
        0.0, tau_upper(cfg), cfg.seed);
    const nn::TrainLog log = nn::train(model, data.examples, train_config(cfg));
    nn::save_model(model, model_out);
    experiments::write_train_log_csv(log, log_out);
    std::cout << "wrote " << model_out << " (best epoch " << log.best_epoch
              << ", val loss "
              << log.epochs.at(log.best_epoch - 1).val_loss << ")\n";
}

void cmd_train_ensemble(const GlobalArgs& g, const std::string& data_path,
                        std::string dir_out, bool adversarial_flag) {
    const config::ExperimentConfig cfg = effective_config(g);
    if (dir_out.empty()) dir_out = in_out_dir(g, "ensemble");

    const dataset::LabeledSet data = dataset::read_jsonl(data_path);
    const bool adversarial = adversarial_flag || cfg.ensemble.adversarial;
    std::vector<nn::TrainLog> logs;
    const ensemble::DeepEnsemble e = ensemble::train_ensemble(
        data.examples, ensemble_config(cfg, adversarial), cfg.seed, &logs);
    ensemble::save_ensemble(e, dir_out);
    for (std::size_t m = 0; m < logs.size(); ++m) {
        std::ostringstream name;
        name << "member_" << std::setw(2) << std::setfill('0') << m
             << ".train_log.csv";
        experiments::write_train_log_csv(
            logs[m], (fs::path(dir_out) / name.str()).string());
    }
    std::cout << "wrote " << dir_out << " (" << e.members.size()
              << (adversarial ? " adversarially trained" : "")
              << " members)\n";
}

void cmd_eval(const GlobalArgs& g, const std::string& test_path,
              const std::string& model_path, const std::string& ensemble_dir,
              bool with_bayes, bool with_crb, std::string out_path) {
    const config::ExperimentConfig cfg = effective_config(g);
    if (out_path.empty()) out_path = in_out_dir(g, "metrics.csv");
    DETUNE_REQUIRE(!model_path.empty() || !ensemble_dir.empty() || with_bayes,
                   "eval: nothing to evaluate (pass --model, --ensemble "
                   "and/or --bayes)");

    const dataset::LabeledSet test = dataset::read_jsonl(test_path);
    std::vector<metrics::EvalReport> reports;

    nn::MlpModel model;
    if (!model_path.empty()) {
        model = nn::load_model(model_path);
        reports.push_back(metrics::evaluate(
            "single", experiments::model_adapter(model), test));
    }
    ensemble::DeepEnsemble ens;
    if (!ensemble_dir.empty()) {
        ens = ensemble::load_ensemble(ensemble_dir);
        reports.push_back(metrics::evaluate(
            "ensemble", experiments::ensemble_adapter(ens), test));
    }
    if (with_bayes) {
        const bayes::BayesEstimator b(cfg.physics.omega, cfg.physics.gamma,
                                      cfg.physics.delta_min,
                                      cfg.physics.delta_max, cfg.bayes.n_grid);
        reports.push_back(
            metrics::evaluate("bayes", experiments::bayes_adapter(b), test));
    }
    if (with_crb)
        for (metrics::EvalReport& rep : reports)
            experiments::attach_crb(rep, experiments::crb_from_report(rep, cfg));

    metrics::write_metrics_csv(reports, out_path);
    for (const metrics::EvalReport& rep : reports)
        std::cout << rep.estimator << ": overall rmse " << rep.overall_rmse
                  << ", bias " << rep.overall_bias << ", variance "
                  << rep.overall_variance << "\n";
    std::cout << "wrote " << out_path << "\n";
}

void cmd_crb(const GlobalArgs& g, const std::string& metrics_path,
             const std::string& estimator, std::string out_path) {
    const config::ExperimentConfig cfg = effective_config(g);
    if (out_path.empty()) out_path = in_out_dir(g, "crb.csv");

    const std::vector<metrics::EvalReport> reports =
        metrics::read_metrics_csv(metrics_path);
    const metrics::EvalReport* ref = nullptr;
    for (const metrics::EvalReport& rep : reports)
        if (rep.estimator == estimator) ref = &rep;
    if (!ref)
        throw ConfigError("crb: estimator tag '" + estimator +
                          "' not present in " + metrics_path);

    experiments::write_crb_csv(experiments::crb_from_report(*ref, cfg),
                               out_path);
    std::cout << "wrote " << out_path << "\n";
}

void cmd_ood(const GlobalArgs& g, const std::string& ensemble_dir,
             std::string out_path) {
    const config::ExperimentConfig cfg = effective_config(g);
    if (out_path.empty()) out_path = in_out_dir(g, "ood.csv");
    const ensemble::DeepEnsemble e = ensemble::load_ensemble(ensemble_dir);
    const std::vector<experiments::OodRow> rows =
        experiments::run_ood_uncertainty(e, cfg);
    experiments::write_ood_csv(rows, out_path);
    for (const experiments::OodRow& r : rows)
        std::cout << r.shift << "=" << r.value << ": avg sigma^2 "
                  << r.avg_sigma2 << "\n";
    std::cout << "wrote " << out_path << "\n";
}

void cmd_tune(const GlobalArgs& g, const std::string& data_path,
              std::size_t trials_override) {
    const config::ExperimentConfig cfg = effective_config(g);
    const std::size_t n_trials =
        trials_override ? trials_override : cfg.tuner.n_trials;
    const dataset::LabeledSet data = dataset::read_jsonl(data_path);

    const tune::TuneResult result =
        tune::random_search_tune(data.examples, n_trials, cfg.seed);
    tune::write_trials_csv(result, in_out_dir(g, "trials.csv"));
    tune::write_best_json(result, cfg, in_out_dir(g, "best.json"));
    const tune::TrialResult& best = result.trials[result.best_index];
    std::cout << "best trial " << best.index << ": val rmse " << best.val_rmse
              << "\nwrote " << in_out_dir(g, "trials.csv") << " and "
              << in_out_dir(g, "best.json") << "\n";
}

void cmd_quantize(const GlobalArgs& g, const std::string& model_path,
                  const std::string& ensemble_dir, std::string out_path) {
    DETUNE_REQUIRE(model_path.empty() != ensemble_dir.empty(),
                   "quantize: pass exactly one of --model / --ensemble");
    std::string src = model_path.empty() ? ensemble_dir : model_path;
    if (!model_path.empty()) {
        if (out_path.empty()) out_path = in_out_dir(g, "single.int8.model.json");
        nn::save_model(nn::quantize(nn::load_model(model_path)), out_path);
    } else {
        if (out_path.empty()) out_path = in_out_dir(g, "ensemble.int8");
        ensemble::save_ensemble(
            ensemble::quantize(ensemble::load_ensemble(ensemble_dir)),
            out_path);
    }
    const double ratio =
        double(tree_size(src)) / double(tree_size(out_path));
    std::cout << "wrote " << out_path << " (" << ratio << "x smaller)\n";
}

void cmd_time(const GlobalArgs& g, const std::string& ensemble_dir,
              std::string out_path) {
    const config::ExperimentConfig cfg = effective_config(g);
    if (out_path.empty()) out_path = in_out_dir(g, "timing.csv");
    const ensemble::DeepEnsemble e = ensemble::load_ensemble(ensemble_dir);
    const std::vector<experiments::TimingRow> rows =
        experiments::time_inference(e, cfg);
    experiments::write_timing_csv(rows, out_path);
    for (const experiments::TimingRow& r : rows)
        std::cout << r.method << " n=" << r.n_trajectories << ": " << r.seconds
                  << " s\n";
    std::cout << "wrote " << out_path << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"delay-time detuning estimation: simulation, Bayes, "
                 "networks, ensembles"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "JSON experiment config");
    auto* seed_opt =
        app.add_option("--seed", g.seed, "master seed (overrides config)");
    app.add_option("--out-dir", g.out_dir, "artifact directory (default .)");
    app.add_option("--threads", g.threads, "worker threads (0 = default)");

    auto* c_gen = app.add_subcommand("generate", "sample a dataset split");
    std::string split, gen_out;
    c_gen->add_option("--split", split, "train or test")
        ->required()
        ->check(CLI::IsMember({"train", "test"}));
    c_gen->add_option("--out", gen_out, "output JSONL path");

    auto* c_single = app.add_subcommand("train-single", "train one network");
    std::string ts_data, ts_model_out, ts_log_out;
    c_single->add_option("--data", ts_data, "training JSONL")->required();
    c_single->add_option("--model-out", ts_model_out, "model output path");
    c_single->add_option("--log-out", ts_log_out, "training-log CSV path");

    auto* c_ens = app.add_subcommand("train-ensemble", "train a deep ensemble");
    std::string te_data, te_dir;
    bool te_adv = false;
    c_ens->add_option("--data", te_data, "training JSONL")->required();
    c_ens->add_option("--dir-out", te_dir, "ensemble output directory");
    c_ens->add_flag("--adversarial", te_adv, "FGSM adversarial training");

    auto* c_eval = app.add_subcommand("eval", "evaluate estimators on a test set");
    std::string ev_test, ev_model, ev_ensemble, ev_out;
    bool ev_bayes = false, ev_crb = false;
    c_eval->add_option("--test", ev_test, "test JSONL")->required();
    c_eval->add_option("--model", ev_model, "single-model file");
    c_eval->add_option("--ensemble", ev_ensemble, "ensemble directory");
    c_eval->add_flag("--bayes", ev_bayes, "include the grid-Bayes estimator");
    c_eval->add_flag("--with-crb", ev_crb,
                     "attach biased Cramer-Rao bounds to every estimator");
    c_eval->add_option("--out", ev_out, "metrics CSV path");

    auto* c_bayes = app.add_subcommand(
        "bayes-eval", "evaluate the grid-Bayes estimator on a test set");
    std::string be_test, be_out;
    bool be_crb = false;
    c_bayes->add_option("--test", be_test, "test JSONL")->required();
    c_bayes->add_flag("--with-crb", be_crb, "attach biased Cramer-Rao bounds");
    c_bayes->add_option("--out", be_out, "metrics CSV path");

    auto* c_crb = app.add_subcommand(
        "crb", "biased Cramer-Rao curve from an evaluated bias profile");
    std::string cr_metrics, cr_estimator = "bayes", cr_out;
    c_crb->add_option("--metrics", cr_metrics, "metrics CSV input")->required();
    c_crb->add_option("--estimator", cr_estimator,
                      "reference estimator tag (default bayes)");
    c_crb->add_option("--out", cr_out, "curve CSV path");

    auto* c_ood = app.add_subcommand(
        "ood", "predictive variance under generator shift");
    std::string oo_ensemble, oo_out;
    c_ood->add_option("--ensemble", oo_ensemble, "ensemble directory")
        ->required();
    c_ood->add_option("--out", oo_out, "OOD CSV path");

    auto* c_tune = app.add_subcommand("tune", "random-search hyperparameters");
    std::string tu_data;
    std::size_t tu_trials = 0;
    c_tune->add_option("--data", tu_data, "training JSONL")->required();
    c_tune->add_option("--trials", tu_trials, "trial count (overrides config)");

    auto* c_quant = app.add_subcommand("quantize", "int8-quantize a model");
    std::string qz_model, qz_ensemble, qz_out;
    c_quant->add_option("--model", qz_model, "single-model file");
    c_quant->add_option("--ensemble", qz_ensemble, "ensemble directory");
    c_quant->add_option("--out", qz_out, "output path");

    auto* c_time = app.add_subcommand("time", "inference wall-clock benchmark");
    std::string tm_ensemble, tm_out;
    c_time->add_option("--ensemble", tm_ensemble, "ensemble directory")
        ->required();
    c_time->add_option("--out", tm_out, "timing CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    g.seed_given = seed_opt->count() > 0;

#ifdef _OPENMP
    if (g.threads > 0) omp_set_num_threads(g.threads);
#endif

    try {
        std::error_code ec;
        fs::create_directories(g.out_dir, ec);
        if (ec) throw IoError("cannot create out-dir: " + g.out_dir);

        if (app.got_subcommand(c_gen)) cmd_generate(g, split, gen_out);
        else if (app.got_subcommand(c_single))
            cmd_train_single(g, ts_data, ts_model_out, ts_log_out);
        else if (app.got_subcommand(c_ens))
            cmd_train_ensemble(g, te_data, te_dir, te_adv);
        else if (app.got_subcommand(c_eval))
            cmd_eval(g, ev_test, ev_model, ev_ensemble, ev_bayes, ev_crb,
                     ev_out);
        else if (app.got_subcommand(c_bayes))
            cmd_eval(g, be_test, "", "", /*with_bayes=*/true, be_crb, be_out);
        else if (app.got_subcommand(c_crb))
            cmd_crb(g, cr_metrics, cr_estimator, cr_out);
        else if (app.got_subcommand(c_ood)) cmd_ood(g, oo_ensemble, oo_out);
        else if (app.got_subcommand(c_tune)) cmd_tune(g, tu_data, tu_trials);
        else if (app.got_subcommand(c_quant))
            cmd_quantize(g, qz_model, qz_ensemble, qz_out);
        else if (app.got_subcommand(c_time)) cmd_time(g, tm_ensemble, tm_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical diagnostic: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
