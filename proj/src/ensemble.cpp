#include "detune/ensemble.hpp"

#include "detune/errors.hpp"
#include "detune/fsio.hpp"
#include "detune/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace detune::ensemble {

using nlohmann::json;

DeepEnsemble train_ensemble(const std::vector<nn::Example>& data,
                            const EnsembleTrainConfig& cfg,
                            std::uint64_t master_seed,
                            std::vector<nn::TrainLog>* logs) {
    DETUNE_REQUIRE(cfg.n_members >= 1, "train_ensemble: need >= 1 member");

    DeepEnsemble e;
    e.adversarial = cfg.adversarial;
    e.epsilon = cfg.adversarial ? cfg.epsilon : 0.0;
    e.members.resize(cfg.n_members);
    e.member_seeds.resize(cfg.n_members);
    if (logs) logs->resize(cfg.n_members);

    for (std::size_t m = 0; m < cfg.n_members; ++m)
        e.member_seeds[m] = rng::derive(master_seed, rng::Stream::Member, m);

#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t m = 0; m < cfg.n_members; ++m) {
        nn::MlpModel model =
            nn::make_model(cfg.n_bins, cfg.hidden, nn::Head::Gaussian,
                           cfg.dropout, cfg.tau_min, cfg.tau_max,
                           e.member_seeds[m]);
        nn::TrainConfig tc = cfg.train;
        tc.loss = nn::Loss::GaussianNll;
        tc.seed = e.member_seeds[m];
        tc.adversarial = cfg.adversarial;
        tc.epsilon = cfg.epsilon;
        nn::TrainLog log = nn::train(model, data, tc);
        e.members[m] = std::move(model);
        if (logs) (*logs)[m] = std::move(log);
    }
    return e;
}

EnsemblePrediction predict(const DeepEnsemble& e,
                           const std::vector<double>& delays,
                           bool printed_variance_form) {
    DETUNE_REQUIRE(!e.members.empty(), "predict: empty ensemble");
    EnsemblePrediction out;
    out.members.reserve(e.members.size());

    double mu_acc = 0.0;
    double second_acc = 0.0; // mean of sigma_m^2 + mu_m^2
    for (const nn::MlpModel& m : e.members) {
        const nn::Prediction p = nn::predict(m, delays);
        DETUNE_REQUIRE(p.sigma2.has_value(),
                       "predict: ensemble members need Gaussian heads");
        mu_acc += p.mu;
        second_acc += *p.sigma2 + p.mu * p.mu;
        out.members.push_back(p);
    }
    const double inv_m = 1.0 / double(e.members.size());
    out.mu = mu_acc * inv_m;
    const double correction = printed_variance_form ? out.mu : out.mu * out.mu;
    out.sigma2 = second_acc * inv_m - correction;
    return out;
}

std::vector<double> fgsm_example(const std::vector<double>& delays,
                                 const std::vector<double>& grad, double eps) {
    DETUNE_REQUIRE(delays.size() == grad.size(),
                   "fgsm_example: delays/grad size mismatch");
    DETUNE_REQUIRE(eps >= 0.0, "fgsm_example: eps must be >= 0");
    std::vector<double> out(delays.size());
    for (std::size_t i = 0; i < delays.size(); ++i) {
        const double s = double((grad[i] > 0.0) - (grad[i] < 0.0));
        out[i] = delays[i] + eps * s;
    }
    return out;
}

DeepEnsemble quantize(const DeepEnsemble& e) {
    DeepEnsemble out;
    out.member_seeds = e.member_seeds;
    out.adversarial = e.adversarial;
    out.epsilon = e.epsilon;
    out.members.reserve(e.members.size());
    for (const nn::MlpModel& m : e.members) out.members.push_back(nn::quantize(m));
    return out;
}

namespace {

std::string member_file(std::size_t m) {
    std::ostringstream name;
    name << "member_" << std::setw(2) << std::setfill('0') << m
         << ".model.json";
    return name.str();
}

} // namespace

void save_ensemble(const DeepEnsemble& e, const std::string& dir) {
    DETUNE_REQUIRE(!e.members.empty(), "save_ensemble: empty ensemble");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create ensemble directory " + dir);

    json manifest;
    manifest["format"] = "detune-ensemble";
    manifest["version"] = 1;
    manifest["m"] = e.members.size();
    manifest["adversarial"] = e.adversarial;
    manifest["epsilon"] = e.epsilon;
    manifest["member_seeds"] = e.member_seeds;
    json files = json::array();
    for (std::size_t m = 0; m < e.members.size(); ++m) {
        const std::string name = member_file(m);
        nn::save_model(e.members[m], (fs::path(dir) / name).string());
        files.push_back(name);
    }
    manifest["members"] = std::move(files);

    const std::string manifest_path = (fs::path(dir) / "ensemble.json").string();
    fsio::write_file_atomic(manifest_path, [&](std::ostream& out) {
        out << manifest.dump(2) << '\n';
    });
}

DeepEnsemble load_ensemble(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "ensemble.json").string();
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw IoError("cannot open ensemble manifest: " + manifest_path);

    DeepEnsemble e;
    try {
        const json manifest = json::parse(in);
        if (manifest.at("format").get<std::string>() != "detune-ensemble")
            throw IoError("not an ensemble manifest: " + manifest_path);
        if (manifest.at("version").get<int>() != 1)
            throw IoError("unsupported ensemble version in " + manifest_path);
        e.adversarial = manifest.at("adversarial").get<bool>();
        e.epsilon = manifest.at("epsilon").get<double>();
        e.member_seeds =
            manifest.at("member_seeds").get<std::vector<std::uint64_t>>();
        for (const json& name : manifest.at("members")) {
            e.members.push_back(nn::load_model(
                (fs::path(dir) / name.get<std::string>()).string()));
        }
    } catch (const json::exception& ex) {
        throw IoError("failed to parse ensemble manifest " + manifest_path +
                      ": " + ex.what());
    }
    if (e.members.empty())
        throw IoError("ensemble manifest lists no members: " + manifest_path);
    return e;
}

} // namespace detune::ensemble
