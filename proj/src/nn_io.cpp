#include "detune/nn.hpp"

#include "detune/errors.hpp"
#include "detune/fsio.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace detune::nn {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "detune-model";
constexpr int kVersion = 1;

// Weights train in double but the persisted float path is tagged "float32",
// so values are rounded through binary32 on save.
double f32(double v) { return double(float(v)); }

void check_chain(const MlpModel& m) {
    const std::size_t n_layers =
        m.precision == Precision::Float32 ? m.layers.size() : m.qlayers.size();
    if (n_layers == 0) throw IoError("model file: no layers");
    std::size_t prev = m.hist.n_bins;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::size_t rows = m.precision == Precision::Float32
                                     ? m.layers[l].rows
                                     : m.qlayers[l].rows;
        const std::size_t cols = m.precision == Precision::Float32
                                     ? m.layers[l].cols
                                     : m.qlayers[l].cols;
        if (cols != prev)
            throw IoError("model file: layer widths are inconsistent");
        prev = rows;
    }
    if (prev != m.head_dim())
        throw IoError("model file: head width does not match the head kind");
}

} // namespace

void save_model(const MlpModel& m, const std::string& path) {
    json j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    j["precision"] =
        m.precision == Precision::Float32 ? "float32" : "int8-quantized";
    j["histogram"] = {{"n_bins", m.hist.n_bins},
                      {"tau_min", m.hist.tau_min},
                      {"tau_max", m.hist.tau_max},
                      {"log_bandwidth", f32(m.hist.log_bandwidth)}};
    j["head"] = m.head == Head::Gaussian ? "gaussian" : "scalar";
    j["dropout"] = m.dropout;

    json layers = json::array();
    if (m.precision == Precision::Float32) {
        for (const Dense& d : m.layers) {
            json jd;
            jd["rows"] = d.rows;
            jd["cols"] = d.cols;
            json w = json::array();
            for (const double v : d.w) w.push_back(f32(v));
            json b = json::array();
            for (const double v : d.b) b.push_back(f32(v));
            jd["w"] = std::move(w);
            jd["b"] = std::move(b);
            layers.push_back(std::move(jd));
        }
    } else {
        for (const QuantizedDense& d : m.qlayers) {
            json jd;
            jd["rows"] = d.rows;
            jd["cols"] = d.cols;
            jd["w_q"] = json::array();
            for (const std::int8_t v : d.wq) jd["w_q"].push_back(int(v));
            jd["w_scale"] = d.w_scale;
            jd["w_zero_point"] = d.w_zero_point;
            jd["b_q"] = json::array();
            for (const std::int8_t v : d.bq) jd["b_q"].push_back(int(v));
            jd["b_scale"] = d.b_scale;
            jd["b_zero_point"] = d.b_zero_point;
            layers.push_back(std::move(jd));
        }
    }
    j["layers"] = std::move(layers);

    fsio::write_file_atomic(path, [&](std::ostream& out) {
        out << j.dump() << '\n';
    });
}

MlpModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path);

    MlpModel m;
    try {
        const json j = json::parse(in);
        if (j.at("format").get<std::string>() != kFormat)
            throw IoError("not a detune model file: " + path);
        if (j.at("version").get<int>() != kVersion)
            throw IoError("unsupported model file version in " + path);

        const std::string prec = j.at("precision").get<std::string>();
        if (prec == "float32")
            m.precision = Precision::Float32;
        else if (prec == "int8-quantized")
            m.precision = Precision::Int8;
        else
            throw IoError("unknown precision tag '" + prec + "' in " + path);

        const json& h = j.at("histogram");
        m.hist.n_bins = h.at("n_bins").get<std::size_t>();
        m.hist.tau_min = h.at("tau_min").get<double>();
        m.hist.tau_max = h.at("tau_max").get<double>();
        m.hist.log_bandwidth = h.at("log_bandwidth").get<double>();

        const std::string head = j.at("head").get<std::string>();
        if (head == "gaussian")
            m.head = Head::Gaussian;
        else if (head == "scalar")
            m.head = Head::Scalar;
        else
            throw IoError("unknown head tag '" + head + "' in " + path);
        m.dropout = j.at("dropout").get<double>();

        for (const json& jd : j.at("layers")) {
            if (m.precision == Precision::Float32) {
                Dense d;
                d.rows = jd.at("rows").get<std::size_t>();
                d.cols = jd.at("cols").get<std::size_t>();
                d.w = jd.at("w").get<std::vector<double>>();
                d.b = jd.at("b").get<std::vector<double>>();
                if (d.w.size() != d.rows * d.cols || d.b.size() != d.rows)
                    throw IoError("model file: tensor size mismatch in " +
                                  path);
                m.layers.push_back(std::move(d));
            } else {
                QuantizedDense d;
                d.rows = jd.at("rows").get<std::size_t>();
                d.cols = jd.at("cols").get<std::size_t>();
                for (const json& v : jd.at("w_q"))
                    d.wq.push_back(static_cast<std::int8_t>(v.get<int>()));
                d.w_scale = jd.at("w_scale").get<double>();
                d.w_zero_point = jd.at("w_zero_point").get<int>();
                for (const json& v : jd.at("b_q"))
                    d.bq.push_back(static_cast<std::int8_t>(v.get<int>()));
                d.b_scale = jd.at("b_scale").get<double>();
                d.b_zero_point = jd.at("b_zero_point").get<int>();
                if (d.wq.size() != d.rows * d.cols || d.bq.size() != d.rows)
                    throw IoError("model file: tensor size mismatch in " +
                                  path);
                d.b_deq.resize(d.bq.size());
                for (std::size_t i = 0; i < d.bq.size(); ++i)
                    d.b_deq[i] = d.b_scale * double(d.bq[i]);
                m.qlayers.push_back(std::move(d));
            }
        }
    } catch (const json::exception& e) {
        throw IoError("failed to parse model file " + path + ": " + e.what());
    }

    check_chain(m);
    return m;
}

} // namespace detune::nn
