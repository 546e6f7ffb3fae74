#include <fstream>

#include <json.hpp>

#include "advlora/errors.hpp"
#include "advlora/model.hpp"
#include "advlora/numio.hpp"

namespace advlora {

namespace {

using json = nlohmann::ordered_json;

json matrix_to_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    json data = json::array();
    for (std::size_t i = 0; i < m.size(); ++i) data.push_back(to_hex_double(m.data()[i]));
    j["data"] = std::move(data);
    return j;
}

Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    const auto& data = j.at("data");
    if (data.size() != m.size())
        throw ParseError("checkpoint matrix data length mismatch");
    for (std::size_t i = 0; i < m.size(); ++i)
        m.data()[i] = from_hex_double(data[i].get<std::string>());
    return m;
}

const char* band_name(LayerBand b) {
    switch (b) {
    case LayerBand::all: return "all";
    case LayerBand::up: return "up";
    case LayerBand::bottom: return "bottom";
    case LayerBand::half_up: return "half-up";
    case LayerBand::half_bottom: return "half-bottom";
    case LayerBand::mid: return "mid";
    case LayerBand::explicit_list: return "explicit";
    }
    return "all";
}

LayerBand band_from_name(const std::string& s) {
    if (s == "all") return LayerBand::all;
    if (s == "up") return LayerBand::up;
    if (s == "bottom") return LayerBand::bottom;
    if (s == "half-up") return LayerBand::half_up;
    if (s == "half-bottom") return LayerBand::half_bottom;
    if (s == "mid") return LayerBand::mid;
    if (s == "explicit") return LayerBand::explicit_list;
    throw ParseError("unknown placement band '" + s + "'");
}

const char* target_name(MatrixTarget t) {
    switch (t) {
    case MatrixTarget::all: return "all";
    case MatrixTarget::q_only: return "q";
    case MatrixTarget::v_only: return "v";
    case MatrixTarget::qv: return "qv";
    }
    return "all";
}

MatrixTarget target_from_name(const std::string& s) {
    if (s == "all") return MatrixTarget::all;
    if (s == "q") return MatrixTarget::q_only;
    if (s == "v") return MatrixTarget::v_only;
    if (s == "qv") return MatrixTarget::qv;
    throw ParseError("unknown matrix target '" + s + "'");
}

} // namespace

std::string checkpoint_to_string(const AdapterModel& model, bool store_frozen) {
    const ModelConfig& cfg = model.config;
    json j;
    j["format"] = "advlora-checkpoint-v1";
    j["input_dim"] = cfg.input_dim;
    j["layer_dims"] = cfg.layer_dims;
    j["num_classes"] = cfg.num_classes;
    j["rank"] = cfg.rank;
    j["scale"] = to_hex_double(cfg.scale);
    j["dropout_p"] = to_hex_double(cfg.dropout_p);
    j["temperature"] = to_hex_double(model.temperature);
    j["qv_mode"] = cfg.qv_mode;
    j["init_sigma"] = to_hex_double(cfg.init_sigma);
    j["backbone_seed"] = cfg.backbone_seed;
    j["adapter_seed"] = cfg.adapter_seed;
    j["placement"] = {{"band", band_name(model.placement.band)},
                      {"layers", model.placement.layer_list},
                      {"matrices", target_name(model.placement.matrices)}};
    j["store_frozen"] = store_frozen;

    json layers = json::array();
    for (const LoRALinear& layer : model.layers) {
        json lj;
        lj["enabled_q"] = layer.q.enabled;
        lj["a_q"] = matrix_to_json(layer.q.a);
        lj["b_q"] = matrix_to_json(layer.q.b);
        if (store_frozen) lj["w0_q"] = matrix_to_json(layer.q.w0);
        if (layer.v) {
            lj["enabled_v"] = layer.v->enabled;
            lj["a_v"] = matrix_to_json(layer.v->a);
            lj["b_v"] = matrix_to_json(layer.v->b);
            if (store_frozen) lj["w0_v"] = matrix_to_json(layer.v->w0);
        }
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    if (store_frozen) j["class_embeddings"] = matrix_to_json(model.class_embeddings);
    return j.dump(2) + "\n";
}

AdapterModel checkpoint_from_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ParseError(std::string("checkpoint JSON parse error: ") + e.what());
    }
    if (j.value("format", "") != "advlora-checkpoint-v1")
        throw ParseError("not an advlora checkpoint");

    ModelConfig cfg;
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    cfg.num_classes = j.at("num_classes").get<std::size_t>();
    cfg.rank = j.at("rank").get<std::size_t>();
    cfg.scale = from_hex_double(j.at("scale").get<std::string>());
    cfg.dropout_p = from_hex_double(j.at("dropout_p").get<std::string>());
    cfg.temperature = from_hex_double(j.at("temperature").get<std::string>());
    cfg.qv_mode = j.at("qv_mode").get<bool>();
    cfg.init_sigma = from_hex_double(j.at("init_sigma").get<std::string>());
    cfg.backbone_seed = j.at("backbone_seed").get<std::uint64_t>();
    cfg.adapter_seed = j.at("adapter_seed").get<std::uint64_t>();

    AdapterModel model = make_model(cfg);

    const json& pj = j.at("placement");
    model.placement.band = band_from_name(pj.at("band").get<std::string>());
    model.placement.layer_list = pj.at("layers").get<std::vector<std::size_t>>();
    model.placement.matrices = target_from_name(pj.at("matrices").get<std::string>());

    const bool stored_frozen = j.value("store_frozen", false);
    const json& layers = j.at("layers");
    if (layers.size() != model.layers.size())
        throw ParseError("checkpoint layer count mismatch");
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const json& lj = layers[l];
        LoRALinear& layer = model.layers[l];
        layer.q.enabled = lj.at("enabled_q").get<bool>();
        layer.q.a = matrix_from_json(lj.at("a_q"));
        layer.q.b = matrix_from_json(lj.at("b_q"));
        if (stored_frozen) layer.q.w0 = matrix_from_json(lj.at("w0_q"));
        if (cfg.qv_mode) {
            layer.v->enabled = lj.at("enabled_v").get<bool>();
            layer.v->a = matrix_from_json(lj.at("a_v"));
            layer.v->b = matrix_from_json(lj.at("b_v"));
            if (stored_frozen) layer.v->w0 = matrix_from_json(lj.at("w0_v"));
        }
    }
    if (stored_frozen) model.class_embeddings = matrix_from_json(j.at("class_embeddings"));
    return model;
}

void save_checkpoint(const AdapterModel& model, const std::string& path,
                     bool store_frozen) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out << checkpoint_to_string(model, store_frozen);
    if (!out) throw IoError("checkpoint write failed: " + path);
}

AdapterModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return checkpoint_from_string(text);
}

} // namespace advlora
