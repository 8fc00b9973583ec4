#include "ccnn/quant_scheme.hpp"

namespace ccnn {

void QuantScheme::validate(const ModelGraph& graph) const {
    if (wordlength < kMinWordlength || wordlength > kMaxWordlength) {
        throw Error(ErrorCode::invalid_config, "scheme wordlength " + std::to_string(wordlength) + " out of range");
    }
    if (layers.size() != graph.layers.size()) {
        throw Error(ErrorCode::format_mismatch, "scheme covers " + std::to_string(layers.size()) + " layers, model has " +
                                                    std::to_string(graph.layers.size()));
    }
    auto check = [&](const FixedPointFormat& f, const std::string& what) {
        if (f.wordlength != wordlength) {
            throw Error(ErrorCode::format_mismatch, what + " is not at the scheme wordlength");
        }
    };
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& lf = layers[i];
        if (lf.layer != graph.layers[i].name) {
            throw Error(ErrorCode::format_mismatch, "scheme entry " + std::to_string(i) + " names '" + lf.layer +
                                                        "', model has '" + graph.layers[i].name + "'");
        }
        check(lf.activation, "activation format of '" + lf.layer + "'");
        if (graph.layers[i].has_weights() != lf.weight.has_value()) {
            throw Error(ErrorCode::format_mismatch, "weight format presence mismatch at '" + lf.layer + "'");
        }
        if (lf.weight) check(*lf.weight, "weight format of '" + lf.layer + "'");
    }
    check(output, "output format");
}

void to_json(nlohmann::json& j, const FixedPointFormat& f) {
    j = {{"wordlength", f.wordlength}, {"frac_bits", f.frac_bits}};
}

void from_json(const nlohmann::json& j, FixedPointFormat& f) {
    j.at("wordlength").get_to(f.wordlength);
    j.at("frac_bits").get_to(f.frac_bits);
    f.validate();
}

void to_json(nlohmann::json& j, const QuantScheme& s) {
    j = nlohmann::json::object();
    j["wordlength"] = s.wordlength;
    j["output"] = s.output;
    auto& layers = j["layers"] = nlohmann::json::array();
    for (const auto& lf : s.layers) {
        nlohmann::json e = {{"name", lf.layer}, {"activation", lf.activation}};
        if (lf.weight) e["weight"] = *lf.weight;
        layers.push_back(std::move(e));
    }
}

void from_json(const nlohmann::json& j, QuantScheme& s) {
    j.at("wordlength").get_to(s.wordlength);
    j.at("output").get_to(s.output);
    s.layers.clear();
    for (const auto& e : j.at("layers")) {
        LayerFormats lf;
        e.at("name").get_to(lf.layer);
        e.at("activation").get_to(lf.activation);
        if (e.contains("weight")) lf.weight = e.at("weight").get<FixedPointFormat>();
        s.layers.push_back(std::move(lf));
    }
}

}  // namespace ccnn
