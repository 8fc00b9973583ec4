#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccnn/fixed_point.hpp"
#include "ccnn/model.hpp"

namespace ccnn {

// Formats of one layer. `activation` is the format of the layer's input;
// `weight` also covers the bias and is present only for conv/FC layers.
struct LayerFormats {
    std::string layer;
    std::optional<FixedPointFormat> weight;
    FixedPointFormat activation;

    friend bool operator==(const LayerFormats&, const LayerFormats&) = default;
};

// Dynamic fixed point: one wordlength, per-layer scaling factors. `output`
// is the format the final layer's result is requantised to (unused when the
// graph ends in softmax, whose input format plays that role).
struct QuantScheme {
    int wordlength = 8;
    std::vector<LayerFormats> layers;
    FixedPointFormat output;

    // Layer-ordered, one entry per graph layer, every format at `wordlength`.
    void validate(const ModelGraph& graph) const;

    friend bool operator==(const QuantScheme&, const QuantScheme&) = default;
};

void to_json(nlohmann::json& j, const FixedPointFormat& f);
void from_json(const nlohmann::json& j, FixedPointFormat& f);
void to_json(nlohmann::json& j, const QuantScheme& s);
void from_json(const nlohmann::json& j, QuantScheme& s);

}  // namespace ccnn
