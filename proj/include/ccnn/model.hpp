#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "ccnn/error.hpp"

namespace ccnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

// Dense real tensor, row-major. Activations are N,C,H,W (or C,H,W for a
// single sample); conv weights O,I,Kh,Kw; FC weights O,I.
struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<float> d);
    explicit Tensor(Shape s);

    std::size_t size() const { return data.size(); }

    // Throws shape_mismatch / invalid_model on a broken invariant.
    void validate() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Bit-level equality, distinguishes +0.0 from -0.0.
bool bit_equal(const Tensor& a, const Tensor& b);

struct Conv {
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;

    friend bool operator==(const Conv&, const Conv&) = default;
};

struct FullyConnected {
    std::size_t in_features = 0;
    std::size_t out_features = 0;

    friend bool operator==(const FullyConnected&, const FullyConnected&) = default;
};

struct ReLU {
    friend bool operator==(const ReLU&, const ReLU&) = default;
};

struct MaxPool {
    std::size_t size = 2;
    std::size_t stride = 2;

    friend bool operator==(const MaxPool&, const MaxPool&) = default;
};

struct Softmax {
    friend bool operator==(const Softmax&, const Softmax&) = default;
};

using LayerKind = std::variant<Conv, FullyConnected, ReLU, MaxPool, Softmax>;

struct LayerSpec {
    std::string name;
    LayerKind kind;

    // Conv and FC layers carry a weight/bias pair and run on the MM unit.
    bool has_weights() const;
    const char* kind_name() const;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct LayerParams {
    Tensor weight;
    Tensor bias;

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

// Activation shape of a single sample.
struct Shape3 {
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    std::size_t size() const { return c * h * w; }
    Shape as_shape() const { return {c, h, w}; }

    friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct ModelGraph {
    std::vector<LayerSpec> layers;
    std::map<std::string, LayerParams> weights;
    Shape3 input_shape;

    const LayerParams& params(const LayerSpec& layer) const;
    std::size_t layer_index(const std::string& name) const;
    std::size_t num_classes() const;

    friend bool operator==(const ModelGraph&, const ModelGraph&) = default;
};

// Throws on the first violated invariant: empty model, duplicate names,
// misplaced softmax, missing or mis-shaped parameters, non-finite values or
// failed shape inference.
void validate(const ModelGraph& graph);

// One output shape per layer.
std::vector<Shape3> infer_shapes(const ModelGraph& graph, const Shape3& input_shape);

struct EvalSet {
    std::vector<Tensor> samples;
    std::vector<std::uint32_t> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return samples.size(); }

    friend bool operator==(const EvalSet&, const EvalSet&) = default;
};

void validate(const EvalSet& eval, const Shape3& sample_shape);

// Subset by index, preserving order of `indices`.
EvalSet subset(const EvalSet& eval, const std::vector<std::size_t>& indices);

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::uint32_t kEvalFormatVersion = 1;

ModelGraph load_model(const std::filesystem::path& path);
void save_model(const ModelGraph& graph, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_model(const ModelGraph& graph);
ModelGraph decode_model(const std::vector<std::uint8_t>& bytes);

EvalSet load_eval_set(const std::filesystem::path& path);
void save_eval_set(const EvalSet& eval, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_eval_set(const EvalSet& eval);
EvalSet decode_eval_set(const std::vector<std::uint8_t>& bytes);

}  // namespace ccnn
