#include "ccnn/model.hpp"

#include <cmath>
#include <cstring>
#include <set>

namespace ccnn {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(shape_size(shape), 0.0f) {}

void Tensor::validate() const {
    for (auto d : shape) {
        if (d == 0) throw Error(ErrorCode::shape_mismatch, "tensor has a zero dimension");
    }
    if (shape_size(shape) != data.size()) {
        throw Error(ErrorCode::shape_mismatch, "tensor shape product " + std::to_string(shape_size(shape)) +
                                                   " != data length " + std::to_string(data.size()));
    }
    for (float v : data) {
        if (!std::isfinite(v)) throw Error(ErrorCode::invalid_model, "tensor holds a non-finite value");
    }
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data.size() == b.data.size() &&
           (a.data.empty() || std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

bool LayerSpec::has_weights() const {
    return std::holds_alternative<Conv>(kind) || std::holds_alternative<FullyConnected>(kind);
}

const char* LayerSpec::kind_name() const {
    struct Namer {
        const char* operator()(const Conv&) const { return "conv"; }
        const char* operator()(const FullyConnected&) const { return "fc"; }
        const char* operator()(const ReLU&) const { return "relu"; }
        const char* operator()(const MaxPool&) const { return "maxpool"; }
        const char* operator()(const Softmax&) const { return "softmax"; }
    };
    return std::visit(Namer{}, kind);
}

const LayerParams& ModelGraph::params(const LayerSpec& layer) const {
    auto it = weights.find(layer.name);
    if (it == weights.end()) throw Error(ErrorCode::invalid_model, "no parameters for layer '" + layer.name + "'");
    return it->second;
}

std::size_t ModelGraph::layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].name == name) return i;
    }
    throw Error(ErrorCode::index_out_of_range, "no layer named '" + name + "'");
}

std::size_t ModelGraph::num_classes() const {
    return infer_shapes(*this, input_shape).back().size();
}

namespace {

std::size_t window_output(std::size_t in, std::size_t pad, std::size_t kernel, std::size_t stride,
                          const std::string& layer) {
    if (stride == 0) throw Error(ErrorCode::shape_mismatch, "layer '" + layer + "' has zero stride");
    if (in + 2 * pad < kernel) {
        throw Error(ErrorCode::shape_mismatch, "layer '" + layer + "' infers a non-positive spatial dimension");
    }
    return (in + 2 * pad - kernel) / stride + 1;
}

void expect_shape(const Tensor& t, const Shape& expected, const std::string& what) {
    if (t.shape != expected) throw Error(ErrorCode::shape_mismatch, what + " has the wrong shape");
}

}  // namespace

std::vector<Shape3> infer_shapes(const ModelGraph& graph, const Shape3& input_shape) {
    if (input_shape.size() == 0) throw Error(ErrorCode::shape_mismatch, "input shape has a zero dimension");
    std::vector<Shape3> out;
    out.reserve(graph.layers.size());
    Shape3 cur = input_shape;
    for (const auto& layer : graph.layers) {
        if (const auto* conv = std::get_if<Conv>(&layer.kind)) {
            if (cur.c != conv->in_ch) {
                throw Error(ErrorCode::shape_mismatch, "conv '" + layer.name + "' expects " +
                                                           std::to_string(conv->in_ch) + " channels, got " +
                                                           std::to_string(cur.c));
            }
            if (conv->out_ch == 0) throw Error(ErrorCode::shape_mismatch, "conv '" + layer.name + "' has no outputs");
            cur = {conv->out_ch, window_output(cur.h, conv->pad, conv->kernel_h, conv->stride, layer.name),
                   window_output(cur.w, conv->pad, conv->kernel_w, conv->stride, layer.name)};
        } else if (const auto* fc = std::get_if<FullyConnected>(&layer.kind)) {
            if (cur.size() != fc->in_features) {
                throw Error(ErrorCode::shape_mismatch, "fc '" + layer.name + "' expects " +
                                                           std::to_string(fc->in_features) + " inputs, got " +
                                                           std::to_string(cur.size()));
            }
            if (fc->out_features == 0) throw Error(ErrorCode::shape_mismatch, "fc '" + layer.name + "' has no outputs");
            cur = {fc->out_features, 1, 1};
        } else if (const auto* pool = std::get_if<MaxPool>(&layer.kind)) {
            if (pool->size == 0) throw Error(ErrorCode::shape_mismatch, "maxpool '" + layer.name + "' has zero size");
            cur = {cur.c, window_output(cur.h, 0, pool->size, pool->stride, layer.name),
                   window_output(cur.w, 0, pool->size, pool->stride, layer.name)};
        }
        out.push_back(cur);
    }
    return out;
}

void validate(const ModelGraph& graph) {
    if (graph.layers.empty()) throw Error(ErrorCode::empty_model, "model has no layers");
    std::set<std::string> names;
    std::size_t with_weights = 0;
    for (std::size_t i = 0; i < graph.layers.size(); ++i) {
        const auto& layer = graph.layers[i];
        if (layer.name.empty()) throw Error(ErrorCode::invalid_model, "layer " + std::to_string(i) + " has no name");
        if (!names.insert(layer.name).second) {
            throw Error(ErrorCode::invalid_model, "duplicate layer name '" + layer.name + "'");
        }
        if (std::holds_alternative<Softmax>(layer.kind) && i + 1 != graph.layers.size()) {
            throw Error(ErrorCode::invalid_model, "softmax must be the final layer");
        }
        if (!layer.has_weights()) {
            if (graph.weights.count(layer.name)) {
                throw Error(ErrorCode::invalid_model, "layer '" + layer.name + "' takes no parameters");
            }
            continue;
        }
        ++with_weights;
        const auto& p = graph.params(layer);
        p.weight.validate();
        p.bias.validate();
        if (const auto* conv = std::get_if<Conv>(&layer.kind)) {
            expect_shape(p.weight, {conv->out_ch, conv->in_ch, conv->kernel_h, conv->kernel_w},
                         "weight of '" + layer.name + "'");
            expect_shape(p.bias, {conv->out_ch}, "bias of '" + layer.name + "'");
        } else {
            const auto& fc = std::get<FullyConnected>(layer.kind);
            expect_shape(p.weight, {fc.out_features, fc.in_features}, "weight of '" + layer.name + "'");
            expect_shape(p.bias, {fc.out_features}, "bias of '" + layer.name + "'");
        }
    }
    if (graph.weights.size() != with_weights) {
        throw Error(ErrorCode::invalid_model, "parameter map names a layer that is not in the graph");
    }
    infer_shapes(graph, graph.input_shape);
}

void validate(const EvalSet& eval, const Shape3& sample_shape) {
    if (eval.samples.empty()) throw Error(ErrorCode::empty_eval_set, "evaluation set has no samples");
    if (eval.samples.size() != eval.labels.size()) {
        throw Error(ErrorCode::shape_mismatch, "sample and label counts differ");
    }
    for (const auto& s : eval.samples) {
        s.validate();
        if (s.shape != sample_shape.as_shape()) {
            throw Error(ErrorCode::shape_mismatch, "sample shape does not match the model input");
        }
    }
    for (auto label : eval.labels) {
        if (label >= eval.num_classes) {
            throw Error(ErrorCode::label_out_of_range,
                        "label " + std::to_string(label) + " >= num_classes " + std::to_string(eval.num_classes));
        }
    }
}

EvalSet subset(const EvalSet& eval, const std::vector<std::size_t>& indices) {
    EvalSet out;
    out.num_classes = eval.num_classes;
    out.samples.reserve(indices.size());
    out.labels.reserve(indices.size());
    for (auto i : indices) {
        if (i >= eval.size()) throw Error(ErrorCode::index_out_of_range, "sample index out of range");
        out.samples.push_back(eval.samples[i]);
        out.labels.push_back(eval.labels[i]);
    }
    return out;
}

}  // namespace ccnn
