#include "ccnn/engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace ccnn {

void MMConfig::validate() const {
    if (tile_m == 0 || tile_n == 0 || tile_k == 0) throw Error(ErrorCode::invalid_config, "tile sizes must be >= 1");
}

int required_accumulator_bits(int operand_wordlength, std::size_t reduction_length) {
    const auto k = std::max<std::size_t>(reduction_length, 1);
    const int log2k = static_cast<int>(std::bit_width(k - 1));  // ceil(log2(k))
    return 2 * operand_wordlength + log2k;
}

void AccumulatorSpec::check(std::size_t reduction_length) const {
    const int need = required_accumulator_bits(operand_wordlength, reduction_length);
    if (bits > 64) throw Error(ErrorCode::accumulator_width, "accumulators are limited to 64 bits");
    if (bits < need) {
        throw Error(ErrorCode::accumulator_width, std::to_string(bits) + "-bit accumulator, reduction of " +
                                                      std::to_string(reduction_length) + " at " +
                                                      std::to_string(operand_wordlength) + " bits needs " +
                                                      std::to_string(need));
    }
}

IntMatrix im2col(const QuantizedTensor& input, const Conv& conv) {
    if (input.shape.size() != 3 || input.shape[0] != conv.in_ch) {
        throw Error(ErrorCode::shape_mismatch, "im2col input must be C,H,W with C == in_ch");
    }
    if (conv.stride == 0) throw Error(ErrorCode::shape_mismatch, "conv stride must be >= 1");
    const std::size_t c_in = input.shape[0], h = input.shape[1], w = input.shape[2];
    if (h + 2 * conv.pad < conv.kernel_h || w + 2 * conv.pad < conv.kernel_w) {
        throw Error(ErrorCode::shape_mismatch, "kernel larger than padded input");
    }
    const std::size_t out_h = (h + 2 * conv.pad - conv.kernel_h) / conv.stride + 1;
    const std::size_t out_w = (w + 2 * conv.pad - conv.kernel_w) / conv.stride + 1;

    IntMatrix cols(c_in * conv.kernel_h * conv.kernel_w, out_h * out_w);
    for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t ky = 0; ky < conv.kernel_h; ++ky) {
            for (std::size_t kx = 0; kx < conv.kernel_w; ++kx) {
                const std::size_t row = (c * conv.kernel_h + ky) * conv.kernel_w + kx;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * conv.stride + ky) -
                                    static_cast<std::ptrdiff_t>(conv.pad);
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * conv.stride + kx) -
                                        static_cast<std::ptrdiff_t>(conv.pad);
                        if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
                            ix >= static_cast<std::ptrdiff_t>(w)) {
                            continue;
                        }
                        cols.at(row, oy * out_w + ox) = input.values[(c * h + iy) * w + ix];
                    }
                }
            }
        }
    }
    return cols;
}

IntMatrix mm(const IntMatrix& a, const IntMatrix& b, const AccumulatorSpec& acc) {
    if (a.cols != b.rows) throw Error(ErrorCode::shape_mismatch, "inner dimensions differ");
    acc.check(a.cols);
    IntMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const auto aik = a.at(i, k);
            for (std::size_t j = 0; j < b.cols; ++j) c.at(i, j) += aik * b.at(k, j);
        }
    }
    return c;
}

TiledProduct tiled_mm(const IntMatrix& a, const IntMatrix& b, const MMConfig& cfg, const AccumulatorSpec& acc) {
    if (a.cols != b.rows) throw Error(ErrorCode::shape_mismatch, "inner dimensions differ");
    cfg.validate();
    acc.check(a.cols);
    const std::size_t m = a.rows, n = b.cols, k = a.cols;
    TiledProduct out{IntMatrix(m, n), {0, cfg.tile_m * cfg.tile_n * cfg.tile_k}};
    for (std::size_t i0 = 0; i0 < m; i0 += cfg.tile_m) {
        const std::size_t i1 = std::min(m, i0 + cfg.tile_m);
        for (std::size_t j0 = 0; j0 < n; j0 += cfg.tile_n) {
            const std::size_t j1 = std::min(n, j0 + cfg.tile_n);
            for (std::size_t k0 = 0; k0 < k; k0 += cfg.tile_k) {
                const std::size_t k1 = std::min(k, k0 + cfg.tile_k);
                ++out.work.tile_invocations;
                for (std::size_t i = i0; i < i1; ++i) {
                    std::int64_t* crow = &out.product.data[i * n];
                    for (std::size_t kk = k0; kk < k1; ++kk) {
                        const auto aik = a.data[i * k + kk];
                        const std::int64_t* brow = &b.data[kk * n];
                        for (std::size_t j = j0; j < j1; ++j) crow[j] += aik * brow[j];
                    }
                }
            }
        }
    }
    return out;
}

std::uint64_t WeightStore::stored_bits() const {
    std::uint64_t bits = 0;
    for (const auto& layer : layers) {
        if (!layer) continue;
        bits += layer->weight.size() * static_cast<std::uint64_t>(layer->weight.format.wordlength);
        bits += layer->bias.size() * static_cast<std::uint64_t>(layer->bias.format.wordlength);
    }
    return bits;
}

QuantizedModel::QuantizedModel(std::shared_ptr<const ModelGraph> graph, QuantScheme scheme)
    : graph_(std::move(graph)), scheme_(std::move(scheme)) {
    scheme_.validate(*graph_);
    auto store = std::make_shared<WeightStore>();
    store->layers.resize(graph_->layers.size());
    for (std::size_t i = 0; i < graph_->layers.size(); ++i) {
        const auto& layer = graph_->layers[i];
        if (!layer.has_weights()) continue;
        const auto& p = graph_->params(layer);
        const auto& fmt = *scheme_.layers[i].weight;
        store->layers[i] = QuantizedLayerWeights{quantize_tensor(p.weight, fmt), quantize_tensor(p.bias, fmt)};
    }
    store_ = std::move(store);
}

QuantizedModel::QuantizedModel(std::shared_ptr<const ModelGraph> graph, QuantScheme scheme,
                               std::shared_ptr<const WeightStore> store)
    : graph_(std::move(graph)), scheme_(std::move(scheme)), store_(std::move(store)) {
    scheme_.validate(*graph_);
}

QuantizedModel QuantizedModel::derive(QuantScheme lpu_scheme) const {
    if (lpu_scheme.wordlength > scheme_.wordlength) {
        throw Error(ErrorCode::format_mismatch, "derived model must not be wider than its source");
    }
    QuantizedModel out(graph_, std::move(lpu_scheme), store_);
    out.mm_config = mm_config;
    out.fc_batch = fc_batch;
    return out;
}

QuantizedLayerWeights QuantizedModel::layer_weights(std::size_t index) const {
    const auto& stored = store_->layers.at(index);
    if (!stored) throw Error(ErrorCode::invalid_model, "layer " + std::to_string(index) + " has no weights");
    const auto& fmt = *scheme_.layers[index].weight;
    if (stored->weight.format == fmt) return *stored;
    return {derive_lpu_weights(stored->weight, fmt), derive_lpu_weights(stored->bias, fmt)};
}

const FixedPointFormat& QuantizedModel::output_format(std::size_t index) const {
    return index + 1 < scheme_.layers.size() ? scheme_.layers[index + 1].activation : scheme_.output;
}

namespace {

IntMatrix weight_matrix(const QuantizedTensor& w) {
    IntMatrix m(w.shape.at(0), w.size() / w.shape.at(0));
    std::copy(w.values.begin(), w.values.end(), m.data.begin());
    return m;
}

// Adds the aligned bias to each accumulator row and requantises. Conv writes
// one channel-major tensor; batched FC writes column j to outputs[j].
void finish_mm(const IntMatrix& acc, const QuantizedTensor& bias, int act_frac, const FixedPointFormat& out_fmt,
               std::vector<QuantizedTensor*>& outputs, bool channel_major) {
    const int acc_frac = bias.format.frac_bits + act_frac;
    for (std::size_t o = 0; o < acc.rows; ++o) {
        const std::int64_t b = shift_round(bias.values[o], -act_frac);
        for (std::size_t j = 0; j < acc.cols; ++j) {
            const auto code = static_cast<std::int32_t>(rescale(acc.at(o, j) + b, acc_frac, out_fmt));
            if (channel_major) {
                outputs[0]->values[o * acc.cols + j] = code;
            } else {
                outputs[j]->values[o] = code;
            }
        }
    }
}

void check_input(const QuantizedModel& model, std::size_t index, const QuantizedTensor& input) {
    if (input.format != model.scheme().layers.at(index).activation) {
        throw Error(ErrorCode::format_mismatch, "input of '" + model.graph().layers[index].name +
                                                    "' is not in the layer's activation format");
    }
}

AccumulatorSpec accumulator_for(const QuantizedModel& model) {
    return AccumulatorSpec{64, model.scheme().wordlength};
}

// FC over a batch: inputs are the flattened activations of each sample.
std::vector<QuantizedTensor> run_fc(const QuantizedModel& model, std::size_t index,
                                    std::span<const QuantizedTensor> inputs) {
    const auto& fc = std::get<FullyConnected>(model.graph().layers[index].kind);
    const auto weights = model.layer_weights(index);
    IntMatrix x(fc.in_features, inputs.size());
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        check_input(model, index, inputs[b]);
        if (inputs[b].size() != fc.in_features) throw Error(ErrorCode::shape_mismatch, "fc input size");
        for (std::size_t k = 0; k < fc.in_features; ++k) x.at(k, b) = inputs[b].values[k];
    }
    const auto acc = tiled_mm(weight_matrix(weights.weight), x, model.mm_config, accumulator_for(model)).product;
    const auto& out_fmt = model.output_format(index);
    std::vector<QuantizedTensor> outputs(inputs.size(),
                                         QuantizedTensor{{fc.out_features, 1, 1},
                                                         std::vector<std::int32_t>(fc.out_features), out_fmt});
    std::vector<QuantizedTensor*> ptrs;
    for (auto& o : outputs) ptrs.push_back(&o);
    finish_mm(acc, weights.bias, model.scheme().layers[index].activation.frac_bits, out_fmt, ptrs, false);
    return outputs;
}

}  // namespace

QuantizedTensor run_layer(const QuantizedModel& model, std::size_t index, const QuantizedTensor& input) {
    const auto& graph = model.graph();
    if (index >= graph.layers.size()) throw Error(ErrorCode::index_out_of_range, "layer index");
    check_input(model, index, input);
    const auto& layer = graph.layers[index];
    const auto& in_fmt = input.format;
    const auto& out_fmt = model.output_format(index);

    if (const auto* conv = std::get_if<Conv>(&layer.kind)) {
        const auto weights = model.layer_weights(index);
        const auto cols = im2col(input, *conv);
        const auto acc = tiled_mm(weight_matrix(weights.weight), cols, model.mm_config, accumulator_for(model)).product;
        const std::size_t out_h = (input.shape[1] + 2 * conv->pad - conv->kernel_h) / conv->stride + 1;
        const std::size_t out_w = (input.shape[2] + 2 * conv->pad - conv->kernel_w) / conv->stride + 1;
        QuantizedTensor out{{conv->out_ch, out_h, out_w}, std::vector<std::int32_t>(acc.rows * acc.cols), out_fmt};
        std::vector<QuantizedTensor*> ptrs{&out};
        finish_mm(acc, weights.bias, in_fmt.frac_bits, out_fmt, ptrs, true);
        return out;
    }
    if (std::holds_alternative<FullyConnected>(layer.kind)) {
        return run_fc(model, index, std::span(&input, 1)).front();
    }
    if (std::holds_alternative<ReLU>(layer.kind)) {
        QuantizedTensor out{input.shape, {}, out_fmt};
        out.values.reserve(input.size());
        for (auto v : input.values) {
            out.values.push_back(static_cast<std::int32_t>(rescale(std::max<std::int64_t>(v, 0), in_fmt.frac_bits, out_fmt)));
        }
        return out;
    }
    if (const auto* pool = std::get_if<MaxPool>(&layer.kind)) {
        if (input.shape.size() != 3) throw Error(ErrorCode::shape_mismatch, "maxpool input must be C,H,W");
        const std::size_t c = input.shape[0], h = input.shape[1], w = input.shape[2];
        const std::size_t out_h = (h - pool->size) / pool->stride + 1;
        const std::size_t out_w = (w - pool->size) / pool->stride + 1;
        QuantizedTensor out{{c, out_h, out_w}, std::vector<std::int32_t>(c * out_h * out_w), out_fmt};
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    std::int64_t best = input.values[(ch * h + oy * pool->stride) * w + ox * pool->stride];
                    for (std::size_t ky = 0; ky < pool->size; ++ky) {
                        for (std::size_t kx = 0; kx < pool->size; ++kx) {
                            best = std::max<std::int64_t>(
                                best, input.values[(ch * h + oy * pool->stride + ky) * w + ox * pool->stride + kx]);
                        }
                    }
                    out.values[(ch * out_h + oy) * out_w + ox] =
                        static_cast<std::int32_t>(rescale(best, in_fmt.frac_bits, out_fmt));
                }
            }
        }
        return out;
    }
    throw Error(ErrorCode::invalid_config, "softmax runs on dequantised reals, not in run_layer");
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    if (p.empty()) return p;
    const double hi = *std::max_element(p.begin(), p.end());
    double sum = 0.0;
    for (auto& v : p) {
        v = std::exp(v - hi);
        sum += v;
    }
    for (auto& v : p) v /= sum;
    return p;
}

std::vector<std::vector<double>> predict_batch(const QuantizedModel& model, std::span<const Tensor> samples,
                                               std::size_t fc_batch) {
    const auto& graph = model.graph();
    const auto& scheme = model.scheme();
    fc_batch = std::max<std::size_t>(fc_batch, 1);
    std::vector<std::vector<double>> probs;
    probs.reserve(samples.size());

    for (std::size_t start = 0; start < samples.size(); start += fc_batch) {
        const std::size_t count = std::min(fc_batch, samples.size() - start);
        std::vector<QuantizedTensor> acts;
        acts.reserve(count);
        for (std::size_t b = 0; b < count; ++b) {
            const auto& s = samples[start + b];
            if (s.shape != graph.input_shape.as_shape()) {
                throw Error(ErrorCode::shape_mismatch, "sample does not match the model input shape");
            }
            acts.push_back(quantize_tensor(s, scheme.layers.front().activation));
        }
        for (std::size_t i = 0; i < graph.layers.size(); ++i) {
            const auto& kind = graph.layers[i].kind;
            if (std::holds_alternative<Softmax>(kind)) break;
            if (std::holds_alternative<FullyConnected>(kind)) {
                acts = run_fc(model, i, acts);
            } else {
                for (auto& a : acts) a = run_layer(model, i, a);
            }
        }
        for (const auto& a : acts) {
            const auto real = dequantize(a);
            std::vector<double> logits(real.data.begin(), real.data.end());
            probs.push_back(softmax(logits));
        }
    }
    return probs;
}

std::vector<double> predict(const QuantizedModel& model, const Tensor& sample) {
    return predict_batch(model, std::span(&sample, 1), 1).front();
}

std::size_t metric_k(Metric metric) { return metric == Metric::top1 ? 1 : 5; }

const char* to_string(Metric metric) { return metric == Metric::top1 ? "top1" : "top5"; }

Metric parse_metric(const std::string& text) {
    if (text == "top1") return Metric::top1;
    if (text == "top5") return Metric::top5;
    throw Error(ErrorCode::parse_error, "metric must be top1 or top5, got '" + text + "'");
}

std::vector<std::size_t> top_k(std::span<const double> probs, std::size_t k) {
    std::vector<std::size_t> idx(probs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) { return probs[a] > probs[b] || (probs[a] == probs[b] && a < b); });
    idx.resize(k);
    return idx;
}

bool is_hit(std::span<const double> probs, std::size_t label, Metric metric) {
    const auto top = top_k(probs, metric_k(metric));
    return std::find(top.begin(), top.end(), label) != top.end();
}

double error_rate(const std::vector<std::vector<double>>& probs, const std::vector<std::uint32_t>& labels,
                  Metric metric) {
    if (probs.empty()) throw Error(ErrorCode::empty_eval_set, "no predictions to score");
    if (probs.size() != labels.size()) throw Error(ErrorCode::shape_mismatch, "prediction and label counts differ");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) wrong += is_hit(probs[i], labels[i], metric) ? 0 : 1;
    return static_cast<double>(wrong) / static_cast<double>(probs.size());
}

double evaluate_accuracy(const QuantizedModel& model, const EvalSet& eval, Metric metric) {
    if (eval.samples.empty()) throw Error(ErrorCode::empty_eval_set, "evaluation set has no samples");
    return error_rate(predict_batch(model, eval.samples, model.fc_batch), eval.labels, metric);
}

namespace {

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double fake_quant(double x, const FixedPointFormat& fmt) { return dequantize_value(quantize_value(x, fmt), fmt); }

}  // namespace

std::vector<double> float_forward(const ModelGraph& graph, const Tensor& sample, const FakeQuantLayer* fq,
                                  ForwardTrace* trace) {
    if (sample.shape != graph.input_shape.as_shape()) {
        throw Error(ErrorCode::shape_mismatch, "sample does not match the model input shape");
    }
    std::vector<double> act(sample.data.begin(), sample.data.end());
    Shape3 shape = graph.input_shape;
    if (trace) trace->input_max_abs.assign(graph.layers.size(), 0.0);

    for (std::size_t i = 0; i < graph.layers.size(); ++i) {
        const auto& layer = graph.layers[i];
        if (trace) trace->input_max_abs[i] = max_abs(act);
        const bool quantise_here = fq && fq->layer == i;
        if (quantise_here) {
            for (auto& x : act) x = fake_quant(x, fq->activation);
        }
        auto param = [&](float v) {
            return quantise_here && fq->weight ? fake_quant(v, *fq->weight) : static_cast<double>(v);
        };

        if (const auto* conv = std::get_if<Conv>(&layer.kind)) {
            const auto& p = graph.params(layer);
            const std::size_t oh = (shape.h + 2 * conv->pad - conv->kernel_h) / conv->stride + 1;
            const std::size_t ow = (shape.w + 2 * conv->pad - conv->kernel_w) / conv->stride + 1;
            std::vector<double> out(conv->out_ch * oh * ow);
            for (std::size_t o = 0; o < conv->out_ch; ++o) {
                for (std::size_t y = 0; y < oh; ++y) {
                    for (std::size_t x = 0; x < ow; ++x) {
                        double sum = param(p.bias.data[o]);
                        for (std::size_t c = 0; c < conv->in_ch; ++c) {
                            for (std::size_t ky = 0; ky < conv->kernel_h; ++ky) {
                                const auto iy = static_cast<std::ptrdiff_t>(y * conv->stride + ky) -
                                                static_cast<std::ptrdiff_t>(conv->pad);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(shape.h)) continue;
                                for (std::size_t kx = 0; kx < conv->kernel_w; ++kx) {
                                    const auto ix = static_cast<std::ptrdiff_t>(x * conv->stride + kx) -
                                                    static_cast<std::ptrdiff_t>(conv->pad);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(shape.w)) continue;
                                    const double wv =
                                        param(p.weight.data[((o * conv->in_ch + c) * conv->kernel_h + ky) *
                                                                conv->kernel_w + kx]);
                                    sum += wv * act[(c * shape.h + iy) * shape.w + ix];
                                }
                            }
                        }
                        out[(o * oh + y) * ow + x] = sum;
                    }
                }
            }
            act = std::move(out);
            shape = {conv->out_ch, oh, ow};
        } else if (const auto* fc = std::get_if<FullyConnected>(&layer.kind)) {
            const auto& p = graph.params(layer);
            std::vector<double> out(fc->out_features);
            for (std::size_t o = 0; o < fc->out_features; ++o) {
                double sum = param(p.bias.data[o]);
                for (std::size_t k = 0; k < fc->in_features; ++k) {
                    sum += param(p.weight.data[o * fc->in_features + k]) * act[k];
                }
                out[o] = sum;
            }
            act = std::move(out);
            shape = {fc->out_features, 1, 1};
        } else if (std::holds_alternative<ReLU>(layer.kind)) {
            for (auto& x : act) x = std::max(x, 0.0);
        } else if (const auto* pool = std::get_if<MaxPool>(&layer.kind)) {
            const std::size_t oh = (shape.h - pool->size) / pool->stride + 1;
            const std::size_t ow = (shape.w - pool->size) / pool->stride + 1;
            std::vector<double> out(shape.c * oh * ow);
            for (std::size_t c = 0; c < shape.c; ++c) {
                for (std::size_t y = 0; y < oh; ++y) {
                    for (std::size_t x = 0; x < ow; ++x) {
                        double best = act[(c * shape.h + y * pool->stride) * shape.w + x * pool->stride];
                        for (std::size_t ky = 0; ky < pool->size; ++ky) {
                            for (std::size_t kx = 0; kx < pool->size; ++kx) {
                                best = std::max(
                                    best, act[(c * shape.h + y * pool->stride + ky) * shape.w + x * pool->stride + kx]);
                            }
                        }
                        out[(c * oh + y) * ow + x] = best;
                    }
                }
            }
            act = std::move(out);
            shape = {shape.c, oh, ow};
        } else {
            act = softmax(act);
        }
    }
    if (trace) trace->output_max_abs = max_abs(act);
    return act;
}

std::vector<double> reference_probabilities(const ModelGraph& graph, const Tensor& sample,
                                            const FakeQuantLayer* fake_quant) {
    auto out = float_forward(graph, sample, fake_quant);
    if (std::holds_alternative<Softmax>(graph.layers.back().kind)) return out;
    return softmax(out);
}

double reference_error(const ModelGraph& graph, const EvalSet& eval, Metric metric) {
    std::vector<std::vector<double>> probs;
    probs.reserve(eval.size());
    for (const auto& s : eval.samples) probs.push_back(reference_probabilities(graph, s));
    return error_rate(probs, eval.labels, metric);
}

}  // namespace ccnn
