#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccnn/fixed_point.hpp"
#include "ccnn/model.hpp"
#include "ccnn/quant_scheme.hpp"

namespace ccnn {

// Row-major integer matrix. Operands hold fixed-point codes; products hold
// full-width accumulator values.
struct IntMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int64_t> data;

    IntMatrix() = default;
    IntMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

    std::int64_t& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    std::int64_t at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    friend bool operator==(const IntMatrix&, const IntMatrix&) = default;
};

struct MMConfig {
    std::size_t tile_m = 1;
    std::size_t tile_n = 1;
    std::size_t tile_k = 1;

    void validate() const;

    friend bool operator==(const MMConfig&, const MMConfig&) = default;
};

// Width of the MACC accumulators for operands of `operand_wordlength` bits.
struct AccumulatorSpec {
    int bits = 64;
    int operand_wordlength = kMaxWordlength;

    // Throws accumulator_width unless bits >= 2*WL + ceil(log2(k)) and the
    // accumulator fits the 64-bit host type.
    void check(std::size_t reduction_length) const;
};

int required_accumulator_bits(int operand_wordlength, std::size_t reduction_length);

// Lowers a C,H,W input to a (C*Kh*Kw) x (outH*outW) matrix; padding is code 0.
IntMatrix im2col(const QuantizedTensor& input, const Conv& conv);

IntMatrix mm(const IntMatrix& a, const IntMatrix& b, const AccumulatorSpec& acc);

struct TileWork {
    std::uint64_t tile_invocations = 0;
    std::uint64_t tile_volume = 0;  // tile_m * tile_n * tile_k

    std::uint64_t work() const { return tile_invocations * tile_volume; }
};

struct TiledProduct {
    IntMatrix product;
    TileWork work;
};

TiledProduct tiled_mm(const IntMatrix& a, const IntMatrix& b, const MMConfig& cfg, const AccumulatorSpec& acc);

struct QuantizedLayerWeights {
    QuantizedTensor weight;
    QuantizedTensor bias;
};

// Quantised parameters, indexed by layer position (empty for layers without
// weights). A cascade holds exactly one of these, at HPU precision.
struct WeightStore {
    std::vector<std::optional<QuantizedLayerWeights>> layers;

    std::uint64_t stored_bits() const;
    std::uint64_t stored_bytes() const { return (stored_bits() + 7) / 8; }
};

class QuantizedModel {
public:
    // Quantises the master weights with the scheme's weight formats.
    QuantizedModel(std::shared_ptr<const ModelGraph> graph, QuantScheme scheme);

    // A lower-precision view sharing this model's weight store; its weights
    // are derived from the stored codes whenever a layer executes.
    QuantizedModel derive(QuantScheme lpu_scheme) const;

    const ModelGraph& graph() const { return *graph_; }
    const std::shared_ptr<const ModelGraph>& graph_ptr() const { return graph_; }
    const QuantScheme& scheme() const { return scheme_; }
    const std::shared_ptr<const WeightStore>& store() const { return store_; }
    bool shares_weights_with(const QuantizedModel& other) const { return store_ == other.store_; }

    // Weights of layer `index` in this model's scheme.
    QuantizedLayerWeights layer_weights(std::size_t index) const;

    // Format the output of layer `index` is requantised to.
    const FixedPointFormat& output_format(std::size_t index) const;

    MMConfig mm_config{64, 64, 64};
    std::size_t fc_batch = 16;

private:
    QuantizedModel(std::shared_ptr<const ModelGraph> graph, QuantScheme scheme,
                   std::shared_ptr<const WeightStore> store);

    std::shared_ptr<const ModelGraph> graph_;
    QuantScheme scheme_;
    std::shared_ptr<const WeightStore> store_;
};

// Executes one non-softmax layer on integer codes.
QuantizedTensor run_layer(const QuantizedModel& model, std::size_t index, const QuantizedTensor& input);

// Class probabilities (unsorted, indexed by class) for one sample.
std::vector<double> predict(const QuantizedModel& model, const Tensor& sample);

// Same results as per-sample predict; FC layers run as one MM per group of
// `fc_batch` samples.
std::vector<std::vector<double>> predict_batch(const QuantizedModel& model, std::span<const Tensor> samples,
                                               std::size_t fc_batch);

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

enum class Metric { top1, top5 };

std::size_t metric_k(Metric metric);
const char* to_string(Metric metric);
Metric parse_metric(const std::string& text);

// Class indices of the k largest probabilities; ties go to the lower index.
std::vector<std::size_t> top_k(std::span<const double> probs, std::size_t k);
bool is_hit(std::span<const double> probs, std::size_t label, Metric metric);

// Error comparisons are made on k/n rates; this absorbs representation error.
inline constexpr double kRateEpsilon = 1e-9;

// Error rate: fraction of samples whose label is outside the top-k.
double evaluate_accuracy(const QuantizedModel& model, const EvalSet& eval, Metric metric);
double error_rate(const std::vector<std::vector<double>>& probs, const std::vector<std::uint32_t>& labels,
                  Metric metric);

// Full-precision reference forward pass in double.
struct FakeQuantLayer {
    std::size_t layer = 0;
    FixedPointFormat activation;
    std::optional<FixedPointFormat> weight;
};

struct ForwardTrace {
    std::vector<double> input_max_abs;  // per layer, of the layer input
    double output_max_abs = 0.0;        // of the final layer output
};

// Output of the final layer (probabilities when the graph ends in softmax).
// `fake_quant` rounds one layer's input and weights through the given formats.
std::vector<double> float_forward(const ModelGraph& graph, const Tensor& sample,
                                  const FakeQuantLayer* fake_quant = nullptr, ForwardTrace* trace = nullptr);

// float_forward followed by softmax when the graph does not end in one.
std::vector<double> reference_probabilities(const ModelGraph& graph, const Tensor& sample,
                                            const FakeQuantLayer* fake_quant = nullptr);

double reference_error(const ModelGraph& graph, const EvalSet& eval, Metric metric);

}  // namespace ccnn
