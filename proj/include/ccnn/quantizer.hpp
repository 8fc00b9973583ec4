#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "ccnn/engine.hpp"
#include "ccnn/fixed_point.hpp"
#include "ccnn/model.hpp"
#include "ccnn/quant_scheme.hpp"

namespace ccnn {

// Range and sensitivity statistics gathered on the evaluation set.
struct LayerStats {
    // Max |value| over the layer's weights and biases; 0 for layers without weights.
    std::vector<double> weight_max_abs;
    // Max |value| of the layer's input over all full-precision forward passes.
    std::vector<double> activation_max_abs;
    double output_max_abs = 0.0;
    // Error rate when only this layer is quantised at the probe wordlength.
    std::vector<double> impact_error;
    int probe_wordlength = 4;
    double reference_error = 0.0;
};

struct ProfileOptions {
    int probe_wordlength = 4;
    Metric metric = Metric::top1;
};

LayerStats profile_layer_ranges(const ModelGraph& graph, const EvalSet& eval, const ProfileOptions& options = {});

// Initial scheme: per layer and tensor kind, the largest frac_bits that
// represents the profiled maximum without saturation.
QuantScheme range_scheme(const ModelGraph& graph, const LayerStats& stats, int wordlength);

struct SearchResult {
    QuantScheme scheme;
    double error = 1.0;             // best error found
    double range_only_error = 1.0;  // error of the range-initialised seed
    std::size_t candidates_visited = 0;
};

// Coordinate refinement from the range seed: frac_bits -1, then +1, per
// coordinate in layer order (weights before activations), keeping any move
// that does not raise the error; two full sweeps.
SearchResult search_scaling_factors(const std::shared_ptr<const ModelGraph>& graph, const EvalSet& eval,
                                    int wordlength, Metric metric, const LayerStats& stats);
SearchResult search_scaling_factors(const std::shared_ptr<const ModelGraph>& graph, const EvalSet& eval,
                                    int wordlength, Metric metric);

// The same search for a lower-precision scheme whose weights are derived
// from `source`'s stored codes; starts from `seed`, whose error is reported
// as range_only_error.
SearchResult search_derived_scaling_factors(const QuantizedModel& source, const QuantScheme& seed,
                                            const EvalSet& eval, Metric metric);

struct WordlengthPoint {
    int wordlength = 0;
    QuantScheme scheme;
    double error = 1.0;
    double range_only_error = 1.0;
};

struct WordlengthSweep {
    Metric metric = Metric::top1;
    double reference_error = 0.0;
    std::vector<WordlengthPoint> points;  // ascending wordlength

    const WordlengthPoint& at(int wordlength) const;
    double degradation(int wordlength) const { return at(wordlength).error - reference_error; }
};

WordlengthSweep sweep_wordlengths(const std::shared_ptr<const ModelGraph>& graph, const EvalSet& eval, Metric metric,
                                  int min_wordlength = kMinWordlength, int max_wordlength = kMaxWordlength);

// Smallest swept wordlength whose degradation vs the reference is within
// `tolerance`, or nullopt.
std::optional<int> smallest_complying_wordlength(const WordlengthSweep& sweep, double tolerance,
                                                 int min_wordlength = kMinWordlength);

// Estimated cascade throughput for an (LPU, HPU) candidate pair.
using LpuScorer = std::function<double(const WordlengthPoint& lpu, const WordlengthPoint& hpu)>;

struct WordlengthSelection {
    WordlengthPoint lpu;
    WordlengthPoint hpu;
    std::vector<std::pair<int, double>> lpu_scores;  // (wordlength, score) for every candidate
};

// HPU: smallest wordlength above the sweep minimum whose degradation is within
// tolerance (throws infeasible_tolerance when none is). LPU: the wordlength
// below the HPU maximising `score`; ties go to the smaller wordlength.
WordlengthSelection select_wordlengths(const WordlengthSweep& sweep, double tolerance, const LpuScorer& score);

}  // namespace ccnn
