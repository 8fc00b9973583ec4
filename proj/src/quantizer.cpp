#include "ccnn/quantizer.hpp"

#include <algorithm>
#include <cmath>

namespace ccnn {

namespace {

double tensor_max_abs(const Tensor& t) {
    double m = 0.0;
    for (float v : t.data) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
}

bool ends_in_softmax(const ModelGraph& graph) { return std::holds_alternative<Softmax>(graph.layers.back().kind); }

// A tunable scaling factor: the frac_bits of one format in the scheme.
struct Coordinate {
    std::size_t layer = 0;
    enum Kind { weight, activation, output } kind = activation;
};

int& frac_of(QuantScheme& s, const Coordinate& c) {
    switch (c.kind) {
    case Coordinate::weight: return s.layers[c.layer].weight->frac_bits;
    case Coordinate::activation: return s.layers[c.layer].activation.frac_bits;
    case Coordinate::output: break;
    }
    return s.output.frac_bits;
}

double scheme_error(const std::shared_ptr<const ModelGraph>& graph, const QuantScheme& scheme, const EvalSet& eval,
                    Metric metric) {
    return evaluate_accuracy(QuantizedModel(graph, scheme), eval, metric);
}

}  // namespace

LayerStats profile_layer_ranges(const ModelGraph& graph, const EvalSet& eval, const ProfileOptions& options) {
    if (eval.samples.empty()) throw Error(ErrorCode::empty_eval_set, "cannot profile on an empty evaluation set");
    const std::size_t n = graph.layers.size();
    LayerStats stats;
    stats.probe_wordlength = options.probe_wordlength;
    stats.weight_max_abs.assign(n, 0.0);
    stats.activation_max_abs.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!graph.layers[i].has_weights()) continue;
        const auto& p = graph.params(graph.layers[i]);
        stats.weight_max_abs[i] = std::max(tensor_max_abs(p.weight), tensor_max_abs(p.bias));
    }

    std::vector<std::vector<double>> probs;
    probs.reserve(eval.size());
    for (const auto& sample : eval.samples) {
        ForwardTrace trace;
        auto out = float_forward(graph, sample, nullptr, &trace);
        for (std::size_t i = 0; i < n; ++i) {
            stats.activation_max_abs[i] = std::max(stats.activation_max_abs[i], trace.input_max_abs[i]);
        }
        stats.output_max_abs = std::max(stats.output_max_abs, trace.output_max_abs);
        probs.push_back(ends_in_softmax(graph) ? std::move(out) : softmax(out));
    }
    stats.reference_error = error_rate(probs, eval.labels, options.metric);

    const auto probe = range_scheme(graph, stats, options.probe_wordlength);
    stats.impact_error.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const FakeQuantLayer fq{i, probe.layers[i].activation, probe.layers[i].weight};
        std::vector<std::vector<double>> layer_probs;
        layer_probs.reserve(eval.size());
        for (const auto& sample : eval.samples) layer_probs.push_back(reference_probabilities(graph, sample, &fq));
        stats.impact_error[i] = error_rate(layer_probs, eval.labels, options.metric);
    }
    return stats;
}

QuantScheme range_scheme(const ModelGraph& graph, const LayerStats& stats, int wordlength) {
    FixedPointFormat{wordlength, 0}.validate();
    QuantScheme scheme;
    scheme.wordlength = wordlength;
    for (std::size_t i = 0; i < graph.layers.size(); ++i) {
        LayerFormats lf;
        lf.layer = graph.layers[i].name;
        lf.activation = {wordlength, range_frac_bits(stats.activation_max_abs.at(i), wordlength)};
        if (graph.layers[i].has_weights()) {
            lf.weight = FixedPointFormat{wordlength, range_frac_bits(stats.weight_max_abs.at(i), wordlength)};
        }
        scheme.layers.push_back(std::move(lf));
    }
    scheme.output = {wordlength, range_frac_bits(stats.output_max_abs, wordlength)};
    return scheme;
}

namespace {

SearchResult coordinate_search(const ModelGraph& graph, QuantScheme seed,
                               const std::function<double(const QuantScheme&)>& evaluate) {
    SearchResult result;
    result.scheme = std::move(seed);
    result.error = evaluate(result.scheme);
    result.range_only_error = result.error;
    result.candidates_visited = 1;

    std::vector<Coordinate> coords;
    for (std::size_t i = 0; i < graph.layers.size(); ++i) {
        if (graph.layers[i].has_weights()) coords.push_back({i, Coordinate::weight});
        coords.push_back({i, Coordinate::activation});
    }
    if (!ends_in_softmax(graph)) coords.push_back({0, Coordinate::output});

    constexpr int kSweeps = 2;
    for (int sweep = 0; sweep < kSweeps; ++sweep) {
        for (const auto& c : coords) {
            for (int delta : {-1, +1}) {
                QuantScheme candidate = result.scheme;
                int& f = frac_of(candidate, c);
                if (f + delta < kMinFracBits || f + delta > kMaxFracBits) continue;
                f += delta;
                const double err = evaluate(candidate);
                ++result.candidates_visited;
                if (err <= result.error) {
                    result.scheme = std::move(candidate);
                    result.error = err;
                    break;
                }
            }
        }
    }
    return result;
}

}  // namespace

SearchResult search_scaling_factors(const std::shared_ptr<const ModelGraph>& graph, const EvalSet& eval,
                                    int wordlength, Metric metric, const LayerStats& stats) {
    return coordinate_search(*graph, range_scheme(*graph, stats, wordlength),
                             [&](const QuantScheme& s) { return scheme_error(graph, s, eval, metric); });
}

SearchResult search_derived_scaling_factors(const QuantizedModel& source, const QuantScheme& seed,
                                            const EvalSet& eval, Metric metric) {
    return coordinate_search(source.graph(), seed, [&](const QuantScheme& s) {
        return evaluate_accuracy(source.derive(s), eval, metric);
    });
}

SearchResult search_scaling_factors(const std::shared_ptr<const ModelGraph>& graph, const EvalSet& eval,
                                    int wordlength, Metric metric) {
    return search_scaling_factors(graph, eval, wordlength, metric, profile_layer_ranges(*graph, eval, {4, metric}));
}

const WordlengthPoint& WordlengthSweep::at(int wordlength) const {
    for (const auto& p : points) {
        if (p.wordlength == wordlength) return p;
    }
    throw Error(ErrorCode::index_out_of_range, "wordlength " + std::to_string(wordlength) + " was not swept");
}

WordlengthSweep sweep_wordlengths(const std::shared_ptr<const ModelGraph>& graph, const EvalSet& eval, Metric metric,
                                  int min_wordlength, int max_wordlength) {
    if (min_wordlength < kMinWordlength || max_wordlength > kMaxWordlength || min_wordlength > max_wordlength) {
        throw Error(ErrorCode::invalid_config, "wordlength scan range out of bounds");
    }
    const auto stats = profile_layer_ranges(*graph, eval, {4, metric});
    WordlengthSweep sweep;
    sweep.metric = metric;
    sweep.reference_error = stats.reference_error;
    for (int wl = min_wordlength; wl <= max_wordlength; ++wl) {
        auto found = search_scaling_factors(graph, eval, wl, metric, stats);
        sweep.points.push_back({wl, std::move(found.scheme), found.error, found.range_only_error});
    }
    return sweep;
}

std::optional<int> smallest_complying_wordlength(const WordlengthSweep& sweep, double tolerance, int min_wordlength) {
    for (const auto& p : sweep.points) {
        if (p.wordlength < min_wordlength) continue;
        if (p.error - sweep.reference_error <= tolerance + kRateEpsilon) return p.wordlength;
    }
    return std::nullopt;
}

WordlengthSelection select_wordlengths(const WordlengthSweep& sweep, double tolerance, const LpuScorer& score) {
    if (tolerance < 0.0) throw Error(ErrorCode::invalid_config, "tolerance must be >= 0");
    if (sweep.points.size() < 2) throw Error(ErrorCode::invalid_config, "need at least two swept wordlengths");
    const int lowest = sweep.points.front().wordlength;
    const auto hpu_wl = smallest_complying_wordlength(sweep, tolerance, lowest + 1);
    if (!hpu_wl) {
        throw Error(ErrorCode::infeasible_tolerance,
                    "no swept wordlength meets the tolerance; consider a full-precision unit");
    }
    WordlengthSelection sel;
    sel.hpu = sweep.at(*hpu_wl);
    double best = -1.0;
    for (const auto& p : sweep.points) {
        if (p.wordlength >= *hpu_wl) break;
        const double s = score(p, sel.hpu);
        sel.lpu_scores.emplace_back(p.wordlength, s);
        if (s > best) {
            best = s;
            sel.lpu = p;
        }
    }
    return sel;
}

}  // namespace ccnn
