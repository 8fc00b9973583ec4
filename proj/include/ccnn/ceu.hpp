#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "ccnn/engine.hpp"

namespace ccnn {

// Probabilities in descending order; class_order[i] is the class of probs[i].
struct SortedProbVector {
    std::vector<double> probs;
    std::vector<std::size_t> class_order;

    std::size_t size() const { return probs.size(); }
    // Throws index_out_of_range/invalid_config if not sorted, not in [0,1] or
    // not normalised within 1e-6.
    void validate() const;
};

// Sorts a class-indexed probability vector; equal probabilities keep the
// lower class index first.
SortedProbVector sort_probabilities(std::span<const double> probs);

struct CeuConfig {
    std::size_t m = 1;
    std::size_t n = 2;
    double th = 0.0;

    // 1 <= M < N <= num_classes.
    void validate(std::size_t num_classes) const;

    friend bool operator==(const CeuConfig&, const CeuConfig&) = default;
};

// Sum of the top M probabilities minus the sum of ranks M+1..N.
double gbvsb(const SortedProbVector& p, std::size_t m, std::size_t n);

// The prediction stays on the LPU iff gbvsb >= th.
bool is_confident(const SortedProbVector& p, const CeuConfig& cfg);

// Whether the metric counts the sorted prediction as correct.
bool is_hit(const SortedProbVector& p, std::size_t label, Metric metric);

struct CeuOperatingPoint {
    CeuConfig config;
    double error = 0.0;
    double forwarded_fraction = 0.0;
};

struct TuningReport {
    std::size_t samples = 0;
    double lpu_error = 0.0;
    double hpu_error = 0.0;
    double tolerance = 0.0;
    CeuOperatingPoint chosen;
    // Error vs forwarded fraction front over every (M, N, th) candidate.
    std::vector<CeuOperatingPoint> pareto;
};

struct TuningResult {
    CeuConfig config;
    TuningReport report;
};

struct TuneOptions {
    std::size_t max_n = 10;
};

// Grid over 1 <= M < N <= min(num_classes, max_n) and, per pair, an exact
// threshold sweep. Picks the config with the smallest forwarded fraction whose
// simulated cascade error is within hpu_error + tolerance; ties go to smaller
// N, then M, then th.
TuningResult tune_ceu(std::span<const SortedProbVector> lpu_preds, std::span<const SortedProbVector> hpu_preds,
                      std::span<const std::uint32_t> labels, double tolerance, Metric metric,
                      const TuneOptions& options = {});

// Simulated cascade: HPU prediction when forwarded, LPU otherwise.
CeuOperatingPoint evaluate_ceu(const CeuConfig& cfg, std::span<const SortedProbVector> lpu_preds,
                               std::span<const SortedProbVector> hpu_preds, std::span<const std::uint32_t> labels,
                               Metric metric);

// Held-out check of a tuned config.
struct ValidationCheck {
    std::size_t samples = 0;
    double cascade_error = 0.0;
    double hpu_error = 0.0;
    double forwarded_fraction = 0.0;
    double bound = 0.0;   // hpu_error + tolerance
    double excess = 0.0;  // max(0, cascade_error - bound)
    double slack = 0.02;
    bool flagged = false;  // excess > slack
};

ValidationCheck validate_ceu(const CeuConfig& cfg, std::span<const SortedProbVector> lpu_preds,
                             std::span<const SortedProbVector> hpu_preds, std::span<const std::uint32_t> labels,
                             double tolerance, Metric metric, double slack = 0.02);

void to_json(nlohmann::json& j, const CeuConfig& c);
void from_json(const nlohmann::json& j, CeuConfig& c);
void to_json(nlohmann::json& j, const CeuOperatingPoint& p);
void to_json(nlohmann::json& j, const TuningReport& r);
void to_json(nlohmann::json& j, const ValidationCheck& v);

}  // namespace ccnn
