#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ccnn/ceu.hpp"
#include "ccnn/dse.hpp"
#include "ccnn/engine.hpp"
#include "ccnn/model.hpp"
#include "ccnn/quantizer.hpp"

namespace ccnn {

inline constexpr double kDefaultTolerances[] = {0.0, 0.005, 0.01, 0.02, 0.03, 0.05};

struct CascadeOptions {
    Metric metric = Metric::top1;
    double tolerance = 0.01;
    std::uint64_t seed = 2018;
    // Tune and validate on the whole evaluation set instead of disjoint halves.
    bool paper_faithful = false;
    double tune_fraction = 0.5;
    double validation_slack = 0.02;
    int min_wordlength = kMinWordlength;
    int max_wordlength = kMaxWordlength;
    CascadeMode mode = CascadeMode::time_shared;
    DseOptions dse;
    TuneOptions tune;
};

struct EvalSplit {
    std::vector<std::size_t> tune;
    std::vector<std::size_t> validate;
};

// Seeded shuffle, first round(count * tune_fraction) indices tune, the rest
// validate (both sorted). paper_faithful uses every index for both.
EvalSplit split_eval(std::size_t count, std::uint64_t seed, double tune_fraction, bool paper_faithful);

std::vector<SortedProbVector> sorted_predictions(const QuantizedModel& model, const EvalSet& eval);

// The cascade may add at most `tolerance` over the HPU, and together with
// the HPU's own degradation it must stay within reference + tolerance.
double ceu_tolerance(double tolerance, double reference_error, double hpu_error);

struct CascadeEstimates {
    PerfEstimate lpu;
    PerfEstimate hpu;
    CascadeMode mode = CascadeMode::time_shared;
    double cascade_throughput = 0.0;
    BaselineResult baseline;
};

struct CascadeSystem {
    CascadeSystem(std::shared_ptr<const ModelGraph> g, QuantizedModel h, QuantizedModel l)
        : graph(std::move(g)), hpu(std::move(h)), lpu(std::move(l)) {}

    std::shared_ptr<const ModelGraph> graph;
    QuantizedModel hpu;
    QuantizedModel lpu;  // derived from hpu; shares its weight store
    CeuConfig ceu;
    ArchConfig lpu_arch;
    ArchConfig hpu_arch;
    CascadeEstimates estimates;

    // How the system was obtained.
    CascadeOptions options;
    EvalSplit split;
    double reference_error = 0.0;  // full precision, tuning split
    double ceu_tolerance = 0.0;
    std::vector<std::pair<int, double>> lpu_scores;
    TuningReport tuning;
    std::optional<ValidationCheck> validation;  // absent when the validation split is empty

    // Bytes of the distinct weight stores the two units use.
    std::uint64_t stored_weight_bytes() const;
    // Bytes a single-stage HPU quantised from the master weights would store.
    std::uint64_t hpu_only_weight_bytes() const;
};

// Search state shared by builds at several tolerances: the split, the
// wordlength sweep on the tuning half and cached predictions and designs.
class CascadePlanner {
public:
    CascadePlanner(std::shared_ptr<const ModelGraph> graph, EvalSet eval, DeviceModel device, CascadeOptions options);
    // Reuses a sweep computed earlier on the same tuning split.
    CascadePlanner(std::shared_ptr<const ModelGraph> graph, EvalSet eval, DeviceModel device, CascadeOptions options,
                   WordlengthSweep sweep);

    const WordlengthSweep& sweep() const { return sweep_; }
    const EvalSplit& split() const { return split_; }
    const EvalSet& tune_set() const { return tune_; }
    const EvalSet& validate_set() const { return validate_; }
    const CascadeOptions& options() const { return options_; }
    const DeviceModel& device() const { return device_; }

    // LPU/HPU wordlength choice; the LPU score is the estimated cascade
    // throughput with a CEU tuned for that pair. The returned LPU point carries
    // the scheme refined for weights derived from the HPU.
    WordlengthSelection select(double tolerance);

    // Scaling factors of `lpu` re-searched with weights derived from the HPU
    // store of `hpu`, seeded by the sweep's scheme.
    const SearchResult& derived_lpu(const WordlengthPoint& lpu, const WordlengthPoint& hpu);

    CascadeSystem build(double tolerance);
    // Builds around given schemes. `ceu` skips CEU tuning; the tuning report
    // then describes the given config on the tuning split.
    CascadeSystem assemble(double tolerance, const QuantScheme& lpu_scheme, const QuantScheme& hpu_scheme,
                           const std::optional<CeuConfig>& ceu = std::nullopt);

    const UnitDesign& design(const QuantScheme& scheme);

private:
    struct PairPredictions {
        std::vector<SortedProbVector> lpu;
        std::vector<SortedProbVector> hpu;
    };
    const PairPredictions& predictions(const QuantScheme& lpu_scheme, const QuantScheme& hpu_scheme);
    double error_rate_of(const std::vector<SortedProbVector>& preds) const;

    std::shared_ptr<const ModelGraph> graph_;
    EvalSet eval_;
    DeviceModel device_;
    CascadeOptions options_;
    EvalSplit split_;
    EvalSet tune_;
    EvalSet validate_;
    WordlengthSweep sweep_;
    std::map<std::string, PairPredictions> prediction_cache_;
    std::map<std::string, UnitDesign> design_cache_;
    std::map<std::string, SearchResult> derived_cache_;
};

CascadeSystem build_cascade(std::shared_ptr<const ModelGraph> graph, const EvalSet& eval, const DeviceModel& device,
                            const CascadeOptions& options);

struct StageErrors {
    double top1 = 0.0;
    double top5 = 0.0;
};

struct RunStats {
    std::size_t total = 0;
    std::size_t forwarded = 0;
    std::size_t lpu_only = 0;
    std::optional<StageErrors> lpu_error;      // labels given only
    std::optional<StageErrors> hpu_error;      // over all samples
    std::optional<StageErrors> cascade_error;
    double wall_clock_s = 0.0;  // never serialised

    double forwarded_fraction() const { return total ? static_cast<double>(forwarded) / static_cast<double>(total) : 0.0; }
};

struct CascadeRun {
    std::vector<std::vector<double>> probabilities;  // final prediction per sample, class-indexed
    std::vector<bool> forwarded;
    RunStats stats;
};

// Every sample goes through the LPU; samples failing the confidence test are
// recomputed from scratch on the HPU. With labels, per-stage errors are
// measured (the HPU is then also run on every sample for its stage error).
CascadeRun run_cascade(const CascadeSystem& sys, std::span<const Tensor> samples,
                       const std::vector<std::uint32_t>* labels = nullptr);

// Discrete-event simulation of `num_samples` inferences, forwarding every
// sample i with floor((i+1) r) > floor(i r). time_shared runs both units on
// one device back to back; static_partition pipelines the LPU into the HPU.
double simulate_timeline(double lpu_throughput, double hpu_throughput, std::size_t num_samples, double r,
                         CascadeMode mode = CascadeMode::time_shared);
double simulate_timeline(const CascadeSystem& sys, std::size_t num_samples, double r);

struct SweepPoint {
    double tolerance = 0.0;
    bool feasible = false;
    std::string note;  // reason when infeasible
    int lpu_wordlength = 0;
    int hpu_wordlength = 0;
    int baseline_wordlength = 0;
    CeuConfig ceu;
    double forwarded_fraction = 0.0;
    double tune_cascade_error = 0.0;
    double validate_cascade_error = 0.0;
    bool validation_flagged = false;
    double cascade_throughput = 0.0;
    double baseline_throughput = 0.0;
    double speedup = 0.0;
};

std::vector<SweepPoint> sweep_tolerances(CascadePlanner& planner, std::span<const double> tolerances);

// Wordlength, error and optimised throughput per swept wordlength.
struct WordlengthRow {
    int wordlength = 0;
    double error = 0.0;
    double range_only_error = 0.0;
    double degradation = 0.0;
    double throughput = 0.0;
};

std::vector<WordlengthRow> wordlength_table(CascadePlanner& planner);

nlohmann::json report_json(const CascadeSystem& sys, const RunStats* stats, std::span<const SweepPoint> sweep,
                           std::span<const WordlengthRow> wordlengths = {});
std::string report_text(const CascadeSystem& sys, const RunStats* stats, std::span<const SweepPoint> sweep);
// Header "tolerance,speedup,forwarded_fraction"; infeasible points omitted.
std::string sweep_csv(std::span<const SweepPoint> sweep);

void to_json(nlohmann::json& j, const RunStats& s);
void to_json(nlohmann::json& j, const SweepPoint& p);
void to_json(nlohmann::json& j, const WordlengthSweep& s);
void from_json(const nlohmann::json& j, WordlengthSweep& s);

}  // namespace ccnn
