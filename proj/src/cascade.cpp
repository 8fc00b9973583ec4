#include "ccnn/cascade.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ccnn/error.hpp"

namespace ccnn {

namespace {

// Re-throws a library error with the stage that raised it.
template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(e.code(), std::string(name) + ": " + e.detail());
    }
}

std::string format(const char* fmt, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

}  // namespace

EvalSplit split_eval(std::size_t count, std::uint64_t seed, double tune_fraction, bool paper_faithful) {
    if (count == 0) throw Error(ErrorCode::empty_eval_set, "cannot split an empty evaluation set");
    EvalSplit split;
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (paper_faithful) {
        split.tune = order;
        split.validate = order;
        return split;
    }
    if (!(tune_fraction > 0.0 && tune_fraction <= 1.0)) {
        throw Error(ErrorCode::invalid_config, "tune fraction must be in (0, 1]");
    }
    // Hand-rolled Fisher-Yates: std::shuffle's draws are not specified.
    std::mt19937_64 rng(seed);
    for (std::size_t i = count - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    auto tune_count = static_cast<std::size_t>(std::llround(static_cast<double>(count) * tune_fraction));
    tune_count = std::clamp<std::size_t>(tune_count, 1, count);
    split.tune.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(tune_count));
    split.validate.assign(order.begin() + static_cast<std::ptrdiff_t>(tune_count), order.end());
    std::sort(split.tune.begin(), split.tune.end());
    std::sort(split.validate.begin(), split.validate.end());
    return split;
}

std::vector<SortedProbVector> sorted_predictions(const QuantizedModel& model, const EvalSet& eval) {
    const auto probs = predict_batch(model, eval.samples, model.fc_batch);
    std::vector<SortedProbVector> out;
    out.reserve(probs.size());
    for (const auto& p : probs) out.push_back(sort_probabilities(p));
    return out;
}

double ceu_tolerance(double tolerance, double reference_error, double hpu_error) {
    return std::max(0.0, std::min(tolerance, reference_error + tolerance - hpu_error));
}

std::uint64_t CascadeSystem::stored_weight_bytes() const {
    std::set<const WeightStore*> stores{hpu.store().get(), lpu.store().get()};
    std::uint64_t bytes = 0;
    for (const auto* s : stores) bytes += s->stored_bytes();
    return bytes;
}

std::uint64_t CascadeSystem::hpu_only_weight_bytes() const {
    return QuantizedModel(graph, hpu.scheme()).store()->stored_bytes();
}

CascadePlanner::CascadePlanner(std::shared_ptr<const ModelGraph> graph, EvalSet eval, DeviceModel device,
                               CascadeOptions options)
    : graph_(std::move(graph)), eval_(std::move(eval)), device_(std::move(device)), options_(std::move(options)) {
    stage("inputs", [&] {
        validate(*graph_);
        validate(eval_, graph_->input_shape);
        device_.validate();
    });
    split_ = split_eval(eval_.samples.size(), options_.seed, options_.tune_fraction, options_.paper_faithful);
    tune_ = subset(eval_, split_.tune);
    validate_ = subset(eval_, split_.validate);
    sweep_ = stage("quantize", [&] {
        return sweep_wordlengths(graph_, tune_, options_.metric, options_.min_wordlength, options_.max_wordlength);
    });
}

CascadePlanner::CascadePlanner(std::shared_ptr<const ModelGraph> graph, EvalSet eval, DeviceModel device,
                               CascadeOptions options, WordlengthSweep sweep)
    : graph_(std::move(graph)), eval_(std::move(eval)), device_(std::move(device)), options_(std::move(options)),
      sweep_(std::move(sweep)) {
    stage("inputs", [&] {
        validate(*graph_);
        validate(eval_, graph_->input_shape);
        device_.validate();
        if (sweep_.points.empty()) throw Error(ErrorCode::invalid_config, "empty wordlength sweep");
        for (const auto& p : sweep_.points) p.scheme.validate(*graph_);
    });
    split_ = split_eval(eval_.samples.size(), options_.seed, options_.tune_fraction, options_.paper_faithful);
    tune_ = subset(eval_, split_.tune);
    validate_ = subset(eval_, split_.validate);
}

const CascadePlanner::PairPredictions& CascadePlanner::predictions(const QuantScheme& lpu_scheme,
                                                                   const QuantScheme& hpu_scheme) {
    const std::string key = nlohmann::json(lpu_scheme).dump() + "|" + nlohmann::json(hpu_scheme).dump();
    auto it = prediction_cache_.find(key);
    if (it != prediction_cache_.end()) return it->second;
    QuantizedModel hpu(graph_, hpu_scheme);
    hpu.fc_batch = options_.dse.fc_batch;
    const auto lpu = hpu.derive(lpu_scheme);
    PairPredictions p{sorted_predictions(lpu, tune_), sorted_predictions(hpu, tune_)};
    return prediction_cache_.emplace(key, std::move(p)).first->second;
}

const UnitDesign& CascadePlanner::design(const QuantScheme& scheme) {
    // The workload depends on the scheme through its wordlength only.
    const std::string key = std::to_string(scheme.wordlength);
    auto it = design_cache_.find(key);
    if (it != design_cache_.end()) return it->second;
    auto d = optimize_unit(*graph_, scheme, device_, options_.dse);
    return design_cache_.emplace(key, std::move(d)).first->second;
}

const SearchResult& CascadePlanner::derived_lpu(const WordlengthPoint& lpu, const WordlengthPoint& hpu) {
    const std::string key = std::to_string(lpu.wordlength) + "|" + nlohmann::json(hpu.scheme).dump();
    auto it = derived_cache_.find(key);
    if (it != derived_cache_.end()) return it->second;
    QuantizedModel source(graph_, hpu.scheme);
    source.fc_batch = options_.dse.fc_batch;
    auto found = search_derived_scaling_factors(source, lpu.scheme, tune_, options_.metric);
    return derived_cache_.emplace(key, std::move(found)).first->second;
}

WordlengthSelection CascadePlanner::select(double tolerance) {
    const LpuScorer score = [&](const WordlengthPoint& lpu, const WordlengthPoint& hpu) {
        const auto& preds = predictions(derived_lpu(lpu, hpu).scheme, hpu.scheme);
        const double tol = ceu_tolerance(tolerance, sweep_.reference_error, hpu.error);
        const auto tuned = tune_ceu(preds.lpu, preds.hpu, tune_.labels, tol, options_.metric, options_.tune);
        return cascade_throughput(design(lpu.scheme).perf.throughput, design(hpu.scheme).perf.throughput,
                                  tuned.report.chosen.forwarded_fraction, options_.mode);
    };
    auto sel = stage("select", [&] { return select_wordlengths(sweep_, tolerance, score); });
    const auto& refined = derived_lpu(sel.lpu, sel.hpu);
    sel.lpu.scheme = refined.scheme;
    sel.lpu.error = refined.error;
    return sel;
}

CascadeSystem CascadePlanner::build(double tolerance) {
    const auto sel = select(tolerance);
    auto sys = assemble(tolerance, sel.lpu.scheme, sel.hpu.scheme);
    sys.lpu_scores = sel.lpu_scores;
    return sys;
}

CascadeSystem CascadePlanner::assemble(double tolerance, const QuantScheme& lpu_scheme, const QuantScheme& hpu_scheme,
                                       const std::optional<CeuConfig>& ceu) {
    if (tolerance < 0.0) throw Error(ErrorCode::invalid_config, "tolerance must be >= 0");
    if (lpu_scheme.wordlength >= hpu_scheme.wordlength) {
        throw Error(ErrorCode::invalid_config, "LPU wordlength must be below the HPU wordlength");
    }
    QuantizedModel hpu = stage("quantize", [&] { return QuantizedModel(graph_, hpu_scheme); });
    hpu.fc_batch = options_.dse.fc_batch;
    QuantizedModel lpu = stage("quantize", [&] { return hpu.derive(lpu_scheme); });

    CascadeSystem sys(graph_, hpu, lpu);
    sys.options = options_;
    sys.options.tolerance = tolerance;
    sys.split = split_;
    sys.reference_error = sweep_.reference_error;

    const auto& preds = predictions(lpu_scheme, hpu_scheme);
    const double hpu_error = error_rate_of(preds.hpu);
    sys.ceu_tolerance = ceu_tolerance(tolerance, sys.reference_error, hpu_error);

    stage("tune", [&] {
        if (ceu) {
            ceu->validate(graph_->num_classes());
            sys.ceu = *ceu;
            auto& r = sys.tuning;
            r.samples = tune_.samples.size();
            r.lpu_error = error_rate_of(preds.lpu);
            r.hpu_error = hpu_error;
            r.tolerance = sys.ceu_tolerance;
            r.chosen = evaluate_ceu(*ceu, preds.lpu, preds.hpu, tune_.labels, options_.metric);
        } else {
            auto tuned = tune_ceu(preds.lpu, preds.hpu, tune_.labels, sys.ceu_tolerance, options_.metric, options_.tune);
            sys.ceu = tuned.config;
            sys.tuning = std::move(tuned.report);
        }
        if (!validate_.samples.empty()) {
            const auto v_lpu = sorted_predictions(lpu, validate_);
            const auto v_hpu = sorted_predictions(hpu, validate_);
            sys.validation = validate_ceu(sys.ceu, v_lpu, v_hpu, validate_.labels, sys.ceu_tolerance, options_.metric,
                                          options_.validation_slack);
        }
    });

    stage("dse", [&] {
        const auto& ld = design(lpu_scheme);
        const auto& hd = design(hpu_scheme);
        sys.lpu_arch = ld.arch;
        sys.hpu_arch = hd.arch;
        auto& est = sys.estimates;
        est.lpu = ld.perf;
        est.hpu = hd.perf;
        est.mode = options_.mode;
        est.cascade_throughput =
            cascade_throughput(ld.perf.throughput, hd.perf.throughput, sys.tuning.chosen.forwarded_fraction, options_.mode);
        est.baseline = baseline_speedup(*graph_, sweep_, device_, tolerance, est.cascade_throughput, options_.dse);
    });
    return sys;
}

double CascadePlanner::error_rate_of(const std::vector<SortedProbVector>& preds) const {
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) wrong += is_hit(preds[i], tune_.labels[i], options_.metric) ? 0 : 1;
    return static_cast<double>(wrong) / static_cast<double>(preds.size());
}

CascadeSystem build_cascade(std::shared_ptr<const ModelGraph> graph, const EvalSet& eval, const DeviceModel& device,
                            const CascadeOptions& options) {
    CascadePlanner planner(std::move(graph), eval, device, options);
    return planner.build(options.tolerance);
}

namespace {

StageErrors stage_errors(const std::vector<std::vector<double>>& probs, const std::vector<std::uint32_t>& labels) {
    return {error_rate(probs, labels, Metric::top1), error_rate(probs, labels, Metric::top5)};
}

}  // namespace

CascadeRun run_cascade(const CascadeSystem& sys, std::span<const Tensor> samples,
                       const std::vector<std::uint32_t>* labels) {
    const auto t0 = std::chrono::steady_clock::now();
    const Shape expected = sys.graph->input_shape.as_shape();
    for (const auto& s : samples) {
        if (s.shape != expected) throw Error(ErrorCode::shape_mismatch, "sample shape does not match the model input");
    }
    if (labels && labels->size() != samples.size()) throw Error(ErrorCode::shape_mismatch, "label count mismatch");

    CascadeRun run;
    run.probabilities = predict_batch(sys.lpu, samples, sys.lpu.fc_batch);
    run.forwarded.resize(samples.size());
    std::vector<Tensor> redo;
    std::vector<std::size_t> redo_index;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        run.forwarded[i] = !is_confident(sort_probabilities(run.probabilities[i]), sys.ceu);
        if (run.forwarded[i]) {
            redo.push_back(samples[i]);
            redo_index.push_back(i);
        }
    }
    std::vector<std::vector<double>> lpu_probs;
    if (labels) lpu_probs = run.probabilities;
    const auto hpu_probs = predict_batch(sys.hpu, redo, sys.hpu.fc_batch);
    for (std::size_t j = 0; j < redo_index.size(); ++j) run.probabilities[redo_index[j]] = hpu_probs[j];

    auto& st = run.stats;
    st.total = samples.size();
    st.forwarded = redo_index.size();
    st.lpu_only = st.total - st.forwarded;
    if (labels && !samples.empty()) {
        st.lpu_error = stage_errors(lpu_probs, *labels);
        st.hpu_error = stage_errors(predict_batch(sys.hpu, samples, sys.hpu.fc_batch), *labels);
        st.cascade_error = stage_errors(run.probabilities, *labels);
    }
    st.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

double simulate_timeline(double lpu_throughput, double hpu_throughput, std::size_t num_samples, double r,
                         CascadeMode mode) {
    if (!(lpu_throughput > 0.0) || !(hpu_throughput > 0.0) || num_samples == 0) {
        throw Error(ErrorCode::invalid_config, "simulation needs positive throughputs and samples");
    }
    if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorCode::invalid_config, "forwarded fraction must be in [0, 1]");
    const long double lpu_latency = 1.0L / lpu_throughput;
    const long double hpu_latency = 1.0L / hpu_throughput;
    long double lpu_free = 0.0L;  // time the LPU finishes its current sample
    long double hpu_free = 0.0L;
    for (std::size_t i = 0; i < num_samples; ++i) {
        const bool forward = std::floor(static_cast<long double>(i + 1) * r) > std::floor(static_cast<long double>(i) * r);
        if (mode == CascadeMode::time_shared) {
            // One device: the HPU pass occupies it right after the LPU pass.
            lpu_free += lpu_latency;
            if (forward) lpu_free += hpu_latency;
            hpu_free = lpu_free;
        } else {
            lpu_free += lpu_latency;
            if (forward) hpu_free = std::max(hpu_free, lpu_free) + hpu_latency;
        }
    }
    const long double makespan = std::max(lpu_free, hpu_free);
    return static_cast<double>(static_cast<long double>(num_samples) / makespan);
}

double simulate_timeline(const CascadeSystem& sys, std::size_t num_samples, double r) {
    return simulate_timeline(sys.estimates.lpu.throughput, sys.estimates.hpu.throughput, num_samples, r,
                             sys.estimates.mode);
}

std::vector<SweepPoint> sweep_tolerances(CascadePlanner& planner, std::span<const double> tolerances) {
    std::vector<SweepPoint> out;
    for (double tol : tolerances) {
        SweepPoint p;
        p.tolerance = tol;
        try {
            const auto sys = planner.build(tol);
            p.feasible = true;
            p.lpu_wordlength = sys.lpu.scheme().wordlength;
            p.hpu_wordlength = sys.hpu.scheme().wordlength;
            p.baseline_wordlength = sys.estimates.baseline.wordlength;
            p.ceu = sys.ceu;
            p.forwarded_fraction = sys.tuning.chosen.forwarded_fraction;
            p.tune_cascade_error = sys.tuning.chosen.error;
            if (sys.validation) {
                p.validate_cascade_error = sys.validation->cascade_error;
                p.validation_flagged = sys.validation->flagged;
            }
            p.cascade_throughput = sys.estimates.cascade_throughput;
            p.baseline_throughput = sys.estimates.baseline.design.perf.throughput;
            p.speedup = sys.estimates.baseline.speedup;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::infeasible_tolerance) throw;
            p.note = e.detail();
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<WordlengthRow> wordlength_table(CascadePlanner& planner) {
    std::vector<WordlengthRow> rows;
    const auto& sweep = planner.sweep();
    for (const auto& p : sweep.points) {
        WordlengthRow r;
        r.wordlength = p.wordlength;
        r.error = p.error;
        r.range_only_error = p.range_only_error;
        r.degradation = p.error - sweep.reference_error;
        r.throughput = planner.design(p.scheme).perf.throughput;
        rows.push_back(r);
    }
    return rows;
}

void to_json(nlohmann::json& j, const RunStats& s) {
    j = {{"total", s.total},
         {"forwarded", s.forwarded},
         {"lpu_only", s.lpu_only},
         {"forwarded_fraction", s.forwarded_fraction()}};
    auto errors = [](const std::optional<StageErrors>& e) {
        return e ? nlohmann::json{{"top1", e->top1}, {"top5", e->top5}} : nlohmann::json(nullptr);
    };
    j["lpu_error"] = errors(s.lpu_error);
    j["hpu_error"] = errors(s.hpu_error);
    j["cascade_error"] = errors(s.cascade_error);
}

void to_json(nlohmann::json& j, const SweepPoint& p) {
    j = {{"tolerance", p.tolerance}, {"feasible", p.feasible}};
    if (!p.feasible) {
        j["note"] = p.note;
        return;
    }
    j["lpu_wordlength"] = p.lpu_wordlength;
    j["hpu_wordlength"] = p.hpu_wordlength;
    j["baseline_wordlength"] = p.baseline_wordlength;
    j["ceu"] = p.ceu;
    j["forwarded_fraction"] = p.forwarded_fraction;
    j["tune_cascade_error"] = p.tune_cascade_error;
    j["validate_cascade_error"] = p.validate_cascade_error;
    j["validation_flagged"] = p.validation_flagged;
    j["cascade_throughput"] = p.cascade_throughput;
    j["baseline_throughput"] = p.baseline_throughput;
    j["speedup"] = p.speedup;
}

void to_json(nlohmann::json& j, const WordlengthSweep& s) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : s.points) {
        points.push_back({{"wordlength", p.wordlength},
                          {"error", p.error},
                          {"range_only_error", p.range_only_error},
                          {"scheme", p.scheme}});
    }
    j = {{"metric", to_string(s.metric)}, {"reference_error", s.reference_error}, {"points", points}};
}

void from_json(const nlohmann::json& j, WordlengthSweep& s) {
    s.metric = parse_metric(j.at("metric").get<std::string>());
    j.at("reference_error").get_to(s.reference_error);
    s.points.clear();
    for (const auto& p : j.at("points")) {
        WordlengthPoint w;
        p.at("wordlength").get_to(w.wordlength);
        p.at("error").get_to(w.error);
        p.at("range_only_error").get_to(w.range_only_error);
        p.at("scheme").get_to(w.scheme);
        s.points.push_back(std::move(w));
    }
}

namespace {

nlohmann::json unit_json(const QuantizedModel& model, const ArchConfig& arch, const PerfEstimate& perf) {
    return {{"wordlength", model.scheme().wordlength}, {"scheme", model.scheme()}, {"arch", arch}, {"perf", perf}};
}

}  // namespace

nlohmann::json report_json(const CascadeSystem& sys, const RunStats* stats, std::span<const SweepPoint> sweep,
                           std::span<const WordlengthRow> wordlengths) {
    const auto& o = sys.options;
    nlohmann::json j;
    j["inputs"] = {{"tolerance", o.tolerance},
                   {"metric", to_string(o.metric)},
                   {"seed", o.seed},
                   {"paper_faithful", o.paper_faithful},
                   {"tune_samples", sys.split.tune.size()},
                   {"validate_samples", sys.split.validate.size()},
                   {"cascade_mode", to_string(o.mode)}};
    j["reference_error"] = sys.reference_error;
    j["lpu"] = unit_json(sys.lpu, sys.lpu_arch, sys.estimates.lpu);
    j["hpu"] = unit_json(sys.hpu, sys.hpu_arch, sys.estimates.hpu);
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& [wl, s] : sys.lpu_scores) scores.push_back({{"wordlength", wl}, {"cascade_throughput", s}});
    j["lpu_candidates"] = scores;
    j["ceu"] = sys.ceu;
    j["ceu_tolerance"] = sys.ceu_tolerance;
    j["tuning"] = sys.tuning;
    j["validation"] = sys.validation ? nlohmann::json(*sys.validation) : nlohmann::json(nullptr);
    const auto& b = sys.estimates.baseline;
    j["estimates"] = {{"lpu_throughput", sys.estimates.lpu.throughput},
                      {"hpu_throughput", sys.estimates.hpu.throughput},
                      {"forwarded_fraction", sys.tuning.chosen.forwarded_fraction},
                      {"cascade_throughput", sys.estimates.cascade_throughput},
                      {"baseline", {{"wordlength", b.wordlength}, {"arch", b.design.arch}, {"perf", b.design.perf}}},
                      {"speedup", b.speedup}};
    j["storage"] = {{"cascade_weight_bytes", sys.stored_weight_bytes()},
                    {"hpu_only_weight_bytes", sys.hpu_only_weight_bytes()}};
    j["run"] = stats ? nlohmann::json(*stats) : nlohmann::json(nullptr);
    nlohmann::json wl = nlohmann::json::array();
    for (const auto& r : wordlengths) {
        wl.push_back({{"wordlength", r.wordlength},
                      {"error", r.error},
                      {"range_only_error", r.range_only_error},
                      {"degradation", r.degradation},
                      {"throughput", r.throughput}});
    }
    j["wordlength_sweep"] = wl;
    j["tolerance_sweep"] = nlohmann::json(std::vector<SweepPoint>(sweep.begin(), sweep.end()));
    return j;
}

std::string report_text(const CascadeSystem& sys, const RunStats* stats, std::span<const SweepPoint> sweep) {
    std::ostringstream out;
    const auto& e = sys.estimates;
    out << format("tolerance %.4f  metric %s  seed %llu%s\n", sys.options.tolerance, to_string(sys.options.metric),
                  static_cast<unsigned long long>(sys.options.seed), sys.options.paper_faithful ? "  (paper-faithful)" : "");
    out << format("reference error %.4f\n\n", sys.reference_error);
    out << format("%-9s %4s %12s %8s %10s %10s %8s\n", "unit", "wl", "error(tune)", "pe", "macc/pe", "inf/s", "bound");
    out << format("%-9s %4d %12.4f %8llu %10llu %10.4g %8s\n", "LPU", sys.lpu.scheme().wordlength,
                  sys.tuning.lpu_error, static_cast<unsigned long long>(sys.lpu_arch.num_pe),
                  static_cast<unsigned long long>(sys.lpu_arch.macc_per_pe), e.lpu.throughput, to_string(e.lpu.bound));
    out << format("%-9s %4d %12.4f %8llu %10llu %10.4g %8s\n", "HPU", sys.hpu.scheme().wordlength,
                  sys.tuning.hpu_error, static_cast<unsigned long long>(sys.hpu_arch.num_pe),
                  static_cast<unsigned long long>(sys.hpu_arch.macc_per_pe), e.hpu.throughput, to_string(e.hpu.bound));
    out << format("%-9s %4d %12s %8llu %10llu %10.4g %8s\n", "baseline", e.baseline.wordlength, "-",
                  static_cast<unsigned long long>(e.baseline.design.arch.num_pe),
                  static_cast<unsigned long long>(e.baseline.design.arch.macc_per_pe), e.baseline.design.perf.throughput,
                  to_string(e.baseline.design.perf.bound));
    out << format("\nCEU  M=%zu N=%zu th=%.6f  forwarded %.4f  cascade error(tune) %.4f\n", sys.ceu.m, sys.ceu.n,
                  sys.ceu.th, sys.tuning.chosen.forwarded_fraction, sys.tuning.chosen.error);
    if (sys.validation) {
        const auto& v = *sys.validation;
        out << format("validation  error %.4f  bound %.4f  excess %.4f%s\n", v.cascade_error, v.bound, v.excess,
                      v.flagged ? "  FLAGGED" : "");
    }
    out << format("cascade %.4g inf/s (%s)  speedup %.4f\n", e.cascade_throughput, to_string(e.mode),
                  e.baseline.speedup);
    out << format("weights  cascade %llu B  HPU-only %llu B\n", static_cast<unsigned long long>(sys.stored_weight_bytes()),
                  static_cast<unsigned long long>(sys.hpu_only_weight_bytes()));
    if (stats) {
        out << format("\nrun  %zu samples, %zu forwarded (%.4f)\n", stats->total, stats->forwarded,
                      stats->forwarded_fraction());
        if (stats->cascade_error) {
            out << format("     top1 error  LPU %.4f  HPU %.4f  cascade %.4f\n", stats->lpu_error->top1,
                          stats->hpu_error->top1, stats->cascade_error->top1);
            out << format("     top5 error  LPU %.4f  HPU %.4f  cascade %.4f\n", stats->lpu_error->top5,
                          stats->hpu_error->top5, stats->cascade_error->top5);
        }
    }
    if (!sweep.empty()) {
        out << format("\n%9s %4s %4s %4s %10s %10s %8s\n", "tolerance", "lpu", "hpu", "base", "forwarded", "error",
                      "speedup");
        for (const auto& p : sweep) {
            if (!p.feasible) {
                out << format("%9.4f  infeasible\n", p.tolerance);
                continue;
            }
            out << format("%9.4f %4d %4d %4d %10.4f %10.4f %8.4f\n", p.tolerance, p.lpu_wordlength, p.hpu_wordlength,
                          p.baseline_wordlength, p.forwarded_fraction, p.tune_cascade_error, p.speedup);
        }
    }
    return out.str();
}

std::string sweep_csv(std::span<const SweepPoint> sweep) {
    std::string out = "tolerance,speedup,forwarded_fraction\n";
    for (const auto& p : sweep) {
        if (!p.feasible) continue;
        out += format("%.6g,%.6f,%.6f\n", p.tolerance, p.speedup, p.forwarded_fraction);
    }
    return out;
}

}  // namespace ccnn
