#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccnn/cascade.hpp"
#include "ccnn/error.hpp"
#include "ccnn/json_io.hpp"

namespace fs = std::filesystem;
using namespace ccnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInfeasible = 1;
constexpr int kExitBadInput = 2;

struct BadInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string model;
    std::string eval;
    std::string device;
    double tolerance = 0.01;
    std::string metric = "top1";
    std::uint64_t seed = 2018;
    std::string out = ".";
    bool paper_faithful = false;
    std::string mode = "time_shared";
};

struct Artifacts {
    std::string sweep;
    std::string lpu_scheme;
    std::string hpu_scheme;
    std::string ceu;
};

void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw BadInput(std::string(what) + " path not given");
    if (!fs::is_regular_file(path)) throw BadInput(std::string(what) + " not found: " + path);
}

std::string out_path(const Common& c, const std::string& name) { return (fs::path(c.out) / name).string(); }

CascadeOptions make_options(const Common& c) {
    if (!(c.tolerance >= 0.0 && c.tolerance <= 1.0)) throw BadInput("tolerance must be in [0, 1]");
    CascadeOptions o;
    o.metric = parse_metric(c.metric);
    o.tolerance = c.tolerance;
    o.seed = c.seed;
    o.paper_faithful = c.paper_faithful;
    o.mode = parse_cascade_mode(c.mode);
    return o;
}

struct Inputs {
    std::shared_ptr<const ModelGraph> graph;
    EvalSet eval;
    DeviceModel device;
    CascadeOptions options;
};

Inputs load_inputs(const Common& c, bool need_eval = true) {
    require_file(c.model, "model");
    if (need_eval) require_file(c.eval, "eval set");
    if (!c.device.empty()) require_file(c.device, "device");
    Inputs in;
    in.options = make_options(c);
    in.graph = std::make_shared<const ModelGraph>(load_model(c.model));
    if (need_eval) in.eval = load_eval_set(c.eval);
    in.device = c.device.empty() ? default_device() : load_device(c.device);
    fs::create_directories(c.out);
    return in;
}

template <typename T>
T load_artifact(const std::string& path, const char* what) {
    require_file(path, what);
    const auto j = read_json_file(path);
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::parse_error, path + ": " + e.what());
    }
}

std::string or_default(const std::string& given, const Common& c, const char* name) {
    return given.empty() ? out_path(c, name) : given;
}

std::string wordlength_text(std::span<const WordlengthRow> rows, double reference_error) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "reference error %.4f\n%4s %10s %10s %12s %14s\n", reference_error, "wl", "error",
                  "range-only", "degradation", "inf/s");
    out += line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%4d %10.4f %10.4f %12.4f %14.6g\n", r.wordlength, r.error,
                      r.range_only_error, r.degradation, r.throughput);
        out += line;
    }
    return out;
}

int cmd_quantize(const Common& c) {
    auto in = load_inputs(c);
    CascadePlanner planner(in.graph, in.eval, in.device, in.options);
    const auto sel = planner.select(c.tolerance);
    write_json_file(nlohmann::json(planner.sweep()), out_path(c, "sweep.json"));
    write_json_file(nlohmann::json(sel.lpu.scheme), out_path(c, "lpu_scheme.json"));
    write_json_file(nlohmann::json(sel.hpu.scheme), out_path(c, "hpu_scheme.json"));
    const auto rows = wordlength_table(planner);
    std::string text = wordlength_text(rows, planner.sweep().reference_error);
    char line[160];
    std::snprintf(line, sizeof line, "\nselected LPU %d bits (error %.4f), HPU %d bits (error %.4f)\n",
                  sel.lpu.wordlength, sel.lpu.error, sel.hpu.wordlength, sel.hpu.error);
    text += line;
    write_text_file(text, out_path(c, "wordlengths.txt"));
    std::cout << text;
    return kExitOk;
}

int cmd_tune(const Common& c, const Artifacts& a) {
    auto in = load_inputs(c);
    auto sweep = load_artifact<WordlengthSweep>(or_default(a.sweep, c, "sweep.json"), "sweep");
    const auto lpu = load_artifact<QuantScheme>(or_default(a.lpu_scheme, c, "lpu_scheme.json"), "LPU scheme");
    const auto hpu = load_artifact<QuantScheme>(or_default(a.hpu_scheme, c, "hpu_scheme.json"), "HPU scheme");
    CascadePlanner planner(in.graph, in.eval, in.device, in.options, std::move(sweep));
    const auto sys = planner.assemble(c.tolerance, lpu, hpu);
    write_json_file(nlohmann::json(sys.ceu), out_path(c, "ceu.json"));
    nlohmann::json tuning = {{"ceu_tolerance", sys.ceu_tolerance},
                             {"tuning", sys.tuning},
                             {"validation", sys.validation ? nlohmann::json(*sys.validation) : nlohmann::json(nullptr)}};
    write_json_file(tuning, out_path(c, "tuning.json"));

    std::string text;
    char line[160];
    std::snprintf(line, sizeof line, "CEU M=%zu N=%zu th=%.6f  forwarded %.4f  error %.4f (HPU %.4f, budget %.4f)\n\n",
                  sys.ceu.m, sys.ceu.n, sys.ceu.th, sys.tuning.chosen.forwarded_fraction, sys.tuning.chosen.error,
                  sys.tuning.hpu_error, sys.ceu_tolerance);
    text += line;
    std::snprintf(line, sizeof line, "%10s %10s %4s %4s %12s\n", "forwarded", "error", "M", "N", "th");
    text += line;
    for (const auto& p : sys.tuning.pareto) {
        std::snprintf(line, sizeof line, "%10.4f %10.4f %4zu %4zu %12.6f\n", p.forwarded_fraction, p.error,
                      p.config.m, p.config.n, p.config.th);
        text += line;
    }
    write_text_file(text, out_path(c, "pareto.txt"));
    std::cout << text;
    return kExitOk;
}

int cmd_dse(const Common& c, const Artifacts& a) {
    auto in = load_inputs(c, false);
    std::string text;
    char line[200];
    std::snprintf(line, sizeof line, "%-4s %4s %8s %8s %6s %6s %6s %14s %8s\n", "unit", "wl", "pe", "macc/pe",
                  "tm", "tn", "tk", "inf/s", "bound");
    text += line;
    for (const auto& [unit, given, name] : {std::tuple{"LPU", a.lpu_scheme, "lpu_scheme.json"},
                                           std::tuple{"HPU", a.hpu_scheme, "hpu_scheme.json"}}) {
        const auto scheme = load_artifact<QuantScheme>(or_default(given, c, name), "scheme");
        scheme.validate(*in.graph);
        const auto d = optimize_unit(*in.graph, scheme, in.device, in.options.dse);
        const std::string stem = std::string(unit) == "LPU" ? "lpu_arch.json" : "hpu_arch.json";
        write_json_file({{"arch", d.arch}, {"perf", d.perf}, {"workload", d.workload}}, out_path(c, stem));
        std::snprintf(line, sizeof line, "%-4s %4d %8llu %8llu %6zu %6zu %6zu %14.6g %8s\n", unit, d.arch.wordlength,
                      static_cast<unsigned long long>(d.arch.num_pe), static_cast<unsigned long long>(d.arch.macc_per_pe),
                      d.arch.tiles.tile_m, d.arch.tiles.tile_n, d.arch.tiles.tile_k, d.perf.throughput,
                      to_string(d.perf.bound));
        text += line;
    }
    write_text_file(text, out_path(c, "dse.txt"));
    std::cout << text;
    return kExitOk;
}

int cmd_run(const Common& c, const Artifacts& a, std::vector<double> tolerances, bool no_sweep) {
    auto in = load_inputs(c);
    std::optional<CascadePlanner> planner;
    if (!a.sweep.empty()) {
        planner.emplace(in.graph, in.eval, in.device, in.options, load_artifact<WordlengthSweep>(a.sweep, "sweep"));
    } else {
        planner.emplace(in.graph, in.eval, in.device, in.options);
    }
    const bool given_schemes = !a.lpu_scheme.empty() || !a.hpu_scheme.empty();
    if (given_schemes && (a.lpu_scheme.empty() || a.hpu_scheme.empty())) {
        throw BadInput("--lpu-scheme and --hpu-scheme go together");
    }
    if (!a.ceu.empty() && !given_schemes) throw BadInput("--ceu needs --lpu-scheme and --hpu-scheme");

    std::optional<CascadeSystem> sys;
    if (given_schemes) {
        std::optional<CeuConfig> ceu;
        if (!a.ceu.empty()) ceu = load_artifact<CeuConfig>(a.ceu, "CEU config");
        sys.emplace(planner->assemble(c.tolerance, load_artifact<QuantScheme>(a.lpu_scheme, "LPU scheme"),
                                      load_artifact<QuantScheme>(a.hpu_scheme, "HPU scheme"), ceu));
    } else {
        sys.emplace(planner->build(c.tolerance));
    }
    const auto run = run_cascade(*sys, in.eval.samples, &in.eval.labels);

    std::vector<SweepPoint> sweep;
    if (!no_sweep) {
        if (tolerances.empty()) tolerances.assign(std::begin(kDefaultTolerances), std::end(kDefaultTolerances));
        for (double t : tolerances) {
            if (!(t >= 0.0 && t <= 1.0)) throw BadInput("sweep tolerances must be in [0, 1]");
        }
        sweep = sweep_tolerances(*planner, tolerances);
    }
    const auto rows = wordlength_table(*planner);
    write_json_file(report_json(*sys, &run.stats, sweep, rows), out_path(c, "report.json"));
    const auto text = report_text(*sys, &run.stats, sweep);
    write_text_file(text, out_path(c, "report.txt"));
    write_text_file(sweep_csv(sweep), out_path(c, "sweep.csv"));
    std::cout << text;
    return kExitOk;
}

void add_common(CLI::App* app, Common& c, bool with_eval = true) {
    app->add_option("--model", c.model, "CCNN model file")->required();
    if (with_eval) app->add_option("--eval", c.eval, "CCEV evaluation set")->required();
    app->add_option("--device", c.device, "Device JSON (built-in default when omitted)");
    app->add_option("--tolerance", c.tolerance, "Error tolerance as a fraction, e.g. 0.01");
    app->add_option("--metric", c.metric, "top1 or top5")->check(CLI::IsMember({"top1", "top5"}));
    app->add_option("--seed", c.seed, "Seed of the evaluation-set split");
    app->add_option("--out", c.out, "Output directory");
    app->add_flag("--paper-faithful", c.paper_faithful, "Tune and validate on the whole evaluation set");
    app->add_option("--mode", c.mode, "Cascade throughput model")
        ->check(CLI::IsMember({"time_shared", "static_partition"}));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage low/high-precision CNN cascade toolflow"};
    app.require_subcommand(1);
    Common common;
    Artifacts artifacts;
    std::vector<double> tolerances;
    bool no_sweep = false;

    auto* quantize = app.add_subcommand("quantize", "Wordlength sweep and LPU/HPU quantisation schemes");
    add_common(quantize, common);

    auto* tune = app.add_subcommand("tune", "Tune the confidence test for given schemes");
    add_common(tune, common);
    tune->add_option("--sweep", artifacts.sweep, "Sweep JSON (default <out>/sweep.json)");
    tune->add_option("--lpu-scheme", artifacts.lpu_scheme, "LPU scheme JSON (default <out>/lpu_scheme.json)");
    tune->add_option("--hpu-scheme", artifacts.hpu_scheme, "HPU scheme JSON (default <out>/hpu_scheme.json)");

    auto* dse = app.add_subcommand("dse", "Optimise the LPU and HPU architectures");
    add_common(dse, common, false);
    dse->add_option("--lpu-scheme", artifacts.lpu_scheme, "LPU scheme JSON (default <out>/lpu_scheme.json)");
    dse->add_option("--hpu-scheme", artifacts.hpu_scheme, "HPU scheme JSON (default <out>/hpu_scheme.json)");

    auto* run = app.add_subcommand("run", "Build, run and report the cascade end to end");
    add_common(run, common);
    run->add_option("--sweep", artifacts.sweep, "Reuse a sweep JSON instead of recomputing it");
    run->add_option("--lpu-scheme", artifacts.lpu_scheme, "Use this LPU scheme");
    run->add_option("--hpu-scheme", artifacts.hpu_scheme, "Use this HPU scheme");
    run->add_option("--ceu", artifacts.ceu, "Use this CEU config instead of tuning");
    run->add_option("--tolerances", tolerances, "Tolerance sweep grid");
    run->add_flag("--no-sweep", no_sweep, "Skip the tolerance sweep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitBadInput;
    }

    try {
        if (quantize->parsed()) return cmd_quantize(common);
        if (tune->parsed()) return cmd_tune(common, artifacts);
        if (dse->parsed()) return cmd_dse(common, artifacts);
        return cmd_run(common, artifacts, tolerances, no_sweep);
    } catch (const BadInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.code()) {
        case ErrorCode::infeasible_tolerance:
        case ErrorCode::no_feasible_config: return kExitInfeasible;
        default: return kExitBadInput;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    }
}
