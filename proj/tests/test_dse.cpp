#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <tuple>

#include "ccnn/dse.hpp"
#include "test_support.hpp"

using namespace ccnn;
using namespace ccnn::testing;

namespace {

QuantScheme flat_scheme(const ModelGraph& g, int wl) {
    QuantScheme s;
    s.wordlength = wl;
    for (const auto& layer : g.layers) {
        LayerFormats f{layer.name, std::nullopt, {wl, 0}};
        if (layer.has_weights()) f.weight = FixedPointFormat{wl, 0};
        s.layers.push_back(f);
    }
    s.output = {wl, 0};
    return s;
}

ModelGraph fc_graph(std::size_t in, std::size_t out) {
    ModelGraph g;
    g.input_shape = {in, 1, 1};
    g.layers = {{"fc", FullyConnected{in, out}}};
    g.weights["fc"] = {Tensor({out, in}), Tensor({out})};
    return g;
}

ModelGraph two_layer_model() {
    ModelGraph g;
    g.input_shape = {4, 8, 8};
    g.layers = {{"conv", Conv{4, 8, 3, 3, 1, 1}}, {"fc", FullyConnected{8 * 8 * 8, 10}}};
    g.weights["conv"] = {Tensor({8, 4, 3, 3}), Tensor({8})};
    g.weights["fc"] = {Tensor({10, 512}), Tensor({10})};
    return g;
}

DeviceModel toy_device(std::uint64_t budget, double bw, std::uint64_t mem) {
    DeviceModel d;
    d.name = "toy";
    d.compute_budget = budget;
    for (int wl = 2; wl <= 16; ++wl) d.macc_per_unit[wl] = 8.0 / wl;
    d.clock_mhz = 100.0;
    d.dram_bandwidth = bw;
    d.on_chip_mem = mem;
    return d;
}

// Every tile triple, MACCs-per-PE and PE count, with an independent roofline.
std::pair<ArchConfig, double> brute_force(const ModelGraph& g, const QuantScheme& s, const DeviceModel& dev,
                                          std::size_t max_tile) {
    const int wl = s.wordlength;
    const auto cap = static_cast<std::uint64_t>(std::floor(dev.compute_budget * dev.macc_per_unit.at(wl) + 1e-9));
    std::optional<std::pair<ArchConfig, double>> best;
    auto key = [](const ArchConfig& c) {
        const auto& t = c.tiles;
        return std::make_tuple(c.num_pe * c.macc_per_pe, t.tile_m * t.tile_n * t.tile_k, t.tile_m, t.tile_n, t.tile_k,
                               c.num_pe);
    };
    for (std::size_t tm = 1; tm <= max_tile; tm *= 2)
        for (std::size_t tn = 1; tn <= max_tile; tn *= 2) {
            const auto work = summarize_workload(g, s, {tm, tn, 1}, 16);
            for (std::size_t tk = 1; tk <= max_tile; tk *= 2) {
                if ((tm * tk + tk * tn + tm * tn) * wl > dev.on_chip_mem * 8) continue;
                for (std::uint64_t mpp = 1; mpp <= tk; mpp *= 2)
                    for (std::uint64_t pe = 1; pe * mpp <= cap && pe <= tm * tn; ++pe) {
                        const double ops = 2.0 * static_cast<double>(work.total_maccs);
                        const double peak = 2.0 * static_cast<double>(pe * mpp) * dev.clock_mhz * 1e6;
                        const double mem = work.total_traffic_bytes > 0
                                               ? dev.dram_bandwidth * ops / work.total_traffic_bytes
                                               : std::numeric_limits<double>::infinity();
                        const double tp = std::min(peak, mem) / ops;
                        ArchConfig c{pe, mpp, {tm, tn, tk}, wl};
                        if (!best || tp > best->second || (tp == best->second && key(c) < key(best->first)))
                            best = {c, tp};
                    }
            }
        }
    REQUIRE(best);
    return *best;
}

}  // namespace

TEST_CASE("MACC counts") {
    const auto fc = fc_graph(4, 3);
    CHECK(summarize_workload(fc, flat_scheme(fc, 8), {1, 1, 1}, 1).total_maccs == 12);

    ModelGraph conv;
    conv.input_shape = {8, 10, 10};
    conv.layers = {{"conv", Conv{8, 16, 1, 1, 1, 0}}, {"relu", ReLU{}}};
    conv.weights["conv"] = {Tensor({16, 8, 1, 1}), Tensor({16})};
    const auto w = summarize_workload(conv, flat_scheme(conv, 8), {4, 32, 1}, 1);
    CHECK(w.total_maccs == 12800);
    CHECK(w.layers.size() == 1);
    CHECK(w.total_ops() == 25600.0);
    // Weights+bias 144 values x ceil(100/32) passes, input 800 x ceil(16/4), output 1600.
    CHECK(w.total_traffic_bytes == 144.0 * 4 + 800.0 * 4 + 1600.0);
}

TEST_CASE("halving the wordlength halves the traffic") {
    const auto g = fixture_model();
    for (MMConfig t : {MMConfig{1, 1, 1}, MMConfig{8, 64, 4}, MMConfig{256, 2, 1}}) {
        const auto w8 = summarize_workload(*g, flat_scheme(*g, 8), t, 16);
        const auto w4 = summarize_workload(*g, flat_scheme(*g, 4), t, 16);
        CHECK(w4.total_traffic_bytes * 2.0 == w8.total_traffic_bytes);
        CHECK(w4.total_maccs == w8.total_maccs);
    }
}

TEST_CASE("FC traffic amortises over the batch") {
    const auto fc = fc_graph(64, 32);
    const auto s = flat_scheme(fc, 8);
    const auto one = summarize_workload(fc, s, {32, 16, 1}, 1);
    const auto sixteen = summarize_workload(fc, s, {32, 16, 1}, 16);
    CHECK(one.total_traffic_bytes == 64.0 * 32 + 32 + 64 + 32);
    CHECK(sixteen.total_traffic_bytes == ((64.0 * 32 + 32) + 64 * 16 + 32 * 16) / 16);
}

TEST_CASE("roofline examples") {
    const auto dev = toy_device(16, 1e6, 1 << 20);
    const ArchConfig cfg{4, 2, {4, 4, 4}, 8};
    WorkloadSummary on_chip{{}, 1000, 0.0};
    const auto p = roofline_perf(cfg, on_chip, dev);
    CHECK(std::isinf(p.operational_intensity));
    CHECK(p.attainable_ops == p.peak_ops);
    CHECK(p.peak_ops == 2.0 * 8 * 100e6);
    CHECK(p.bound == Bound::compute);
    CHECK(p.throughput == p.peak_ops / 2000.0);

    const auto g = two_layer_model();
    const auto w = summarize_workload(g, flat_scheme(g, 8), cfg.tiles, 16);
    auto zero_bw = dev;
    zero_bw.dram_bandwidth = 0.0;
    CHECK(roofline_perf(cfg, w, zero_bw).attainable_ops == 0.0);

    const auto slow = roofline_perf(cfg, w, dev);
    REQUIRE(slow.bound == Bound::memory);
    const double oi = w.total_ops() / w.total_traffic_bytes;
    CHECK(slow.operational_intensity == oi);
    CHECK(slow.attainable_ops == doctest::Approx(1e6 * oi).epsilon(1e-12));
    auto fast = dev;
    fast.dram_bandwidth *= 2;
    CHECK(roofline_perf(cfg, w, fast).attainable_ops == doctest::Approx(2.0 * slow.attainable_ops).epsilon(1e-12));

    CHECK_THROWS_AS(roofline_perf(ArchConfig{20, 1, {8, 8, 8}, 8}, w, dev), Error);  // capacity 16 at 8 bits
    CHECK_THROWS_AS(roofline_perf(cfg, WorkloadSummary{}, dev), Error);
}

TEST_CASE("roofline identity and monotonicity") {
    const auto g = fixture_model();
    const auto w = summarize_workload(*g, flat_scheme(*g, 6), {16, 16, 16}, 16);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> bw(1e6, 1e10);
    for (int t = 0; t < 100; ++t) {
        auto dev = toy_device(64, bw(rng), 1 << 20);
        const ArchConfig cfg{1 + static_cast<std::uint64_t>(t % 40), 2, {16, 16, 16}, 6};
        const auto p = roofline_perf(cfg, w, dev);
        CHECK(p.attainable_ops == std::min(p.peak_ops, dev.dram_bandwidth * p.operational_intensity));
        auto more_bw = dev;
        more_bw.dram_bandwidth *= 1.5;
        CHECK(roofline_perf(cfg, w, more_bw).attainable_ops >= p.attainable_ops);
        auto faster = dev;
        faster.clock_mhz *= 1.5;
        CHECK(roofline_perf(cfg, w, faster).attainable_ops >= p.attainable_ops);
        auto bigger = dev;
        bigger.compute_budget *= 2;
        CHECK(roofline_perf(cfg, w, bigger).attainable_ops >= p.attainable_ops);
    }
}

TEST_CASE("optimize_unit matches exhaustive enumeration on toy devices") {
    const auto g = two_layer_model();
    const DseOptions opts{16, 16};
    for (auto [budget, bw, mem] : {std::tuple{8ULL, 1e12, 4096ULL}, std::tuple{8ULL, 2e7, 4096ULL},
                                   std::tuple{20ULL, 5e8, 512ULL}, std::tuple{3ULL, 1e9, 300ULL}}) {
        const auto dev = toy_device(budget, bw, mem);
        for (int wl : {2, 4, 8, 16}) {
            const auto s = flat_scheme(g, wl);
            const auto got = optimize_unit(g, s, dev, opts);
            const auto [arch, tp] = brute_force(g, s, dev, 16);
            CHECK(got.perf.throughput == tp);
            CHECK(got.arch == arch);
        }
    }
}

TEST_CASE("optimize_unit behaviour on the fixture") {
    const auto g = fixture_model();
    const auto dev = default_device();
    double prev = std::numeric_limits<double>::infinity();
    for (int wl = 2; wl <= 16; ++wl) {
        const auto d = optimize_unit(*g, flat_scheme(*g, wl), dev);
        CHECK(d.perf.throughput <= prev);
        CHECK(d.arch.total_maccs() <= dev.capacity(wl));
        CHECK(d.arch.working_set_bytes() <= static_cast<double>(dev.on_chip_mem));
        CHECK(d.arch.macc_per_pe <= d.arch.tiles.tile_k);
        prev = d.perf.throughput;
    }
    CHECK(optimize_unit(*g, flat_scheme(*g, 4), dev).perf.peak_ops >=
          optimize_unit(*g, flat_scheme(*g, 8), dev).perf.peak_ops);

    double last = std::numeric_limits<double>::infinity();
    for (std::uint64_t budget : {256ULL, 128ULL, 64ULL, 17ULL, 4ULL, 1ULL}) {
        auto d = dev;
        d.compute_budget = budget;
        const double tp = optimize_unit(*g, flat_scheme(*g, 8), d).perf.throughput;
        CHECK(tp <= last);
        last = tp;
    }

    auto tiny = dev;
    tiny.on_chip_mem = 1;
    try {
        optimize_unit(*g, flat_scheme(*g, 16), tiny);
        FAIL("expected no feasible config");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::no_feasible_config);
    }
}

TEST_CASE("cascade throughput") {
    CHECK(cascade_throughput(100, 50, 0.0) == 100.0);
    CHECK(cascade_throughput(80, 80, 1.0) == 40.0);
    CHECK(cascade_throughput(100, 50, 0.2) == doctest::Approx(1.0 / 0.014).epsilon(1e-12));
    CHECK(cascade_throughput(100, 50, 0.2) == doctest::Approx(71.43).epsilon(1e-4));
    double prev = cascade_throughput(100, 30, 0.0);
    for (int i = 1; i <= 100; ++i) {
        const double t = cascade_throughput(100, 30, i / 100.0);
        CHECK(t < prev);
        CHECK(t <= 100.0);
        prev = t;
    }
    CHECK(cascade_throughput(100, 50, 0.0, CascadeMode::static_partition) == 100.0);
    CHECK(cascade_throughput(100, 50, 0.25, CascadeMode::static_partition) == 100.0);
    CHECK(cascade_throughput(100, 50, 0.8, CascadeMode::static_partition) == 62.5);
    CHECK_THROWS_AS(cascade_throughput(100, 50, 1.5), Error);
    CHECK_THROWS_AS(cascade_throughput(0, 50, 0.5), Error);
    CHECK(parse_cascade_mode("static_partition") == CascadeMode::static_partition);
    CHECK_THROWS_AS(parse_cascade_mode("spatial"), Error);
}

TEST_CASE("baseline speedup") {
    const auto g = fixture_model();
    const auto dev = default_device();
    WordlengthSweep sweep;
    sweep.reference_error = 0.1;
    for (auto [wl, err] : {std::pair{3, 0.5}, std::pair{4, 0.2}, std::pair{5, 0.11}, std::pair{6, 0.1}})
        sweep.points.push_back({wl, flat_scheme(*g, wl), err, err});

    // A cascade that never forwards runs at the LPU rate; against a baseline
    // at the LPU wordlength the speedup is exactly 1.
    const auto lpu = optimize_unit(*g, flat_scheme(*g, 4), dev);
    const auto same = baseline_speedup(*g, sweep, dev, 0.1, cascade_throughput(lpu.perf.throughput, 1.0, 0.0));
    CHECK(same.wordlength == 4);
    CHECK(same.speedup == 1.0);

    const auto strict = baseline_speedup(*g, sweep, dev, 0.0, lpu.perf.throughput);
    CHECK(strict.wordlength == 6);
    CHECK(strict.speedup > 1.0);
    try {
        WordlengthSweep bad = sweep;
        bad.reference_error = 0.0;
        baseline_speedup(*g, bad, dev, 0.01, 1.0);
        FAIL("expected infeasible tolerance");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::infeasible_tolerance);
    }
}

TEST_CASE("device files") {
    const auto dev = default_device();
    dev.validate();
    CHECK(dev.capacity(4) == 256);
    CHECK(dev.capacity(8) == 128);
    CHECK(dev.capacity(16) == 64);
    CHECK(dev.capacity(3) == 341);
    const auto path = std::filesystem::temp_directory_path() / "ccnn_device.json";
    save_device(dev, path.string());
    const auto back = load_device(path.string());
    CHECK(back.macc_per_unit == dev.macc_per_unit);
    CHECK(back.compute_budget == dev.compute_budget);
    CHECK(back.on_chip_mem == dev.on_chip_mem);
    std::filesystem::remove(path);

    const auto bundled = load_device(fixture_path("device.json").string());
    CHECK(bundled.macc_per_unit == dev.macc_per_unit);

    auto growing = dev;
    growing.macc_per_unit[9] = 5.0;
    CHECK_THROWS_AS(growing.validate(), Error);
    auto empty = dev;
    empty.macc_per_unit.clear();
    CHECK_THROWS_AS(empty.validate(), Error);
    CHECK_THROWS_AS(toy_device(4, 1, 1).macc_per_unit_at(17), Error);
}

TEST_CASE("arch configs serialise") {
    const ArchConfig a{12, 4, {32, 8, 16}, 5};
    const nlohmann::json j = a;
    CHECK(j.get<ArchConfig>() == a);
    const nlohmann::json p = PerfEstimate{1, 2, 2, std::numeric_limits<double>::infinity(), Bound::compute};
    CHECK(p["operational_intensity"].is_null());
    CHECK(p["bound"] == "compute");
}
