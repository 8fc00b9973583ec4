#include "ccnn/dse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "ccnn/error.hpp"
#include "ccnn/json_io.hpp"

namespace ccnn {

void DeviceModel::validate() const {
    if (compute_budget == 0) throw Error(ErrorCode::invalid_config, "device compute_budget must be positive");
    if (!(clock_mhz > 0.0) || !std::isfinite(clock_mhz)) throw Error(ErrorCode::invalid_config, "device clock must be positive");
    if (!(dram_bandwidth >= 0.0) || !std::isfinite(dram_bandwidth)) {
        throw Error(ErrorCode::invalid_config, "device dram_bandwidth must be >= 0");
    }
    if (on_chip_mem == 0) throw Error(ErrorCode::invalid_config, "device on_chip_mem must be positive");
    if (macc_per_unit.empty()) throw Error(ErrorCode::invalid_config, "device macc_per_unit table is empty");
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& [wl, m] : macc_per_unit) {
        if (wl < kMinWordlength || wl > kMaxWordlength) {
            throw Error(ErrorCode::invalid_config, "macc_per_unit wordlength " + std::to_string(wl) + " out of range");
        }
        if (!(m > 0.0) || !std::isfinite(m)) throw Error(ErrorCode::invalid_config, "macc_per_unit entries must be positive");
        if (m > prev) throw Error(ErrorCode::invalid_config, "macc_per_unit must not grow with the wordlength");
        prev = m;
    }
}

double DeviceModel::macc_per_unit_at(int wordlength) const {
    auto it = macc_per_unit.find(wordlength);
    if (it == macc_per_unit.end()) {
        throw Error(ErrorCode::invalid_config, "device has no macc_per_unit entry for wordlength " + std::to_string(wordlength));
    }
    return it->second;
}

std::uint64_t DeviceModel::capacity(int wordlength) const {
    const double units = static_cast<double>(compute_budget) * macc_per_unit_at(wordlength);
    return static_cast<std::uint64_t>(std::floor(units + 1e-9));
}

DeviceModel default_device() {
    DeviceModel d;
    d.name = "default";
    d.compute_budget = 128;
    for (int wl = kMinWordlength; wl <= kMaxWordlength; ++wl) d.macc_per_unit[wl] = 8.0 / wl;
    d.clock_mhz = 200.0;
    d.dram_bandwidth = 4e9;
    d.on_chip_mem = 256 * 1024;
    return d;
}

void to_json(nlohmann::json& j, const DeviceModel& d) {
    nlohmann::json table = nlohmann::json::object();
    for (const auto& [wl, m] : d.macc_per_unit) table[std::to_string(wl)] = m;
    j = {{"name", d.name},
         {"compute_budget", d.compute_budget},
         {"macc_per_unit", table},
         {"clock_mhz", d.clock_mhz},
         {"dram_bandwidth", d.dram_bandwidth},
         {"on_chip_mem", d.on_chip_mem}};
}

void from_json(const nlohmann::json& j, DeviceModel& d) {
    d.name = j.value("name", std::string("device"));
    j.at("compute_budget").get_to(d.compute_budget);
    d.macc_per_unit.clear();
    for (const auto& [key, value] : j.at("macc_per_unit").items()) {
        std::size_t used = 0;
        const int wl = std::stoi(key, &used);
        if (used != key.size()) throw Error(ErrorCode::parse_error, "bad wordlength key '" + key + "'");
        d.macc_per_unit[wl] = value.get<double>();
    }
    j.at("clock_mhz").get_to(d.clock_mhz);
    j.at("dram_bandwidth").get_to(d.dram_bandwidth);
    j.at("on_chip_mem").get_to(d.on_chip_mem);
}

DeviceModel load_device(const std::string& path) {
    const auto j = read_json_file(path);
    DeviceModel d;
    try {
        d = j.get<DeviceModel>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::parse_error, path + ": " + e.what());
    } catch (const std::invalid_argument&) {
        throw Error(ErrorCode::parse_error, path + ": bad wordlength key");
    }
    d.validate();
    return d;
}

void save_device(const DeviceModel& dev, const std::string& path) { write_json_file(nlohmann::json(dev), path); }

double ArchConfig::working_set_bytes() const {
    const double elems = static_cast<double>(tiles.tile_m * tiles.tile_k + tiles.tile_k * tiles.tile_n +
                                             tiles.tile_m * tiles.tile_n);
    return elems * wordlength / 8.0;
}

void ArchConfig::validate(const DeviceModel& dev) const {
    tiles.validate();
    if (num_pe == 0 || macc_per_pe == 0) throw Error(ErrorCode::invalid_config, "num_pe and macc_per_pe must be positive");
    if (total_maccs() > dev.capacity(wordlength)) {
        throw Error(ErrorCode::invalid_config, "num_pe * macc_per_pe exceeds the device capacity at " +
                                                   std::to_string(wordlength) + " bits");
    }
    if (working_set_bytes() > static_cast<double>(dev.on_chip_mem)) {
        throw Error(ErrorCode::invalid_config, "tile working set exceeds on-chip memory");
    }
}

namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace

WorkloadSummary summarize_workload(const ModelGraph& model, const QuantScheme& scheme, const MMConfig& tiles,
                                   std::size_t batch) {
    tiles.validate();
    if (batch == 0) throw Error(ErrorCode::invalid_config, "batch must be positive");
    const auto shapes = infer_shapes(model, model.input_shape);
    const double bytes_per_value = scheme.wordlength / 8.0;
    WorkloadSummary out;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& layer = model.layers[i];
        const Shape3 in = i == 0 ? model.input_shape : shapes[i - 1];
        const Shape3 outs = shapes[i];
        LayerWorkload w;
        w.name = layer.name;
        if (const auto* conv = std::get_if<Conv>(&layer.kind)) {
            const std::uint64_t m = conv->out_ch;
            const std::uint64_t k = conv->in_ch * conv->kernel_h * conv->kernel_w;
            const std::uint64_t n = outs.h * outs.w;
            w.maccs = m * k * n;
            const double weights = static_cast<double>(m * k + m) * static_cast<double>(ceil_div(n, tiles.tile_n));
            const double inputs = static_cast<double>(in.size()) * static_cast<double>(ceil_div(m, tiles.tile_m));
            const double outputs = static_cast<double>(m * n);
            w.traffic_bytes = (weights + inputs + outputs) * bytes_per_value;
        } else if (const auto* fc = std::get_if<FullyConnected>(&layer.kind)) {
            const std::uint64_t m = fc->out_features;
            const std::uint64_t k = fc->in_features;
            const std::uint64_t b = batch;
            w.maccs = m * k;
            const double weights = static_cast<double>(m * k + m) * static_cast<double>(ceil_div(b, tiles.tile_n));
            const double inputs = static_cast<double>(k * b) * static_cast<double>(ceil_div(m, tiles.tile_m));
            const double outputs = static_cast<double>(m * b);
            w.traffic_bytes = (weights + inputs + outputs) * bytes_per_value / static_cast<double>(b);
        } else {
            continue;
        }
        out.total_maccs += w.maccs;
        out.total_traffic_bytes += w.traffic_bytes;
        out.layers.push_back(std::move(w));
    }
    return out;
}

const char* to_string(Bound b) { return b == Bound::compute ? "compute" : "memory"; }

PerfEstimate roofline_perf(const ArchConfig& cfg, const WorkloadSummary& wl, const DeviceModel& dev) {
    cfg.validate(dev);
    if (wl.total_maccs == 0) throw Error(ErrorCode::invalid_config, "workload has no MACCs");
    PerfEstimate p;
    p.peak_ops = 2.0 * static_cast<double>(cfg.total_maccs()) * dev.clock_mhz * 1e6;
    const double ops = wl.total_ops();
    double memory_roof = std::numeric_limits<double>::infinity();
    if (wl.total_traffic_bytes > 0.0) {
        p.operational_intensity = ops / wl.total_traffic_bytes;
        memory_roof = dev.dram_bandwidth * p.operational_intensity;
    } else {
        p.operational_intensity = std::numeric_limits<double>::infinity();
    }
    p.attainable_ops = std::min(p.peak_ops, memory_roof);
    p.bound = p.attainable_ops < p.peak_ops ? Bound::memory : Bound::compute;
    p.throughput = p.attainable_ops / ops;
    return p;
}

bool better_design(const ArchConfig& a, const PerfEstimate& pa, const ArchConfig& b, const PerfEstimate& pb) {
    if (pa.throughput != pb.throughput) return pa.throughput > pb.throughput;
    const auto key = [](const ArchConfig& c) {
        const auto& t = c.tiles;
        return std::make_tuple(c.total_maccs(), t.tile_m * t.tile_n * t.tile_k, t.tile_m, t.tile_n, t.tile_k, c.num_pe);
    };
    return key(a) < key(b);
}

UnitDesign optimize_unit(const ModelGraph& model, const QuantScheme& scheme, const DeviceModel& dev,
                         const DseOptions& options) {
    dev.validate();
    const int wl = scheme.wordlength;
    const std::uint64_t capacity = dev.capacity(wl);
    if (capacity == 0) throw Error(ErrorCode::no_feasible_config, "device has no MACC capacity at this wordlength");

    std::vector<std::size_t> sizes;
    for (std::size_t s = 1; s <= options.max_tile; s *= 2) sizes.push_back(s);

    std::optional<UnitDesign> best;
    auto consider = [&](const ArchConfig& cfg, const WorkloadSummary& work) {
        const auto perf = roofline_perf(cfg, work, dev);
        if (!best || better_design(cfg, perf, best->arch, best->perf)) best = UnitDesign{cfg, perf, work};
    };

    for (auto tm : sizes) {
        for (auto tn : sizes) {
            // Traffic depends on tm and tn only.
            const WorkloadSummary work = summarize_workload(model, scheme, MMConfig{tm, tn, 1}, options.fc_batch);
            for (auto tk : sizes) {
                ArchConfig cfg;
                cfg.tiles = {tm, tn, tk};
                cfg.wordlength = wl;
                if (cfg.working_set_bytes() > static_cast<double>(dev.on_chip_mem)) continue;
                for (std::uint64_t mpp = 1; mpp <= tk && mpp <= capacity; mpp *= 2) {
                    const std::uint64_t max_pe = std::min<std::uint64_t>(capacity / mpp, tm * tn);
                    if (max_pe == 0) continue;
                    cfg.macc_per_pe = mpp;
                    cfg.num_pe = max_pe;
                    const auto top = roofline_perf(cfg, work, dev);
                    consider(cfg, work);
                    if (top.bound == Bound::memory) {
                        // Throughput is flat once the compute roof clears the
                        // memory roof; the fewest PEs doing so win the tie.
                        const double per_pe = 2.0 * static_cast<double>(mpp) * dev.clock_mhz * 1e6;
                        auto pe = std::clamp<std::uint64_t>(
                            static_cast<std::uint64_t>(std::ceil(top.attainable_ops / per_pe)), 1, max_pe);
                        auto tp = [&](std::uint64_t n) {
                            ArchConfig c = cfg;
                            c.num_pe = n;
                            return roofline_perf(c, work, dev).throughput;
                        };
                        while (pe < max_pe && tp(pe) != top.throughput) ++pe;
                        while (pe > 1 && tp(pe - 1) == top.throughput) --pe;
                        cfg.num_pe = pe;
                        consider(cfg, work);
                    }
                }
            }
        }
    }
    if (!best) throw Error(ErrorCode::no_feasible_config, "no tile fits in on-chip memory");
    return *best;
}

const char* to_string(CascadeMode mode) {
    return mode == CascadeMode::time_shared ? "time_shared" : "static_partition";
}

CascadeMode parse_cascade_mode(const std::string& text) {
    if (text == "time_shared") return CascadeMode::time_shared;
    if (text == "static_partition") return CascadeMode::static_partition;
    throw Error(ErrorCode::invalid_config, "unknown cascade mode '" + text + "'");
}

double cascade_throughput(double lpu_throughput, double hpu_throughput, double forwarded_fraction, CascadeMode mode) {
    if (!(lpu_throughput > 0.0) || !(hpu_throughput > 0.0)) {
        throw Error(ErrorCode::invalid_config, "unit throughputs must be positive");
    }
    if (!(forwarded_fraction >= 0.0 && forwarded_fraction <= 1.0)) {
        throw Error(ErrorCode::invalid_config, "forwarded fraction must be in [0, 1]");
    }
    if (forwarded_fraction == 0.0) return lpu_throughput;
    if (mode == CascadeMode::static_partition) {
        return std::min(lpu_throughput, hpu_throughput / forwarded_fraction);
    }
    return 1.0 / (1.0 / lpu_throughput + forwarded_fraction / hpu_throughput);
}

BaselineResult baseline_speedup(const ModelGraph& model, const WordlengthSweep& sweep, const DeviceModel& dev,
                                double tolerance, double cascade_tp, const DseOptions& options) {
    if (sweep.points.empty()) throw Error(ErrorCode::invalid_config, "empty wordlength sweep");
    const auto wl = smallest_complying_wordlength(sweep, tolerance, sweep.points.front().wordlength);
    if (!wl) throw Error(ErrorCode::infeasible_tolerance, "no swept wordlength meets the tolerance");
    BaselineResult r;
    r.wordlength = *wl;
    r.design = optimize_unit(model, sweep.at(*wl).scheme, dev, options);
    r.speedup = cascade_tp / r.design.perf.throughput;
    return r;
}

void to_json(nlohmann::json& j, const ArchConfig& a) {
    j = {{"num_pe", a.num_pe},
         {"macc_per_pe", a.macc_per_pe},
         {"tile_m", a.tiles.tile_m},
         {"tile_n", a.tiles.tile_n},
         {"tile_k", a.tiles.tile_k},
         {"wordlength", a.wordlength}};
}

void from_json(const nlohmann::json& j, ArchConfig& a) {
    j.at("num_pe").get_to(a.num_pe);
    j.at("macc_per_pe").get_to(a.macc_per_pe);
    j.at("tile_m").get_to(a.tiles.tile_m);
    j.at("tile_n").get_to(a.tiles.tile_n);
    j.at("tile_k").get_to(a.tiles.tile_k);
    j.at("wordlength").get_to(a.wordlength);
}

void to_json(nlohmann::json& j, const PerfEstimate& p) {
    // JSON has no infinity; an all-on-chip workload reports null intensity.
    nlohmann::json oi = std::isfinite(p.operational_intensity) ? nlohmann::json(p.operational_intensity) : nullptr;
    j = {{"throughput", p.throughput},
         {"peak_ops", p.peak_ops},
         {"attainable_ops", p.attainable_ops},
         {"operational_intensity", oi},
         {"bound", to_string(p.bound)}};
}

void to_json(nlohmann::json& j, const WorkloadSummary& w) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : w.layers) {
        layers.push_back({{"name", l.name}, {"maccs", l.maccs}, {"traffic_bytes", l.traffic_bytes}});
    }
    j = {{"layers", layers}, {"total_maccs", w.total_maccs}, {"total_traffic_bytes", w.total_traffic_bytes}};
}

}  // namespace ccnn
