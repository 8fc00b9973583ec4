#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccnn/engine.hpp"
#include "ccnn/model.hpp"
#include "ccnn/quant_scheme.hpp"
#include "ccnn/quantizer.hpp"

namespace ccnn {

struct DeviceModel {
    std::string name = "generic";
    std::uint64_t compute_budget = 0;       // MACC-capable resource units (e.g. DSPs)
    std::map<int, double> macc_per_unit;    // wordlength -> MACCs per unit
    double clock_mhz = 0.0;
    double dram_bandwidth = 0.0;            // bytes/s
    std::uint64_t on_chip_mem = 0;          // bytes

    // Throws invalid_config on empty tables, non-positive entries, or entries
    // that grow with the wordlength.
    void validate() const;

    double macc_per_unit_at(int wordlength) const;
    // MACC units realisable at this wordlength: floor(budget * macc_per_unit).
    std::uint64_t capacity(int wordlength) const;
};

// 128 units at 200 MHz, 4 GB/s, 256 KiB on chip; macc_per_unit = 8 / wordlength,
// i.e. {4: 2, 8: 1, 16: 0.5}.
DeviceModel default_device();

DeviceModel load_device(const std::string& path);
void save_device(const DeviceModel& dev, const std::string& path);
void to_json(nlohmann::json& j, const DeviceModel& d);
void from_json(const nlohmann::json& j, DeviceModel& d);

struct ArchConfig {
    std::uint64_t num_pe = 1;
    std::uint64_t macc_per_pe = 1;
    MMConfig tiles;
    int wordlength = 8;

    std::uint64_t total_maccs() const { return num_pe * macc_per_pe; }
    // (tm*tk + tk*tn + tm*tn) * wordlength / 8 bytes.
    double working_set_bytes() const;
    // Throws invalid_config when the config breaks a device constraint.
    void validate(const DeviceModel& dev) const;

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct LayerWorkload {
    std::string name;
    std::uint64_t maccs = 0;      // per sample
    double traffic_bytes = 0.0;   // per sample
};

struct WorkloadSummary {
    std::vector<LayerWorkload> layers;  // conv and FC layers only
    std::uint64_t total_maccs = 0;
    double total_traffic_bytes = 0.0;

    double total_ops() const { return 2.0 * static_cast<double>(total_maccs); }
};

// Per-sample MACCs and off-chip traffic of the MM layers. Conv with M output
// channels, K = in*kh*kw and N output pixels re-fetches weights and biases
// once per pass over ceil(N/tile_n) column tiles and the input once per
// ceil(M/tile_m) row tiles; outputs are written once. FC layers run as one MM
// over `batch` samples and the traffic is divided by the batch.
WorkloadSummary summarize_workload(const ModelGraph& model, const QuantScheme& scheme, const MMConfig& tiles,
                                   std::size_t batch);

enum class Bound { compute, memory };

const char* to_string(Bound b);

struct PerfEstimate {
    double throughput = 0.0;             // inferences/s
    double peak_ops = 0.0;               // ops/s
    double attainable_ops = 0.0;         // ops/s
    double operational_intensity = 0.0;  // ops/byte
    Bound bound = Bound::compute;
};

PerfEstimate roofline_perf(const ArchConfig& cfg, const WorkloadSummary& wl, const DeviceModel& dev);

struct DseOptions {
    std::size_t max_tile = 1024;
    std::size_t fc_batch = 16;
};

struct UnitDesign {
    ArchConfig arch;
    PerfEstimate perf;
    WorkloadSummary workload;
};

// Exhaustive search over power-of-two tiles and MACCs-per-PE, with
// num_pe * macc_per_pe <= capacity, macc_per_pe <= tile_k and
// num_pe <= tile_m * tile_n. Best throughput wins; ties go to fewer MACC
// units, then smaller tile volume, then smaller (tm, tn, tk), then fewer PEs.
// Throws no_feasible_config when no tile fits on chip.
UnitDesign optimize_unit(const ModelGraph& model, const QuantScheme& scheme, const DeviceModel& dev,
                         const DseOptions& options = {});

// The tie-break order used by optimize_unit; true when a beats b.
bool better_design(const ArchConfig& a, const PerfEstimate& pa, const ArchConfig& b, const PerfEstimate& pb);

enum class CascadeMode { time_shared, static_partition };

const char* to_string(CascadeMode mode);
CascadeMode parse_cascade_mode(const std::string& text);

// time_shared: 1 / (1/T_L + r/T_H). static_partition: min(T_L, T_H / r).
double cascade_throughput(double lpu_throughput, double hpu_throughput, double forwarded_fraction,
                          CascadeMode mode = CascadeMode::time_shared);

struct BaselineResult {
    int wordlength = 0;
    UnitDesign design;
    double speedup = 0.0;  // cascade throughput / baseline throughput
};

// Single-stage baseline at the smallest swept wordlength meeting the
// tolerance on its own; throws infeasible_tolerance when none does.
BaselineResult baseline_speedup(const ModelGraph& model, const WordlengthSweep& sweep, const DeviceModel& dev,
                                double tolerance, double cascade_tp, const DseOptions& options = {});

void to_json(nlohmann::json& j, const ArchConfig& a);
void from_json(const nlohmann::json& j, ArchConfig& a);
void to_json(nlohmann::json& j, const PerfEstimate& p);
void to_json(nlohmann::json& j, const WorkloadSummary& w);

}  // namespace ccnn
