#include "ccnn/ceu.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <tuple>

namespace ccnn {

void SortedProbVector::validate() const {
    if (probs.size() != class_order.size()) throw Error(ErrorCode::shape_mismatch, "probs/class_order length mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw Error(ErrorCode::invalid_config, "probability outside [0,1]");
        if (i > 0 && probs[i] > probs[i - 1]) throw Error(ErrorCode::invalid_config, "probabilities not sorted");
        sum += probs[i];
    }
    if (std::abs(sum - 1.0) > 1e-6) throw Error(ErrorCode::invalid_config, "probabilities do not sum to 1");
}

SortedProbVector sort_probabilities(std::span<const double> probs) {
    SortedProbVector out;
    out.class_order = top_k(probs, probs.size());
    out.probs.reserve(probs.size());
    for (auto c : out.class_order) out.probs.push_back(probs[c]);
    return out;
}

void CeuConfig::validate(std::size_t num_classes) const {
    if (!(1 <= m && m < n && n <= num_classes)) {
        throw Error(ErrorCode::index_out_of_range, "need 1 <= M < N <= " + std::to_string(num_classes) + ", got M=" +
                                                       std::to_string(m) + " N=" + std::to_string(n));
    }
}

double gbvsb(const SortedProbVector& p, std::size_t m, std::size_t n) {
    CeuConfig{m, n, 0.0}.validate(p.size());
    double top = 0.0, rest = 0.0;
    for (std::size_t i = 0; i < m; ++i) top += p.probs[i];
    for (std::size_t j = m; j < n; ++j) rest += p.probs[j];
    return top - rest;
}

bool is_confident(const SortedProbVector& p, const CeuConfig& cfg) { return gbvsb(p, cfg.m, cfg.n) >= cfg.th; }

bool is_hit(const SortedProbVector& p, std::size_t label, Metric metric) {
    const std::size_t k = std::min(metric_k(metric), p.size());
    return std::find(p.class_order.begin(), p.class_order.begin() + static_cast<std::ptrdiff_t>(k), label) !=
           p.class_order.begin() + static_cast<std::ptrdiff_t>(k);
}

namespace {

struct Candidate {
    std::size_t forwarded = 0;
    std::size_t wrong = 0;
    CeuConfig config;
};

// Total order used for selection: fewer forwarded, then smaller N, M, th.
bool preferred(const Candidate& a, const Candidate& b) {
    return std::tie(a.forwarded, a.config.n, a.config.m, a.config.th) <
           std::tie(b.forwarded, b.config.n, b.config.m, b.config.th);
}

void check_inputs(std::span<const SortedProbVector> lpu, std::span<const SortedProbVector> hpu,
                  std::span<const std::uint32_t> labels) {
    if (lpu.empty()) throw Error(ErrorCode::empty_eval_set, "no predictions to tune on");
    if (lpu.size() != hpu.size() || lpu.size() != labels.size()) {
        throw Error(ErrorCode::shape_mismatch, "LPU, HPU and label counts differ");
    }
    const auto classes = lpu.front().size();
    for (std::size_t i = 0; i < lpu.size(); ++i) {
        if (lpu[i].size() != classes || hpu[i].size() != classes) {
            throw Error(ErrorCode::shape_mismatch, "prediction vectors differ in class count");
        }
    }
}

CeuOperatingPoint to_point(const Candidate& c, std::size_t samples) {
    const auto n = static_cast<double>(samples);
    return {c.config, static_cast<double>(c.wrong) / n, static_cast<double>(c.forwarded) / n};
}

}  // namespace

TuningResult tune_ceu(std::span<const SortedProbVector> lpu_preds, std::span<const SortedProbVector> hpu_preds,
                      std::span<const std::uint32_t> labels, double tolerance, Metric metric,
                      const TuneOptions& options) {
    check_inputs(lpu_preds, hpu_preds, labels);
    if (tolerance < 0.0) throw Error(ErrorCode::invalid_config, "tolerance must be >= 0");
    const std::size_t count = lpu_preds.size();
    const std::size_t classes = lpu_preds.front().size();
    const std::size_t max_n = std::min(classes, options.max_n);
    if (max_n < 2) throw Error(ErrorCode::index_out_of_range, "confidence test needs at least two classes");

    std::vector<char> lpu_wrong(count), hpu_wrong(count);
    std::size_t lpu_wrong_total = 0, hpu_wrong_total = 0;
    for (std::size_t i = 0; i < count; ++i) {
        lpu_wrong[i] = !is_hit(lpu_preds[i], labels[i], metric);
        hpu_wrong[i] = !is_hit(hpu_preds[i], labels[i], metric);
        lpu_wrong_total += lpu_wrong[i];
        hpu_wrong_total += hpu_wrong[i];
    }
    const auto extra = static_cast<std::size_t>(std::floor(tolerance * static_cast<double>(count) + kRateEpsilon));
    const std::size_t allowed = hpu_wrong_total + extra;

    std::optional<Candidate> best;
    std::map<std::size_t, Candidate> front;  // forwarded count -> lowest-error candidate
    auto consider = [&](const Candidate& c) {
        if (c.wrong <= allowed && (!best || preferred(c, *best))) best = c;
        auto it = front.find(c.forwarded);
        if (it == front.end() || c.wrong < it->second.wrong ||
            (c.wrong == it->second.wrong && preferred(c, it->second))) {
            front[c.forwarded] = c;
        }
    };

    std::vector<double> scores(count);
    std::vector<std::size_t> order(count);
    for (std::size_t n = 2; n <= max_n; ++n) {
        for (std::size_t m = 1; m < n; ++m) {
            for (std::size_t i = 0; i < count; ++i) scores[i] = gbvsb(lpu_preds[i], m, n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

            // th = lowest score keeps every sample on the LPU.
            Candidate c{0, lpu_wrong_total, {m, n, scores[order.front()]}};
            consider(c);
            std::size_t g = 0;
            while (g < count) {
                const double s = scores[order[g]];
                std::size_t end = g;
                while (end < count && scores[order[end]] == s) {
                    const auto i = order[end];
                    c.wrong = c.wrong + static_cast<std::size_t>(hpu_wrong[i]) - static_cast<std::size_t>(lpu_wrong[i]);
                    ++end;
                }
                c.forwarded = end;
                if (end < count) {
                    const double next = scores[order[end]];
                    const double mid = s + (next - s) / 2.0;
                    c.config.th = mid > s ? mid : next;
                } else {
                    c.config.th = std::nextafter(s, std::numeric_limits<double>::infinity());
                }
                consider(c);
                g = end;
            }
        }
    }
    if (!best) {
        throw Error(ErrorCode::infeasible_tolerance, "forwarding every sample should always reproduce the HPU error");
    }

    TuningResult result;
    result.config = best->config;
    auto& r = result.report;
    r.samples = count;
    r.lpu_error = static_cast<double>(lpu_wrong_total) / static_cast<double>(count);
    r.hpu_error = static_cast<double>(hpu_wrong_total) / static_cast<double>(count);
    r.tolerance = tolerance;
    r.chosen = to_point(*best, count);
    std::size_t best_wrong = std::numeric_limits<std::size_t>::max();
    for (const auto& [fwd, cand] : front) {
        if (cand.wrong < best_wrong) {
            r.pareto.push_back(to_point(cand, count));
            best_wrong = cand.wrong;
        }
    }
    return result;
}

CeuOperatingPoint evaluate_ceu(const CeuConfig& cfg, std::span<const SortedProbVector> lpu_preds,
                               std::span<const SortedProbVector> hpu_preds, std::span<const std::uint32_t> labels,
                               Metric metric) {
    check_inputs(lpu_preds, hpu_preds, labels);
    Candidate c{0, 0, cfg};
    for (std::size_t i = 0; i < lpu_preds.size(); ++i) {
        const bool forward = !is_confident(lpu_preds[i], cfg);
        c.forwarded += forward ? 1 : 0;
        const auto& final = forward ? hpu_preds[i] : lpu_preds[i];
        c.wrong += is_hit(final, labels[i], metric) ? 0 : 1;
    }
    return to_point(c, lpu_preds.size());
}

ValidationCheck validate_ceu(const CeuConfig& cfg, std::span<const SortedProbVector> lpu_preds,
                             std::span<const SortedProbVector> hpu_preds, std::span<const std::uint32_t> labels,
                             double tolerance, Metric metric, double slack) {
    const auto point = evaluate_ceu(cfg, lpu_preds, hpu_preds, labels, metric);
    ValidationCheck v;
    v.samples = lpu_preds.size();
    v.cascade_error = point.error;
    v.forwarded_fraction = point.forwarded_fraction;
    std::size_t hpu_wrong = 0;
    for (std::size_t i = 0; i < hpu_preds.size(); ++i) hpu_wrong += is_hit(hpu_preds[i], labels[i], metric) ? 0 : 1;
    v.hpu_error = static_cast<double>(hpu_wrong) / static_cast<double>(v.samples);
    v.bound = v.hpu_error + tolerance;
    v.excess = std::max(0.0, v.cascade_error - v.bound);
    v.slack = slack;
    v.flagged = v.excess > slack + kRateEpsilon;
    return v;
}

void to_json(nlohmann::json& j, const CeuConfig& c) { j = {{"M", c.m}, {"N", c.n}, {"th", c.th}}; }

void from_json(const nlohmann::json& j, CeuConfig& c) {
    j.at("M").get_to(c.m);
    j.at("N").get_to(c.n);
    j.at("th").get_to(c.th);
}

void to_json(nlohmann::json& j, const CeuOperatingPoint& p) {
    j = {{"config", p.config}, {"error", p.error}, {"forwarded_fraction", p.forwarded_fraction}};
}

void to_json(nlohmann::json& j, const TuningReport& r) {
    j = {{"samples", r.samples},   {"lpu_error", r.lpu_error}, {"hpu_error", r.hpu_error},
         {"tolerance", r.tolerance}, {"chosen", r.chosen},       {"pareto", r.pareto}};
}

void to_json(nlohmann::json& j, const ValidationCheck& v) {
    j = {{"samples", v.samples}, {"cascade_error", v.cascade_error}, {"hpu_error", v.hpu_error},
         {"forwarded_fraction", v.forwarded_fraction}, {"bound", v.bound}, {"excess", v.excess},
         {"slack", v.slack}, {"flagged", v.flagged}};
}

}  // namespace ccnn
