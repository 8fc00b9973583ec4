#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "ccnn/ceu.hpp"

using namespace ccnn;

namespace {

std::vector<double> random_simplex(std::size_t k, std::mt19937_64& rng) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> p(k);
    double sum = 0.0;
    for (auto& v : p) sum += (v = std::pow(e(rng), 3.0));
    for (auto& v : p) v /= sum;
    return p;
}

double brute_gbvsb(std::vector<double> p, std::size_t m, std::size_t n) {
    std::sort(p.begin(), p.end(), std::greater<>());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += i < m ? p[i] : -p[i];
    return s;
}

SortedProbVector sorted(std::vector<double> p) { return sort_probabilities(p); }

std::vector<bool> forwarded(const std::vector<SortedProbVector>& preds, const CeuConfig& cfg) {
    std::vector<bool> f;
    for (const auto& p : preds) f.push_back(!is_confident(p, cfg));
    return f;
}

bool subset_of(const std::vector<bool>& a, const std::vector<bool>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] && !b[i]) return false;
    return true;
}

struct Case {
    std::vector<SortedProbVector> lpu, hpu;
    std::vector<std::uint32_t> labels;
};

// LPU predictions are noisier than the HPU's, so both make mistakes.
Case random_case(std::size_t count, std::size_t classes, std::mt19937_64& rng) {
    Case c;
    std::uniform_int_distribution<std::uint32_t> label(0, static_cast<std::uint32_t>(classes - 1));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < count; ++i) {
        const auto y = label(rng);
        auto l = random_simplex(classes, rng), h = random_simplex(classes, rng);
        if (u(rng) < 0.6) l[y] += 1.0;
        if (u(rng) < 0.8) h[y] += 1.0;
        for (auto* v : {&l, &h}) {
            double s = 0.0;
            for (double x : *v) s += x;
            for (auto& x : *v) x /= s;
        }
        c.lpu.push_back(sorted(l));
        c.hpu.push_back(sorted(h));
        c.labels.push_back(y);
    }
    return c;
}

// Exhaustive oracle: every (M, N) and every threshold at or above an observed
// score. Returns (forwarded, N, M) of the best feasible config.
std::tuple<std::size_t, std::size_t, std::size_t> brute_tune(const Case& c, double tol, Metric metric) {
    const std::size_t n_samples = c.labels.size();
    std::size_t hpu_wrong = 0;
    for (std::size_t i = 0; i < n_samples; ++i) hpu_wrong += is_hit(c.hpu[i], c.labels[i], metric) ? 0 : 1;
    const auto allowed = hpu_wrong + static_cast<std::size_t>(std::floor(tol * static_cast<double>(n_samples) + 1e-9));
    std::tuple<std::size_t, std::size_t, std::size_t> best{n_samples + 1, 0, 0};
    const std::size_t max_n = std::min<std::size_t>(c.lpu.front().size(), 10);
    for (std::size_t n = 2; n <= max_n; ++n)
        for (std::size_t m = 1; m < n; ++m) {
            std::vector<double> ths;
            for (const auto& p : c.lpu) ths.push_back(gbvsb(p, m, n));
            ths.push_back(2.0);
            for (double th : ths) {
                std::size_t fwd = 0, wrong = 0;
                for (std::size_t i = 0; i < n_samples; ++i) {
                    const bool f = gbvsb(c.lpu[i], m, n) < th;
                    fwd += f;
                    wrong += is_hit(f ? c.hpu[i] : c.lpu[i], c.labels[i], metric) ? 0 : 1;
                }
                if (wrong <= allowed) best = std::min(best, std::tuple{fwd, n, m});
            }
        }
    return best;
}

}  // namespace

TEST_CASE("gBvSB examples") {
    const auto one_hot = sorted({0, 0, 1, 0, 0});
    for (std::size_t n = 2; n <= 5; ++n)
        for (std::size_t m = 1; m < n; ++m) CHECK(gbvsb(one_hot, m, n) == 1.0);
    CHECK(gbvsb(sorted({0.1, 0.6, 0.3}), 1, 2) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(gbvsb(sorted({0.2, 0.5, 0.3}), 2, 3) == doctest::Approx(0.6).epsilon(1e-12));

    const auto uniform = sorted(std::vector<double>(10, 0.1));
    CHECK(gbvsb(uniform, 1, 2) == 0.0);
    CHECK_FALSE(is_confident(uniform, {1, 2, 0.05}));

    CHECK_THROWS_AS(gbvsb(uniform, 0, 2), Error);
    CHECK_THROWS_AS(gbvsb(uniform, 2, 2), Error);
    CHECK_THROWS_AS(gbvsb(uniform, 1, 11), Error);
}

TEST_CASE("sorting keeps the lower class first on ties") {
    const auto p = sorted({0.25, 0.5, 0.25});
    CHECK(p.probs == std::vector<double>{0.5, 0.25, 0.25});
    CHECK(p.class_order == std::vector<std::size_t>{1, 0, 2});
    CHECK(is_hit(p, 1, Metric::top1));
    CHECK_FALSE(is_hit(p, 0, Metric::top1));
    SortedProbVector bad{{0.2, 0.8}, {0, 1}};
    CHECK_THROWS_AS(bad.validate(), Error);
    SortedProbVector unnormalised{{0.8, 0.1}, {0, 1}};
    CHECK_THROWS_AS(unnormalised.validate(), Error);
}

TEST_CASE("gBvSB matches brute force and its bounds on 2000 random vectors") {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 2000; ++t) {
        const std::size_t k = 2 + static_cast<std::size_t>(t % 14);
        const auto p = random_simplex(k, rng);
        const auto s = sorted(p);
        s.validate();
        CHECK(gbvsb(s, 1, 2) == doctest::Approx(s.probs[0] - s.probs[1]).epsilon(1e-12));
        for (std::size_t n = 2; n <= k; ++n)
            for (std::size_t m = 1; m < n; ++m) {
                const double g = gbvsb(s, m, n);
                REQUIRE(std::abs(g - brute_gbvsb(p, m, n)) <= 1e-12);
                double top = 0.0;
                for (std::size_t i = 0; i < m; ++i) top += s.probs[i];
                REQUIRE(g <= top + 1e-12);
                REQUIRE(top <= 1.0 + 1e-12);
                REQUIRE(g > -1.0);
            }
    }
}

TEST_CASE("the forwarded set grows with th and with N") {
    std::mt19937_64 rng(23);
    std::vector<SortedProbVector> preds;
    for (int i = 0; i < 300; ++i) preds.push_back(sorted(random_simplex(10, rng)));
    std::uniform_real_distribution<double> th(-1.0, 1.0);
    for (int t = 0; t < 300; ++t) {
        const std::size_t m = 1 + static_cast<std::size_t>(t % 8);
        const std::size_t n = m + 1 + static_cast<std::size_t>(t % (10 - m));
        double a = th(rng), b = th(rng);
        if (a > b) std::swap(a, b);
        REQUIRE(subset_of(forwarded(preds, {m, n, a}), forwarded(preds, {m, n, b})));
        if (n < 10) REQUIRE(subset_of(forwarded(preds, {m, n, a}), forwarded(preds, {m, n + 1, a})));
    }
    CHECK(std::none_of(preds.begin(), preds.end(), [](const auto& p) { return !is_confident(p, {1, 2, -1.0}); }));
    const auto one_hot = sorted({1, 0, 0});
    CHECK(is_confident(one_hot, {1, 2, 1.0}));
    CHECK_FALSE(is_confident(one_hot, {1, 2, std::nextafter(1.0, 2.0)}));
}

TEST_CASE("tuning meets the constraint exactly and matches exhaustive search") {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 40; ++t) {
        const std::size_t classes = 3 + static_cast<std::size_t>(t % 10);
        const auto c = random_case(60 + static_cast<std::size_t>(t), classes, rng);
        for (Metric metric : {Metric::top1, Metric::top5}) {
            for (double tol : {0.0, 0.01, 0.05, 0.2}) {
                const auto r = tune_ceu(c.lpu, c.hpu, c.labels, tol, metric);
                const auto point = evaluate_ceu(r.config, c.lpu, c.hpu, c.labels, metric);
                REQUIRE(point.error <= r.report.hpu_error + tol + 1e-9);
                CHECK(point.error == r.report.chosen.error);
                CHECK(point.forwarded_fraction == r.report.chosen.forwarded_fraction);
                const auto [fwd, n, m] = brute_tune(c, tol, metric);
                CHECK(static_cast<double>(fwd) / static_cast<double>(c.labels.size()) == point.forwarded_fraction);
                CHECK(r.config.n == n);
                CHECK(r.config.m == m);
                r.config.validate(classes);
            }
        }
    }
}

TEST_CASE("tuning examples") {
    std::mt19937_64 rng(41);
    const auto c = random_case(100, 10, rng);
    const auto loose = tune_ceu(c.lpu, c.hpu, c.labels, 1.0, Metric::top1);
    CHECK(loose.report.chosen.forwarded_fraction == 0.0);
    CHECK(loose.config.m == 1);
    CHECK(loose.config.n == 2);
    double min_score = 2.0;
    for (const auto& p : c.lpu) min_score = std::min(min_score, gbvsb(p, 1, 2));
    CHECK(loose.config.th == min_score);

    const auto strict = tune_ceu(c.lpu, c.hpu, c.labels, 0.0, Metric::top1);
    CHECK(strict.report.lpu_error > strict.report.hpu_error);
    CHECK(strict.report.chosen.forwarded_fraction > 0.0);

    // Pareto front: forwarded fraction up, error strictly down.
    const auto& front = strict.report.pareto;
    REQUIRE(!front.empty());
    for (std::size_t i = 1; i < front.size(); ++i) {
        CHECK(front[i].forwarded_fraction > front[i - 1].forwarded_fraction);
        CHECK(front[i].error < front[i - 1].error);
    }
    for (const auto& p : front) CHECK(evaluate_ceu(p.config, c.lpu, c.hpu, c.labels, Metric::top1).error == p.error);
    CHECK_THROWS_AS(tune_ceu(c.lpu, c.hpu, c.labels, -0.1, Metric::top1), Error);
}

TEST_CASE("LPU wrong on exactly the 30% least confident samples") {
    std::vector<SortedProbVector> lpu, hpu;
    std::vector<std::uint32_t> labels;
    for (std::size_t i = 0; i < 100; ++i) {
        const auto y = static_cast<std::uint32_t>(i % 10);
        std::vector<double> l(10, 0.0), h(10, 0.0);
        const auto other = (y + 1) % 10;
        if (i < 30) {
            const double margin = 0.001 * static_cast<double>(i + 1);
            l[other] = 0.5 + margin / 2;
            l[y] = 0.5 - margin / 2;
        } else {
            l[y] = 0.7 + 0.001 * static_cast<double>(i);
            l[other] = 1.0 - l[y];
        }
        h[y] = 1.0;
        lpu.push_back(sorted(l));
        hpu.push_back(sorted(h));
        labels.push_back(y);
    }
    const auto r = tune_ceu(lpu, hpu, labels, 0.0, Metric::top1);
    CHECK(r.report.chosen.forwarded_fraction == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(r.report.chosen.error == r.report.hpu_error);
    CHECK(r.report.hpu_error == 0.0);
}

TEST_CASE("held-out validation flags excess above the slack") {
    std::mt19937_64 rng(5);
    const auto c = random_case(100, 10, rng);
    const CeuConfig keep_all{1, 2, -1.0};
    const auto v = validate_ceu(keep_all, c.lpu, c.hpu, c.labels, 0.0, Metric::top1, 0.02);
    const auto lpu_err = evaluate_ceu(keep_all, c.lpu, c.hpu, c.labels, Metric::top1).error;
    CHECK(v.cascade_error == lpu_err);
    CHECK(v.bound == v.hpu_error);
    CHECK(v.excess == doctest::Approx(std::max(0.0, lpu_err - v.hpu_error)));
    CHECK(v.flagged == (v.excess > 0.02));
    CHECK(v.flagged);

    const auto within = validate_ceu(keep_all, c.lpu, c.hpu, c.labels, v.excess - 0.015, Metric::top1, 0.02);
    CHECK_FALSE(within.flagged);
    const auto forward_all = validate_ceu({1, 2, 2.0}, c.lpu, c.hpu, c.labels, 0.0, Metric::top1);
    CHECK(forward_all.excess == 0.0);
    CHECK(forward_all.forwarded_fraction == 1.0);
}

TEST_CASE("configs serialise") {
    const CeuConfig cfg{2, 5, 0.125};
    const nlohmann::json j = cfg;
    CHECK(j.dump() == R"({"M":2,"N":5,"th":0.125})");
    CHECK(j.get<CeuConfig>() == cfg);
    CHECK_THROWS_AS(CeuConfig({3, 3, 0}).validate(10), Error);
    CHECK_THROWS_AS(CeuConfig({1, 11, 0}).validate(10), Error);
}
