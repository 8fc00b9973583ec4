#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ccnn/cascade.hpp"
#include "test_support.hpp"

using namespace ccnn;
using namespace ccnn::testing;

namespace {

CascadePlanner& planner() {
    static CascadePlanner p(fixture_model(), fixture_eval(), default_device(), CascadeOptions{});
    return p;
}

}  // namespace

TEST_CASE("evaluation split") {
    const auto s = split_eval(200, 2018, 0.5, false);
    CHECK(s.tune.size() == 100);
    CHECK(s.validate.size() == 100);
    CHECK(std::is_sorted(s.tune.begin(), s.tune.end()));
    std::set<std::size_t> all(s.tune.begin(), s.tune.end());
    all.insert(s.validate.begin(), s.validate.end());
    CHECK(all.size() == 200);
    CHECK(*all.rbegin() == 199);
    CHECK(split_eval(200, 2018, 0.5, false).tune == s.tune);
    CHECK(split_eval(200, 7, 0.5, false).tune != s.tune);
    CHECK(split_eval(10, 1, 0.3, false).tune.size() == 3);

    const auto faithful = split_eval(200, 2018, 0.5, true);
    CHECK(faithful.tune.size() == 200);
    CHECK(faithful.validate == faithful.tune);
    CHECK_THROWS_AS(split_eval(0, 1, 0.5, false), Error);
    CHECK_THROWS_AS(split_eval(10, 1, 0.0, false), Error);
}

TEST_CASE("residual CEU budget") {
    CHECK(ceu_tolerance(0.01, 0.08, 0.09) == 0.0);
    CHECK(ceu_tolerance(0.05, 0.08, 0.10) == doctest::Approx(0.03));
    CHECK(ceu_tolerance(0.02, 0.08, 0.06) == 0.02);
    CHECK(ceu_tolerance(0.0, 0.08, 0.2) == 0.0);
}

TEST_CASE("an unconstrained tolerance forwards nothing") {
    const auto sys = planner().build(1.0);
    CHECK(sys.tuning.chosen.forwarded_fraction == 0.0);
    CHECK(sys.estimates.cascade_throughput == sys.estimates.lpu.throughput);
    CHECK(sys.lpu.scheme().wordlength == kMinWordlength);
    CHECK(sys.estimates.baseline.wordlength == kMinWordlength);
    CHECK(sys.estimates.baseline.speedup == 1.0);
}

TEST_CASE("the CEU constraint holds on the tuning half for every default tolerance") {
    for (double tol : kDefaultTolerances) {
        CAPTURE(tol);
        const auto sys = planner().build(tol);
        const auto& t = sys.tuning;
        const auto n = static_cast<double>(t.samples);
        const auto allowed = std::llround(t.hpu_error * n) + static_cast<long long>(std::floor(sys.ceu_tolerance * n + 1e-9));
        CHECK(std::llround(t.chosen.error * n) <= allowed);
        CHECK(t.chosen.error <= t.hpu_error + tol + kRateEpsilon);
        CHECK(t.chosen.error <= sys.reference_error + tol + kRateEpsilon);
        CHECK(sys.lpu.scheme().wordlength < sys.hpu.scheme().wordlength);
        CHECK(sys.lpu.shares_weights_with(sys.hpu));
        REQUIRE(sys.validation);
        const auto& v = *sys.validation;
        CHECK(v.samples == 100);
        CHECK(v.bound == doctest::Approx(v.hpu_error + sys.ceu_tolerance));
        CHECK(v.flagged == (v.excess > v.slack + kRateEpsilon));
    }
}

TEST_CASE("cascade predictions compose the two units exactly") {
    auto& p = planner();
    const auto sys = p.build(0.0);
    const auto& eval = fixture_eval();
    const auto run = run_cascade(sys, eval.samples, &eval.labels);
    const auto lpu = predict_batch(sys.lpu, eval.samples, 16);
    const auto hpu = predict_batch(sys.hpu, eval.samples, 16);
    for (std::size_t i = 0; i < eval.size(); ++i) {
        CHECK(run.forwarded[i] == !is_confident(sort_probabilities(lpu[i]), sys.ceu));
        CHECK(run.probabilities[i] == (run.forwarded[i] ? hpu[i] : lpu[i]));
    }
    const auto& st = run.stats;
    CHECK(st.forwarded + st.lpu_only == st.total);
    CHECK(st.total == eval.size());
    CHECK(st.lpu_error->top1 == error_rate(lpu, eval.labels, Metric::top1));
    CHECK(st.hpu_error->top5 == error_rate(hpu, eval.labels, Metric::top5));
    if (st.hpu_error->top1 <= st.lpu_error->top1) CHECK(st.cascade_error->top1 <= st.lpu_error->top1);

    // Forwarded fraction on the tuning half is what tuning reported.
    const auto tune_run = run_cascade(sys, p.tune_set().samples, &p.tune_set().labels);
    CHECK(tune_run.stats.forwarded_fraction() == sys.tuning.chosen.forwarded_fraction);
    CHECK(tune_run.stats.cascade_error->top1 == sys.tuning.chosen.error);

    auto keep = sys;
    keep.ceu.th = -1.0;
    const auto low = run_cascade(keep, eval.samples);
    CHECK(low.stats.forwarded == 0);
    CHECK(low.probabilities == lpu);
    CHECK_FALSE(low.stats.cascade_error);
    auto send = sys;
    send.ceu.th = 2.0;
    CHECK(run_cascade(send, eval.samples).probabilities == hpu);

    std::vector<Tensor> wrong{Tensor({1, 3, 3})};
    CHECK_THROWS_AS(run_cascade(sys, wrong), Error);
}

TEST_CASE("the cascade stores exactly the HPU weights") {
    for (double tol : {0.0, 0.02, 1.0}) {
        const auto sys = planner().build(tol);
        CHECK(sys.stored_weight_bytes() == sys.hpu_only_weight_bytes());
        CHECK(sys.stored_weight_bytes() == sys.hpu.store()->stored_bytes());
    }
}

TEST_CASE("discrete-event simulation matches the closed form") {
    CHECK(simulate_timeline(250.0, 100.0, 1000, 0.0) == doctest::Approx(250.0).epsilon(1e-3));
    CHECK(simulate_timeline(250.0, 100.0, 1000, 1.0) == doctest::Approx(1.0 / (1.0 / 250 + 1.0 / 100)).epsilon(1e-3));
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> tp(10.0, 1e6), frac(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
        const double tl = tp(rng), th = tp(rng), r = frac(rng);
        for (auto mode : {CascadeMode::time_shared, CascadeMode::static_partition}) {
            const double sim = simulate_timeline(tl, th, 100000, r, mode);
            CHECK(sim == doctest::Approx(cascade_throughput(tl, th, r, mode)).epsilon(0.01));
        }
    }
    const auto sys = planner().build(0.0);
    const double r = sys.tuning.chosen.forwarded_fraction;
    CHECK(simulate_timeline(sys, 100000, r) == doctest::Approx(sys.estimates.cascade_throughput).epsilon(0.01));
    CHECK_THROWS_AS(simulate_timeline(1.0, 1.0, 0, 0.5), Error);
}

TEST_CASE("a fixed unit pair forwards less as the tolerance grows") {
    auto& p = planner();
    const auto& lpu = p.derived_lpu(p.sweep().at(4), p.sweep().at(8));
    double prev = 2.0;
    for (double tol : {0.0, 0.005, 0.01, 0.02, 0.03, 0.05, 0.1, 1.0}) {
        const auto sys = p.assemble(tol, lpu.scheme, p.sweep().at(8).scheme);
        CHECK(sys.tuning.chosen.forwarded_fraction <= prev);
        prev = sys.tuning.chosen.forwarded_fraction;
    }
    CHECK(prev == 0.0);
    CHECK_THROWS_AS(p.assemble(0.0, p.sweep().at(8).scheme, p.sweep().at(8).scheme), Error);
}

TEST_CASE("a given CEU config is evaluated, not re-tuned") {
    auto& p = planner();
    const auto tuned = p.build(0.01);
    const CeuConfig given{2, 4, 0.5};
    const auto sys = p.assemble(0.01, tuned.lpu.scheme(), tuned.hpu.scheme(), given);
    CHECK(sys.ceu == given);
    const auto again = p.assemble(0.01, tuned.lpu.scheme(), tuned.hpu.scheme(), tuned.ceu);
    CHECK(again.tuning.chosen.forwarded_fraction == tuned.tuning.chosen.forwarded_fraction);
    CHECK(again.tuning.chosen.error == tuned.tuning.chosen.error);
}

TEST_CASE("reports") {
    auto& p = planner();
    const auto sys = p.build(0.01);
    const auto& eval = fixture_eval();
    const auto run = run_cascade(sys, eval.samples, &eval.labels);
    const std::vector<double> tols{0.0, 0.02};
    const auto sweep = sweep_tolerances(p, tols);
    const auto rows = wordlength_table(p);
    const auto j = report_json(sys, &run.stats, sweep, rows);
    CHECK(nlohmann::json::parse(j.dump()) == j);
    CHECK(j["ceu"].get<CeuConfig>() == sys.ceu);
    CHECK(j["inputs"]["seed"] == 2018);
    CHECK(j["lpu"]["scheme"].get<QuantScheme>() == sys.lpu.scheme());
    CHECK(j["hpu"]["arch"].get<ArchConfig>() == sys.hpu_arch);
    CHECK(j["storage"]["cascade_weight_bytes"] == j["storage"]["hpu_only_weight_bytes"]);
    CHECK(j["run"]["forwarded"] == run.stats.forwarded);
    CHECK_FALSE(j["run"].contains("wall_clock_s"));
    CHECK(j["tolerance_sweep"].size() == 2);
    CHECK(j["wordlength_sweep"].size() == 15);

    const auto empty = report_json(sys, nullptr, {});
    CHECK(empty["tolerance_sweep"].empty());
    CHECK(empty["run"].is_null());
    CHECK(empty["ceu"] == j["ceu"]);
    CHECK(sweep_tolerances(p, std::span<const double>{}).empty());

    const auto csv = sweep_csv(sweep);
    CHECK(csv.rfind("tolerance,speedup,forwarded_fraction\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(report_text(sys, &run.stats, sweep).find("speedup") != std::string::npos);

    const nlohmann::json sj = p.sweep();
    const auto back = sj.get<WordlengthSweep>();
    CHECK(back.points.size() == p.sweep().points.size());
    CHECK(back.at(6).scheme == p.sweep().at(6).scheme);
    CHECK(back.reference_error == p.sweep().reference_error);
}

TEST_CASE("infeasible tolerances are reported, not fatal") {
    auto sweep = planner().sweep();
    sweep.reference_error = -0.5;  // nothing can comply
    CascadePlanner p(fixture_model(), fixture_eval(), default_device(), CascadeOptions{}, sweep);
    const std::vector<double> tols{0.01};
    const auto points = sweep_tolerances(p, tols);
    REQUIRE(points.size() == 1);
    CHECK_FALSE(points[0].feasible);
    CHECK(points[0].note.rfind("select: ", 0) == 0);
    try {
        p.build(0.01);
        FAIL("expected infeasible tolerance");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::infeasible_tolerance);
    }
    CHECK(sweep_csv(points) == "tolerance,speedup,forwarded_fraction\n");
}

TEST_CASE("building is deterministic") {
    const auto a = build_cascade(fixture_model(), fixture_eval(), default_device(), CascadeOptions{});
    const auto b = report_json(planner().build(0.01), nullptr, {});
    CHECK(report_json(a, nullptr, {}).dump() == b.dump());
}

TEST_CASE("paper-faithful mode tunes and validates on the whole set") {
    CascadeOptions o;
    o.paper_faithful = true;
    o.min_wordlength = 3;
    o.max_wordlength = 8;
    const auto sys = build_cascade(fixture_model(), fixture_eval(), default_device(), o);
    CHECK(sys.tuning.samples == 200);
    REQUIRE(sys.validation);
    CHECK(sys.validation->cascade_error == sys.tuning.chosen.error);
    CHECK_FALSE(sys.validation->flagged);
    CHECK(sys.lpu.scheme().wordlength >= 3);
}
