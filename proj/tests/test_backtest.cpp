#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "alphaforge/backtest.hpp"
#include "alphaforge/eval.hpp"
#include "alphaforge/expr.hpp"
#include "alphaforge/rng.hpp"
#include "alphaforge/synthetic.hpp"
#include "support/test_support.hpp"

using namespace alphaforge;
using backtest::AllocationMode;
using Catch::Approx;

namespace {

eval::Signal signal_from_rows(const std::vector<std::vector<double>>& rows) {
    eval::Signal s;
    size_t N = rows.at(0).size();
    s.values = Matrix(rows.size(), N, kNaN);
    for (size_t t = 0; t < rows.size(); ++t) {
        s.dates.push_back(static_cast<int>(t));
        for (size_t j = 0; j < N; ++j) s.values(t, j) = rows[t][j];
    }
    for (size_t j = 0; j < N; ++j) s.symbols.push_back("S" + std::to_string(j));
    return s;
}

}  // namespace

TEST_CASE("long-only allocation examples") {
    SECTION("all-equal scores give equal weights") {
        eval::Signal s = signal_from_rows({std::vector<double>(10, 4.2)});
        auto alloc = backtest::signal_to_allocations(s, AllocationMode::LongOnly);
        for (size_t j = 0; j < 10; ++j)
            REQUIRE(alloc.weights(0, j) == Approx(0.1).margin(1e-15));
    }

    SECTION("scores [3,1,2] map through ranks [1,0,0.5] with eps=1/6") {
        // raw weights [1+1/6, 1/6, 1/2+1/6] normalize by their sum 2
        auto alloc = backtest::signal_to_allocations(signal_from_rows({{3, 1, 2}}),
                                                     AllocationMode::LongOnly);
        REQUIRE(alloc.weights(0, 0) == Approx(7.0 / 12).margin(1e-15));
        REQUIRE(alloc.weights(0, 1) == Approx(1.0 / 12).margin(1e-15));
        REQUIRE(alloc.weights(0, 2) == Approx(4.0 / 12).margin(1e-15));
    }

    SECTION("NaN scores sit at the eps floor") {
        // ranks [NaN,1,0] -> raw [1/6, 7/6, 1/6], sum 9/6
        auto alloc = backtest::signal_to_allocations(signal_from_rows({{kNaN, 2, 1}}),
                                                     AllocationMode::LongOnly);
        REQUIRE(alloc.weights(0, 0) == Approx(1.0 / 9).margin(1e-15));
        REQUIRE(alloc.weights(0, 1) == Approx(7.0 / 9).margin(1e-15));
        REQUIRE(alloc.weights(0, 2) == Approx(1.0 / 9).margin(1e-15));
    }

    SECTION("all-NaN warm-up rows fall back to equal weights") {
        auto alloc = backtest::signal_to_allocations(
            signal_from_rows({{kNaN, kNaN, kNaN, kNaN}, {4, 3, 2, 1}}),
            AllocationMode::LongOnly);
        for (size_t j = 0; j < 4; ++j)
            REQUIRE(alloc.weights(0, j) == Approx(0.25).margin(1e-15));
        REQUIRE(alloc.weights(1, 0) > alloc.weights(1, 3));
    }
}

TEST_CASE("dollar-neutral allocation examples") {
    SECTION("scores [3,1,2]: demeaned ranks [.5,-.5,0] already have gross 1") {
        auto alloc = backtest::signal_to_allocations(signal_from_rows({{3, 1, 2}}),
                                                     AllocationMode::DollarNeutral);
        REQUIRE(alloc.weights(0, 0) == Approx(0.5).margin(1e-15));
        REQUIRE(alloc.weights(0, 1) == Approx(-0.5).margin(1e-15));
        REQUIRE(alloc.weights(0, 2) == Approx(0.0).margin(1e-15));
    }

    SECTION("four symbols") {
        // ranks [1,0,1/3,2/3], mean 1/2, demeaned [.5,-.5,-1/6,1/6], gross 4/3
        auto alloc = backtest::signal_to_allocations(signal_from_rows({{4, 1, 2, 3}}),
                                                     AllocationMode::DollarNeutral);
        REQUIRE(alloc.weights(0, 0) == Approx(3.0 / 8).margin(1e-12));
        REQUIRE(alloc.weights(0, 1) == Approx(-3.0 / 8).margin(1e-12));
        REQUIRE(alloc.weights(0, 2) == Approx(-1.0 / 8).margin(1e-12));
        REQUIRE(alloc.weights(0, 3) == Approx(1.0 / 8).margin(1e-12));
    }

    SECTION("NaN scores take zero weight, rest still net 0 gross 1") {
        auto alloc = backtest::signal_to_allocations(signal_from_rows({{kNaN, 2, 1}}),
                                                     AllocationMode::DollarNeutral);
        REQUIRE(alloc.weights(0, 0) == 0.0);
        REQUIRE(alloc.weights(0, 1) == Approx(0.5).margin(1e-15));
        REQUIRE(alloc.weights(0, 2) == Approx(-0.5).margin(1e-15));
    }

    SECTION("rows with no dispersion stay flat") {
        auto alloc = backtest::signal_to_allocations(
            signal_from_rows({{kNaN, kNaN, kNaN}, {7, 7, 7}}), AllocationMode::DollarNeutral);
        for (size_t t = 0; t < 2; ++t)
            for (size_t j = 0; j < 3; ++j) REQUIRE(alloc.weights(t, j) == 0.0);
    }
}

TEST_CASE("allocation row constraints hold on random signals") {
    Rng rng(20240311);
    for (int trial = 0; trial < 300; ++trial) {
        size_t N = 2 + static_cast<size_t>(rng.uniform_int(9));
        std::vector<double> row(N);
        for (auto& v : row) {
            v = rng.uniform(-5, 5);
            if (rng.bernoulli(0.15)) v = kNaN;
        }
        auto sig = signal_from_rows({row});

        auto lo = backtest::signal_to_allocations(sig, AllocationMode::LongOnly);
        double sum = 0;
        for (size_t j = 0; j < N; ++j) {
            REQUIRE(lo.weights(0, j) >= 0.0);
            sum += lo.weights(0, j);
        }
        REQUIRE(sum == Approx(1.0).margin(1e-9));

        auto dn = backtest::signal_to_allocations(sig, AllocationMode::DollarNeutral);
        double net = 0, gross = 0;
        for (size_t j = 0; j < N; ++j) {
            net += dn.weights(0, j);
            gross += std::fabs(dn.weights(0, j));
        }
        REQUIRE(net == Approx(0.0).margin(1e-9));
        if (gross != 0.0) REQUIRE(gross == Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("long-only weights are monotone in score") {
    Rng rng(555);
    for (int trial = 0; trial < 200; ++trial) {
        size_t N = 3 + static_cast<size_t>(rng.uniform_int(8));
        std::vector<double> row(N);
        for (auto& v : row) v = rng.uniform(-10, 10);
        auto alloc =
            backtest::signal_to_allocations(signal_from_rows({row}), AllocationMode::LongOnly);
        for (size_t a = 0; a < N; ++a)
            for (size_t b = 0; b < N; ++b) {
                if (row[a] > row[b]) REQUIRE(alloc.weights(0, a) > alloc.weights(0, b));
                if (row[a] == row[b])
                    REQUIRE(alloc.weights(0, a) == Approx(alloc.weights(0, b)).margin(1e-15));
            }
    }
}

TEST_CASE("allocations are invariant to positive rescaling of the signal") {
    Rng rng(777);
    std::vector<std::vector<double>> rows;
    for (int t = 0; t < 40; ++t) {
        std::vector<double> row(6);
        for (auto& v : row) v = rng.uniform(-3, 3);
        rows.push_back(row);
    }
    auto base = signal_from_rows(rows);
    auto scaled = base;
    for (size_t i = 0; i < scaled.values.size(); ++i) scaled.values.data()[i] *= 37.5;

    for (auto mode : {AllocationMode::LongOnly, AllocationMode::DollarNeutral}) {
        auto a = backtest::signal_to_allocations(base, mode);
        auto b = backtest::signal_to_allocations(scaled, mode);
        for (size_t i = 0; i < a.weights.size(); ++i)
            REQUIRE(a.weights.data()[i] == Approx(b.weights.data()[i]).margin(1e-12));
    }
}

TEST_CASE("portfolio returns apply a one-day execution lag") {
    SECTION("first day is flat by convention") {
        auto panel = marketdata::derive_fields(test_support::panel_from_close({{100, 101}, {100, 102}}));
        eval::Signal sig;
        sig.dates = panel.dates;
        sig.symbols = panel.symbols;
        sig.values = Matrix(panel.rows(), panel.cols(), 1.0);
        auto alloc = backtest::signal_to_allocations(sig);
        auto rets = backtest::portfolio_returns(alloc, panel);
        REQUIRE(rets[0] == 0.0);
    }

    SECTION("equal weights on a uniform 1% day earn 1%") {
        // closes all step +1% on day 2
        auto panel = marketdata::derive_fields(test_support::panel_from_close({{100, 101.0}, {50, 50.5}, {20, 20.2}}));
        eval::Signal sig;
        sig.dates = panel.dates;
        sig.symbols = panel.symbols;
        sig.values = Matrix(panel.rows(), panel.cols(), 3.0);
        auto alloc = backtest::signal_to_allocations(sig);
        auto rets = backtest::portfolio_returns(alloc, panel);
        REQUIRE(rets[1] == Approx(0.01).margin(1e-12));
    }

    SECTION("full weight on one symbol picks up its next-day return") {
        auto panel = marketdata::derive_fields(test_support::panel_from_close({{100, 110, 99}, {100, 100, 100}}));
        backtest::AllocationSeries alloc;
        alloc.dates = panel.dates;
        alloc.symbols = panel.symbols;
        alloc.weights = Matrix(3, 2, 0.0);
        alloc.weights(0, 0) = 1.0;  // hold symbol 0 into day 2
        alloc.weights(1, 1) = 1.0;  // hold symbol 1 into day 3
        auto rets = backtest::portfolio_returns(alloc, panel);
        REQUIRE(rets[1] == Approx(0.10).margin(1e-12));
        REQUIRE(rets[2] == Approx(0.0).margin(1e-12));
    }

    SECTION("perturbing day-t returns leaves earlier portfolio days unchanged") {
        synthetic::SynthConfig cfg;
        cfg.num_days = 30;
        cfg.seed = 99;
        auto panel = marketdata::derive_fields(synthetic::generate_panel(cfg));
        auto expr = expr::get_expr(expr::parse("ts_mean(returns, 5)"));
        auto sig = eval::evaluate(expr, panel);
        auto alloc = backtest::signal_to_allocations(sig);
        auto base = backtest::portfolio_returns(alloc, panel);

        auto bumped = panel;
        const size_t cut = 20;
        for (size_t j = 0; j < bumped.cols(); ++j) bumped.fields["returns"](cut, j) += 0.05;
        auto moved = backtest::portfolio_returns(alloc, bumped);
        for (size_t t = 0; t < cut; ++t) REQUIRE(base[t] == moved[t]);
        REQUIRE(moved[cut] != base[cut]);
    }

    SECTION("random allocations match the scalar double loop") {
        Rng rng(31415);
        synthetic::SynthConfig cfg;
        cfg.num_days = 40;
        cfg.seed = 7;
        auto panel = marketdata::derive_fields(synthetic::generate_panel(cfg));
        const size_t T = panel.rows(), N = panel.cols();
        backtest::AllocationSeries alloc;
        alloc.dates = panel.dates;
        alloc.symbols = panel.symbols;
        alloc.weights = Matrix(T, N, 0.0);
        for (size_t t = 0; t < T; ++t)
            for (size_t j = 0; j < N; ++j) alloc.weights(t, j) = rng.uniform(-1, 1);

        auto got = backtest::portfolio_returns(alloc, panel);
        const Matrix& rets = panel.field("returns");
        REQUIRE(got[0] == 0.0);
        for (size_t t = 1; t < T; ++t) {
            double want = 0;
            for (size_t j = 0; j < N; ++j) {
                double r = rets(t, j);
                if (!is_nan(r)) want += alloc.weights(t - 1, j) * r;
            }
            REQUIRE(got[t] == Approx(want).margin(1e-12));
        }

        auto via_matrix = backtest::portfolio_returns(alloc, rets);
        for (size_t t = 0; t < T; ++t) REQUIRE(got[t] == via_matrix[t]);
    }

    SECTION("shape mismatches throw") {
        auto panel = marketdata::derive_fields(test_support::panel_from_close({{100, 101}, {100, 102}}));
        backtest::AllocationSeries alloc;
        alloc.weights = Matrix(5, 2, 0.1);
        REQUIRE_THROWS_AS(backtest::portfolio_returns(alloc, panel), std::invalid_argument);
    }
}

TEST_CASE("performance metrics") {
    SECTION("+1% then -1% compounds to -0.01%") {
        auto rec = backtest::compute_metrics({0.01, -0.01});
        REQUIRE(rec.period_return == Approx(-0.0001).margin(1e-12));
    }

    SECTION("constant zero series has zero vol and NaN Sharpe") {
        auto rec = backtest::compute_metrics(std::vector<double>(20, 0.0));
        REQUIRE(rec.period_return == 0.0);
        REQUIRE(rec.volatility == 0.0);
        REQUIRE(is_nan(rec.sharpe));
    }

    SECTION("constant nonzero series still has NaN Sharpe") {
        // 0.25 over 8 days keeps the mean binary-exact, so the stdev is exactly 0
        auto rec = backtest::compute_metrics(std::vector<double>(8, 0.25));
        REQUIRE(rec.period_return == Approx(std::pow(1.25, 8) - 1).margin(1e-12));
        REQUIRE(rec.volatility == 0.0);
        REQUIRE(is_nan(rec.sharpe));
    }

    SECTION("random series matches the formulas") {
        Rng rng(2718);
        for (int trial = 0; trial < 50; ++trial) {
            size_t n = 2 + static_cast<size_t>(rng.uniform_int(120));
            std::vector<double> daily(n);
            for (auto& r : daily) r = rng.normal(0.0005, 0.01);
            auto rec = backtest::compute_metrics(daily);

            double prod = 1;
            for (double r : daily) prod *= 1 + r;
            double mean = 0;
            for (double r : daily) mean += r;
            mean /= static_cast<double>(n);
            double ss = 0;
            for (double r : daily) ss += (r - mean) * (r - mean);
            double sd = std::sqrt(ss / (static_cast<double>(n) - 1));

            REQUIRE(rec.period_return == Approx(prod - 1).margin(1e-12));
            REQUIRE(rec.volatility == Approx(sd * std::sqrt(252.0)).margin(1e-12));
            if (sd > 0)
                REQUIRE(rec.sharpe == Approx(mean / sd * std::sqrt(252.0)).margin(1e-12));
        }
    }

    SECTION("fewer than two observations is an error") {
        REQUIRE_THROWS_AS(backtest::compute_metrics({0.01}), std::invalid_argument);
        REQUIRE_THROWS_AS(backtest::compute_metrics({}), std::invalid_argument);
    }

    SECTION("display formatting") {
        backtest::PerformanceRecord rec;
        rec.period_return = 0.0234;
        rec.sharpe = 1.25;
        REQUIRE(rec.return_str() == "2.34%");
        REQUIRE(rec.sharpe_str() == "1.250");
        rec.sharpe = kNaN;
        REQUIRE(rec.sharpe_str() == "NaN");
        rec.period_return = -0.000099999999999989;
        REQUIRE(rec.return_str() == "-0.01%");
    }

    SECTION("annualization factor is configurable") {
        std::vector<double> daily = {0.01, -0.005, 0.002, 0.007, -0.001};
        auto a = backtest::compute_metrics(daily, 252.0);
        auto b = backtest::compute_metrics(daily, 12.0);
        REQUIRE(a.volatility / b.volatility == Approx(std::sqrt(252.0 / 12.0)).margin(1e-12));
    }
}

TEST_CASE("mode parsing") {
    REQUIRE(backtest::allocation_mode_from("long_only") == AllocationMode::LongOnly);
    REQUIRE(backtest::allocation_mode_from("dollar_neutral") == AllocationMode::DollarNeutral);
    REQUIRE_THROWS_AS(backtest::allocation_mode_from("short_only"), std::invalid_argument);
}

TEST_CASE("end-to-end signal to metrics on synthetic data") {
    synthetic::SynthConfig cfg;
    cfg.num_days = 120;
    cfg.seed = 11;
    auto base = synthetic::generate_panel(cfg);
    auto panel = marketdata::derive_fields(base);
    auto e = expr::get_expr(expr::parse("rank(momentum_20)"));
    auto sig = eval::evaluate(e, panel);
    auto alloc = backtest::signal_to_allocations(sig, AllocationMode::LongOnly);
    auto daily = backtest::portfolio_returns(alloc, panel);
    auto rec = backtest::compute_metrics(daily);
    REQUIRE(std::isfinite(rec.period_return));
    REQUIRE(std::isfinite(rec.volatility));
    REQUIRE(rec.daily.size() == panel.rows());
    // weights stay valid through the warm-up region
    for (size_t t = 0; t < alloc.weights.rows(); ++t) {
        double sum = 0;
        for (size_t j = 0; j < alloc.weights.cols(); ++j) {
            REQUIRE(alloc.weights(t, j) >= 0.0);
            sum += alloc.weights(t, j);
        }
        REQUIRE(sum == Approx(1.0).margin(1e-9));
    }
}
