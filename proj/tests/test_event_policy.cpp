#include "eventpde/event_policy.hpp"
#include "eventpde/problems.hpp"
#include "eventpde/runner.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <map>

using namespace eventpde;

namespace {

ThresholdState state(double tau_star, double d, long m, double last, long warmup = 0)
{
    EventParams p;
    p.decay = d;
    p.warmup_iters = warmup;
    ThresholdState s(p);
    s.tau_star = tau_star;
    s.m = m;
    s.last_sent_norm = last;
    return s;
}

GhostHistory history(std::initializer_list<std::pair<std::vector<double>, long>> entries)
{
    GhostHistory h;
    for (const auto& [v, it] : entries) h.record(v, it, false);
    return h;
}

// Naive average of |dnorm| / diter over consecutive pairs.
double naive_slope(const std::vector<std::pair<long, double>>& h)
{
    double s = 0.0;
    for (std::size_t k = 1; k < h.size(); ++k) s += std::abs(h[k].second - h[k - 1].second) / double(h[k].first - h[k - 1].first);
    return s / double(h.size() - 1);
}

DelayModel zero_delays()
{
    DelayModel d;
    d.compute_jitter = 0.0;
    d.latency_min = d.latency_max = 0.0;
    return d;
}

// Per (sender, direction) message counts.
std::map<std::pair<int, std::string>, long> per_channel(const RunReport& r)
{
    std::map<std::pair<int, std::string>, long> out;
    for (const auto& c : r.halo_messages) out[{c.sender, c.direction}] = c.messages;
    return out;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }
};

}  // namespace

TEST(ShouldSend, WarmupAlwaysSends)
{
    auto s = state(1e9, 0.5, 0, 0.0, 100);
    for (long it = 0; it < 100; ++it) EXPECT_TRUE(should_send(s, 0.0, it));
    EXPECT_EQ(s.m, 0);
    EXPECT_FALSE(should_send(s, 0.0, 100));
}

TEST(ShouldSend, DecayedThresholdExample)
{
    auto s = state(2.0, 0.8, 3, 10.0);
    EXPECT_NEAR(s.threshold(), 1.024, 1e-15);
    EXPECT_FALSE(should_send(s, 11.0, 500));
    EXPECT_EQ(s.m, 4);
    EXPECT_NEAR(s.threshold(), 0.8192, 1e-15);
}

TEST(ShouldSend, WithoutDecayTheThresholdStalls)
{
    // A residual-like norm that settles: the remaining change after the last
    // event is smaller than tau*, so a fixed threshold is never crossed.
    EventParams p;
    p.decay_enabled = false;
    p.warmup_iters = 0;
    ThresholdState s(p);
    s.tau_star = 1.0;
    s.last_sent_norm = 5.0;
    auto norm = [](long k) { return 5.0 + 0.9 * (1.0 - std::pow(0.99, double(k))); };
    long sends = 0;
    for (long k = 1; k <= 20000; ++k) sends += should_send(s, norm(k), k);
    EXPECT_EQ(sends, 0);
    EXPECT_EQ(s.threshold(), 1.0);

    // Same trajectory with decay: an event fires.
    p.decay_enabled = true;
    ThresholdState t(p);
    t.tau_star = 1.0;
    t.last_sent_norm = 5.0;
    long first = -1;
    for (long k = 1; k <= 20000 && first < 0; ++k)
        if (should_send(t, norm(k), k)) first = k;
    EXPECT_GT(first, 0);
}

TEST(OnSend, SlopeTimesHorizon)
{
    EventParams p;
    p.horizon = 200.0;
    ThresholdState s(p);
    on_send(s, 5.0, 100);
    EXPECT_EQ(s.tau_star, p.initial_tau);
    on_send(s, 7.0, 200);
    EXPECT_DOUBLE_EQ(s.tau_star, 4.0);
    EXPECT_EQ(s.last_sent_norm, 7.0);
    EXPECT_EQ(s.m, 0);
}

TEST(OnSend, ConstantNormsGiveZeroThreshold)
{
    EventParams p;
    p.warmup_iters = 0;
    ThresholdState s(p);
    for (long it : {10, 20, 30}) on_send(s, 2.5, it);
    EXPECT_EQ(s.tau_star, 0.0);
    EXPECT_TRUE(should_send(s, 2.5, 31));
}

TEST(OnSend, NoisyHistoryMatchesNaiveAverage)
{
    oracle::Gen g(61);
    EventParams p;
    p.horizon = 137.0;
    ThresholdState s(p);
    std::vector<std::pair<long, double>> all;
    long it = 0;
    for (int k = 0; k < 35; ++k) {
        it += g.integer(1, 40);
        const double n = 10.0 + g.uniform(-1.0, 1.0);
        all.emplace_back(it, n);
        on_send(s, n, it);
        const std::size_t lo = all.size() > 20 ? all.size() - 20 : 0;
        const std::vector<std::pair<long, double>> window(all.begin() + static_cast<long>(lo), all.end());
        if (window.size() >= 2) {
            ASSERT_NEAR(s.tau_star, naive_slope(window) * 137.0, 1e-12 * s.tau_star);
        }
    }
    EXPECT_EQ(s.history.size(), 20u);
    EXPECT_THROW(on_send(s, 1.0, it), std::logic_error);
}

TEST(Extrapolate, LinearExample)
{
    const auto h = history({{{1.0, 1.0}, 10}, {{3.0, 3.0}, 20}});
    EXPECT_EQ(extrapolate_ghost(h, 25), (std::vector<double>{4.0, 4.0}));
}

TEST(Extrapolate, ConstantHistoryStaysPut)
{
    const auto h = history({{{2.0, -1.0}, 3}, {{2.0, -1.0}, 9}});
    for (long it : {9L, 10L, 100L, 100000L}) EXPECT_EQ(extrapolate_ghost(h, it), (std::vector<double>{2.0, -1.0}));
}

TEST(Extrapolate, SingleEntryIsZerothOrder)
{
    const auto h = history({{{5.0, 6.0}, 4}});
    EXPECT_EQ(extrapolate_ghost(h, 50), (std::vector<double>{5.0, 6.0}));
}

TEST(Extrapolate, ContractViolations)
{
    GhostHistory h;
    EXPECT_THROW(extrapolate_ghost(h, 1), std::logic_error);
    h.record(std::vector<double>{1.0}, 1, true);
    EXPECT_THROW(extrapolate_ghost(h, 2), std::logic_error);
}

TEST(Extrapolate, SawtoothElementsHoldLastValue)
{
    // Element 0 alternates, element 1 moves steadily.
    const auto h = history({{{0.0, 0.0}, 1}, {{1.0, 1.0}, 2}, {{0.0, 2.0}, 3}});
    EXPECT_EQ(extrapolate_ghost(h, 4), (std::vector<double>{0.0, 3.0}));
}

TEST(Extrapolate, RunawayFallsBackToLastReceipt)
{
    const auto h = history({{{0.0}, 10}, {{1.0}, 11}});
    EXPECT_EQ(extrapolate_ghost(h, 21), (std::vector<double>{11.0}));  // 10 increments: allowed
    EXPECT_EQ(extrapolate_ghost(h, 22), (std::vector<double>{1.0}));   // 11 increments: clamped
    EXPECT_EQ(extrapolate_ghost(h, 22, 20.0), (std::vector<double>{12.0}));
}

TEST(GhostHistoryRecord, KeepsThreeNewestAndReplacesSameIteration)
{
    GhostHistory h;
    for (long it = 1; it <= 5; ++it) h.record(std::vector<double>{double(it)}, it, false);
    ASSERT_EQ(h.entries.size(), 3u);
    EXPECT_EQ(h.entries.front().iter, 3);
    h.record(std::vector<double>{9.0}, 5, true);
    EXPECT_EQ(h.entries.size(), 3u);
    EXPECT_EQ(h.entries.back().values[0], 9.0);
    EXPECT_TRUE(h.neighbor_converged);
}

TEST(ThresholdTrace, CsvLayout)
{
    const std::vector<ThresholdTraceRow> rows{{0, 0, 3, 1.5, 0.25, true}, {2, 1, 4, 2.0, 0.0, false}};
    EXPECT_EQ(threshold_trace_csv(rows), "pe,direction,iteration,norm,threshold,sent\n0,up,3,1.5,0.25,1\n2,down,4,2,0,0\n");
}

// ---------------------------------------------------------------- properties

TEST(EventProperty, DecayIsStrictlyMonotone)
{
    Timer t;
    oracle::Gen g(62);
    for (int trial = 0; trial < 200; ++trial) {
        auto s = state(g.uniform(1e-3, 10.0), g.uniform(0.05, 0.99), 0, 0.0);
        double prev = s.threshold();
        for (int k = 0; k < 50; ++k) {
            ASSERT_FALSE(should_send(s, 0.0, 1000 + k));  // no change in norm: never sends
            const double now = s.threshold();
            if (now == 0.0) break;  // underflow
            ASSERT_LT(now, prev);
            prev = now;
        }
    }
    EXPECT_LT(t.seconds(), 1.0);
}

TEST(EventProperty, EventFiresWithinLivenessBound)
{
    Timer t;
    oracle::Gen g(63);
    for (int trial = 0; trial < 500; ++trial) {
        const double tau = g.uniform(1e-2, 100.0);
        const double d = g.uniform(0.1, 0.95);
        const double eps = g.uniform(1e-4, 1.0);
        const double dir = g.coin() ? 1.0 : -1.0;
        auto s = state(tau, d, 0, 3.0);
        const long bound = static_cast<long>(std::ceil(std::log(eps / tau) / std::log(d))) + 1;
        double norm = 3.0;
        long fired = -1;
        for (long k = 1; k <= std::max(bound, 1L) + 5 && fired < 0; ++k) {
            norm += dir * g.uniform(eps, 3.0 * eps);
            if (should_send(s, norm, k)) fired = k;
        }
        ASSERT_GT(fired, 0) << "tau " << tau << " d " << d << " eps " << eps;
        ASSERT_LE(fired, std::max(bound, 1L)) << "tau " << tau << " d " << d << " eps " << eps;
    }
    EXPECT_LT(t.seconds(), 1.0);
}

TEST(EventProperty, WarmupSendsEveryIteration)
{
    Timer t;
    const auto inst = manufactured_instance(16, 8);
    for (long warmup : {1L, 25L, 80L}) {
        RunConfig cfg;
        cfg.n_pes = 2;
        cfg.policy = Policy::event_triggered;
        cfg.event.warmup_iters = warmup;
        cfg.event.horizon = 1e6;  // nothing after warm-up passes the threshold quickly
        cfg.record_threshold_trace = true;
        const auto rep = run(inst, cfg);
        ASSERT_TRUE(rep.converged(cfg.tol)) << rep.diagnostic;
        std::map<std::pair<int, int>, long> warm;
        for (const auto& row : rep.threshold_trace)
            if (row.iter < warmup && row.sent) ++warm[{row.pe, row.direction}];
        ASSERT_EQ(warm.size(), 4u);
        for (const auto& [ch, n] : warm) EXPECT_EQ(n, warmup);
    }
    EXPECT_LT(t.seconds(), 1.0);
}

TEST(EventProperty, ZeroHorizonDegeneratesToAsynchronous)
{
    Timer t;
    const auto inst = manufactured_instance(32, 16);
    RunConfig cfg;
    cfg.delays = zero_delays();
    cfg.policy = Policy::asynchronous;
    const auto async = run(inst, cfg);
    cfg.policy = Policy::event_triggered;
    cfg.event.horizon = 0.0;
    cfg.event.warmup_iters = 0;
    const auto event = run(inst, cfg);
    ASSERT_TRUE(async.converged(cfg.tol));
    ASSERT_TRUE(event.converged(cfg.tol));
    EXPECT_EQ(per_channel(event), per_channel(async));
    EXPECT_EQ(event.iterations, async.iterations);

    // With noisy delays, h = 0 still sends on every sweep.
    cfg.delays = DelayModel{};
    const auto noisy = run(inst, cfg);
    ASSERT_TRUE(noisy.converged(cfg.tol));
    ASSERT_EQ(noisy.verification_rounds, 0);
    for (const auto& c : noisy.halo_messages) EXPECT_EQ(c.messages, noisy.iterations[static_cast<std::size_t>(c.sender)]);
    EXPECT_LT(t.seconds(), 1.0);
}

TEST(EventProperty, LinearTrajectoriesExtrapolateExactly)
{
    Timer t;
    oracle::Gen g(64);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = static_cast<std::size_t>(g.integer(1, 64));
        const auto a = g.vec(n, -1.0, 1.0);
        const auto b = g.vec(n, -1e-3, 1e-3);
        auto at = [&](long it) {
            std::vector<double> v(n);
            for (std::size_t k = 0; k < n; ++k) v[k] = a[k] + b[k] * double(it);
            return v;
        };
        GhostHistory h;
        long it = g.integer(0, 100);
        const int receipts = g.integer(2, 6);
        long gap = 1;
        for (int r = 0; r < receipts; ++r) {
            gap = g.integer(1, 50);
            it += gap;
            h.record(at(it), it, false);
        }
        // Skipped sends, staying inside the clamp of 10 increments.
        const long ahead = g.integer(0, static_cast<int>(9 * gap));
        const auto got = extrapolate_ghost(h, it + ahead);
        const auto want = at(it + ahead);
        for (std::size_t k = 0; k < n; ++k) ASSERT_NEAR(got[k], want[k], 1e-12);
    }
    EXPECT_LT(t.seconds(), 1.0);
}

TEST(EventProperty, EventMessagesNeverExceedSweeps)
{
    const auto inst = manufactured_instance(32, 16);
    oracle::Gen g(65);
    for (int trial = 0; trial < 3; ++trial) {
        RunConfig cfg;
        cfg.policy = Policy::event_triggered;
        cfg.event.horizon = g.uniform(10.0, 400.0);
        cfg.event.decay = g.uniform(0.3, 0.95);
        cfg.delays.seed = static_cast<std::uint64_t>(g.integer(1, 1000));
        const auto rep = run(inst, cfg);
        ASSERT_TRUE(rep.converged(cfg.tol)) << rep.diagnostic;
        for (const auto& c : rep.halo_messages)
            EXPECT_LE(c.messages, rep.iterations[static_cast<std::size_t>(c.sender)] + rep.verification_rounds);
    }
}
