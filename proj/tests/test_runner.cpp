#include "eventpde/direct_solve.hpp"
#include "eventpde/problems.hpp"
#include "eventpde/runner.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace eventpde;

namespace {

DelayModel zero_delays()
{
    DelayModel d;
    d.compute_jitter = 0.0;
    d.latency_min = d.latency_max = 0.0;
    return d;
}

double max_diff_mean_free(const std::vector<double>& a, const std::vector<double>& b)
{
    const auto x = oracle::minus_mean(a);
    const auto y = oracle::minus_mean(b);
    double m = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) m = std::max(m, std::abs(x[k] - y[k]));
    return m;
}

RunConfig config(Policy p, Backend b = Backend::virtual_time)
{
    RunConfig cfg;
    cfg.policy = p;
    cfg.backend = b;
    return cfg;
}

const ProblemInstance& manufactured_64x32()
{
    static const auto inst = manufactured_instance(64, 32);
    return inst;
}

}  // namespace

TEST(Run, SynchronousMatchesReference)
{
    const auto& inst = manufactured_64x32();
    const auto rep = run(inst, config(Policy::synchronous));
    ASSERT_TRUE(rep.converged(1e-8)) << rep.diagnostic;
    EXPECT_LT(rep.final_residual, 1e-8);
    EXPECT_LT(max_diff_mean_free(rep.solution, *inst.reference), 1e-6);
    EXPECT_EQ(rep.initial_residual, 1.0);
    EXPECT_TRUE(rep.virtual_time.has_value());
    EXPECT_FALSE(rep.wall_time_ms.has_value());
}

TEST(Run, AsynchronousCountsOneMessagePerSweep)
{
    auto cfg = config(Policy::asynchronous);
    cfg.delays = zero_delays();
    const auto rep = run(manufactured_64x32(), cfg);
    ASSERT_TRUE(rep.converged(1e-8)) << rep.diagnostic;
    ASSERT_EQ(rep.verification_rounds, 0);
    ASSERT_EQ(rep.halo_messages.size(), 8u);
    long total = 0;
    for (const auto& c : rep.halo_messages) {
        EXPECT_EQ(c.messages, rep.iterations[static_cast<std::size_t>(c.sender)]);
        total += c.messages;
    }
    EXPECT_EQ(total, rep.total_halo_msgs);
    EXPECT_GT(rep.control_msgs, 0);
}

TEST(Run, EventTriggeredSendsFewerMessages)
{
    const auto& inst = manufactured_64x32();
    const auto async = run(inst, config(Policy::asynchronous));
    auto cfg = config(Policy::event_triggered);
    cfg.event.horizon = 200.0;
    cfg.event.decay = 0.8;
    const auto event = run(inst, cfg);
    ASSERT_TRUE(async.converged(1e-8)) << async.diagnostic;
    ASSERT_TRUE(event.converged(1e-8)) << event.diagnostic;
    EXPECT_LT(event.final_residual, 1e-8);
    EXPECT_LT(event.total_halo_msgs, async.total_halo_msgs);
}

TEST(Run, ChannelsCarryRingTopology)
{
    const auto rep = run(manufactured_instance(16, 8), config(Policy::asynchronous));
    ASSERT_EQ(rep.halo_messages.size(), 8u);
    for (const auto& c : rep.halo_messages) {
        const int expect = c.direction == "up" ? (c.sender + 3) % 4 : (c.sender + 1) % 4;
        EXPECT_EQ(c.receiver, expect);
    }
}

TEST(Run, FixedZeroChainHasNoWrapChannels)
{
    ProblemInstance inst;
    inst.nx = 16;
    inst.ny = 8;
    inst.dx = inst.dy = 1.0 / 16;
    inst.bc = BoundaryCondition::fixed_zero;
    inst.density.assign(inst.cells(), 1.0);
    oracle::Gen g(81);
    inst.rhs = g.vec(inst.cells(), -1.0, 1.0);
    for (auto p : {Policy::synchronous, Policy::asynchronous, Policy::event_triggered}) {
        const auto rep = run(inst, config(p));
        ASSERT_TRUE(rep.converged(1e-8)) << rep.diagnostic;
        EXPECT_EQ(rep.halo_messages.size(), 6u);
        EXPECT_LT(oracle::max_abs([&] {
                      auto d = direct_solve(inst);
                      for (std::size_t k = 0; k < d.size(); ++k) d[k] -= rep.solution[k];
                      return d;
                  }()),
                  1e-6);
    }
}

TEST(Run, RejectsUnevenDecomposition)
{
    auto cfg = config(Policy::asynchronous);
    cfg.n_pes = 3;
    EXPECT_THROW(run(manufactured_instance(16, 8), cfg), std::invalid_argument);
    cfg.n_pes = 4;
    cfg.omega = 2.0;
    EXPECT_THROW(run(manufactured_instance(16, 8), cfg), std::invalid_argument);
}

TEST(Run, StepLimitProducesDiagnostic)
{
    for (auto p : {Policy::asynchronous, Policy::event_triggered}) {
        auto cfg = config(p);
        cfg.step_limit = 200;
        const auto rep = run(manufactured_instance(32, 16), cfg);
        EXPECT_TRUE(rep.timed_out);
        EXPECT_FALSE(rep.converged(cfg.tol));
        EXPECT_NE(rep.diagnostic.find("step limit"), std::string::npos);
        EXPECT_NE(rep.diagnostic.find("pe 3"), std::string::npos);
    }
    auto cfg = config(Policy::synchronous);
    cfg.max_iterations = 10;
    const auto rep = run(manufactured_instance(32, 16), cfg);
    EXPECT_TRUE(rep.timed_out);
    EXPECT_FALSE(rep.diagnostic.empty());
}

TEST(Run, DivergenceIsReportedNotHidden)
{
    auto cfg = config(Policy::asynchronous);
    cfg.omega = 1.95;
    cfg.n_pes = 8;
    const auto rep = run(manufactured_instance(64, 32), cfg);
    // Strip-decomposed SOR at this omega blows up; the run must say so.
    EXPECT_FALSE(rep.converged(cfg.tol));
    EXPECT_TRUE(rep.timed_out);
    EXPECT_EQ(rep.diagnostic.rfind("diverged", 0), 0u) << rep.diagnostic;
}

TEST(Run, SlowPeFavoursAsynchrony)
{
    const auto inst = manufactured_instance(32, 16);
    auto cfg = config(Policy::synchronous);
    cfg.delays.compute_scale = {1.0, 5.0, 1.0, 1.0};
    const auto sync = run(inst, cfg);
    cfg.policy = Policy::asynchronous;
    const auto async = run(inst, cfg);
    ASSERT_TRUE(sync.converged(1e-8));
    ASSERT_TRUE(async.converged(1e-8));
    EXPECT_LT(*async.virtual_time, *sync.virtual_time);
}

TEST(Run, ThreadedBackendConverges)
{
    const auto inst = manufactured_instance(32, 16);
    for (auto p : {Policy::synchronous, Policy::asynchronous, Policy::event_triggered}) {
        auto cfg = config(p, Backend::threads);
        cfg.wall_limit_s = 120.0;
        const auto rep = run(inst, cfg);
        ASSERT_TRUE(rep.converged(1e-8)) << to_string(p) << ": " << rep.diagnostic;
        EXPECT_TRUE(rep.wall_time_ms.has_value());
        EXPECT_FALSE(rep.virtual_time.has_value());
        EXPECT_LT(max_diff_mean_free(rep.solution, *inst.reference), 1e-6);
    }
}

TEST(Run, ReportJsonShape)
{
    auto cfg = config(Policy::event_triggered);
    const auto rep = run(manufactured_instance(16, 8), cfg);
    const auto j = to_json(rep);
    for (const char* key : {"policy", "backend", "n_pes", "grid", "iterations", "halo_messages", "total_halo_msgs",
                            "control_msgs", "virtual_time", "wall_time_ms", "initial_residual", "final_residual",
                            "convergence_log", "solution", "config"})
        EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_TRUE(j["wall_time_ms"].is_null());
    EXPECT_EQ(j["policy"], "event");
    EXPECT_EQ(j["config"]["event"]["horizon"], cfg.event.horizon);
    EXPECT_FALSE(to_json(rep, false).contains("solution"));
}

TEST(RunnerProperty, AllPoliciesAgreeWithDirectSolve)
{
    // 100 x tol against the direct solution, on small instances of both kinds.
    std::vector<ProblemInstance> cases{manufactured_instance(32, 16), bubble_instance(64, 16, default_bubbles(64, 16, 10.0), 1.0, 4)};
    for (const auto& inst : cases) {
        const auto direct = direct_solve(inst);
        for (auto p : {Policy::synchronous, Policy::asynchronous, Policy::event_triggered}) {
            const auto rep = run(inst, config(p));
            ASSERT_TRUE(rep.converged(1e-8)) << to_string(p) << ": " << rep.diagnostic;
            EXPECT_LT(max_diff_mean_free(rep.solution, direct), 100 * 1e-8) << to_string(p);
        }
    }
}

TEST(RunnerProperty, VirtualRunsAreBitwiseReproducible)
{
    oracle::Gen g(82);
    const auto inst = manufactured_instance(32, 16);
    for (int trial = 0; trial < 4; ++trial) {
        auto cfg = config(static_cast<Policy>(g.integer(0, 2)));
        cfg.delays.seed = static_cast<std::uint64_t>(g.integer(1, 1 << 20));
        cfg.n_pes = g.coin() ? 2 : 4;
        const auto a = run(inst, cfg);
        const auto b = run(inst, cfg);
        EXPECT_TRUE(a == b);
        EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    }
}
