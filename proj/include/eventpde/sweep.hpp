#pragma once

// Horizon x decay grid for the event-triggered policy, normalised against the
// asynchronous policy run with the same delay seed (the "decay 0" rows).

#include "eventpde/runner.hpp"

#include <cstdint>
#include <cstdio>
#include <exception>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace eventpde {

struct SweepRow {
    double h = 0.0;
    double d = 0.0;  // 0: asynchronous baseline
    std::uint64_t seed = 0;
    std::optional<double> virtual_time;
    std::optional<double> wall_time_ms;
    long total_halo_msgs = 0;
    double msg_percent = 0.0;
    double final_residual = 0.0;
    bool ok = true;
    std::string error;

    bool operator==(const SweepRow&) const = default;
};

inline constexpr const char* kSweepCsvHeader =
    "h,d,seed,virtual_time,wall_time_ms,total_halo_msgs,msg_percent,final_residual";

// Rows are grouped by seed, then horizon, with the baseline first in each group.
inline std::vector<SweepRow> sweep_experiment(const ProblemInstance& inst, std::span<const double> h_list,
                                              std::span<const double> d_list, int repeats, const RunConfig& base)
{
    if (h_list.empty() || d_list.empty()) throw std::invalid_argument("sweep_experiment: empty horizon or decay list");
    if (repeats < 1) throw std::invalid_argument("sweep_experiment: repeats must be >= 1");

    std::vector<SweepRow> rows;
    for (int r = 0; r < repeats; ++r) {
        const std::uint64_t seed = base.delays.seed + static_cast<std::uint64_t>(r);

        RunConfig async_cfg = base;
        async_cfg.policy = Policy::asynchronous;
        async_cfg.delays.seed = seed;
        std::optional<RunReport> baseline;
        std::string baseline_error;
        try {
            baseline = run(inst, async_cfg);
            if (!baseline->converged(base.tol)) baseline_error = "baseline did not converge";
        } catch (const std::exception& e) {
            baseline_error = e.what();
        }

        for (double h : h_list) {
            SweepRow b;
            b.h = h;
            b.seed = seed;
            if (baseline) {
                b.virtual_time = baseline->virtual_time;
                b.wall_time_ms = baseline->wall_time_ms;
                b.total_halo_msgs = baseline->total_halo_msgs;
                b.msg_percent = 100.0;
                b.final_residual = baseline->final_residual;
            }
            b.ok = baseline_error.empty();
            b.error = baseline_error;
            rows.push_back(b);

            for (double d : d_list) {
                if (d == 0.0) continue;
                SweepRow row;
                row.h = h;
                row.d = d;
                row.seed = seed;
                try {
                    RunConfig cfg = base;
                    cfg.policy = Policy::event_triggered;
                    cfg.delays.seed = seed;
                    cfg.event.horizon = h;
                    cfg.event.decay = d;
                    const auto rep = run(inst, cfg);
                    row.virtual_time = rep.virtual_time;
                    row.wall_time_ms = rep.wall_time_ms;
                    row.total_halo_msgs = rep.total_halo_msgs;
                    row.final_residual = rep.final_residual;
                    if (baseline && baseline->total_halo_msgs > 0)
                        row.msg_percent = 100.0 * static_cast<double>(rep.total_halo_msgs) /
                                          static_cast<double>(baseline->total_halo_msgs);
                    if (!rep.converged(base.tol)) {
                        row.ok = false;
                        row.error = rep.timed_out ? "timed out" : "final residual above tolerance";
                    }
                } catch (const std::exception& e) {
                    row.ok = false;
                    row.error = e.what();
                }
                rows.push_back(row);
            }
        }
    }
    return rows;
}

inline std::string sweep_csv(std::span<const SweepRow> rows)
{
    std::string out = kSweepCsvHeader;
    out += '\n';
    char buf[512];
    auto opt = [](const std::optional<double>& v) {
        if (!v) return std::string();
        char b[64];
        std::snprintf(b, sizeof b, "%.17g", *v);
        return std::string(b);
    };
    for (const auto& r : rows) {
        if (r.ok) {
            std::snprintf(buf, sizeof buf, "%g,%g,%llu,%s,%s,%ld,%.17g,%.17g\n", r.h, r.d,
                          static_cast<unsigned long long>(r.seed), opt(r.virtual_time).c_str(),
                          opt(r.wall_time_ms).c_str(), r.total_halo_msgs, r.msg_percent, r.final_residual);
        } else {
            // Failed cells keep their coordinates; the metrics stay empty.
            std::snprintf(buf, sizeof buf, "%g,%g,%llu,,,,,\n", r.h, r.d, static_cast<unsigned long long>(r.seed));
        }
        out += buf;
    }
    return out;
}

// Mean message percentage per (h, d) over all successful seeds.
inline std::map<std::pair<double, double>, double> mean_msg_percent(std::span<const SweepRow> rows)
{
    std::map<std::pair<double, double>, std::pair<double, int>> acc;
    for (const auto& r : rows) {
        if (!r.ok) continue;
        auto& a = acc[{r.h, r.d}];
        a.first += r.msg_percent;
        ++a.second;
    }
    std::map<std::pair<double, double>, double> out;
    for (const auto& [k, v] : acc) out[k] = v.first / v.second;
    return out;
}

}  // namespace eventpde
