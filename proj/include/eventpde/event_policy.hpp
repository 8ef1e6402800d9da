#pragma once

// Event-triggered halo exchange.
//
// Sender side: a boundary is sent when the L1 norm of the boundary vector has
// moved by at least the current threshold since the last send. The threshold
// is rebuilt at every send as tau* = (average slope of the norm over the recent
// send history) * horizon and then shrinks geometrically, tau = tau* * d^m,
// for every iteration m that passes without a send. The first `warmup_iters`
// iterations send unconditionally.
//
// Receiver side: missing updates from a neighbour that is still iterating are
// replaced by a linear extrapolation of the last two received vectors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace eventpde {

struct EventParams {
    double horizon = 200.0;
    double decay = 0.8;
    long warmup_iters = 200;
    std::size_t history = 20;
    // Disables the decay term (threshold stays at tau*). Only useful to show
    // why the decay is needed.
    bool decay_enabled = true;
    double initial_tau = 0.0;
    // Off: receivers keep the last received row instead of extrapolating.
    bool extrapolate = true;
    double extrapolation_clamp = 10.0;  // in units of the last received increment

    void validate() const
    {
        if (!(horizon >= 0.0)) throw std::invalid_argument("horizon must be >= 0");
        if (!(decay > 0.0 && decay < 1.0)) throw std::invalid_argument("decay must lie in (0, 1)");
        if (warmup_iters < 0) throw std::invalid_argument("warm-up must be >= 0");
        if (history < 2) throw std::invalid_argument("event history must hold at least 2 entries");
    }
};

struct ThresholdState {
    EventParams params;
    double last_sent_norm = 0.0;
    std::deque<std::pair<long, double>> history;  // (iteration, norm) of past sends
    double tau_star = 0.0;
    long m = 0;  // iterations since the last send

    ThresholdState() = default;
    explicit ThresholdState(EventParams p) : params(p), tau_star(p.initial_tau) { params.validate(); }

    double threshold() const { return params.decay_enabled ? tau_star * std::pow(params.decay, static_cast<double>(m)) : tau_star; }
};

// Decides whether to send at `current_iter`. A negative decision advances the
// decay counter; a positive one must be followed by on_send().
inline bool should_send(ThresholdState& s, double current_norm, long current_iter)
{
    if (current_iter < s.params.warmup_iters) return true;
    if (std::abs(current_norm - s.last_sent_norm) >= s.threshold()) return true;
    ++s.m;
    return false;
}

inline double average_slope(const std::deque<std::pair<long, double>>& h)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 1; k < h.size(); ++k) {
        const long di = h[k].first - h[k - 1].first;
        if (di <= 0) continue;
        sum += std::abs(h[k].second - h[k - 1].second) / static_cast<double>(di);
        ++n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

inline void on_send(ThresholdState& s, double norm, long iter)
{
    if (!s.history.empty() && iter <= s.history.back().first)
        throw std::logic_error("on_send: event history must be strictly increasing in iteration");
    s.history.emplace_back(iter, norm);
    while (s.history.size() > s.params.history) s.history.pop_front();
    s.last_sent_norm = norm;
    s.tau_star = s.history.size() < 2 ? s.params.initial_tau : average_slope(s.history) * s.params.horizon;
    s.m = 0;
}

struct GhostHistory {
    struct Entry {
        std::vector<double> values;
        long iter = 0;
    };
    std::vector<Entry> entries;  // at most three, oldest first
    bool neighbor_converged = false;

    bool empty() const { return entries.empty(); }

    // A second receipt at the same receiver iteration replaces the newer entry.
    void record(std::span<const double> values, long iter, bool sender_converged)
    {
        neighbor_converged = sender_converged;
        Entry e{{values.begin(), values.end()}, iter};
        if (!entries.empty() && entries.back().iter >= iter) {
            entries.back() = std::move(e);
            return;
        }
        entries.push_back(std::move(e));
        if (entries.size() > 3) entries.erase(entries.begin());
    }
};

// Linear extrapolation of the ghost row to `current_iter` from the last two
// receipts. Guards:
//  - an element whose last two received increments disagree in sign keeps its
//    last value (a sawtooth must not be extrapolated, it feeds back and grows);
//  - if the row strays from the last receipt by more than `clamp` times the
//    last received increment, the whole row falls back to the last receipt.
inline std::vector<double> extrapolate_ghost(const GhostHistory& h, long current_iter, double clamp = 10.0)
{
    if (h.neighbor_converged)
        throw std::logic_error("extrapolate_ghost: neighbour has converged; use its last values verbatim");
    if (h.entries.empty()) throw std::logic_error("extrapolate_ghost: no received values");
    const std::size_t n = h.entries.size();
    const auto& last = h.entries[n - 1];
    if (n == 1) return last.values;
    const auto& prev = h.entries[n - 2];
    const GhostHistory::Entry* older = n == 3 ? &h.entries[0] : nullptr;
    const double ratio = static_cast<double>(current_iter - last.iter) / static_cast<double>(last.iter - prev.iter);
    std::vector<double> out(last.values.size());
    double deviation = 0.0;
    double increment = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double step = last.values[k] - prev.values[k];
        increment = std::max(increment, std::abs(step));
        if (older && step * (prev.values[k] - older->values[k]) <= 0.0) {
            out[k] = last.values[k];
            continue;
        }
        out[k] = last.values[k] + step * ratio;
        deviation = std::max(deviation, std::abs(out[k] - last.values[k]));
    }
    if (deviation > clamp * increment) return last.values;
    return out;
}

// One row per send decision, for threshold plots.
struct ThresholdTraceRow {
    int pe = 0;
    int direction = 0;  // 0 = up (top boundary), 1 = down (bottom boundary)
    long iter = 0;
    double norm = 0.0;
    double threshold = 0.0;
    bool sent = false;

    bool operator==(const ThresholdTraceRow&) const = default;
};

inline std::string threshold_trace_csv(std::span<const ThresholdTraceRow> rows)
{
    std::string out = "pe,direction,iteration,norm,threshold,sent\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%s,%ld,%.17g,%.17g,%d\n", r.pe, r.direction == 0 ? "up" : "down", r.iter,
                      r.norm, r.threshold, r.sent ? 1 : 0);
        out += buf;
    }
    return out;
}

}  // namespace eventpde
