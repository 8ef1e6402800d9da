#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace eventpde {

// Local convergence with hysteresis: the relative residual must stay below
// `tol` for `window` consecutive sweeps.
struct LocalConvState {
    long streak = 0;
    long window = 50;
    bool converged = false;
    double tol = 1e-8;
};

// Returns true on the sweep at which the PE becomes locally converged.
inline bool update_local(LocalConvState& s, double relative_residual)
{
    if (relative_residual < 0.0) throw std::invalid_argument("update_local: negative residual");
    if (relative_residual < s.tol) ++s.streak;
    else s.streak = 0;
    if (!s.converged && s.streak >= s.window) {
        s.converged = true;
        return true;
    }
    return false;
}

struct FreshArrival {
    double norm = 0.0;            // L1 norm of the new boundary vector
    double last_used_norm = 0.0;  // L1 norm of the ghost row it replaces
};

// A converged PE restarts when a fresh neighbour message moved the boundary
// norm by at least `restart_threshold`. With the default threshold of 0 any
// fresh arrival counts. Returns true if the state was nullified.
inline bool nullify_on_new_values(LocalConvState& s, std::span<const FreshArrival> fresh, double restart_threshold)
{
    if (!s.converged) return false;
    for (const auto& f : fresh) {
        if (std::abs(f.norm - f.last_used_norm) >= restart_threshold) {
            s.converged = false;
            s.streak = 0;
            return true;
        }
    }
    return false;
}

struct ConvergenceReport {
    int pe = 0;
    bool converged = false;
};

struct MasterState {
    std::vector<bool> flags;
    bool global_converged = false;

    explicit MasterState(std::size_t n_pes = 0) : flags(n_pes, false) {}
};

// Applies one report. Returns true exactly once: when every flag (master's
// included) is set for the first time.
inline bool master_step(MasterState& m, const ConvergenceReport& r)
{
    if (r.pe < 0 || static_cast<std::size_t>(r.pe) >= m.flags.size())
        throw std::out_of_range("master_step: report from unknown PE " + std::to_string(r.pe));
    m.flags[static_cast<std::size_t>(r.pe)] = r.converged;
    if (m.global_converged) return false;
    for (bool f : m.flags)
        if (!f) return false;
    m.global_converged = true;
    return true;
}

// resumed: the post-termination verification failed and the PE restarted.
enum class ConvEventKind { converged, nullified, global, terminated, resumed };

inline std::string_view to_string(ConvEventKind k)
{
    switch (k) {
    case ConvEventKind::converged: return "converged";
    case ConvEventKind::nullified: return "nullified";
    case ConvEventKind::global: return "global";
    case ConvEventKind::terminated: return "terminated";
    case ConvEventKind::resumed: return "resumed";
    }
    return "?";
}

struct ConvEvent {
    int pe = 0;
    long iter = 0;
    ConvEventKind kind = ConvEventKind::converged;
    double time = 0.0;  // virtual time, or milliseconds since start in the threaded backend

    bool operator==(const ConvEvent&) const = default;

    nlohmann::json to_json() const { return {{"pe", pe}, {"iter", iter}, {"event", to_string(kind)}, {"t", time}}; }
};

inline std::string convergence_log_json_lines(std::span<const ConvEvent> events)
{
    std::string out;
    for (const auto& e : events) {
        out += e.to_json().dump();
        out += '\n';
    }
    return out;
}

}  // namespace eventpde
