#pragma once

#include "eventpde/comm.hpp"
#include "eventpde/convergence.hpp"
#include "eventpde/event_policy.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace eventpde {

struct ChannelCount {
    int sender = 0;
    int receiver = 0;
    std::string direction;  // "up" sends the top row, "down" the bottom row
    long messages = 0;

    bool operator==(const ChannelCount&) const = default;
};

struct ResidualSample {
    int pe = -1;  // -1: global residual (synchronous policy)
    long iter = 0;
    double relative_residual = 0.0;

    bool operator==(const ResidualSample&) const = default;
};

struct RunReport {
    std::string policy;
    std::string backend;
    int n_pes = 0;
    int nx = 0;
    int ny = 0;

    std::vector<long> iterations;  // sweeps per PE
    std::vector<ChannelCount> halo_messages;
    long total_halo_msgs = 0;
    long control_msgs = 0;  // convergence reports, neighbour flags, global broadcast

    std::optional<double> virtual_time;
    std::optional<double> wall_time_ms;

    double residual_scale = 0.0;         // max |L(0) - b| = max |b|
    double initial_residual = 0.0;       // relative, at p = 0
    double final_residual = 0.0;         // relative, from the assembled final field
    bool terminated = false;             // global convergence was detected
    bool timed_out = false;
    int verification_rounds = 0;  // failed post-termination checks that restarted the PEs
    std::string diagnostic;

    std::vector<ResidualSample> residual_trace;
    std::vector<ConvEvent> convergence_log;
    std::vector<ThresholdTraceRow> threshold_trace;
    std::vector<double> solution;
    nlohmann::json config;

    bool converged(double tol) const { return terminated && !timed_out && final_residual < tol; }

    bool operator==(const RunReport&) const = default;
};

inline nlohmann::json to_json(const RunReport& r, bool with_solution = true)
{
    nlohmann::json j;
    j["policy"] = r.policy;
    j["backend"] = r.backend;
    j["n_pes"] = r.n_pes;
    j["grid"] = {r.nx, r.ny};
    j["iterations"] = r.iterations;
    nlohmann::json ch = nlohmann::json::array();
    for (const auto& c : r.halo_messages)
        ch.push_back({{"sender", c.sender}, {"receiver", c.receiver}, {"direction", c.direction}, {"messages", c.messages}});
    j["halo_messages"] = ch;
    j["total_halo_msgs"] = r.total_halo_msgs;
    j["control_msgs"] = r.control_msgs;
    j["virtual_time"] = r.virtual_time ? nlohmann::json(*r.virtual_time) : nlohmann::json(nullptr);
    j["wall_time_ms"] = r.wall_time_ms ? nlohmann::json(*r.wall_time_ms) : nlohmann::json(nullptr);
    j["residual_scale"] = r.residual_scale;
    j["initial_residual"] = r.initial_residual;
    j["final_residual"] = r.final_residual;
    j["terminated"] = r.terminated;
    j["timed_out"] = r.timed_out;
    j["verification_rounds"] = r.verification_rounds;
    if (!r.diagnostic.empty()) j["diagnostic"] = r.diagnostic;
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& s : r.residual_trace) trace.push_back({s.pe, s.iter, s.relative_residual});
    j["residual_trace"] = trace;  // [pe, iteration, relative residual]
    nlohmann::json conv = nlohmann::json::array();
    for (const auto& e : r.convergence_log) conv.push_back(e.to_json());
    j["convergence_log"] = conv;
    if (with_solution) j["solution"] = r.solution;
    j["config"] = r.config;
    return j;
}

}  // namespace eventpde
