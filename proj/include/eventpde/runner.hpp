#pragma once

// Domain-decomposed SOR solver under three communication policies:
//
//   synchronous      lockstep sweeps, halo exchange and a global residual
//                    reduction every iteration.
//   asynchronous     every PE sweeps at its own pace and puts its boundary
//                    rows into its neighbours' windows after every sweep;
//                    termination goes through a master PE.
//   event_triggered  as asynchronous, but a boundary row is only put when its
//                    L1 norm crossed the adaptive threshold; receivers
//                    extrapolate missing rows, and PEs tell neighbours when
//                    they converge.
//
// Each policy runs on a deterministic virtual-time backend or on real threads.

#include "eventpde/comm.hpp"
#include "eventpde/convergence.hpp"
#include "eventpde/event_policy.hpp"
#include "eventpde/grid.hpp"
#include "eventpde/report.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <barrier>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace eventpde {

enum class Policy { synchronous, asynchronous, event_triggered };
enum class Backend { virtual_time, threads };

// How a locally converged PE reacts to fresh neighbour values.
//   any_fresh         restart whenever nullify_on_new_values() fires.
//   residual_recheck  additionally require the local residual, evaluated with
//                     the new ghost rows, to be back at or above tolerance.
enum class RestartRule { any_fresh, residual_recheck };

inline std::string_view to_string(Policy p)
{
    switch (p) {
    case Policy::synchronous: return "sync";
    case Policy::asynchronous: return "async";
    case Policy::event_triggered: return "event";
    }
    return "?";
}

inline Policy parse_policy(std::string_view s)
{
    if (s == "sync" || s == "synchronous") return Policy::synchronous;
    if (s == "async" || s == "asynchronous") return Policy::asynchronous;
    if (s == "event" || s == "event_triggered" || s == "event-triggered") return Policy::event_triggered;
    throw std::invalid_argument("unknown policy '" + std::string(s) + "'");
}

inline std::string_view to_string(Backend b) { return b == Backend::virtual_time ? "virtual" : "threads"; }

inline Backend parse_backend(std::string_view s)
{
    if (s == "virtual") return Backend::virtual_time;
    if (s == "threads" || s == "threaded") return Backend::threads;
    throw std::invalid_argument("unknown backend '" + std::string(s) + "'");
}

inline std::string_view to_string(RestartRule r) { return r == RestartRule::any_fresh ? "any-fresh" : "residual-recheck"; }

inline RestartRule parse_restart_rule(std::string_view s)
{
    if (s == "any-fresh" || s == "any_fresh") return RestartRule::any_fresh;
    if (s == "residual-recheck" || s == "residual_recheck") return RestartRule::residual_recheck;
    throw std::invalid_argument("unknown restart rule '" + std::string(s) + "'");
}

struct RunConfig {
    int n_pes = 4;
    Policy policy = Policy::asynchronous;
    Backend backend = Backend::virtual_time;
    double omega = 1.5;
    double tol = 1e-8;
    long window = 50;
    EventParams event;
    double restart_threshold = 0.0;
    RestartRule restart_rule = RestartRule::residual_recheck;
    DelayModel delays;
    std::uint64_t step_limit = 100'000'000;  // virtual scheduler steps
    long max_iterations = 2'000'000;         // sweeps per PE
    double wall_limit_s = 300.0;             // threaded backend
    long residual_trace_stride = 50;
    bool record_threshold_trace = false;
    CommLog* comm_log = nullptr;  // virtual backend only

    void validate() const
    {
        if (n_pes < 1) throw std::invalid_argument("need at least one PE");
        if (!(omega > 0.0 && omega < 2.0)) throw std::invalid_argument("omega must lie in (0, 2)");
        if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
        if (window < 1) throw std::invalid_argument("convergence window must be >= 1");
        if (!(restart_threshold >= 0.0)) throw std::invalid_argument("restart threshold must be >= 0");
        if (policy == Policy::event_triggered) event.validate();
        delays.validate();
    }

    nlohmann::json to_json() const
    {
        nlohmann::json j{{"n_pes", n_pes},
                         {"policy", to_string(policy)},
                         {"backend", to_string(backend)},
                         {"omega", omega},
                         {"tol", tol},
                         {"window", window},
                         {"restart_threshold", restart_threshold},
                         {"restart_rule", to_string(restart_rule)},
                         {"delays", delays.to_json()},
                         {"step_limit", step_limit},
                         {"max_iterations", max_iterations}};
        if (policy == Policy::event_triggered)
            j["event"] = {{"horizon", event.horizon},
                          {"decay", event.decay},
                          {"warmup", event.warmup_iters},
                          {"history", event.history},
                          {"decay_enabled", event.decay_enabled},
                          {"extrapolate", event.extrapolate}};
        return j;
    }
};

namespace detail {

// Ring (periodic) or chain (fixed-zero) of strips along the first dimension.
struct Topology {
    int n = 1;
    bool periodic = true;

    bool has_neighbor(int pe, int dir) const { return periodic || (dir == 0 ? pe > 0 : pe + 1 < n); }
    int neighbor(int pe, int dir) const { return dir == 0 ? (pe - 1 + n) % n : (pe + 1) % n; }
    // Outgoing halo channel: dir 0 carries the top row up, dir 1 the bottom row down.
    static int out_channel(int pe, int dir) { return 2 * pe + dir; }
    // The top ghost is fed by the upper neighbour's downward channel and vice versa.
    int in_channel(int pe, Side side) const
    {
        return side == Side::top ? out_channel(neighbor(pe, 0), 1) : out_channel(neighbor(pe, 1), 0);
    }
};

inline std::vector<Subdomain> decompose(const ProblemInstance& inst, const FaceCoefficients& coeff, int n_pes)
{
    if (n_pes < 1 || inst.nx % n_pes != 0) {
        std::ostringstream os;
        os << "nx = " << inst.nx << " is not divisible by " << n_pes << " PEs";
        throw std::invalid_argument(os.str());
    }
    const int rows = inst.nx / n_pes;
    std::vector<Subdomain> subs;
    subs.reserve(static_cast<std::size_t>(n_pes));
    for (int pe = 0; pe < n_pes; ++pe) subs.emplace_back(inst, coeff, pe, pe * rows, (pe + 1) * rows);
    return subs;
}

inline std::vector<double> assemble(const std::vector<Subdomain>& subs)
{
    std::vector<double> p;
    for (const auto& s : subs) {
        auto o = s.owned();
        p.insert(p.end(), o.begin(), o.end());
    }
    return p;
}

inline Side side_of(int dir) { return dir == 0 ? Side::top : Side::bottom; }

inline void fill_common(RunReport& r, const ProblemInstance& inst, const RunConfig& cfg, double scale)
{
    r.policy = std::string(to_string(cfg.policy));
    r.backend = std::string(to_string(cfg.backend));
    r.n_pes = cfg.n_pes;
    r.nx = inst.nx;
    r.ny = inst.ny;
    r.residual_scale = scale;
    r.initial_residual = scale > 0.0 ? 1.0 : 0.0;
    r.config = cfg.to_json();
}

inline void fill_channels(RunReport& r, const Topology& topo, const std::vector<std::array<long, 2>>& sent)
{
    for (int pe = 0; pe < topo.n; ++pe)
        for (int dir = 0; dir < 2; ++dir) {
            if (!topo.has_neighbor(pe, dir)) continue;
            const long m = sent[static_cast<std::size_t>(pe)][static_cast<std::size_t>(dir)];
            r.halo_messages.push_back({pe, topo.neighbor(pe, dir), dir == 0 ? "up" : "down", m});
            r.total_halo_msgs += m;
        }
}

// Startup reduction: global max of the p = 0 residual, i.e. max |b|.
inline double residual_scale(const std::vector<Subdomain>& subs)
{
    double s = 0.0;
    for (const auto& sd : subs) s = std::max(s, local_residual(sd));
    return s;
}

inline double safe_scale(double s) { return s > 0.0 ? s : 1.0; }

// Relative residual beyond which a run is declared divergent.
inline constexpr double kDivergenceLimit = 1e8;

// Post-termination verification reductions allowed before giving up.
inline constexpr int kMaxVerificationRounds = 20;

// ---------------------------------------------------------------------------
// Transports for the asynchronous worker.

struct VirtualTransport {
    VirtualWindow<HaloMessage>* halo = nullptr;
    VirtualWindow<ControlMessage>* reports = nullptr;
    VirtualWindow<ControlMessage>* global = nullptr;
    DelaySource* delays = nullptr;
    int n_pes = 1;
    VirtualTime now = 0.0;

    void put_halo(int ch, HaloMessage m) { halo->put(ch, std::move(m), now, delays->latency(ch)); }
    ReadResult<HaloMessage> read_halo(int ch) { return halo->read_fresh(ch, now); }
    void put_report(int pe, ControlMessage m) { reports->put(pe, m, now, delays->latency(2 * n_pes + pe)); }
    ReadResult<ControlMessage> read_report(int pe) { return reports->read_fresh(pe, now); }
    void put_global(int pe, ControlMessage m) { global->put(pe, m, now, delays->latency(3 * n_pes + pe)); }
    ReadResult<ControlMessage> read_global(int pe) { return global->read_fresh(pe, now); }
    bool* abort = nullptr;

    double clock() const { return now; }
    bool aborted() const { return abort && *abort; }
    void raise_abort() { if (abort) *abort = true; }
};

struct ThreadTransport {
    ThreadedWindow<HaloMessage>* halo = nullptr;
    ThreadedWindow<ControlMessage>* reports = nullptr;
    ThreadedWindow<ControlMessage>* global = nullptr;
    std::chrono::steady_clock::time_point start;
    std::atomic<bool>* abort = nullptr;

    void put_halo(int ch, HaloMessage m) { halo->put(ch, m); }
    ReadResult<HaloMessage> read_halo(int ch) { return halo->read_fresh(ch); }
    void put_report(int pe, ControlMessage m) { reports->put(pe, m); }
    ReadResult<ControlMessage> read_report(int pe) { return reports->read_fresh(pe); }
    void put_global(int pe, ControlMessage m) { global->put(pe, m); }
    ReadResult<ControlMessage> read_global(int pe) { return global->read_fresh(pe); }
    double clock() const
    {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    bool aborted() const { return abort->load(std::memory_order_relaxed); }
    void raise_abort() { abort->store(true); }
};

// One PE of the asynchronous / event-triggered solver. step() runs one pass of
// the outer do-while loop: a sweep while not locally converged, otherwise an
// idle pass that watches for new neighbour values and, on the master, for
// global convergence.
template <class Transport>
class AsyncWorker {
public:
    AsyncWorker(Subdomain sub, const RunConfig& cfg, Topology topo, double scale, Transport transport)
        : cfg_(&cfg), topo_(topo), sub_(std::move(sub)), transport_(transport), scale_(scale)
    {
        pe_ = sub_.owner();
        conv_.window = cfg.window;
        conv_.tol = cfg.tol;
        if (cfg.policy == Policy::event_triggered) thr_ = {ThresholdState(cfg.event), ThresholdState(cfg.event)};
        if (pe_ == 0) master_.emplace(static_cast<std::size_t>(topo.n));
    }

    StepKind step(VirtualTime now)
    {
        transport_.now_hook(now);
        if (finished_) return StepKind::done;
        if (transport_.aborted() || iter_ >= cfg_->max_iterations) {
            aborted_ = true;
            finished_ = true;
            return StepKind::done;
        }
        if (pe_ != 0) {
            auto g = transport_.read_global(pe_);
            if (g.fresh && g.message.converged && g.message.round == round_) {
                log(ConvEventKind::terminated);
                finished_ = true;
                return StepKind::done;
            }
        }
        return conv_.converged ? idle() : sweep();
    }

    // Called on every PE after a failed post-termination verification: drop
    // local convergence, republish both boundary rows and start a new round.
    void resume()
    {
        finished_ = false;
        ++round_;
        conv_.converged = false;
        conv_.streak = 0;
        if (master_) *master_ = MasterState(static_cast<std::size_t>(topo_.n));
        log(ConvEventKind::resumed);
        for (int dir = 0; dir < 2; ++dir) {
            if (!topo_.has_neighbor(pe_, dir)) continue;
            transport_.put_halo(Topology::out_channel(pe_, dir), {sub_.boundary(side_of(dir)).values, iter_, false});
            ++halo_sent_[static_cast<std::size_t>(dir)];
        }
    }

    const Subdomain& subdomain() const { return sub_; }
    long iterations() const { return iter_; }
    const std::array<long, 2>& halo_sent() const { return halo_sent_; }
    long control_sent() const { return control_sent_; }
    bool aborted() const { return aborted_; }
    bool diverged() const { return diverged_; }
    bool finished() const { return finished_; }
    const std::vector<ConvEvent>& conv_log() const { return conv_log_; }
    const std::vector<ThresholdTraceRow>& threshold_trace() const { return trace_; }
    const std::vector<ResidualSample>& residual_trace() const { return residuals_; }

    std::string describe() const
    {
        std::ostringstream os;
        os << "pe " << pe_ << ": iter=" << iter_ << " converged=" << conv_.converged << " streak=" << conv_.streak
           << " last_rr=" << last_rr_ << (diverged_ ? " DIVERGED" : "") << " sent=[" << halo_sent_[0] << "," << halo_sent_[1] << "]"
           << " nbr_converged=[" << ghosts_[0].neighbor_converged << "," << ghosts_[1].neighbor_converged << "]";
        if (master_) {
            os << " master_flags=";
            for (bool f : master_->flags) os << (f ? '1' : '0');
        }
        return os.str();
    }

private:
    bool event_policy() const { return cfg_->policy == Policy::event_triggered; }

    StepKind sweep()
    {
        const auto bv = sor_sweep(sub_, cfg_->omega);
        const long it = iter_++;

        for (int dir = 0; dir < 2; ++dir) {
            if (!topo_.has_neighbor(pe_, dir)) continue;
            const auto& b = dir == 0 ? bv.top : bv.bottom;
            bool send = true;
            if (event_policy()) {
                auto& t = thr_[static_cast<std::size_t>(dir)];
                const double norm = l1_norm(b);
                const double threshold = it < t.params.warmup_iters ? 0.0 : t.threshold();
                send = should_send(t, norm, it);
                if (send) on_send(t, norm, it);
                if (cfg_->record_threshold_trace) trace_.push_back({pe_, dir, it, norm, threshold, send});
            }
            if (send) {
                transport_.put_halo(Topology::out_channel(pe_, dir), {b.values, iter_, false});
                ++halo_sent_[static_cast<std::size_t>(dir)];
            }
        }

        for (int k = 0; k < 2; ++k) {
            const Side side = side_of(k);
            if (!topo_.has_neighbor(pe_, k)) continue;
            auto r = transport_.read_halo(topo_.in_channel(pe_, side));
            auto& hist = ghosts_[static_cast<std::size_t>(k)];
            if (r.fresh) {
                sub_.set_ghost(side, r.message.values);
                hist.record(r.message.values, iter_, r.message.sender_converged);
            } else if (event_policy() && cfg_->event.extrapolate && !hist.neighbor_converged && !hist.empty()) {
                sub_.set_ghost(side, extrapolate_ghost(hist, iter_, cfg_->event.extrapolation_clamp));
            }
        }

        last_rr_ = local_residual(sub_) / scale_;
        if (!(last_rr_ < kDivergenceLimit)) {
            diverged_ = true;
            transport_.raise_abort();
            aborted_ = true;
            finished_ = true;
            return StepKind::done;
        }
        if (cfg_->residual_trace_stride > 0 && iter_ % cfg_->residual_trace_stride == 0)
            residuals_.push_back({pe_, iter_, last_rr_});
        if (update_local(conv_, last_rr_)) {
            log(ConvEventKind::converged);
            if (event_policy()) {
                // Final rows plus the converged flag, so neighbours stop extrapolating.
                for (int dir = 0; dir < 2; ++dir) {
                    if (!topo_.has_neighbor(pe_, dir)) continue;
                    transport_.put_halo(Topology::out_channel(pe_, dir), {sub_.boundary(side_of(dir)).values, iter_, true});
                    ++control_sent_;
                }
            }
            if (pe_ != 0) report(true);
        }
        return StepKind::sweep;
    }

    StepKind idle()
    {
        std::vector<FreshArrival> arrivals;
        for (int k = 0; k < 2; ++k) {
            const Side side = side_of(k);
            if (!topo_.has_neighbor(pe_, k)) continue;
            auto r = transport_.read_halo(topo_.in_channel(pe_, side));
            if (!r.fresh) continue;
            arrivals.push_back({l1_norm(r.message.values), l1_norm(sub_.ghost(side))});
            sub_.set_ghost(side, r.message.values);
            ghosts_[static_cast<std::size_t>(k)].record(r.message.values, iter_, r.message.sender_converged);
        }
        if (!arrivals.empty()) {
            LocalConvState probe = conv_;
            bool nullify = nullify_on_new_values(probe, arrivals, cfg_->restart_threshold);
            if (nullify && cfg_->restart_rule == RestartRule::residual_recheck) {
                last_rr_ = local_residual(sub_) / scale_;
                nullify = last_rr_ >= cfg_->tol;
            }
            if (nullify) {
                conv_ = probe;
                log(ConvEventKind::nullified);
                if (pe_ == 0) master_step(*master_, {0, false});
                else report(false);
                return StepKind::idle;
            }
        }

        if (pe_ == 0) {
            bool broadcast = master_step(*master_, {0, true});
            for (int other = 1; other < topo_.n; ++other) {
                auto r = transport_.read_report(other);
                if (r.fresh && r.message.round == round_)
                    broadcast = master_step(*master_, {other, r.message.converged}) || broadcast;
            }
            if (broadcast) {
                log(ConvEventKind::global);
                for (int other = 1; other < topo_.n; ++other) {
                    transport_.put_global(other, {true, iter_, round_});
                    ++control_sent_;
                }
                log(ConvEventKind::terminated);
                finished_ = true;
                return StepKind::done;
            }
        }
        return StepKind::idle;
    }

    void report(bool converged)
    {
        transport_.put_report(pe_, {converged, iter_, round_});
        ++control_sent_;
    }

    void log(ConvEventKind k) { conv_log_.push_back({pe_, iter_, k, transport_.clock()}); }

    const RunConfig* cfg_;
    Topology topo_;
    Subdomain sub_;
    Transport transport_;
    double scale_;
    int pe_ = 0;
    long iter_ = 0;
    int round_ = 0;
    LocalConvState conv_;
    std::array<ThresholdState, 2> thr_{};
    std::array<GhostHistory, 2> ghosts_{};
    std::optional<MasterState> master_;
    std::array<long, 2> halo_sent_{0, 0};
    long control_sent_ = 0;
    double last_rr_ = 1.0;
    bool finished_ = false;
    bool aborted_ = false;
    bool diverged_ = false;
    std::vector<ConvEvent> conv_log_;
    std::vector<ThresholdTraceRow> trace_;
    std::vector<ResidualSample> residuals_;
};

// Lets AsyncWorker set the virtual clock without knowing the transport type.
struct VirtualTransportHooked : VirtualTransport {
    void now_hook(VirtualTime t) { now = t; }
};
struct ThreadTransportHooked : ThreadTransport {
    void now_hook(VirtualTime) {}
};

template <class Worker>
void collect_async(RunReport& report, std::vector<Worker>& workers, const Topology& topo)
{
    std::vector<std::array<long, 2>> sent;
    for (auto& w : workers) {
        report.iterations.push_back(w.iterations());
        sent.push_back(w.halo_sent());
        report.control_msgs += w.control_sent();
        const auto& c = w.conv_log();
        report.convergence_log.insert(report.convergence_log.end(), c.begin(), c.end());
        const auto& t = w.threshold_trace();
        report.threshold_trace.insert(report.threshold_trace.end(), t.begin(), t.end());
        const auto& r = w.residual_trace();
        report.residual_trace.insert(report.residual_trace.end(), r.begin(), r.end());
    }
    std::stable_sort(report.convergence_log.begin(), report.convergence_log.end(),
                     [](const ConvEvent& a, const ConvEvent& b) { return a.time < b.time; });
    fill_channels(report, topo, sent);
}

inline RunReport run_async_virtual(const ProblemInstance& inst, const RunConfig& cfg)
{
    const auto coeff = build_coefficients(inst);
    auto subs = decompose(inst, coeff, cfg.n_pes);
    const Topology topo{cfg.n_pes, inst.bc == BoundaryCondition::periodic};
    const double scale = residual_scale(subs);

    VirtualWindow<HaloMessage> halo("halo", cfg.comm_log);
    VirtualWindow<ControlMessage> reports("report", cfg.comm_log);
    VirtualWindow<ControlMessage> global("global", cfg.comm_log);
    for (int c = 0; c < 2 * cfg.n_pes; ++c)
        halo.register_channel({std::vector<double>(static_cast<std::size_t>(inst.ny), 0.0), 0, false});
    for (int pe = 0; pe < cfg.n_pes; ++pe) {
        reports.register_channel({});
        global.register_channel({});
    }
    DelaySource delays(cfg.delays, cfg.n_pes, 4 * cfg.n_pes);
    bool abort = false;

    using Worker = AsyncWorker<VirtualTransportHooked>;
    std::vector<Worker> workers;
    workers.reserve(subs.size());
    for (auto& s : subs) {
        VirtualTransportHooked t;
        t.halo = &halo;
        t.reports = &reports;
        t.global = &global;
        t.delays = &delays;
        t.n_pes = cfg.n_pes;
        t.abort = &abort;
        workers.emplace_back(std::move(s), cfg, topo, safe_scale(scale), t);
    }

    auto assembled = [&] {
        std::vector<Subdomain> final_subs;
        for (const auto& w : workers) final_subs.push_back(w.subdomain());
        return assemble(final_subs);
    };
    auto any_aborted = [&] { return std::any_of(workers.begin(), workers.end(), [](const Worker& w) { return w.aborted(); }); };

    RunReport report;
    std::uint64_t steps = 0;
    VirtualTime now = 0.0;
    bool timed_out = false;
    std::vector<double> solution;
    double final_rr = 0.0;
    for (int round = 0;; ++round) {
        const auto res = run_virtual(std::span<Worker>(workers), delays, cfg.step_limit - steps, now);
        steps += res.steps;
        now = res.end_time;
        timed_out = res.timed_out || any_aborted();
        solution = assembled();
        final_rr = global_residual(inst, coeff, solution) / safe_scale(scale);
        if (timed_out || final_rr < cfg.tol || round == kMaxVerificationRounds) break;
        ++report.verification_rounds;
        for (auto& w : workers) w.resume();
    }

    fill_common(report, inst, cfg, scale);
    collect_async(report, workers, topo);
    report.control_msgs += report.verification_rounds;
    report.virtual_time = now;
    report.timed_out = timed_out;
    report.terminated = !report.timed_out;
    if (report.timed_out) {
        std::ostringstream os;
        const bool div = std::any_of(workers.begin(), workers.end(), [](const Worker& w) { return w.diverged(); });
        os << (div ? "diverged" : steps >= cfg.step_limit ? "step limit exceeded" : "iteration limit exceeded") << " after "
           << steps << " steps at virtual time " << now << "\n";
        for (const auto& w : workers) os << w.describe() << "\n";
        report.diagnostic = os.str();
    } else if (!(final_rr < cfg.tol)) {
        report.diagnostic = "verification still failing after " + std::to_string(kMaxVerificationRounds) + " rounds";
    }
    report.solution = std::move(solution);
    report.final_residual = final_rr;
    return report;
}

inline RunReport run_async_threads(const ProblemInstance& inst, const RunConfig& cfg)
{
    const auto coeff = build_coefficients(inst);
    auto subs = decompose(inst, coeff, cfg.n_pes);
    const Topology topo{cfg.n_pes, inst.bc == BoundaryCondition::periodic};
    const double scale = residual_scale(subs);

    ThreadedWindow<HaloMessage> halo("halo");
    ThreadedWindow<ControlMessage> reports("report");
    ThreadedWindow<ControlMessage> global("global");
    for (int c = 0; c < 2 * cfg.n_pes; ++c)
        halo.register_channel({std::vector<double>(static_cast<std::size_t>(inst.ny), 0.0), 0, false});
    for (int pe = 0; pe < cfg.n_pes; ++pe) {
        reports.register_channel({});
        global.register_channel({});
    }
    std::atomic<bool> abort{false};
    const auto start = std::chrono::steady_clock::now();

    using Worker = AsyncWorker<ThreadTransportHooked>;
    std::vector<Worker> workers;
    workers.reserve(subs.size());
    for (auto& s : subs) {
        ThreadTransportHooked t;
        t.halo = &halo;
        t.reports = &reports;
        t.global = &global;
        t.start = start;
        t.abort = &abort;
        workers.emplace_back(std::move(s), cfg, topo, safe_scale(scale), t);
    }

    auto run_round = [&] {
        std::vector<std::thread> threads;
        for (int pe = 0; pe < cfg.n_pes; ++pe) {
            threads.emplace_back([&, pe] {
                auto& w = workers[static_cast<std::size_t>(pe)];
                const double slow = cfg.delays.scale_of(pe);
                for (;;) {
                    const auto t0 = std::chrono::steady_clock::now();
                    const StepKind k = w.step(0.0);
                    if (k == StepKind::done) break;
                    if (k == StepKind::sweep && slow > 1.0) {
                        const auto spent = std::chrono::steady_clock::now() - t0;
                        std::this_thread::sleep_for(
                            std::chrono::duration_cast<std::chrono::nanoseconds>(spent * (slow - 1.0)));
                    } else {
                        // With more workers than cores a worker would otherwise
                        // spend its whole time slice sweeping against stale ghosts.
                        std::this_thread::yield();
                    }
                    if (std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() > cfg.wall_limit_s)
                        abort.store(true);
                }
            });
        }
        for (auto& t : threads) t.join();
    };

    RunReport report;
    bool timed_out = false;
    std::vector<double> solution;
    double final_rr = 0.0;
    for (int round = 0;; ++round) {
        run_round();
        timed_out = std::any_of(workers.begin(), workers.end(), [](const Worker& w) { return w.aborted(); });
        std::vector<Subdomain> final_subs;
        for (const auto& w : workers) final_subs.push_back(w.subdomain());
        solution = assemble(final_subs);
        final_rr = global_residual(inst, coeff, solution) / safe_scale(scale);
        if (timed_out || final_rr < cfg.tol || round == kMaxVerificationRounds) break;
        ++report.verification_rounds;
        for (auto& w : workers) w.resume();
    }
    const double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    fill_common(report, inst, cfg, scale);
    collect_async(report, workers, topo);
    report.control_msgs += report.verification_rounds;
    report.wall_time_ms = wall;
    report.timed_out = timed_out;
    report.terminated = !report.timed_out;
    if (report.timed_out) {
        std::ostringstream os;
        const bool div = std::any_of(workers.begin(), workers.end(), [](const Worker& w) { return w.diverged(); });
        os << (div ? "diverged" : "wall-clock or iteration limit exceeded") << " after " << wall << " ms\n";
        for (const auto& w : workers) os << w.describe() << "\n";
        report.diagnostic = os.str();
    } else if (!(final_rr < cfg.tol)) {
        report.diagnostic = "verification still failing after " + std::to_string(kMaxVerificationRounds) + " rounds";
    }
    report.solution = std::move(solution);
    report.final_residual = final_rr;
    return report;
}

// ---------------------------------------------------------------------------
// Synchronous policy.

inline void exchange_halos(std::vector<Subdomain>& subs, const Topology& topo, std::vector<std::array<long, 2>>& sent)
{
    std::vector<std::array<BoundaryVector, 2>> rows;
    rows.reserve(subs.size());
    for (const auto& s : subs) rows.push_back({s.boundary(Side::top), s.boundary(Side::bottom)});
    for (int pe = 0; pe < topo.n; ++pe) {
        for (int dir = 0; dir < 2; ++dir) {
            if (!topo.has_neighbor(pe, dir)) continue;
            const int to = topo.neighbor(pe, dir);
            // Upward rows land in the receiver's bottom ghost.
            subs[static_cast<std::size_t>(to)].set_ghost(dir == 0 ? Side::bottom : Side::top,
                                                         rows[static_cast<std::size_t>(pe)][static_cast<std::size_t>(dir)].values);
            ++sent[static_cast<std::size_t>(pe)][static_cast<std::size_t>(dir)];
        }
    }
}

inline RunReport run_sync_virtual(const ProblemInstance& inst, const RunConfig& cfg)
{
    const auto coeff = build_coefficients(inst);
    auto subs = decompose(inst, coeff, cfg.n_pes);
    const Topology topo{cfg.n_pes, inst.bc == BoundaryCondition::periodic};
    const double scale = residual_scale(subs);
    DelaySource delays(cfg.delays, cfg.n_pes, 4 * cfg.n_pes);
    std::vector<std::array<long, 2>> sent(subs.size(), {0, 0});

    RunReport report;
    fill_common(report, inst, cfg, scale);
    VirtualTime now = 0.0;
    long iter = 0;
    double rr = scale > 0.0 ? 1.0 : 0.0;
    while (!(rr < cfg.tol) && iter < cfg.max_iterations) {
        double compute = 0.0;
        for (auto& s : subs) {
            sor_sweep(s, cfg.omega);
            compute = std::max(compute, delays.compute(s.owner()));
        }
        exchange_halos(subs, topo, sent);
        ++iter;
        // Halo exchange then the residual reduction, each as slow as its slowest message.
        double halo_lat = 0.0, reduce_lat = 0.0;
        for (int pe = 0; pe < cfg.n_pes; ++pe) {
            for (int dir = 0; dir < 2; ++dir)
                if (topo.has_neighbor(pe, dir)) halo_lat = std::max(halo_lat, delays.latency(Topology::out_channel(pe, dir)));
            reduce_lat = std::max(reduce_lat, delays.latency(2 * cfg.n_pes + pe));
        }
        now += compute + halo_lat + reduce_lat;
        rr = 0.0;
        for (const auto& s : subs) {
            const double v = local_residual(s);
            if (!(v <= rr)) rr = v;
        }
        rr /= safe_scale(scale);
        if (!(rr < kDivergenceLimit)) break;
        if (cfg.residual_trace_stride > 0 && iter % cfg.residual_trace_stride == 0)
            report.residual_trace.push_back({-1, iter, rr});
    }

    report.iterations.assign(subs.size(), iter);
    fill_channels(report, topo, sent);
    report.virtual_time = now;
    report.timed_out = !(rr < cfg.tol);
    report.terminated = !report.timed_out;
    if (report.terminated) report.convergence_log.push_back({0, iter, ConvEventKind::global, now});
    else if (!(rr < kDivergenceLimit)) report.diagnostic = "diverged at iteration " + std::to_string(iter);
    else report.diagnostic = "iteration limit reached with relative residual " + std::to_string(rr);
    report.solution = assemble(subs);
    report.final_residual = global_residual(inst, coeff, report.solution) / safe_scale(scale);
    return report;
}

inline RunReport run_sync_threads(const ProblemInstance& inst, const RunConfig& cfg)
{
    const auto coeff = build_coefficients(inst);
    auto subs = decompose(inst, coeff, cfg.n_pes);
    const Topology topo{cfg.n_pes, inst.bc == BoundaryCondition::periodic};
    const double scale = residual_scale(subs);
    const std::size_t n = subs.size();

    std::vector<std::array<BoundaryVector, 2>> rows(n);
    std::vector<double> partial(n, 0.0);
    std::vector<std::array<long, 2>> sent(n, {0, 0});
    long iter = 0;
    double rr = 1.0;
    bool stop = false;
    const auto start = std::chrono::steady_clock::now();

    // Completion of the second phase is the Allreduce.
    auto reduce = [&]() noexcept {
        ++iter;
        rr = 0.0;
        for (double v : partial)
            if (!(v <= rr)) rr = v;
        rr /= safe_scale(scale);
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        stop = rr < cfg.tol || !(rr < kDivergenceLimit) || iter >= cfg.max_iterations || elapsed > cfg.wall_limit_s;
    };
    std::barrier exchange_point(static_cast<std::ptrdiff_t>(n));
    std::barrier reduce_point(static_cast<std::ptrdiff_t>(n), reduce);

    std::vector<std::thread> threads;
    for (std::size_t pe = 0; pe < n; ++pe) {
        threads.emplace_back([&, pe] {
            auto& s = subs[pe];
            const double slow = cfg.delays.scale_of(static_cast<int>(pe));
            while (!stop) {
                const auto t0 = std::chrono::steady_clock::now();
                auto bv = sor_sweep(s, cfg.omega);
                if (slow > 1.0) {
                    const auto spent = std::chrono::steady_clock::now() - t0;
                    std::this_thread::sleep_for(std::chrono::duration_cast<std::chrono::nanoseconds>(spent * (slow - 1.0)));
                }
                rows[pe] = {std::move(bv.top), std::move(bv.bottom)};
                exchange_point.arrive_and_wait();
                const int me = static_cast<int>(pe);
                if (topo.has_neighbor(me, 0)) {
                    s.set_ghost(Side::top, rows[static_cast<std::size_t>(topo.neighbor(me, 0))][1].values);
                    ++sent[static_cast<std::size_t>(topo.neighbor(me, 0))][1];
                }
                if (topo.has_neighbor(me, 1)) {
                    s.set_ghost(Side::bottom, rows[static_cast<std::size_t>(topo.neighbor(me, 1))][0].values);
                    ++sent[static_cast<std::size_t>(topo.neighbor(me, 1))][0];
                }
                partial[pe] = local_residual(s);
                reduce_point.arrive_and_wait();
            }
        });
    }
    for (auto& t : threads) t.join();
    const double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    RunReport report;
    fill_common(report, inst, cfg, scale);
    report.iterations.assign(n, iter);
    fill_channels(report, topo, sent);
    report.wall_time_ms = wall;
    report.timed_out = !(rr < cfg.tol);
    report.terminated = !report.timed_out;
    if (report.terminated) report.convergence_log.push_back({0, iter, ConvEventKind::global, wall});
    else report.diagnostic = "iteration or wall-clock limit reached with relative residual " + std::to_string(rr);
    report.solution = assemble(subs);
    report.final_residual = global_residual(inst, coeff, report.solution) / safe_scale(scale);
    return report;
}

}  // namespace detail

inline RunReport run(const ProblemInstance& inst, const RunConfig& cfg)
{
    inst.validate();
    cfg.validate();
    if (inst.nx % cfg.n_pes != 0) {
        std::ostringstream os;
        os << "1-D decomposition needs nx divisible by the PE count (nx = " << inst.nx << ", pes = " << cfg.n_pes << ")";
        throw std::invalid_argument(os.str());
    }
    if (cfg.policy == Policy::synchronous)
        return cfg.backend == Backend::virtual_time ? detail::run_sync_virtual(inst, cfg) : detail::run_sync_threads(inst, cfg);
    return cfg.backend == Backend::virtual_time ? detail::run_async_virtual(inst, cfg) : detail::run_async_threads(inst, cfg);
}

}  // namespace eventpde
