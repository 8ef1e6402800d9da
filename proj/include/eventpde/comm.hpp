#pragma once

// One-sided "window put" emulation.
//
// Every channel is a single-slot window owned by the receiver: a put
// overwrites whatever the slot holds, the receiver never participates in the
// transfer, and a read returns the latest complete payload together with a
// freshness flag (true iff a write became visible since the previous read).
//
// Two backends share that contract:
//   * VirtualWindow - single-threaded, visibility gated by virtual time and a
//     per-put latency; driven by run_virtual().
//   * ThreadedWindow - lock-protected slots with an atomic version counter for
//     one concurrent writer and one concurrent reader per channel.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace eventpde {

using VirtualTime = double;

struct HaloMessage {
    std::vector<double> values;
    long sender_iter = 0;
    bool sender_converged = false;

    bool operator==(const HaloMessage&) const = default;
};

// Convergence report to the master, or the master's global broadcast.
struct ControlMessage {
    bool converged = false;
    long sender_iter = 0;
    int round = 0;  // verification round the sender was in

    bool operator==(const ControlMessage&) const = default;
};

template <class Payload>
struct ReadResult {
    Payload message;
    bool fresh = false;
};

// One line per put/read; dumped as JSON lines for replay.
struct CommEvent {
    enum class Op { put, read };
    Op op = Op::put;
    std::string window;
    int channel = 0;
    VirtualTime time = 0.0;
    VirtualTime visible_at = 0.0;  // puts only
    std::uint64_t seq = 0;         // sequence number of the payload put or returned
    bool fresh = false;            // reads only

    nlohmann::json to_json() const
    {
        nlohmann::json j{{"op", op == Op::put ? "put" : "read"}, {"window", window}, {"ch", channel}, {"t", time},
                         {"seq", seq}};
        if (op == Op::put) j["visible_at"] = visible_at;
        else j["fresh"] = fresh;
        return j;
    }
};

class CommLog {
public:
    void record(CommEvent e) { events_.push_back(std::move(e)); }
    const std::vector<CommEvent>& events() const { return events_; }
    void clear() { events_.clear(); }

    std::string json_lines() const
    {
        std::string out;
        for (const auto& e : events_) {
            out += e.to_json().dump();
            out += '\n';
        }
        return out;
    }

private:
    std::vector<CommEvent> events_;
};

template <class Payload>
class VirtualWindow {
public:
    explicit VirtualWindow(std::string name = "window", CommLog* log = nullptr) : name_(std::move(name)), log_(log) {}

    // Returns the channel id.
    int register_channel(Payload initial)
    {
        channels_.push_back(Channel{{}, std::move(initial), 0, 0, 0, -std::numeric_limits<double>::infinity()});
        return static_cast<int>(channels_.size()) - 1;
    }

    std::size_t size() const { return channels_.size(); }

    // Visibility never reorders: a put becomes visible no earlier than the put before it.
    void put(int channel, Payload message, VirtualTime now, VirtualTime latency)
    {
        auto& ch = checked(channel, "put");
        if (latency < 0.0) throw std::invalid_argument("negative channel latency");
        const VirtualTime visible = std::max(now + latency, ch.last_visible);
        ch.last_visible = visible;
        const std::uint64_t seq = ++ch.next_seq;
        ch.pending.push_back({visible, seq, std::move(message)});
        if (log_) log_->record({CommEvent::Op::put, name_, channel, now, visible, seq, false});
    }

    ReadResult<Payload> read_fresh(int channel, VirtualTime now)
    {
        auto& ch = checked(channel, "read");
        advance(ch, now);
        const bool fresh = ch.current_seq != ch.last_read_seq;
        ch.last_read_seq = ch.current_seq;
        if (log_) log_->record({CommEvent::Op::read, name_, channel, now, 0.0, ch.current_seq, fresh});
        return {ch.current, fresh};
    }

    // Latest visible payload without touching freshness.
    const Payload& peek(int channel, VirtualTime now)
    {
        auto& ch = checked(channel, "peek");
        advance(ch, now);
        return ch.current;
    }

private:
    struct Pending {
        VirtualTime visible;
        std::uint64_t seq;
        Payload message;
    };
    struct Channel {
        std::deque<Pending> pending;
        Payload current;
        std::uint64_t current_seq;
        std::uint64_t last_read_seq;
        std::uint64_t next_seq;
        VirtualTime last_visible;
    };

    Channel& checked(int channel, const char* what)
    {
        if (channel < 0 || static_cast<std::size_t>(channel) >= channels_.size()) {
            std::ostringstream os;
            os << name_ << ": " << what << " on unregistered channel " << channel << " (" << channels_.size()
               << " registered)";
            throw std::logic_error(os.str());
        }
        return channels_[static_cast<std::size_t>(channel)];
    }

    // Reads happen in nondecreasing virtual time, so entries superseded at
    // `now` can be dropped.
    static void advance(Channel& ch, VirtualTime now)
    {
        while (!ch.pending.empty() && ch.pending.front().visible <= now) {
            ch.current = std::move(ch.pending.front().message);
            ch.current_seq = ch.pending.front().seq;
            ch.pending.pop_front();
        }
    }

    std::string name_;
    CommLog* log_;
    std::vector<Channel> channels_;
};

template <class Payload>
class ThreadedWindow {
public:
    explicit ThreadedWindow(std::string name = "window") : name_(std::move(name)) {}

    // Registration is not thread-safe; finish it before workers start.
    int register_channel(Payload initial)
    {
        auto slot = std::make_unique<Slot>();
        slot->value = initial;
        slot->reader_copy = std::move(initial);
        slots_.push_back(std::move(slot));
        return static_cast<int>(slots_.size()) - 1;
    }

    std::size_t size() const { return slots_.size(); }

    void put(int channel, const Payload& message)
    {
        auto& s = checked(channel, "put");
        std::lock_guard lock(s.mutex);
        s.value = message;
        s.version.fetch_add(1, std::memory_order_release);
    }

    // Only the channel's single reader may call this.
    ReadResult<Payload> read_fresh(int channel)
    {
        auto& s = checked(channel, "read");
        if (s.version.load(std::memory_order_acquire) == s.reader_seen) return {s.reader_copy, false};
        std::lock_guard lock(s.mutex);
        s.reader_copy = s.value;
        s.reader_seen = s.version.load(std::memory_order_relaxed);
        return {s.reader_copy, true};
    }

private:
    struct Slot {
        std::mutex mutex;
        Payload value{};
        std::atomic<std::uint64_t> version{0};
        // reader-private
        Payload reader_copy{};
        std::uint64_t reader_seen = 0;
    };

    Slot& checked(int channel, const char* what)
    {
        if (channel < 0 || static_cast<std::size_t>(channel) >= slots_.size()) {
            std::ostringstream os;
            os << name_ << ": " << what << " on unregistered channel " << channel;
            throw std::logic_error(os.str());
        }
        return *slots_[static_cast<std::size_t>(channel)];
    }

    std::string name_;
    std::vector<std::unique_ptr<Slot>> slots_;
};

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Delays in virtual time units. A sweep of a PE with compute_scale 1 costs
// 1 + U[0, compute_jitter]; each put draws a latency from U[latency_min, latency_max].
struct DelayModel {
    std::uint64_t seed = 1;
    std::vector<double> compute_scale;  // per PE, missing entries mean 1
    // Defaults: a sweep costs 1 +- 25%, a message takes 0.25 to 2 sweeps.
    double compute_jitter = 0.25;
    double latency_min = 0.25;
    double latency_max = 2.0;
    double idle_poll = 1.0;  // cost of one idle (converged) iteration

    void validate() const
    {
        for (double s : compute_scale)
            if (!(s >= 0.0)) throw std::invalid_argument("compute scale must be >= 0");
        if (!(compute_jitter >= 0.0) || !(latency_min >= 0.0) || !(latency_max >= latency_min) || !(idle_poll > 0.0))
            throw std::invalid_argument("invalid delay model");
    }

    double scale_of(int pe) const
    {
        return static_cast<std::size_t>(pe) < compute_scale.size() ? compute_scale[static_cast<std::size_t>(pe)] : 1.0;
    }

    nlohmann::json to_json() const
    {
        return {{"seed", seed},
                {"compute_scale", compute_scale},
                {"compute_jitter", compute_jitter},
                {"latency_min", latency_min},
                {"latency_max", latency_max},
                {"idle_poll", idle_poll}};
    }
};

// Independent seeded streams per PE (compute) and per channel (latency), so a
// draw sequence depends only on the seed and the stream id.
class DelaySource {
public:
    DelaySource(const DelayModel& model, int n_pes, int n_streams) : model_(model)
    {
        model_.validate();
        for (int pe = 0; pe < n_pes; ++pe) compute_.emplace_back(splitmix64(model.seed * 1315423911ULL + static_cast<std::uint64_t>(pe)));
        for (int c = 0; c < n_streams; ++c)
            latency_.emplace_back(splitmix64(~model.seed * 2654435761ULL + static_cast<std::uint64_t>(c)));
    }

    double compute(int pe)
    {
        double d = model_.scale_of(pe);
        if (model_.compute_jitter > 0.0)
            d *= 1.0 + model_.compute_jitter * unit(compute_[static_cast<std::size_t>(pe)]);
        return d;
    }

    double latency(int stream)
    {
        if (model_.latency_max == model_.latency_min) return model_.latency_min;
        return model_.latency_min + (model_.latency_max - model_.latency_min) * unit(latency_.at(static_cast<std::size_t>(stream)));
    }

    double idle_poll() const { return model_.idle_poll; }
    const DelayModel& model() const { return model_; }

private:
    // Hand-rolled so the draws are identical across standard libraries.
    static double unit(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

    DelayModel model_;
    std::vector<std::mt19937_64> compute_;
    std::vector<std::mt19937_64> latency_;
};

enum class StepKind { sweep, idle, done };

struct VirtualRunResult {
    VirtualTime end_time = 0.0;
    std::uint64_t steps = 0;
    bool timed_out = false;
    std::vector<VirtualTime> finish_times;
    std::vector<std::uint64_t> sweeps;
};

// Cooperative virtual-time executor. A worker must provide
//   StepKind step(VirtualTime now)
// and is charged the drawn compute delay for a sweep, idle_poll for an idle
// iteration. The next worker to run is the one with the smallest clock (ties
// by index), so runs are a pure function of the workers and the delay seed.
template <class Worker>
VirtualRunResult run_virtual(std::span<Worker> workers, DelaySource& delays, std::uint64_t step_limit,
                             VirtualTime start = 0.0)
{
    if (workers.empty()) throw std::invalid_argument("run_virtual needs at least one worker");
    const std::size_t n = workers.size();
    std::vector<VirtualTime> clock(n, start);
    std::vector<bool> active(n, true);
    VirtualRunResult res;
    res.finish_times.assign(n, start);
    res.sweeps.assign(n, 0);
    std::size_t remaining = n;
    while (remaining > 0) {
        if (res.steps >= step_limit) {
            res.timed_out = true;
            break;
        }
        std::size_t next = n;
        for (std::size_t k = 0; k < n; ++k)
            if (active[k] && (next == n || clock[k] < clock[next])) next = k;
        const VirtualTime now = clock[next];
        ++res.steps;
        switch (workers[next].step(now)) {
        case StepKind::sweep:
            clock[next] = now + delays.compute(static_cast<int>(next));
            ++res.sweeps[next];
            break;
        case StepKind::idle:
            clock[next] = now + delays.idle_poll();
            break;
        case StepKind::done:
            active[next] = false;
            res.finish_times[next] = now;
            --remaining;
            break;
        }
    }
    res.end_time = start;
    for (std::size_t k = 0; k < n; ++k)
        res.end_time = std::max(res.end_time, active[k] ? clock[k] : res.finish_times[k]);
    return res;
}

}  // namespace eventpde
