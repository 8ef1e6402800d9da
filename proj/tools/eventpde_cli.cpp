// eventpde_cli: solve | sweep | oracle

#include "eventpde/eventpde.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace eventpde;

namespace {

struct ProblemOptions {
    std::string grid = "256x64";
    std::string problem = "bubble";
    std::string instance_file;
    std::string save_instance;
    double ratio = 1000.0;
    double dt = 1.0;
    std::uint64_t problem_seed = 1;
};

struct SolverOptions {
    int pes = 8;
    std::string policy = "event";
    std::string backend = "virtual";
    double omega = 1.5;
    double tol = 1e-8;
    double horizon = 200.0;
    double decay = 0.8;
    long warmup = 200;
    long window = 50;
    std::uint64_t seed = 1;
    std::string restart_rule = "residual-recheck";
    double restart_threshold = 0.0;
    std::vector<std::string> slow;  // PE:FACTOR
    std::uint64_t step_limit = 100'000'000;
    double wall_limit = 300.0;
};

void add_problem_options(CLI::App& app, ProblemOptions& p)
{
    app.add_option("--grid", p.grid, "Grid size NXxNY")->capture_default_str();
    app.add_option("--problem", p.problem, "Generated problem")->check(CLI::IsMember({"bubble", "manufactured"}))->capture_default_str();
    app.add_option("--instance", p.instance_file, "Load the instance from a JSON file instead of generating it");
    app.add_option("--save-instance", p.save_instance, "Write the instance to a JSON file");
    app.add_option("--ratio", p.ratio, "Liquid/gas density ratio of the bubble problem")->capture_default_str();
    app.add_option("--dt", p.dt, "Time step of the bubble problem")->capture_default_str();
    app.add_option("--problem-seed", p.problem_seed, "Seed of the synthetic velocity field")->capture_default_str();
}

void add_solver_options(CLI::App& app, SolverOptions& s)
{
    app.add_option("--pes", s.pes, "Number of PEs (strips)")->capture_default_str();
    app.add_option("--policy", s.policy, "Halo-exchange policy")->check(CLI::IsMember({"sync", "async", "event"}))->capture_default_str();
    app.add_option("--backend", s.backend, "Execution backend")->check(CLI::IsMember({"virtual", "threads"}))->capture_default_str();
    app.add_option("--omega", s.omega, "SOR relaxation factor")->capture_default_str();
    app.add_option("--tol", s.tol, "Relative max-residual tolerance")->capture_default_str();
    app.add_option("--horizon", s.horizon, "Event horizon h (iterations)")->capture_default_str();
    app.add_option("--decay", s.decay, "Event threshold decay d")->capture_default_str();
    app.add_option("--warmup", s.warmup, "Iterations with unconditional sends")->capture_default_str();
    app.add_option("--window", s.window, "Sweeps below tolerance for local convergence")->capture_default_str();
    app.add_option("--seed", s.seed, "Delay-model seed")->capture_default_str();
    app.add_option("--restart-rule", s.restart_rule, "Restart rule for converged PEs")
        ->check(CLI::IsMember({"any-fresh", "residual-recheck"}))
        ->capture_default_str();
    app.add_option("--restart-threshold", s.restart_threshold, "Norm change that counts as new values")->capture_default_str();
    app.add_option("--slow", s.slow, "Slow PEs as PE:FACTOR (repeatable)");
    app.add_option("--step-limit", s.step_limit, "Virtual scheduler step limit")->capture_default_str();
    app.add_option("--wall-limit", s.wall_limit, "Wall-clock limit in seconds (threads)")->capture_default_str();
}

std::pair<int, int> parse_grid(const std::string& g)
{
    const auto x = g.find_first_of("xX");
    if (x == std::string::npos) throw std::invalid_argument("--grid must look like NXxNY, got '" + g + "'");
    return {std::stoi(g.substr(0, x)), std::stoi(g.substr(x + 1))};
}

InstanceFile make_instance(const ProblemOptions& p)
{
    if (!p.instance_file.empty()) return load_instance(p.instance_file);
    const auto [nx, ny] = parse_grid(p.grid);
    InstanceFile f;
    f.kind = p.problem;
    if (p.problem == "manufactured") {
        f.instance = manufactured_instance(nx, ny);
    } else {
        f.seed = p.problem_seed;
        f.bubbles = default_bubbles(nx, ny, p.ratio);
        f.instance = bubble_instance(nx, ny, *f.bubbles, p.dt, p.problem_seed);
    }
    return f;
}

RunConfig make_config(const SolverOptions& s)
{
    RunConfig cfg;
    cfg.n_pes = s.pes;
    cfg.policy = parse_policy(s.policy);
    cfg.backend = parse_backend(s.backend);
    cfg.omega = s.omega;
    cfg.tol = s.tol;
    cfg.window = s.window;
    cfg.event.horizon = s.horizon;
    cfg.event.decay = s.decay;
    cfg.event.warmup_iters = s.warmup;
    cfg.restart_rule = parse_restart_rule(s.restart_rule);
    cfg.restart_threshold = s.restart_threshold;
    cfg.delays.seed = s.seed;
    cfg.step_limit = s.step_limit;
    cfg.wall_limit_s = s.wall_limit;
    for (const auto& spec : s.slow) {
        const auto colon = spec.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("--slow expects PE:FACTOR, got '" + spec + "'");
        const int pe = std::stoi(spec.substr(0, colon));
        if (pe < 0 || pe >= s.pes) throw std::invalid_argument("--slow names PE " + std::to_string(pe) + " out of range");
        if (cfg.delays.compute_scale.size() <= static_cast<std::size_t>(pe)) cfg.delays.compute_scale.resize(static_cast<std::size_t>(pe) + 1, 1.0);
        cfg.delays.compute_scale[static_cast<std::size_t>(pe)] = std::stod(spec.substr(colon + 1));
    }
    return cfg;
}

void write_text(const std::string& path, const std::string& text)
{
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << text;
}

std::vector<double> parse_list(const std::string& s)
{
    std::vector<double> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');)
        if (!item.empty()) out.push_back(std::stod(item));
    return out;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Event-triggered asynchronous SOR for a variable-coefficient pressure Poisson problem"};
    app.require_subcommand(1);

    ProblemOptions prob;
    SolverOptions solver;

    auto* solve = app.add_subcommand("solve", "Run one solve and print its report as JSON");
    add_problem_options(*solve, prob);
    add_solver_options(*solve, solver);
    std::string out, event_log, comm_log, trace;
    bool no_solution = false;
    solve->add_option("--out", out, "Report file (default: stdout)");
    solve->add_option("--event-log", event_log, "Convergence event log (JSON lines)");
    solve->add_option("--comm-log", comm_log, "Put/read event log, virtual backend only (JSON lines)");
    solve->add_option("--trace", trace, "Threshold trace (CSV)");
    solve->add_flag("--no-solution", no_solution, "Omit the solution field from the report");

    auto* sweep = app.add_subcommand("sweep", "Horizon x decay grid against the asynchronous baseline, as CSV");
    add_problem_options(*sweep, prob);
    add_solver_options(*sweep, solver);
    std::string h_list = "100,200,400", d_list = "0,0.5,0.8,0.9";
    int repeats = 3;
    sweep->add_option("--h-list", h_list, "Comma-separated horizons")->capture_default_str();
    sweep->add_option("--d-list", d_list, "Comma-separated decays (0 = asynchronous baseline)")->capture_default_str();
    sweep->add_option("--repeats", repeats, "Delay seeds per cell (seed, seed+1, ...)")->capture_default_str();
    sweep->add_option("--out", out, "CSV file (default: stdout)");

    auto* oracle = app.add_subcommand("oracle", "Direct solve; optionally diff a report against it");
    add_problem_options(*oracle, prob);
    std::string report_file;
    oracle->add_option("--report", report_file, "RunReport JSON (with solution) to compare");
    oracle->add_option("--out", out, "Output JSON (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto file = make_instance(prob);
        if (!prob.save_instance.empty()) save_instance(prob.save_instance, file);
        const auto& inst = file.instance;

        if (*solve) {
            auto cfg = make_config(solver);
            CommLog log;
            if (!comm_log.empty()) {
                if (cfg.backend != Backend::virtual_time) throw std::invalid_argument("--comm-log needs the virtual backend");
                cfg.comm_log = &log;
            }
            cfg.record_threshold_trace = !trace.empty();
            const auto rep = run(inst, cfg);
            write_text(out, to_json(rep, !no_solution).dump(2) + "\n");
            if (!event_log.empty()) write_text(event_log, convergence_log_json_lines(rep.convergence_log));
            if (!comm_log.empty()) write_text(comm_log, log.json_lines());
            if (!trace.empty()) write_text(trace, threshold_trace_csv(rep.threshold_trace));
            if (!rep.converged(cfg.tol)) {
                std::cerr << "run did not converge\n" << rep.diagnostic;
                return 2;
            }
        } else if (*sweep) {
            const auto cfg = make_config(solver);
            const auto hs = parse_list(h_list);
            const auto ds = parse_list(d_list);
            const auto rows = sweep_experiment(inst, hs, ds, repeats, cfg);
            write_text(out, sweep_csv(rows));
            for (const auto& r : rows)
                if (!r.ok) std::cerr << "h=" << r.h << " d=" << r.d << " seed=" << r.seed << ": " << r.error << "\n";
        } else if (*oracle) {
            const auto direct = direct_solve(inst);
            const auto coeff = build_coefficients(inst);
            const double scale = inst.max_abs_rhs() > 0.0 ? inst.max_abs_rhs() : 1.0;
            nlohmann::json j;
            j["nx"] = inst.nx;
            j["ny"] = inst.ny;
            j["relative_residual"] = global_residual(inst, coeff, direct) / scale;
            if (inst.reference) j["max_diff_reference"] = max_abs_diff(subtract_mean(direct), subtract_mean(*inst.reference));
            if (!report_file.empty()) {
                std::ifstream in(report_file);
                if (!in) throw std::runtime_error("cannot open '" + report_file + "'");
                const auto rep = nlohmann::json::parse(in);
                if (!rep.contains("solution")) throw std::invalid_argument("report has no solution field");
                const auto sol = rep.at("solution").get<std::vector<double>>();
                if (sol.size() != inst.cells()) throw std::invalid_argument("report solution does not match the grid");
                j["report_relative_residual"] = global_residual(inst, coeff, sol) / scale;
                j["max_diff_report"] = max_abs_diff(subtract_mean(direct), subtract_mean(sol));
            } else {
                j["solution"] = direct;
            }
            write_text(out, j.dump(2) + "\n");
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
