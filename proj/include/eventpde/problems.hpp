#pragma once

// Desk-scale problem generators: a manufactured periodic case with a known
// discrete solution, and a two-phase "bubble" case whose right-hand side comes
// from the divergence of a synthetic predicted velocity field.

#include "eventpde/grid.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace eventpde {

struct BubbleSpec {
    std::vector<std::pair<double, double>> centers;  // (x, y), x along the decomposed dimension
    double radius = 0.1;
    double rho_inside = 1e-3;
    double rho_outside = 1.0;

    void validate() const
    {
        if (!(radius > 0.0)) throw std::invalid_argument("bubble radius must be positive");
        if (!(rho_inside > 0.0) || !(rho_outside > 0.0)) throw std::invalid_argument("bubble densities must be positive");
    }
};

// Staggered predicted velocity: u on x-faces ((nx + 1) * ny, u[i * ny + j] at
// x = i * dx), v on y-faces (nx * (ny + 1), v[i * (ny + 1) + j] at y = j * dy).
struct PredictedVelocity {
    int nx = 0;
    int ny = 0;
    std::vector<double> u;
    std::vector<double> v;
};

inline std::vector<double> rhs_from_velocity(const PredictedVelocity& vel, double dx, double dy, double dt)
{
    const int nx = vel.nx;
    const int ny = vel.ny;
    if (nx < 1 || ny < 1) throw std::invalid_argument("rhs_from_velocity: empty grid");
    if (vel.u.size() != static_cast<std::size_t>(nx + 1) * ny || vel.v.size() != static_cast<std::size_t>(nx) * (ny + 1))
        throw std::invalid_argument("rhs_from_velocity: staggered velocity shapes do not match the grid");
    if (!(dt > 0.0)) throw std::invalid_argument("rhs_from_velocity: dt must be positive");
    const double scale = 1.0 / (2.0 * dt);
    std::vector<double> b(static_cast<std::size_t>(nx) * ny);
    for (int i = 0; i < nx; ++i) {
        for (int j = 0; j < ny; ++j) {
            const double du = vel.u[static_cast<std::size_t>(i + 1) * ny + j] - vel.u[static_cast<std::size_t>(i) * ny + j];
            const double dv = vel.v[static_cast<std::size_t>(i) * (ny + 1) + j + 1] - vel.v[static_cast<std::size_t>(i) * (ny + 1) + j];
            b[static_cast<std::size_t>(i) * ny + j] = scale * (du / dx + dv / dy);
        }
    }
    return b;
}

// Square cells of side 1/nx.
inline double default_spacing(int nx) { return 1.0 / static_cast<double>(nx); }

inline ProblemInstance manufactured_instance(int nx, int ny)
{
    if (nx < 4 || ny < 4) throw std::invalid_argument("manufactured_instance requires nx, ny >= 4");
    ProblemInstance inst;
    inst.nx = nx;
    inst.ny = ny;
    inst.dx = inst.dy = default_spacing(nx);
    inst.dt = 1.0;
    inst.bc = BoundaryCondition::periodic;
    inst.density.assign(inst.cells(), 1.0);

    const double lx = nx * inst.dx;
    const double ly = ny * inst.dy;
    std::vector<double> ref(inst.cells());
    for (int i = 0; i < nx; ++i) {
        const double x = (i + 0.5) * inst.dx;
        for (int j = 0; j < ny; ++j) {
            const double y = (j + 0.5) * inst.dy;
            ref[inst.index(i, j)] = std::sin(2.0 * std::numbers::pi * x / lx) * std::cos(2.0 * std::numbers::pi * y / ly);
        }
    }
    const auto coeff = build_coefficients(inst);
    // Rounding in the telescoping sum leaves a tiny mean; remove it so the
    // compatibility condition holds to working precision.
    inst.rhs = subtract_mean(apply_operator(inst, coeff, ref));
    inst.reference = std::move(ref);
    return inst;
}

// Three bubbles rising in a column, scaled to the domain.
inline BubbleSpec default_bubbles(int nx, int ny, double density_ratio = 1000.0)
{
    const double lx = 1.0;
    const double ly = static_cast<double>(ny) / nx;
    BubbleSpec s;
    // x centres at odd sixteenths: with nx = 64 no gas cell touches a strip
    // interface for 1, 2, 4 or 8 PEs.
    s.centers = {{0.1875 * lx, 0.5 * ly}, {0.4375 * lx, 0.3 * ly}, {0.6875 * lx, 0.65 * ly}};
    s.radius = std::min(0.05 * lx, 0.2 * ly);
    s.rho_outside = 1.0;
    s.rho_inside = 1.0 / density_ratio;
    return s;
}

// Smooth periodic velocity built from a handful of seeded Fourier modes.
inline PredictedVelocity synthetic_velocity(int nx, int ny, double dx, double dy, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> amp(-1.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    struct Mode {
        int kx, ky;
        double a, phi;
    };
    std::vector<Mode> umodes, vmodes;
    for (int kx = 0; kx <= 2; ++kx)
        for (int ky = 0; ky <= 2; ++ky) {
            if (kx == 0 && ky == 0) continue;
            umodes.push_back({kx, ky, amp(rng), phase(rng)});
            vmodes.push_back({kx, ky, amp(rng), phase(rng)});
        }
    const double lx = nx * dx;
    const double ly = ny * dy;
    auto eval = [&](const std::vector<Mode>& modes, double x, double y) {
        double s = 0.0;
        for (const auto& m : modes)
            s += m.a * std::sin(2.0 * std::numbers::pi * (m.kx * x / lx + m.ky * y / ly) + m.phi);
        return s;
    };

    PredictedVelocity vel;
    vel.nx = nx;
    vel.ny = ny;
    vel.u.resize(static_cast<std::size_t>(nx + 1) * ny);
    vel.v.resize(static_cast<std::size_t>(nx) * (ny + 1));
    for (int i = 0; i <= nx; ++i)
        for (int j = 0; j < ny; ++j)
            vel.u[static_cast<std::size_t>(i) * ny + j] = i == nx ? vel.u[j] : eval(umodes, i * dx, (j + 0.5) * dy);
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j <= ny; ++j)
            vel.v[static_cast<std::size_t>(i) * (ny + 1) + j] =
                j == ny ? vel.v[static_cast<std::size_t>(i) * (ny + 1)] : eval(vmodes, (i + 0.5) * dx, j * dy);
    return vel;
}

inline bool inside_any_bubble(const BubbleSpec& spec, double x, double y)
{
    for (const auto& [cx, cy] : spec.centers) {
        const double ddx = x - cx;
        const double ddy = y - cy;
        if (ddx * ddx + ddy * ddy < spec.radius * spec.radius) return true;
    }
    return false;
}

inline ProblemInstance bubble_instance(int nx, int ny, const BubbleSpec& spec, double dt, std::uint64_t seed = 1)
{
    if (nx < 1 || ny < 1) throw std::invalid_argument("bubble_instance: empty grid");
    spec.validate();
    ProblemInstance inst;
    inst.nx = nx;
    inst.ny = ny;
    inst.dx = inst.dy = default_spacing(nx);
    inst.dt = dt;
    inst.bc = BoundaryCondition::periodic;

    const double lx = nx * inst.dx;
    const double ly = ny * inst.dy;
    for (const auto& [cx, cy] : spec.centers) {
        if (cx - spec.radius < 0.0 || cx + spec.radius > lx || cy - spec.radius < 0.0 || cy + spec.radius > ly)
            throw std::invalid_argument("bubble_instance: bubble does not fit inside the domain");
    }

    inst.density.resize(inst.cells());
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < ny; ++j)
            inst.density[inst.index(i, j)] =
                inside_any_bubble(spec, (i + 0.5) * inst.dx, (j + 0.5) * inst.dy) ? spec.rho_inside : spec.rho_outside;

    const auto vel = synthetic_velocity(nx, ny, inst.dx, inst.dy, seed);
    inst.rhs = subtract_mean(rhs_from_velocity(vel, inst.dx, inst.dy, dt));
    return inst;
}

// On-disk form of an instance, with enough of its origin to regenerate it.
struct InstanceFile {
    ProblemInstance instance;
    std::string kind = "custom";  // manufactured | bubble | custom
    std::uint64_t seed = 0;
    std::optional<BubbleSpec> bubbles;
};

inline nlohmann::json to_json(const InstanceFile& f)
{
    const auto& in = f.instance;
    nlohmann::json j;
    j["format"] = "eventpde-instance";
    j["version"] = 1;
    j["kind"] = f.kind;
    j["seed"] = f.seed;
    j["nx"] = in.nx;
    j["ny"] = in.ny;
    j["dx"] = in.dx;
    j["dy"] = in.dy;
    j["dt"] = in.dt;
    j["bc"] = std::string(to_string(in.bc));
    j["density"] = in.density;
    j["rhs"] = in.rhs;
    if (in.reference) j["reference"] = *in.reference;
    if (f.bubbles) {
        nlohmann::json b;
        nlohmann::json centers = nlohmann::json::array();
        for (const auto& [x, y] : f.bubbles->centers) centers.push_back({x, y});
        b["centers"] = centers;
        b["radius"] = f.bubbles->radius;
        b["rho_inside"] = f.bubbles->rho_inside;
        b["rho_outside"] = f.bubbles->rho_outside;
        j["bubbles"] = b;
    }
    return j;
}

inline InstanceFile instance_from_json(const nlohmann::json& j)
{
    if (j.value("format", std::string{}) != "eventpde-instance")
        throw std::invalid_argument("not an eventpde instance file");
    InstanceFile f;
    f.kind = j.value("kind", std::string("custom"));
    f.seed = j.value("seed", std::uint64_t{0});
    auto& in = f.instance;
    in.nx = j.at("nx").get<int>();
    in.ny = j.at("ny").get<int>();
    in.dx = j.at("dx").get<double>();
    in.dy = j.at("dy").get<double>();
    in.dt = j.at("dt").get<double>();
    in.bc = parse_boundary_condition(j.at("bc").get<std::string>());
    in.density = j.at("density").get<std::vector<double>>();
    in.rhs = j.at("rhs").get<std::vector<double>>();
    if (j.contains("reference")) in.reference = j.at("reference").get<std::vector<double>>();
    if (j.contains("bubbles")) {
        BubbleSpec b;
        for (const auto& c : j.at("bubbles").at("centers")) b.centers.emplace_back(c.at(0).get<double>(), c.at(1).get<double>());
        b.radius = j.at("bubbles").at("radius").get<double>();
        b.rho_inside = j.at("bubbles").at("rho_inside").get<double>();
        b.rho_outside = j.at("bubbles").at("rho_outside").get<double>();
        f.bubbles = b;
    }
    in.validate();
    return f;
}

inline void save_instance(const std::string& path, const InstanceFile& f)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << to_json(f).dump() << '\n';
}

inline InstanceFile load_instance(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return instance_from_json(nlohmann::json::parse(in));
}

}  // namespace eventpde
