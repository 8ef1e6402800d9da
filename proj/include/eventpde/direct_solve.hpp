#pragma once

// Dense direct solve of the assembled operator. Used as the reference for
// the iterative solvers on small grids.

#include "eventpde/grid.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace eventpde {

inline constexpr std::size_t kDirectSolveMaxUnknowns = 4096;

// Row k of the returned matrix is the stencil of cell k, so A * p == L(p).
inline Eigen::MatrixXd assemble_operator(const ProblemInstance& inst, const FaceCoefficients& c)
{
    const int nx = inst.nx;
    const int ny = inst.ny;
    const auto n = static_cast<Eigen::Index>(inst.cells());
    const bool periodic = inst.bc == BoundaryCondition::periodic;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    auto id = [&](int i, int j) { return static_cast<Eigen::Index>(inst.index(i, j)); };
    for (int i = 0; i < nx; ++i) {
        for (int j = 0; j < ny; ++j) {
            const auto k = id(i, j);
            struct Link {
                double c;
                int i, j;
                bool inside;
            };
            const Link links[4] = {
                {c.xface(i, j), i - 1, j, i > 0},
                {c.xface(i + 1, j), i + 1, j, i + 1 < nx},
                {c.yface(i, j), i, j - 1, j > 0},
                {c.yface(i, j + 1), i, j + 1, j + 1 < ny},
            };
            for (const auto& l : links) {
                a(k, k) -= l.c;
                if (l.inside) a(k, id(l.i, l.j)) += l.c;
                else if (periodic) a(k, id((l.i + nx) % nx, (l.j + ny) % ny)) += l.c;
            }
        }
    }
    return a;
}

// Periodic problems pin cell (0, 0) to zero after projecting the rhs onto the
// compatible subspace.
inline std::vector<double> direct_solve(const ProblemInstance& inst)
{
    inst.validate();
    if (inst.cells() > kDirectSolveMaxUnknowns) {
        std::ostringstream os;
        os << "direct_solve: " << inst.cells() << " unknowns exceeds the dense limit of " << kDirectSolveMaxUnknowns;
        throw std::invalid_argument(os.str());
    }
    const auto coeff = build_coefficients(inst);
    Eigen::MatrixXd a = assemble_operator(inst, coeff);
    const auto n = a.rows();
    Eigen::VectorXd b(n);
    if (inst.bc == BoundaryCondition::periodic) {
        const auto compat = subtract_mean(inst.rhs);
        for (Eigen::Index k = 0; k < n; ++k) b(k) = compat[static_cast<std::size_t>(k)];
        a.row(0).setZero();
        a(0, 0) = 1.0;
        b(0) = 0.0;
    } else {
        for (Eigen::Index k = 0; k < n; ++k) b(k) = inst.rhs[static_cast<std::size_t>(k)];
    }
    Eigen::VectorXd x;
    if (n <= 512) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
        if (!lu.isInvertible()) throw std::runtime_error("direct_solve: operator is singular beyond its nullspace");
        x = lu.solve(b);
        for (int k = 0; k < 2; ++k) x += lu.solve(b - a * x);
    } else {
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
        x = lu.solve(b);
        for (int k = 0; k < 2; ++k) x += lu.solve(b - a * x);
    }
    std::vector<double> p(x.data(), x.data() + x.size());

    // Normwise backward error of the pinned system.
    const double res = (a * x - b).lpNorm<Eigen::Infinity>();
    const double denom = a.cwiseAbs().rowwise().sum().maxCoeff() * x.lpNorm<Eigen::Infinity>() + b.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(res) || res > 1e-12 * denom) {
        std::ostringstream os;
        os << "direct_solve: backward error " << res / denom << " exceeds 1e-12; operator singular beyond its nullspace?";
        throw std::runtime_error(os.str());
    }
    return p;
}

}  // namespace eventpde
