#pragma once

// Variable-coefficient pressure Poisson operator on a 2-D cell-centred grid,
// split into 1-D row strips (one per processing element).
//
// Global fields are row-major: cell (i, j) lives at i * ny + j, where i is the
// decomposed (first) dimension and j runs along a strip's boundary rows.
//
// The discrete operator is
//
//   L(p)_ij = sum over the four faces f of c_f * (p_neighbour - p_ij)
//
// with c_f = 1 / (dx^2 (rho_a + rho_b)) on x-faces and 1 / (dy^2 (rho_a + rho_b))
// on y-faces.  We solve L(p) = b.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace eventpde {

enum class BoundaryCondition { periodic, fixed_zero };

inline std::string_view to_string(BoundaryCondition bc)
{
    return bc == BoundaryCondition::periodic ? "periodic" : "fixed-zero";
}

inline BoundaryCondition parse_boundary_condition(std::string_view s)
{
    if (s == "periodic") return BoundaryCondition::periodic;
    if (s == "fixed-zero" || s == "fixed_zero") return BoundaryCondition::fixed_zero;
    throw std::invalid_argument("unknown boundary condition '" + std::string(s) + "'");
}

struct ProblemInstance {
    int nx = 0;
    int ny = 0;
    double dx = 1.0;
    double dy = 1.0;
    double dt = 1.0;
    BoundaryCondition bc = BoundaryCondition::periodic;
    std::vector<double> density;  // nx * ny, strictly positive
    std::vector<double> rhs;      // nx * ny
    std::optional<std::vector<double>> reference;

    std::size_t cells() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * ny + j; }

    double max_abs_rhs() const
    {
        double m = 0.0;
        for (double v : rhs) m = std::max(m, std::abs(v));
        return m;
    }

    // Throws std::invalid_argument naming the first violated invariant.
    void validate() const
    {
        if (nx < 1 || ny < 1) throw std::invalid_argument("grid dimensions must be positive");
        if (!(dx > 0.0) || !(dy > 0.0)) throw std::invalid_argument("grid spacing must be positive");
        if (density.size() != cells() || rhs.size() != cells())
            throw std::invalid_argument("density/rhs size does not match nx*ny");
        if (reference && reference->size() != cells())
            throw std::invalid_argument("reference size does not match nx*ny");
        for (std::size_t k = 0; k < density.size(); ++k) {
            if (!(density[k] > 0.0)) {
                std::ostringstream os;
                os << "non-positive density " << density[k] << " at cell (" << k / ny << ", " << k % ny << ")";
                throw std::invalid_argument(os.str());
            }
        }
        if (bc == BoundaryCondition::periodic) {
            long double sum = 0.0L;
            for (double v : rhs) sum += v;
            const double scale = max_abs_rhs();
            if (std::abs(static_cast<double>(sum)) > 1e-12 * scale) {
                std::ostringstream os;
                os << "periodic problem violates compatibility: sum(rhs) = " << sum << ", max|rhs| = " << scale;
                throw std::invalid_argument(os.str());
            }
        }
    }
};

// Face coefficients for the whole grid.
//   x: (nx + 1) * ny, x[i * ny + j] couples rows i - 1 and i.
//   y: nx * (ny + 1), y[i * (ny + 1) + j] couples columns j - 1 and j.
// Under periodic wrap the first and last face of each line are the same face.
struct FaceCoefficients {
    int nx = 0;
    int ny = 0;
    std::vector<double> x;
    std::vector<double> y;

    double xface(int i, int j) const { return x[static_cast<std::size_t>(i) * ny + j]; }
    double yface(int i, int j) const { return y[static_cast<std::size_t>(i) * (ny + 1) + j]; }
};

// Boundary faces under fixed-zero mirror the density of the adjacent cell.
inline FaceCoefficients build_coefficients(std::span<const double> density, int nx, int ny, double dx, double dy,
                                           BoundaryCondition bc)
{
    if (density.size() != static_cast<std::size_t>(nx) * ny)
        throw std::invalid_argument("density size does not match nx*ny");
    for (std::size_t k = 0; k < density.size(); ++k) {
        if (!(density[k] > 0.0)) {
            std::ostringstream os;
            os << "build_coefficients: non-positive density " << density[k] << " at cell (" << k / ny << ", "
               << k % ny << ")";
            throw std::invalid_argument(os.str());
        }
    }
    const bool periodic = bc == BoundaryCondition::periodic;
    auto rho = [&](int i, int j) { return density[static_cast<std::size_t>(i) * ny + j]; };
    const double ix2 = 1.0 / (dx * dx);
    const double iy2 = 1.0 / (dy * dy);

    FaceCoefficients c;
    c.nx = nx;
    c.ny = ny;
    c.x.resize(static_cast<std::size_t>(nx + 1) * ny);
    c.y.resize(static_cast<std::size_t>(nx) * (ny + 1));
    for (int i = 0; i <= nx; ++i) {
        for (int j = 0; j < ny; ++j) {
            double a, b;
            if (i == 0 || i == nx) {
                if (periodic) {
                    a = rho(nx - 1, j);
                    b = rho(0, j);
                } else {
                    a = b = rho(i == 0 ? 0 : nx - 1, j);
                }
            } else {
                a = rho(i - 1, j);
                b = rho(i, j);
            }
            c.x[static_cast<std::size_t>(i) * ny + j] = ix2 / (a + b);
        }
    }
    for (int i = 0; i < nx; ++i) {
        for (int j = 0; j <= ny; ++j) {
            double a, b;
            if (j == 0 || j == ny) {
                if (periodic) {
                    a = rho(i, ny - 1);
                    b = rho(i, 0);
                } else {
                    a = b = rho(i, j == 0 ? 0 : ny - 1);
                }
            } else {
                a = rho(i, j - 1);
                b = rho(i, j);
            }
            c.y[static_cast<std::size_t>(i) * (ny + 1) + j] = iy2 / (a + b);
        }
    }
    return c;
}

inline FaceCoefficients build_coefficients(const ProblemInstance& inst)
{
    return build_coefficients(inst.density, inst.nx, inst.ny, inst.dx, inst.dy, inst.bc);
}

enum class Side { top, bottom };

struct BoundaryVector {
    std::vector<double> values;
    Side side = Side::top;
};

inline double l1_norm(std::span<const double> v)
{
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
}

inline double l1_norm(const BoundaryVector& b) { return l1_norm(b.values); }

// One PE's strip of rows [r0, r1) plus a ghost row on each side.
// Local row 0 is the top ghost (global row r0 - 1), local row rows() + 1 the
// bottom ghost (global row r1).
class Subdomain {
public:
    Subdomain() = default;

    Subdomain(const ProblemInstance& inst, const FaceCoefficients& coeff, int owner, int r0, int r1)
        : owner_(owner), r0_(r0), r1_(r1), nx_(inst.nx), ny_(inst.ny), bc_(inst.bc)
    {
        if (r0 < 0 || r1 > inst.nx || r0 >= r1) throw std::invalid_argument("invalid subdomain row range");
        const int n = r1 - r0;
        p_.assign(static_cast<std::size_t>(n + 2) * ny_, 0.0);
        cx_.assign(coeff.x.begin() + static_cast<std::ptrdiff_t>(r0) * ny_,
                   coeff.x.begin() + static_cast<std::ptrdiff_t>(r1 + 1) * ny_);
        cy_.assign(coeff.y.begin() + static_cast<std::ptrdiff_t>(r0) * (ny_ + 1),
                   coeff.y.begin() + static_cast<std::ptrdiff_t>(r1) * (ny_ + 1));
        rhs_.assign(inst.rhs.begin() + static_cast<std::ptrdiff_t>(r0) * ny_,
                    inst.rhs.begin() + static_cast<std::ptrdiff_t>(r1) * ny_);
    }

    int owner() const { return owner_; }
    int r0() const { return r0_; }
    int r1() const { return r1_; }
    int rows() const { return r1_ - r0_; }
    int ny() const { return ny_; }
    BoundaryCondition bc() const { return bc_; }

    // l in [0, rows() + 1], includes ghosts.
    double& at(int l, int j) { return p_[static_cast<std::size_t>(l) * ny_ + j]; }
    double at(int l, int j) const { return p_[static_cast<std::size_t>(l) * ny_ + j]; }

    std::span<double> row(int l) { return {p_.data() + static_cast<std::size_t>(l) * ny_, static_cast<std::size_t>(ny_)}; }
    std::span<const double> row(int l) const
    {
        return {p_.data() + static_cast<std::size_t>(l) * ny_, static_cast<std::size_t>(ny_)};
    }

    std::span<const double> ghost(Side s) const { return row(s == Side::top ? 0 : rows() + 1); }

    void set_ghost(Side s, std::span<const double> values)
    {
        if (values.size() != static_cast<std::size_t>(ny_)) throw std::invalid_argument("ghost row length != ny");
        std::copy(values.begin(), values.end(), row(s == Side::top ? 0 : rows() + 1).begin());
    }

    BoundaryVector boundary(Side s) const
    {
        auto r = row(s == Side::top ? 1 : rows());
        return {std::vector<double>(r.begin(), r.end()), s};
    }

    // Owned rows only, row-major.
    std::vector<double> owned() const
    {
        return {p_.begin() + ny_, p_.begin() + static_cast<std::ptrdiff_t>(rows() + 1) * ny_};
    }

    void set_owned(std::span<const double> values)
    {
        if (values.size() != static_cast<std::size_t>(rows()) * ny_) throw std::invalid_argument("owned size mismatch");
        std::copy(values.begin(), values.end(), p_.begin() + ny_);
    }

    // Face above local owned row l (1-based) is cx[l - 1], below is cx[l].
    double cx(int k, int j) const { return cx_[static_cast<std::size_t>(k) * ny_ + j]; }
    double cy(int l, int j) const { return cy_[static_cast<std::size_t>(l - 1) * (ny_ + 1) + j]; }
    double rhs(int l, int j) const { return rhs_[static_cast<std::size_t>(l - 1) * ny_ + j]; }

    std::span<const double> field() const { return p_; }

private:
    int owner_ = 0;
    int r0_ = 0;
    int r1_ = 0;
    int nx_ = 0;
    int ny_ = 0;
    BoundaryCondition bc_ = BoundaryCondition::periodic;
    std::vector<double> p_;
    std::vector<double> cx_;
    std::vector<double> cy_;
    std::vector<double> rhs_;
};

namespace detail {

struct StencilTerms {
    double neighbours;  // sum c_f * p_nb
    double diagonal;    // sum c_f
};

inline StencilTerms stencil(const Subdomain& s, int l, int j)
{
    const int ny = s.ny();
    const bool periodic = s.bc() == BoundaryCondition::periodic;
    const double cn = s.cx(l - 1, j);
    const double cs = s.cx(l, j);
    const double cw = s.cy(l, j);
    const double ce = s.cy(l, j + 1);
    double pw, pe;
    if (j > 0) pw = s.at(l, j - 1);
    else pw = periodic ? s.at(l, ny - 1) : 0.0;
    if (j + 1 < ny) pe = s.at(l, j + 1);
    else pe = periodic ? s.at(l, 0) : 0.0;
    return {cn * s.at(l - 1, j) + cs * s.at(l + 1, j) + cw * pw + ce * pe, cn + cs + cw + ce};
}

}  // namespace detail

struct SweepResult {
    BoundaryVector top;
    BoundaryVector bottom;
};

// One lexicographic SOR pass over the owned rows. Ghost rows are read, never written.
inline SweepResult sor_sweep(Subdomain& s, double omega)
{
    if (!(omega > 0.0 && omega < 2.0)) throw std::invalid_argument("SOR relaxation factor must lie in (0, 2)");
    const int n = s.rows();
    const int ny = s.ny();
    for (int l = 1; l <= n; ++l) {
        for (int j = 0; j < ny; ++j) {
            const auto t = detail::stencil(s, l, j);
            if (t.diagonal == 0.0) {
                std::ostringstream os;
                os << "sor_sweep: zero diagonal at global cell (" << s.r0() + l - 1 << ", " << j << ")";
                throw std::runtime_error(os.str());
            }
            const double gs = (t.neighbours - s.rhs(l, j)) / t.diagonal;
            double& p = s.at(l, j);
            p = (1.0 - omega) * p + omega * gs;
        }
    }
    return {s.boundary(Side::top), s.boundary(Side::bottom)};
}

inline double local_residual(const Subdomain& s)
{
    double r = 0.0;
    for (int l = 1; l <= s.rows(); ++l) {
        for (int j = 0; j < s.ny(); ++j) {
            const auto t = detail::stencil(s, l, j);
            const double v = std::abs(t.neighbours - t.diagonal * s.at(l, j) - s.rhs(l, j));
            if (!(v <= r)) r = v;  // NaN propagates
        }
    }
    return r;
}

// Whole-grid helpers built on a single strip with wrapped ghosts.
inline Subdomain whole_grid(const ProblemInstance& inst, const FaceCoefficients& coeff, std::span<const double> p)
{
    if (p.size() != inst.cells()) throw std::invalid_argument("field size does not match nx*ny");
    Subdomain s(inst, coeff, 0, 0, inst.nx);
    s.set_owned(p);
    if (inst.bc == BoundaryCondition::periodic) {
        s.set_ghost(Side::top, p.subspan(static_cast<std::size_t>(inst.nx - 1) * inst.ny, inst.ny));
        s.set_ghost(Side::bottom, p.subspan(0, inst.ny));
    }
    return s;
}

inline double global_residual(const ProblemInstance& inst, const FaceCoefficients& coeff, std::span<const double> p)
{
    return local_residual(whole_grid(inst, coeff, p));
}

// L(p) evaluated on the whole grid.
inline std::vector<double> apply_operator(const ProblemInstance& inst, const FaceCoefficients& coeff,
                                          std::span<const double> p)
{
    ProblemInstance zero = inst;
    zero.rhs.assign(inst.cells(), 0.0);
    auto s = whole_grid(zero, coeff, p);
    std::vector<double> out(inst.cells());
    for (int l = 1; l <= s.rows(); ++l)
        for (int j = 0; j < s.ny(); ++j) {
            const auto t = detail::stencil(s, l, j);
            out[inst.index(l - 1, j)] = t.neighbours - t.diagonal * s.at(l, j);
        }
    return out;
}

inline double mean_of(std::span<const double> v)
{
    long double sum = 0.0L;
    for (double x : v) sum += x;
    return static_cast<double>(sum / static_cast<long double>(v.size()));
}

inline std::vector<double> subtract_mean(std::span<const double> v)
{
    const double mean = mean_of(v);
    std::vector<double> out(v.begin(), v.end());
    for (double& x : out) x -= mean;
    return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: size mismatch");
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double v = std::abs(a[k] - b[k]);
        if (!(v <= m)) m = v;
    }
    return m;
}

}  // namespace eventpde
