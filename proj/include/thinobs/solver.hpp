// SPDX-License-Identifier: MIT
#pragma once

#include "thinobs/metrics.hpp"

#include <optional>

namespace thinobs {

enum class NodeKind : std::uint8_t { interior, thin_plane, outer_boundary };

/// Uniform grid on the box [-1,1]^n x [0,1]. Lateral axes carry `n_lateral`
/// nodes; the vertical axis carries (n_lateral-1)/2+1 so spacing is uniform.
struct HalfGrid {
    int dim = 3;
    int n_lateral = 0;
    int n_vertical = 0;
    double h = 0;
    std::array<int, 3> shape{1, 1, 1};

    static HalfGrid make(int dim, int n_per_axis) {
        require_dim(dim);
        if (n_per_axis < 5 || n_per_axis % 2 == 0)
            fail_validation("grid.n_per_axis must be odd and at least 5");
        HalfGrid g;
        g.dim = dim;
        g.n_lateral = n_per_axis;
        g.n_vertical = (n_per_axis - 1) / 2 + 1;
        g.h = 2.0 / double(n_per_axis - 1);
        for (int a = 0; a < dim; ++a) g.shape[a] = (a == dim - 1) ? g.n_vertical : g.n_lateral;
        return g;
    }

    std::size_t size() const { return std::size_t(shape[0]) * shape[1] * shape[2]; }
    std::size_t stride(int axis) const {
        std::size_t s = 1;
        for (int a = 0; a < axis; ++a) s *= std::size_t(shape[a]);
        return s;
    }
    std::size_t index(const std::array<int, 3>& ijk) const {
        return std::size_t(ijk[0]) + std::size_t(shape[0]) * (std::size_t(ijk[1]) + std::size_t(shape[1]) * ijk[2]);
    }
    std::array<int, 3> ijk(std::size_t idx) const {
        std::array<int, 3> r{0, 0, 0};
        r[0] = int(idx % shape[0]);
        idx /= shape[0];
        r[1] = int(idx % shape[1]);
        r[2] = int(idx / shape[1]);
        return r;
    }
    double axis_coord(int axis, int i) const {
        return axis == dim - 1 ? i * h : -1.0 + i * h;
    }
    Vec3 coord(const std::array<int, 3>& ijk) const {
        Vec3 x{0, 0, 0};
        for (int a = 0; a < dim; ++a) x[a] = axis_coord(a, ijk[a]);
        return x;
    }
    Vec3 coord(std::size_t idx) const { return coord(ijk(idx)); }

    NodeKind kind(const std::array<int, 3>& c) const {
        for (int a = 0; a < dim - 1; ++a)
            if (c[a] == 0 || c[a] == shape[a] - 1) return NodeKind::outer_boundary;
        if (c[dim - 1] == shape[dim - 1] - 1) return NodeKind::outer_boundary;
        if (c[dim - 1] == 0) return NodeKind::thin_plane;
        return NodeKind::interior;
    }
    NodeKind kind(std::size_t idx) const { return kind(ijk(idx)); }

    /// Nearest-node index to a coordinate, clamped to the grid.
    std::array<int, 3> locate(const Vec3& x) const {
        std::array<int, 3> c{0, 0, 0};
        for (int a = 0; a < dim; ++a) {
            const double origin = a == dim - 1 ? 0.0 : -1.0;
            c[a] = std::clamp(int(std::lround((x[a] - origin) / h)), 0, shape[a] - 1);
        }
        return c;
    }
};

/// Sparse rows of the divergence-form operator, scaled so that the matrix
/// A = -D_h has positive diagonal. Outer nodes keep Dirichlet values inside
/// the unknown vector and have no row.
struct DiscreteOperator {
    HalfGrid grid;
    std::vector<double> diag;
    std::vector<std::size_t> row_ptr;
    std::vector<std::uint32_t> col;
    std::vector<double> val;
    std::vector<double> rhs;     ///< -f at free nodes
    std::vector<double> weight;  ///< 1 interior, 1/2 thin plane, 0 outer
    bool cross_terms = false;

    /// (A w)_p for a free node p, including Dirichlet neighbors.
    double apply_row(std::size_t p, const std::vector<double>& w) const {
        double s = diag[p] * w[p];
        for (std::size_t e = row_ptr[p]; e < row_ptr[p + 1]; ++e) s += val[e] * w[col[e]];
        return s;
    }
};

inline DiscreteOperator assemble(const ProblemSpec& spec, const HalfGrid& grid) {
    const MetricField& m = spec.metric;
    if (m.dim != grid.dim) fail_validation("metric and grid dimensions differ");
    if (grid.h > 1.0 / 16 + 1e-15) fail_validation("grid spacing must be at most 1/16 (n_per_axis >= 33)");
    const int d = grid.dim;
    const double h = grid.h, ih2 = 1.0 / (h * h);
    DiscreteOperator op;
    op.grid = grid;
    const std::size_t N = grid.size();
    op.diag.assign(N, 0.0);
    op.rhs.assign(N, 0.0);
    op.weight.assign(N, 0.0);
    op.row_ptr.assign(N + 1, 0);
    op.cross_terms = !m.diagonal;

    std::vector<std::pair<std::uint32_t, double>> entries;
    for (std::size_t p = 0; p < N; ++p) {
        op.row_ptr[p] = op.col.size();
        const auto c = grid.ijk(p);
        const NodeKind kind = grid.kind(c);
        if (kind == NodeKind::outer_boundary) continue;
        const bool thin = kind == NodeKind::thin_plane;
        const Vec3 x = grid.coord(c);
        const Mat3 ax = m.eval(x);
        if (m.diagonal) {
            for (int a = 0; a < d; ++a)
                if (!(ax(a, a) > 0)) fail_validation("ellipticity violation during assembly");
        } else {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ax.topLeftCorner(d, d));
            if (!(es.eigenvalues().minCoeff() > 0)) fail_validation("ellipticity violation during assembly");
        }
        op.weight[p] = thin ? 0.5 : 1.0;
        entries.clear();
        double diag = 0;
        for (int a = 0; a < d; ++a) {
            Vec3 xp = x, xm = x;
            xp[a] += 0.5 * h;
            xm[a] -= 0.5 * h;
            const double cp = m.eval(xp)(a, a);
            auto up = c, dn = c;
            ++up[a];
            --dn[a];
            if (thin && a == d - 1) {
                // even reflection across the thin plane
                diag += 2 * cp * ih2;
                entries.push_back({std::uint32_t(grid.index(up)), -2 * cp * ih2});
            } else {
                const double cm = m.eval(xm)(a, a);
                diag += (cp + cm) * ih2;
                entries.push_back({std::uint32_t(grid.index(up)), -cp * ih2});
                entries.push_back({std::uint32_t(grid.index(dn)), -cm * ih2});
            }
        }
        if (!m.diagonal) {
            for (int a = 0; a < d; ++a)
                for (int b = a + 1; b < d; ++b) {
                    if (thin && b == d - 1) continue;  // a^{i,n+1} vanishes on the plane
                    for (int sa = -1; sa <= 1; sa += 2)
                        for (int sb = -1; sb <= 1; sb += 2) {
                            Vec3 xa = x, xb = x;
                            xa[a] += sa * h;
                            xb[b] += sb * h;
                            const double coef = -0.25 * ih2 * sa * sb * (m.eval(xa)(a, b) + m.eval(xb)(a, b));
                            auto nb = c;
                            nb[a] += sa;
                            nb[b] += sb;
                            entries.push_back({std::uint32_t(grid.index(nb)), coef});
                        }
                }
        }
        std::sort(entries.begin(), entries.end());
        for (std::size_t e = 0; e < entries.size(); ++e) {
            if (!op.col.empty() && op.col.size() > op.row_ptr[p] && op.col.back() == entries[e].first) {
                op.val.back() += entries[e].second;
            } else {
                op.col.push_back(entries[e].first);
                op.val.push_back(entries[e].second);
            }
        }
        op.diag[p] = diag;
        op.rhs[p] = -spec.f_at(x);
    }
    op.row_ptr[N] = op.col.size();
    return op;
}

struct SolverOptions {
    double omega = 1.5;
    double tol_c = 1e-8;
    double tol_r = 1e-8;
    long max_iter = 200000;
    int check_every = 10;
    bool record_energy = false;
};

struct SignoriniSolution {
    HalfGrid grid;
    std::vector<double> w;
    std::vector<double> flux;  ///< discrete conormal at thin-plane nodes, NaN elsewhere
    long iterations = 0;
    std::vector<double> residual_norms;
    std::vector<double> energy;
    bool converged = false;
    std::optional<AnalyticField> exact;  ///< set when sampled from a closed form
};

/// Discrete energy 1/2 w^T S w - w^T W b with S = W A symmetric.
inline double discrete_energy(const DiscreteOperator& op, const std::vector<double>& w) {
    double J = 0;
    const std::size_t N = op.grid.size();
    for (std::size_t p = 0; p < N; ++p) {
        if (op.weight[p] == 0) continue;
        double free_part = 0.5 * op.diag[p] * w[p], dir_part = 0;
        for (std::size_t e = op.row_ptr[p]; e < op.row_ptr[p + 1]; ++e) {
            const std::size_t q = op.col[e];
            if (op.weight[q] == 0) dir_part += op.val[e] * w[q];
            else free_part += 0.5 * op.val[e] * w[q];
        }
        J += op.weight[p] * w[p] * (free_part + dir_part - op.rhs[p]);
    }
    return J;
}

struct ResidualReport {
    double interior_residual = 0;   ///< max |b - Aw| / diag over interior nodes
    double thin_natural_residual = 0;
    double min_thin_w = 0;
    double max_flux = 0;
    double max_complementarity = 0;  ///< max |w * flux|
    double source_norm = 0;          ///< max |b| / diag over free nodes
    long iterations = 0;
    bool converged = false;
};

inline std::vector<double> compute_flux(const DiscreteOperator& op, const std::vector<double>& w) {
    const std::size_t N = op.grid.size();
    std::vector<double> flux(N, kNaN);
    for (std::size_t p = 0; p < N; ++p)
        if (op.weight[p] == 0.5) flux[p] = 0.5 * op.grid.h * (op.rhs[p] - op.apply_row(p, w));
    return flux;
}

inline ResidualReport residual_report(const DiscreteOperator& op, const std::vector<double>& w) {
    ResidualReport r;
    r.min_thin_w = std::numeric_limits<double>::infinity();
    r.max_flux = -std::numeric_limits<double>::infinity();
    const std::size_t N = op.grid.size();
    for (std::size_t p = 0; p < N; ++p) {
        if (op.weight[p] == 0) continue;
        const double res = op.rhs[p] - op.apply_row(p, w);
        r.source_norm = std::max(r.source_norm, std::abs(op.rhs[p]) / op.diag[p]);
        if (op.weight[p] == 1.0) {
            r.interior_residual = std::max(r.interior_residual, std::abs(res) / op.diag[p]);
        } else {
            const double q = 0.5 * op.grid.h * res;
            r.thin_natural_residual = std::max(r.thin_natural_residual, std::abs(std::min(w[p], -res / op.diag[p])));
            r.min_thin_w = std::min(r.min_thin_w, w[p]);
            r.max_flux = std::max(r.max_flux, q);
            r.max_complementarity = std::max(r.max_complementarity, std::abs(w[p] * q));
        }
    }
    return r;
}

inline ResidualReport residual_report(const SignoriniSolution& sol, const DiscreteOperator& op) {
    ResidualReport r = residual_report(op, sol.w);
    r.iterations = sol.iterations;
    r.converged = sol.converged;
    return r;
}

/// Projected SOR with red-black ordering for the discrete Signorini problem.
inline SignoriniSolution solve_signorini(const DiscreteOperator& op, const ProblemSpec& spec,
                                         const SolverOptions& opt,
                                         const std::vector<double>* initial = nullptr) {
    if (!(opt.omega > 0 && opt.omega < 2)) fail_validation("solver.omega must lie in (0,2)");
    const HalfGrid& g = op.grid;
    const std::size_t N = g.size();
    for (std::size_t p = 0; p < N; ++p)
        if (op.weight[p] != 0 && !(op.diag[p] > 0)) fail_numerical("indefinite operator");

    SignoriniSolution sol;
    sol.grid = g;
    if (initial) {
        if (initial->size() != N) fail_validation("initial guess has wrong size");
        sol.w = *initial;
    } else {
        sol.w.assign(N, 0.0);
    }
    std::vector<std::size_t> colors[2];
    for (std::size_t p = 0; p < N; ++p) {
        const auto c = g.ijk(p);
        if (g.kind(c) == NodeKind::outer_boundary) {
            sol.w[p] = spec.boundary_data.value(g.coord(c));
            continue;
        }
        if (op.weight[p] == 0.5) sol.w[p] = std::max(sol.w[p], 0.0);
        colors[(c[0] + c[1] + c[2]) & 1].push_back(p);
    }

    std::vector<double>& w = sol.w;
    const double omega = opt.omega;
    auto sweep_color = [&](const std::vector<std::size_t>& nodes) {
        const long count = long(nodes.size());
#pragma omp parallel for schedule(static) if (!op.cross_terms)
        for (long t = 0; t < count; ++t) {
            const std::size_t p = nodes[std::size_t(t)];
            double s = op.rhs[p];
            for (std::size_t e = op.row_ptr[p]; e < op.row_ptr[p + 1]; ++e) s -= op.val[e] * w[op.col[e]];
            double v = w[p] + omega * (s / op.diag[p] - w[p]);
            if (op.weight[p] == 0.5 && v < 0) v = 0;
            w[p] = v;
        }
    };

    auto satisfied = [&](const ResidualReport& r) {
        return r.interior_residual <= opt.tol_r && r.thin_natural_residual <= opt.tol_r &&
               r.max_flux <= opt.tol_c && r.max_complementarity <= opt.tol_c && r.min_thin_w >= -opt.tol_c;
    };

    if (opt.record_energy) sol.energy.push_back(discrete_energy(op, w));
    ResidualReport rep = residual_report(op, w);
    sol.residual_norms.push_back(std::max(rep.interior_residual, rep.thin_natural_residual));
    long it = 0;
    while (!satisfied(rep)) {
        if (it >= opt.max_iter) {
            sol.iterations = it;
            sol.flux = compute_flux(op, w);
            fail_numerical("projected SOR did not converge within max_iter; last residual " +
                           std::to_string(sol.residual_norms.back()));
        }
        for (int k = 0; k < opt.check_every && it < opt.max_iter; ++k, ++it) {
            sweep_color(colors[0]);
            sweep_color(colors[1]);
            if (opt.record_energy) sol.energy.push_back(discrete_energy(op, w));
        }
        rep = residual_report(op, w);
        sol.residual_norms.push_back(std::max(rep.interior_residual, rep.thin_natural_residual));
    }
    sol.iterations = it;
    sol.converged = true;
    sol.flux = compute_flux(op, w);
    return sol;
}

/// Samples a closed-form field on the grid. The flux holds a^{n+1,n+1} d_{n+1} w.
inline SignoriniSolution sample_field(const HalfGrid& g, const AnalyticField& f, const MetricField& m) {
    SignoriniSolution sol;
    sol.grid = g;
    const std::size_t N = g.size();
    sol.w.resize(N);
    sol.flux.assign(N, kNaN);
    const int km = vertical_index(g.dim);
    for (std::size_t p = 0; p < N; ++p) {
        const Vec3 x = g.coord(p);
        sol.w[p] = f.value(x);
        if (g.kind(p) == NodeKind::thin_plane && f.gradient) {
            const Vec3 gr = f.gradient(x);
            sol.flux[p] = m.eval(x)(km, km) * gr[km];
        }
    }
    sol.converged = true;
    sol.exact = f;
    return sol;
}

/// Gradient at grid nodes. Closed forms are used when attached; otherwise
/// centered differences, one-sided at box faces, and the discrete conormal
/// for the vertical derivative on the thin plane.
inline std::vector<Vec3> node_gradients(const SignoriniSolution& sol, const MetricField& m) {
    const HalfGrid& g = sol.grid;
    const std::size_t N = g.size();
    std::vector<Vec3> grad(N, Vec3{0, 0, 0});
    const int d = g.dim, km = vertical_index(d);
    for (std::size_t p = 0; p < N; ++p) {
        const auto c = g.ijk(p);
        const Vec3 x = g.coord(c);
        if (sol.exact && sol.exact->gradient) {
            grad[p] = sol.exact->gradient(x);
            continue;
        }
        for (int a = 0; a < d; ++a) {
            const std::size_t s = g.stride(a);
            if (a == km && c[a] == 0 && !std::isnan(sol.flux[p])) {
                grad[p][a] = sol.flux[p] / m.eval(x)(km, km);
            } else if (c[a] == 0) {
                grad[p][a] = (-3 * sol.w[p] + 4 * sol.w[p + s] - sol.w[p + 2 * s]) / (2 * g.h);
            } else if (c[a] == g.shape[a] - 1) {
                grad[p][a] = (3 * sol.w[p] - 4 * sol.w[p - s] + sol.w[p - 2 * s]) / (2 * g.h);
            } else {
                grad[p][a] = (sol.w[p + s] - sol.w[p - s]) / (2 * g.h);
            }
        }
    }
    return grad;
}

/// Hessian at nodes strictly inside the box (NaN matrix elsewhere), or closed form.
inline std::vector<Mat3> node_hessians(const SignoriniSolution& sol) {
    const HalfGrid& g = sol.grid;
    const std::size_t N = g.size();
    Mat3 nanm;
    nanm.setConstant(kNaN);
    std::vector<Mat3> H(N, nanm);
    const int d = g.dim;
    const double ih2 = 1.0 / (g.h * g.h);
    for (std::size_t p = 0; p < N; ++p) {
        const auto c = g.ijk(p);
        if (sol.exact && sol.exact->hessian) {
            H[p] = sol.exact->hessian(g.coord(c));
            continue;
        }
        bool inside = true;
        for (int a = 0; a < d; ++a)
            if (c[a] == 0 || c[a] == g.shape[a] - 1) inside = false;
        if (!inside) continue;
        Mat3 M = Mat3::Zero();
        for (int a = 0; a < d; ++a) {
            const std::size_t sa = g.stride(a);
            M(a, a) = (sol.w[p + sa] - 2 * sol.w[p] + sol.w[p - sa]) * ih2;
            for (int b = a + 1; b < d; ++b) {
                const std::size_t sb = g.stride(b);
                M(a, b) = M(b, a) =
                    0.25 * ih2 * (sol.w[p + sa + sb] - sol.w[p + sa - sb] - sol.w[p - sa + sb] + sol.w[p - sa - sb]);
            }
        }
        H[p] = M;
    }
    return H;
}

/// Multilinear interpolation of a nodal array.
inline double interpolate(const HalfGrid& g, const std::vector<double>& f, const Vec3& x) {
    std::array<int, 3> base{0, 0, 0};
    std::array<double, 3> t{0, 0, 0};
    for (int a = 0; a < g.dim; ++a) {
        const double origin = a == g.dim - 1 ? 0.0 : -1.0;
        const double s = (x[a] - origin) / g.h;
        int i = std::clamp(int(std::floor(s)), 0, g.shape[a] - 2);
        base[a] = i;
        t[a] = std::clamp(s - i, 0.0, 1.0);
    }
    double acc = 0;
    const int corners = 1 << g.dim;
    for (int k = 0; k < corners; ++k) {
        double wgt = 1;
        auto c = base;
        for (int a = 0; a < g.dim; ++a) {
            const int bit = (k >> a) & 1;
            c[a] += bit;
            wgt *= bit ? t[a] : 1 - t[a];
        }
        if (wgt != 0) acc += wgt * f[g.index(c)];
    }
    return acc;
}

}  // namespace thinobs
