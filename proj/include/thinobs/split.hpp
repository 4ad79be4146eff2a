// SPDX-License-Identifier: MIT
#pragma once

#include "thinobs/free_boundary.hpp"
#include "thinobs/sparse.hpp"

namespace thinobs {

/// w = u + u_tilde where u_tilde absorbs the lower-order part of the
/// divergence-form operator through a strongly coercive equation.
struct SplitPair {
    HalfGrid grid;
    std::vector<double> u_tilde;
    std::vector<double> u;
    std::vector<double> dist_to_fb;
    std::vector<double> dist_to_contact;
    double consistency = 0;  ///< max |w - u - u_tilde|
    int iterations_tilde = 0, iterations_u = 0;
};

namespace detail {

/// Row of the non-divergence operator a^{ij} d_ij at a free node; neighbors
/// outside the free set are reported to `dirichlet` instead of `free`.
/// Thin-plane rows use the even reflection across x_{n+1} = 0.
template <class Free, class Dirichlet>
void nondivergence_row(const HalfGrid& g, const MetricField& m, std::size_t p, double& diag, Free&& free_fn,
                       Dirichlet&& dir_fn, const std::vector<int>& unknown) {
    const int d = g.dim, km = vertical_index(d);
    const auto c = g.ijk(p);
    const bool thin = g.kind(c) == NodeKind::thin_plane;
    const Mat3 a = m.eval(g.coord(c));
    const double ih2 = 1.0 / (g.h * g.h);
    diag = 0;
    auto emit = [&](std::array<int, 3> nb, double coef) {
        const std::size_t q = g.index(nb);
        if (unknown[q] >= 0) free_fn(unknown[q], coef);
        else dir_fn(q, coef);
    };
    for (int ax = 0; ax < d; ++ax) {
        auto up = c, dn = c;
        ++up[ax];
        --dn[ax];
        if (thin && ax == km) {
            diag -= 2 * a(ax, ax) * ih2;
            emit(up, 2 * a(ax, ax) * ih2);
        } else {
            diag -= 2 * a(ax, ax) * ih2;
            emit(up, a(ax, ax) * ih2);
            emit(dn, a(ax, ax) * ih2);
        }
    }
    if (m.diagonal) return;
    for (int ax = 0; ax < d; ++ax)
        for (int bx = ax + 1; bx < d; ++bx) {
            if (thin && bx == km) continue;
            const double coef = 2 * a(ax, bx) * 0.25 * ih2;
            for (int sa = -1; sa <= 1; sa += 2)
                for (int sb = -1; sb <= 1; sb += 2) {
                    auto nb = c;
                    nb[ax] += sa;
                    nb[bx] += sb;
                    emit(nb, sa * sb * coef);
                }
        }
}

}  // namespace detail

/// Solves the split pair on the nodes off the contact set. The right side of
/// the u_tilde equation is f - (D_h - N_h) w with D_h the assembled
/// divergence-form operator and N_h the non-divergence one, which is the
/// discrete counterpart of f - (d_i a^{ij}) d_j w and makes u + u_tilde = w
/// hold to the Signorini residual.
inline SplitPair solve_split(const ProblemSpec& spec, const DiscreteOperator& op, const SignoriniSolution& sol,
                             const FreeBoundaryModel& fbm) {
    if (fbm.fb_points.empty()) fail_numerical("distance field degenerate: no free boundary");
    const HalfGrid& g = sol.grid;
    const MetricField& m = spec.metric;
    const int d = g.dim, km = vertical_index(d);
    const std::size_t N = g.size();

    SplitPair sp;
    sp.grid = g;
    sp.dist_to_fb.resize(N);
    sp.dist_to_contact.resize(N);
    std::vector<char> contact(N, 0);
    for (std::size_t p : fbm.contact_nodes) contact[p] = 1;
    std::vector<int> unknown(N, -1);
    int n_free = 0;
    for (std::size_t p = 0; p < N; ++p) {
        const Vec3 x = g.coord(p);
        const double dg = std::max(fbm.distance(x), 0.5 * g.h);
        sp.dist_to_fb[p] = dg;
        sp.dist_to_contact[p] = fbm.side(x) < 0 ? x[km] : dg;
        if (g.kind(p) == NodeKind::outer_boundary || contact[p]) continue;
        unknown[p] = n_free++;
    }
    if (n_free == 0) fail_numerical("split: no free nodes");

    using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
    std::vector<Eigen::Triplet<double>> trip_n;
    trip_n.reserve(std::size_t(n_free) * (d == 3 ? 19 : 9));
    Eigen::VectorXd rhs_t(n_free), rhs_u(n_free);
    std::vector<std::size_t> node_of(static_cast<std::size_t>(n_free));
    for (std::size_t p = 0; p < N; ++p) {
        const int r = unknown[p];
        if (r < 0) continue;
        node_of[std::size_t(r)] = p;
        double diag = 0, dir_u = 0;
        detail::nondivergence_row(
            g, m, p, diag, [&](int col, double coef) { trip_n.emplace_back(r, col, coef); },
            [&](std::size_t q, double coef) {
                if (!contact[q]) dir_u += coef * sol.w[q];
            },
            unknown);
        trip_n.emplace_back(r, r, diag);
        rhs_u(r) = -dir_u;
    }
    SpMat Nmat(n_free, n_free);
    Nmat.setFromTriplets(trip_n.begin(), trip_n.end());

    // N_h w over all neighbors, including Dirichlet and contact values
    for (int r = 0; r < n_free; ++r) {
        const std::size_t p = node_of[std::size_t(r)];
        double acc = 0, diag = 0;
        detail::nondivergence_row(
            g, m, p, diag, [&](int col, double coef) { acc += coef * sol.w[node_of[std::size_t(col)]]; },
            [&](std::size_t q, double coef) { acc += coef * sol.w[q]; }, unknown);
        acc += diag * sol.w[p];
        const double dw = -op.apply_row(p, sol.w);
        rhs_t(r) = spec.f_at(g.coord(p)) - (dw - acc);
    }

    SpMat Mt = Nmat;
    for (int r = 0; r < n_free; ++r) {
        const double dg = sp.dist_to_fb[node_of[std::size_t(r)]];
        Mt.coeffRef(r, r) -= 1.0 / (dg * dg);
    }
    const Eigen::VectorXd ut = detail::solve_sparse(Mt, rhs_t, sp.iterations_tilde);
    sp.u_tilde.assign(N, 0.0);
    for (int r = 0; r < n_free; ++r) sp.u_tilde[node_of[std::size_t(r)]] = ut(r);

    for (int r = 0; r < n_free; ++r) {
        const double dg = sp.dist_to_fb[node_of[std::size_t(r)]];
        rhs_u(r) += -ut(r) / (dg * dg);
    }
    const Eigen::VectorXd uu = detail::solve_sparse(Nmat, rhs_u, sp.iterations_u);
    sp.u.assign(N, 0.0);
    for (std::size_t p = 0; p < N; ++p)
        if (g.kind(p) == NodeKind::outer_boundary && !contact[p]) sp.u[p] = sol.w[p];
    for (int r = 0; r < n_free; ++r) sp.u[node_of[std::size_t(r)]] = uu(r);

    for (std::size_t p = 0; p < N; ++p)
        sp.consistency = std::max(sp.consistency, std::abs(sol.w[p] - sp.u[p] - sp.u_tilde[p]));
    return sp;
}

/// Shell-wise max of |field| against dist(x, Gamma), restricted to nodes within
/// `window` of `center` so that the outer boundary layer does not enter.
inline DecayReport distance_decay(const SplitPair& sp, const std::vector<double>& field, const Vec3& center,
                                  double window = 0.5, double r_max = 0.25) {
    const HalfGrid& g = sp.grid;
    std::vector<double> rad, err;
    for (std::size_t p = 0; p < g.size(); ++p) {
        const Vec3 x = g.coord(p);
        if (distance(x, center, g.dim) > window) continue;
        rad.push_back(sp.dist_to_fb[p]);
        err.push_back(field[p]);
    }
    DecayReport rep;
    rep.shells = dyadic_shells(rad, err, g.h, r_max);
    if (rep.shells.size() < 2) fail_numerical("insufficient shells for decay regression");
    double emax = 0, scale = 0;
    for (const auto& s : rep.shells) emax = std::max(emax, s.max_err);
    for (std::size_t p = 0; p < g.size(); ++p) scale = std::max(scale, std::abs(field[p]));
    rep.exact = emax <= 1e-12 * std::max(1.0, scale);
    rep.exponent = rep.exact ? std::numeric_limits<double>::infinity() : shell_slope(rep.shells);
    return rep;
}

}  // namespace thinobs
