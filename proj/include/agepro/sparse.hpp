#pragma once

// Age dictionaries and the L1 homotopy (regularisation path) solver for
//   min_a 1/2 |y - D a|^2 + lambda |a|_1
// traced from lambda_0 = |D^T y|_inf downwards.

#include <agepro/error.hpp>
#include <agepro/log.hpp>
#include <agepro/region.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace agepro {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Age components of one (group, region) cell. Atoms are stored with unit
/// norm; the original norms are kept alongside.
struct AgeDictionary {
    MatrixXd atoms;          // n x K, unit columns
    VectorXd column_norms;   // K
    int group_id = 0;
    Region region = Region::skin;

    int size() const { return int(atoms.cols()); }
    int length() const { return int(atoms.rows()); }
    /// Atom j at its original scale.
    VectorXd original_atom(int j) const { return atoms.col(j) * column_norms[j]; }
};

inline AgeDictionary build_dictionary(const MatrixXd& columns, int group_id, Region region) {
    if (columns.cols() == 0) throw EmptyInput("dictionary needs at least one atom");
    if (columns.rows() == 0) throw ShapeError("dictionary atoms are empty");
    if (!columns.allFinite()) throw NumericError("dictionary atoms contain non-finite values");
    AgeDictionary dict;
    dict.group_id = group_id;
    dict.region = region;
    dict.column_norms = columns.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < columns.cols(); ++j)
        if (!(dict.column_norms[j] > 0.0)) throw DegenerateAtom("atom " + std::to_string(j) + " is the zero vector");
    dict.atoms = columns * dict.column_norms.cwiseInverse().asDiagonal();
    return dict;
}

inline AgeDictionary build_dictionary(std::span<const VectorXd> components, int group_id, Region region) {
    if (components.empty()) throw EmptyInput("dictionary needs at least one atom");
    MatrixXd cols(components.front().size(), Eigen::Index(components.size()));
    for (std::size_t j = 0; j < components.size(); ++j) {
        if (components[j].size() != cols.rows()) throw ShapeError("dictionary atoms differ in length");
        cols.col(Eigen::Index(j)) = components[j];
    }
    return build_dictionary(cols, group_id, region);
}

struct SolverStop {
    int max_support = 1;
    double lambda_ratio = 0.01;  // 0 traces the path all the way to lambda = 0
    double kkt_tol = 1e-8;

    /// ceil(K/10) atoms, 1% of lambda_0.
    static SolverStop defaults_for(int atoms) { return {std::max(1, (atoms + 9) / 10), 0.01, 1e-8}; }

    void validate() const {
        if (max_support < 1) throw ConfigError("max_support must be at least 1");
        if (!(lambda_ratio >= 0.0 && lambda_ratio < 1.0)) throw ConfigError("lambda_ratio must lie in [0, 1)");
        if (!(kkt_tol > 0.0)) throw ConfigError("kkt_tol must be positive");
    }
};

struct SparseCode {
    VectorXd coefficients;
    double lambda_final = 0.0;
    int support_size = 0;
    double kkt_residual = 0.0;
    int breakpoints = 0;
    bool rank_deficient = false;
};

struct PathPoint {
    double lambda = 0.0;
    VectorXd coefficients;
};

/// Largest violation of the stationarity conditions of the L1 problem at
/// `lambda`, with gradient g = D^T (D a - y): |g_j + lambda sign(a_j)| on the
/// support, max(0, |g_j| - lambda) off it.
inline double kkt_residual(const MatrixXd& D, const VectorXd& y, const VectorXd& alpha, double lambda) {
    if (D.rows() != y.size() || D.cols() != alpha.size()) throw ShapeError("kkt_residual: inconsistent sizes");
    const VectorXd g = D.transpose() * (D * alpha - y);
    double worst = 0.0;
    for (Eigen::Index j = 0; j < g.size(); ++j) {
        const double v = alpha[j] != 0.0 ? std::abs(g[j] + lambda * (alpha[j] > 0 ? 1.0 : -1.0))
                                         : std::max(0.0, std::abs(g[j]) - lambda);
        worst = std::max(worst, v);
    }
    return worst;
}

namespace detail {

struct ActiveSolve {
    VectorXd solution;
    bool rank_deficient = false;
};

// Solves G x = b on the active Gram matrix; minimum-norm when singular.
inline ActiveSolve solve_active(const MatrixXd& G, const VectorXd& b) {
    Eigen::LDLT<MatrixXd> ldlt(G);
    const double scale = std::max(G.diagonal().maxCoeff(), 1e-300);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() &&
        ldlt.vectorD().minCoeff() > 1e-12 * scale)
        return {ldlt.solve(b), false};
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(G);
    cod.setThreshold(1e-12);
    return {cod.solve(b), true};
}

}  // namespace detail

/// Full homotopy path on a unit-column dictionary. Returns the breakpoints in
/// decreasing lambda; the last entry is the solution at the stopping rule.
inline std::vector<PathPoint> homotopy_path(const MatrixXd& D, const VectorXd& y, const SolverStop& stop,
                                            bool* rank_deficient = nullptr) {
    stop.validate();
    if (D.rows() != y.size()) throw ShapeError("signal length does not match the dictionary");
    if (!y.allFinite() || !D.allFinite()) throw NumericError("non-finite solver input");
    const int K = int(D.cols());
    std::vector<PathPoint> path;
    VectorXd alpha = VectorXd::Zero(K);
    VectorXd c = D.transpose() * y;
    Eigen::Index first = 0;
    const double lambda0 = c.cwiseAbs().maxCoeff(&first);  // lowest index wins ties
    path.push_back({lambda0, alpha});
    if (lambda0 == 0.0) return path;
    const double floor = stop.lambda_ratio * lambda0;
    const double snap = 1e-10 * lambda0;

    std::vector<int> active{int(first)};
    std::vector<double> sign{c[first] > 0 ? 1.0 : -1.0};
    std::vector<char> in_active(std::size_t(K), 0);
    in_active[std::size_t(first)] = 1;
    double lambda = lambda0;
    int just_dropped = -1;  // may not come straight back with its old sign
    double dropped_sign = 0.0;
    bool warned = false;

    auto exact_alpha = [&](double lam) {
        const Eigen::Index a = Eigen::Index(active.size());
        MatrixXd DA(D.rows(), a);
        VectorXd s(a);
        for (Eigen::Index k = 0; k < a; ++k) {
            DA.col(k) = D.col(active[std::size_t(k)]);
            s[k] = sign[std::size_t(k)];
        }
        const MatrixXd G = DA.transpose() * DA;
        const auto dir = detail::solve_active(G, s);
        const auto sol = detail::solve_active(G, DA.transpose() * y - lam * s);
        if (sol.rank_deficient && !warned) {
            log_warning("homotopy: rank-deficient active set, using the minimum-norm solution");
            warned = true;
            if (rank_deficient) *rank_deficient = true;
        }
        alpha.setZero();
        for (Eigen::Index k = 0; k < a; ++k) {
            double v = sol.solution[k];
            if (v * s[k] < 0.0 && std::abs(v) <= snap) v = 0.0;  // rounding residue of an entry
            alpha[active[std::size_t(k)]] = v;
        }
        return std::make_pair(DA, dir.solution);
    };

    const int max_steps = 20 * K + 100;
    for (int step = 0; step < max_steps && lambda > floor; ++step) {
        auto [DA, delta] = exact_alpha(lambda);
        c = D.transpose() * (y - D * alpha);
        const VectorXd a = D.transpose() * (DA * delta);

        double gamma = lambda - floor;
        enum { kFloor, kEnter, kDrop } event = kFloor;
        int who = -1;
        double who_sign = 0.0;
        for (int j = 0; j < K; ++j) {
            if (in_active[std::size_t(j)]) continue;
            for (const double sgn : {1.0, -1.0}) {
                if (j == just_dropped && sgn == dropped_sign) continue;
                const double den = 1.0 - sgn * a[j];
                if (den <= 1e-12) continue;  // moves in lockstep with the active set
                const double g = std::max(0.0, (lambda - sgn * c[j]) / den);
                if (g < gamma) {
                    gamma = g;
                    event = kEnter;
                    who = j;
                    who_sign = sgn;
                }
            }
        }
        // A coefficient leaves when it reaches zero moving against its sign;
        // one already on the wrong side (rounding at entry) leaves at once.
        for (std::size_t k = 0; k < active.size(); ++k) {
            const double ak = alpha[active[k]], dk = delta[Eigen::Index(k)], s = sign[k];
            if (dk * s >= 0.0) continue;
            const double g = ak * s <= 0.0 ? 0.0 : -ak / dk;
            if (g < gamma) {
                gamma = g;
                event = kDrop;
                who = int(k);
            }
        }

        lambda = std::max(lambda - gamma, floor);
        just_dropped = -1;
        if (event == kFloor) {
            lambda = floor;
            exact_alpha(lambda);
            path.push_back({lambda, alpha});
            break;
        }
        if (event == kDrop) {
            const int j = active[std::size_t(who)];
            in_active[std::size_t(j)] = 0;
            just_dropped = j;
            dropped_sign = sign[std::size_t(who)];
            active.erase(active.begin() + who);
            sign.erase(sign.begin() + who);
            exact_alpha(lambda);
            path.push_back({lambda, alpha});
            continue;
        }
        // Entry event.
        exact_alpha(lambda);
        path.push_back({lambda, alpha});
        if (int(active.size()) >= stop.max_support) break;
        active.push_back(who);
        sign.push_back(who_sign);
        in_active[std::size_t(who)] = 1;
    }
    // Coefficients that sit at zero are off the support.
    for (auto& pt : path)
        for (Eigen::Index j = 0; j < pt.coefficients.size(); ++j)
            if (std::abs(pt.coefficients[j]) <= 1e-15 * lambda0) pt.coefficients[j] = 0.0;
    return path;
}

inline SparseCode homotopy_solve(const AgeDictionary& dict, const VectorXd& y, const SolverStop& stop) {
    bool rank_deficient = false;
    const auto path = homotopy_path(dict.atoms, y, stop, &rank_deficient);
    SparseCode code;
    code.coefficients = path.back().coefficients;
    code.lambda_final = path.back().lambda;
    code.support_size = int((code.coefficients.array() != 0.0).count());
    code.kkt_residual = kkt_residual(dict.atoms, y, code.coefficients, code.lambda_final);
    code.breakpoints = int(path.size()) - 1;
    code.rank_deficient = rank_deficient;
#ifndef NDEBUG
    if (code.kkt_residual > stop.kkt_tol)
        throw NumericError("homotopy solution fails the KKT check: " + std::to_string(code.kkt_residual));
#endif
    return code;
}

/// Sum of coefficient-weighted unit atoms.
inline VectorXd reconstruct(const AgeDictionary& dict, const SparseCode& code) {
    if (code.coefficients.size() != dict.size()) throw ShapeError("code length does not match the dictionary");
    return dict.atoms * code.coefficients;
}

}  // namespace agepro
