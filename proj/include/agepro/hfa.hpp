#pragma once

// Hidden factor analysis: f = m + U x + V y + eps with x ~ N(0, I_p) shared by
// all faces of one subject, y ~ N(0, I_q) shared by all faces of one age
// group, eps ~ N(0, sigma^2 I_d). Trained by block-coordinate variational EM.

#include <agepro/error.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace agepro {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct HfaConfig {
    int d = 0;  // face vector length; 0 = take it from the data
    int p = 10;
    int q = 100;
    int max_sweeps = 200;
    double elbo_rel_tol = 1e-6;
    std::uint64_t seed = 0;
    double sigma2_floor = 1e-10;

    void validate(int data_dim) const {
        if (d != 0 && d != data_dim)
            throw ShapeError("configured d=" + std::to_string(d) + " but faces have length " + std::to_string(data_dim));
        if (p <= 0 || q <= 0) throw ConfigError("p and q must be positive");
        if (p + q > data_dim) throw ConfigError("p + q exceeds the face dimension");
        if (!(elbo_rel_tol > 0.0)) throw ConfigError("elbo_rel_tol must be positive");
        if (max_sweeps <= 0) throw ConfigError("max_sweeps must be positive");
    }
};

/// Trained parameters plus the Woodbury machinery for applying Sigma^-1,
/// Sigma = sigma^2 I + U U^T + V V^T. Immutable once built.
class HfaModel {
public:
    HfaModel() = default;

    HfaModel(VectorXd mean, MatrixXd U, MatrixXd V, double sigma2)
        : mean_(std::move(mean)), U_(std::move(U)), V_(std::move(V)), sigma2_(sigma2) {
        if (U_.rows() != mean_.size() || V_.rows() != mean_.size()) throw ShapeError("HFA parameter sizes disagree");
        if (!(sigma2_ > 0.0)) throw NumericError("sigma^2 must be positive");
        if (!mean_.allFinite() || !U_.allFinite() || !V_.allFinite()) throw NumericError("non-finite HFA parameters");
        const int p = int(U_.cols()), q = int(V_.cols());
        MatrixXd core(p + q, p + q);
        core.topLeftCorner(p, p) = U_.transpose() * U_;
        core.topRightCorner(p, q) = U_.transpose() * V_;
        core.bottomLeftCorner(q, p) = core.topRightCorner(p, q).transpose();
        core.bottomRightCorner(q, q) = V_.transpose() * V_;
        core.diagonal().array() += sigma2_;
        core_ = core.ldlt();
        if (core_.info() != Eigen::Success) throw NumericError("Woodbury core factorisation failed");
    }

    int dim() const { return int(mean_.size()); }
    int identity_dim() const { return int(U_.cols()); }
    int age_dim() const { return int(V_.cols()); }
    const VectorXd& mean() const { return mean_; }
    const MatrixXd& U() const { return U_; }
    const MatrixXd& V() const { return V_; }
    double sigma2() const { return sigma2_; }

    /// W^T Sigma^-1 z with W = [U V], via the push-through identity
    /// W^T Sigma^-1 = (sigma^2 I + W^T W)^-1 W^T.
    VectorXd latent(const VectorXd& centered) const {
        check(centered);
        VectorXd wz(U_.cols() + V_.cols());
        wz.head(U_.cols()) = U_.transpose() * centered;
        wz.tail(V_.cols()) = V_.transpose() * centered;
        return core_.solve(wz);
    }

    void check(const VectorXd& v) const {
        if (v.size() != mean_.size())
            throw ShapeError("face vector has length " + std::to_string(v.size()) + ", model expects " +
                             std::to_string(mean_.size()));
    }

private:
    VectorXd mean_;
    MatrixXd U_;
    MatrixXd V_;
    double sigma2_ = 1.0;
    Eigen::LDLT<MatrixXd> core_;
};

/// Arithmetic mean of equally sized vectors.
inline VectorXd mean_face(std::span<const VectorXd> faces) {
    if (faces.empty()) throw EmptyInput("mean_face needs at least one vector");
    VectorXd acc = VectorXd::Zero(faces.front().size());
    for (const auto& f : faces) {
        if (f.size() != acc.size()) throw ShapeError("face vectors differ in length");
        acc += f;
    }
    return acc / double(faces.size());
}

/// U U^T Sigma^-1 (f - m).
inline VectorXd project_identity(const HfaModel& model, const VectorXd& f) {
    model.check(f);
    const VectorXd z = model.latent(f - model.mean());
    return model.U() * z.head(model.identity_dim());
}

/// V V^T Sigma^-1 (f - m).
inline VectorXd project_age(const HfaModel& model, const VectorXd& f) {
    model.check(f);
    const VectorXd z = model.latent(f - model.mean());
    return model.V() * z.tail(model.age_dim());
}

struct FaceDecomposition {
    VectorXd mean;
    VectorXd identity;
    VectorXd age;
    VectorXd residual;  // sigma^2 Sigma^-1 (f - m)
};

inline FaceDecomposition decompose(const HfaModel& model, const VectorXd& f) {
    model.check(f);
    const VectorXd centered = f - model.mean();
    const VectorXd z = model.latent(centered);
    FaceDecomposition out;
    out.mean = model.mean();
    out.identity = model.U() * z.head(model.identity_dim());
    out.age = model.V() * z.tail(model.age_dim());
    out.residual = centered - out.identity - out.age;
    return out;
}

/// Age component as used downstream: the age part and the residual merged,
/// f - m - U x.
inline VectorXd age_component(const HfaModel& model, const VectorXd& f) {
    return f - model.mean() - project_identity(model, f);
}

// ---------------------------------------------------------------------------
// Training

/// Faces as columns with dense subject and age-group labels.
struct HfaData {
    MatrixXd faces;             // d x N
    std::vector<int> subject;   // per column, in [0, subject_count)
    std::vector<int> group;     // per column, in [0, group_count)
    int subject_count = 0;
    int group_count = 0;

    int dim() const { return int(faces.rows()); }
    int size() const { return int(faces.cols()); }

    /// Builds from {(subject, group) -> faces}. Labels are renumbered densely
    /// in sorted order; columns follow map order.
    static HfaData from_grouped(const std::map<std::pair<int, int>, std::vector<VectorXd>>& cells) {
        std::map<int, int> subj, grp;
        Eigen::Index n = 0, d = -1;
        for (const auto& [key, faces] : cells) {
            subj.emplace(key.first, 0);
            grp.emplace(key.second, 0);
            for (const auto& f : faces) {
                if (d < 0) d = f.size();
                if (f.size() != d) throw ShapeError("face vectors differ in length");
                ++n;
            }
        }
        if (n == 0) throw EmptyInput("no training faces");
        int k = 0;
        for (auto& [_, v] : subj) v = k++;
        k = 0;
        for (auto& [_, v] : grp) v = k++;
        HfaData data;
        data.faces.resize(d, n);
        data.subject_count = int(subj.size());
        data.group_count = int(grp.size());
        Eigen::Index col = 0;
        for (const auto& [key, faces] : cells)
            for (const auto& f : faces) {
                data.faces.col(col++) = f;
                data.subject.push_back(subj.at(key.first));
                data.group.push_back(grp.at(key.second));
            }
        return data;
    }
};

struct TrainingState {
    MatrixXd identity_means;  // p x subjects, one <x_i> per subject
    MatrixXd age_means;       // q x groups, one <y_j> per group
    std::vector<double> elbo_history;
    int sweeps = 0;
    bool converged = false;
};

namespace detail {

// Top-k left singular pairs of A (d x n). Exact through the Gram matrix for
// narrow inputs, seeded randomised subspace iteration otherwise.
inline std::pair<MatrixXd, VectorXd> top_left_singular(const MatrixXd& A, int k, std::mt19937_64& rng) {
    k = std::min<int>(k, int(std::min(A.rows(), A.cols())));
    if (k <= 0) return {MatrixXd(A.rows(), 0), VectorXd(0)};
    if (A.cols() <= 512) {
        const MatrixXd gram = A.transpose() * A;
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram);
        MatrixXd dirs(A.rows(), k);
        VectorXd sv(k);
        for (int i = 0; i < k; ++i) {
            const int idx = int(gram.cols()) - 1 - i;  // eigenvalues ascend
            sv[i] = std::sqrt(std::max(0.0, es.eigenvalues()[idx]));
            dirs.col(i) = sv[i] > 0.0 ? VectorXd(A * es.eigenvectors().col(idx) / sv[i]) : VectorXd::Zero(A.rows());
        }
        return {dirs, sv};
    }
    std::normal_distribution<double> normal;
    const int l = std::min<int>(k + 10, int(A.cols()));
    MatrixXd omega(A.cols(), l);
    for (Eigen::Index j = 0; j < omega.cols(); ++j)
        for (Eigen::Index i = 0; i < omega.rows(); ++i) omega(i, j) = normal(rng);
    MatrixXd Q = MatrixXd(A * omega).householderQr().householderQ() * MatrixXd::Identity(A.rows(), l);
    for (int it = 0; it < 3; ++it) {
        const MatrixXd Z = MatrixXd(A.transpose() * Q).householderQr().householderQ() * MatrixXd::Identity(A.cols(), l);
        Q = MatrixXd(A * Z).householderQr().householderQ() * MatrixXd::Identity(A.rows(), l);
    }
    const MatrixXd B = Q.transpose() * A;
    Eigen::JacobiSVD<MatrixXd> svd(B, Eigen::ComputeThinU);
    return {Q * svd.matrixU().leftCols(k), svd.singularValues().head(k)};
}

// Appends seeded Gaussian columns, orthogonalised against `basis` and each
// other, scaled to `scale`.
inline MatrixXd random_columns(const MatrixXd& basis, int count, double scale, std::mt19937_64& rng) {
    const Eigen::Index d = basis.rows();
    std::normal_distribution<double> normal;
    MatrixXd all(d, basis.cols() + count);
    all.leftCols(basis.cols()) = basis;
    for (int c = 0; c < count; ++c) {
        VectorXd v(d);
        for (Eigen::Index i = 0; i < d; ++i) v[i] = normal(rng);
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index j = 0; j < basis.cols() + c; ++j) {
                const double nn = all.col(j).squaredNorm();
                if (nn > 0.0) v -= all.col(j) * (all.col(j).dot(v) / nn);
            }
        const double n = v.norm();
        all.col(basis.cols() + c) = n > 0.0 ? VectorXd(v / n) : VectorXd::Zero(d);
    }
    return all.rightCols(count) * scale;
}

}  // namespace detail

/// Block-coordinate EM. Each sweep updates q(x) for all subjects, q(y) for
/// all groups, then U, V and sigma^2, every step an exact maximisation of the
/// structured mean-field ELBO, which is recorded after the sweep.
inline std::pair<HfaModel, TrainingState> train(const HfaData& data, const HfaConfig& cfg) {
    const int d = data.dim(), N = data.size();
    cfg.validate(d);
    if (int(data.subject.size()) != N || int(data.group.size()) != N) throw ShapeError("label count mismatch");
    if (data.subject_count < 2 || data.group_count < 2)
        throw DataError("training needs at least two identities and two age groups");
    if (!data.faces.allFinite()) throw NumericError("training faces contain non-finite values");
    const int p = cfg.p, q = cfg.q, I = data.subject_count, J = data.group_count;
    std::mt19937_64 rng(cfg.seed);

    const VectorXd m = data.faces.rowwise().mean();

    // Sufficient statistics of the centred data.
    MatrixXd subj_sum = MatrixXd::Zero(d, I), group_sum = MatrixXd::Zero(d, J);
    VectorXd n_subj = VectorXd::Zero(I), n_group = VectorXd::Zero(J);
    MatrixXd cross = MatrixXd::Zero(I, J);  // samples per (subject, group)
    for (int n = 0; n < N; ++n) {
        const int i = data.subject[std::size_t(n)], j = data.group[std::size_t(n)];
        if (i < 0 || i >= I || j < 0 || j >= J) throw ShapeError("label out of range");
        subj_sum.col(i) += data.faces.col(n) - m;
        group_sum.col(j) += data.faces.col(n) - m;
        n_subj[i] += 1;
        n_group[j] += 1;
        cross(i, j) += 1;
    }
    if ((n_subj.array() == 0).any() || (n_group.array() == 0).any())
        throw DataError("every subject and group label needs at least one face");

    // Initialisation: between-subject and between-group principal directions.
    MatrixXd U(d, p), V(d, q);
    double sigma2 = 0.0;
    {
        MatrixXd subj_dev = subj_sum, group_dev = group_sum;
        for (int i = 0; i < I; ++i) subj_dev.col(i) /= std::sqrt(n_subj[i] * N);
        for (int j = 0; j < J; ++j) group_dev.col(j) /= std::sqrt(n_group[j] * N);
        auto [du, su] = detail::top_left_singular(subj_dev, std::min(p, I - 1), rng);
        auto [dv, sv] = detail::top_left_singular(group_dev, std::min(q, J - 1), rng);
        const double total = (data.faces.colwise() - m).squaredNorm();
        auto keep = [](const VectorXd& s) {
            int r = 0;
            while (r < s.size() && s[r] > 1e-10 * std::max(s[0], 1e-300)) ++r;
            return r;
        };
        const int ru = keep(su), rv = keep(sv);
        MatrixXd basis(d, ru + rv);
        basis << du.leftCols(ru), dv.leftCols(rv);
        // Residual variance outside the span of the found directions.
        const MatrixXd Qb = basis.cols() > 0 ? MatrixXd(basis.householderQr().householderQ() *
                                                         MatrixXd::Identity(d, basis.cols()))
                                             : MatrixXd(d, 0);
        const double explained = basis.cols() > 0 ? (Qb.transpose() * (data.faces.colwise() - m)).squaredNorm() : 0.0;
        sigma2 = std::max((total - explained) / (double(N) * d), cfg.sigma2_floor);
        const double fill = std::sqrt(sigma2);
        U.leftCols(ru) = du.leftCols(ru) * su.head(ru).asDiagonal();
        V.leftCols(rv) = dv.leftCols(rv) * sv.head(rv).asDiagonal();
        MatrixXd taken(d, ru + rv);
        taken << U.leftCols(ru), V.leftCols(rv);
        if (ru < p) U.rightCols(p - ru) = detail::random_columns(taken, p - ru, fill, rng);
        MatrixXd taken2(d, p + rv);
        taken2 << U, V.leftCols(rv);
        if (rv < q) V.rightCols(q - rv) = detail::random_columns(taken2, q - rv, fill, rng);
    }

    MatrixXd X = MatrixXd::Zero(p, I), Y = MatrixXd::Zero(q, J);
    std::vector<MatrixXd> cov_x(static_cast<std::size_t>(I)), cov_y(static_cast<std::size_t>(J));
    TrainingState state;
    const double log2pi = std::log(2.0 * std::numbers::pi);

    for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
        double kl_sum = 0.0;  // sum of -KL(q || prior)
        auto block_update = [&](const MatrixXd& B, const VectorXd& counts, const MatrixXd& rhs, MatrixXd& means,
                                std::vector<MatrixXd>& covs) {
            const int k = int(B.cols());
            const MatrixXd BtB = B.transpose() * B;
            std::map<double, std::pair<Eigen::LLT<MatrixXd>, MatrixXd>> cache;  // by sample count
            for (Eigen::Index c = 0; c < means.cols(); ++c) {
                auto it = cache.find(counts[c]);
                if (it == cache.end()) {
                    MatrixXd A = counts[c] * BtB;
                    A.diagonal().array() += sigma2;
                    Eigen::LLT<MatrixXd> llt(A);
                    if (llt.info() != Eigen::Success) throw NumericError("posterior precision not positive definite");
                    MatrixXd cov = sigma2 * llt.solve(MatrixXd::Identity(k, k));
                    it = cache.emplace(counts[c], std::make_pair(std::move(llt), std::move(cov))).first;
                }
                means.col(c) = it->second.first.solve(rhs.col(c));
                covs[std::size_t(c)] = it->second.second;
                const Eigen::LLT<MatrixXd> cl(covs[std::size_t(c)]);
                const double logdet = 2.0 * cl.matrixLLT().diagonal().array().log().sum();
                kl_sum += 0.5 * (logdet + k - covs[std::size_t(c)].trace() - means.col(c).squaredNorm());
            }
        };

        // E-step, identities (ages fixed): rhs_i = U^T sum_n (f_n - m - V<y_g(n)>).
        const MatrixXd rhs_x = U.transpose() * subj_sum - (U.transpose() * V) * (Y * cross.transpose());
        block_update(U, n_subj, rhs_x, X, cov_x);
        // E-step, age groups (identities fixed).
        const MatrixXd rhs_y = V.transpose() * group_sum - (V.transpose() * U) * (X * cross);
        block_update(V, n_group, rhs_y, Y, cov_y);

        // M-step for U given V, then V given the new U.
        {
            MatrixXd den = MatrixXd::Zero(p, p);
            for (int i = 0; i < I; ++i) den += n_subj[i] * (cov_x[std::size_t(i)] + X.col(i) * X.col(i).transpose());
            const MatrixXd num = subj_sum * X.transpose() - V * (Y * cross.transpose() * X.transpose());
            U = den.ldlt().solve(num.transpose()).transpose();
        }
        {
            MatrixXd den = MatrixXd::Zero(q, q);
            for (int j = 0; j < J; ++j) den += n_group[j] * (cov_y[std::size_t(j)] + Y.col(j) * Y.col(j).transpose());
            const MatrixXd num = group_sum * Y.transpose() - U * (X * cross * Y.transpose());
            V = den.ldlt().solve(num.transpose()).transpose();
        }

        // M-step for sigma^2: expected squared residual per coordinate.
        const MatrixXd UX = U * X, VY = V * Y;
        double expected = 0.0;
        for (int n = 0; n < N; ++n) {
            const int i = data.subject[std::size_t(n)], j = data.group[std::size_t(n)];
            expected += (data.faces.col(n) - m - UX.col(i) - VY.col(j)).squaredNorm();
        }
        {
            const MatrixXd UtU = U.transpose() * U, VtV = V.transpose() * V;
            for (int i = 0; i < I; ++i) expected += n_subj[i] * (UtU.cwiseProduct(cov_x[std::size_t(i)])).sum();
            for (int j = 0; j < J; ++j) expected += n_group[j] * (VtV.cwiseProduct(cov_y[std::size_t(j)])).sum();
        }
        sigma2 = std::max(expected / (double(N) * d), cfg.sigma2_floor);
        if (!std::isfinite(sigma2) || !U.allFinite() || !V.allFinite()) throw NumericError("EM diverged");

        const double elbo =
            -0.5 * double(N) * d * (log2pi + std::log(sigma2)) - 0.5 * expected / sigma2 + kl_sum;
        state.elbo_history.push_back(elbo);
        state.sweeps = sweep + 1;
        if (state.elbo_history.size() >= 2) {
            const double prev = state.elbo_history[state.elbo_history.size() - 2];
            if (std::abs(elbo - prev) <= cfg.elbo_rel_tol * std::max(std::abs(prev), 1e-300)) {
                state.converged = true;
                break;
            }
        }
    }
    state.identity_means = std::move(X);
    state.age_means = std::move(Y);
    return {HfaModel(m, std::move(U), std::move(V), sigma2), std::move(state)};
}

}  // namespace agepro
