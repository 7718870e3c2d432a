#include "chromareg/pose.hpp"

#include "chromareg/random.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace chromareg {

namespace {

constexpr int kMinimalSet = 6;

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

std::optional<double> residual_norm(const RigidTransform& t, const Correspondence2D3D& c, const CameraIntrinsics& k) {
    const auto uv = project_unbounded(k, t.apply(c.point));
    if (!uv) return std::nullopt;
    return (*uv - c.pixel).norm();
}

}  // namespace

std::size_t PnPResult::inlier_count() const { return static_cast<std::size_t>(std::count(inliers.begin(), inliers.end(), true)); }

RigidTransform pnp_minimal(const std::vector<Correspondence2D3D>& corrs, const CameraIntrinsics& k) {
    const auto n = static_cast<int>(corrs.size());
    if (n < kMinimalSet) throw std::invalid_argument("pnp_minimal: need at least 6 correspondences");

    Eigen::Vector3d mean3 = Eigen::Vector3d::Zero();
    Eigen::Vector2d mean2 = Eigen::Vector2d::Zero();
    std::vector<Eigen::Vector2d> rays(n);
    for (int i = 0; i < n; ++i) {
        rays[i] = {(corrs[i].pixel.x() - k.cx) / k.fx, (corrs[i].pixel.y() - k.cy) / k.fy};
        mean3 += corrs[i].point;
        mean2 += rays[i];
    }
    mean3 /= n;
    mean2 /= n;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    double spread3 = 0.0, spread2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d d = corrs[i].point - mean3;
        cov += d * d.transpose();
        spread3 += d.norm();
        spread2 += (rays[i] - mean2).norm();
    }
    spread3 /= n;
    spread2 /= n;
    if (!(spread3 > 0.0) || !(spread2 > 0.0)) throw DegenerateConfiguration("pnp_minimal: coincident points");
    const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(cov / n).eigenvalues();
    if (ev(0) <= 1e-10 * ev(2)) throw DegenerateConfiguration("pnp_minimal: points are coplanar");

    const double s3 = std::sqrt(3.0) / spread3, s2 = std::sqrt(2.0) / spread2;
    Eigen::Matrix4d t3 = Eigen::Matrix4d::Identity();
    t3.topLeftCorner<3, 3>() *= s3;
    t3.topRightCorner<3, 1>() = -s3 * mean3;
    Eigen::Matrix3d t2 = Eigen::Matrix3d::Identity();
    t2.topLeftCorner<2, 2>() *= s2;
    t2.topRightCorner<2, 1>() = -s2 * mean2;

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 12);
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector4d x = t3 * corrs[i].point.homogeneous();
        const Eigen::Vector2d u = (t2 * rays[i].homogeneous()).head<2>();
        a.block<1, 4>(2 * i, 0) = x.transpose();
        a.block<1, 4>(2 * i, 8) = -u.x() * x.transpose();
        a.block<1, 4>(2 * i + 1, 4) = x.transpose();
        a.block<1, 4>(2 * i + 1, 8) = -u.y() * x.transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd sv = svd.singularValues();
    if (sv(10) <= 1e-9 * sv(0)) throw DegenerateConfiguration("pnp_minimal: rank-deficient design matrix");
    const Eigen::VectorXd p = svd.matrixV().col(11);
    Eigen::Matrix<double, 3, 4> pn;
    pn << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), p(8), p(9), p(10), p(11);
    Eigen::Matrix<double, 3, 4> pm = t2.inverse() * pn * t3;

    Eigen::Matrix3d m = pm.leftCols<3>();
    if (m.determinant() < 0.0) {
        pm = -pm;
        m = -m;
    }
    const Eigen::Vector3d msv = Eigen::JacobiSVD<Eigen::Matrix3d>(m).singularValues();
    const double scale = msv.mean();
    if (!(scale > 0.0)) throw DegenerateConfiguration("pnp_minimal: degenerate projection matrix");
    const Eigen::Matrix3d r = nearest_rotation(m / scale);
    const Eigen::Vector3d t = pm.col(3) / scale;
    return RigidTransform::from_trusted(r, t);
}

double reprojection_cost(const RigidTransform& t, const std::vector<Correspondence2D3D>& corrs,
                         const CameraIntrinsics& k) {
    double cost = 0.0;
    for (const auto& c : corrs) {
        const auto r = residual_norm(t, c, k);
        if (!r) return std::numeric_limits<double>::infinity();
        cost += *r * *r;
    }
    return cost;
}

RefineResult refine(const RigidTransform& initial, const std::vector<Correspondence2D3D>& inliers,
                    const CameraIntrinsics& k, int iters) {
    RefineResult out;
    out.transform = initial;
    out.initial_cost = out.final_cost = reprojection_cost(initial, inliers, k);
    if (inliers.size() < static_cast<std::size_t>(kMinimalSet) || !std::isfinite(out.initial_cost)) return out;
    RigidTransform current = initial;
    double cost = out.initial_cost;
    out.converged = true;
    for (int it = 0; it < iters; ++it) {
        Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
        for (const auto& c : inliers) {
            const Eigen::Vector3d x = current.apply(c.point);
            const double iz = 1.0 / x.z();
            const Eigen::Vector2d r(k.fx * x.x() * iz + k.cx - c.pixel.x(), k.fy * x.y() * iz + k.cy - c.pixel.y());
            Eigen::Matrix<double, 2, 3> dp;
            dp << k.fx * iz, 0.0, -k.fx * x.x() * iz * iz, 0.0, k.fy * iz, -k.fy * x.y() * iz * iz;
            Eigen::Matrix<double, 3, 6> dx;
            dx.leftCols<3>() = -skew(x);
            dx.rightCols<3>() = Eigen::Matrix3d::Identity();
            const Eigen::Matrix<double, 2, 6> j = dp * dx;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(h);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().cwiseAbs().minCoeff() > 1e-12 * h.diagonal().maxCoeff())) {
            out.converged = false;
            break;
        }
        Eigen::Matrix<double, 6, 1> step = -ldlt.solve(g);
        if (!step.allFinite()) {
            out.converged = false;
            break;
        }
        ++out.iterations;
        bool accepted = false;
        for (int halving = 0; halving < 20; ++halving) {
            const Eigen::Matrix3d dr = so3_exp(step.head<3>());
            const RigidTransform candidate =
                RigidTransform::from_trusted(nearest_rotation(dr * current.rotation()), dr * current.translation() + step.tail<3>());
            const double c = reprojection_cost(candidate, inliers, k);
            if (c <= cost) {
                current = candidate;
                cost = c;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted || step.norm() < 1e-10) break;
    }
    if (!out.converged) return out;
    out.transform = current;
    out.final_cost = cost;
    return out;
}

PnPResult ransac_pnp(const std::vector<Correspondence2D3D>& corrs, const CameraIntrinsics& k,
                     const RansacOptions& options) {
    PnPResult result;
    const int n = static_cast<int>(corrs.size());
    result.inliers.assign(corrs.size(), false);
    if (n < kMinimalSet) return result;

    auto classify = [&](const RigidTransform& t, std::vector<bool>& mask) {
        std::size_t count = 0;
        for (int i = 0; i < n; ++i) {
            const auto r = residual_norm(t, corrs[i], k);
            mask[i] = r && *r < options.threshold_px;
            count += mask[i];
        }
        return count;
    };

    Rng rng(options.seed);
    std::vector<bool> mask(corrs.size()), best_mask(corrs.size(), false);
    std::size_t best_count = 0;
    RigidTransform best;
    long long bound = options.max_iters;
    std::vector<Correspondence2D3D> sample(kMinimalSet);
    int it = 0;
    for (; it < bound && it < options.max_iters; ++it) {
        const std::vector<int> idx = rng.sample_without_replacement(n, kMinimalSet);
        for (int j = 0; j < kMinimalSet; ++j) sample[j] = corrs[idx[j]];
        RigidTransform hyp;
        try {
            hyp = pnp_minimal(sample, k);
        } catch (const DegenerateConfiguration&) {
            continue;
        }
        const std::size_t count = classify(hyp, mask);
        if (count > best_count) {
            best_count = count;
            best = hyp;
            best_mask = mask;
            const double w = static_cast<double>(count) / n;
            const double denom = std::log(1.0 - std::pow(w, kMinimalSet));
            if (w >= 1.0)
                bound = it + 1;
            else if (denom < 0.0)
                bound = std::min<long long>(options.max_iters,
                                            static_cast<long long>(std::ceil(std::log(1.0 - options.confidence) / denom)));
        }
    }
    result.iterations = it;
    if (best_count < static_cast<std::size_t>(kMinimalSet)) return result;

    RigidTransform current = best;
    std::vector<bool> current_mask = best_mask;
    std::size_t current_count = best_count;
    for (int pass = 0; pass < 3; ++pass) {
        std::vector<Correspondence2D3D> in;
        for (int i = 0; i < n; ++i)
            if (current_mask[i]) in.push_back(corrs[i]);
        const RefineResult refined = refine(current, in, k, options.refine_iters);
        const std::size_t count = classify(refined.transform, mask);
        if (count < current_count) break;
        const bool same = mask == current_mask;
        current = refined.transform;
        current_mask = mask;
        current_count = count;
        if (same) break;
    }

    result.transform = current;
    result.inliers = current_mask;
    result.converged = current_count >= static_cast<std::size_t>(kMinimalSet);
    double err = 0.0;
    for (int i = 0; i < n; ++i)
        if (current_mask[i]) err += *residual_norm(current, corrs[i], k);
    result.mean_reprojection_error = err / static_cast<double>(current_count);
    if (!result.converged) result.transform = RigidTransform::identity();
    return result;
}

}  // namespace chromareg
