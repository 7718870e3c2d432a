#include "chromareg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace chromareg {

FeatureMatrix normalize_rows(const FeatureMatrix& m) {
    FeatureMatrix out = m;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double n = out.row(r).norm();
        if (n > 0.0) out.row(r) /= n;
    }
    return out;
}

FeatureMatrix dual_normalized_scores(const FeatureMatrix& image_tokens, const FeatureMatrix& point_tokens) {
    if (image_tokens.cols() != point_tokens.cols()) throw std::invalid_argument("coarse_match: feature widths differ");
    const FeatureMatrix f = normalize_rows(image_tokens);
    const FeatureMatrix g = normalize_rows(point_tokens);
    FeatureMatrix s(f.rows(), g.rows());
    for (Eigen::Index i = 0; i < f.rows(); ++i)
        for (Eigen::Index j = 0; j < g.rows(); ++j) s(i, j) = std::exp(-(f.row(i) - g.row(j)).squaredNorm());
    const Eigen::VectorXd row_sum = s.rowwise().sum();
    const Eigen::RowVectorXd col_sum = s.colwise().sum();
    FeatureMatrix out(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i)
        for (Eigen::Index j = 0; j < s.cols(); ++j) out(i, j) = (s(i, j) / row_sum(i)) * (s(i, j) / col_sum(j));
    return out;
}

CoarseMatchSet coarse_match(const FeatureMatrix& image_tokens, const FeatureMatrix& point_tokens, int top_k) {
    CoarseMatchSet out;
    if (image_tokens.rows() == 0 || point_tokens.rows() == 0 || top_k < 1) return out;
    const FeatureMatrix s = dual_normalized_scores(image_tokens, point_tokens);
    out.reserve(static_cast<std::size_t>(s.size()));
    for (Eigen::Index i = 0; i < s.rows(); ++i)
        for (Eigen::Index j = 0; j < s.cols(); ++j)
            out.push_back({static_cast<int>(i), static_cast<int>(j), s(i, j)});
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(top_k), out.size());
    auto better = [](const CoarseMatch& a, const CoarseMatch& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.patch != b.patch) return a.patch < b.patch;
        return a.superpoint < b.superpoint;
    };
    std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(k), out.end(), better);
    out.resize(k);
    return out;
}

FineMatchSet fine_match(const CoarseMatchSet& coarse, const FeatureMatrix& image_fine, const FeatureMatrix& point_fine,
                        const MatchGeometry& geometry, double floor) {
    if (image_fine.cols() != point_fine.cols()) throw std::invalid_argument("fine_match: feature widths differ");
    const FeatureMatrix f = normalize_rows(image_fine);
    const FeatureMatrix g = normalize_rows(point_fine);
    FineMatchSet out;
    for (std::size_t c = 0; c < coarse.size(); ++c) {
        const auto& tokens = geometry.patch_tokens.at(coarse[c].patch);
        const auto& points = geometry.superpoint_points.at(coarse[c].superpoint);
        if (tokens.empty() || points.empty()) continue;
        FeatureMatrix sub_f(static_cast<Eigen::Index>(tokens.size()), f.cols());
        FeatureMatrix sub_g(static_cast<Eigen::Index>(points.size()), g.cols());
        for (std::size_t i = 0; i < tokens.size(); ++i) sub_f.row(static_cast<Eigen::Index>(i)) = f.row(tokens[i]);
        for (std::size_t j = 0; j < points.size(); ++j) sub_g.row(static_cast<Eigen::Index>(j)) = g.row(points[j]);
        const FeatureMatrix sim = sub_f * sub_g.transpose();
        // Strict '>' keeps the first (lowest-index) maximum.
        std::vector<Eigen::Index> row_best(sim.rows(), 0), col_best(sim.cols(), 0);
        for (Eigen::Index i = 0; i < sim.rows(); ++i)
            for (Eigen::Index j = 1; j < sim.cols(); ++j)
                if (sim(i, j) > sim(i, row_best[i])) row_best[i] = j;
        for (Eigen::Index j = 0; j < sim.cols(); ++j)
            for (Eigen::Index i = 1; i < sim.rows(); ++i)
                if (sim(i, j) > sim(col_best[j], j)) col_best[j] = i;
        for (Eigen::Index i = 0; i < sim.rows(); ++i) {
            const Eigen::Index j = row_best[i];
            if (col_best[j] != i) continue;
            const double confidence = std::exp(-(sub_f.row(i) - sub_g.row(j)).squaredNorm());
            if (!(confidence > floor)) continue;
            const int token = tokens[i];
            out.push_back({geometry.token_pixel.at(token), points[j], token, static_cast<int>(c), confidence});
        }
    }
    return out;
}

double patch_inlier_ratio(const CoarseMatchSet& coarse, const CorrespondenceSet& gt,
                          const std::vector<int>& patch_of_pixel, const std::vector<int>& superpoint_of_point) {
    if (coarse.empty()) return 0.0;
    std::set<std::pair<int, int>> covered;
    for (const auto& [m, n] : gt.pairs()) covered.emplace(patch_of_pixel.at(m), superpoint_of_point.at(n));
    std::size_t hits = 0;
    for (const auto& c : coarse) hits += covered.count({c.patch, c.superpoint});
    return static_cast<double>(hits) / static_cast<double>(coarse.size());
}

}  // namespace chromareg
