#include "chromareg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace chromareg {

namespace {

std::optional<Eigen::Vector3d> lift_index(const CameraIntrinsics& k, const DepthImage& depth, int pixel) {
    return lift(k, depth, {pixel / depth.width, pixel % depth.width});
}

}  // namespace

std::vector<bool> inlier_mask(const FineMatchSet& matches, const ColoredPointCloud& cloud, const RigidTransform& gt,
                              const DepthImage& depth, const CameraIntrinsics& k, double threshold) {
    std::vector<bool> out(matches.size(), false);
    for (std::size_t i = 0; i < matches.size(); ++i) {
        const auto p = lift_index(k, depth, matches[i].pixel);
        out[i] = p && (*p - gt.apply(cloud.positions.at(matches[i].point))).norm() <= threshold;
    }
    return out;
}

double inlier_ratio(const FineMatchSet& matches, const ColoredPointCloud& cloud, const RigidTransform& gt,
                    const DepthImage& depth, const CameraIntrinsics& k, double threshold) {
    if (matches.empty()) return 0.0;
    const auto mask = inlier_mask(matches, cloud, gt, depth, k, threshold);
    return static_cast<double>(std::count(mask.begin(), mask.end(), true)) / static_cast<double>(mask.size());
}

double feature_matching_recall(const std::vector<double>& irs, double tau) {
    if (irs.empty()) throw std::invalid_argument("feature_matching_recall: empty list");
    std::size_t hits = 0;
    for (double ir : irs) hits += ir >= tau;
    return static_cast<double>(hits) / static_cast<double>(irs.size());
}

double correspondence_rmse(const RigidTransform& est, const std::vector<std::pair<int, int>>& gt_pairs,
                           const ColoredPointCloud& cloud, const DepthImage& depth, const CameraIntrinsics& k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [m, p] : gt_pairs) {
        const auto x = lift_index(k, depth, m);
        if (!x) continue;
        sum += (*x - est.apply(cloud.positions.at(p))).squaredNorm();
        ++n;
    }
    if (n == 0) return std::numeric_limits<double>::infinity();
    return std::sqrt(sum / static_cast<double>(n));
}

bool is_registered(const PnPResult& result, const RigidTransform& gt, const std::vector<std::pair<int, int>>& gt_pairs,
                   const ColoredPointCloud& cloud, const DepthImage& depth, const CameraIntrinsics& k,
                   const EvalConfig& config) {
    if (!result.converged) return false;
    if (config.rr_criterion == RecallCriterion::kPoseError) {
        const PoseError e = pose_error(result.transform, gt);
        return e.rte_m <= config.rr_threshold && e.rre_deg <= config.rr_max_rre_deg;
    }
    return correspondence_rmse(result.transform, gt_pairs, cloud, depth, k) <= config.rr_threshold;
}

double registration_recall(const std::vector<bool>& registered) {
    if (registered.empty()) return 0.0;
    return static_cast<double>(std::count(registered.begin(), registered.end(), true)) /
           static_cast<double>(registered.size());
}

AggregateReport aggregate(const std::vector<PairReport>& reports, const EvalConfig& config) {
    std::map<int, std::vector<const PairReport*>> by_scene;
    for (const auto& r : reports) by_scene[r.scene].push_back(&r);
    AggregateReport out;
    for (const auto& [scene, rows] : by_scene) {
        SceneReport s;
        s.scene = scene;
        s.n_pairs = static_cast<int>(rows.size());
        std::vector<double> irs;
        std::vector<bool> flags;
        int converged = 0;
        for (const PairReport* r : rows) {
            irs.push_back(r->ir);
            flags.push_back(r->registered);
            s.ir += r->ir;
            s.pir += r->pir;
            if (r->converged) {
                ++converged;
                s.rte += r->rte;
                s.rre += r->rre;
            }
        }
        s.ir /= s.n_pairs;
        s.pir /= s.n_pairs;
        s.fmr = feature_matching_recall(irs, config.fmr_threshold);
        s.rr = registration_recall(flags);
        if (converged > 0) {
            s.rte /= converged;
            s.rre /= converged;
        }
        s.converged = static_cast<double>(converged) / s.n_pairs;
        out.scenes.push_back(s);
    }
    SceneReport& o = out.overall;
    for (const auto& s : out.scenes) {
        o.n_pairs += s.n_pairs;
        o.ir += s.ir;
        o.pir += s.pir;
        o.fmr += s.fmr;
        o.rr += s.rr;
        o.rte += s.rte;
        o.rre += s.rre;
        o.converged += s.converged;
    }
    if (!out.scenes.empty()) {
        const double n = static_cast<double>(out.scenes.size());
        o.ir /= n;
        o.pir /= n;
        o.fmr /= n;
        o.rr /= n;
        o.rte /= n;
        o.rre /= n;
        o.converged /= n;
    }
    return out;
}

}  // namespace chromareg
