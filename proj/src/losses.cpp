#include "chromareg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace chromareg {

double color_loss_pair(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double alpha) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += std::sqrt((a[c] - b[c]) * (a[c] - b[c]) + alpha);
    return s / 3.0;
}

ColorLossResult color_loss(const Var& pixel_colors, const Var& point_colors, double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("color_loss: alpha must be positive");
    if (pixel_colors.rows() != point_colors.rows() || pixel_colors.cols() != 3 || point_colors.cols() != 3)
        throw std::invalid_argument("color_loss: expected two aligned P x 3 color matrices");
    if (pixel_colors.rows() == 0) return {ad::constant(ad::Matrix::Zero(1, 1)), true};
    return {ad::mean_all(ad::sqrt_eps(ad::square(ad::sub(pixel_colors, point_colors)), alpha)), false};
}

Var soft_match_colors(const Var& queries, const Var& keys, const std::vector<std::vector<int>>& candidates,
                      const Eigen::MatrixXd& key_colors, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("soft_match_colors: temperature must be positive");
    if (static_cast<std::size_t>(queries.rows()) != candidates.size() || queries.cols() != keys.cols() ||
        key_colors.rows() != keys.rows() || key_colors.cols() != 3)
        throw std::invalid_argument("soft_match_colors: shape mismatch");
    const ad::Matrix& q = queries.value();
    const ad::Matrix& k = keys.value();
    const double inv_t = 1.0 / temperature;
    ad::Matrix out = ad::Matrix::Zero(q.rows(), 3);
    std::vector<Eigen::VectorXd> probs(candidates.size());
    for (std::size_t a = 0; a < candidates.size(); ++a) {
        const auto& c = candidates[a];
        if (c.empty()) continue;
        Eigen::VectorXd s(static_cast<Eigen::Index>(c.size()));
        for (std::size_t j = 0; j < c.size(); ++j) s(static_cast<Eigen::Index>(j)) = q.row(static_cast<Eigen::Index>(a)).dot(k.row(c[j])) * inv_t;
        const Eigen::VectorXd e = (s.array() - s.maxCoeff()).exp().matrix();
        probs[a] = e / e.sum();
        for (std::size_t j = 0; j < c.size(); ++j) out.row(static_cast<Eigen::Index>(a)) += probs[a](static_cast<Eigen::Index>(j)) * key_colors.row(c[j]);
    }
    auto nq = queries.node(), nk = keys.node();
    return ad::make_op(std::move(out), {queries, keys},
                       [nq, nk, candidates, key_colors, probs = std::move(probs), inv_t](const ad::Matrix& g) {
                           const ad::Matrix& qv = nq->value;
                           const ad::Matrix& kv = nk->value;
                           ad::Matrix gq = ad::Matrix::Zero(qv.rows(), qv.cols());
                           ad::Matrix gk = ad::Matrix::Zero(kv.rows(), kv.cols());
                           for (std::size_t a = 0; a < candidates.size(); ++a) {
                               const auto& c = candidates[a];
                               if (c.empty()) continue;
                               const auto ai = static_cast<Eigen::Index>(a);
                               const Eigen::VectorXd& p = probs[a];
                               Eigen::VectorXd dp(p.size());
                               for (std::size_t j = 0; j < c.size(); ++j) dp(static_cast<Eigen::Index>(j)) = g.row(ai).dot(key_colors.row(c[j]));
                               const double mean = p.dot(dp);
                               for (std::size_t j = 0; j < c.size(); ++j) {
                                   const auto ji = static_cast<Eigen::Index>(j);
                                   const double ds = p(ji) * (dp(ji) - mean) * inv_t;
                                   if (ds == 0.0) continue;
                                   gq.row(ai) += ds * kv.row(c[j]);
                                   gk.row(c[j]) += ds * qv.row(ai);
                               }
                           }
                           if (nq->requires_grad) nq->accumulate(gq);
                           if (nk->requires_grad) nk->accumulate(gk);
                       });
}

PairMining mine_pairs(const std::vector<std::pair<int, int>>& pairs, const std::vector<int>& anchor_of,
                      const std::vector<int>& candidate_of, int n_anchors, int n_candidates,
                      double positive_threshold) {
    std::vector<std::map<int, int>> counts(static_cast<std::size_t>(n_anchors));
    std::vector<int> totals(static_cast<std::size_t>(n_anchors), 0);
    for (const auto& [a, b] : pairs) {
        const int ta = anchor_of.at(a), tb = candidate_of.at(b);
        if (ta < 0 || ta >= n_anchors || tb < 0 || tb >= n_candidates)
            throw std::out_of_range("mine_pairs: token index out of range");
        ++counts[ta][tb];
        ++totals[ta];
    }
    PairMining mining;
    for (int a = 0; a < n_anchors; ++a) {
        if (totals[a] == 0) continue;
        Anchor anchor;
        anchor.index = a;
        for (int c = 0; c < n_candidates; ++c) {
            const auto it = counts[a].find(c);
            if (it == counts[a].end())
                anchor.negatives.push_back(c);
            else if (static_cast<double>(it->second) >= positive_threshold * totals[a])
                anchor.positives.push_back(c);
        }
        if (!anchor.positives.empty() && !anchor.negatives.empty()) mining.anchors.push_back(std::move(anchor));
    }
    return mining;
}

PairMining cap_anchors(const PairMining& mining, int max_anchors, Rng& rng) {
    const int n = static_cast<int>(mining.anchors.size());
    if (n <= max_anchors) return mining;
    std::vector<int> keep = rng.sample_without_replacement(n, max_anchors);
    std::sort(keep.begin(), keep.end());
    PairMining out;
    for (int i : keep) out.anchors.push_back(mining.anchors[i]);
    return out;
}

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// log sum exp over `v`, and the normalized weights.
double log_sum_exp(const std::vector<double>& v, std::vector<double>& weights) {
    const double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    weights.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) s += (weights[i] = std::exp(v[i] - mx));
    for (auto& w : weights) w /= s;
    return mx + std::log(s);
}

}  // namespace

CircleWeights circle_weights(const Var& anchor_features, const Var& candidate_features, const PairMining& mining,
                             const LossConfig& config) {
    const ad::Matrix& a = anchor_features.value();
    const ad::Matrix& b = candidate_features.value();
    CircleWeights w;
    for (const auto& anc : mining.anchors) {
        if (anc.index < 0 || anc.index >= a.rows()) throw std::out_of_range("feature_loss: anchor index");
        auto& wp = w.positive.emplace_back();
        auto& wn = w.negative.emplace_back();
        for (int j : anc.positives) wp.push_back(std::max((a.row(anc.index) - b.row(j)).norm() - config.delta_p, 0.0));
        for (int k : anc.negatives) wn.push_back(std::max(config.delta_n - (a.row(anc.index) - b.row(k)).norm(), 0.0));
    }
    return w;
}

Var feature_loss(const Var& anchor_features, const Var& candidate_features, const PairMining& mining,
                 const LossConfig& config) {
    if (mining.anchors.empty()) return ad::constant(ad::Matrix::Zero(1, 1));
    return feature_loss(anchor_features, candidate_features, mining, config,
                        circle_weights(anchor_features, candidate_features, mining, config));
}

Var feature_loss(const Var& anchor_features, const Var& candidate_features, const PairMining& mining,
                 const LossConfig& config, const CircleWeights& weights) {
    if (anchor_features.cols() != candidate_features.cols())
        throw std::invalid_argument("feature_loss: descriptor widths differ");
    if (mining.anchors.empty()) return ad::constant(ad::Matrix::Zero(1, 1));
    if (weights.positive.size() != mining.anchors.size() || weights.negative.size() != mining.anchors.size())
        throw std::invalid_argument("feature_loss: weights do not match the anchors");
    const ad::Matrix& a = anchor_features.value();
    const ad::Matrix& b = candidate_features.value();
    const double gamma = config.gamma, dp = config.delta_p, dn = config.delta_n;
    const double inv_n = 1.0 / static_cast<double>(mining.anchors.size());

    struct Term {
        int anchor, candidate;
        double coefficient;  ///< d(loss) / d(distance)
    };
    std::vector<Term> terms;
    double total = 0.0;
    std::vector<double> ep, en, sp, sn;
    for (std::size_t i = 0; i < mining.anchors.size(); ++i) {
        const auto& anc = mining.anchors[i];
        const auto& lp = weights.positive[i];
        const auto& ln = weights.negative[i];
        if (anc.index < 0 || anc.index >= a.rows()) throw std::out_of_range("feature_loss: anchor index");
        ep.clear();
        en.clear();
        for (std::size_t j = 0; j < anc.positives.size(); ++j)
            ep.push_back(gamma * lp[j] * ((a.row(anc.index) - b.row(anc.positives[j])).norm() - dp));
        for (std::size_t k = 0; k < anc.negatives.size(); ++k)
            en.push_back(gamma * ln[k] * (dn - (a.row(anc.index) - b.row(anc.negatives[k])).norm()));
        const double z = log_sum_exp(ep, sp) + log_sum_exp(en, sn);
        total += softplus(z) / gamma;
        const double s = sigmoid(z) * inv_n;
        for (std::size_t j = 0; j < anc.positives.size(); ++j)
            terms.push_back({anc.index, anc.positives[j], s * sp[j] * lp[j]});
        for (std::size_t k = 0; k < anc.negatives.size(); ++k)
            terms.push_back({anc.index, anc.negatives[k], -s * sn[k] * ln[k]});
    }
    ad::Matrix out(1, 1);
    out(0, 0) = total * inv_n;
    auto na = anchor_features.node(), nb = candidate_features.node();
    return ad::make_op(std::move(out), {anchor_features, candidate_features},
                       [na, nb, terms = std::move(terms)](const ad::Matrix& g) {
                           const ad::Matrix& av = na->value;
                           const ad::Matrix& bv = nb->value;
                           ad::Matrix ga = ad::Matrix::Zero(av.rows(), av.cols());
                           ad::Matrix gb = ad::Matrix::Zero(bv.rows(), bv.cols());
                           for (const auto& t : terms) {
                               if (t.coefficient == 0.0) continue;
                               const Eigen::RowVectorXd diff = av.row(t.anchor) - bv.row(t.candidate);
                               const double d = diff.norm();
                               if (d < 1e-12) continue;
                               const Eigen::RowVectorXd step = (g(0, 0) * t.coefficient / d) * diff;
                               ga.row(t.anchor) += step;
                               gb.row(t.candidate) -= step;
                           }
                           if (na->requires_grad) na->accumulate(ga);
                           if (nb->requires_grad) nb->accumulate(gb);
                       });
}

Var overall_loss(const Var& color, const Var& feature) { return ad::add_scalars({color, feature}); }

}  // namespace chromareg
