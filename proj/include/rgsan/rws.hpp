#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rgsan/autodiff.hpp"
#include "rgsan/text.hpp"

namespace rgsan {

namespace detail {

inline bool contains(const std::vector<std::string>& set, const std::string& s) {
    return std::find(set.begin(), set.end(), s) != set.end();
}

/// First edge by increasing tail index among edges headed at `node` whose
/// relation passes `match`; -1 when none.
template <typename Pred>
int first_out_edge(const DependencyTree& tree, int node, Pred match) {
    int best = -1;
    for (std::size_t e = 0; e < tree.edges.size(); ++e) {
        const auto& edge = tree.edges[e];
        if (edge.head != node || !match(edge.relation)) continue;
        if (best < 0 || edge.tail < tree.edges[best].tail) best = static_cast<int>(e);
    }
    return best;
}

/// First incident edge by increasing tail index with a matching relation.
inline int first_incident_edge(const DependencyTree& tree, int node,
                               const std::vector<std::string>& relations) {
    int best = -1;
    for (std::size_t e = 0; e < tree.edges.size(); ++e) {
        const auto& edge = tree.edges[e];
        if (edge.head != node && edge.tail != node) continue;
        if (!contains(relations, edge.relation)) continue;
        if (best < 0 || edge.tail < tree.edges[best].tail) best = static_cast<int>(e);
    }
    return best;
}

}  // namespace detail

/// Rule-guided target selection over a dependency tree. Three rule stages run
/// once each, starting at the root:
///   (a) follow the first nsubj/compound edge out of the current node unless
///       the current token is "which"/"that";
///   (b) from a placeholder token (there/this/it/object) follow the first
///       edge out of it, any relation;
///   (c) from a container/attribute token (set/sets/color/shape) cross the
///       first incident compound/nmod/dep edge to its other endpoint.
/// "First" always means lowest tail index. A stage with no matching edge
/// leaves the index unchanged, so the result is always a valid index.
inline int select_target_index(const DependencyTree& tree) {
    static const std::vector<std::string> a_relations{"nsubj", "compound"};
    static const std::vector<std::string> a_guard{"which", "that"};
    static const std::vector<std::string> b_words{"there", "this", "it", "object"};
    static const std::vector<std::string> c_words{"set", "sets", "color", "shape"};
    static const std::vector<std::string> c_relations{"compound", "nmod", "dep"};

    int i = tree.root;

    const int a_edge = detail::first_out_edge(tree, i, [](const std::string& r) {
        return detail::contains(a_relations, r);
    });
    if (a_edge >= 0 && !detail::contains(a_guard, tree.tokens[i])) i = tree.edges[a_edge].tail;

    if (detail::contains(b_words, tree.tokens[i])) {
        const int b_edge = detail::first_out_edge(tree, i, [](const std::string&) { return true; });
        if (b_edge >= 0) i = tree.edges[b_edge].tail;
    }

    if (detail::contains(c_words, tree.tokens[i])) {
        const int c_edge = detail::first_incident_edge(tree, i, c_relations);
        if (c_edge >= 0)
            i = tree.edges[c_edge].head == i ? tree.edges[c_edge].tail : tree.edges[c_edge].head;
    }

    return i;
}

/// Ablation stand-in for rule-guided selection: the token whose strongest
/// cross-attention weight is largest, lowest index on ties.
template <typename Real>
int top1_target_index(const Matrix<Real>& cross_attention) {
    int best = 0;
    Real best_weight = Real(-1);
    for (std::size_t i = 0; i < cross_attention.rows(); ++i) {
        Real row_max = Real(0);
        for (std::size_t j = 0; j < cross_attention.cols(); ++j)
            row_max = std::max(row_max, cross_attention(i, j));
        if (row_max > best_weight) {
            best_weight = row_max;
            best = static_cast<int>(i);
        }
    }
    return best;
}

struct LossWeights {
    double bce = 1.0;
    double dice = 1.0;
    double pos = 0.5;
    double score = 0.5;
};

template <typename Real>
struct ResponseMap {
    Var<Real> probs;                  // 1 x N_s sigmoid responses
    std::vector<std::uint8_t> mask;   // probs > 0.5, strict
};

/// Eq-11/12: dot the target kernel against every superpoint feature row,
/// squash, and threshold strictly at 0.5.
template <typename Real>
ResponseMap<Real> response_map(Tape<Real>& tape, Var<Real> target_kernel, Var<Real> S_hat) {
    if (target_kernel.rows() != 1 || target_kernel.cols() != S_hat.cols())
        throw std::invalid_argument("response_map: kernel must be 1 x D matching the bank");
    ResponseMap<Real> out;
    out.probs = tape.sigmoid(tape.matmul(target_kernel, tape.transpose(S_hat)));
    out.mask.resize(S_hat.rows());
    for (std::size_t j = 0; j < S_hat.rows(); ++j)
        out.mask[j] = out.probs.value()(0, j) > Real(0.5) ? 1 : 0;
    return out;
}

template <typename Real>
Var<Real> constant_mask_row(Tape<Real>& tape, const std::vector<std::uint8_t>& mask) {
    Matrix<Real> m(1, mask.size());
    for (std::size_t j = 0; j < mask.size(); ++j) m(0, j) = mask[j] ? Real(1) : Real(0);
    return tape.constant(std::move(m));
}

/// Mean binary cross entropy with probabilities clamped to [eps, 1-eps].
template <typename Real>
Var<Real> bce_loss(Tape<Real>& tape, Var<Real> probs, const std::vector<std::uint8_t>& target,
                   Real eps = Real(1e-7)) {
    if (probs.value().size() != target.size())
        throw std::invalid_argument("bce_loss: length mismatch");
    auto y = constant_mask_row(tape, target);
    auto ones = tape.constant(Matrix<Real>(1, target.size(), Real(1)));
    auto m = tape.clamp(probs, eps, Real(1) - eps);
    auto pos_term = tape.hadamard(y, tape.log_e(m));
    auto neg_term = tape.hadamard(tape.sub(ones, y), tape.log_e(tape.sub(ones, m)));
    return tape.neg(tape.mean_all(tape.add(pos_term, neg_term)));
}

/// Dice loss with +1 smoothing on both sides of the ratio.
template <typename Real>
Var<Real> dice_loss(Tape<Real>& tape, Var<Real> probs, const std::vector<std::uint8_t>& target) {
    if (probs.value().size() != target.size())
        throw std::invalid_argument("dice_loss: length mismatch");
    auto y = constant_mask_row(tape, target);
    auto numer = tape.add_const(tape.scale(tape.sum_all(tape.hadamard(probs, y)), Real(2)), Real(1));
    auto denom = tape.add_const(tape.add(tape.sum_all(probs), tape.sum_all(y)), Real(1));
    return tape.add_const(tape.neg(tape.div(numer, denom)), Real(1));
}

/// Mean absolute coordinate error between the predicted and true centers.
template <typename Real>
Var<Real> position_loss(Tape<Real>& tape, Var<Real> predicted_position,
                        const std::array<Real, 3>& target_position) {
    if (predicted_position.rows() != 1 || predicted_position.cols() != 3)
        throw std::invalid_argument("position_loss: predicted position must be 1 x 3");
    Matrix<Real> gt(1, 3);
    for (int c = 0; c < 3; ++c) gt(0, c) = target_position[c];
    return tape.mean_all(tape.abs(tape.sub(predicted_position, tape.constant(std::move(gt)))));
}

/// Intersection over union of two binary masks; empty vs empty counts as 1.
inline double binary_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("binary_iou: length mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        uni += (a[i] || b[i]) ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Squared error between the predicted quality score and the realized IoU of
/// the thresholded mask. The IoU enters as a constant.
template <typename Real>
Var<Real> score_loss(Tape<Real>& tape, Var<Real> predicted_score, Real realized_iou) {
    if (predicted_score.value().size() != 1)
        throw std::invalid_argument("score_loss: score must be scalar");
    return tape.square(tape.add_const(predicted_score, -realized_iou));
}

template <typename Real>
struct LossTerms {
    Var<Real> bce, dice, pos, score;
};

template <typename Real>
struct LossBundleValues {
    double bce = 0, dice = 0, pos = 0, score = 0, total = 0;
};

/// Eq-17 weighted sum.
template <typename Real>
Var<Real> total_loss(Tape<Real>& tape, const LossTerms<Real>& terms, const LossWeights& w) {
    auto sum = tape.scale(terms.bce, static_cast<Real>(w.bce));
    sum = tape.add(sum, tape.scale(terms.dice, static_cast<Real>(w.dice)));
    sum = tape.add(sum, tape.scale(terms.pos, static_cast<Real>(w.pos)));
    sum = tape.add(sum, tape.scale(terms.score, static_cast<Real>(w.score)));
    return sum;
}

}  // namespace rgsan
