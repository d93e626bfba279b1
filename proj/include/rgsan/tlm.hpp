#pragma once

#include <cmath>
#include <stdexcept>

#include "rgsan/autodiff.hpp"
#include "rgsan/matrix.hpp"

namespace rgsan {

/// Per-round token state: segment kernel embeddings (N_t x D) and their 3D
/// positions (N_t x 3).
template <typename Real>
struct KernelState {
    Var<Real> embeddings;
    Var<Real> positions;
    int round = 0;
};

template <typename Real>
struct TlmParams {
    Var<Real> W_E, W_S, W_v;                    // D x D
    Var<Real> off_W1, off_b1, off_W2, off_b2;   // offset MLP D -> D -> 3, last layer zero-init
};

/// Row-stochastic token-to-superpoint distribution:
/// A_ij = exp((E0 W_E)_i . (S W_S)_j / sqrt(D)), row-normalized with max
/// subtraction.
template <typename Real>
Var<Real> cross_modal_similarity(Tape<Real>& tape, Var<Real> E0_hat, Var<Real> S_hat,
                                 const TlmParams<Real>& params) {
    if (!E0_hat.value().all_finite() || !S_hat.value().all_finite())
        throw std::invalid_argument("cross_modal_similarity: non-finite inputs");
    if (E0_hat.cols() != params.W_E.rows() || S_hat.cols() != params.W_S.rows())
        throw std::invalid_argument("cross_modal_similarity: dimension mismatch");
    const Real inv_sqrt_d = Real(1) / std::sqrt(static_cast<Real>(params.W_E.cols()));
    auto e = tape.matmul(E0_hat, params.W_E);
    auto s = tape.matmul(S_hat, params.W_S);
    return tape.softmax_rows(tape.scale(tape.matmul(e, tape.transpose(s)), inv_sqrt_d));
}

/// Round-0 kernels: positions and embeddings are both A-weighted sums over
/// the superpoints, sharing the same distribution.
template <typename Real>
KernelState<Real> text_driven_init(Tape<Real>& tape, Var<Real> A, Var<Real> S_hat,
                                   Var<Real> superpoint_positions, const TlmParams<Real>& params) {
    const auto& a = A.value();
    for (std::size_t r = 0; r < a.rows(); ++r) {
        Real sum = 0;
        for (std::size_t c = 0; c < a.cols(); ++c) sum += a(r, c);
        if (std::abs(static_cast<double>(sum) - 1.0) > 1e-4)
            throw std::invalid_argument("text_driven_init: unnormalized distribution");
    }
    KernelState<Real> state;
    state.positions = tape.matmul(A, superpoint_positions);
    state.embeddings = tape.matmul(A, tape.matmul(S_hat, params.W_v));
    state.round = 0;
    return state;
}

/// One refinement step: replace the embeddings and nudge every position by
/// the offset the MLP reads off the new embeddings.
template <typename Real>
KernelState<Real> refine_positions(Tape<Real>& tape, const KernelState<Real>& state,
                                   Var<Real> new_embeddings, const TlmParams<Real>& params) {
    auto hidden = tape.relu(tape.add_row_vector(tape.matmul(new_embeddings, params.off_W1), params.off_b1));
    auto offsets = tape.add_row_vector(tape.matmul(hidden, params.off_W2), params.off_b2);
    KernelState<Real> next;
    next.embeddings = new_embeddings;
    next.positions = tape.add(state.positions, offsets);
    next.round = state.round + 1;
    return next;
}

}  // namespace rgsan
