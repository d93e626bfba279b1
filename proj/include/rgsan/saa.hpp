#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgsan/autodiff.hpp"
#include "rgsan/matrix.hpp"
#include "rgsan/tlm.hpp"

namespace rgsan {

enum class PeKind { none, fourier_ape, table_rpe, euclidean_rpe_5d };

inline PeKind pe_kind_from_string(const std::string& s) {
    if (s == "none") return PeKind::none;
    if (s == "fourier_ape") return PeKind::fourier_ape;
    if (s == "table_rpe") return PeKind::table_rpe;
    if (s == "euclidean_rpe_5d") return PeKind::euclidean_rpe_5d;
    throw std::invalid_argument("unknown positional encoding kind: " + s);
}

inline std::string to_string(PeKind k) {
    switch (k) {
        case PeKind::none: return "none";
        case PeKind::fourier_ape: return "fourier_ape";
        case PeKind::table_rpe: return "table_rpe";
        case PeKind::euclidean_rpe_5d: return "euclidean_rpe_5d";
    }
    return "?";
}

/// Geometric frequency ladder for the Fourier features; count 0 means
/// "as many as the target width needs".
struct FourierLadder {
    double base = 0.5;
    double factor = 2.0;
    int count = 0;
};

struct PosEncodingConfig {
    PeKind kind = PeKind::table_rpe;
    int d_model = 32;
    double rpe_range = 4.0;  // meters; displacements clamp to [-range, range]
    int rpe_bins = 17;       // odd, so zero displacement hits the center bin
    FourierLadder fourier;

    void validate() const {
        if (kind == PeKind::euclidean_rpe_5d)
            throw std::invalid_argument("euclidean_rpe_5d: not implemented");
        if (d_model < 1) throw std::invalid_argument("d_model must be positive");
        if (!(rpe_range > 0)) throw std::invalid_argument("rpe_range must be positive");
        if (rpe_bins < 3 || rpe_bins % 2 == 0)
            throw std::invalid_argument("rpe_bins must be odd and at least 3");
    }
};

/// Parameters of one decoder round. Single attention head throughout; the
/// RPE table is 3 x bins (one row of bias bins per displacement axis).
template <typename Real>
struct SaaRoundParams {
    Var<Real> sa_Wq, sa_Wk, sa_Wv;          // D x D
    Var<Real> ln1_g, ln1_b;                 // 1 x D
    Var<Real> W_query, W_key;               // 2D x 2D
    Var<Real> W_val;                        // D x D
    Var<Real> rpe_table;                    // 3 x rpe_bins
    Var<Real> ln2_g, ln2_b;                 // 1 x D
    Var<Real> ffn_W1, ffn_b1, ffn_W2, ffn_b2;
    Var<Real> ln3_g, ln3_b;
};

/// Sinusoidal absolute encoding of 3D positions, cycling (axis, sin/cos)
/// pairs across a geometric frequency ladder and truncating or zero-padding
/// to width D. Differentiable in the positions; kind none yields zeros.
template <typename Real>
Var<Real> absolute_pos_encoding(Tape<Real>& tape, Var<Real> positions, const PosEncodingConfig& config) {
    const std::size_t d = static_cast<std::size_t>(config.d_model);
    if (config.kind == PeKind::none)
        return tape.constant(Matrix<Real>(positions.rows(), d, Real(0)));

    const int per_freq = 6;  // 3 axes x {sin, cos}
    int n_freq = config.fourier.count;
    if (n_freq <= 0) n_freq = static_cast<int>((d + per_freq - 1) / per_freq);
    std::vector<int> axes, is_cos;
    std::vector<Real> freqs;
    double f = config.fourier.base;
    for (int k = 0; k < n_freq; ++k) {
        for (int axis = 0; axis < 3; ++axis)
            for (int c = 0; c < 2; ++c) {
                if (axes.size() == d) break;
                axes.push_back(axis);
                is_cos.push_back(c);
                freqs.push_back(static_cast<Real>(f));
            }
        f *= config.fourier.factor;
    }
    if (axes.size() > d) {
        axes.resize(d);
        is_cos.resize(d);
        freqs.resize(d);
    }
    return tape.sincos_encode(positions, axes, freqs, is_cos, d);
}

template <typename Real>
struct AttentionResult {
    Var<Real> weights;   // row-stochastic attention matrix
    Var<Real> attended;  // pre-residual weighted sum
    Var<Real> output;    // post residual/norm (and FFN for the cross block)
};

/// Eq-7 style block: queries and keys are the kernels plus their absolute
/// encodings, values are the kernels; residual add then layer norm.
template <typename Real>
AttentionResult<Real> spatial_self_attention(Tape<Real>& tape, Var<Real> E, Var<Real> B_t,
                                             const SaaRoundParams<Real>& params) {
    if (E.rows() != B_t.rows() || E.cols() != B_t.cols())
        throw std::invalid_argument("spatial_self_attention: shape mismatch");
    const Real inv_sqrt_d = Real(1) / std::sqrt(static_cast<Real>(E.cols()));
    auto qk_input = tape.add(E, B_t);
    auto q = tape.matmul(qk_input, params.sa_Wq);
    auto k = tape.matmul(qk_input, params.sa_Wk);
    auto v = tape.matmul(E, params.sa_Wv);
    AttentionResult<Real> res;
    res.weights = tape.softmax_rows(tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_d));
    res.attended = tape.matmul(res.weights, v);
    res.output = tape.layer_norm_rows(tape.add(E, res.attended), params.ln1_g, params.ln1_b);
    return res;
}

/// Axis-wise displacement bin: clamp to [-range, range], then round to the
/// nearest of `bins` uniform bin centers.
inline int rpe_bin_index(double displacement, double range, int bins) {
    const double d = std::min(std::max(displacement, -range), range);
    const double t = (d + range) / (2.0 * range);  // [0, 1]
    int idx = static_cast<int>(std::floor(t * (bins - 1) + 0.5));
    if (idx < 0) idx = 0;
    if (idx > bins - 1) idx = bins - 1;
    return idx;
}

/// Table-based relative position bias over token/superpoint displacements.
/// Quantization makes the positions enter as constants; only the table
/// learns. Any kind other than table_rpe yields an all-zero bias.
template <typename Real>
Var<Real> relative_pos_bias(Tape<Real>& tape, const Matrix<Real>& token_positions,
                            const Matrix<Real>& superpoint_positions,
                            const SaaRoundParams<Real>& params, const PosEncodingConfig& config) {
    const std::size_t n_t = token_positions.rows(), n_s = superpoint_positions.rows();
    if (config.kind != PeKind::table_rpe)
        return tape.constant(Matrix<Real>(n_t, n_s, Real(0)));
    const int bins = config.rpe_bins;
    std::vector<int> flat(n_t * n_s * 3);
    for (std::size_t i = 0; i < n_t; ++i)
        for (std::size_t j = 0; j < n_s; ++j) {
            const std::size_t base = (i * n_s + j) * 3;
            for (int axis = 0; axis < 3; ++axis) {
                const double disp = static_cast<double>(token_positions(i, axis)) -
                                    static_cast<double>(superpoint_positions(j, axis));
                flat[base + axis] = axis * bins + rpe_bin_index(disp, config.rpe_range, bins);
            }
        }
    return tape.table_gather3(params.rpe_table, std::move(flat), n_t, n_s);
}

/// Eq-8/10 cross block: queries concat the kernels with their APE, keys
/// concat the superpoints with theirs, the bias adds to the logits, and the
/// output passes residual + norm + feed-forward + norm.
template <typename Real>
AttentionResult<Real> multimodal_aggregate(Tape<Real>& tape, Var<Real> E_dot, Var<Real> B_t,
                                           Var<Real> S_hat, Var<Real> B_s, Var<Real> B_r,
                                           const SaaRoundParams<Real>& params) {
    if (E_dot.rows() != B_t.rows() || S_hat.rows() != B_s.rows())
        throw std::invalid_argument("multimodal_aggregate: shape mismatch");
    const Real inv_sqrt_d = Real(1) / std::sqrt(static_cast<Real>(E_dot.cols()));
    auto Q = tape.matmul(tape.concat_cols(E_dot, B_t), params.W_query);
    auto K = tape.matmul(tape.concat_cols(S_hat, B_s), params.W_key);
    auto logits = tape.add(tape.scale(tape.matmul(Q, tape.transpose(K)), inv_sqrt_d), B_r);
    AttentionResult<Real> res;
    res.weights = tape.softmax_rows(logits);
    res.attended = tape.matmul(res.weights, tape.matmul(S_hat, params.W_val));
    auto x = tape.layer_norm_rows(tape.add(E_dot, res.attended), params.ln2_g, params.ln2_b);
    auto h = tape.relu(tape.add_row_vector(tape.matmul(x, params.ffn_W1), params.ffn_b1));
    auto ffn = tape.add_row_vector(tape.matmul(h, params.ffn_W2), params.ffn_b2);
    res.output = tape.layer_norm_rows(tape.add(x, ffn), params.ln3_g, params.ln3_b);
    return res;
}

template <typename Real>
struct DecoderRound {
    KernelState<Real> state;            // after this round's position refinement
    AttentionResult<Real> self_attention;
    AttentionResult<Real> cross_attention;
};

/// Runs L rounds: APE of both position sets, spatial self-attention,
/// bias-augmented multimodal aggregation, then position refinement.
/// Superpoint positions are static, so their encoding is computed per round
/// only because the tape is per-sample anyway.
template <typename Real>
std::vector<DecoderRound<Real>> run_decoder(Tape<Real>& tape, const KernelState<Real>& state0,
                                            Var<Real> S_hat, Var<Real> superpoint_positions,
                                            const std::vector<SaaRoundParams<Real>>& rounds,
                                            const TlmParams<Real>& tlm_params,
                                            const PosEncodingConfig& config, int L) {
    if (L < 1) throw std::invalid_argument("run_decoder: need at least one round");
    if (static_cast<int>(rounds.size()) < L)
        throw std::invalid_argument("run_decoder: fewer round parameter sets than rounds");
    std::vector<DecoderRound<Real>> out;
    out.reserve(L);
    KernelState<Real> state = state0;
    auto B_s = absolute_pos_encoding(tape, superpoint_positions, config);
    for (int l = 0; l < L; ++l) {
        const auto& p = rounds[l];
        DecoderRound<Real> round;
        auto B_t = absolute_pos_encoding(tape, state.positions, config);
        round.self_attention = spatial_self_attention(tape, state.embeddings, B_t, p);
        auto B_r = relative_pos_bias(tape, state.positions.value(), superpoint_positions.value(), p, config);
        round.cross_attention = multimodal_aggregate(tape, round.self_attention.output, B_t,
                                                     S_hat, B_s, B_r, p);
        state = refine_positions(tape, state, round.cross_attention.output, tlm_params);
        round.state = state;
        out.push_back(std::move(round));
    }
    return out;
}

}  // namespace rgsan
