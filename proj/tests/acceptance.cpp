// Acceptance suite: every release criterion as one hard pass/fail line.
// Run the binary with no arguments for the full gate, or --only N during
// development. Exit code is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cstring>
#include <iostream>
#include <vector>

#include "rgsan/synth.hpp"
#include "rgsan/train.hpp"
#include "target_selection_cases.hpp"

using namespace rgsan;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

bool report(int id, const char* name, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << "criterion " << id << " (" << name << "): "
              << detail << "\n"
              << std::flush;
    return pass;
}

// ---- criterion 1: gradient soundness ----------------------------------------

bool criterion_gradients() {
    Timer timer;
    auto rep = grad_check(0);
    double worst = 0;
    std::string worst_name = "-";
    for (const auto& g : rep.groups)
        if (g.max_rel_err > worst) {
            worst = g.max_rel_err;
            worst_name = g.name;
        }
    const double elapsed = timer.seconds();
    const bool pass = rep.pass && elapsed < 10.0;
    char detail[160];
    std::snprintf(detail, sizeof(detail), "%zu groups, worst rel err %.3g (%s), %.2fs (budget 10s)",
                  rep.groups.size(), worst, worst_name.c_str(), elapsed);
    return report(1, "gradient soundness", pass, detail);
}

// ---- criterion 2: oracle equivalence ----------------------------------------
// Independent double-precision re-computations with explicit loops; the
// implementation path must agree within 1e-9 across 100 seeds.

Matrix<double> oracle_softmax(Matrix<double> logits) {
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        double mx = logits(r, 0);
        for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits(r, c));
        double sum = 0;
        for (std::size_t c = 0; c < logits.cols(); ++c) {
            logits(r, c) = std::exp(logits(r, c) - mx);
            sum += logits(r, c);
        }
        for (std::size_t c = 0; c < logits.cols(); ++c) logits(r, c) /= sum;
    }
    return logits;
}

Matrix<double> oracle_layer_norm(const Matrix<double>& x, const Matrix<double>& g,
                                 const Matrix<double>& b) {
    Matrix<double> y(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mean = 0, var = 0;
        for (std::size_t c = 0; c < x.cols(); ++c) mean += x(r, c);
        mean /= x.cols();
        for (std::size_t c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
        var /= x.cols();
        for (std::size_t c = 0; c < x.cols(); ++c)
            y(r, c) = g(0, c) * (x(r, c) - mean) / std::sqrt(var + 1e-5) + b(0, c);
    }
    return y;
}

bool criterion_oracles() {
    Timer timer;
    const int d = 6, n_t = 3, n_s = 5;
    double worst = 0;
    std::string worst_op = "-";
    auto track = [&](const char* op, double err) {
        if (err > worst) {
            worst = err;
            worst_op = op;
        }
    };

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed * 101 + 17);
        Tape<double> tape;

        TlmParams<double> tlm;
        tlm.W_E = tape.leaf(glorot_matrix<double>(rng, d, d), false);
        tlm.W_S = tape.leaf(glorot_matrix<double>(rng, d, d), false);
        tlm.W_v = tape.leaf(glorot_matrix<double>(rng, d, d), false);
        tlm.off_W1 = tape.leaf(glorot_matrix<double>(rng, d, d), false);
        tlm.off_b1 = tape.leaf(Matrix<double>(1, d, 0.0), false);
        tlm.off_W2 = tape.leaf(glorot_matrix<double>(rng, d, 3), false);
        tlm.off_b2 = tape.leaf(Matrix<double>(1, 3, 0.0), false);

        auto E0 = random_normal_matrix<double>(rng, n_t, d, 1.0);
        auto S = random_normal_matrix<double>(rng, n_s, d, 1.0);
        auto Ps = random_uniform_matrix<double>(rng, n_s, 3, -2, 2);

        // cross_modal_similarity vs direct exp/row-sum
        auto A = cross_modal_similarity(tape, tape.constant(E0), tape.constant(S), tlm);
        {
            auto e = matmul(E0, tlm.W_E.value());
            auto s = matmul(S, tlm.W_S.value());
            auto logits = matmul_bt(e, s);
            for (std::size_t i = 0; i < logits.size(); ++i) logits.data()[i] /= std::sqrt(double(d));
            track("cross_modal_similarity", max_abs_diff(A.value(), oracle_softmax(logits)));
        }

        // text_driven_init vs explicit weighted sums
        auto st = text_driven_init(tape, A, tape.constant(S), tape.constant(Ps), tlm);
        {
            auto Sv = matmul(S, tlm.W_v.value());
            Matrix<double> pos(n_t, 3), emb(n_t, d);
            for (int i = 0; i < n_t; ++i)
                for (int j = 0; j < n_s; ++j) {
                    for (int c = 0; c < 3; ++c) pos(i, c) += A.value()(i, j) * Ps(j, c);
                    for (int c = 0; c < d; ++c) emb(i, c) += A.value()(i, j) * Sv(j, c);
                }
            track("text_driven_init.pos", max_abs_diff(st.positions.value(), pos));
            track("text_driven_init.emb", max_abs_diff(st.embeddings.value(), emb));
        }

        SaaRoundParams<double> p;
        p.sa_Wq = tape.leaf(glorot_matrix<double>(rng, d, d), false);
        p.sa_Wk = tape.leaf(glorot_matrix<double>(rng, d, d), false);
        p.sa_Wv = tape.leaf(glorot_matrix<double>(rng, d, d), false);
        p.ln1_g = tape.leaf(random_uniform_matrix<double>(rng, 1, d, 0.5, 1.5), false);
        p.ln1_b = tape.leaf(random_normal_matrix<double>(rng, 1, d, 0.2), false);
        p.W_query = tape.leaf(glorot_matrix<double>(rng, 2 * d, 2 * d), false);
        p.W_key = tape.leaf(glorot_matrix<double>(rng, 2 * d, 2 * d), false);
        p.W_val = tape.leaf(glorot_matrix<double>(rng, d, d), false);
        p.rpe_table = tape.leaf(random_normal_matrix<double>(rng, 3, 9, 0.5), false);
        p.ln2_g = tape.leaf(random_uniform_matrix<double>(rng, 1, d, 0.5, 1.5), false);
        p.ln2_b = tape.leaf(random_normal_matrix<double>(rng, 1, d, 0.2), false);
        p.ffn_W1 = tape.leaf(glorot_matrix<double>(rng, d, 2 * d), false);
        p.ffn_b1 = tape.leaf(random_normal_matrix<double>(rng, 1, 2 * d, 0.1), false);
        p.ffn_W2 = tape.leaf(glorot_matrix<double>(rng, 2 * d, d), false);
        p.ffn_b2 = tape.leaf(random_normal_matrix<double>(rng, 1, d, 0.1), false);
        p.ln3_g = tape.leaf(random_uniform_matrix<double>(rng, 1, d, 0.5, 1.5), false);
        p.ln3_b = tape.leaf(random_normal_matrix<double>(rng, 1, d, 0.2), false);

        PosEncodingConfig pe;
        pe.kind = PeKind::table_rpe;
        pe.d_model = d;
        pe.rpe_bins = 9;
        pe.rpe_range = 2.0;

        // spatial_self_attention vs explicit computation
        auto Bt = random_uniform_matrix<double>(rng, n_t, d, -1, 1);
        auto E = random_normal_matrix<double>(rng, n_t, d, 1.0);
        auto sa = spatial_self_attention(tape, tape.constant(E), tape.constant(Bt), p);
        {
            Matrix<double> qk(n_t, d);
            for (std::size_t i = 0; i < qk.size(); ++i) qk.data()[i] = E.data()[i] + Bt.data()[i];
            auto logits = matmul_bt(matmul(qk, p.sa_Wq.value()), matmul(qk, p.sa_Wk.value()));
            for (std::size_t i = 0; i < logits.size(); ++i) logits.data()[i] /= std::sqrt(double(d));
            auto w = oracle_softmax(logits);
            track("spatial_self_attention.weights", max_abs_diff(sa.weights.value(), w));
            auto attended = matmul(w, matmul(E, p.sa_Wv.value()));
            for (std::size_t i = 0; i < attended.size(); ++i) attended.data()[i] += E.data()[i];
            track("spatial_self_attention.out",
                  max_abs_diff(sa.output.value(), oracle_layer_norm(attended, p.ln1_g.value(), p.ln1_b.value())));
        }

        // relative_pos_bias vs clamp->bin->lookup->sum loop
        auto Pt = random_uniform_matrix<double>(rng, n_t, 3, -4, 4);
        auto br = relative_pos_bias(tape, Pt, Ps, p, pe);
        {
            Matrix<double> expect(n_t, n_s);
            for (int i = 0; i < n_t; ++i)
                for (int j = 0; j < n_s; ++j)
                    for (int axis = 0; axis < 3; ++axis) {
                        double disp = Pt(i, axis) - Ps(j, axis);
                        disp = std::min(std::max(disp, -pe.rpe_range), pe.rpe_range);
                        const double t = (disp + pe.rpe_range) / (2 * pe.rpe_range);
                        int bin = static_cast<int>(std::floor(t * (pe.rpe_bins - 1) + 0.5));
                        bin = std::min(std::max(bin, 0), pe.rpe_bins - 1);
                        expect(i, j) += p.rpe_table.value()(axis, bin);
                    }
            track("relative_pos_bias", max_abs_diff(br.value(), expect));
        }

        // multimodal_aggregate vs from-scratch recomputation
        auto Bs = random_uniform_matrix<double>(rng, n_s, d, -1, 1);
        auto agg = multimodal_aggregate(tape, sa.output, tape.constant(Bt), tape.constant(S),
                                        tape.constant(Bs), br, p);
        {
            Matrix<double> Qin(n_t, 2 * d), Kin(n_s, 2 * d);
            for (int i = 0; i < n_t; ++i)
                for (int c = 0; c < d; ++c) {
                    Qin(i, c) = sa.output.value()(i, c);
                    Qin(i, d + c) = Bt(i, c);
                }
            for (int j = 0; j < n_s; ++j)
                for (int c = 0; c < d; ++c) {
                    Kin(j, c) = S(j, c);
                    Kin(j, d + c) = Bs(j, c);
                }
            auto logits = matmul_bt(matmul(Qin, p.W_query.value()), matmul(Kin, p.W_key.value()));
            for (std::size_t i = 0; i < logits.size(); ++i)
                logits.data()[i] = logits.data()[i] / std::sqrt(double(d)) + br.value().data()[i];
            auto w = oracle_softmax(logits);
            track("multimodal_aggregate.weights", max_abs_diff(agg.weights.value(), w));
            auto x = matmul(w, matmul(S, p.W_val.value()));
            for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += sa.output.value().data()[i];
            x = oracle_layer_norm(x, p.ln2_g.value(), p.ln2_b.value());
            auto h = matmul(x, p.ffn_W1.value());
            for (std::size_t r = 0; r < h.rows(); ++r)
                for (std::size_t c = 0; c < h.cols(); ++c)
                    h(r, c) = std::max(h(r, c) + p.ffn_b1.value()(0, c), 0.0);
            auto f = matmul(h, p.ffn_W2.value());
            Matrix<double> y = x;
            for (std::size_t r = 0; r < y.rows(); ++r)
                for (int c = 0; c < d; ++c) y(r, c) += f(r, c) + p.ffn_b2.value()(0, c);
            track("multimodal_aggregate.out",
                  max_abs_diff(agg.output.value(), oracle_layer_norm(y, p.ln3_g.value(), p.ln3_b.value())));
        }

        // response_map vs dot + sigmoid
        auto kernel = random_normal_matrix<double>(rng, 1, d, 1.0);
        auto rm = response_map(tape, tape.constant(kernel), tape.constant(S));
        {
            Matrix<double> expect(1, n_s);
            for (int j = 0; j < n_s; ++j) {
                double dot = 0;
                for (int c = 0; c < d; ++c) dot += kernel(0, c) * S(j, c);
                expect(0, j) = 1.0 / (1.0 + std::exp(-dot));
            }
            track("response_map", max_abs_diff(rm.probs.value(), expect));
        }

        // four losses vs direct formulas
        std::vector<std::uint8_t> y(n_s);
        for (auto& b : y) b = rng.uniform() < 0.5;
        auto m = random_uniform_matrix<double>(rng, 1, n_s, 0.01, 0.99);
        {
            double bce = 0, inter = 0, msum = 0, ysum = 0;
            for (int j = 0; j < n_s; ++j) {
                bce += -(y[j] * std::log(m(0, j)) + (1 - y[j]) * std::log(1 - m(0, j))) / n_s;
                inter += m(0, j) * y[j];
                msum += m(0, j);
                ysum += y[j];
            }
            track("bce_loss", std::abs(bce_loss(tape, tape.constant(m), y).value()(0, 0) - bce));
            const double dice = 1.0 - (2 * inter + 1) / (msum + ysum + 1);
            track("dice_loss", std::abs(dice_loss(tape, tape.constant(m), y).value()(0, 0) - dice));

            auto pp = random_uniform_matrix<double>(rng, 1, 3, -3, 3);
            std::array<double, 3> gt{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
            double pos = 0;
            for (int c = 0; c < 3; ++c) pos += std::abs(pp(0, c) - gt[c]) / 3;
            track("position_loss", std::abs(position_loss(tape, tape.constant(pp), gt).value()(0, 0) - pos));

            const double sp = rng.uniform(), iou = rng.uniform();
            track("score_loss",
                  std::abs(score_loss(tape, tape.constant(Matrix<double>(1, 1, sp)), iou).value()(0, 0) -
                           (sp - iou) * (sp - iou)));
        }
    }
    const double elapsed = timer.seconds();
    const bool pass = worst < 1e-9 && elapsed < 30.0;
    char detail[160];
    std::snprintf(detail, sizeof(detail), "100 seeds, worst abs err %.3g (%s), %.2fs (budget 30s)",
                  worst, worst_op.c_str(), elapsed);
    return report(2, "oracle equivalence", pass, detail);
}

// ---- criterion 3: Algorithm-1 corpus -----------------------------------------

bool criterion_selection_corpus() {
    const auto cases = rgsan_tests::target_selection_cases();
    int correct = 0;
    std::string first_miss;
    for (const auto& c : cases) {
        if (select_target_index(c.tree) == c.expected) ++correct;
        else if (first_miss.empty()) first_miss = c.name;
    }
    // The two published anchors must be present and correct.
    const bool anchored = select_target_index(cases[0].tree) == 2 && cases[0].tree.tokens[2] == "can" &&
                          select_target_index(cases[1].tree) == 8 && cases[1].tree.tokens[8] == "chair";
    const bool pass = cases.size() == 20 && correct == static_cast<int>(cases.size()) && anchored;
    char detail[160];
    std::snprintf(detail, sizeof(detail), "%d/%zu trees correct%s%s", correct, cases.size(),
                  anchored ? ", anchored examples ok" : ", anchored examples WRONG",
                  first_miss.empty() ? "" : (", first miss: " + first_miss).c_str());
    return report(3, "target-selection corpus", pass, detail);
}

// ---- criterion 4: 16-sample overfit ------------------------------------------

bool criterion_overfit() {
    Timer timer;
    SynthConfig sc;
    sc.seed = 5;
    sc.distractor_prob = 1.0;
    auto samples = generate_samples(sc, 16);
    TrainConfig tc;
    tc.seed = 5;
    tc.lr = 2e-3;
    tc.decay_epochs = {350, 450};
    tc.epochs = 500;  // batch of 16 = the whole set, so one step per epoch
    tc.batch_size = 16;
    tc.threads = 2;
    auto ckpt = train<TrainReal>(tc, samples);
    const double elapsed = timer.seconds();
    const bool pass = ckpt.final_train_miou >= 0.90 && elapsed < 300.0;
    char detail[160];
    std::snprintf(detail, sizeof(detail), "train mIoU %.4f after 500 steps (need >= 0.90), %.0fs (budget 300s)",
                  ckpt.final_train_miou, elapsed);
    return report(4, "16-sample overfit", pass, detail);
}

// ---- criterion 5: ablation directions ----------------------------------------

struct AblationSetting {
    std::string init = "ti";
    std::string pe = "table_rpe";
    double lambda_pos = 0.5;
};

double ablation_val_miou(const AblationSetting& setting, std::uint64_t seed,
                         const std::vector<ReferringSample>& train_set,
                         const std::vector<ReferringSample>& val_set) {
    TrainConfig tc;
    tc.seed = seed;
    tc.epochs = 250;
    tc.lr = 1e-3;
    tc.decay_epochs = {150, 200};
    tc.d_model = 16;
    tc.c_text = 16;
    tc.c_vis = 16;
    tc.rpe_range = 2.25;
    tc.threads = 2;
    tc.init_scheme = setting.init;
    tc.pe_kind = setting.pe;
    tc.lambda_pos = setting.lambda_pos;
    auto ckpt = train<TrainReal>(tc, train_set);
    auto ev = evaluate_model(ckpt.model, prepare_dataset(ckpt, val_set), tc.weights(), tc.seed);
    return ev.summary.overall.miou;
}

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[1];
}

bool criterion_ablations() {
    Timer timer;
    SynthConfig sc;
    sc.classes = {"chair", "table", "lamp"};
    sc.n_instances = {3, 3};
    sc.room_size = {4.5, 4.5, 3.0};
    sc.distractor_prob = 1.0;
    SynthConfig train_sc = sc;
    train_sc.seed = 1000;
    SynthConfig val_sc = sc;
    val_sc.seed = 2000;
    auto train_set = generate_samples(train_sc, 256);
    auto val_set = generate_samples(val_sc, 64);

    const std::vector<std::uint64_t> seeds{0, 1, 2};
    auto run_arm = [&](const AblationSetting& s, const char* label) {
        std::vector<double> v;
        for (auto seed : seeds) {
            v.push_back(ablation_val_miou(s, seed, train_set, val_set));
            std::cout << "  " << label << " seed " << seed << ": val mIoU " << v.back() << "\n"
                      << std::flush;
        }
        return median3(v);
    };

    const double base = run_arm({"ti", "table_rpe", 0.5}, "baseline (TI, table-RPE, lpos 0.5)");
    const double rand_init = run_arm({"random", "table_rpe", 0.5}, "random init");
    const double no_pe = run_arm({"ti", "none", 0.5}, "no PE");
    const double no_pos = run_arm({"ti", "table_rpe", 0.0}, "lpos 0");

    const bool a = base >= rand_init + 0.02;
    const bool b = base >= no_pe + 0.01;
    const bool c = base >= no_pos + 0.02;
    const double elapsed = timer.seconds();
    char detail[240];
    std::snprintf(detail, sizeof(detail),
                  "medians: base %.3f | random %.3f (need +0.02: %s) | no-PE %.3f (need +0.01: %s) | "
                  "lpos0 %.3f (need +0.02: %s); %.0fs",
                  base, rand_init, a ? "ok" : "FAIL", no_pe, b ? "ok" : "FAIL", no_pos,
                  c ? "ok" : "FAIL", elapsed);
    return report(5, "ablation directions", a && b && c, detail);
}

// ---- criterion 6: invariant suite --------------------------------------------

bool criterion_invariants() {
    int failures = 0;
    std::string first;
    auto expect = [&](bool ok, const char* what) {
        if (!ok) {
            ++failures;
            if (first.empty()) first = what;
        }
    };

    // Attention rows stochastic + convex-hull + translation equivariance on a
    // real forward pass.
    {
        SynthConfig sc;
        sc.seed = 77;
        sc.distractor_prob = 1.0;
        auto sample = generate_sample(sc, 0);
        TrainConfig tc;
        tc.seed = 77;
        tc.rounds = 3;
        tc.d_model = 16;
        tc.c_text = 16;
        tc.c_vis = 16;
        auto vocab = build_vocabulary({sample});
        ModelConfig mc = Checkpoint<double>::make_model_config(tc, encoder_input_dim(3), vocab.words.size());
        Model<double> model(mc, tc.seed);
        auto prep = prepare_sample<double>(sample, mc, vocab);

        Tape<double> tape;
        auto bound = model.bind(tape, false);
        auto raw = tape.constant(prep.raw_bank);
        auto enc_h = tape.relu(tape.add_row_vector(tape.matmul(raw, bound.enc_W1), bound.enc_b1));
        auto S_p = tape.add_row_vector(tape.matmul(enc_h, bound.enc_W2), bound.enc_b2);
        auto E0 = tape.gather_rows(bound.embed_table, prep.token_ids);
        auto [E0h, Sh] = project_and_ddi(tape, E0, S_p, bound.proj, prep.tree_mask);
        auto Ps = tape.constant(prep.centroids);
        auto A = cross_modal_similarity(tape, E0h, Sh, bound.tlm);
        for (std::size_t i = 0; i < A.value().rows(); ++i) {
            double sum = 0;
            for (std::size_t j = 0; j < A.value().cols(); ++j) {
                sum += A.value()(i, j);
                expect(A.value()(i, j) >= 0 && A.value()(i, j) <= 1, "similarity entries in [0,1]");
            }
            expect(std::abs(sum - 1.0) < 1e-6, "similarity rows sum to 1");
        }
        auto st0 = text_driven_init(tape, A, Sh, Ps, bound.tlm);
        for (int c = 0; c < 3; ++c) {
            double lo = 1e18, hi = -1e18;
            for (std::size_t j = 0; j < prep.centroids.rows(); ++j) {
                lo = std::min(lo, prep.centroids(j, c));
                hi = std::max(hi, prep.centroids(j, c));
            }
            for (std::size_t i = 0; i < st0.positions.value().rows(); ++i)
                expect(st0.positions.value()(i, c) >= lo - 1e-9 && st0.positions.value()(i, c) <= hi + 1e-9,
                       "round-0 positions inside the centroid hull");
        }

        // Rigid translation of centroids moves round-0 positions exactly.
        Matrix<double> shifted = prep.centroids;
        const double t[3] = {0.7, -1.1, 0.4};
        for (std::size_t j = 0; j < shifted.rows(); ++j)
            for (int c = 0; c < 3; ++c) shifted(j, c) += t[c];
        auto st_shift = text_driven_init(tape, A, Sh, tape.constant(shifted), bound.tlm);
        for (std::size_t i = 0; i < st0.positions.value().rows(); ++i)
            for (int c = 0; c < 3; ++c)
                expect(std::abs(st_shift.positions.value()(i, c) - st0.positions.value()(i, c) - t[c]) < 1e-9,
                       "init translation equivariance");

        auto rounds = run_decoder(tape, st0, Sh, Ps, bound.rounds, bound.tlm, mc.pe, mc.rounds);
        for (const auto& r : rounds) {
            const auto& w = r.cross_attention.weights.value();
            for (std::size_t i = 0; i < w.rows(); ++i) {
                double sum = 0;
                for (std::size_t j = 0; j < w.cols(); ++j) sum += w(i, j);
                expect(std::abs(sum - 1.0) < 1e-6, "cross-attention rows sum to 1");
            }
            const auto& sw = r.self_attention.weights.value();
            for (std::size_t i = 0; i < sw.rows(); ++i) {
                double sum = 0;
                for (std::size_t j = 0; j < sw.cols(); ++j) sum += sw(i, j);
                expect(std::abs(sum - 1.0) < 1e-6, "self-attention rows sum to 1");
            }
        }

        // B^r translation invariance on the model's own tables.
        auto br_a = relative_pos_bias(tape, st0.positions.value(), prep.centroids, bound.rounds[0], mc.pe);
        Matrix<double> pt2 = st0.positions.value();
        for (std::size_t i = 0; i < pt2.rows(); ++i)
            for (int c = 0; c < 3; ++c) pt2(i, c) += t[c];
        auto br_b = relative_pos_bias(tape, pt2, shifted, bound.rounds[0], mc.pe);
        expect(max_abs_diff(br_a.value(), br_b.value()) == 0.0, "relative bias translation invariance");

        // Strict 0.5 thresholds.
        auto zero_kernel = tape.constant(Matrix<double>(1, 16, 0.0));
        auto rm = response_map(tape, zero_kernel, Sh);
        for (auto b : rm.mask) expect(b == 0, "response mask strict at 0.5");
        expect(pool_gt_mask({1, 1, 0, 0}, SuperpointPartition{{0, 0, 0, 0}, 1})[0] == 0,
               "pooled mask strict at 50%");

        // dice in [0,1) on random maps.
        Rng rng(5);
        for (int iter = 0; iter < 20; ++iter) {
            auto m = random_uniform_matrix<double>(rng, 1, 6, 0.0, 1.0);
            std::vector<std::uint8_t> y(6);
            for (auto& bb : y) bb = rng.uniform() < 0.5;
            const double dv = dice_loss(tape, tape.constant(m), y).value()(0, 0);
            expect(dv >= 0.0 && dv < 1.0, "dice in [0,1)");
        }
    }

    // acc@0.25 >= acc@0.5 on random records.
    {
        Rng rng(9);
        std::vector<EvalRecord> rs;
        for (int i = 0; i < 50; ++i)
            rs.push_back({"r" + std::to_string(i), rng.uniform(),
                          rng.uniform() < 0.5 ? Stratum::unique : Stratum::multiple});
        auto s = aggregate(rs);
        expect(s.overall.acc_25 >= s.overall.acc_50, "acc@0.25 >= acc@0.5");
        expect(s.unique.count + s.multiple.count == s.overall.count, "strata counts add up");
    }

    // Seed determinism + checkpoint round trip through a real training run.
    {
        SynthConfig sc;
        sc.seed = 123;
        sc.n_instances = {3, 3};
        sc.points_per_instance = {24, 40};
        sc.distractor_prob = 1.0;
        auto samples = generate_samples(sc, 4);
        TrainConfig tc;
        tc.seed = 123;
        tc.epochs = 2;
        tc.rounds = 2;
        tc.batch_size = 4;
        tc.d_model = 8;
        tc.c_text = 8;
        tc.c_vis = 8;
        tc.rpe_bins = 9;
        tc.threads = 2;
        auto ck1 = train<TrainReal>(tc, samples);
        auto ck2 = train<TrainReal>(tc, samples);
        expect(ck1.history.back().loss == ck2.history.back().loss, "training loss deterministic");
        expect(ck1.final_train_miou == ck2.final_train_miou, "training mIoU deterministic");

        const std::string path = "acceptance_ckpt.json";
        save_checkpoint(ck1, path);
        auto loaded = load_checkpoint<TrainReal>(path);
        std::remove(path.c_str());
        auto prep = prepare_dataset(ck1, samples);
        auto prep2 = prepare_dataset(loaded, samples);
        for (std::size_t i = 0; i < prep.size(); ++i) {
            Tape<TrainReal> t1, t2;
            auto r1 = ck1.model.forward(t1, prep[i], tc.weights(), tc.seed, false);
            auto r2 = loaded.model.forward(t2, prep2[i], tc.weights(), tc.seed, false);
            expect(max_abs_diff(r1.rounds.back().response.value(), r2.rounds.back().response.value()) == 0.0,
                   "checkpoint round trip bit-exact");
        }
    }

    char detail[160];
    std::snprintf(detail, sizeof(detail), "%s%s", failures == 0 ? "all invariants hold" : "failures: ",
                  failures == 0 ? "" : first.c_str());
    return report(6, "invariant suite", failures == 0, detail);
}

// ---- criterion 7: schedule exactness -----------------------------------------

bool criterion_schedule() {
    TrainConfig c;  // published defaults: lr 1e-4, decays at 26/34/46, rate 0.5
    const bool pass = lr_at(0, c) == 1e-4 && lr_at(26, c) == 5e-5 && lr_at(34, c) == 2.5e-5 &&
                      lr_at(46, c) == 1.25e-5;
    char detail[160];
    std::snprintf(detail, sizeof(detail), "lr(0)=%g lr(26)=%g lr(34)=%g lr(46)=%g", lr_at(0, c),
                  lr_at(26, c), lr_at(34, c), lr_at(46, c));
    return report(7, "learning-rate schedule", pass, detail);
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);

    struct Entry {
        int id;
        bool (*fn)();
    };
    const Entry entries[] = {{1, criterion_gradients}, {2, criterion_oracles},
                             {3, criterion_selection_corpus}, {4, criterion_overfit},
                             {5, criterion_ablations}, {6, criterion_invariants},
                             {7, criterion_schedule}};
    int failed = 0;
    for (const auto& e : entries) {
        if (only != 0 && e.id != only) continue;
        if (!e.fn()) ++failed;
    }
    if (failed == 0) std::cout << "acceptance: all criteria passed\n";
    else std::cout << "acceptance: " << failed << " criteria FAILED\n";
    return failed;
}
