#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rgsan/json_io.hpp"
#include "rgsan/model.hpp"

namespace rgsan {

struct TrainConfig {
    double lr = 1e-4;
    std::vector<int> decay_epochs{26, 34, 46};
    double decay_rate = 0.5;
    int epochs = 40;
    int rounds = 6;
    int batch_size = 32;
    int max_len = 80;
    double lambda_bce = 1.0;
    double lambda_dice = 1.0;
    double lambda_pos = 0.5;
    double lambda_score = 0.5;
    std::string pe_kind = "table_rpe";
    std::string init_scheme = "ti";
    std::string supervision = "rts";
    std::uint64_t seed = 0;
    int d_model = 32;
    int c_text = 32;
    int c_vis = 32;
    double rpe_range = 4.0;
    int rpe_bins = 17;
    bool deep_supervision = true;
    double cell_size = 0.4;
    double init_jitter = 0.35;
    int threads = 2;

    void validate() const {
        if (!(lr > 0)) throw std::invalid_argument("lr must be positive");
        if (!(decay_rate > 0 && decay_rate <= 1))
            throw std::invalid_argument("decay_rate must be in (0, 1]");
        if (rounds < 1) throw std::invalid_argument("rounds must be at least 1");
        if (epochs < 0 || batch_size < 1 || max_len < 1 || threads < 1)
            throw std::invalid_argument("bad training configuration");
        if (lambda_bce < 0 || lambda_dice < 0 || lambda_pos < 0 || lambda_score < 0)
            throw std::invalid_argument("loss weights must be nonnegative");
    }

    LossWeights weights() const { return LossWeights{lambda_bce, lambda_dice, lambda_pos, lambda_score}; }

    ModelConfig model_config() const {
        ModelConfig m;
        m.d_model = d_model;
        m.c_text = c_text;
        m.c_vis = c_vis;
        m.ffn_hidden = 2 * d_model;
        m.rounds = rounds;
        m.cell_size = cell_size;
        m.pe.kind = pe_kind_from_string(pe_kind);
        m.pe.d_model = d_model;
        m.pe.rpe_range = rpe_range;
        m.pe.rpe_bins = rpe_bins;
        m.init = init_scheme_from_string(init_scheme);
        m.supervision = supervision_from_string(supervision);
        m.deep_supervision = deep_supervision;
        m.init_jitter = init_jitter;
        return m;
    }
};

inline json train_config_to_json(const TrainConfig& c) {
    return json{{"lr", c.lr},
                {"decay_epochs", c.decay_epochs},
                {"decay_rate", c.decay_rate},
                {"epochs", c.epochs},
                {"rounds", c.rounds},
                {"batch_size", c.batch_size},
                {"max_len", c.max_len},
                {"lambda_bce", c.lambda_bce},
                {"lambda_dice", c.lambda_dice},
                {"lambda_pos", c.lambda_pos},
                {"lambda_score", c.lambda_score},
                {"pe_kind", c.pe_kind},
                {"init_scheme", c.init_scheme},
                {"supervision", c.supervision},
                {"seed", c.seed},
                {"d_model", c.d_model},
                {"c_text", c.c_text},
                {"c_vis", c.c_vis},
                {"rpe_range", c.rpe_range},
                {"rpe_bins", c.rpe_bins},
                {"deep_supervision", c.deep_supervision},
                {"cell_size", c.cell_size},
                {"init_jitter", c.init_jitter},
                {"threads", c.threads}};
}

/// Flat key/value config; unknown keys are hard errors so typos cannot
/// silently fall back to defaults. RGSAN_SEED overrides the file's seed.
inline TrainConfig train_config_from_json(const json& j, const std::string& where = "config") {
    TrainConfig c;
    const json defaults = train_config_to_json(c);
    for (const auto& [key, value] : j.items())
        if (!defaults.contains(key)) throw SchemaError(where + ": unknown key '" + key + "'");
    auto get = [&](const char* key, auto& into) {
        if (j.contains(key)) into = j[key].get<std::decay_t<decltype(into)>>();
    };
    get("lr", c.lr);
    get("decay_epochs", c.decay_epochs);
    get("decay_rate", c.decay_rate);
    get("epochs", c.epochs);
    get("rounds", c.rounds);
    get("batch_size", c.batch_size);
    get("max_len", c.max_len);
    get("lambda_bce", c.lambda_bce);
    get("lambda_dice", c.lambda_dice);
    get("lambda_pos", c.lambda_pos);
    get("lambda_score", c.lambda_score);
    get("pe_kind", c.pe_kind);
    get("init_scheme", c.init_scheme);
    get("supervision", c.supervision);
    get("seed", c.seed);
    get("d_model", c.d_model);
    get("c_text", c.c_text);
    get("c_vis", c.c_vis);
    get("rpe_range", c.rpe_range);
    get("rpe_bins", c.rpe_bins);
    get("deep_supervision", c.deep_supervision);
    get("cell_size", c.cell_size);
    get("init_jitter", c.init_jitter);
    get("threads", c.threads);
    if (const char* env = std::getenv("RGSAN_SEED")) c.seed = std::strtoull(env, nullptr, 10);
    c.validate();
    return c;
}

inline TrainConfig load_train_config(const std::string& path) {
    return train_config_from_json(load_json_file(path), path);
}

/// Step-decay schedule: initial rate halved (by decay_rate) at each listed
/// epoch, counting decays whose epoch is <= the query epoch.
inline double lr_at(int epoch, const TrainConfig& config) {
    if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
    int decays = 0;
    for (int e : config.decay_epochs)
        if (e <= epoch) ++decays;
    double lr = config.lr;
    for (int i = 0; i < decays; ++i) lr *= config.decay_rate;
    return lr;
}

/// Adam with bias correction, no weight decay.
template <typename Real>
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore<Real>& params, const std::vector<Matrix<Real>>& grads, double lr) {
        if (grads.size() != params.size()) throw std::invalid_argument("adam: gradient count mismatch");
        if (m_.empty()) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_.emplace_back(params.value(i).rows(), params.value(i).cols());
                v_.emplace_back(params.value(i).rows(), params.value(i).cols());
            }
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, step_);
        const double bc2 = 1.0 - std::pow(beta2_, step_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params.value(i);
            const auto& g = grads[i];
            for (std::size_t k = 0; k < p.size(); ++k) {
                const double gk = static_cast<double>(g.data()[k]);
                const double m = beta1_ * m_[i].data()[k] + (1 - beta1_) * gk;
                const double v = beta2_ * v_[i].data()[k] + (1 - beta2_) * gk * gk;
                m_[i].data()[k] = static_cast<Real>(m);
                v_[i].data()[k] = static_cast<Real>(v);
                p.data()[k] -= static_cast<Real>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            }
        }
    }

    long long step_count() const { return step_; }
    const std::vector<Matrix<Real>>& first_moments() const { return m_; }
    const std::vector<Matrix<Real>>& second_moments() const { return v_; }

    void restore(long long step, std::vector<Matrix<Real>> m, std::vector<Matrix<Real>> v) {
        step_ = step;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    double beta1_, beta2_, eps_;
    long long step_ = 0;
    std::vector<Matrix<Real>> m_, v_;
};

using TrainReal = float;

struct EpochLog {
    int epoch = 0;
    double lr = 0;
    double loss = 0, bce = 0, dice = 0, pos = 0, score = 0;
};

template <typename Real>
struct Checkpoint {
    TrainConfig config;
    std::vector<std::string> vocab_words;
    int raw_dim = 0;
    int epoch = 0;
    Model<Real> model;
    long long adam_step = 0;
    std::vector<Matrix<Real>> adam_m, adam_v;
    std::vector<EpochLog> history;
    double final_train_miou = 0.0;

    Checkpoint(TrainConfig cfg, std::vector<std::string> words, int raw, std::uint64_t seed)
        : config(std::move(cfg)), vocab_words(std::move(words)), raw_dim(raw),
          model(make_model_config(config, raw_dim, vocab_words.size()), seed) {}

    static ModelConfig make_model_config(const TrainConfig& c, int raw_dim, std::size_t vocab_size) {
        ModelConfig m = c.model_config();
        m.raw_dim = raw_dim;
        m.vocab_rows = static_cast<int>(vocab_size) + 1;
        return m;
    }

    Vocabulary vocabulary() const { return Vocabulary::from_words(vocab_words); }
};

template <typename Real>
json matrix_to_json(const Matrix<Real>& m) {
    json data = json::array();
    for (std::size_t i = 0; i < m.size(); ++i) data.push_back(static_cast<double>(m.data()[i]));
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

template <typename Real>
Matrix<Real> matrix_from_json(const json& j, const std::string& where) {
    const std::size_t rows = require_field(j, "rows", where).get<std::size_t>();
    const std::size_t cols = require_field(j, "cols", where).get<std::size_t>();
    const auto& data = require_field(j, "data", where);
    if (data.size() != rows * cols) throw SchemaError(where + ": data length mismatch");
    Matrix<Real> m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(data[i].get<double>());
    return m;
}

template <typename Real>
void save_checkpoint(const Checkpoint<Real>& ckpt, const std::string& path) {
    json j;
    j["format"] = "rgsan-checkpoint-v1";
    j["config"] = train_config_to_json(ckpt.config);
    j["vocab"] = ckpt.vocab_words;
    j["raw_dim"] = ckpt.raw_dim;
    j["epoch"] = ckpt.epoch;
    j["final_train_miou"] = ckpt.final_train_miou;
    json params;
    const auto& store = ckpt.model.params();
    for (std::size_t i = 0; i < store.size(); ++i) params[store.name(i)] = matrix_to_json(store.value(i));
    j["params"] = std::move(params);
    j["adam"] = {{"step", ckpt.adam_step}, {"m", json::array()}, {"v", json::array()}};
    for (const auto& m : ckpt.adam_m) j["adam"]["m"].push_back(matrix_to_json(m));
    for (const auto& v : ckpt.adam_v) j["adam"]["v"].push_back(matrix_to_json(v));
    json hist = json::array();
    for (const auto& h : ckpt.history)
        hist.push_back({{"epoch", h.epoch}, {"lr", h.lr}, {"loss", h.loss}, {"bce", h.bce},
                        {"dice", h.dice}, {"pos", h.pos}, {"score", h.score}});
    j["history"] = std::move(hist);
    save_json_file(path, j);
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
    auto j = load_json_file(path);
    if (require_field(j, "format", path) != "rgsan-checkpoint-v1")
        throw SchemaError(path + ": unknown checkpoint format");
    // Seed reconstruction: env must not leak into a stored config.
    TrainConfig config;
    {
        json cj = require_field(j, "config", path);
        const auto saved_seed = cj.at("seed").get<std::uint64_t>();
        config = train_config_from_json(cj, path);
        config.seed = saved_seed;
    }
    Checkpoint<Real> ckpt(config, j["vocab"].get<std::vector<std::string>>(),
                          require_field(j, "raw_dim", path).get<int>(), config.seed);
    ckpt.epoch = require_field(j, "epoch", path).get<int>();
    if (j.contains("final_train_miou")) ckpt.final_train_miou = j["final_train_miou"].get<double>();
    auto& store = ckpt.model.params();
    const auto& params = require_field(j, "params", path);
    for (std::size_t i = 0; i < store.size(); ++i) {
        const std::string& name = store.name(i);
        if (!params.contains(name)) throw SchemaError(path + ": missing parameter " + name);
        auto m = matrix_from_json<Real>(params[name], path + ":" + name);
        if (!m.same_shape(store.value(i)))
            throw SchemaError(path + ": parameter " + name + " has the wrong shape");
        store.value(i) = std::move(m);
    }
    if (j.contains("adam")) {
        ckpt.adam_step = j["adam"]["step"].get<long long>();
        for (const auto& m : j["adam"]["m"]) ckpt.adam_m.push_back(matrix_from_json<Real>(m, path));
        for (const auto& v : j["adam"]["v"]) ckpt.adam_v.push_back(matrix_from_json<Real>(v, path));
    }
    if (j.contains("history"))
        for (const auto& h : j["history"])
            ckpt.history.push_back({h["epoch"].get<int>(), h["lr"].get<double>(), h["loss"].get<double>(),
                                    h["bce"].get<double>(), h["dice"].get<double>(), h["pos"].get<double>(),
                                    h["score"].get<double>()});
    return ckpt;
}

/// Vocabulary = sorted unique tokens of the dataset.
inline Vocabulary build_vocabulary(const std::vector<ReferringSample>& samples) {
    std::vector<std::string> words;
    for (const auto& s : samples)
        for (const auto& t : s.tree.tokens) words.push_back(t);
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    return Vocabulary::from_words(std::move(words));
}

namespace detail {

/// Forward+backward for a span of samples; gradients land in per-sample slots
/// so the later reduction is order-fixed no matter how many workers ran.
template <typename Real>
void batch_worker(const Model<Real>& model, const std::vector<PreparedSample<Real>>* samples,
                  const std::vector<int>& batch, std::size_t begin, std::size_t end,
                  const LossWeights& weights, std::uint64_t noise_base,
                  std::vector<std::vector<Matrix<Real>>>& grad_slots,
                  std::vector<LossBundleValues<Real>>& value_slots, std::atomic<bool>& failed,
                  std::string& error) {
    for (std::size_t b = begin; b < end; ++b) {
        if (failed.load()) return;
        try {
            Tape<Real> tape;
            auto result = model.forward(tape, (*samples)[batch[b]], weights,
                                        noise_base + static_cast<std::uint64_t>(batch[b]), true);
            tape.backward(result.loss);
            value_slots[b] = result.values;
            // forward() binds parameters first, so tape nodes 0..P-1 are the
            // parameter leaves in ParamStore order.
            auto& slot = grad_slots[b];
            slot.clear();
            slot.reserve(model.params().size());
            for (std::size_t i = 0; i < model.params().size(); ++i) {
                Var<Real> leaf{&tape, static_cast<int>(i)};
                const auto& g = tape.grad_of(leaf);
                if (g.empty())
                    slot.emplace_back(model.params().value(i).rows(), model.params().value(i).cols());
                else
                    slot.push_back(g);
            }
        } catch (const std::exception& e) {
            bool expected = false;
            if (failed.compare_exchange_strong(expected, true)) error = e.what();
            return;
        }
    }
}

}  // namespace detail

/// One optimizer step over a batch: per-sample grads averaged in sample
/// order, Adam update at the epoch's learning rate.
template <typename Real>
LossBundleValues<Real> train_batch(Model<Real>& model, const std::vector<PreparedSample<Real>>& samples,
                                   const std::vector<int>& batch, const LossWeights& weights,
                                   Adam<Real>& adam, double lr, std::uint64_t noise_base, int threads) {
    std::vector<std::vector<Matrix<Real>>> grad_slots(batch.size());
    std::vector<LossBundleValues<Real>> value_slots(batch.size());
    std::atomic<bool> failed{false};
    std::string error;

    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(batch.size())));
    if (workers == 1) {
        detail::batch_worker(model, &samples, batch, 0, batch.size(), weights, noise_base, grad_slots,
                             value_slots, failed, error);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (batch.size() + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(batch.size(), begin + chunk);
            if (begin >= end) break;
            pool.emplace_back(detail::batch_worker<Real>, std::cref(model), &samples, std::cref(batch),
                              begin, end, std::cref(weights), noise_base, std::ref(grad_slots),
                              std::ref(value_slots), std::ref(failed), std::ref(error));
        }
        for (auto& t : pool) t.join();
    }
    if (failed.load()) throw std::runtime_error(error);

    std::vector<Matrix<Real>> grads;
    grads.reserve(model.params().size());
    const Real inv = Real(1) / static_cast<Real>(batch.size());
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        Matrix<Real> g(model.params().value(i).rows(), model.params().value(i).cols());
        for (std::size_t b = 0; b < batch.size(); ++b)
            for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] += grad_slots[b][i].data()[k];
        for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] *= inv;
        grads.push_back(std::move(g));
    }
    adam.step(model.params(), grads, lr);

    LossBundleValues<Real> mean;
    for (const auto& v : value_slots) {
        mean.bce += v.bce;
        mean.dice += v.dice;
        mean.pos += v.pos;
        mean.score += v.score;
        mean.total += v.total;
    }
    const double n = static_cast<double>(batch.size());
    mean.bce /= n;
    mean.dice /= n;
    mean.pos /= n;
    mean.score /= n;
    mean.total /= n;
    return mean;
}

template <typename Real>
struct EvalOutput {
    EvalSummary summary;
    std::vector<EvalRecord> records;
};

/// Final-round inference over a set: superpoint mask expanded to points,
/// point IoU against ground truth, stratified aggregation. Records are
/// sorted by id so the numbers do not depend on dataset order.
template <typename Real>
EvalOutput<Real> evaluate_model(const Model<Real>& model, const std::vector<PreparedSample<Real>>& samples,
                                const LossWeights& weights, std::uint64_t seed) {
    if (samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
    EvalOutput<Real> out;
    for (const auto& s : samples) {
        Tape<Real> tape;
        auto result = model.forward(tape, s, weights, seed, false);
        auto point_mask = expand_mask(result.rounds.back().mask, s.assignment);
        out.records.push_back({s.sample_id, point_iou(point_mask, s.gt_point_mask), s.stratum});
    }
    std::sort(out.records.begin(), out.records.end(),
              [](const EvalRecord& a, const EvalRecord& b) { return a.sample_id < b.sample_id; });
    out.summary = aggregate(out.records);
    return out;
}

/// Full training run; deterministic in (config, dataset).
template <typename Real>
Checkpoint<Real> train(const TrainConfig& config, const std::vector<ReferringSample>& dataset,
                       std::ostream* log = nullptr) {
    config.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    for (const auto& s : dataset)
        if (s.tree.tokens.size() > static_cast<std::size_t>(config.max_len))
            throw std::invalid_argument("sample " + s.sample_id + " exceeds max_len " +
                                        std::to_string(config.max_len));
    auto vocab = build_vocabulary(dataset);
    const int raw_dim = encoder_input_dim(static_cast<int>(dataset.front().scene.features.cols()));

    Checkpoint<Real> ckpt(config, vocab.words, raw_dim, config.seed);
    std::vector<PreparedSample<Real>> prepared;
    prepared.reserve(dataset.size());
    for (const auto& s : dataset)
        prepared.push_back(prepare_sample<Real>(s, ckpt.model.config(), vocab));

    Adam<Real> adam;
    Rng shuffle_rng(config.seed ^ 0x5AFFE11Eull);
    const auto weights = config.weights();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<int> order(prepared.size());
        std::iota(order.begin(), order.end(), 0);
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

        const double lr = lr_at(epoch, config);
        EpochLog elog;
        elog.epoch = epoch;
        elog.lr = lr;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<int> batch(order.begin() + start, order.begin() + end);
            const std::uint64_t noise = (static_cast<std::uint64_t>(epoch) << 32) ^ (start * 2654435761ull) ^
                                        config.seed;
            auto values = train_batch(ckpt.model, prepared, batch, weights, adam, lr, noise, config.threads);
            if (!std::isfinite(values.total)) {
                std::string term = "total";
                if (!std::isfinite(values.bce)) term = "bce";
                else if (!std::isfinite(values.dice)) term = "dice";
                else if (!std::isfinite(values.pos)) term = "pos";
                else if (!std::isfinite(values.score)) term = "score";
                throw std::runtime_error("non-finite " + term + " loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(batches));
            }
            elog.loss += values.total;
            elog.bce += values.bce;
            elog.dice += values.dice;
            elog.pos += values.pos;
            elog.score += values.score;
            ++batches;
        }
        elog.loss /= batches;
        elog.bce /= batches;
        elog.dice /= batches;
        elog.pos /= batches;
        elog.score /= batches;
        ckpt.history.push_back(elog);
        ckpt.epoch = epoch + 1;
        if (log)
            (*log) << "epoch " << epoch << " lr " << lr << " loss " << elog.loss << " (bce " << elog.bce
                   << " dice " << elog.dice << " pos " << elog.pos << " score " << elog.score << ")\n";
    }

    ckpt.adam_step = adam.step_count();
    ckpt.adam_m = adam.first_moments();
    ckpt.adam_v = adam.second_moments();
    ckpt.final_train_miou = evaluate_model(ckpt.model, prepared, weights, config.seed).summary.overall.miou;
    return ckpt;
}

template <typename Real>
std::vector<PreparedSample<Real>> prepare_dataset(const Checkpoint<Real>& ckpt,
                                                  const std::vector<ReferringSample>& dataset) {
    auto vocab = ckpt.vocabulary();
    std::vector<PreparedSample<Real>> prepared;
    prepared.reserve(dataset.size());
    for (const auto& s : dataset)
        prepared.push_back(prepare_sample<Real>(s, ckpt.model.config(), vocab));
    return prepared;
}

// ---- inference --------------------------------------------------------------

struct InferenceReport {
    std::string sample_id;
    int target_index = 0;
    std::string target_token;
    double score = 0.0;
    std::vector<std::uint8_t> point_mask;
    std::vector<double> response;                           // superpoint probabilities
    std::vector<std::array<double, 3>> per_round_position;  // target token, rounds 1..L
};

template <typename Real>
InferenceReport infer(const Checkpoint<Real>& ckpt, const ReferringSample& sample) {
    auto vocab = ckpt.vocabulary();
    auto prepared = prepare_sample<Real>(sample, ckpt.model.config(), vocab);
    Tape<Real> tape;
    auto result = ckpt.model.forward(tape, prepared, ckpt.config.weights(), ckpt.config.seed, false);

    InferenceReport report;
    report.sample_id = sample.sample_id;
    report.target_index = result.final_target_index;
    report.target_token = prepared.tokens[result.final_target_index];
    report.score = static_cast<double>(result.rounds.back().score.value()(0, 0));
    report.point_mask = expand_mask(result.rounds.back().mask, prepared.assignment);
    const auto& resp = result.rounds.back().response.value();
    for (std::size_t j = 0; j < resp.cols(); ++j) report.response.push_back(resp(0, j));
    for (const auto& pos : result.round_positions) {
        const int idx = result.final_target_index;
        report.per_round_position.push_back({static_cast<double>(pos(idx, 0)),
                                             static_cast<double>(pos(idx, 1)),
                                             static_cast<double>(pos(idx, 2))});
    }
    return report;
}

// ---- gradient check ---------------------------------------------------------

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    bool pass = true;
    double tolerance = 1e-4;
};

/// Builds a tiny synthetic instance and compares every parameter's analytic
/// gradient of the total loss against central finite differences in double
/// precision. Relative error uses a small absolute floor so near-zero
/// gradients compare by absolute difference.
inline GradCheckReport grad_check(std::uint64_t seed = 0, const LossWeights& weights = LossWeights{},
                                  int rounds = 2) {
    using Real = double;
    const int d = 8, n_s = 6;  // D=8, N_t=4, N_s=6 instance
    Rng rng(seed * 7919 + 13);

    ModelConfig mc;
    mc.d_model = d;
    mc.c_text = d;
    mc.c_vis = d;
    mc.ffn_hidden = 2 * d;
    mc.rounds = rounds;
    mc.pe.kind = PeKind::table_rpe;
    mc.pe.d_model = d;
    mc.pe.rpe_bins = 9;
    mc.raw_dim = 6;
    mc.vocab_rows = 5;

    PreparedSample<Real> sample;
    sample.sample_id = "grad-check";
    sample.raw_bank = random_uniform_matrix<Real>(rng, n_s, mc.raw_dim, -1.0, 1.0);
    sample.centroids = random_uniform_matrix<Real>(rng, n_s, 3, -2.0, 2.0);
    sample.assignment = {0, 1, 2, 3, 4, 5};
    sample.n_points = n_s;
    sample.token_ids = {0, 1, 2, 3};
    sample.tokens = {"a", "b", "c", "d"};
    DependencyTree tree;
    tree.tokens = sample.tokens;
    tree.edges = {{"det", 1, 0}, {"nsubj", 1, 2}, {"nmod", 2, 3}};
    tree.root = 1;
    sample.tree_mask = dependency_attention_mask<Real>(tree);
    sample.rts_index = select_target_index(tree);
    sample.root_index = tree.root;
    sample.pooled_gt = {1, 0, 1, 0, 0, 1};
    sample.gt_point_mask = sample.pooled_gt;
    sample.gt_center = {0.3, -0.2, 0.5};
    sample.bounds = {-2, -2, -2, 2, 2, 2};

    // Model with live (non-zero) offset head so position gradients flow.
    Model<Real> model(mc, seed);
    model.params().at("tlm.off_W2") = glorot_matrix<Real>(rng, d, 3);
    model.params().at("ddi.W_o") = glorot_matrix<Real>(rng, d, d);
    for (int l = 0; l < rounds; ++l)
        model.params().at("saa." + std::to_string(l) + ".rpe") =
            random_normal_matrix<Real>(rng, 3, mc.pe.rpe_bins, 0.05);

    auto loss_value = [&]() {
        Tape<Real> tape;
        // Same mode as the analytic pass so the train-time jitter (a fixed
        // function of the seed) is part of the differentiated function.
        return model.forward(tape, sample, weights, seed, true).loss.value()(0, 0);
    };

    Tape<Real> tape;
    auto result = model.forward(tape, sample, weights, seed, true);
    tape.backward(result.loss);
    std::vector<Matrix<Real>> analytic;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        Var<Real> leaf{&tape, static_cast<int>(i)};
        const auto& g = tape.grad_of(leaf);
        analytic.push_back(g.empty() ? Matrix<Real>(model.params().value(i).rows(),
                                                    model.params().value(i).cols())
                                     : g);
    }

    GradCheckReport report;
    const double h = 1e-4;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        GradCheckGroup group;
        group.name = model.params().name(i);
        auto& value = model.params().value(i);
        for (std::size_t k = 0; k < value.size(); ++k) {
            const double keep = value.data()[k];
            value.data()[k] = keep + h;
            const double fp = loss_value();
            value.data()[k] = keep - h;
            const double fm = loss_value();
            value.data()[k] = keep;
            const double fd = (fp - fm) / (2 * h);
            const double ad = analytic[i].data()[k];
            const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-3});
            group.max_rel_err = std::max(group.max_rel_err, rel);
        }
        group.pass = group.max_rel_err < report.tolerance;
        report.pass = report.pass && group.pass;
        report.groups.push_back(std::move(group));
    }
    return report;
}

}  // namespace rgsan
