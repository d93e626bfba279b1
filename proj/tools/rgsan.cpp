// Command-line front end: dataset generation, training, evaluation,
// inference, target selection, and the gradient self-check.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "rgsan/metrics.hpp"
#include "rgsan/synth.hpp"
#include "rgsan/train.hpp"

namespace fs = std::filesystem;
using namespace rgsan;

namespace {

int run_gen_scenes(const std::string& config_path, const std::string& out_dir, int count) {
    auto config = synth_config_from_json(load_json_file(config_path), config_path);
    auto samples = generate_samples(config, count);
    write_dataset(samples, out_dir, &config);
    int multiple = 0;
    for (const auto& s : samples)
        if (stratify(s.scene, s.target_instance) == Stratum::multiple) ++multiple;
    std::cout << "wrote " << samples.size() << " samples to " << out_dir << " (" << multiple
              << " multiple, " << samples.size() - multiple << " unique)\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir) {
    auto config = load_train_config(config_path);
    auto dataset = read_dataset(data_dir);
    fs::create_directories(out_dir);
    std::ofstream log((fs::path(out_dir) / "train.log").string());
    auto ckpt = train<TrainReal>(config, dataset, &log);
    const auto ckpt_path = (fs::path(out_dir) / "checkpoint.json").string();
    save_checkpoint(ckpt, ckpt_path);
    std::cout << "trained " << ckpt.epoch << " epochs on " << dataset.size() << " samples\n"
              << "final train mIoU " << ckpt.final_train_miou << "\n"
              << "checkpoint written to " << ckpt_path << "\n";
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& json_out) {
    auto ckpt = load_checkpoint<TrainReal>(ckpt_path);
    auto dataset = read_dataset(data_dir);
    auto prepared = prepare_dataset(ckpt, dataset);
    auto eval = evaluate_model(ckpt.model, prepared, ckpt.config.weights(), ckpt.config.seed);
    std::cout << summary_table(eval.summary);
    if (!json_out.empty()) {
        save_json_file(json_out, summary_to_json(eval.summary), 1);
        std::cout << "results written to " << json_out << "\n";
    } else {
        std::cout << summary_to_json(eval.summary).dump() << "\n";
    }
    return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& scene_path, const std::string& tree_path) {
    auto ckpt = load_checkpoint<TrainReal>(ckpt_path);
    ReferringSample sample;
    sample.sample_id = fs::path(scene_path).stem().string();
    sample.scene = load_scene(scene_path);
    sample.tree = load_dependency_tree(tree_path);
    sample.expression = sample.tree.tokens;
    sample.gt_point_mask.assign(sample.scene.num_points(), 0);  // no ground truth at inference
    sample.target_instance = -1;
    auto report = [&] {
        auto vocab = ckpt.vocabulary();
        auto prepared = prepare_sample<TrainReal>(sample, ckpt.model.config(), vocab);
        Tape<TrainReal> tape;
        auto result = ckpt.model.forward(tape, prepared, ckpt.config.weights(), ckpt.config.seed, false);
        InferenceReport r;
        r.sample_id = sample.sample_id;
        r.target_index = result.final_target_index;
        r.target_token = prepared.tokens[r.target_index];
        r.score = static_cast<double>(result.rounds.back().score.value()(0, 0));
        r.point_mask = expand_mask(result.rounds.back().mask, prepared.assignment);
        const auto& resp = result.rounds.back().response.value();
        for (std::size_t j = 0; j < resp.cols(); ++j) r.response.push_back(resp(0, j));
        for (const auto& pos : result.round_positions)
            r.per_round_position.push_back({static_cast<double>(pos(r.target_index, 0)),
                                            static_cast<double>(pos(r.target_index, 1)),
                                            static_cast<double>(pos(r.target_index, 2))});
        return r;
    }();

    json j;
    j["sample_id"] = report.sample_id;
    j["target_index"] = report.target_index;
    j["target_token"] = report.target_token;
    j["score"] = report.score;
    j["point_mask"] = report.point_mask;
    j["response_map"] = report.response;
    json rounds = json::array();
    for (const auto& p : report.per_round_position) rounds.push_back({p[0], p[1], p[2]});
    j["per_round_target_position"] = std::move(rounds);
    std::cout << j.dump(1) << "\n";
    return 0;
}

int run_select_target(const std::string& tree_path) {
    auto tree = load_dependency_tree(tree_path);
    const int idx = select_target_index(tree);
    std::cout << idx << " " << tree.tokens[idx] << "\n";
    return 0;
}

int run_grad_check(std::uint64_t seed) {
    auto report = grad_check(seed);
    for (const auto& g : report.groups)
        std::cout << (g.pass ? "ok   " : "FAIL ") << g.name << " max_rel_err " << g.max_rel_err << "\n";
    if (!report.pass) {
        std::cout << "grad-check FAILED (tolerance " << report.tolerance << ")\n";
        return 1;
    }
    std::cout << "grad-check passed: " << report.groups.size() << " parameter groups under "
              << report.tolerance << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RG-SAN: rule-guided spatial awareness for 3D referring segmentation"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, ckpt_path, scene_path, tree_path, json_out;
    int count = 64;
    std::uint64_t seed = 0;

    auto* gen = app.add_subcommand("gen-scenes", "Generate a synthetic referring dataset");
    gen->add_option("--config", config_path, "Synthetic scene config (JSON)")->required();
    gen->add_option("--out", out_dir, "Output dataset directory")->required();
    gen->add_option("--count", count, "Number of samples")->required();

    auto* tr = app.add_subcommand("train", "Train on a dataset directory");
    tr->add_option("--config", config_path, "Training config (JSON)")->required();
    tr->add_option("--data", data_dir, "Dataset directory")->required();
    tr->add_option("--out", out_dir, "Output directory for checkpoint and log")->required();

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    ev->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
    ev->add_option("--data", data_dir, "Dataset directory")->required();
    ev->add_option("--json", json_out, "Also write the results table as JSON");

    auto* in = app.add_subcommand("infer", "Run inference on one scene + expression tree");
    in->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
    in->add_option("--scene", scene_path, "Scene file (JSON)")->required();
    in->add_option("--tree", tree_path, "Dependency tree file (JSON)")->required();

    auto* st = app.add_subcommand("select-target", "Print the rule-selected target token");
    st->add_option("--tree", tree_path, "Dependency tree file (JSON)")->required();

    auto* gc = app.add_subcommand("grad-check", "Verify analytic gradients against finite differences");
    gc->add_option("--seed", seed, "Instance seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen_scenes(config_path, out_dir, count);
        if (tr->parsed()) return run_train(config_path, data_dir, out_dir);
        if (ev->parsed()) return run_eval(ckpt_path, data_dir, json_out);
        if (in->parsed()) return run_infer(ckpt_path, scene_path, tree_path);
        if (st->parsed()) return run_select_target(tree_path);
        if (gc->parsed()) return run_grad_check(seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
