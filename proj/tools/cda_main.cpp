// cda: train and probe contrastive-adversarial domain adaptation experiments.
//
// Subcommands: gen, train, eval, ablate, plot. Exit codes: 0 success,
// 2 config or usage error, 3 divergence during training.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cda/config.hpp"
#include "cda/metrics.hpp"
#include "cda/trainer.hpp"

namespace {

using namespace cda;

RunConfig load_or_exit(const std::string& config_path,
                       const std::vector<std::string>& overrides) {
    std::vector<std::string> violations;
    RunConfig rc = load_run_config(config_path, overrides, violations);
    if (!violations.empty()) {
        std::cerr << "config error: " << violations.size() << " violation(s) in "
                  << config_path << "\n";
        for (const std::string& v : violations) std::cerr << "  - " << v << "\n";
        std::exit(2);
    }
    return rc;
}

// Projects source and target embeddings to 2d and writes the scatter plot
// plus the raw embedding table.
void export_projection(const CdaModel& m, const LabeledDataset& src,
                       const UnlabeledDataset& tgt, const std::string& csv_path,
                       const std::string& svg_path, int epoch, std::uint64_t hash) {
    Mat z_s = forward_embed(m, src.X);
    Mat z_t = forward_embed(m, tgt.X);
    Mat all(z_s.rows() + z_t.rows(), z_s.cols());
    all << z_s, z_t;
    VecI labels(all.rows());
    labels.head(z_s.rows()) = src.Y;
    if (tgt.hidden_Y)
        labels.tail(z_t.rows()) = *tgt.hidden_Y;
    else
        labels.tail(z_t.rows()).setConstant(-1);
    std::vector<std::string> domains;
    domains.insert(domains.end(), static_cast<size_t>(z_s.rows()), "source");
    domains.insert(domains.end(), static_cast<size_t>(z_t.rows()), "target");

    export_embeddings(EmbeddingDump{domains, labels, all, epoch, hash}, csv_path);
    try {
        Mat coords = pca_project(all, 2);
        render_scatter(coords, labels, domains, svg_path);
    } catch (const Error& e) {
        std::cerr << "warning: scatter skipped: " << e.what() << "\n";
    }
}

TrainResult run_training(const RunConfig& rc, const LabeledDataset& src,
                         const UnlabeledDataset& tgt) {
    std::filesystem::create_directories(rc.out_dir);
    HistoryWriter live(rc.out_dir + "/history.csv");
    CdaModel model = build_model(rc, src.X.cols(), src.num_classes);
    return train(rc.train, std::move(model), src, tgt, &live);
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
    RunConfig rc = load_or_exit(config_path, overrides);
    auto [src, tgt] = build_datasets(rc);
    TrainResult res = run_training(rc, src, tgt);
    export_projection(res.model, src, tgt, rc.out_dir + "/embeddings.csv",
                      rc.out_dir + "/scatter.svg", rc.train.schedule.epochs,
                      rc.train.config_hash);
    std::cout << "final_target_acc=" << format_real(res.history.back().tgt_acc, 6) << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::vector<std::string>& overrides,
             std::string checkpoint) {
    RunConfig rc = load_or_exit(config_path, overrides);
    if (checkpoint.empty()) checkpoint = rc.out_dir + "/checkpoint_final.bin";
    std::uint64_t hash = 0;
    CdaModel m = load_checkpoint<Real>(checkpoint, &hash);
    if (hash != rc.train.config_hash)
        std::cerr << "warning: checkpoint was written under a different config\n";
    auto [src, tgt] = build_datasets(rc);
    std::cout << "src_acc=" << format_real(evaluate(m, src), 6) << "\n";
    if (tgt.hidden_Y)
        std::cout << "tgt_acc=" << format_real(evaluate(m, tgt), 6) << "\n";
    else
        std::cout << "tgt_acc=unknown (target has no labels)\n";
    return 0;
}

int cmd_plot(const std::string& config_path, const std::vector<std::string>& overrides,
             std::string checkpoint) {
    RunConfig rc = load_or_exit(config_path, overrides);
    if (checkpoint.empty()) checkpoint = rc.out_dir + "/checkpoint_final.bin";
    std::uint64_t hash = 0;
    CdaModel m = load_checkpoint<Real>(checkpoint, &hash);
    auto [src, tgt] = build_datasets(rc);
    std::filesystem::create_directories(rc.out_dir);
    std::string csv = rc.out_dir + "/embeddings.csv";
    std::string svg = rc.out_dir + "/scatter.svg";
    export_projection(m, src, tgt, csv, svg, rc.train.schedule.epochs, hash);
    std::cout << "wrote " << csv << " and " << svg << "\n";
    return 0;
}

// Runs the full method and its adversarial-only ablation on identical data,
// then writes a per-epoch accuracy comparison and both embedding scatters.
int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides) {
    KeyValues kv = parse_config_file(config_path);
    apply_overrides(kv, overrides);

    KeyValues kv_cda = kv;
    kv_cda["train.contrastive_enabled"] = "true";
    kv_cda["train.adversarial_enabled"] = "true";
    KeyValues kv_dann = kv;
    kv_dann["train.contrastive_enabled"] = "false";
    kv_dann["train.adversarial_enabled"] = "true";

    std::vector<std::string> violations;
    RunConfig rc_cda = resolve_run_config(kv_cda, violations);
    RunConfig rc_dann = resolve_run_config(kv_dann, violations);
    if (!violations.empty()) {
        std::cerr << "config error: " << violations.size() << " violation(s) in "
                  << config_path << "\n";
        for (const std::string& v : violations) std::cerr << "  - " << v << "\n";
        return 2;
    }
    std::string root = rc_cda.out_dir;
    rc_cda.out_dir += "/cda";
    rc_cda.train.out_dir = rc_cda.out_dir;
    rc_dann.out_dir = root + "/dann";
    rc_dann.train.out_dir = rc_dann.out_dir;

    // both arms see the same datasets: same data seed, same draw
    auto [src, tgt] = build_datasets(rc_cda);
    TrainResult cda_res = run_training(rc_cda, src, tgt);
    TrainResult dann_res = run_training(rc_dann, src, tgt);

    std::filesystem::create_directories(root);
    std::string cmp_path = root + "/ablation.csv";
    std::ofstream cmp(cmp_path);
    require(cmp.good(), "ablate: cannot open " + cmp_path);
    cmp << "epoch,cda_tgt_acc,dann_tgt_acc\n";
    size_t epochs = std::min(cda_res.history.size(), dann_res.history.size());
    for (size_t e = 0; e < epochs; ++e)
        cmp << cda_res.history[e].epoch << "," << format_real(cda_res.history[e].tgt_acc, 6)
            << "," << format_real(dann_res.history[e].tgt_acc, 6) << "\n";
    cmp.close();

    export_projection(cda_res.model, src, tgt, root + "/embeddings_cda.csv",
                      root + "/scatter_cda.svg", rc_cda.train.schedule.epochs,
                      rc_cda.train.config_hash);
    export_projection(dann_res.model, src, tgt, root + "/embeddings_dann.csv",
                      root + "/scatter_dann.svg", rc_dann.train.schedule.epochs,
                      rc_dann.train.config_hash);

    std::cout << "cda_final_tgt_acc=" << format_real(cda_res.history.back().tgt_acc, 6)
              << "\n";
    std::cout << "dann_final_tgt_acc=" << format_real(dann_res.history.back().tgt_acc, 6)
              << "\n";
    std::cout << "wrote " << cmp_path << "\n";
    return 0;
}

struct GenOptions {
    std::string generator;
    Eigen::Index n = 1000;
    Real noise = 0.1;
    Real rotation = 0;
    Real translate_x = 0;
    Real translate_y = 0;
    std::string centers;
    Real shift_x = 0;
    Real shift_y = 0;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_gen(const GenOptions& g) {
    LabeledDataset ds;
    if (g.generator == "two-moons" || g.generator == "two_moons") {
        ds = gen_two_moons(g.n, g.noise, g.rotation, g.translate_x, g.translate_y, g.seed);
    } else if (g.generator == "blobs") {
        require(!g.centers.empty(), "gen: blobs needs --centers \"x,y,sd; x,y,sd; ...\"");
        std::vector<std::string> violations;
        std::vector<BlobCenter> centers = detail::parse_centers(g.centers, &violations);
        require(violations.empty() && centers.size() >= 2,
                "gen: --centers must define at least 2 centers");
        size_t dim = centers.front().mean.size();
        std::vector<Real> shift(dim, 0.0);
        if (dim >= 1) shift[0] = g.shift_x;
        if (dim >= 2) shift[1] = g.shift_y;
        ds = gen_blobs(g.n, centers, shift, g.seed);
    } else {
        throw Error("gen: unknown generator '" + g.generator +
                    "' (expected two-moons or blobs)");
    }
    std::string out = g.out.empty() ? g.generator + ".csv" : g.out;
    save_csv(ds, out);
    std::cout << "wrote " << ds.X.rows() << " rows (" << ds.num_classes << " classes) to "
              << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrastive-adversarial domain adaptation laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string checkpoint;
    GenOptions gen_opts;

    CLI::App* gen = app.add_subcommand("gen", "generate a dataset file");
    gen->add_option("generator", gen_opts.generator, "two-moons or blobs")->required();
    gen->add_option("--n", gen_opts.n, "sample count");
    gen->add_option("--noise", gen_opts.noise, "gaussian noise sd");
    gen->add_option("--rotation", gen_opts.rotation, "rotation in degrees (two-moons)");
    gen->add_option("--translate-x", gen_opts.translate_x, "x translation (two-moons)");
    gen->add_option("--translate-y", gen_opts.translate_y, "y translation (two-moons)");
    gen->add_option("--centers", gen_opts.centers, "blob centers \"x,y,sd; x,y,sd\"");
    gen->add_option("--shift-x", gen_opts.shift_x, "x shift (blobs)");
    gen->add_option("--shift-y", gen_opts.shift_y, "y shift (blobs)");
    gen->add_option("--seed", gen_opts.seed, "rng seed");
    gen->add_option("--out", gen_opts.out, "output CSV path");

    auto add_common = [&](CLI::App* sub, bool with_checkpoint) {
        sub->add_option("--config", config_path, "run config file")->required();
        sub->add_option("--override", overrides, "key=value override (repeatable)");
        if (with_checkpoint)
            sub->add_option("--checkpoint", checkpoint,
                            "checkpoint path (default <out_dir>/checkpoint_final.bin)");
    };
    CLI::App* train_cmd = app.add_subcommand("train", "train per the config");
    add_common(train_cmd, false);
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd, true);
    CLI::App* ablate_cmd =
        app.add_subcommand("ablate", "train full and adversarial-only arms side by side");
    add_common(ablate_cmd, false);
    CLI::App* plot_cmd = app.add_subcommand("plot", "project embeddings to a scatter SVG");
    add_common(plot_cmd, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_opts);
        if (train_cmd->parsed()) return cmd_train(config_path, overrides);
        if (eval_cmd->parsed()) return cmd_eval(config_path, overrides, checkpoint);
        if (ablate_cmd->parsed()) return cmd_ablate(config_path, overrides);
        if (plot_cmd->parsed()) return cmd_plot(config_path, overrides, checkpoint);
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        if (!e.checkpoint_path.empty())
            std::cerr << "last checkpoint: " << e.checkpoint_path << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
