#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>

#include "CLI11.hpp"
#include "chroma/error.hpp"
#include "commands.hpp"

// Exit codes: 0 success, 1 check failure, 2 config/validation, 3 I/O,
// 4 numeric divergence. CLI11's own parse failures count as config errors.

int main(int argc, char** argv) {
    CLI::App app{"Multi-spectral segmentation workbench: synthetic data, training, evaluation, and scaling reports"};
    app.require_subcommand(1);

    std::function<int()> action;

    chroma::cli::GenDataArgs gen;
    CLI::App* c_gen = app.add_subcommand("gen-data", "Generate a synthetic multi-spectral dataset");
    c_gen->add_option("--config", gen.config_path, "Generator config JSON; omit for defaults");
    c_gen->add_option("--out", gen.out_dir, "Output directory")->required();
    c_gen->callback([&] { action = [&] { return chroma::cli::cmd_gen_data(gen); }; });

    chroma::cli::SplitAuditArgs audit;
    CLI::App* c_audit = app.add_subcommand("split-audit", "Per-class split fractions and chi-squared distances");
    c_audit->add_option("--manifest", audit.manifest_path, "Dataset manifest JSON");
    c_audit->add_option("--fractions-csv", audit.fractions_csv, "Pre-tabulated fraction table to audit instead");
    c_audit->add_option("--out", audit.out_dir, "Output directory")->required();
    c_audit->callback([&] { action = [&] { return chroma::cli::cmd_split_audit(audit); }; });

    chroma::cli::TrainArgs train;
    CLI::App* c_train = app.add_subcommand("train", "Train a model from a JSON run config");
    c_train->add_option("--config", train.config_path, "Run config JSON (manifest, model, train)")->required();
    c_train->add_option("--out", train.out_dir, "Output directory")->required();
    c_train->callback([&] { action = [&] { return chroma::cli::cmd_train(train); }; });

    chroma::cli::EvalArgs eval;
    CLI::App* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    c_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint stem (<stem>.json/.bin)")->required();
    c_eval->add_option("--manifest", eval.manifest_path, "Dataset manifest JSON")->required();
    c_eval->add_option("--split", eval.split, "train, val, or test (default test)");
    c_eval->add_option("--attention", eval.attention_out, "Also dump the mean band-attention volume here");
    c_eval->add_option("--out", eval.out_dir, "Output directory")->required();
    c_eval->callback([&] { action = [&] { return chroma::cli::cmd_eval(eval); }; });

    chroma::cli::GradcheckArgs grad;
    CLI::App* c_grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    c_grad->add_option("--scope", grad.scope, "primitives, sdm, block, model, or all (default all)");
    c_grad->add_option("--seeds", grad.seeds, "Seeds per target (default 100)");
    c_grad->add_option("--tolerance", grad.tolerance, "Max relative error (default 1e-4)");
    c_grad->add_option("--out", grad.out_dir, "Optional directory for the CSV report");
    c_grad->callback([&] { action = [&] { return chroma::cli::cmd_gradcheck(grad); }; });

    chroma::cli::ScalingReportArgs scaling;
    CLI::App* c_scaling = app.add_subcommand("scaling-report", "Scaling coefficients and charts from run records");
    c_scaling->add_option("--records", scaling.records_csv, "records CSV (family,name,params,time,accuracy)")->required();
    c_scaling->add_option("--out", scaling.out_dir, "Output directory")->required();
    c_scaling->callback([&] { action = [&] { return chroma::cli::cmd_scaling_report(scaling); }; });

    chroma::cli::PlotArgs plot;
    CLI::App* c_plot = app.add_subcommand("plot", "Render SVG charts from metrics or records CSVs");
    c_plot->add_option("--kind", plot.kind, "accuracy_curves, loss_ma, or scaling")->required();
    c_plot->add_option("--out", plot.out_dir, "Output directory")->required();
    c_plot->add_option("inputs", plot.inputs, "Input CSV files")->required();
    c_plot->callback([&] { action = [&] { return chroma::cli::cmd_plot(plot); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e); // prints help/usage or the parse error
        return code == 0 ? 0 : 2;     // --help exits 0; bad flags are config errors
    }

    try {
        return action();
    } catch (const chroma::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const chroma::IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 3;
    } catch (const chroma::Error& e) { // Config/Shape/Value: validation family
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
