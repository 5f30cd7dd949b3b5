#include "commands.hpp"

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chroma/binio.hpp"
#include "chroma/checkpoint.hpp"
#include "chroma/data.hpp"
#include "chroma/env.hpp"
#include "chroma/error.hpp"
#include "chroma/gradcheck_suite.hpp"
#include "chroma/metrics.hpp"
#include "chroma/model.hpp"
#include "chroma/scaling.hpp"
#include "chroma/svg.hpp"
#include "chroma/train.hpp"

#include "json.hpp"

#ifndef CHROMA_VERSION
#define CHROMA_VERSION "unknown"
#endif

namespace chroma::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// CHROMA_OUT_DIR redirects every artifact, whatever --out says; handy when a
// caller cannot alter the command line.
fs::path resolve_out(const std::string& flag) {
    if (auto env_dir = env::output_dir_override()) return fs::path(*env_dir);
    return fs::path(flag);
}

std::optional<fs::path> optional_out(const std::string& flag) {
    if (auto env_dir = env::output_dir_override()) return fs::path(*env_dir);
    if (flag.empty()) return std::nullopt;
    return fs::path(flag);
}

struct RunContext {
    explicit RunContext(std::string command)
        : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

    json config = json::object();
    std::uint64_t seed = 0;

    void add_input(const fs::path& p) { inputs_.push_back(p.string()); }
    void add_output(const fs::path& p) { outputs_.push_back(p.string()); }
    void add_timing(const std::string& name, double seconds) { timings_[name] = seconds; }

    void write(const fs::path& dir) {
        json doc;
        doc["format"] = "chroma-run-v1";
        doc["command"] = command_;
        doc["version"] = CHROMA_VERSION;
        doc["seed"] = seed;
        doc["config"] = config;
        doc["inputs"] = inputs_;
        doc["outputs"] = outputs_;
        timings_["total_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        doc["timings"] = timings_;
        binio::write_text_file(dir / "run_manifest.json", doc.dump(2) + "\n");
    }

  private:
    std::string command_;
    std::chrono::steady_clock::time_point start_;
    std::vector<std::string> inputs_;
    std::vector<std::string> outputs_;
    json timings_ = json::object();
};

json parse_config_text(const std::string& text, const char* what) {
    try {
        json doc = json::parse(text);
        if (!doc.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
        return doc;
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + " is not valid JSON: " + e.what());
    }
}

json train_config_doc(const train::TrainConfig& tc) {
    return json{{"lr", tc.lr},
                {"lr_min", tc.lr_min},
                {"beta1", tc.beta1},
                {"beta2", tc.beta2},
                {"adam_eps", tc.adam_eps},
                {"batch", tc.batch},
                {"accum_steps", tc.accum_steps},
                {"epochs", tc.epochs},
                {"seed", tc.seed},
                {"data_fraction", tc.data_fraction},
                {"ma_window", tc.ma_window},
                {"cell_side", tc.cell_side},
                {"patch_cells", tc.patch_cells},
                {"patches_per_epoch", tc.patches_per_epoch}};
}

train::TrainConfig train_config_from_doc(const json& doc) {
    train::TrainConfig tc;
    const json known = train_config_doc(tc);
    for (const auto& [key, value] : doc.items()) {
        if (!known.contains(key)) throw ConfigError("train config has unknown key '" + key + "'");
    }
    try {
        tc.lr = doc.value("lr", tc.lr);
        tc.lr_min = doc.value("lr_min", tc.lr_min);
        tc.beta1 = doc.value("beta1", tc.beta1);
        tc.beta2 = doc.value("beta2", tc.beta2);
        tc.adam_eps = doc.value("adam_eps", tc.adam_eps);
        tc.batch = doc.value("batch", tc.batch);
        tc.accum_steps = doc.value("accum_steps", tc.accum_steps);
        tc.epochs = doc.value("epochs", tc.epochs);
        tc.seed = doc.value("seed", tc.seed);
        tc.data_fraction = doc.value("data_fraction", tc.data_fraction);
        tc.ma_window = doc.value("ma_window", tc.ma_window);
        tc.cell_side = doc.value("cell_side", tc.cell_side);
        tc.patch_cells = doc.value("patch_cells", tc.patch_cells);
        tc.patches_per_epoch = doc.value("patches_per_epoch", tc.patches_per_epoch);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config has a mistyped value: ") + e.what());
    }
    return tc;
}

struct TrainSpec {
    fs::path dataset_manifest;
    ModelConfig model;
    train::TrainConfig tc;
};

TrainSpec parse_train_spec(const std::string& text) {
    const json doc = parse_config_text(text, "train config");
    for (const auto& [key, value] : doc.items()) {
        if (key != "manifest" && key != "model" && key != "train") {
            throw ConfigError("train config has unknown key '" + key + "' (expected manifest, model, train)");
        }
    }
    if (!doc.contains("manifest") || !doc.at("manifest").is_string()) {
        throw ConfigError("train config needs a 'manifest' string pointing at the dataset");
    }
    if (!doc.contains("model") || !doc.at("model").is_object()) {
        throw ConfigError("train config needs a 'model' object");
    }
    TrainSpec spec;
    spec.dataset_manifest = doc.at("manifest").get<std::string>();
    spec.model = model_config_from_json(doc.at("model").dump());
    spec.tc = train_config_from_doc(doc.value("train", json::object()));
    return spec;
}

void write_scaling_charts(const scaling::ScalingReport& report, const fs::path& out, RunContext& run) {
    std::vector<svg::Series> coefficient, accuracy;
    for (const scaling::FamilyCurves& curves : report.curves) {
        if (!curves.coefficient_by_scale.empty()) {
            coefficient.push_back({curves.family, curves.coefficient_by_scale});
        }
        accuracy.push_back({curves.family, curves.accuracy_by_scale});
    }
    if (!coefficient.empty()) {
        svg::ChartOptions opt;
        opt.title = "Scaling efficiency";
        opt.x_label = "parameters";
        opt.y_label = "scaling coefficient";
        opt.log_x = true;
        binio::write_text_file(out / "scaling_coefficient.svg", svg::render_line_chart(coefficient, opt));
        run.add_output(out / "scaling_coefficient.svg");
        std::printf("wrote %s\n", (out / "scaling_coefficient.svg").string().c_str());
    }
    svg::ChartOptions opt;
    opt.title = "Accuracy vs parameters";
    opt.x_label = "parameters";
    opt.y_label = "accuracy";
    opt.log_x = true;
    binio::write_text_file(out / "scaling_accuracy.svg", svg::render_line_chart(accuracy, opt));
    run.add_output(out / "scaling_accuracy.svg");
    std::printf("wrote %s\n", (out / "scaling_accuracy.svg").string().c_str());
}

}  // namespace

int cmd_gen_data(const GenDataArgs& args) {
    RunContext run("gen-data");
    std::string text = "{}";
    if (!args.config_path.empty()) {
        text = binio::read_text_file(args.config_path);
        run.add_input(args.config_path);
    }
    const data::GenConfig config = data::gen_config_from_json(text);
    run.config = json::parse(data::gen_config_to_json(config));
    run.seed = config.seed;

    const fs::path out = resolve_out(args.out_dir);
    const data::DatasetManifest manifest = data::generate_synthetic_region(config, out);
    run.add_output(out / "manifest.json");
    for (const data::TileRecord& tile : manifest.tiles) run.add_output(out / tile.path);

    const std::size_t n_train = manifest.split_tile_indices(data::Split::train).size();
    const std::size_t n_val = manifest.split_tile_indices(data::Split::val).size();
    const std::size_t n_test = manifest.split_tile_indices(data::Split::test).size();
    std::printf("dataset %s\n", (out / "manifest.json").string().c_str());
    std::printf("tiles %zu (train %zu, val %zu, test %zu)  bands %lld  classes %zu\n", manifest.tiles.size(),
                n_train, n_val, n_test, static_cast<long long>(manifest.bands), manifest.classes());
    run.write(out);
    return 0;
}

int cmd_split_audit(const SplitAuditArgs& args) {
    if (args.manifest_path.empty() == args.fractions_csv.empty()) {
        throw ConfigError("split-audit needs exactly one of --manifest or --fractions-csv");
    }
    RunContext run("split-audit");
    std::vector<std::string> class_names;
    data::SplitAudit audit;
    if (!args.manifest_path.empty()) {
        run.add_input(args.manifest_path);
        run.config["manifest"] = args.manifest_path;
        const data::DatasetManifest manifest = data::load_manifest(args.manifest_path);
        class_names = manifest.class_names;
        run.seed = manifest.seed;
        audit = data::audit_splits(manifest);
    } else {
        run.add_input(args.fractions_csv);
        run.config["fractions_csv"] = args.fractions_csv;
        audit = data::audit_from_fractions_csv(args.fractions_csv, &class_names);
    }

    std::printf("chi_squared train/val  %.6f\n", audit.train_val);
    std::printf("chi_squared train/test %.6f\n", audit.train_test);
    std::printf("chi_squared val/test   %.6f\n", audit.val_test);

    const fs::path out = resolve_out(args.out_dir);
    binio::write_text_file(out / "audit.csv", data::render_split_audit_csv(class_names, audit));
    run.add_output(out / "audit.csv");
    std::printf("wrote %s\n", (out / "audit.csv").string().c_str());
    run.write(out);
    return 0;
}

int cmd_train(const TrainArgs& args) {
    RunContext run("train");
    run.add_input(args.config_path);
    const TrainSpec spec = parse_train_spec(binio::read_text_file(args.config_path));
    run.seed = spec.tc.seed;

    const data::DatasetManifest manifest = data::load_manifest(spec.dataset_manifest);
    run.add_input(spec.dataset_manifest);
    if (spec.model.num_classes != static_cast<std::int64_t>(manifest.classes())) {
        throw ConfigError("model declares " + std::to_string(spec.model.num_classes) +
                          " classes but the dataset has " + std::to_string(manifest.classes()));
    }
    const std::vector<data::SpectralTile> train_tiles = data::load_split(manifest, data::Split::train);
    const std::vector<data::SpectralTile> val_tiles = data::load_split(manifest, data::Split::val);

    Model<float> model(spec.model, spec.tc.seed);
    run.config = {{"manifest", spec.dataset_manifest.string()},
                  {"model", json::parse(model_config_to_json(spec.model))},
                  {"train", train_config_doc(spec.tc)}};
    std::printf("training %s '%s' (%lld params) on %zu tiles, validating on %zu\n", spec.model.family.c_str(),
                spec.model.name.c_str(), static_cast<long long>(model.parameter_count()), train_tiles.size(),
                val_tiles.size());

    const auto on_epoch = [](const metrics::MetricsRecord& r) {
        std::printf("epoch %lld  loss %.4f  ma %.4f  val_oa %.4f  %.1fs\n", static_cast<long long>(r.epoch),
                    r.loss, r.ma_loss, r.val_oa, r.seconds);
        std::fflush(stdout);
    };
    const train::TrainRun result = train::train_model(model, train_tiles, val_tiles, spec.tc, on_epoch);

    const fs::path out = resolve_out(args.out_dir);
    binio::write_text_file(out / "metrics.csv", metrics::render_metrics_csv(result.records));
    run.add_output(out / "metrics.csv");
    ckpt::save_model_checkpoint(out / "checkpoint", model,
                                {.epoch = spec.tc.epochs, .step = result.steps, .seed = spec.tc.seed});
    run.add_output(out / "checkpoint.json");
    run.add_output(out / "checkpoint.bin");
    std::printf("done: %lld optimizer steps, final val_oa %.4f\n", static_cast<long long>(result.steps),
                result.records.empty() ? 0.0 : result.records.back().val_oa);
    std::printf("wrote %s and %s\n", (out / "metrics.csv").string().c_str(),
                (out / "checkpoint.json").string().c_str());
    run.write(out);
    return 0;
}

int cmd_eval(const EvalArgs& args) {
    RunContext run("eval");
    run.add_input(args.checkpoint + ".json");
    run.add_input(args.checkpoint + ".bin");
    run.add_input(args.manifest_path);
    run.config = {{"checkpoint", args.checkpoint}, {"manifest", args.manifest_path}, {"split", args.split}};

    const ckpt::LoadedCheckpoint loaded = ckpt::load_checkpoint(args.checkpoint);
    run.seed = loaded.meta.seed;
    Model<float> model = ckpt::restore_model(loaded);
    const data::DatasetManifest manifest = data::load_manifest(args.manifest_path);
    if (model.config().num_classes != static_cast<std::int64_t>(manifest.classes())) {
        throw ConfigError("checkpoint predicts " + std::to_string(model.config().num_classes) +
                          " classes but the dataset has " + std::to_string(manifest.classes()));
    }
    const data::Split split = data::split_from_name(args.split);
    const std::vector<data::SpectralTile> tiles = data::load_split(manifest, split);

    const metrics::EvalResult result = metrics::evaluate(model, tiles);
    const double halfwidth = metrics::binomial_ci_halfwidth(result.oa, result.pixels);
    std::printf("OA %.3f ± %.3f (N=%lld)\n", result.oa, halfwidth, static_cast<long long>(result.pixels));

    const fs::path out = resolve_out(args.out_dir);
    binio::write_text_file(out / "confusion.csv", metrics::render_confusion_csv(manifest.class_names, result.confusion));
    run.add_output(out / "confusion.csv");
    std::printf("wrote %s\n", (out / "confusion.csv").string().c_str());

    if (!args.attention_out.empty()) {
        if (model.config().family != "chromaformer") {
            throw ConfigError("--attention needs a chromaformer checkpoint; this one is '" +
                              model.config().family + "'");
        }
        // Mean band-attention matrix over every patch of every evaluated tile.
        const std::int64_t c = model.config().in_bands;
        std::vector<double> sum(static_cast<std::size_t>(c * c), 0.0);
        std::int64_t patches = 0;
        for (const data::SpectralTile& tile : tiles) {
            const TensorF att = model.band_attention(tile.image); // [N_p x C x C]
            const std::int64_t np = att.extent(0);
            const auto a = att.data();
            for (std::int64_t p = 0; p < np; ++p) {
                for (std::int64_t i = 0; i < c * c; ++i) {
                    sum[static_cast<std::size_t>(i)] += static_cast<double>(a[static_cast<std::size_t>(p * c * c + i)]);
                }
            }
            patches += np;
        }
        std::vector<float> mean(sum.size());
        for (std::size_t i = 0; i < sum.size(); ++i) {
            mean[i] = static_cast<float>(sum[i] / static_cast<double>(patches));
        }
        fs::path att_path = args.attention_out;
        if (att_path.is_relative()) att_path = out / att_path;
        data::write_volume(att_path, TensorF({1, c, c}, std::move(mean)));
        run.add_output(att_path);
        std::printf("wrote %s (mean band attention over %lld patches)\n", att_path.string().c_str(),
                    static_cast<long long>(patches));
    }
    run.write(out);
    return 0;
}

int cmd_gradcheck(const GradcheckArgs& args) {
    RunContext run("gradcheck");
    gradcheck::SuiteOptions options;
    options.seeds = args.seeds;
    options.tolerance = args.tolerance;
    run.config = {{"scope", args.scope}, {"seeds", args.seeds}, {"tolerance", args.tolerance}};

    const std::vector<gradcheck::TargetResult> results = gradcheck::run_suite(args.scope, options);
    bool all_passed = true;
    for (const gradcheck::TargetResult& r : results) {
        std::printf("%-22s %-10s max_rel %.3e  tol %.0e  coords %lld  seeds %d  %s\n", r.name.c_str(),
                    r.scope.c_str(), r.max_rel_err, r.tolerance, static_cast<long long>(r.coords), r.seeds,
                    r.passed ? "PASS" : "FAIL");
        if (!r.passed) std::printf("  worst: %s\n", r.worst.c_str());
        all_passed = all_passed && r.passed;
    }
    std::printf("gradcheck %s: %zu targets %s\n", args.scope.c_str(), results.size(),
                all_passed ? "passed" : "FAILED");

    if (const auto out = optional_out(args.out_dir)) {
        std::string csv = "target,scope,seeds,coords,max_rel_err,tolerance,seconds,passed\n";
        char row[256];
        for (const gradcheck::TargetResult& r : results) {
            std::snprintf(row, sizeof(row), "%s,%s,%d,%lld,%.6e,%.6e,%.3f,%d\n", r.name.c_str(),
                          r.scope.c_str(), r.seeds, static_cast<long long>(r.coords), r.max_rel_err,
                          r.tolerance, r.seconds, r.passed ? 1 : 0);
            csv += row;
        }
        binio::write_text_file(*out / "gradcheck.csv", csv);
        run.add_output(*out / "gradcheck.csv");
        run.write(*out);
    }
    return all_passed ? 0 : 1;
}

int cmd_scaling_report(const ScalingReportArgs& args) {
    RunContext run("scaling-report");
    run.add_input(args.records_csv);
    run.config["records"] = args.records_csv;

    const scaling::ScalingReport report = scaling::build_report(scaling::parse_records_csv(args.records_csv));
    const std::string csv = scaling::render_report_csv(report);
    std::fputs(csv.c_str(), stdout);

    const fs::path out = resolve_out(args.out_dir);
    binio::write_text_file(out / "scaling_report.csv", csv);
    run.add_output(out / "scaling_report.csv");
    std::printf("wrote %s\n", (out / "scaling_report.csv").string().c_str());
    write_scaling_charts(report, out, run);
    run.write(out);
    return 0;
}

int cmd_plot(const PlotArgs& args) {
    RunContext run("plot");
    run.config["kind"] = args.kind;
    run.config["inputs"] = args.inputs;
    if (args.inputs.empty()) throw ConfigError("plot needs at least one input CSV");
    const fs::path out = resolve_out(args.out_dir);

    if (args.kind == "scaling") {
        if (args.inputs.size() != 1) throw ConfigError("plot --kind scaling takes exactly one records CSV");
        run.add_input(args.inputs[0]);
        write_scaling_charts(scaling::build_report(scaling::parse_records_csv(args.inputs[0])), out, run);
        run.write(out);
        return 0;
    }
    if (args.kind != "accuracy_curves" && args.kind != "loss_ma") {
        throw ConfigError("plot kind '" + args.kind + "' is not one of accuracy_curves, loss_ma, scaling");
    }

    const bool accuracy = args.kind == "accuracy_curves";
    std::vector<svg::Series> series;
    for (const std::string& input : args.inputs) {
        run.add_input(input);
        svg::Series s;
        s.label = fs::path(input).stem().string();
        for (const metrics::MetricsRecord& r : metrics::parse_metrics_csv(input)) {
            if (accuracy) {
                s.points.emplace_back(static_cast<double>(r.epoch), r.val_oa);
            } else {
                s.points.emplace_back(static_cast<double>(r.samples_seen), r.ma_loss);
            }
        }
        series.push_back(std::move(s));
    }
    svg::ChartOptions opt;
    if (accuracy) {
        opt.title = "Validation accuracy";
        opt.x_label = "epoch";
        opt.y_label = "validation OA";
    } else {
        opt.title = "Moving-average training loss";
        opt.x_label = "samples seen";
        opt.y_label = "moving-average loss";
        opt.log_x = true; // sample counts span decades
    }
    const fs::path file = out / (args.kind + ".svg");
    binio::write_text_file(file, svg::render_line_chart(series, opt));
    run.add_output(file);
    std::printf("wrote %s\n", file.string().c_str());
    run.write(out);
    return 0;
}

}  // namespace chroma::cli
