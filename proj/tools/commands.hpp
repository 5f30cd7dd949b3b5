#pragma once

#include <string>
#include <vector>

// One function per subcommand. Each returns the process exit code for the
// success/check-failure axis (0 or 1) and reports everything else by
// throwing: ConfigError/ShapeError/ValueError for exit 2, IoError for 3,
// NumericError for 4. main() owns that mapping.
//
// Every command that produces artifacts writes a run_manifest.json next to
// them holding the command, the fully resolved config, seed, code version,
// input/output paths, and wall-clock timings — enough to re-run the job.

namespace chroma::cli {

struct GenDataArgs {
    std::string config_path; // empty = all defaults
    std::string out_dir;
};

struct SplitAuditArgs {
    std::string manifest_path;  // dataset mode
    std::string fractions_csv;  // fixture mode: audit a pre-tabulated fraction table
    std::string out_dir;
};

struct TrainArgs {
    std::string config_path;
    std::string out_dir;
};

struct EvalArgs {
    std::string checkpoint; // stem of <stem>.json / <stem>.bin
    std::string manifest_path;
    std::string split = "test";
    std::string attention_out; // optional band-attention dump (volume file)
    std::string out_dir;
};

struct GradcheckArgs {
    std::string scope = "all";
    int seeds = 100;
    double tolerance = 1e-4;
    std::string out_dir; // optional; table always goes to stdout
};

struct ScalingReportArgs {
    std::string records_csv;
    std::string out_dir;
};

struct PlotArgs {
    std::string kind; // accuracy_curves | loss_ma | scaling
    std::vector<std::string> inputs;
    std::string out_dir;
};

int cmd_gen_data(const GenDataArgs& args);
int cmd_split_audit(const SplitAuditArgs& args);
int cmd_train(const TrainArgs& args);
int cmd_eval(const EvalArgs& args);
int cmd_gradcheck(const GradcheckArgs& args);
int cmd_scaling_report(const ScalingReportArgs& args);
int cmd_plot(const PlotArgs& args);

}  // namespace chroma::cli
