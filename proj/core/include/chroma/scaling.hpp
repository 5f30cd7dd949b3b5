#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "chroma/error.hpp"

// Scaling-efficiency accounting across model families. Within a family the
// smallest-parameter run is the baseline; every other run gets ratio factors
//   G = accuracy / accuracy_base   (performance gain)
//   P = params   / params_base     (parameter growth)
//   C = time     / time_base       (computation growth)
// and the coefficient S = -1 / log10(G / (P * C)). Higher S means accuracy
// keeps up with cost for longer; S is undefined at the baseline and whenever
// G >= P * C. Only ratios enter, so units (raw counts vs millions, fractions
// vs percent, seconds vs hours) cancel.

namespace chroma::scaling {

struct RunRecord {
    std::string family;
    std::string name;
    double params = 0.0;
    double time = 0.0;  // per epoch, any consistent unit
    double accuracy = 0.0;

    void validate() const;
};

struct Factors {
    double g = 0.0;
    double p = 0.0;
    double c = 0.0;
};

Factors factors(const RunRecord& record, const RunRecord& baseline);

// Throws ValueError when G >= P * C (the formula's domain boundary).
double scaling_coefficient(double g, double p, double c);

struct ReportRow {
    RunRecord record;
    bool is_baseline = false;
    std::optional<Factors> ratio;          // absent on baseline / single-member rows
    std::optional<double> coefficient;     // absent when undefined
    std::string coefficient_label;         // "Baseline", "N/A", the number, or a flag
};

struct FamilyCurves {
    std::string family;
    std::vector<std::pair<double, double>> coefficient_by_scale;  // (P, S)
    std::vector<std::pair<double, double>> accuracy_by_scale;     // (P, accuracy)
};

struct ScalingReport {
    std::vector<ReportRow> rows;  // canonical order: family, params, name
    std::vector<FamilyCurves> curves;
};

// Order-invariant: records are sorted canonically before anything else.
ScalingReport build_report(std::vector<RunRecord> records);

std::vector<RunRecord> parse_records_csv(const std::filesystem::path& file);
std::string render_records_csv(const std::vector<RunRecord>& records);
std::string render_report_csv(const ScalingReport& report);

}  // namespace chroma::scaling
