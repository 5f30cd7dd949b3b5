#include "chroma/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "chroma/binio.hpp"

namespace chroma::scaling {

namespace {

std::string format_value(double v, const char* fmt) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

}  // namespace

void RunRecord::validate() const {
    if (family.empty() || name.empty()) throw ValueError("run record needs a family and a name");
    if (!(params >= 1.0)) throw ValueError("run '" + name + "' needs params >= 1");
    if (!(time > 0.0)) throw ValueError("run '" + name + "' needs a positive time");
    if (!(accuracy > 0.0)) throw ValueError("run '" + name + "' needs a positive accuracy");
}

Factors factors(const RunRecord& record, const RunRecord& baseline) {
    record.validate();
    baseline.validate();
    if (record.family != baseline.family) {
        throw ValueError("factors compare runs within one family, got '" + record.family + "' vs '" +
                         baseline.family + "'");
    }
    return Factors{record.accuracy / baseline.accuracy, record.params / baseline.params,
                   record.time / baseline.time};
}

double scaling_coefficient(double g, double p, double c) {
    if (!(g > 0.0) || !(p > 0.0) || !(c > 0.0)) throw ValueError("scaling factors must be positive");
    const double ratio = g / (p * c);
    if (ratio >= 1.0) {
        throw ValueError(ratio == 1.0 ? "coefficient undefined: gain exactly matches cost growth"
                                      : "coefficient undefined: gain exceeds cost growth (super-efficient)");
    }
    return -1.0 / std::log10(ratio);
}

ScalingReport build_report(std::vector<RunRecord> records) {
    if (records.empty()) throw ValueError("scaling report needs at least one run record");
    for (const RunRecord& r : records) r.validate();
    std::sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
        if (a.family != b.family) return a.family < b.family;
        if (a.params != b.params) return a.params < b.params;
        return a.name < b.name;
    });

    ScalingReport report;
    std::size_t start = 0;
    while (start < records.size()) {
        std::size_t end = start;
        while (end < records.size() && records[end].family == records[start].family) ++end;
        const std::size_t members = end - start;
        const RunRecord& baseline = records[start];  // smallest params after the canonical sort

        FamilyCurves curves;
        curves.family = baseline.family;
        for (std::size_t i = start; i < end; ++i) {
            ReportRow row;
            row.record = records[i];
            if (members == 1) {
                row.coefficient_label = "N/A";  // nothing to scale against
            } else if (i == start) {
                row.is_baseline = true;
                row.coefficient_label = "Baseline";
                curves.accuracy_by_scale.emplace_back(1.0, row.record.accuracy);
            } else {
                const Factors f = factors(records[i], baseline);
                row.ratio = f;
                curves.accuracy_by_scale.emplace_back(f.p, row.record.accuracy);
                if (f.g >= f.p * f.c) {
                    row.coefficient_label = f.g == f.p * f.c
                                                ? "undefined (gain matches cost growth)"
                                                : "undefined (super-efficient under this formula)";
                } else {
                    row.coefficient = scaling_coefficient(f.g, f.p, f.c);
                    row.coefficient_label = format_value(*row.coefficient, "%.3f");
                    curves.coefficient_by_scale.emplace_back(f.p, *row.coefficient);
                }
            }
            report.rows.push_back(std::move(row));
        }
        if (members > 1) report.curves.push_back(std::move(curves));
        start = end;
    }
    return report;
}

std::vector<RunRecord> parse_records_csv(const std::filesystem::path& file) {
    std::istringstream in(binio::read_text_file(file));
    std::string line;
    if (!std::getline(in, line) || line.rfind("family,name,params,time,accuracy", 0) != 0) {
        throw ValueError("records CSV '" + file.string() +
                         "' must start with header family,name,params,time,accuracy");
    }
    std::vector<RunRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string fields[5];
        for (int i = 0; i < 5; ++i) {
            if (!std::getline(row, fields[i], ',')) {
                throw ValueError("records CSV row '" + line + "' needs 5 columns");
            }
        }
        RunRecord record;
        record.family = fields[0];
        record.name = fields[1];
        try {
            record.params = std::stod(fields[2]);
            record.time = std::stod(fields[3]);
            record.accuracy = std::stod(fields[4]);
        } catch (const std::exception&) {
            throw ValueError("records CSV row '" + line + "' holds a non-numeric field");
        }
        record.validate();
        records.push_back(std::move(record));
    }
    if (records.empty()) throw ValueError("records CSV '" + file.string() + "' lists no runs");
    return records;
}

std::string render_records_csv(const std::vector<RunRecord>& records) {
    std::string csv = "family,name,params,time,accuracy\n";
    for (const RunRecord& r : records) {
        csv += r.family + "," + r.name + "," + format_value(r.params, "%.9g") + "," +
               format_value(r.time, "%.9g") + "," + format_value(r.accuracy, "%.9g") + "\n";
    }
    return csv;
}

std::string render_report_csv(const ScalingReport& report) {
    std::string csv = "family,name,params,time,accuracy,gain_factor,param_factor,compute_factor,scaling_coefficient\n";
    for (const ReportRow& row : report.rows) {
        csv += row.record.family + "," + row.record.name + "," + format_value(row.record.params, "%.9g") + "," +
               format_value(row.record.time, "%.9g") + "," + format_value(row.record.accuracy, "%.9g") + ",";
        if (row.ratio) {
            csv += format_value(row.ratio->g, "%.6f") + "," + format_value(row.ratio->p, "%.6f") + "," +
                   format_value(row.ratio->c, "%.6f");
        } else {
            csv += ",,";
        }
        csv += "," + row.coefficient_label + "\n";
    }
    return csv;
}

}  // namespace chroma::scaling
