#include "chroma/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "chroma/binio.hpp"

namespace chroma::metrics {

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

std::string render_metrics_csv(const std::vector<MetricsRecord>& records) {
    std::string csv = "epoch,samples_seen,loss,ma_loss,val_oa,seconds\n";
    for (const MetricsRecord& r : records) {
        csv += std::to_string(r.epoch) + "," + std::to_string(r.samples_seen) + "," + format_double(r.loss) +
               "," + format_double(r.ma_loss) + "," + format_double(r.val_oa) + "," + format_double(r.seconds) +
               "\n";
    }
    return csv;
}

std::vector<MetricsRecord> parse_metrics_csv(const std::filesystem::path& file) {
    std::istringstream in(binio::read_text_file(file));
    std::string line;
    if (!std::getline(in, line) || line.rfind("epoch,samples_seen,loss,ma_loss,val_oa,seconds", 0) != 0) {
        throw ValueError("metrics CSV '" + file.string() +
                         "' must start with header epoch,samples_seen,loss,ma_loss,val_oa,seconds");
    }
    std::vector<MetricsRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(row, field, ',')) fields.push_back(field);
        if (fields.size() != 6) {
            throw ValueError("metrics CSV row '" + line + "' needs 6 columns");
        }
        try {
            MetricsRecord r;
            r.epoch = std::stoll(fields[0]);
            r.samples_seen = std::stoll(fields[1]);
            r.loss = std::stod(fields[2]);
            r.ma_loss = std::stod(fields[3]);
            r.val_oa = std::stod(fields[4]);
            r.seconds = std::stod(fields[5]);
            records.push_back(r);
        } catch (const std::exception&) {
            throw ValueError("metrics CSV row '" + line + "' holds a non-numeric field");
        }
    }
    return records;
}

std::string render_confusion_csv(const std::vector<std::string>& class_names, const ConfusionMatrix& cm) {
    if (static_cast<std::int64_t>(class_names.size()) != cm.classes) {
        throw ShapeError("confusion CSV: " + std::to_string(class_names.size()) + " names for " +
                         std::to_string(cm.classes) + " classes");
    }
    std::string csv = "gt\\pred";
    for (const std::string& name : class_names) csv += "," + name;
    csv += "\n";
    for (std::int64_t gt = 0; gt < cm.classes; ++gt) {
        csv += class_names[static_cast<std::size_t>(gt)];
        for (std::int64_t pred = 0; pred < cm.classes; ++pred) {
            csv += "," + std::to_string(cm.at(gt, pred));
        }
        csv += "\n";
    }
    return csv;
}

}  // namespace chroma::metrics
