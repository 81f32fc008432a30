#include "saliency_forge/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace saliency_forge {

using json = nlohmann::json;

namespace {

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::vector<std::string> methods_of(const BatchReport& report) {
    std::vector<std::string> methods;
    for (const auto& row : report.rows) {
        if (std::find(methods.begin(), methods.end(), row.method) == methods.end()) {
            methods.push_back(row.method);
        }
    }
    return methods;
}

const MetricSummary* find_row(const BatchReport& report, const std::string& method, MetricKind kind) {
    for (const auto& row : report.rows) {
        if (row.method == method && row.metric == kind) return &row;
    }
    return nullptr;
}

std::string column_title(MetricKind kind) {
    switch (kind) {
        case MetricKind::Insertion: return "Insertion (IAUC)";
        case MetricKind::Deletion: return "Deletion (DAUC)";
        case MetricKind::Irof: return "IROF";
    }
    return "";
}

double interpolate(const PerturbationCurve& curve, double x) {
    const auto& pts = curve.points;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (x <= pts[i].fraction) {
            const double t = (x - pts[i - 1].fraction) / (pts[i].fraction - pts[i - 1].fraction);
            return pts[i - 1].score + t * (pts[i].score - pts[i - 1].score);
        }
    }
    return pts.back().score;
}

const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a",
                          "#66a61e", "#e6ab02", "#a6761d", "#666666"};

}  // namespace

json metric_spec_to_json(const MetricSpec& spec) {
    return json{{"kind", to_string(spec.kind)},
                {"step_fraction", spec.step_fraction},
                {"baseline", to_string(spec.baseline)},
                {"dataset_mean", spec.dataset_mean},
                {"noise_seed", spec.noise_seed.value},
                {"irof_segments", spec.irof_segments},
                {"irof_compactness", spec.irof_compactness},
                {"score_mode", to_string(spec.score_mode)}};
}

json curve_to_json(const PerturbationCurve& curve) {
    json fractions = json::array();
    json scores = json::array();
    for (const auto& p : curve.points) {
        fractions.push_back(p.fraction);
        scores.push_back(p.score);
    }
    return json{{"fraction", std::move(fractions)}, {"score", std::move(scores)}, {"auc", curve.auc}};
}

json report_to_json(const BatchReport& report) {
    json rows = json::array();
    for (const auto& row : report.rows) {
        rows.push_back({{"method", row.method},
                        {"metric", to_string(row.metric)},
                        {"mean", row.mean},
                        {"std", row.std},
                        {"n", row.n},
                        {"incomplete", row.incomplete}});
    }
    json specs = json::array();
    for (const auto& s : report.specs) specs.push_back(metric_spec_to_json(s));
    json failures = json::array();
    for (const auto& r : report.records) {
        if (!r.value) {
            failures.push_back({{"id", r.id}, {"method", r.method},
                                {"metric", to_string(r.metric)}, {"error", r.error}});
        }
    }
    return json{{"schema_version", 1},
                {"rows", std::move(rows)},
                {"metadata", {{"metric_specs", std::move(specs)}}},
                {"failures", std::move(failures)}};
}

json diagnostics_to_json(const AggregatedMap& aggregated) {
    const auto& d = aggregated.diagnostics;
    json doc{{"method", d.method},
             {"n_maps", d.n_maps},
             {"flip_policy", d.flip_policy},
             {"flipped", aggregated.flipped}};
    if (d.method == "rbm") {
        doc["training_iterations"] = d.training_iterations;
        doc["training_updates"] = d.training_updates;
        doc["reconstruction_error"] = d.reconstruction_error;
    }
    if (d.flip_statistic) {
        doc["flip_statistic"] = {{"slice", d.flip_statistic->slice},
                                 {"agree", d.flip_statistic->agree},
                                 {"disagree", d.flip_statistic->disagree}};
    }
    if (d.metric_unflipped) {
        doc["metric_unflipped"] = *d.metric_unflipped;
        doc["metric_flipped"] = *d.metric_flipped;
        doc["metric_tie"] = d.metric_tie;
    }
    return doc;
}

std::string format_report_table(const BatchReport& report) {
    std::vector<MetricKind> metrics;
    for (const auto& s : report.specs) metrics.push_back(s.kind);
    const auto methods = methods_of(report);

    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"Method"};
    for (auto m : metrics) header.push_back(column_title(m));
    cells.push_back(header);
    for (const auto& method : methods) {
        std::vector<std::string> line{method};
        for (auto m : metrics) {
            const auto* row = find_row(report, method, m);
            if (row == nullptr || row->n == 0) {
                line.emplace_back("n/a");
                continue;
            }
            std::string cell = fixed(row->mean) + " ± " + fixed(row->std);
            if (row->incomplete) cell += " *";
            line.push_back(cell);
        }
        cells.push_back(line);
    }

    // Width in code points; "±" is two bytes in UTF-8.
    auto display_width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char c : s) w += (c & 0xC0) != 0x80;
        return w;
    };
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& line : cells) {
        for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], display_width(line[c]));
    }
    std::ostringstream out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t c = 0; c < cells[r].size(); ++c) {
            out << (c == 0 ? "" : "  ") << cells[r][c]
                << std::string(widths[c] - display_width(cells[r][c]), ' ');
        }
        out << '\n';
        if (r == 0) {
            std::size_t total = 0;
            for (auto w : widths) total += w;
            out << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
        }
    }
    bool any_incomplete = false;
    for (const auto& row : report.rows) any_incomplete |= row.incomplete;
    if (any_incomplete) out << "* incomplete: some images failed for this row\n";
    return out.str();
}

std::string report_to_csv(const BatchReport& report) {
    std::ostringstream out;
    out << "method,metric,mean,std,n,incomplete\n";
    for (const auto& row : report.rows) {
        out << row.method << ',' << to_string(row.metric) << ',' << fixed(row.mean, 6) << ','
            << fixed(row.std, 6) << ',' << row.n << ',' << (row.incomplete ? "true" : "false") << '\n';
    }
    return out.str();
}

std::string render_bar_chart_svg(const BatchReport& report, MetricKind metric) {
    const auto methods = methods_of(report);
    const double width = 120.0 + 90.0 * static_cast<double>(methods.size());
    const double height = 320.0, top = 40.0, bottom = 260.0, left = 60.0;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << column_title(metric) << "</text>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << width - 20 << "\" y2=\""
        << bottom << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = t / 4.0;
        const double y = bottom - v * (bottom - top);
        svg << "<text x=\"" << left - 35 << "\" y=\"" << y + 4 << "\">" << fixed(v) << "</text>\n";
        svg << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << width - 20 << "\" y2=\"" << y
            << "\" stroke=\"#ddd\"/>\n";
    }
    for (std::size_t i = 0; i < methods.size(); ++i) {
        const auto* row = find_row(report, methods[i], metric);
        if (row == nullptr || row->n == 0) continue;
        const double x = left + 20.0 + 90.0 * static_cast<double>(i);
        const double y = bottom - std::clamp(row->mean, 0.0, 1.0) * (bottom - top);
        svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"50\" height=\"" << bottom - y
            << "\" fill=\"" << kPalette[i % 8] << "\"/>\n";
        const double lo = bottom - std::clamp(row->mean - row->std, 0.0, 1.0) * (bottom - top);
        const double hi = bottom - std::clamp(row->mean + row->std, 0.0, 1.0) * (bottom - top);
        svg << "<line x1=\"" << x + 25 << "\" y1=\"" << lo << "\" x2=\"" << x + 25 << "\" y2=\"" << hi
            << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << x << "\" y=\"" << bottom + 16 << "\">" << methods[i] << "</text>\n";
        svg << "<text x=\"" << x << "\" y=\"" << y - 4 << "\">" << fixed(row->mean) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string render_curves_svg(const BatchReport& report, MetricKind metric) {
    constexpr int kGrid = 101;
    std::map<std::string, std::pair<std::vector<double>, std::size_t>> mean_curves;
    for (const auto& r : report.records) {
        if (r.metric != metric || !r.value || r.curve.points.size() < 2) continue;
        auto& [sum, count] = mean_curves[r.method];
        sum.resize(kGrid, 0.0);
        for (int g = 0; g < kGrid; ++g) sum[static_cast<std::size_t>(g)] += interpolate(r.curve, g / 100.0);
        ++count;
    }
    const double width = 480.0, height = 340.0, left = 50.0, right = 460.0, top = 30.0, bottom = 300.0;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<text x=\"" << left << "\" y=\"18\" font-size=\"14\">" << column_title(metric)
        << " mean curves</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << right - left << "\" height=\""
        << bottom - top << "\" fill=\"none\" stroke=\"black\"/>\n";
    std::size_t idx = 0;
    for (const auto& [method, acc] : mean_curves) {
        svg << "<polyline fill=\"none\" stroke=\"" << kPalette[idx % 8] << "\" points=\"";
        for (int g = 0; g < kGrid; ++g) {
            const double v = acc.first[static_cast<std::size_t>(g)] / static_cast<double>(acc.second);
            svg << left + (right - left) * g / 100.0 << ',' << bottom - v * (bottom - top) << ' ';
        }
        svg << "\"/>\n";
        svg << "<text x=\"" << right - 120 << "\" y=\"" << top + 16 + 14 * static_cast<double>(idx)
            << "\" fill=\"" << kPalette[idx % 8] << "\">" << method << "</text>\n";
        ++idx;
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace saliency_forge
