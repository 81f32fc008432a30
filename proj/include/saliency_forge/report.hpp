#pragma once
// JSON / table / CSV / SVG renderings of metric reports and ensemble diagnostics.

#include <string>
#include <vector>

#include <json.hpp>

#include "saliency_forge/ensembles.hpp"
#include "saliency_forge/metrics.hpp"

namespace saliency_forge {

// {"rows": [{method, metric, mean, std, n, incomplete}], "metadata": {...}}
nlohmann::json report_to_json(const BatchReport& report);
nlohmann::json metric_spec_to_json(const MetricSpec& spec);
nlohmann::json curve_to_json(const PerturbationCurve& curve);
nlohmann::json diagnostics_to_json(const AggregatedMap& aggregated);

// One row per method, one "mean ± std" column per metric.
std::string format_report_table(const BatchReport& report);
std::string report_to_csv(const BatchReport& report);

// Bar chart (mean with ±std whiskers) of one metric across methods.
std::string render_bar_chart_svg(const BatchReport& report, MetricKind metric);
// Mean curve per method for one metric, resampled onto a common grid.
std::string render_curves_svg(const BatchReport& report, MetricKind metric);

}  // namespace saliency_forge
