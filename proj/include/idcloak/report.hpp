#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "idcloak/experiment.hpp"

namespace idcloak {

// Mean of each metric over the arms sharing a key.
struct SummaryRow {
    std::string arch;
    std::string split;
    Defense defense = Defense::none;
    AttackMethod attack = AttackMethod::full_finetune;
    std::string prompt;
    int arms = 0;
    double ism = 0.0;
    double ism_sd = 0.0;
    double fdfr = 0.0;
    double quality = 0.0;
};

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows);

struct ReportFiles {
    std::filesystem::path summary;     // every (arch, split, defense, attack, prompt)
    std::filesystem::path comparison;  // defenses on the pooled prompts
    std::filesystem::path ablation;    // the three cloak variants
    std::vector<std::filesystem::path> plots;
    std::size_t rows = 0;
};

// Reads reports/metrics.csv, or the per-arm CSVs of a partial run, and
// writes the tables and SVG bar plots under reports/. An experiment
// directory without any metrics raises DataError.
ReportFiles emit_report(const std::filesystem::path& dir);

// Table column orders.
std::string summary_csv_header();
std::string comparison_csv_header();
std::string ablation_csv_header();

} // namespace idcloak
