#include "idcloak/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "idcloak/errors.hpp"
#include "idcloak/keyvalue.hpp"

namespace idcloak {

namespace fs = std::filesystem;

std::string summary_csv_header() {
    return "arch,split,defense,attack,prompt,arms,ism_proxy,ism_proxy_sd,fdfr_proxy,quality_proxy";
}

std::string comparison_csv_header() {
    return "arch,split,defense,arms,ism_proxy,fdfr_proxy,quality_proxy,ism_drop_vs_clean";
}

std::string ablation_csv_header() {
    return "variant,defense,identity_subspace,cloak_objective,ism_proxy,fdfr_proxy,quality_proxy";
}

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows) {
    std::vector<SummaryRow> out;
    std::vector<std::vector<double>> isms;
    auto same = [](const SummaryRow& s, const MetricsRow& r) {
        return s.arch == r.arch && s.split == r.split && s.defense == r.defense && s.attack == r.attack &&
               s.prompt == r.prompt;
    };
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) { return same(s, r); });
        if (it == out.end()) {
            out.push_back({r.arch, r.split, r.defense, r.attack, r.prompt, 0, 0, 0, 0, 0});
            isms.emplace_back();
            it = out.end() - 1;
        }
        const auto idx = static_cast<std::size_t>(it - out.begin());
        it->arms += 1;
        it->ism += r.metrics.ism_proxy;
        it->fdfr += r.metrics.fdfr_proxy;
        it->quality += r.metrics.quality_proxy;
        isms[idx].push_back(r.metrics.ism_proxy);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto& s = out[i];
        s.ism /= s.arms;
        s.fdfr /= s.arms;
        s.quality /= s.arms;
        double ss = 0.0;
        for (double v : isms[i]) ss += (v - s.ism) * (v - s.ism);
        s.ism_sd = s.arms > 1 ? std::sqrt(ss / (s.arms - 1)) : 0.0;
    }
    return out;
}

namespace {

std::vector<MetricsRow> collect_rows(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
    const fs::path main = dir / "reports" / "metrics.csv";
    if (fs::exists(main)) return read_metrics_csv(main);
    std::vector<MetricsRow> rows;
    if (fs::is_directory(dir / "arms")) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir / "arms")) {
            if (fs::exists(e.path() / "metrics.csv")) files.push_back(e.path() / "metrics.csv");
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            auto part = read_metrics_csv(f);
            rows.insert(rows.end(), part.begin(), part.end());
        }
    }
    return rows;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else if (c == '"') out += "&quot;";
        else out += c;
    }
    return out;
}

const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3"};

// Grouped bar chart: one group per prompt, one bar per defense.
void write_bar_plot(const fs::path& path, const std::string& title, const std::vector<std::string>& groups,
                    const std::vector<std::string>& series, const std::vector<std::vector<double>>& values) {
    const double width = 760, height = 380, left = 60, right = 200, top = 40, bottom = 70;
    double vmax = 0.0, vmin = 0.0;
    for (const auto& g : values) {
        for (double v : g) {
            vmax = std::max(vmax, v);
            vmin = std::min(vmin, v);
        }
    }
    if (vmax - vmin <= 0.0) vmax = vmin + 1.0;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    auto y_of = [&](double v) { return top + plot_h * (vmax - v) / (vmax - vmin); };

    std::ofstream out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << left << "\" y=\"22\" font-size=\"14\">" << escape_xml(title) << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = vmin + (vmax - vmin) * k / 4.0;
        const double y = y_of(v);
        out << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << y << "\" y2=\"" << y
            << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
    }
    const double group_w = plot_w / std::max<std::size_t>(groups.size(), 1);
    const double bar_w = group_w * 0.8 / std::max<std::size_t>(series.size(), 1);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double gx = left + g * group_w + group_w * 0.1;
        for (std::size_t s = 0; s < series.size(); ++s) {
            const double v = values[g][s];
            const double y0 = y_of(std::max(v, 0.0)), y1 = y_of(std::min(v, 0.0));
            out << "<rect x=\"" << gx + s * bar_w << "\" y=\"" << y0 << "\" width=\"" << bar_w * 0.95
                << "\" height=\"" << y1 - y0 << "\" fill=\"" << kPalette[s % 7] << "\"><title>"
                << escape_xml(series[s]) << ": " << fmt(v) << "</title></rect>\n";
        }
        std::string label = groups[g];
        if (label.size() > 28) label = label.substr(0, 26) + "..";
        out << "<text x=\"" << gx + group_w * 0.4 << "\" y=\"" << top + plot_h + 16
            << "\" text-anchor=\"middle\">" << escape_xml(label) << "</text>\n";
    }
    out << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << y_of(0) << "\" y2=\"" << y_of(0)
        << "\" stroke=\"black\"/>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const double y = top + 14 * s;
        out << "<rect x=\"" << width - right + 12 << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\""
            << kPalette[s % 7] << "\"/>\n";
        out << "<text x=\"" << width - right + 28 << "\" y=\"" << y + 9 << "\">" << escape_xml(series[s])
            << "</text>\n";
    }
    out << "</svg>\n";
}

} // namespace

ReportFiles emit_report(const fs::path& dir) {
    const std::vector<MetricsRow> rows = collect_rows(dir);
    if (rows.empty()) throw DataError(dir.string() + ": nothing to report");
    const fs::path out_dir = dir / "reports";
    fs::create_directories(out_dir / "plots");
    ReportFiles files;
    files.rows = rows.size();

    const auto summary = summarize(rows);
    files.summary = out_dir / "summary.csv";
    {
        std::ofstream out(files.summary);
        out << summary_csv_header() << "\n";
        for (const auto& s : summary) {
            out << s.arch << ',' << s.split << ',' << to_string(s.defense) << ',' << to_string(s.attack) << ",\""
                << s.prompt << "\"," << s.arms << ',' << format_double(s.ism) << ',' << format_double(s.ism_sd)
                << ',' << format_double(s.fdfr) << ',' << format_double(s.quality) << "\n";
        }
    }

    files.comparison = out_dir / "comparison.csv";
    {
        std::ofstream out(files.comparison);
        out << comparison_csv_header() << "\n";
        for (const auto& s : summary) {
            if (s.prompt != "all") continue;
            std::string drop = "";
            for (const auto& c : summary) {
                if (c.prompt == "all" && c.defense == Defense::none && c.arch == s.arch && c.split == s.split &&
                    c.attack == s.attack && c.ism != 0.0) {
                    drop = format_double((c.ism - s.ism) / c.ism);
                }
            }
            out << s.arch << ',' << s.split << ',' << to_string(s.defense) << ',' << s.arms << ','
                << format_double(s.ism) << ',' << format_double(s.fdfr) << ',' << format_double(s.quality) << ','
                << drop << "\n";
        }
    }

    files.ablation = out_dir / "ablation.csv";
    {
        struct Variant {
            const char* name;
            Defense defense;
            const char* subspace;
            const char* objective;
        };
        const Variant variants[] = {
            {"no_objective", Defense::gradient_avg_universal, "no", "no"},
            {"single_point", Defense::id_cloak_single_point, "no", "yes"},
            {"identity_subspace", Defense::id_cloak, "yes", "yes"},
        };
        std::ofstream out(files.ablation);
        out << ablation_csv_header() << "\n";
        for (const auto& v : variants) {
            for (const auto& s : summary) {
                if (s.defense == v.defense && s.prompt == "all" && s.arch == "A" && s.split == "test") {
                    out << v.name << ',' << to_string(v.defense) << ',' << v.subspace << ',' << v.objective << ','
                        << format_double(s.ism) << ',' << format_double(s.fdfr) << ',' << format_double(s.quality)
                        << "\n";
                }
            }
        }
    }

    std::set<std::pair<std::string, std::string>> panels;
    for (const auto& s : summary) panels.insert({s.arch, s.split});
    for (const auto& [arch, split] : panels) {
        std::vector<std::string> prompts, defenses;
        for (const auto& s : summary) {
            if (s.arch != arch || s.split != split) continue;
            if (std::find(prompts.begin(), prompts.end(), s.prompt) == prompts.end()) prompts.push_back(s.prompt);
            if (std::find(defenses.begin(), defenses.end(), to_string(s.defense)) == defenses.end()) {
                defenses.push_back(to_string(s.defense));
            }
        }
        const std::pair<const char*, double SummaryRow::*> metrics[] = {
            {"ism_proxy", &SummaryRow::ism}, {"fdfr_proxy", &SummaryRow::fdfr}, {"quality_proxy", &SummaryRow::quality}};
        for (const auto& [mname, field] : metrics) {
            std::vector<std::vector<double>> values(prompts.size(), std::vector<double>(defenses.size(), 0.0));
            for (const auto& s : summary) {
                if (s.arch != arch || s.split != split) continue;
                const auto p = std::find(prompts.begin(), prompts.end(), s.prompt) - prompts.begin();
                const auto d = std::find(defenses.begin(), defenses.end(), to_string(s.defense)) - defenses.begin();
                values[static_cast<std::size_t>(p)][static_cast<std::size_t>(d)] = s.*field;
            }
            const fs::path p = out_dir / "plots" / (std::string(mname) + "_" + arch + "_" + split + ".svg");
            write_bar_plot(p, std::string(mname) + " per prompt (model " + arch + ", " + split + " split published)",
                           prompts, defenses, values);
            files.plots.push_back(p);
        }
    }
    return files;
}

} // namespace idcloak
