#pragma once

// Loads batch results directories and emits the report tables: total
// returns, Sharpe ratios, correlation evolution, significance stats with
// per-universe ANOVA, plot data, and a conversation-quality table when
// scores are present. Emission is deterministic, so re-running over the same
// results directory reproduces every file byte for byte.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alphaforge/agents.hpp"
#include "alphaforge/analytics.hpp"
#include "alphaforge/rng.hpp"
#include "alphaforge/stats.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::report {

// One iteration directory's worth of results.
struct IterationRecord {
    std::string universe;
    std::string structure;
    int iteration = 0;
    double pooled_return = kNaN;
    double pooled_sharpe = kNaN;
    double pooled_volatility = kNaN;
    std::vector<int> corr_months;            // month indices, in file order
    std::vector<std::string> corr_tags;      // "YYYY-MM" labels
    std::vector<double> mean_correlation;    // per month, NaN preserved
    std::string scorer;                      // empty when no scores.csv
    std::vector<int> score_months;
    std::vector<double> scores;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s) {
    try {
        return std::stod(s);  // accepts the nan/inf spellings repr_double emits
    } catch (const std::exception&) {
        return kNaN;
    }
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p,
                                                      const std::string& expected_header) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::string line;
    if (!std::getline(in, line) || split_csv(line) != split_csv(expected_header))
        throw std::runtime_error(p.string() + ": unexpected header, want '" + expected_header +
                                 "'");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(split_csv(line));
    return rows;
}

// Canonical structure ordering for table rows; unknown names sort last.
inline int structure_order(const std::string& name) {
    const auto all = agents::all_structures();
    for (size_t i = 0; i < all.size(); ++i)
        if (agents::structure_name(all[i]) == name) return static_cast<int>(i);
    return static_cast<int>(all.size());
}

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return kNaN;
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace detail

inline IterationRecord load_iteration(const std::filesystem::path& dir) {
    IterationRecord rec;

    std::ifstream in(dir / "summary.json", std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + (dir / "summary.json").string());
    nlohmann::json summary = nlohmann::json::parse(in);
    const auto& config = summary.at("config");
    rec.universe = config.at("universe").get<std::string>();
    rec.structure = config.at("structure").get<std::string>();
    rec.iteration = summary.at("iteration").get<int>();
    const auto& pooled = summary.at("pooled");
    auto num = [](const nlohmann::json& v) { return v.is_null() ? kNaN : v.get<double>(); };
    rec.pooled_return = num(pooled.at("return"));
    rec.pooled_sharpe = num(pooled.at("sharpe"));
    rec.pooled_volatility = num(pooled.at("volatility"));

    for (const auto& row :
         detail::read_csv(dir / "correlations.csv", "month,tag,mean_pairwise_correlation")) {
        if (row.size() != 3)
            throw std::runtime_error((dir / "correlations.csv").string() + ": malformed row");
        rec.corr_months.push_back(std::stoi(row[0]));
        rec.corr_tags.push_back(row[1]);
        rec.mean_correlation.push_back(detail::parse_double(row[2]));
    }

    if (std::filesystem::exists(dir / "scores.csv")) {
        for (const auto& row : detail::read_csv(dir / "scores.csv", "month,tag,scorer,score")) {
            if (row.size() != 4)
                throw std::runtime_error((dir / "scores.csv").string() + ": malformed row");
            rec.score_months.push_back(std::stoi(row[0]));
            rec.scorer = row[2];
            rec.scores.push_back(detail::parse_double(row[3]));
        }
    }
    return rec;
}

// Finds every iteration directory (identified by its summary.json) under the
// results root, in a deterministic order independent of filesystem
// enumeration: universe, then canonical structure order, then iteration.
inline std::vector<IterationRecord> load_results(const std::string& results_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(results_dir))
        throw std::invalid_argument("results directory not found: " + results_dir);
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::recursive_directory_iterator(results_dir))
        if (entry.is_regular_file() && entry.path().filename() == "summary.json")
            dirs.push_back(entry.path().parent_path());
    std::sort(dirs.begin(), dirs.end());

    std::vector<IterationRecord> out;
    for (const auto& d : dirs) out.push_back(load_iteration(d));
    if (out.empty())
        throw std::invalid_argument("no iteration results under " + results_dir);
    std::sort(out.begin(), out.end(), [](const IterationRecord& a, const IterationRecord& b) {
        if (a.universe != b.universe) return a.universe < b.universe;
        const int oa = detail::structure_order(a.structure);
        const int ob = detail::structure_order(b.structure);
        if (oa != ob) return oa < ob;
        if (a.structure != b.structure) return a.structure < b.structure;
        return a.iteration < b.iteration;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct EvolutionRow {
    std::string structure;
    std::string universe;
    int n = 0;                 // iterations in the group
    double initial = kNaN;     // mean of first-month correlations
    double initial_lo = kNaN;
    double initial_hi = kNaN;
    double final_ = kNaN;      // mean of last-month correlations
    double final_lo = kNaN;
    double final_hi = kNaN;
    double change = kNaN;
    bool low_n = false;
};

struct AnovaRow {
    std::string universe;
    std::string metric;  // "return" or "final_correlation"
    int groups = 0;
    stats::AnovaResult result;
};

struct QualityRow {
    std::string scorer;
    std::string structure;
    std::string universe;
    int n = 0;
    double mean = kNaN;     // mean over iterations of per-iteration mean score
    double initial = kNaN;  // mean of first scored month
    double final_ = kNaN;   // mean of last scored month
    double change = kNaN;
};

struct ReportBundle {
    std::vector<IterationRecord> records;
    std::vector<analytics::ConfigStats> returns_table;
    std::vector<analytics::ConfigStats> sharpe_table;
    std::vector<EvolutionRow> evolution;
    std::vector<AnovaRow> anova;
    std::vector<QualityRow> quality;
    std::vector<std::string> files;  // paths written by emit_report, in order
};

namespace detail {

// Groups records into (universe, structure) cells preserving the sorted
// record order, pulling one scalar per iteration.
inline std::vector<analytics::ConfigSamples> collect_samples(
    const std::vector<IterationRecord>& records,
    const std::function<double(const IterationRecord&)>& pick) {
    std::vector<analytics::ConfigSamples> out;
    for (const auto& rec : records) {
        if (out.empty() || out.back().universe != rec.universe ||
            out.back().structure != rec.structure)
            out.push_back({rec.structure, rec.universe, {}});
        out.back().values.push_back(pick(rec));
    }
    return out;
}

inline std::vector<double> finite_only(const std::vector<double>& v) {
    std::vector<double> out;
    for (double x : v)
        if (std::isfinite(x)) out.push_back(x);
    return out;
}

}  // namespace detail

inline std::vector<EvolutionRow> correlation_evolution_table(
    const std::vector<IterationRecord>& records, uint64_t seed) {
    auto first_corr = [](const IterationRecord& r) {
        return r.mean_correlation.empty() ? kNaN : r.mean_correlation.front();
    };
    auto last_corr = [](const IterationRecord& r) {
        return r.mean_correlation.empty() ? kNaN : r.mean_correlation.back();
    };
    auto initial_groups = detail::collect_samples(records, first_corr);
    auto final_groups = detail::collect_samples(records, last_corr);

    std::vector<EvolutionRow> out;
    for (size_t g = 0; g < initial_groups.size(); ++g) {
        EvolutionRow row;
        row.structure = initial_groups[g].structure;
        row.universe = initial_groups[g].universe;
        row.n = static_cast<int>(initial_groups[g].values.size());
        const auto label = row.structure + "/" + row.universe;

        auto fill = [&](const std::vector<double>& values, std::string_view which, double& mean,
                        double& lo, double& hi) {
            auto finite = detail::finite_only(values);
            if (finite.size() >= 2) {
                auto ci = stats::bootstrap_ci(finite, 1000, 0.95,
                                              derive_key(derive_key(seed, which), label));
                mean = ci.mean;
                lo = ci.lower;
                hi = ci.upper;
            } else if (finite.size() == 1) {
                mean = finite[0];
            }
            if (finite.size() < 5) row.low_n = true;
        };
        fill(initial_groups[g].values, "corr_initial", row.initial, row.initial_lo,
             row.initial_hi);
        fill(final_groups[g].values, "corr_final", row.final_, row.final_lo, row.final_hi);
        row.change = row.final_ - row.initial;
        out.push_back(row);
    }
    return out;
}

// One-way ANOVA across structures within each universe, on pooled returns
// and on final-month correlations. Universes without at least two structure
// groups of two or more finite samples produce no row.
inline std::vector<AnovaRow> anova_table(const std::vector<IterationRecord>& records) {
    auto add_rows = [&](const std::string& metric,
                        const std::function<double(const IterationRecord&)>& pick,
                        std::vector<AnovaRow>& out) {
        auto groups = detail::collect_samples(records, pick);
        std::set<std::string> universes;
        for (const auto& g : groups) universes.insert(g.universe);
        for (const auto& u : universes) {
            std::vector<std::vector<double>> values;
            for (const auto& g : groups) {
                if (g.universe != u) continue;
                auto finite = detail::finite_only(g.values);
                if (finite.size() >= 2) values.push_back(std::move(finite));
            }
            if (values.size() < 2) continue;
            AnovaRow row;
            row.universe = u;
            row.metric = metric;
            row.groups = static_cast<int>(values.size());
            row.result = stats::one_way_anova(values);
            out.push_back(row);
        }
    };
    std::vector<AnovaRow> out;
    add_rows("return", [](const IterationRecord& r) { return r.pooled_return; }, out);
    add_rows(
        "final_correlation",
        [](const IterationRecord& r) {
            return r.mean_correlation.empty() ? kNaN : r.mean_correlation.back();
        },
        out);
    std::sort(out.begin(), out.end(), [](const AnovaRow& a, const AnovaRow& b) {
        if (a.universe != b.universe) return a.universe < b.universe;
        return a.metric < b.metric;
    });
    return out;
}

inline std::vector<QualityRow> quality_table(const std::vector<IterationRecord>& records) {
    std::vector<QualityRow> out;
    std::vector<std::vector<double>> means, initials, finals;
    for (const auto& rec : records) {
        if (rec.scorer.empty() || rec.scores.empty()) continue;
        if (out.empty() || out.back().universe != rec.universe ||
            out.back().structure != rec.structure || out.back().scorer != rec.scorer) {
            out.push_back({rec.scorer, rec.structure, rec.universe, 0, kNaN, kNaN, kNaN, kNaN});
            means.emplace_back();
            initials.emplace_back();
            finals.emplace_back();
        }
        out.back().n += 1;
        means.back().push_back(detail::mean_of(rec.scores));
        initials.back().push_back(rec.scores.front());
        finals.back().push_back(rec.scores.back());
    }
    for (size_t i = 0; i < out.size(); ++i) {
        out[i].mean = detail::mean_of(means[i]);
        out[i].initial = detail::mean_of(initials[i]);
        out[i].final_ = detail::mean_of(finals[i]);
        out[i].change = out[i].final_ - out[i].initial;
    }
    return out;
}

inline ReportBundle build_report(std::vector<IterationRecord> records, uint64_t seed = 0) {
    const std::string baseline = agents::structure_name(agents::Structure::Baseline);
    ReportBundle bundle;
    bundle.records = std::move(records);

    auto returns_samples = detail::collect_samples(
        bundle.records, [](const IterationRecord& r) { return r.pooled_return; });
    auto sharpe_samples = detail::collect_samples(
        bundle.records, [](const IterationRecord& r) { return r.pooled_sharpe; });
    bundle.returns_table =
        analytics::config_stats_table(returns_samples, baseline, derive_key(seed, "returns"));
    bundle.sharpe_table =
        analytics::config_stats_table(sharpe_samples, baseline, derive_key(seed, "sharpe"));
    bundle.evolution = correlation_evolution_table(bundle.records, seed);
    bundle.anova = anova_table(bundle.records);
    bundle.quality = quality_table(bundle.records);
    return bundle;
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline std::string csv_bool(bool b) { return b ? "1" : "0"; }

inline nlohmann::ordered_json stats_row_json(const analytics::ConfigStats& s) {
    return {{"structure", s.structure},
            {"universe", s.universe},
            {"iterations", s.n},
            {"mean", s.mean},
            {"ci_low", s.ci_low},
            {"ci_high", s.ci_high},
            {"half_width", (s.ci_high - s.ci_low) / 2.0},
            {"low_n", s.low_n}};
}

// Grid mirror of the table layout: structure rows, universe columns.
inline nlohmann::ordered_json stats_grid_json(const std::vector<analytics::ConfigStats>& rows) {
    std::vector<std::string> structures;
    for (const auto& s : rows)
        if (std::find(structures.begin(), structures.end(), s.structure) == structures.end())
            structures.push_back(s.structure);
    std::sort(structures.begin(), structures.end(), [](const auto& a, const auto& b) {
        const int oa = structure_order(a), ob = structure_order(b);
        return oa != ob ? oa < ob : a < b;
    });
    nlohmann::ordered_json grid = nlohmann::ordered_json::object();
    for (const auto& st : structures) {
        nlohmann::ordered_json by_universe = nlohmann::ordered_json::object();
        for (const auto& s : rows)
            if (s.structure == st)
                by_universe[s.universe] = {{"mean", s.mean},
                                           {"half_width", (s.ci_high - s.ci_low) / 2.0}};
        grid[st] = std::move(by_universe);
    }
    return grid;
}

inline void write_file(const std::filesystem::path& p, const std::string& content,
                       std::vector<std::string>& files) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << content;
    files.push_back(p.string());
}

inline std::string metric_table_csv(const std::vector<analytics::ConfigStats>& rows) {
    std::ostringstream out;
    out << "structure,universe,iterations,mean,ci_low,ci_high,half_width,low_n\n";
    for (const auto& s : rows)
        out << s.structure << ',' << s.universe << ',' << s.n << ',' << repr_double(s.mean)
            << ',' << repr_double(s.ci_low) << ',' << repr_double(s.ci_high) << ','
            << repr_double((s.ci_high - s.ci_low) / 2.0) << ',' << csv_bool(s.low_n) << '\n';
    return out.str();
}

inline std::string metric_table_json(const std::string& metric,
                                     const std::vector<analytics::ConfigStats>& rows) {
    nlohmann::ordered_json j;
    j["metric"] = metric;
    j["ci_level"] = 0.95;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& s : rows) j["rows"].push_back(stats_row_json(s));
    j["grid"] = stats_grid_json(rows);
    return j.dump(2) + "\n";
}

}  // namespace detail

// Emits all report files into out_dir and returns the bundle behind them.
inline ReportBundle emit_report(const std::string& results_dir, const std::string& out_dir,
                                uint64_t seed = 0) {
    namespace fs = std::filesystem;
    ReportBundle bundle = build_report(load_results(results_dir), seed);
    fs::create_directories(out_dir);
    const fs::path out(out_dir);

    detail::write_file(out / "returns.csv", detail::metric_table_csv(bundle.returns_table),
                       bundle.files);
    detail::write_file(out / "returns.json",
                       detail::metric_table_json("total_return", bundle.returns_table),
                       bundle.files);
    detail::write_file(out / "sharpe.csv", detail::metric_table_csv(bundle.sharpe_table),
                       bundle.files);
    detail::write_file(out / "sharpe.json",
                       detail::metric_table_json("sharpe", bundle.sharpe_table), bundle.files);

    {
        std::ostringstream csv;
        csv << "structure,universe,iterations,initial,initial_ci_low,initial_ci_high,"
               "final,final_ci_low,final_ci_high,change,low_n\n";
        nlohmann::ordered_json j;
        j["ci_level"] = 0.95;
        j["rows"] = nlohmann::ordered_json::array();
        for (const auto& r : bundle.evolution) {
            csv << r.structure << ',' << r.universe << ',' << r.n << ','
                << repr_double(r.initial) << ',' << repr_double(r.initial_lo) << ','
                << repr_double(r.initial_hi) << ',' << repr_double(r.final_) << ','
                << repr_double(r.final_lo) << ',' << repr_double(r.final_hi) << ','
                << repr_double(r.change) << ',' << detail::csv_bool(r.low_n) << '\n';
            j["rows"].push_back({{"structure", r.structure},
                                 {"universe", r.universe},
                                 {"iterations", r.n},
                                 {"initial", r.initial},
                                 {"initial_ci", {r.initial_lo, r.initial_hi}},
                                 {"final", r.final_},
                                 {"final_ci", {r.final_lo, r.final_hi}},
                                 {"change", r.change},
                                 {"low_n", r.low_n}});
        }
        detail::write_file(out / "correlation_evolution.csv", csv.str(), bundle.files);
        detail::write_file(out / "correlation_evolution.json", j.dump(2) + "\n", bundle.files);
    }

    {
        std::ostringstream csv;
        csv << "metric,structure,universe,iterations,mean,ci_low,ci_high,t_vs_baseline,"
               "p_vs_baseline,significant,low_n\n";
        nlohmann::ordered_json j;
        j["alpha_per_test"] = analytics::kBonferroniAlpha;
        j["comparisons"] = nlohmann::ordered_json::array();
        auto emit_rows = [&](const std::string& metric,
                             const std::vector<analytics::ConfigStats>& rows) {
            for (const auto& s : rows) {
                csv << metric << ',' << s.structure << ',' << s.universe << ',' << s.n << ','
                    << repr_double(s.mean) << ',' << repr_double(s.ci_low) << ','
                    << repr_double(s.ci_high) << ',' << repr_double(s.t_vs_baseline) << ','
                    << repr_double(s.p_vs_baseline) << ',' << detail::csv_bool(s.significant)
                    << ',' << detail::csv_bool(s.low_n) << '\n';
                auto row = detail::stats_row_json(s);
                row["metric"] = metric;
                row["t_vs_baseline"] = s.t_vs_baseline;
                row["p_vs_baseline"] = s.p_vs_baseline;
                row["significant"] = s.significant;
                j["comparisons"].push_back(std::move(row));
            }
        };
        emit_rows("return", bundle.returns_table);
        emit_rows("sharpe", bundle.sharpe_table);

        std::ostringstream anova_csv;
        anova_csv << "universe,metric,groups,f,df_between,df_within,p\n";
        j["anova"] = nlohmann::ordered_json::array();
        for (const auto& a : bundle.anova) {
            anova_csv << a.universe << ',' << a.metric << ',' << a.groups << ','
                      << repr_double(a.result.f) << ',' << a.result.df_between << ','
                      << a.result.df_within << ',' << repr_double(a.result.p) << '\n';
            j["anova"].push_back({{"universe", a.universe},
                                  {"metric", a.metric},
                                  {"groups", a.groups},
                                  {"f", a.result.f},
                                  {"df_between", a.result.df_between},
                                  {"df_within", a.result.df_within},
                                  {"p", a.result.p}});
        }
        detail::write_file(out / "stats.csv", csv.str(), bundle.files);
        detail::write_file(out / "anova.csv", anova_csv.str(), bundle.files);
        detail::write_file(out / "stats.json", j.dump(2) + "\n", bundle.files);
    }

    {
        // Plot data: per-month mean correlation per (universe, structure),
        // averaged over iterations with a finite value for that month.
        std::ostringstream csv;
        csv << "universe,structure,month,tag,mean_correlation,iterations\n";
        size_t i = 0;
        while (i < bundle.records.size()) {
            size_t j = i;
            while (j < bundle.records.size() &&
                   bundle.records[j].universe == bundle.records[i].universe &&
                   bundle.records[j].structure == bundle.records[i].structure)
                ++j;
            std::map<int, std::pair<double, int>> by_month;  // month -> (sum, count)
            std::map<int, std::string> tags;
            for (size_t k = i; k < j; ++k) {
                const auto& rec = bundle.records[k];
                for (size_t m = 0; m < rec.corr_months.size(); ++m) {
                    tags.emplace(rec.corr_months[m], rec.corr_tags[m]);
                    if (!std::isfinite(rec.mean_correlation[m])) continue;
                    auto& slot = by_month[rec.corr_months[m]];
                    slot.first += rec.mean_correlation[m];
                    slot.second += 1;
                }
            }
            for (const auto& [month, tag] : tags) {
                const auto it = by_month.find(month);
                const double mean =
                    it == by_month.end() ? kNaN : it->second.first / it->second.second;
                const int n = it == by_month.end() ? 0 : it->second.second;
                csv << bundle.records[i].universe << ',' << bundle.records[i].structure << ','
                    << month << ',' << tag << ',' << repr_double(mean) << ',' << n << '\n';
            }
            i = j;
        }
        detail::write_file(out / "plot_correlation.csv", csv.str(), bundle.files);
    }

    if (!bundle.quality.empty()) {
        std::ostringstream csv;
        csv << "scorer,structure,universe,iterations,mean,initial,final,change\n";
        nlohmann::ordered_json j;
        j["rows"] = nlohmann::ordered_json::array();
        for (const auto& q : bundle.quality) {
            csv << q.scorer << ',' << q.structure << ',' << q.universe << ',' << q.n << ','
                << repr_double(q.mean) << ',' << repr_double(q.initial) << ','
                << repr_double(q.final_) << ',' << repr_double(q.change) << '\n';
            j["rows"].push_back({{"scorer", q.scorer},
                                 {"structure", q.structure},
                                 {"universe", q.universe},
                                 {"iterations", q.n},
                                 {"mean", q.mean},
                                 {"initial", q.initial},
                                 {"final", q.final_},
                                 {"change", q.change}});
        }
        detail::write_file(out / "quality.csv", csv.str(), bundle.files);
        detail::write_file(out / "quality.json", j.dump(2) + "\n", bundle.files);
    }

    return bundle;
}

}  // namespace alphaforge::report
