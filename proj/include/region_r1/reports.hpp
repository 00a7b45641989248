#pragma once

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "region_r1/errors.hpp"
#include "region_r1/ir_metrics.hpp"
#include "region_r1/rgrpo.hpp"

namespace region_r1 {

namespace detail {

// Shortest round-trip rendering keeps emissions deterministic and re-parsable.
inline std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string fmt(std::optional<double> v) { return v ? fmt(*v) : std::string(); }
inline std::string fmt(std::optional<int> v) {
    return v ? std::to_string(*v) : std::string();
}

}  // namespace detail

inline const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols = {
        "method", "mrr", "ndcg", "r@1", "r@5", "r@10", "r@20", "condr@1", "condr@5", "condr@10"};
    return cols;
}

inline std::vector<std::string> report_row(const std::string& method,
                                           const MetricsReport& report) {
    std::vector<std::string> row = {method, detail::fmt(report.mrr), detail::fmt(report.ndcg)};
    for (const int k : {1, 5, 10, 20}) row.push_back(detail::fmt(report.recall_at.at(k)));
    for (const int k : {1, 5, 10}) row.push_back(detail::fmt(report.cond_recall_at.at(k)));
    return row;
}

using NamedReports = std::vector<std::pair<std::string, MetricsReport>>;

inline std::string render_report_csv(const NamedReports& reports) {
    std::ostringstream out;
    const auto& cols = report_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << "\n";
    for (const auto& [method, report] : reports) {
        const auto row = report_row(method, report);
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << "\n";
    }
    return out.str();
}

inline std::string render_report_markdown(const NamedReports& reports) {
    std::ostringstream out;
    const auto& cols = report_columns();
    out << "|";
    for (const auto& c : cols) out << " " << c << " |";
    out << "\n|";
    for (std::size_t i = 0; i < cols.size(); ++i) out << "---|";
    out << "\n";
    for (const auto& [method, report] : reports) {
        out << "|";
        for (const auto& cell : report_row(method, report)) out << " " << cell << " |";
        out << "\n";
    }
    return out.str();
}

inline nlohmann::json report_to_json(const std::string& method, const MetricsReport& report) {
    nlohmann::json obj;
    obj["method"] = method;
    obj["mrr"] = report.mrr;
    obj["ndcg"] = report.ndcg;
    obj["n_queries"] = report.n_queries;
    for (const auto& [k, v] : report.recall_at) obj["recall_at"][std::to_string(k)] = v;
    for (const auto& [k, v] : report.cond_recall_at)
        obj["cond_recall_at"][std::to_string(k)] = v;
    return obj;
}

inline std::pair<std::string, MetricsReport> report_from_json(const nlohmann::json& obj) {
    MetricsReport report;
    report.mrr = obj.at("mrr").get<double>();
    report.ndcg = obj.at("ndcg").get<double>();
    report.n_queries = obj.at("n_queries").get<std::size_t>();
    for (const auto& [k, v] : obj.at("recall_at").items())
        report.recall_at[std::stoi(k)] = v.get<double>();
    for (const auto& [k, v] : obj.at("cond_recall_at").items())
        report.cond_recall_at[std::stoi(k)] = v.get<double>();
    return {obj.at("method").get<std::string>(), report};
}

inline std::string render_report_jsonl(const NamedReports& reports) {
    std::string out;
    for (const auto& [method, report] : reports)
        out += report_to_json(method, report).dump() + "\n";
    return out;
}

inline NamedReports load_report_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report file: " + path);
    NamedReports reports;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        reports.push_back(report_from_json(nlohmann::json::parse(line)));
    }
    return reports;
}

inline void emit_report(const NamedReports& reports, const std::string& format,
                        const std::string& path) {
    std::string rendered;
    if (format == "csv")
        rendered = render_report_csv(reports);
    else if (format == "md")
        rendered = render_report_markdown(reports);
    else if (format == "jsonl")
        rendered = render_report_jsonl(reports);
    else
        throw ConfigInfeasibleError("unknown report format: " + format);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    out << rendered;
}

// ---- per-query evaluation records --------------------------------------

inline const char* records_csv_header() {
    return "query_id,decision,x1,y1,x2,y2,area_frac,base_rank,post_rank,base_margin,post_margin";
}

inline void save_records(const std::vector<EvalRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write records: " + path);
    out << records_csv_header() << "\n";
    for (const auto& r : records) {
        out << r.query_id << "," << to_string(r.action.decision) << ",";
        if (r.action.box)
            out << r.action.box->x1 << "," << r.action.box->y1 << "," << r.action.box->x2
                << "," << r.action.box->y2;
        else
            out << ",,,";
        out << "," << detail::fmt(r.area_fraction) << "," << detail::fmt(r.base_rank) << ","
            << detail::fmt(r.post_rank) << "," << detail::fmt(r.base_margin) << ","
            << detail::fmt(r.post_margin) << "\n";
    }
}

inline std::vector<EvalRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open records: " + path);
    std::vector<EvalRecord> records;
    std::string line;
    std::getline(in, line);  // header
    if (line != records_csv_header())
        throw IoError("unexpected records header: " + line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        cells.resize(11);
        EvalRecord r;
        r.query_id = cells[0];
        if (cells[1] == "REGION") {
            r.action = Action::region({std::stoi(cells[2]), std::stoi(cells[3]),
                                       std::stoi(cells[4]), std::stoi(cells[5])});
        } else {
            r.action = Action::full();
        }
        r.area_fraction = std::stod(cells[6]);
        if (!cells[7].empty()) r.base_rank = std::stoi(cells[7]);
        if (!cells[8].empty()) r.post_rank = std::stoi(cells[8]);
        if (!cells[9].empty()) r.base_margin = std::stod(cells[9]);
        if (!cells[10].empty()) r.post_margin = std::stod(cells[10]);
        records.push_back(std::move(r));
    }
    return records;
}

// ---- behavior analysis (rank-1 / rank>1 splits) --------------------------

struct BehaviorReport {
    std::string split;
    std::size_t n_queries = 0;
    double rc_rate = 0.0;
    double help = 0.0;
    double hurt = 0.0;
    double no_change = 0.0;
};

// Help/Hurt/No-change fractions per split; FULL actions leave the ranking
// untouched and land in no_change. An empty split is reported with n = 0.
inline std::pair<BehaviorReport, BehaviorReport> behavior_analysis(
    const std::vector<EvalRecord>& records) {
    BehaviorReport rank1{"rank1"};
    BehaviorReport rank_gt1{"rank_gt1"};
    for (const auto& r : records) {
        if (!r.base_rank || !r.post_rank) continue;
        BehaviorReport& split = *r.base_rank == 1 ? rank1 : rank_gt1;
        split.n_queries += 1;
        if (r.action.decision == Decision::Region) split.rc_rate += 1.0;
        if (*r.post_rank < *r.base_rank)
            split.help += 1.0;
        else if (*r.post_rank > *r.base_rank)
            split.hurt += 1.0;
        else
            split.no_change += 1.0;
    }
    for (auto* split : {&rank1, &rank_gt1}) {
        if (split->n_queries == 0) continue;
        const double n = static_cast<double>(split->n_queries);
        split->rc_rate /= n;
        split->help /= n;
        split->hurt /= n;
        split->no_change /= n;
    }
    return {rank1, rank_gt1};
}

inline std::string render_behavior_csv(const std::pair<BehaviorReport, BehaviorReport>& splits) {
    std::ostringstream out;
    out << "split,n,rc_rate,help,hurt,no_change\n";
    for (const auto* split : {&splits.first, &splits.second}) {
        out << split->split << "," << split->n_queries << "," << detail::fmt(split->rc_rate)
            << "," << detail::fmt(split->help) << "," << detail::fmt(split->hurt) << ","
            << detail::fmt(split->no_change) << "\n";
    }
    return out.str();
}

// ---- margin scatter -------------------------------------------------------

// Margin before/after per REGION decision; FULL rows are omitted because the
// margin cannot move without a crop.
inline std::size_t margin_scatter(const std::vector<EvalRecord>& records,
                                  const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write margin scatter: " + path);
    out << "query_id,margin_before,margin_after,decision\n";
    std::size_t rows = 0;
    for (const auto& r : records) {
        if (r.action.decision != Decision::Region) continue;
        if (!r.base_margin || !r.post_margin) continue;
        out << r.query_id << "," << detail::fmt(*r.base_margin) << ","
            << detail::fmt(*r.post_margin) << ",REGION\n";
        ++rows;
    }
    return rows;
}

// Fraction of scatter rows with margin_after > margin_before.
inline double above_diagonal_fraction(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open margin scatter: " + path);
    std::string line;
    std::getline(in, line);  // header
    std::size_t above = 0, total = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, before, after;
        std::getline(ss, id, ',');
        std::getline(ss, before, ',');
        std::getline(ss, after, ',');
        ++total;
        if (std::stod(after) > std::stod(before)) ++above;
    }
    if (total == 0) throw EmptyDatasetError("margin scatter has no REGION rows: " + path);
    return static_cast<double>(above) / static_cast<double>(total);
}

// ---- training curve -------------------------------------------------------

inline void save_curve(const TrainingCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write curve: " + path);
    out << "step,mean_reward,full_rate,eval_mrr\n";
    for (const auto& p : curve) {
        out << p.step << "," << detail::fmt(p.mean_reward) << "," << detail::fmt(p.full_rate)
            << "," << detail::fmt(p.eval_mrr) << "\n";
    }
}

// ---- learned-policy area distribution -------------------------------------

// Area fractions of greedy REGION choices, one per line; feeds random_crop's
// matched-area baseline. Returns the number of lines written.
inline std::size_t export_area_distribution(const PolicyParams& params,
                                            const std::vector<QueryContext>& contexts,
                                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write area distribution: " + path);
    std::size_t rows = 0;
    for (const auto& ctx : contexts) {
        const std::size_t index = argmax_action(distribution(params, ctx));
        if (index == 0) continue;
        out << detail::fmt(ctx.area_fraction(index)) << "\n";
        ++rows;
    }
    return rows;
}

}  // namespace region_r1
