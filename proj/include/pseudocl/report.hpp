#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pseudocl/dataset.hpp"
#include "pseudocl/errors.hpp"
#include "pseudocl/metrics.hpp"

namespace pseudocl {

inline constexpr const char* kReportHeader = "step,classes_seen,acc,nmi,ari";
inline constexpr const char* kSummaryHeader = "avg_acc,last_acc,avg_nmi,avg_ari,seed,variant";

inline std::string report_to_csv(const std::vector<StepReport>& steps) {
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& r : steps)
        out += std::to_string(r.step) + "," + std::to_string(r.classes_seen) + "," + detail::format_double(r.acc) +
               "," + detail::format_double(r.nmi) + "," + detail::format_double(r.ari) + "\n";
    return out;
}

inline std::vector<StepReport> report_from_csv(std::string_view text, const std::string& source = "<memory>") {
    std::vector<StepReport> out;
    std::size_t pos = 0, line_no = 0;
    bool header = false;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.empty()) continue;
        const auto where = source + ":" + std::to_string(line_no);
        if (!header) {
            if (line != kReportHeader) throw FormatError(where + ": expected header " + kReportHeader);
            header = true;
            continue;
        }
        const auto f = detail::split_fields(line);
        if (f.size() != 5) throw FormatError(where + ": expected 5 fields");
        out.push_back({detail::parse_number<std::size_t>(f[0], where), detail::parse_number<std::size_t>(f[1], where),
                       detail::parse_number<double>(f[2], where), detail::parse_number<double>(f[3], where),
                       detail::parse_number<double>(f[4], where)});
    }
    if (!header) throw FormatError(source + ": empty report");
    return out;
}

inline std::string summary_to_csv(const Summary& s, std::uint64_t seed, const std::string& variant) {
    return std::string(kSummaryHeader) + "\n" + detail::format_double(s.avg_acc) + "," +
           detail::format_double(s.last_acc) + "," + detail::format_double(s.avg_nmi) + "," +
           detail::format_double(s.avg_ari) + "," + std::to_string(seed) + "," + variant + "\n";
}

/// Writes report.csv (and summary.csv when a summary is given) into `dir`.
inline void write_report(const std::filesystem::path& dir, const std::vector<StepReport>& steps,
                         const Summary* summary = nullptr, std::uint64_t seed = 0, const std::string& variant = "") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    detail::write_file_atomic(dir / "report.csv", report_to_csv(steps));
    if (summary) detail::write_file_atomic(dir / "summary.csv", summary_to_csv(*summary, seed, variant));
}

inline std::vector<StepReport> read_report(const std::filesystem::path& path) {
    return report_from_csv(detail::read_file(path), path.string());
}

/// Flat `key = value` sidecar text.
inline std::string meta_to_text(const std::map<std::string, std::string>& meta) {
    std::string out;
    for (const auto& [k, v] : meta) out += k + " = " + v + "\n";
    return out;
}

}  // namespace pseudocl
