#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pseudocl/errors.hpp"
#include "pseudocl/linalg.hpp"
#include "pseudocl/rng.hpp"

namespace pseudocl {

/// Why a ground-truth label is being read. Reads are tallied per purpose so
/// a run can prove its unsupervised path never touched a label.
enum class LabelPurpose : std::size_t { setup = 0, first_task = 1, evaluation = 2, oracle = 3 };

inline const char* to_string(LabelPurpose p) {
    switch (p) {
        case LabelPurpose::setup: return "setup";
        case LabelPurpose::first_task: return "first_task";
        case LabelPurpose::evaluation: return "evaluation";
        case LabelPurpose::oracle: return "oracle";
    }
    return "?";
}

class LabelAudit {
public:
    void record(LabelPurpose p) noexcept { ++reads_[static_cast<std::size_t>(p)]; }
    std::size_t reads(LabelPurpose p) const noexcept { return reads_[static_cast<std::size_t>(p)]; }
    std::size_t total() const noexcept { return reads_[0] + reads_[1] + reads_[2] + reads_[3]; }

private:
    std::array<std::size_t, 4> reads_{};
};

/// Ground-truth labels behind an audited accessor.
class SealedLabels {
public:
    SealedLabels() = default;
    explicit SealedLabels(std::vector<std::int64_t> values) : values_(std::move(values)) {}

    std::int64_t read(std::size_t i, LabelPurpose purpose, LabelAudit& audit) const {
        audit.record(purpose);
        return values_.at(i);
    }
    std::size_t size() const noexcept { return values_.size(); }

    bool operator==(const SealedLabels&) const = default;

private:
    friend class Dataset;
    std::vector<std::int64_t> values_;
};

enum class Split : std::uint8_t { train, eval };

inline constexpr double kEvalFraction = 0.2;
inline constexpr std::uint64_t kDefaultSplitSeed = 1993;

/// Feature vectors with unique ids, sealed labels and a stratified
/// train/eval split derived deterministically from (ids, labels, split_seed).
class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<std::uint64_t> ids, Matrix features, std::vector<std::int64_t> labels,
            std::optional<std::uint64_t> generation_seed = std::nullopt,
            std::uint64_t split_seed = kDefaultSplitSeed)
        : ids_(std::move(ids)),
          features_(std::move(features)),
          labels_(std::move(labels)),
          generation_seed_(generation_seed),
          split_seed_(split_seed) {
        if (ids_.size() != features_.rows() || labels_.size() != ids_.size())
            throw DataError("Dataset: ids, features and labels have different lengths");
        if (ids_.empty()) throw DataError("Dataset: no samples");
        if (!all_finite(features_.values())) throw DataError("Dataset: non-finite feature value");
        for (std::size_t i = 0; i < ids_.size(); ++i)
            if (!index_.emplace(ids_[i], i).second)
                throw DataError("Dataset: duplicate sample id " + std::to_string(ids_[i]));
        for (auto l : labels_.values_) {
            if (l < 0) throw DataError("Dataset: negative label");
            ++class_counts_[l];
        }
        assign_split();
    }

    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t dim() const noexcept { return features_.cols(); }
    std::uint64_t id(std::size_t i) const { return ids_.at(i); }
    std::span<const double> features(std::size_t i) const { return features_.row(i); }
    const Matrix& feature_matrix() const noexcept { return features_; }
    const SealedLabels& labels() const noexcept { return labels_; }
    Split split(std::size_t i) const { return split_.at(i); }
    std::optional<std::uint64_t> generation_seed() const noexcept { return generation_seed_; }
    std::uint64_t split_seed() const noexcept { return split_seed_; }

    std::size_t index_of(std::uint64_t id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw DataError("Dataset: unknown sample id " + std::to_string(id));
        return it->second;
    }

    /// Metadata: per-class sample counts keyed by class id.
    const std::map<std::int64_t, std::size_t>& class_counts() const noexcept { return class_counts_; }
    std::size_t class_count() const noexcept { return class_counts_.size(); }

    /// Unsealed view for persistence only.
    const std::vector<std::int64_t>& raw_labels_for_storage() const noexcept { return labels_.values_; }

    bool operator==(const Dataset& o) const {
        return ids_ == o.ids_ && features_ == o.features_ && labels_ == o.labels_ &&
               generation_seed_ == o.generation_seed_ && split_seed_ == o.split_seed_ && split_ == o.split_;
    }

private:
    // Per class: members ordered by id, seeded shuffle, first round(20%)
    // (at least one) go to eval.
    void assign_split() {
        split_.assign(ids_.size(), Split::train);
        std::map<std::int64_t, std::vector<std::size_t>> members;
        for (std::size_t i = 0; i < ids_.size(); ++i) members[labels_.values_[i]].push_back(i);
        for (auto& [cls, idx] : members) {
            std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return ids_[a] < ids_[b]; });
            Rng rng(derive_seed(split_seed_, {static_cast<std::uint64_t>(cls)}));
            rng.shuffle(idx);
            const auto n_eval = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::llround(kEvalFraction * static_cast<double>(idx.size()))));
            for (std::size_t j = 0; j < n_eval && j < idx.size(); ++j) split_[idx[j]] = Split::eval;
        }
    }

    std::vector<std::uint64_t> ids_;
    Matrix features_;
    SealedLabels labels_;
    std::optional<std::uint64_t> generation_seed_;
    std::uint64_t split_seed_ = kDefaultSplitSeed;
    std::vector<Split> split_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
    std::map<std::int64_t, std::size_t> class_counts_;
};

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs
// ---------------------------------------------------------------------------

struct BlobSpec {
    std::size_t num_classes = 20;
    std::size_t dim = 16;
    std::size_t samples_per_class = 100;
    /// Class centres are separation * N(0, I).
    double separation = 1.0;
    /// Within-class standard deviation.
    double std = 0.1;
    std::uint64_t seed = 0;
    /// Optional: the last `nuisance_dims` coordinates carry no class signal
    /// (centre 0) and are pure noise with deviation `nuisance_std`.
    std::size_t nuisance_dims = 0;
    double nuisance_std = 0.0;

    void validate() const {
        if (num_classes == 0 || dim == 0 || samples_per_class == 0)
            throw ParameterError("BlobSpec: num_classes, dim and samples_per_class must be positive");
        if (!(separation > 0.0) || !(std > 0.0)) throw ParameterError("BlobSpec: separation and std must be positive");
        if (nuisance_dims >= dim) throw ParameterError("BlobSpec: nuisance_dims must leave at least one signal dimension");
        if (nuisance_dims > 0 && !(nuisance_std > 0.0))
            throw ParameterError("BlobSpec: nuisance_std must be positive when nuisance_dims > 0");
    }
};

/// Samples are written class-major with ids 0..N-1; labels are 0..C-1.
inline Dataset generate_gaussian_stream(const BlobSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Matrix centers(spec.num_classes, spec.dim);
    const std::size_t signal_dims = spec.dim - spec.nuisance_dims;
    for (std::size_t c = 0; c < spec.num_classes; ++c)
        for (std::size_t d = 0; d < signal_dims; ++d) centers(c, d) = spec.separation * rng.normal();

    const std::size_t n = spec.num_classes * spec.samples_per_class;
    Matrix x(n, spec.dim);
    std::vector<std::uint64_t> ids(n);
    std::vector<std::int64_t> labels(n);
    std::size_t i = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++i) {
            ids[i] = i;
            labels[i] = static_cast<std::int64_t>(c);
            auto row = x.row(i);
            for (std::size_t d = 0; d < spec.dim; ++d) {
                const double sd = d < signal_dims ? spec.std : spec.nuisance_std;
                row[d] = centers(c, d) + sd * rng.normal();
            }
        }
    }
    return Dataset(std::move(ids), std::move(x), std::move(labels), spec.seed);
}

// ---------------------------------------------------------------------------
// CSV interchange: optional "# pseudocl-dataset key=value ..." line, then
// the header id,label,f0..f{d-1}, then one record per line.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <class T>
T parse_number(std::string_view s, const std::string& where) {
    T value{};
    auto res = std::from_chars(s.data(), s.data() + s.size(), value);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw FormatError(where + ": cannot parse '" + std::string(s) + "'");
    return value;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

/// Write through a temporary file and rename so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

inline std::string dataset_to_csv(const Dataset& ds) {
    std::string out = "# pseudocl-dataset records=" + std::to_string(ds.size()) +
                      " split_seed=" + std::to_string(ds.split_seed());
    if (ds.generation_seed()) out += " generation_seed=" + std::to_string(*ds.generation_seed());
    out += "\nid,label";
    for (std::size_t d = 0; d < ds.dim(); ++d) out += ",f" + std::to_string(d);
    out += '\n';
    const auto& labels = ds.raw_labels_for_storage();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out += std::to_string(ds.id(i));
        out += ',';
        out += std::to_string(labels[i]);
        for (double v : ds.features(i)) {
            out += ',';
            out += detail::format_double(v);
        }
        out += '\n';
    }
    return out;
}

/// Parses the whole text before constructing anything; any error leaves no
/// partial dataset behind.
inline Dataset dataset_from_csv(std::string_view text, const std::string& source = "<memory>") {
    std::optional<std::size_t> expected_records;
    std::optional<std::uint64_t> generation_seed;
    std::uint64_t split_seed = kDefaultSplitSeed;

    std::size_t line_no = 0, pos = 0;
    auto next_line = [&](std::string_view& line) -> bool {
        if (pos >= text.size()) return false;
        auto end = text.find('\n', pos);
        const bool terminated = end != std::string_view::npos;
        if (!terminated) end = text.size();
        line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = terminated ? end + 1 : text.size();
        ++line_no;
        return true;
    };
    auto where = [&]() { return source + ":" + std::to_string(line_no); };

    std::string_view line;
    bool have_header = false;
    std::size_t dim = 0;
    while (next_line(line)) {
        if (line.empty()) continue;
        if (line.front() == '#') {
            for (auto tok : detail::split_fields(line.substr(1), ' ')) {
                const auto eq = tok.find('=');
                if (eq == std::string_view::npos) continue;
                const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
                if (key == "records") expected_records = detail::parse_number<std::size_t>(val, where());
                else if (key == "split_seed") split_seed = detail::parse_number<std::uint64_t>(val, where());
                else if (key == "generation_seed") generation_seed = detail::parse_number<std::uint64_t>(val, where());
            }
            continue;
        }
        const auto fields = detail::split_fields(line);
        if (fields.size() < 3 || fields[0] != "id" || fields[1] != "label")
            throw FormatError(where() + ": malformed header, expected id,label,f0,...");
        for (std::size_t d = 2; d < fields.size(); ++d)
            if (fields[d] != "f" + std::to_string(d - 2))
                throw FormatError(where() + ": malformed header column '" + std::string(fields[d]) + "'");
        dim = fields.size() - 2;
        have_header = true;
        break;
    }
    if (!have_header) throw FormatError(source + ": missing header");

    std::vector<std::uint64_t> ids;
    std::vector<std::int64_t> labels;
    Matrix x(0, dim);
    std::vector<double> row(dim);
    std::unordered_map<std::uint64_t, std::size_t> seen;
    while (next_line(line)) {
        if (line.empty()) continue;
        const auto fields = detail::split_fields(line);
        if (fields.size() != dim + 2)
            throw FormatError(where() + ": expected " + std::to_string(dim + 2) + " fields, found " +
                              std::to_string(fields.size()));
        const auto id = detail::parse_number<std::uint64_t>(fields[0], where());
        if (!seen.emplace(id, line_no).second) throw FormatError(where() + ": duplicate id " + std::to_string(id));
        ids.push_back(id);
        labels.push_back(detail::parse_number<std::int64_t>(fields[1], where()));
        for (std::size_t d = 0; d < dim; ++d) row[d] = detail::parse_number<double>(fields[d + 2], where());
        x.push_row(row);
    }
    if (expected_records && *expected_records != ids.size())
        throw FormatError(source + ": truncated, header declares " + std::to_string(*expected_records) +
                          " records but found " + std::to_string(ids.size()));
    if (ids.empty()) throw FormatError(source + ": no records");
    try {
        return Dataset(std::move(ids), std::move(x), std::move(labels), generation_seed, split_seed);
    } catch (const DataError& e) {
        throw FormatError(source + ": " + e.what());
    }
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    detail::write_file_atomic(path, dataset_to_csv(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    return dataset_from_csv(detail::read_file(path), path.string());
}

}  // namespace pseudocl
