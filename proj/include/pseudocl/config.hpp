#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <optional>
#include <type_traits>
#include <string>
#include <string_view>
#include <vector>

#include "pseudocl/dataset.hpp"
#include "pseudocl/errors.hpp"

namespace pseudocl {

enum class Mode { offline, online };
enum class FeatureVariant { ours, ffe, scratch, pca, upl };
enum class ExemplarPolicy { herding, random, none };
enum class Clusterer { kmeans, gmm };
enum class LabelSource { pseudo, oracle };

/// Feature extractor used for clustering. `upl` re-clusters every
/// `upl_interval` epochs; upl with interval 0 never refreshes.
struct Variant {
    FeatureVariant kind = FeatureVariant::ours;
    std::size_t upl_interval = 0;
    bool operator==(const Variant&) const = default;
};

struct RunConfig {
    Mode mode = Mode::offline;
    Variant variant;
    ExemplarPolicy exemplar_policy = ExemplarPolicy::herding;
    LabelSource labels = LabelSource::pseudo;
    std::size_t q = 20;
    std::size_t step_size = 5;

    std::size_t epochs = 40;
    std::size_t batch = 32;
    double lr = 0.1;
    double lr_decay = 0.1;
    std::size_t lr_decay_period = 10;
    double weight_decay = 1e-5;
    double temperature = 2.0;
    std::optional<double> alpha;
    bool bias_correction = false;

    std::size_t hidden_width = 64;
    std::size_t hidden_layers = 2;

    Clusterer clusterer = Clusterer::kmeans;
    std::size_t cluster_max_iter = 300;
    double cluster_tol = 1e-6;
    std::size_t cluster_restarts = 1;
    bool cluster_normalize = false;
    double gmm_var_floor = 1e-6;
    std::size_t pca_dim = 8;

    std::uint64_t arrangement_seed = 1993;
    std::uint64_t model_seed = 0;
    std::uint64_t shuffle_seed = 0;

    void validate() const {
        if (step_size == 0) throw ParameterError("step_size must be at least 1");
        if (q == 0) throw ParameterError("q must be at least 1");
        if (batch == 0) throw ParameterError("batch must be at least 1");
        if (mode == Mode::offline && epochs == 0) throw ParameterError("epochs must be at least 1 in offline mode");
        if (!(lr >= 0.0)) throw ParameterError("lr must be non-negative");
        if (!(lr_decay > 0.0)) throw ParameterError("lr decay factor must be positive");
        if (lr_decay_period == 0) throw ParameterError("lr decay period must be at least 1");
        if (!(weight_decay >= 0.0)) throw ParameterError("weight decay must be non-negative");
        if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
        if (alpha && !(*alpha >= 0.0 && *alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
        if (hidden_width == 0) throw ParameterError("hidden width must be at least 1");
        if (cluster_max_iter == 0 || cluster_restarts == 0) throw ParameterError("cluster iterations/restarts must be >= 1");
        if (!(gmm_var_floor > 0.0)) throw ParameterError("gmm variance floor must be positive");
        if (pca_dim == 0) throw ParameterError("pca dim must be at least 1");
    }
};

/// Where the run's data comes from: a CSV file, or generated blobs.
struct DataConfig {
    std::string path;
    BlobSpec blobs;
};

struct ExperimentConfig {
    RunConfig run;
    DataConfig data;
};

// ---------------------------------------------------------------------------
// key = value text format
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <class T>
T parse_value(std::string_view key, std::string_view v) {
    T out{};
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ParameterError("config: bad value '" + std::string(v) + "' for " + std::string(key));
    return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
    if (v == "off" || v == "false" || v == "0" || v == "no") return false;
    throw ParameterError("config: bad boolean '" + std::string(v) + "' for " + std::string(key));
}

inline std::string fmt(double v) { return format_double(v); }

struct Field {
    std::string key;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class E>
struct EnumName {
    E value;
    const char* name;
};

template <class E, std::size_t N>
E parse_enum(std::string_view key, std::string_view v, const EnumName<E> (&names)[N]) {
    for (const auto& n : names)
        if (v == n.name) return n.value;
    std::string allowed;
    for (const auto& n : names) allowed += std::string(allowed.empty() ? "" : "|") + n.name;
    throw ParameterError("config: bad value '" + std::string(v) + "' for " + std::string(key) + " (" + allowed + ")");
}

template <class E, std::size_t N>
std::string enum_name(E value, const EnumName<E> (&names)[N]) {
    for (const auto& n : names)
        if (n.value == value) return n.name;
    return "?";
}

inline constexpr EnumName<Mode> kModes[] = {{Mode::offline, "offline"}, {Mode::online, "online"}};
inline constexpr EnumName<ExemplarPolicy> kPolicies[] = {
    {ExemplarPolicy::herding, "herding"}, {ExemplarPolicy::random, "random"}, {ExemplarPolicy::none, "none"}};
inline constexpr EnumName<Clusterer> kClusterers[] = {{Clusterer::kmeans, "kmeans"}, {Clusterer::gmm, "gmm"}};
inline constexpr EnumName<LabelSource> kLabelSources[] = {{LabelSource::pseudo, "pseudo"},
                                                          {LabelSource::oracle, "oracle"}};

}  // namespace detail

/// "ours", "ffe", "scratch", "pca" or "upl-K".
inline Variant parse_variant(std::string_view v) {
    if (v == "ours") return {FeatureVariant::ours, 0};
    if (v == "ffe") return {FeatureVariant::ffe, 0};
    if (v == "scratch") return {FeatureVariant::scratch, 0};
    if (v == "pca") return {FeatureVariant::pca, 0};
    if (v.starts_with("upl-")) return {FeatureVariant::upl, detail::parse_value<std::size_t>("variant", v.substr(4))};
    throw ParameterError("config: bad variant '" + std::string(v) + "' (ours|ffe|scratch|pca|upl-K)");
}

inline std::string to_string(const Variant& v) {
    switch (v.kind) {
        case FeatureVariant::ours: return "ours";
        case FeatureVariant::ffe: return "ffe";
        case FeatureVariant::scratch: return "scratch";
        case FeatureVariant::pca: return "pca";
        case FeatureVariant::upl: return "upl-" + std::to_string(v.upl_interval);
    }
    return "?";
}

inline std::string to_string(Mode m) { return detail::enum_name(m, detail::kModes); }
inline std::string to_string(ExemplarPolicy p) { return detail::enum_name(p, detail::kPolicies); }

/// Every configurable key, in the order the resolved config is written.
inline const std::vector<detail::Field>& config_fields() {
    using namespace detail;
    using C = ExperimentConfig;
    using SV = std::string_view;
#define PSEUDOCL_NUM(KEY, MEMBER, TYPE)                                                              \
    Field{KEY, [](C& c, SV v) { c.MEMBER = parse_value<TYPE>(KEY, v); },                             \
          [](const C& c) { if constexpr (std::is_floating_point_v<TYPE>) return fmt(c.MEMBER);       \
                           else return std::to_string(c.MEMBER); }}
#define PSEUDOCL_BOOL(KEY, MEMBER) \
    Field{KEY, [](C& c, SV v) { c.MEMBER = parse_bool(KEY, v); }, [](const C& c) { return std::string(c.MEMBER ? "on" : "off"); }}
#define PSEUDOCL_ENUM(KEY, MEMBER, TABLE) \
    Field{KEY, [](C& c, SV v) { c.MEMBER = parse_enum(KEY, v, TABLE); }, [](const C& c) { return enum_name(c.MEMBER, TABLE); }}

    static const std::vector<Field> fields = {
        PSEUDOCL_ENUM("run.mode", run.mode, kModes),
        Field{"run.variant", [](C& c, SV v) { c.run.variant = parse_variant(v); },
              [](const C& c) { return to_string(c.run.variant); }},
        PSEUDOCL_ENUM("run.labels", run.labels, kLabelSources),
        PSEUDOCL_NUM("run.step_size", run.step_size, std::size_t),
        PSEUDOCL_BOOL("run.bias_correction", run.bias_correction),
        PSEUDOCL_ENUM("exemplar.policy", run.exemplar_policy, kPolicies),
        PSEUDOCL_NUM("exemplar.q", run.q, std::size_t),
        PSEUDOCL_NUM("train.epochs", run.epochs, std::size_t),
        PSEUDOCL_NUM("train.batch", run.batch, std::size_t),
        PSEUDOCL_NUM("train.lr", run.lr, double),
        PSEUDOCL_NUM("train.lr_decay", run.lr_decay, double),
        PSEUDOCL_NUM("train.lr_decay_period", run.lr_decay_period, std::size_t),
        PSEUDOCL_NUM("train.weight_decay", run.weight_decay, double),
        PSEUDOCL_NUM("loss.temperature", run.temperature, double),
        Field{"loss.alpha",
              [](C& c, SV v) {
                  if (v == "auto") c.run.alpha.reset();
                  else c.run.alpha = parse_value<double>("loss.alpha", v);
              },
              [](const C& c) { return c.run.alpha ? fmt(*c.run.alpha) : std::string("auto"); }},
        PSEUDOCL_NUM("model.hidden_width", run.hidden_width, std::size_t),
        PSEUDOCL_NUM("model.hidden_layers", run.hidden_layers, std::size_t),
        PSEUDOCL_ENUM("cluster.algorithm", run.clusterer, kClusterers),
        PSEUDOCL_NUM("cluster.max_iter", run.cluster_max_iter, std::size_t),
        PSEUDOCL_NUM("cluster.tol", run.cluster_tol, double),
        PSEUDOCL_NUM("cluster.restarts", run.cluster_restarts, std::size_t),
        PSEUDOCL_BOOL("cluster.normalize", run.cluster_normalize),
        PSEUDOCL_NUM("cluster.var_floor", run.gmm_var_floor, double),
        PSEUDOCL_NUM("pca.dim", run.pca_dim, std::size_t),
        PSEUDOCL_NUM("seed.arrangement", run.arrangement_seed, std::uint64_t),
        PSEUDOCL_NUM("seed.model", run.model_seed, std::uint64_t),
        PSEUDOCL_NUM("seed.shuffle", run.shuffle_seed, std::uint64_t),
        Field{"data.path", [](C& c, SV v) { c.data.path = std::string(v); }, [](const C& c) { return c.data.path; }},
        PSEUDOCL_NUM("data.classes", data.blobs.num_classes, std::size_t),
        PSEUDOCL_NUM("data.dim", data.blobs.dim, std::size_t),
        PSEUDOCL_NUM("data.samples_per_class", data.blobs.samples_per_class, std::size_t),
        PSEUDOCL_NUM("data.separation", data.blobs.separation, double),
        PSEUDOCL_NUM("data.std", data.blobs.std, double),
        PSEUDOCL_NUM("data.seed", data.blobs.seed, std::uint64_t),
        PSEUDOCL_NUM("data.nuisance_dims", data.blobs.nuisance_dims, std::size_t),
        PSEUDOCL_NUM("data.nuisance_std", data.blobs.nuisance_std, double),
    };
#undef PSEUDOCL_NUM
#undef PSEUDOCL_BOOL
#undef PSEUDOCL_ENUM
    return fields;
}

inline void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
    for (const auto& f : config_fields())
        if (f.key == key) {
            f.set(cfg, detail::trim(value));
            return;
        }
    throw ParameterError("config: unknown key '" + std::string(key) + "'");
}

inline std::string get_config_value(const ExperimentConfig& cfg, std::string_view key) {
    for (const auto& f : config_fields())
        if (f.key == key) return f.get(cfg);
    throw ParameterError("config: unknown key '" + std::string(key) + "'");
}

/// Parse `key = value` lines. `[section]` lines prefix following keys with
/// "section."; `#` starts a comment. Unknown keys are errors.
inline ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {}) {
    std::string section;
    std::size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ParameterError("config line " + std::to_string(line_no) + ": bad section");
            section = std::string(detail::trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ParameterError("config line " + std::to_string(line_no) + ": expected key = value");
        const auto key = detail::trim(line.substr(0, eq));
        const auto full = section.empty() ? std::string(key) : section + "." + std::string(key);
        set_config_value(base, full, line.substr(eq + 1));
    }
    base.run.validate();
    return base;
}

inline std::string config_to_text(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& f : config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

}  // namespace pseudocl
