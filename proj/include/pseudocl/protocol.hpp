#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "pseudocl/checkpoint.hpp"
#include "pseudocl/clustering.hpp"
#include "pseudocl/config.hpp"
#include "pseudocl/dataset.hpp"
#include "pseudocl/labeling.hpp"
#include "pseudocl/metrics.hpp"
#include "pseudocl/nn.hpp"
#include "pseudocl/report.hpp"

namespace pseudocl {

// ---------------------------------------------------------------------------
// Task stream
// ---------------------------------------------------------------------------

/// One task: its classes (true ids, in slot order) and sample indices.
/// Labels stay sealed in the dataset.
struct Task {
    std::vector<std::int64_t> classes;
    std::vector<std::size_t> train;
    std::vector<std::size_t> eval;
};

struct TaskStream {
    std::size_t step_size = 0;
    std::vector<Task> tasks;
};

/// Shuffle the sorted class list with the arrangement seed and cut it into
/// consecutive groups of M.
inline TaskStream split_tasks(const Dataset& ds, std::size_t step_size, std::uint64_t arrangement_seed,
                              LabelAudit& audit) {
    if (step_size == 0) throw ParameterError("split_tasks: step size must be at least 1");
    std::vector<std::int64_t> classes;
    for (const auto& [c, n] : ds.class_counts()) classes.push_back(c);
    if (classes.size() % step_size != 0)
        throw ProtocolError("split_tasks: " + std::to_string(classes.size()) + " classes not divisible by step size " +
                            std::to_string(step_size));
    Rng rng(arrangement_seed);
    rng.shuffle(classes);

    TaskStream stream;
    stream.step_size = step_size;
    std::map<std::int64_t, std::size_t> task_of;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (i % step_size == 0) stream.tasks.emplace_back();
        stream.tasks.back().classes.push_back(classes[i]);
        task_of[classes[i]] = i / step_size;
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto& task = stream.tasks[task_of.at(ds.labels().read(i, LabelPurpose::setup, audit))];
        (ds.split(i) == Split::train ? task.train : task.eval).push_back(i);
    }
    return stream;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

enum SeedTag : std::uint64_t {
    kTagEpoch = 1,
    kTagMerge = 2,
    kTagCluster = 3,
    kTagExpand = 4,
    kTagScratch = 5,
    kTagExemplar = 6,
};

inline std::vector<std::size_t> hidden_widths(const RunConfig& cfg) {
    return std::vector<std::size_t>(cfg.hidden_layers, cfg.hidden_width);
}

inline double scheduled_lr(const RunConfig& cfg, std::size_t epoch) {
    return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_period));
}

}  // namespace detail

struct TrainStats {
    std::size_t updates = 0;
    std::size_t epochs = 0;
    std::size_t refreshes = 0;
    double last_loss = 0.0;
};

/// Called before epoch `e` when labels should be refreshed; may rewrite
/// item labels in place.
using RefreshHook = std::function<void(Model& model, std::vector<TrainingItem>& items, std::size_t epoch)>;

/// Minibatch SGD on `items` minimising the cross-distillation loss against
/// a frozen teacher. Offline: `cfg.epochs` reshuffled epochs with the step
/// learning-rate schedule. Online: a single pass in the given order.
inline TrainStats train_model(Model& model, const Model* teacher, std::size_t m, std::vector<TrainingItem> items,
                              const Dataset& ds, const RunConfig& cfg, bool online, std::uint64_t seed,
                              std::size_t upl_interval = 0, const RefreshHook& refresh = {}) {
    TrainStats stats;
    if (items.empty()) return stats;
    if (m > 0 && teacher == nullptr) throw ParameterError("train_model: m > 0 requires a teacher");
    LossConfig loss_cfg{cfg.temperature, m == 0 ? std::optional<double>(0.0) : cfg.alpha};
    const std::size_t epochs = online ? 1 : cfg.epochs;

    std::vector<std::vector<double>> teacher_logits(cfg.batch);
    std::vector<TrainingExample> batch;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        if (!online && upl_interval > 0 && epoch > 0 && epoch % upl_interval == 0 && refresh) {
            refresh(model, items, epoch);
            ++stats.refreshes;
        }
        std::vector<TrainingItem> order = items;
        if (!online) {
            Rng rng(derive_seed(seed, {detail::kTagEpoch, epoch}));
            rng.shuffle(order);
        }
        const double lr = online ? cfg.lr : detail::scheduled_lr(cfg, epoch);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) {
                const auto x = ds.features(ds.index_of(order[i].sample_id));
                std::span<const double> t;
                if (m > 0) {
                    teacher_logits[i - start] = forward(*teacher, x);
                    t = teacher_logits[i - start];
                }
                batch.push_back({x, t, order[i].label});
            }
            auto lg = backward(model, batch, loss_cfg, m);
            model = sgd_step(std::move(model), lg.gradients, lr, cfg.weight_decay);
            stats.last_loss = lg.loss;
            ++stats.updates;
        }
        ++stats.epochs;
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Run state and evaluation
// ---------------------------------------------------------------------------

struct RunState {
    Model model;        // h_i
    Model first_model;  // h_1 (fixed extractor variant)
    ExemplarStore store{1};
    std::size_t classes_seen = 0;
    /// True class ids in slot order; used by the evaluator only.
    std::vector<std::int64_t> class_order;
    /// Eval-split samples of every task seen so far.
    std::vector<std::size_t> eval_pool;
    std::size_t step = 0;
};

/// Predicted head index vs true class over the given samples.
inline StepReport evaluate(const Model& model, const Dataset& ds, std::span<const std::size_t> samples,
                           std::size_t step, std::size_t classes_seen, LabelAudit& audit) {
    if (samples.empty()) throw ProtocolError("evaluate: no evaluation samples");
    Partition pred, truth;
    pred.reserve(samples.size());
    truth.reserve(samples.size());
    for (auto i : samples) {
        pred.push_back(static_cast<std::int64_t>(argmax(forward(model, ds.features(i)))));
        truth.push_back(ds.labels().read(i, LabelPurpose::evaluation, audit));
    }
    return step_report(step, classes_seen, pred, truth);
}

/// Eval-split samples of the given classes.
inline std::vector<std::size_t> eval_samples_for(const Dataset& ds, std::span<const std::int64_t> classes,
                                                 LabelAudit& audit) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.split(i) != Split::eval) continue;
        const auto c = ds.labels().read(i, LabelPurpose::evaluation, audit);
        if (std::find(classes.begin(), classes.end(), c) != classes.end()) out.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

/// Diagnostics of one step, persisted for audit.
struct StepDetail {
    std::vector<std::uint64_t> sample_ids;   // D^i train samples
    std::vector<std::size_t> assignments;    // final cluster assignment per sample
    std::vector<std::size_t> pseudo_labels;  // final label per sample
    std::vector<std::size_t> initial_pseudo_labels;
    double cluster_objective = 0.0;
    TrainStats train;
};

struct StepOutcome {
    RunState state;
    StepReport report;
    StepDetail detail;
};

namespace detail {

inline Matrix rows_of(const Dataset& ds, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), ds.dim());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        auto src = ds.features(idx[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

inline Matrix features_under(const Model& model, const Dataset& ds, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), model.feature_dim());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto f = extract_features(model, ds.features(idx[r]));
        std::copy(f.begin(), f.end(), out.row(r).begin());
    }
    return out;
}

inline void normalize_rows(Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = norm2(m.row(r));
        if (n > 0.0)
            for (double& v : m.row(r)) v /= n;
    }
}

inline std::vector<std::size_t> cluster_points(const Matrix& feats, std::size_t k, std::uint64_t seed,
                                               const RunConfig& cfg, double* objective) {
    Matrix pts = feats;
    if (cfg.cluster_normalize) normalize_rows(pts);
    KMeansOptions km{cfg.cluster_max_iter, cfg.cluster_tol, cfg.cluster_restarts};
    if (cfg.clusterer == Clusterer::gmm) {
        auto g = gmm_em(pts, k, seed, GmmOptions{cfg.cluster_max_iter, cfg.cluster_tol, cfg.gmm_var_floor, km});
        if (objective) *objective = -g.log_likelihood;
        return g.assignments;
    }
    auto res = kmeans(pts, k, seed, km);
    if (objective) *objective = res.objective;
    return res.assignments;
}

inline ExemplarStore select_for_step(const Model& model, const Dataset& ds, std::span<const std::size_t> samples,
                                     std::span<const std::size_t> assignments, std::span<const std::size_t> labels,
                                     std::span<const std::uint64_t> ids, std::size_t k, const RunConfig& cfg,
                                     std::size_t step) {
    if (cfg.exemplar_policy == ExemplarPolicy::random)
        return select_exemplars_random(assignments, labels, ids, cfg.q,
                                       derive_seed(cfg.shuffle_seed, {kTagExemplar, step}), k);
    const auto feats = features_under(model, ds, samples);
    return select_exemplars_herding(feats, assignments, labels, ids, cfg.q, k);
}

}  // namespace detail

/// Supervised training on the first task: plain cross-entropy on true
/// labels (slot = position of the class in the task). The first task is
/// always trained for the configured epochs, in both modes.
inline StepOutcome train_first_task(const Task& task, const Dataset& ds, const RunConfig& cfg, LabelAudit& audit) {
    cfg.validate();
    const std::size_t M = task.classes.size();
    StepOutcome out;
    RunState& st = out.state;
    st.step = 1;
    st.store = ExemplarStore(cfg.q);
    st.model = Model::create(ds.dim(), detail::hidden_widths(cfg), M, cfg.model_seed);

    auto& d = out.detail;
    for (auto i : task.train) {
        const auto c = ds.labels().read(i, LabelPurpose::first_task, audit);
        const auto slot = static_cast<std::size_t>(std::find(task.classes.begin(), task.classes.end(), c) - task.classes.begin());
        d.sample_ids.push_back(ds.id(i));
        d.assignments.push_back(slot);
        d.pseudo_labels.push_back(slot);
    }
    d.initial_pseudo_labels = d.pseudo_labels;
    auto items = merge_replay(d.sample_ids, d.pseudo_labels, st.store, derive_seed(cfg.shuffle_seed, {detail::kTagMerge, 1}));
    d.train = train_model(st.model, nullptr, 0, std::move(items), ds, cfg, false, derive_seed(cfg.shuffle_seed, {1}));

    if (cfg.exemplar_policy != ExemplarPolicy::none)
        st.store = detail::select_for_step(st.model, ds, task.train, d.assignments, d.pseudo_labels, d.sample_ids, M,
                                           cfg, 1);
    st.first_model = st.model;
    st.classes_seen = M;
    st.class_order = task.classes;
    st.eval_pool = task.eval;
    out.report = evaluate(st.model, ds, st.eval_pool, 1, M, audit);
    return out;
}

/// One unsupervised incremental step:
///  1. features of the new task's training data from the variant's extractor
///  2. cluster them into M groups
///  3. pseudo label = cluster + m
///  4. freeze the teacher h_{i-1}, grow the head by M
///  5. train on new data + exemplars with the cross-distillation loss
///     (UPL-K re-clusters the new data every K epochs)
///  6. optional weight aligning
///  7. herding (or random) exemplars per cluster in h_i's feature space
///  8. evaluate on the eval split of every class seen so far
/// In pseudo-label mode no ground-truth label is read before step 8.
inline StepOutcome continual_step(const RunState& prev, const Task& task, const Dataset& ds, const RunConfig& cfg,
                                  LabelAudit& audit) {
    cfg.validate();
    const std::size_t M = task.classes.size();
    if (M == 0 || task.train.size() < M) throw ProtocolError("continual_step: task has fewer samples than classes");
    const std::size_t m = prev.classes_seen;
    const std::size_t step = prev.step + 1;
    const LabelAudit before = audit;

    StepOutcome out;
    auto& d = out.detail;
    for (auto i : task.train) d.sample_ids.push_back(ds.id(i));

    // (1)-(3)
    auto extract = [&](const Model& current) -> Matrix {
        switch (cfg.variant.kind) {
            case FeatureVariant::ours:
            case FeatureVariant::upl: return detail::features_under(current, ds, task.train);
            case FeatureVariant::ffe: return detail::features_under(prev.first_model, ds, task.train);
            case FeatureVariant::scratch: {
                const auto fresh = Model::create(ds.dim(), detail::hidden_widths(cfg), M,
                                                 derive_seed(cfg.model_seed, {detail::kTagScratch, step}));
                return detail::features_under(fresh, ds, task.train);
            }
            case FeatureVariant::pca: {
                const auto raw = detail::rows_of(ds, task.train);
                return pca_project(pca_fit(raw, std::min(cfg.pca_dim, ds.dim())), raw);
            }
        }
        throw ParameterError("continual_step: unknown variant");
    };

    if (cfg.labels == LabelSource::oracle) {
        for (auto i : task.train) {
            const auto c = ds.labels().read(i, LabelPurpose::oracle, audit);
            d.assignments.push_back(
                static_cast<std::size_t>(std::find(task.classes.begin(), task.classes.end(), c) - task.classes.begin()));
        }
    } else {
        d.assignments = detail::cluster_points(extract(prev.model), M,
                                               derive_seed(cfg.shuffle_seed, {detail::kTagCluster, step, 0}), cfg,
                                               &d.cluster_objective);
    }
    d.pseudo_labels = assign_pseudo_labels(d.assignments, m, step).labels;
    d.initial_pseudo_labels = d.pseudo_labels;

    // (4)
    const Model teacher = prev.model;
    Model model = expand_head(prev.model, M, derive_seed(cfg.model_seed, {detail::kTagExpand, step}));

    // (5)
    auto items = merge_replay(d.sample_ids, d.pseudo_labels, prev.store,
                              derive_seed(cfg.shuffle_seed, {detail::kTagMerge, step}));
    RefreshHook refresh;
    if (cfg.variant.kind == FeatureVariant::upl && cfg.labels == LabelSource::pseudo) {
        refresh = [&](Model& current, std::vector<TrainingItem>& its, std::size_t epoch) {
            d.assignments = detail::cluster_points(extract(current), M,
                                                   derive_seed(cfg.shuffle_seed, {detail::kTagCluster, step, epoch}),
                                                   cfg, &d.cluster_objective);
            d.pseudo_labels = assign_pseudo_labels(d.assignments, m, step).labels;
            std::unordered_map<std::uint64_t, std::size_t> fresh;
            for (std::size_t i = 0; i < d.sample_ids.size(); ++i) fresh.emplace(d.sample_ids[i], d.pseudo_labels[i]);
            // exemplars keep their labels; only the new task's samples are relabelled
            for (auto& it : its)
                if (auto f = fresh.find(it.sample_id); f != fresh.end()) it.label = f->second;
        };
    }
    d.train = train_model(model, &teacher, m, std::move(items), ds, cfg, cfg.mode == Mode::online,
                          derive_seed(cfg.shuffle_seed, {step}), cfg.variant.upl_interval, refresh);

    // (6)
    if (cfg.bias_correction) model = weight_align(std::move(model), m, M);

    // (7)
    RunState& st = out.state;
    st.store = prev.store;
    if (cfg.exemplar_policy != ExemplarPolicy::none)
        st.store.absorb(detail::select_for_step(model, ds, task.train, d.assignments, d.pseudo_labels, d.sample_ids,
                                                M, cfg, step));

    if (cfg.labels == LabelSource::pseudo &&
        (audit.reads(LabelPurpose::first_task) != before.reads(LabelPurpose::first_task) ||
         audit.reads(LabelPurpose::oracle) != before.reads(LabelPurpose::oracle) ||
         audit.reads(LabelPurpose::setup) != before.reads(LabelPurpose::setup) ||
         audit.reads(LabelPurpose::evaluation) != before.reads(LabelPurpose::evaluation)))
        throw ProtocolError("continual_step: ground-truth labels were read on the training path");

    // (8)
    st.model = std::move(model);
    st.first_model = prev.first_model;
    st.classes_seen = m + M;
    st.class_order = prev.class_order;
    st.class_order.insert(st.class_order.end(), task.classes.begin(), task.classes.end());
    st.eval_pool = prev.eval_pool;
    st.eval_pool.insert(st.eval_pool.end(), task.eval.begin(), task.eval.end());
    st.step = step;
    out.report = evaluate(st.model, ds, st.eval_pool, step, st.classes_seen, audit);
    return out;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct ExperimentReport {
    std::vector<StepReport> steps;
    /// Over the incremental steps (2..N); over the single step when N = 1.
    Summary summary;
    RunState final_state;
    std::vector<StepDetail> details;
    LabelAudit audit;
    bool complete = false;
    std::string error;
};

inline Summary summarize(const std::vector<StepReport>& steps) {
    if (steps.size() <= 1) return aggregate(steps);
    return aggregate(std::span<const StepReport>(steps).subspan(1));
}

namespace detail {

inline void ensure_dir(const std::filesystem::path& p) {
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec) throw IoError("cannot create '" + p.string() + "': " + ec.message());
}

inline std::string step_name(std::size_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%03zu", step);
    return buf;
}

inline void persist_step(const std::filesystem::path& dir, const StepOutcome& o) {
    const auto name = step_name(o.state.step);
    write_checkpoint({o.state.model, o.state.class_order}, dir / "checkpoints" / (name + ".ckpt"));
    std::string ex = "sample_id,label\n";
    for (const auto& e : o.state.store.entries()) ex += std::to_string(e.sample_id) + "," + std::to_string(e.label) + "\n";
    write_file_atomic(dir / "exemplars" / (name + ".csv"), ex);
    std::string cl = "# objective=" + format_double(o.detail.cluster_objective) +
                     " refreshes=" + std::to_string(o.detail.train.refreshes) +
                     " updates=" + std::to_string(o.detail.train.updates) + "\nsample_id,assignment,label\n";
    for (std::size_t i = 0; i < o.detail.sample_ids.size(); ++i)
        cl += std::to_string(o.detail.sample_ids[i]) + "," + std::to_string(o.detail.assignments[i]) + "," +
              std::to_string(o.detail.pseudo_labels[i]) + "\n";
    write_file_atomic(dir / "clusters" / (name + ".csv"), cl);
}

inline void persist_report(const std::filesystem::path& dir, const ExperimentReport& rep, const RunConfig& cfg,
                           std::size_t tasks) {
    if (!rep.steps.empty()) {
        const auto s = summarize(rep.steps);
        write_report(dir, rep.steps, &s, cfg.model_seed, to_string(cfg.variant));
    } else {
        write_report(dir, rep.steps);
    }
    std::map<std::string, std::string> meta{
        {"status", rep.complete ? "complete" : "aborted"},
        {"tasks", std::to_string(tasks)},
        {"steps_evaluated", std::to_string(rep.steps.size())},
        {"step_size", std::to_string(cfg.step_size)},
        {"variant", to_string(cfg.variant)},
        {"label_reads.setup", std::to_string(rep.audit.reads(LabelPurpose::setup))},
        {"label_reads.first_task", std::to_string(rep.audit.reads(LabelPurpose::first_task))},
        {"label_reads.evaluation", std::to_string(rep.audit.reads(LabelPurpose::evaluation))},
        {"label_reads.oracle", std::to_string(rep.audit.reads(LabelPurpose::oracle))},
    };
    if (!rep.error.empty()) meta["error"] = rep.error;
    write_file_atomic(dir / "run.meta", meta_to_text(meta));
}

}  // namespace detail

/// Split, train the first task, run every incremental step, aggregate.
/// With `out_dir`, the config snapshot, per-step checkpoints, exemplar
/// stores, cluster assignments, report.csv, summary.csv and run.meta are
/// written there; a failing step still leaves the partial report behind
/// before the error propagates.
inline ExperimentReport run_experiment(const RunConfig& cfg, const Dataset& ds,
                                       const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                       const std::string& config_snapshot = "") {
    cfg.validate();
    ExperimentReport rep;
    std::size_t n_tasks = 0;
    if (out_dir) {
        detail::ensure_dir(*out_dir);
        for (const char* sub : {"checkpoints", "exemplars", "clusters"}) detail::ensure_dir(*out_dir / sub);
        detail::write_file_atomic(*out_dir / "config.txt",
                                  config_snapshot.empty() ? config_to_text(ExperimentConfig{cfg, {}}) : config_snapshot);
    }
    try {
        const auto stream = split_tasks(ds, cfg.step_size, cfg.arrangement_seed, rep.audit);
        n_tasks = stream.tasks.size();
        auto first = train_first_task(stream.tasks[0], ds, cfg, rep.audit);
        if (out_dir) detail::persist_step(*out_dir, first);
        rep.steps.push_back(first.report);
        rep.details.push_back(std::move(first.detail));
        RunState state = std::move(first.state);
        for (std::size_t t = 1; t < stream.tasks.size(); ++t) {
            auto o = continual_step(state, stream.tasks[t], ds, cfg, rep.audit);
            if (out_dir) detail::persist_step(*out_dir, o);
            rep.steps.push_back(o.report);
            rep.details.push_back(std::move(o.detail));
            state = std::move(o.state);
        }
        rep.final_state = std::move(state);
        rep.summary = summarize(rep.steps);
        rep.complete = true;
    } catch (const std::exception& e) {
        rep.error = e.what();
        if (out_dir) detail::persist_report(*out_dir, rep, cfg, n_tasks);
        throw;
    }
    if (out_dir) detail::persist_report(*out_dir, rep, cfg, n_tasks);
    return rep;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepEntry {
    std::string value;
    std::size_t repeat = 0;
    std::uint64_t model_seed = 0;
    Summary summary;
};

struct SweepSpec {
    std::string key;                  // config key, e.g. "exemplar.q"
    std::vector<std::string> values;  // one experiment per value and repeat
    std::size_t repeats = 1;
    std::size_t jobs = 1;
};

/// Repeat r of every value uses model/shuffle seeds base + r, so values are
/// compared on paired seeds. Runs are independent and may execute on up to
/// `jobs` threads; results come back in (value, repeat) order.
inline std::vector<SweepEntry> run_sweep(const ExperimentConfig& base, const SweepSpec& spec, const Dataset& ds,
                                         const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
    if (spec.values.empty()) throw ParameterError("run_sweep: empty axis");
    if (spec.repeats == 0) throw ParameterError("run_sweep: repeats must be at least 1");
    struct Job {
        ExperimentConfig cfg;
        SweepEntry entry;
    };
    std::vector<Job> jobs;
    for (const auto& v : spec.values)
        for (std::size_t r = 0; r < spec.repeats; ++r) {
            Job j{base, {v, r, 0, {}}};
            set_config_value(j.cfg, spec.key, v);
            j.cfg.run.model_seed = base.run.model_seed + r;
            j.cfg.run.shuffle_seed = base.run.shuffle_seed + r;
            j.cfg.run.validate();
            j.entry.model_seed = j.cfg.run.model_seed;
            jobs.push_back(std::move(j));
        }

    std::vector<std::string> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                std::optional<std::filesystem::path> dir;
                if (out_dir) dir = *out_dir / (spec.key + "=" + jobs[i].entry.value) / ("repeat_" + std::to_string(jobs[i].entry.repeat));
                jobs[i].entry.summary = run_experiment(jobs[i].cfg.run, ds, dir, config_to_text(jobs[i].cfg)).summary;
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(spec.jobs, jobs.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (std::size_t i = 0; i < jobs.size(); ++i)
        if (!errors[i].empty())
            throw ProtocolError("run_sweep: " + spec.key + "=" + jobs[i].entry.value + " repeat " +
                                std::to_string(jobs[i].entry.repeat) + ": " + errors[i]);

    std::vector<SweepEntry> out;
    for (auto& j : jobs) out.push_back(std::move(j.entry));
    if (out_dir) {
        std::string csv = "axis,value,repeat,seed,avg_acc,last_acc,avg_nmi,avg_ari\n";
        for (const auto& e : out)
            csv += spec.key + "," + e.value + "," + std::to_string(e.repeat) + "," + std::to_string(e.model_seed) + "," +
                   detail::format_double(e.summary.avg_acc) + "," + detail::format_double(e.summary.last_acc) + "," +
                   detail::format_double(e.summary.avg_nmi) + "," + detail::format_double(e.summary.avg_ari) + "\n";
        detail::ensure_dir(*out_dir);
        detail::write_file_atomic(*out_dir / "sweep.csv", csv);
    }
    return out;
}

/// Mean Avg-ACC per axis value, in axis order.
inline std::vector<std::pair<std::string, double>> mean_avg_acc(const std::vector<SweepEntry>& entries) {
    std::vector<std::pair<std::string, double>> out;
    std::vector<std::size_t> counts;
    for (const auto& e : entries) {
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == e.value; });
        if (it == out.end()) {
            out.emplace_back(e.value, 0.0);
            counts.push_back(0);
            it = out.end() - 1;
        }
        it->second += e.summary.avg_acc;
        ++counts[static_cast<std::size_t>(it - out.begin())];
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i].second /= static_cast<double>(counts[i]);
    return out;
}

}  // namespace pseudocl
