#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pseudocl/errors.hpp"
#include "pseudocl/linalg.hpp"
#include "pseudocl/rng.hpp"

namespace pseudocl {

/// Fully connected layer: y = W x + b with W stored out_dim x in_dim.
struct DenseLayer {
    Matrix weights;
    std::vector<double> bias;

    std::size_t in_dim() const noexcept { return weights.cols(); }
    std::size_t out_dim() const noexcept { return weights.rows(); }
    bool operator==(const DenseLayer&) const = default;
};

/// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and bias.
inline DenseLayer make_dense(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
    DenseLayer layer{Matrix(out_dim, in_dim), std::vector<double>(out_dim)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (double& w : layer.weights.values()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias) b = rng.uniform(-bound, bound);
    return layer;
}

/// Feed-forward classifier: ReLU hidden layers followed by a linear head
/// whose output dimension grows as classes are added. The hidden stack is
/// the feature extractor; the head is excluded from it.
struct Model {
    std::vector<DenseLayer> hidden;
    DenseLayer head;
    std::uint64_t seed = 0;
    /// Every seed consumed so far (initialisation, then each head expansion).
    std::vector<std::uint64_t> seed_log;

    static Model create(std::size_t input_dim, const std::vector<std::size_t>& hidden_widths,
                        std::size_t out_dim, std::uint64_t seed) {
        if (input_dim == 0 || out_dim == 0) throw ParameterError("Model::create: zero dimension");
        Model m;
        m.seed = seed;
        m.seed_log.push_back(seed);
        Rng rng(seed);
        std::size_t fan_in = input_dim;
        for (std::size_t w : hidden_widths) {
            if (w == 0) throw ParameterError("Model::create: zero hidden width");
            m.hidden.push_back(make_dense(fan_in, w, rng));
            fan_in = w;
        }
        m.head = make_dense(fan_in, out_dim, rng);
        return m;
    }

    std::size_t input_dim() const noexcept { return hidden.empty() ? head.in_dim() : hidden.front().in_dim(); }
    std::size_t feature_dim() const noexcept { return head.in_dim(); }
    std::size_t head_dim() const noexcept { return head.out_dim(); }

    std::size_t parameter_count() const noexcept {
        std::size_t n = head.weights.size() + head.bias.size();
        for (const auto& l : hidden) n += l.weights.size() + l.bias.size();
        return n;
    }

    bool operator==(const Model&) const = default;
};

/// Same shapes as the model parameters.
struct GradientSet {
    std::vector<DenseLayer> hidden;
    DenseLayer head;
};

inline GradientSet zero_gradients(const Model& model) {
    GradientSet g;
    for (const auto& l : model.hidden)
        g.hidden.push_back({Matrix(l.out_dim(), l.in_dim()), std::vector<double>(l.out_dim())});
    g.head = {Matrix(model.head.out_dim(), model.head.in_dim()), std::vector<double>(model.head.out_dim())};
    return g;
}

namespace detail {

// Row accumulation order is fixed (column 0 upward, bias last) so that a
// row's output never depends on how many other rows the layer has.
inline void apply_dense(const DenseLayer& layer, std::span<const double> x, std::vector<double>& out) {
    out.resize(layer.out_dim());
    for (std::size_t r = 0; r < layer.out_dim(); ++r) out[r] = dot(layer.weights.row(r), x) + layer.bias[r];
}

inline void relu_inplace(std::vector<double>& v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
}

inline void check_input(const Model& model, std::span<const double> x) {
    if (x.size() != model.input_dim())
        throw InputShapeError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                              std::to_string(model.input_dim()));
}

}  // namespace detail

/// Penultimate representation: the input pushed through every layer except
/// the head. A model with no hidden layers returns the input itself.
inline std::vector<double> extract_features(const Model& model, std::span<const double> x) {
    detail::check_input(model, x);
    std::vector<double> cur(x.begin(), x.end()), next;
    for (const auto& layer : model.hidden) {
        detail::apply_dense(layer, cur, next);
        detail::relu_inplace(next);
        cur.swap(next);
    }
    return cur;
}

inline std::vector<double> forward(const Model& model, std::span<const double> x) {
    const auto features = extract_features(model, x);
    std::vector<double> logits;
    detail::apply_dense(model.head, features, logits);
    return logits;
}

inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Temperature-softened softmax; the max logit is subtracted first.
inline std::vector<double> softened_probs(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) throw ParameterError("softened_probs: temperature must be positive");
    if (logits.empty()) throw ParameterError("softened_probs: empty logits");
    double mx = logits[0];
    for (double z : logits) mx = std::max(mx, z);
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - mx) / temperature);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return p;
}

/// log of the softened softmax, computed stably.
inline std::vector<double> log_softened_probs(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) throw ParameterError("log_softened_probs: temperature must be positive");
    double mx = logits[0];
    for (double z : logits) mx = std::max(mx, z);
    double sum = 0.0;
    for (double z : logits) sum += std::exp((z - mx) / temperature);
    const double lse = std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = (logits[i] - mx) / temperature - lse;
    return out;
}

/// Cross-entropy of the teacher-softened distribution against the
/// student-softened distribution, both restricted to the first m logits.
inline double distillation_loss(std::span<const double> student_logits, std::span<const double> teacher_logits,
                                double temperature, std::size_t m) {
    if (m < 1) throw ParameterError("distillation_loss: m must be at least 1");
    if (student_logits.size() < m || teacher_logits.size() < m)
        throw InputShapeError("distillation_loss: logits shorter than m");
    const auto target = softened_probs(teacher_logits.first(m), temperature);
    const auto log_student = log_softened_probs(student_logits.first(m), temperature);
    double loss = 0.0;
    for (std::size_t r = 0; r < m; ++r) loss -= target[r] * log_student[r];
    return loss;
}

inline double cross_entropy_pseudo(std::span<const double> logits, std::size_t pseudo_label) {
    if (pseudo_label >= logits.size())
        throw LabelError("cross_entropy_pseudo: label " + std::to_string(pseudo_label) + " out of range for " +
                         std::to_string(logits.size()) + " logits");
    return -log_softened_probs(logits, 1.0)[pseudo_label];
}

struct LossConfig {
    double temperature = 2.0;
    std::optional<double> alpha_override;

    /// m/(m+n) unless overridden.
    double alpha(std::size_t m, std::size_t n) const {
        if (alpha_override) return *alpha_override;
        if (m + n == 0) throw ParameterError("LossConfig::alpha: m + n is zero");
        return static_cast<double>(m) / static_cast<double>(m + n);
    }

    void validate() const {
        if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
        if (alpha_override && !(*alpha_override >= 0.0 && *alpha_override <= 1.0))
            throw ParameterError("alpha override must lie in [0, 1]");
    }
};

/// alpha * L_D + (1 - alpha) * L_C. The distillation term is skipped when
/// alpha is zero, which is also how the first (supervised) task trains with m = 0.
inline double cross_distillation_loss(std::span<const double> student_logits, std::span<const double> teacher_logits,
                                      std::size_t pseudo_label, const LossConfig& cfg, std::size_t m,
                                      std::size_t n) {
    cfg.validate();
    if (student_logits.size() != m + n) throw InputShapeError("cross_distillation_loss: student logits != m + n");
    const double alpha = cfg.alpha(m, n);
    const double ce = cross_entropy_pseudo(student_logits, pseudo_label);
    if (alpha == 0.0) return ce;
    const double kd = distillation_loss(student_logits, teacher_logits, cfg.temperature, m);
    if (alpha == 1.0) return kd;
    return alpha * kd + (1.0 - alpha) * ce;
}

// ---------------------------------------------------------------------------
// Backpropagation
// ---------------------------------------------------------------------------

struct TrainingExample {
    std::span<const double> input;
    /// Teacher logits for the m old classes (may be empty when m == 0).
    std::span<const double> teacher_logits;
    std::size_t label = 0;
};

struct LossAndGradients {
    double loss = 0.0;
    GradientSet gradients;
};

/// Batch-mean cross-distillation loss and its exact gradient with respect
/// to every parameter. `m` is the number of old classes; n = head_dim - m.
inline LossAndGradients backward(const Model& model, std::span<const TrainingExample> batch, const LossConfig& cfg,
                                 std::size_t m) {
    cfg.validate();
    if (batch.empty()) throw ParameterError("backward: empty batch");
    const std::size_t out = model.head_dim();
    if (m > out) throw ParameterError("backward: m exceeds head dimension");
    const std::size_t n = out - m;
    const double alpha = cfg.alpha(m, n);
    if (alpha > 0.0 && m == 0) throw ParameterError("backward: distillation requires m >= 1");
    const double T = cfg.temperature;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    LossAndGradients result{0.0, zero_gradients(model)};
    GradientSet& g = result.gradients;
    const std::size_t depth = model.hidden.size();

    // activations[0] = input, activations[l+1] = relu(pre[l])
    std::vector<std::vector<double>> activations(depth + 1), pre(depth);
    std::vector<double> logits, delta, prev_delta;

    for (const auto& ex : batch) {
        detail::check_input(model, ex.input);
        if (ex.label >= out) throw LabelError("backward: label out of range");
        if (alpha > 0.0 && ex.teacher_logits.size() < m)
            throw InputShapeError("backward: teacher logits shorter than m");

        activations[0].assign(ex.input.begin(), ex.input.end());
        for (std::size_t l = 0; l < depth; ++l) {
            detail::apply_dense(model.hidden[l], activations[l], pre[l]);
            activations[l + 1] = pre[l];
            detail::relu_inplace(activations[l + 1]);
        }
        detail::apply_dense(model.head, activations[depth], logits);

        // dL/dlogits
        const auto log_p = log_softened_probs(logits, 1.0);
        double loss = -log_p[ex.label];
        delta.assign(out, 0.0);
        for (std::size_t r = 0; r < out; ++r) delta[r] = (1.0 - alpha) * std::exp(log_p[r]);
        delta[ex.label] -= (1.0 - alpha);
        loss *= (1.0 - alpha);
        if (alpha > 0.0) {
            const auto target = softened_probs(ex.teacher_logits.first(m), T);
            const auto log_s = log_softened_probs(std::span<const double>(logits).first(m), T);
            double kd = 0.0;
            for (std::size_t r = 0; r < m; ++r) {
                kd -= target[r] * log_s[r];
                delta[r] += alpha * (std::exp(log_s[r]) - target[r]) / T;
            }
            loss += alpha * kd;
        }
        result.loss += loss * inv_batch;
        for (double& d : delta) d *= inv_batch;

        // head
        const auto& feat = activations[depth];
        for (std::size_t r = 0; r < out; ++r) {
            auto grow = g.head.weights.row(r);
            for (std::size_t c = 0; c < feat.size(); ++c) grow[c] += delta[r] * feat[c];
            g.head.bias[r] += delta[r];
        }
        const DenseLayer* upper = &model.head;
        for (std::size_t l = depth; l-- > 0;) {
            prev_delta.assign(model.hidden[l].out_dim(), 0.0);
            for (std::size_t r = 0; r < upper->out_dim(); ++r) {
                const auto wrow = upper->weights.row(r);
                for (std::size_t c = 0; c < prev_delta.size(); ++c) prev_delta[c] += wrow[c] * delta[r];
            }
            for (std::size_t c = 0; c < prev_delta.size(); ++c)
                if (!(pre[l][c] > 0.0)) prev_delta[c] = 0.0;
            delta.swap(prev_delta);
            const auto& below = activations[l];
            auto& gl = g.hidden[l];
            for (std::size_t r = 0; r < delta.size(); ++r) {
                auto grow = gl.weights.row(r);
                for (std::size_t c = 0; c < below.size(); ++c) grow[c] += delta[r] * below[c];
                gl.bias[r] += delta[r];
            }
            upper = &model.hidden[l];
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Parameter updates
// ---------------------------------------------------------------------------

namespace detail {

inline void sgd_layer(DenseLayer& layer, const DenseLayer& grad, double lr, double weight_decay) {
    if (layer.weights.rows() != grad.weights.rows() || layer.weights.cols() != grad.weights.cols() ||
        layer.bias.size() != grad.bias.size())
        throw ParameterError("sgd_step: gradient shape does not match model");
    auto w = layer.weights.values();
    const auto gw = grad.weights.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (gw[i] + weight_decay * w[i]);
    for (std::size_t i = 0; i < layer.bias.size(); ++i)
        layer.bias[i] -= lr * (grad.bias[i] + weight_decay * layer.bias[i]);
    if (!all_finite(layer.weights.values()) || !all_finite(layer.bias))
        throw NumericError("sgd_step: update produced a non-finite parameter");
}

}  // namespace detail

/// w <- w - lr * (g + weight_decay * w) for every parameter.
inline Model sgd_step(Model model, const GradientSet& grads, double lr, double weight_decay) {
    if (!(lr >= 0.0)) throw ParameterError("sgd_step: learning rate must be non-negative");
    if (!(weight_decay >= 0.0)) throw ParameterError("sgd_step: weight decay must be non-negative");
    if (grads.hidden.size() != model.hidden.size()) throw ParameterError("sgd_step: layer count mismatch");
    for (std::size_t l = 0; l < model.hidden.size(); ++l)
        detail::sgd_layer(model.hidden[l], grads.hidden[l], lr, weight_decay);
    detail::sgd_layer(model.head, grads.head, lr, weight_decay);
    return model;
}

/// Grow the head by n_new rows. Existing rows are copied untouched, so the
/// old-class logits are bitwise unchanged for every input.
inline Model expand_head(Model model, std::size_t n_new, std::uint64_t seed) {
    if (n_new == 0) throw ParameterError("expand_head: n_new must be at least 1");
    const std::size_t old_out = model.head.out_dim();
    const std::size_t fan_in = model.head.in_dim();
    DenseLayer grown{Matrix(old_out + n_new, fan_in), std::vector<double>(old_out + n_new)};
    for (std::size_t r = 0; r < old_out; ++r) {
        auto src = model.head.weights.row(r);
        std::copy(src.begin(), src.end(), grown.weights.row(r).begin());
        grown.bias[r] = model.head.bias[r];
    }
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t r = old_out; r < old_out + n_new; ++r)
        for (double& w : grown.weights.row(r)) w = rng.uniform(-bound, bound);
    for (std::size_t r = old_out; r < old_out + n_new; ++r) grown.bias[r] = rng.uniform(-bound, bound);
    model.head = std::move(grown);
    model.seed_log.push_back(seed);
    return model;
}

/// Scale factor mean(||old rows||) / mean(||new rows||) for the head.
inline double weight_align_factor(const Model& model, std::size_t m, std::size_t n) {
    if (m < 1 || n < 1) throw ParameterError("weight_align: m and n must be at least 1");
    if (model.head_dim() != m + n) throw ParameterError("weight_align: head dimension != m + n");
    double old_norm = 0.0, new_norm = 0.0;
    for (std::size_t r = 0; r < m; ++r) old_norm += norm2(model.head.weights.row(r));
    for (std::size_t r = m; r < m + n; ++r) new_norm += norm2(model.head.weights.row(r));
    old_norm /= static_cast<double>(m);
    new_norm /= static_cast<double>(n);
    if (!(new_norm > 0.0)) throw DegenerateScaleError("weight_align: new-class weight rows are all zero");
    return old_norm / new_norm;
}

/// Rescale the new-class weight rows so their mean norm matches the old rows.
inline Model weight_align(Model model, std::size_t m, std::size_t n) {
    const double gamma = weight_align_factor(model, m, n);
    for (std::size_t r = m; r < m + n; ++r)
        for (double& w : model.head.weights.row(r)) w *= gamma;
    return model;
}

}  // namespace pseudocl
