#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "memodetector/encode/feature.hpp"
#include "memodetector/error.hpp"
#include "memodetector/fusion/params.hpp"

namespace memodetector::fusion {

using encode::FeatureBundle;
using encode::FeatureSequence;
using encode::SequenceKind;

/// Floor applied to the target probability before taking its log.
inline constexpr double kProbabilityFloor = 1e-12;

// ---------------------------------------------------------------------------
// Sequence assembly

/// Stage-1 fusion: text tokens appended to the patch sequence as pseudo-patches.
inline FeatureSequence stage1_fuse(const FeatureSequence& visual, const FeatureSequence& text) {
    if (visual.dim() != text.dim())
        throw ShapeError("stage-1 fusion width mismatch: visual " + std::to_string(visual.dim()) + ", text " +
                         std::to_string(text.dim()));
    Eigen::MatrixXd rows(visual.rows.rows() + text.rows.rows(), visual.rows.cols());
    rows << visual.rows, text.rows;
    std::vector<bool> mask = visual.mask;
    mask.insert(mask.end(), text.mask.begin(), text.mask.end());
    return FeatureSequence(std::move(rows), std::move(mask), SequenceKind::visual);
}

/// Concatenates enhanced-text sequences in canonical step order.
inline FeatureSequence build_enhanced_text(const std::map<enhance::Step, FeatureSequence>& enhanced) {
    if (enhanced.empty()) throw ConfigError("no enhanced text sequences to concatenate");
    const auto dim = enhanced.begin()->second.dim();
    Eigen::Index total = 0;
    for (const auto& [step, seq] : enhanced) {
        if (seq.dim() != dim) throw ShapeError("enhanced sequences disagree on width");
        total += seq.rows.rows();
    }
    Eigen::MatrixXd rows(total, static_cast<Eigen::Index>(dim));
    std::vector<bool> mask;
    mask.reserve(static_cast<std::size_t>(total));
    Eigen::Index at = 0;
    for (auto step : enhance::kAllSteps) {  // std::map already orders by enum, kept explicit
        auto it = enhanced.find(step);
        if (it == enhanced.end()) continue;
        rows.middleRows(at, it->second.rows.rows()) = it->second.rows;
        at += it->second.rows.rows();
        mask.insert(mask.end(), it->second.mask.begin(), it->second.mask.end());
    }
    return FeatureSequence(std::move(rows), std::move(mask), SequenceKind::textual);
}

// ---------------------------------------------------------------------------
// Attention

/// Intermediate values of one cross-attention direction, kept for backprop.
struct AttentionTrace {
    Eigen::MatrixXd q, k, v;
    std::vector<Eigen::MatrixXd> weights;  // per head, queries x keys
    Eigen::MatrixXd context;               // queries x heads*d_k
    Eigen::MatrixXd out;                   // context * W_O
};

/// Row softmax over unmasked key columns; masked columns get weight 0.
inline Eigen::MatrixXd masked_softmax_rows(const Eigen::MatrixXd& scores, const std::vector<bool>& key_mask) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(scores.rows(), scores.cols());
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < scores.cols(); ++c)
            if (key_mask[static_cast<std::size_t>(c)]) mx = std::max(mx, scores(r, c));
        double sum = 0.0;
        for (Eigen::Index c = 0; c < scores.cols(); ++c) {
            if (!key_mask[static_cast<std::size_t>(c)]) continue;
            w(r, c) = std::exp(scores(r, c) - mx);
            sum += w(r, c);
        }
        w.row(r) /= sum;
    }
    return w;
}

/// softmax(Q K^T / sqrt(d_k)) V W_O with Q from `queries`, K and V from `keys`.
inline AttentionTrace cross_attend(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys,
                                   const std::vector<bool>& key_mask, const AttentionParams& p,
                                   const FusionDims& dims) {
    if (std::none_of(key_mask.begin(), key_mask.end(), [](bool b) { return b; }))
        throw DegenerateInputError("cross-attention has no unmasked key positions");
    AttentionTrace t;
    t.q = queries * p.query;
    t.k = keys * p.key;
    t.v = keys * p.value;
    const auto dk = static_cast<Eigen::Index>(dims.key_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims.key_dim));
    t.context.resize(queries.rows(), static_cast<Eigen::Index>(dims.attention_width()));
    for (std::size_t h = 0; h < dims.heads; ++h) {
        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dk;
        Eigen::MatrixXd scores = (t.q.middleCols(c0, dk) * t.k.middleCols(c0, dk).transpose()) * scale;
        t.weights.push_back(masked_softmax_rows(scores, key_mask));
        t.context.middleCols(c0, dk) = t.weights.back() * t.v.middleCols(c0, dk);
    }
    t.out = t.context * p.output;
    return t;
}

struct CrossAttentionResult {
    Eigen::MatrixXd v_tilde;
    Eigen::MatrixXd tau_tilde;
};

inline void require_attention_inputs(const FeatureSequence& hv, const FeatureSequence& htau,
                                     const FusionDims& dims) {
    if (hv.length() == 0 || htau.length() == 0)
        throw DegenerateInputError("cross-attention needs N >= 1 and M >= 1 (got N=" +
                                   std::to_string(hv.length()) + ", M=" + std::to_string(htau.length()) + ")");
    if (hv.dim() != dims.dim || htau.dim() != dims.dim)
        throw ShapeError("cross-attention inputs must have width " + std::to_string(dims.dim));
    if (!hv.finite() || !htau.finite()) throw NumericError("non-finite values entering cross-attention");
}

/// Both directions read the same inputs: tau~ = H_tau' + attn(text -> visual) W_O,
/// v~ = H_v' + attn(visual -> text) W_O'.
inline CrossAttentionResult bidirectional_xattn(const FeatureSequence& hv_prime, const FeatureSequence& htau_prime,
                                                const FusionParams& params) {
    if (!params.forward || !params.backward)
        throw ConfigError("bidirectional cross-attention needs both parameter sets");
    require_attention_inputs(hv_prime, htau_prime, params.dims);
    auto fwd = cross_attend(htau_prime.rows, hv_prime.rows, hv_prime.mask, *params.forward, params.dims);
    auto bwd = cross_attend(hv_prime.rows, htau_prime.rows, htau_prime.mask, *params.backward, params.dims);
    return {hv_prime.rows + bwd.out, htau_prime.rows + fwd.out};
}

// ---------------------------------------------------------------------------
// Pooling and classification

inline Eigen::VectorXd masked_mean(const Eigen::MatrixXd& rows, const std::vector<bool>& mask) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(rows.cols());
    std::size_t n = 0;
    for (Eigen::Index r = 0; r < rows.rows(); ++r)
        if (mask[static_cast<std::size_t>(r)]) {
            sum += rows.row(r).transpose();
            ++n;
        }
    if (n == 0) throw DegenerateInputError("mean pooling over a fully masked sequence");
    return sum / static_cast<double>(n);
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double mx = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - mx).exp();
    return e / e.sum();
}

/// Lowest index wins ties.
inline std::size_t argmax(const Eigen::VectorXd& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = i;
    return static_cast<std::size_t>(best);
}

struct FusionOutput {
    Eigen::MatrixXd v_tilde;
    Eigen::MatrixXd tau_tilde;
    Eigen::VectorXd meme_embedding;
    Eigen::VectorXd logits;
    Eigen::VectorXd probabilities;

    std::size_t predicted() const { return argmax(probabilities); }
};

inline void classify(FusionOutput& out, const FusionParams& params) {
    if (out.meme_embedding.size() != params.classifier_weight.cols())
        throw ShapeError("classifier expects width " + std::to_string(params.classifier_weight.cols()) +
                         ", embedding has " + std::to_string(out.meme_embedding.size()));
    out.logits = params.classifier_weight * out.meme_embedding + params.classifier_bias.col(0);
    out.probabilities = softmax(out.logits);
}

/// E = [masked mean of v~ ; masked mean of tau~], then softmax(W E + b).
inline FusionOutput pool_and_classify(const Eigen::MatrixXd& v_tilde, const std::vector<bool>& v_mask,
                                      const Eigen::MatrixXd& tau_tilde, const std::vector<bool>& tau_mask,
                                      const FusionParams& params) {
    FusionOutput out;
    out.v_tilde = v_tilde;
    out.tau_tilde = tau_tilde;
    out.meme_embedding.resize(v_tilde.cols() + tau_tilde.cols());
    out.meme_embedding << masked_mean(v_tilde, v_mask), masked_mean(tau_tilde, tau_mask);
    classify(out, params);
    return out;
}

// ---------------------------------------------------------------------------
// Full network

/// Everything the backward pass needs from one forward evaluation.
struct ForwardTrace {
    Eigen::MatrixXd visual_in;  // encoder output, before projection
    FeatureSequence visual;     // projected to the common width
    FeatureSequence hv_prime;   // stage-1 output
    FeatureSequence htau_prime; // enriched text
    std::optional<AttentionTrace> fwd;
    std::optional<AttentionTrace> bwd;
    /// Which sequences were pooled into the left / right halves of the embedding.
    std::vector<bool> left_mask, right_mask;
    bool left_is_raw_visual = false;
    FusionOutput output;
};

inline FeatureSequence project_visual(const FeatureSequence& visual, const FusionParams& params) {
    if (params.projection.size() == 0) {
        if (visual.dim() != params.dims.dim)
            throw ShapeError("visual width " + std::to_string(visual.dim()) + " != model width " +
                             std::to_string(params.dims.dim));
        return visual;
    }
    if (visual.dim() != params.dims.visual_dim)
        throw ShapeError("visual width " + std::to_string(visual.dim()) + " != projection input width " +
                         std::to_string(params.dims.visual_dim));
    return FeatureSequence(visual.rows * params.projection, visual.mask, SequenceKind::visual);
}

/// Runs the configured fusion variant on one meme.
inline ForwardTrace forward_trace(const FusionParams& params, const FeatureBundle& bundle) {
    ForwardTrace t;
    t.visual_in = bundle.visual.rows;
    t.visual = project_visual(bundle.visual, params);
    if (t.visual.length() == 0) throw DegenerateInputError("image produced no patches");
    t.hv_prime = stage1_fuse(t.visual, bundle.text);
    t.htau_prime = build_enhanced_text(bundle.enhanced);
    if (t.htau_prime.dim() != params.dims.dim) throw ShapeError("enhanced text width != model width");

    Eigen::MatrixXd left = t.hv_prime.rows, right = t.htau_prime.rows;
    t.left_mask = t.hv_prime.mask;
    t.right_mask = t.htau_prime.mask;
    switch (params.variant) {
        case FusionVariant::bidirectional_xattn:
            require_attention_inputs(t.hv_prime, t.htau_prime, params.dims);
            t.fwd = cross_attend(t.htau_prime.rows, t.hv_prime.rows, t.hv_prime.mask, *params.forward, params.dims);
            t.bwd = cross_attend(t.hv_prime.rows, t.htau_prime.rows, t.htau_prime.mask, *params.backward, params.dims);
            left += t.bwd->out;
            right += t.fwd->out;
            break;
        case FusionVariant::oneway_xattn:
            require_attention_inputs(t.hv_prime, t.htau_prime, params.dims);
            t.fwd = cross_attend(t.htau_prime.rows, t.hv_prime.rows, t.hv_prime.mask, *params.forward, params.dims);
            right += t.fwd->out;
            break;
        case FusionVariant::add:
        case FusionVariant::concat:
            break;
        case FusionVariant::no_dualstage:
            if (!params.keep_stage1) {
                left = t.visual.rows;
                t.left_mask = t.visual.mask;
                t.left_is_raw_visual = true;
            }
            break;
    }

    FusionOutput& out = t.output;
    out.v_tilde = std::move(left);
    out.tau_tilde = std::move(right);
    const Eigen::VectorXd lm = masked_mean(out.v_tilde, t.left_mask);
    const Eigen::VectorXd rm = masked_mean(out.tau_tilde, t.right_mask);
    if (params.variant == FusionVariant::add) {
        out.meme_embedding = lm + rm;
    } else {
        out.meme_embedding.resize(lm.size() + rm.size());
        out.meme_embedding << lm, rm;
    }
    classify(out, params);
    return t;
}

inline FusionOutput forward(const FusionParams& params, const FeatureBundle& bundle) {
    return forward_trace(params, bundle).output;
}

inline double cross_entropy(const Eigen::VectorXd& probabilities, std::size_t label) {
    if (label >= static_cast<std::size_t>(probabilities.size()))
        throw ValidationError("label " + std::to_string(label) + " out of range");
    return -std::log(std::max(probabilities(static_cast<Eigen::Index>(label)), kProbabilityFloor));
}

namespace detail {

/// Backprop through one attention direction; accumulates into `grad` and the
/// input gradients.
inline void attention_backward(const AttentionTrace& t, const Eigen::MatrixXd& d_out,
                               const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys,
                               const AttentionParams& p, const FusionDims& dims, AttentionParams& grad,
                               Eigen::MatrixXd& d_queries, Eigen::MatrixXd& d_keys) {
    grad.output.noalias() += t.context.transpose() * d_out;
    const Eigen::MatrixXd d_context = d_out * p.output.transpose();
    const auto dk = static_cast<Eigen::Index>(dims.key_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims.key_dim));
    Eigen::MatrixXd dq(t.q.rows(), t.q.cols()), dkm(t.k.rows(), t.k.cols()), dv(t.v.rows(), t.v.cols());
    for (std::size_t h = 0; h < dims.heads; ++h) {
        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dk;
        const auto& a = t.weights[h];
        const Eigen::MatrixXd dc = d_context.middleCols(c0, dk);
        const Eigen::MatrixXd da = dc * t.v.middleCols(c0, dk).transpose();
        dv.middleCols(c0, dk) = a.transpose() * dc;
        const Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
        const Eigen::MatrixXd ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
        dq.middleCols(c0, dk) = ds * t.k.middleCols(c0, dk);
        dkm.middleCols(c0, dk) = ds.transpose() * t.q.middleCols(c0, dk);
    }
    grad.query.noalias() += queries.transpose() * dq;
    grad.key.noalias() += keys.transpose() * dkm;
    grad.value.noalias() += keys.transpose() * dv;
    d_queries.noalias() += dq * p.query.transpose();
    d_keys.noalias() += dkm * p.key.transpose() + dv * p.value.transpose();
}

/// Spreads a pooled-mean gradient back over the unmasked rows.
inline Eigen::MatrixXd mean_backward(const Eigen::VectorXd& d_mean, const std::vector<bool>& mask) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mask.size()), d_mean.size());
    std::size_t n = 0;
    for (bool b : mask) n += b;
    for (std::size_t r = 0; r < mask.size(); ++r)
        if (mask[r]) d.row(static_cast<Eigen::Index>(r)) = d_mean.transpose() / static_cast<double>(n);
    return d;
}

}  // namespace detail

/// Cross-entropy of one sample and its gradient, scaled by `weight` and
/// accumulated into `grad` (which must share the shapes of `params`).
inline double loss_and_gradient(const FusionParams& params, const ForwardTrace& t, std::size_t label,
                                FusionParams& grad, double weight = 1.0) {
    const auto& out = t.output;
    const double loss = cross_entropy(out.probabilities, label);
    if (out.probabilities(static_cast<Eigen::Index>(label)) < kProbabilityFloor) return loss;  // clamped: flat

    Eigen::VectorXd d_logits = out.probabilities;
    d_logits(static_cast<Eigen::Index>(label)) -= 1.0;
    d_logits *= weight;
    grad.classifier_weight.noalias() += d_logits * out.meme_embedding.transpose();
    grad.classifier_bias.col(0) += d_logits;
    const Eigen::VectorXd d_embed = params.classifier_weight.transpose() * d_logits;

    const auto d = static_cast<Eigen::Index>(params.dims.dim);
    const Eigen::VectorXd d_left = params.variant == FusionVariant::add ? d_embed : d_embed.head(d);
    const Eigen::VectorXd d_right = params.variant == FusionVariant::add ? d_embed : d_embed.tail(d);
    Eigen::MatrixXd d_left_rows = detail::mean_backward(d_left, t.left_mask);
    Eigen::MatrixXd d_right_rows = detail::mean_backward(d_right, t.right_mask);

    Eigen::MatrixXd d_visual;  // gradient w.r.t. the projected patch rows
    if (t.left_is_raw_visual) {
        d_visual = std::move(d_left_rows);
    } else {
        // residual paths: left is H_v' (+ attention), right is H_tau' (+ attention)
        Eigen::MatrixXd d_hv = std::move(d_left_rows);
        Eigen::MatrixXd d_htau = std::move(d_right_rows);
        const Eigen::MatrixXd d_hv_out = d_hv, d_htau_out = d_htau;
        if (t.fwd)
            detail::attention_backward(*t.fwd, d_htau_out, t.htau_prime.rows, t.hv_prime.rows, *params.forward,
                                       params.dims, *grad.forward, d_htau, d_hv);
        if (t.bwd)
            detail::attention_backward(*t.bwd, d_hv_out, t.hv_prime.rows, t.htau_prime.rows, *params.backward,
                                       params.dims, *grad.backward, d_hv, d_htau);
        d_visual = d_hv.topRows(t.visual.rows.rows());
    }
    if (params.projection.size() > 0) grad.projection.noalias() += t.visual_in.transpose() * d_visual;
    return loss;
}

}  // namespace memodetector::fusion
