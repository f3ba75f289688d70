#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "memodetector/error.hpp"
#include "memodetector/rng.hpp"

namespace memodetector::fusion {

/// Second-stage fusion strategy. `no_dualstage` is the ablation that replaces
/// both stages with pooled concatenation of the visual and enriched text sides.
enum class FusionVariant { bidirectional_xattn, add, concat, oneway_xattn, no_dualstage };

inline constexpr FusionVariant kAllVariants[] = {FusionVariant::bidirectional_xattn, FusionVariant::add,
                                                 FusionVariant::concat, FusionVariant::oneway_xattn,
                                                 FusionVariant::no_dualstage};

inline std::string_view to_string(FusionVariant v) {
    switch (v) {
        case FusionVariant::bidirectional_xattn: return "bidirectional_xattn";
        case FusionVariant::add: return "add";
        case FusionVariant::concat: return "concat";
        case FusionVariant::oneway_xattn: return "oneway_xattn";
        case FusionVariant::no_dualstage: return "no_dualstage";
    }
    return "?";
}

inline std::optional<FusionVariant> parse_fusion_variant(std::string_view s) {
    for (auto v : kAllVariants)
        if (to_string(v) == s) return v;
    return std::nullopt;
}

struct FusionDims {
    /// Common feature width d (the text encoder's width).
    std::size_t dim = 32;
    /// Visual encoder width; a learned projection maps it to `dim` when they differ.
    std::size_t visual_dim = 32;
    std::size_t heads = 1;
    /// Per-head key width d_k.
    std::size_t key_dim = 32;
    std::size_t classes = 2;

    std::size_t attention_width() const noexcept { return heads * key_dim; }
};

/// Query/key/value projections (d x heads*d_k) and output projection (heads*d_k x d).
struct AttentionParams {
    Eigen::MatrixXd query, key, value, output;
};

inline bool uses_forward_attention(FusionVariant v) {
    return v == FusionVariant::bidirectional_xattn || v == FusionVariant::oneway_xattn;
}

inline bool uses_backward_attention(FusionVariant v) { return v == FusionVariant::bidirectional_xattn; }

inline std::size_t embedding_width(FusionVariant v, std::size_t dim) {
    return v == FusionVariant::add ? dim : 2 * dim;
}

struct FusionParams {
    FusionDims dims;
    FusionVariant variant = FusionVariant::bidirectional_xattn;
    /// no_dualstage only: pool the stage-1 sequence instead of raw patches.
    bool keep_stage1 = false;

    /// Text queries attend to visual keys; produces the enhanced text side.
    std::optional<AttentionParams> forward;
    /// Visual queries attend to text keys; produces the enhanced visual side.
    std::optional<AttentionParams> backward;
    /// visual_dim x dim, empty when no projection is needed.
    Eigen::MatrixXd projection;
    /// C x embedding width.
    Eigen::MatrixXd classifier_weight;
    /// C x 1.
    Eigen::MatrixXd classifier_bias;

    /// Visits every tensor with its canonical checkpoint name.
    template <typename Self, typename F>
    static void visit(Self& self, F&& f) {
        auto attention = [&](auto& a, const char* prefix) {
            if (!a) return;
            f(std::string(prefix) + "W_Q", a->query);
            f(std::string(prefix) + "W_K", a->key);
            f(std::string(prefix) + "W_V", a->value);
            f(std::string(prefix) + "W_O", a->output);
        };
        attention(self.forward, "fusion.fwd.");
        attention(self.backward, "fusion.bwd.");
        if (self.projection.size() > 0) f(std::string("projection.visual.W"), self.projection);
        f(std::string("classifier.W"), self.classifier_weight);
        f(std::string("classifier.b"), self.classifier_bias);
    }

    template <typename F>
    void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
    template <typename F>
    void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each([&](const std::string&, const Eigen::MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
        return n;
    }

    bool all_finite() const {
        bool ok = true;
        for_each([&](const std::string&, const Eigen::MatrixXd& m) { ok = ok && m.allFinite(); });
        return ok;
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    FusionParams zeros_like() const {
        FusionParams z = *this;
        z.for_each([](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
        return z;
    }
};

inline void validate_dims(const FusionDims& dims) {
    if (dims.dim == 0 || dims.visual_dim == 0) throw ConfigError("feature width must be positive");
    if (dims.heads == 0 || dims.key_dim == 0) throw ConfigError("attention heads and d_k must be positive");
    if (dims.classes < 2) throw ConfigError("need at least 2 classes");
}

/// Xavier-uniform weights and zero bias from a fixed seed.
inline FusionParams init_params(const FusionDims& dims, FusionVariant variant, std::uint64_t seed,
                                bool keep_stage1 = false) {
    validate_dims(dims);
    Rng rng(seed);
    auto xavier = [&rng](std::size_t fan_in, std::size_t fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Eigen::MatrixXd m(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-limit, limit);
        return m;
    };
    auto attention = [&] {
        const auto w = dims.attention_width();
        return AttentionParams{xavier(dims.dim, w), xavier(dims.dim, w), xavier(dims.dim, w), xavier(w, dims.dim)};
    };

    FusionParams p;
    p.dims = dims;
    p.variant = variant;
    p.keep_stage1 = keep_stage1;
    if (uses_forward_attention(variant)) p.forward = attention();
    if (uses_backward_attention(variant)) p.backward = attention();
    if (dims.visual_dim != dims.dim) p.projection = xavier(dims.visual_dim, dims.dim);
    const auto width = embedding_width(variant, dims.dim);
    // stored C x width, so fan_in = width
    p.classifier_weight = xavier(width, dims.classes).transpose();
    p.classifier_bias = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dims.classes), 1);
    return p;
}

}  // namespace memodetector::fusion
