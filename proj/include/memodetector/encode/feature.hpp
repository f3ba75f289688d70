#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "memodetector/enhance/prompts.hpp"
#include "memodetector/error.hpp"

namespace memodetector::encode {

enum class SequenceKind { visual, textual };

/// A length x d matrix of feature rows with a validity mask.
struct FeatureSequence {
    Eigen::MatrixXd rows;
    std::vector<bool> mask;
    SequenceKind kind = SequenceKind::textual;

    FeatureSequence() = default;

    FeatureSequence(Eigen::MatrixXd r, SequenceKind k)
        : rows(std::move(r)), mask(static_cast<std::size_t>(rows.rows()), true), kind(k) {}

    FeatureSequence(Eigen::MatrixXd r, std::vector<bool> m, SequenceKind k)
        : rows(std::move(r)), mask(std::move(m)), kind(k) {
        if (mask.size() != static_cast<std::size_t>(rows.rows()))
            throw ShapeError("mask length " + std::to_string(mask.size()) + " != row count " +
                             std::to_string(rows.rows()));
    }

    /// Zero-length sequence that still knows its width.
    static FeatureSequence empty(std::size_t dim, SequenceKind k) {
        return FeatureSequence(Eigen::MatrixXd(0, static_cast<Eigen::Index>(dim)), k);
    }

    std::size_t length() const noexcept { return static_cast<std::size_t>(rows.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(rows.cols()); }

    std::size_t valid_count() const noexcept {
        std::size_t n = 0;
        for (bool b : mask) n += b;
        return n;
    }

    bool finite() const { return rows.allFinite(); }

    /// Appends `count` zero rows flagged as padding.
    FeatureSequence padded(std::size_t count) const {
        FeatureSequence out = *this;
        out.rows.conservativeResize(rows.rows() + static_cast<Eigen::Index>(count), rows.cols());
        out.rows.bottomRows(static_cast<Eigen::Index>(count)).setZero();
        out.mask.resize(mask.size() + count, false);
        return out;
    }
};

/// Encoded inputs of one meme: image patches, original text tokens, and one
/// token sequence per enabled enhancement step.
struct FeatureBundle {
    FeatureSequence visual;
    FeatureSequence text;
    std::map<enhance::Step, FeatureSequence> enhanced;
};

}  // namespace memodetector::encode
