#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include <Eigen/Dense>

#include "memodetector/encode/feature.hpp"
#include "memodetector/fusion/params.hpp"
#include "memodetector/rng.hpp"

namespace testing_support {

namespace md = memodetector;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("memodetector_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline Eigen::MatrixXd random_matrix(md::Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-scale, scale);
    return m;
}

inline md::encode::FeatureSequence random_sequence(md::Rng& rng, std::size_t len, std::size_t dim,
                                                   md::encode::SequenceKind kind = md::encode::SequenceKind::textual) {
    return {random_matrix(rng, static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(dim)), kind};
}

/// Bundle with random visual, text and enhanced sequences of the given lengths.
inline md::encode::FeatureBundle random_bundle(md::Rng& rng, std::size_t patches, std::size_t tokens,
                                               std::size_t enhanced_tokens, std::size_t dim,
                                               std::size_t visual_dim = 0) {
    md::encode::FeatureBundle b;
    b.visual = random_sequence(rng, patches, visual_dim ? visual_dim : dim, md::encode::SequenceKind::visual);
    b.text = random_sequence(rng, tokens, dim);
    for (auto step : md::enhance::kChainSteps) b.enhanced[step] = random_sequence(rng, enhanced_tokens, dim);
    return b;
}

/// Parameters with every tensor drawn uniformly from [-scale, scale].
inline md::fusion::FusionParams random_params(const md::fusion::FusionDims& dims, md::fusion::FusionVariant v,
                                              std::uint64_t seed, double scale = 0.5, bool keep_stage1 = false) {
    auto p = md::fusion::init_params(dims, v, seed, keep_stage1);
    md::Rng rng(seed ^ 0x5eedULL);
    p.for_each([&](const std::string&, Eigen::MatrixXd& m) { m = random_matrix(rng, m.rows(), m.cols(), scale); });
    return p;
}

}  // namespace testing_support
