#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "memodetector/error.hpp"

namespace memodetector::train {

/// counts[label][prediction]
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

    std::size_t classes() const noexcept { return classes_; }

    void add(std::size_t label, std::size_t prediction) {
        if (label >= classes_ || prediction >= classes_)
            throw ValidationError("class index out of range for a " + std::to_string(classes_) + "-class matrix");
        ++counts_[label * classes_ + prediction];
    }

    std::size_t operator()(std::size_t label, std::size_t prediction) const {
        return counts_[label * classes_ + prediction];
    }

    std::size_t total() const {
        std::size_t n = 0;
        for (auto c : counts_) n += c;
        return n;
    }

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t classes_;
    std::vector<std::size_t> counts_;
};

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;    // true instances
    std::size_t predicted = 0;  // predicted instances
    /// False when the class occurs in neither labels nor predictions.
    bool present = false;
};

struct Metrics {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<ClassScores> per_class;
    ConfusionMatrix confusion;
};

/// Per-class scores with 0 for empty denominators. Macro averages are the
/// unweighted mean over classes that appear in labels or predictions; a class
/// absent from both is reported with zeros and left out of the average.
inline Metrics compute_metrics(const ConfusionMatrix& cm) {
    Metrics m;
    m.confusion = cm;
    const auto c = cm.classes();
    const auto total = cm.total();
    std::size_t correct = 0;
    for (std::size_t k = 0; k < c; ++k) correct += cm(k, k);
    m.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;

    std::size_t present = 0;
    m.per_class.resize(c);
    for (std::size_t k = 0; k < c; ++k) {
        auto& s = m.per_class[k];
        const std::size_t tp = cm(k, k);
        for (std::size_t j = 0; j < c; ++j) {
            s.support += cm(k, j);
            s.predicted += cm(j, k);
        }
        s.present = s.support > 0 || s.predicted > 0;
        s.precision = s.predicted ? static_cast<double>(tp) / static_cast<double>(s.predicted) : 0.0;
        s.recall = s.support ? static_cast<double>(tp) / static_cast<double>(s.support) : 0.0;
        s.f1 = (s.precision + s.recall) > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
        if (!s.present) continue;
        ++present;
        m.macro_precision += s.precision;
        m.macro_recall += s.recall;
        m.macro_f1 += s.f1;
    }
    if (present) {
        m.macro_precision /= static_cast<double>(present);
        m.macro_recall /= static_cast<double>(present);
        m.macro_f1 /= static_cast<double>(present);
    }
    return m;
}

inline Metrics compute_metrics(std::span<const std::size_t> labels, std::span<const std::size_t> predictions,
                               std::size_t classes) {
    if (labels.size() != predictions.size()) throw ValidationError("label and prediction counts differ");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], predictions[i]);
    return compute_metrics(cm);
}

/// Mean and sample standard deviation (n-1; 0 for a single value).
struct Summary {
    double mean = 0.0;
    double std = 0.0;
};

inline Summary summarize(std::span<const double> values) {
    Summary s;
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

/// Multi-seed evaluation of one configuration.
struct MetricsReport {
    std::vector<std::uint64_t> seeds;
    std::vector<Metrics> per_seed;
    Summary accuracy, macro_precision, macro_recall, macro_f1;
};

inline MetricsReport aggregate(std::vector<std::uint64_t> seeds, std::vector<Metrics> per_seed) {
    MetricsReport r;
    r.seeds = std::move(seeds);
    r.per_seed = std::move(per_seed);
    auto column = [&](double Metrics::*field) {
        std::vector<double> v;
        for (const auto& m : r.per_seed) v.push_back(m.*field);
        return summarize(v);
    };
    r.accuracy = column(&Metrics::accuracy);
    r.macro_precision = column(&Metrics::macro_precision);
    r.macro_recall = column(&Metrics::macro_recall);
    r.macro_f1 = column(&Metrics::macro_f1);
    return r;
}

}  // namespace memodetector::train
