#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "memodetector/error.hpp"
#include "memodetector/fusion/params.hpp"
#include "memodetector/train/config.hpp"

namespace memodetector::train {

namespace detail {

struct NamedTensor {
    std::string name;
    Eigen::MatrixXd* tensor;
};

inline std::vector<NamedTensor> tensors(fusion::FusionParams& p) {
    std::vector<NamedTensor> out;
    p.for_each([&](const std::string& name, Eigen::MatrixXd& m) { out.push_back({name, &m}); });
    return out;
}

inline std::vector<const Eigen::MatrixXd*> tensors(const fusion::FusionParams& p) {
    std::vector<const Eigen::MatrixXd*> out;
    p.for_each([&](const std::string&, const Eigen::MatrixXd& m) { out.push_back(&m); });
    return out;
}

inline bool decays(const std::string& name) { return name != "classifier.b"; }

}  // namespace detail

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(fusion::FusionParams& params, const fusion::FusionParams& grad) = 0;
};

/// Plain gradient descent with decoupled weight decay.
class Sgd final : public Optimizer {
public:
    Sgd(double lr, double weight_decay) : lr_(lr), wd_(weight_decay) {}

    void step(fusion::FusionParams& params, const fusion::FusionParams& grad) override {
        auto p = detail::tensors(params);
        auto g = detail::tensors(grad);
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (detail::decays(p[i].name)) *p[i].tensor *= 1.0 - lr_ * wd_;
            *p[i].tensor -= lr_ * *g[i];
        }
    }

private:
    double lr_, wd_;
};

/// Adam with decoupled weight decay; biases are not decayed.
class AdamW final : public Optimizer {
public:
    explicit AdamW(const OptimizerConfig& c) : c_(c) {}

    void step(fusion::FusionParams& params, const fusion::FusionParams& grad) override {
        auto p = detail::tensors(params);
        auto g = detail::tensors(grad);
        if (m_.empty()) {
            for (const auto& t : p) {
                m_.push_back(Eigen::MatrixXd::Zero(t.tensor->rows(), t.tensor->cols()));
                v_.push_back(Eigen::MatrixXd::Zero(t.tensor->rows(), t.tensor->cols()));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < p.size(); ++i) {
            m_[i] = c_.beta1 * m_[i] + (1.0 - c_.beta1) * *g[i];
            v_[i] = c_.beta2 * v_[i] + (1.0 - c_.beta2) * g[i]->cwiseProduct(*g[i]);
            if (detail::decays(p[i].name)) *p[i].tensor *= 1.0 - c_.lr * c_.weight_decay;
            const Eigen::ArrayXXd denom = (v_[i].array() / bc2).sqrt() + c_.eps;
            p[i].tensor->array() -= c_.lr * (m_[i].array() / bc1) / denom;
        }
    }

private:
    OptimizerConfig c_;
    std::size_t t_ = 0;
    std::vector<Eigen::MatrixXd> m_, v_;
};

inline std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& c) {
    if (c.name == "adamw") return std::make_unique<AdamW>(c);
    if (c.name == "sgd") return std::make_unique<Sgd>(c.lr, c.weight_decay);
    throw ConfigError("unknown optimizer '" + c.name + "'");
}

}  // namespace memodetector::train
