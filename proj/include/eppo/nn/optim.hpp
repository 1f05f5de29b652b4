#pragma once

#include <vector>

#include "eppo/nn/tensor.hpp"

namespace eppo::nn {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    /// Global gradient-norm clip; <= 0 disables.
    double clip = 1.0;
};

/// Adam over a fixed parameter list. Gradients are clipped by their global
/// norm before entering the moments.
class Adam {
public:
    Adam(std::vector<Parameter> params, AdamConfig cfg);

    /// Applies one update and returns the pre-clip global gradient norm.
    /// Parameters without a gradient are treated as having a zero one.
    /// Throws NumericError naming the first parameter with a non-finite
    /// gradient; nothing is modified in that case.
    double step();

    long steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    std::vector<Mat>& first_moments() { return m_; }
    std::vector<Mat>& second_moments() { return v_; }
    void set_steps(long t) { t_ = t; }

private:
    std::vector<Parameter> params_;
    AdamConfig cfg_;
    std::vector<Mat> m_;
    std::vector<Mat> v_;
    long t_ = 0;
};

}  // namespace eppo::nn
