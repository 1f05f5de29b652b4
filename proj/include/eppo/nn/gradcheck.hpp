#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eppo/nn/tensor.hpp"

namespace eppo::nn {

inline constexpr int kGradcheckTrials = 50;
inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTol = 1e-4;

/// Compares reverse-mode gradients of a scalar loss with central
/// differences, perturbing the values of `params` in place (restored on
/// return). Returns ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, 1e-10) over
/// all parameters jointly.
double gradient_check(const std::vector<Var>& params, const std::function<Var(Graph&)>& loss,
                      double step = kGradcheckStep);

struct OpReport {
    std::string op;
    /// Largest relative error over the trials.
    double worst = 0.0;
};

/// Finite-difference checks of every differentiable op on random shapes and
/// values. Each op's loss is its output weighted by a random matrix.
std::vector<OpReport> op_gradcheck_suite(int trials, std::uint64_t seed);

}  // namespace eppo::nn
