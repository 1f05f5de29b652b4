#include "eppo/nn/optim.hpp"

#include <cmath>

namespace eppo::nn {

Adam::Adam(std::vector<Parameter> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0.0) || cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0 ||
        !(cfg_.eps > 0.0)) {
        throw ParameterError("Adam: invalid hyperparameters");
    }
    for (const auto& p : params_) {
        m_.push_back(Mat::Zero(p.var->value.rows(), p.var->value.cols()));
        v_.push_back(Mat::Zero(p.var->value.rows(), p.var->value.cols()));
    }
}

double Adam::step() {
    double sq = 0.0;
    for (const auto& p : params_) {
        const Mat& g = p.var->grad;
        if (g.size() == 0) {
            continue;
        }
        if (!g.allFinite()) {
            throw NumericError("non-finite gradient in parameter " + p.name);
        }
        sq += g.squaredNorm();
    }
    const double norm = std::sqrt(sq);
    const double factor = (cfg_.clip > 0.0 && norm > cfg_.clip) ? cfg_.clip / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Mat& g = params_[i].var->grad;
        if (g.size() == 0) {
            m_[i] *= cfg_.beta1;
            v_[i] *= cfg_.beta2;
        } else {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * factor * g;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * (factor * g).cwiseAbs2();
        }
        params_[i].var->value.array() -=
            cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
    }
    return norm;
}

}  // namespace eppo::nn
