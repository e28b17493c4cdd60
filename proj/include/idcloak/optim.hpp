#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace idcloak {

class Adam {
public:
    explicit Adam(Eigen::Index size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
          m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

    template <typename Params, typename Grad>
    void step(Params&& params, const Grad& grad) {
        ++t_;
        m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
        v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
    }

    long steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    Eigen::VectorXd m_, v_;
    long t_ = 0;
};

} // namespace idcloak
