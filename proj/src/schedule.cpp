#include "aex/schedule.hpp"

namespace aex {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
    NoiseSchedule s;
    s.T = T;
    s.beta = Eigen::VectorXd::Zero(T + 1);
    s.alpha_bar = Eigen::VectorXd::Zero(T + 1);
    s.alpha_bar(0) = 1.0;
    for (int t = 1; t <= T; ++t) {
        double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
        s.beta(t) = beta_start + (beta_end - beta_start) * frac;
        s.alpha_bar(t) = s.alpha_bar(t - 1) * (1.0 - s.beta(t));
    }
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    if (beta.size() != T + 1 || alpha_bar.size() != T + 1)
        throw std::invalid_argument("schedule: bad vector sizes");
    for (int t = 1; t <= T; ++t) {
        if (beta(t) <= 0.0 || beta(t) >= 1.0)
            throw std::invalid_argument("schedule: beta out of (0,1)");
        if (t > 1 && beta(t) < beta(t - 1))
            throw std::invalid_argument("schedule: beta must be nondecreasing");
        if (alpha_bar(t) >= alpha_bar(t - 1))
            throw std::invalid_argument("schedule: alpha_bar must decrease");
    }
}

}  // namespace aex
