#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace aex {

/// Discrete-time diffusion schedule. beta and alpha_bar are indexed 1..T;
/// alpha_bar[0] == 1.
struct NoiseSchedule {
    int T = 50;
    Eigen::VectorXd beta;       // size T+1, beta[0] unused (= 0)
    Eigen::VectorXd alpha_bar;  // size T+1

    static NoiseSchedule linear(int T = 50, double beta_start = 0.004,
                                double beta_end = 0.16);
    void validate() const;
};

}  // namespace aex
