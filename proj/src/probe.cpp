#include "aex/probe.hpp"

#include <cmath>

namespace aex {

Eigen::MatrixXd SmoothingKernel::matrix() const {
    if (size % 2 == 0)
        throw std::invalid_argument("smoothing kernel size must be odd");
    if (size == 1) return Eigen::MatrixXd::Ones(1, 1);
    if (sigma <= 0)
        throw std::invalid_argument("smoothing kernel sigma must be positive");
    Eigen::MatrixXd k(size, size);
    const int r = size / 2;
    for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j)
            k(i + r, j + r) = std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
    k /= k.sum();
    return k;
}

// ---- Tape variants ------------------------------------------------------

ad::Var aggregate_attention(ad::Tape& tape, const std::vector<ad::Var>& maps,
                            const std::vector<int>& resolutions,
                            int target_resolution) {
    if (maps.size() != resolutions.size())
        throw std::invalid_argument("aggregate_attention: size mismatch");
    std::vector<ad::Var> selected;
    for (size_t i = 0; i < maps.size(); ++i)
        if (resolutions[i] == target_resolution) selected.push_back(maps[i]);
    if (selected.empty())
        throw std::invalid_argument(
            "aggregate_attention: no map at target resolution");
    return tape.mean_of(selected);
}

ad::Var reweight_without_sot(ad::Tape& tape, ad::Var a, SoftmaxMode mode) {
    if (a.cols() < 2)
        throw std::invalid_argument(
            "reweight_without_sot: need at least one non-<sot> token");
    ad::Var rest = tape.slice_cols(a, 1, a.cols() - 1);
    if (mode == SoftmaxMode::LogProbs) rest = tape.log_clamped(rest);
    return tape.softmax_rows(rest);
}

ad::Var subject_map(ad::Tape& tape, ad::Var a, int s, int resolution) {
    if (s < 1) throw std::invalid_argument("subject_map: <sot> index rejected");
    int col = s - 1;
    if (col >= a.cols())
        throw std::invalid_argument("subject_map: token index out of range");
    const int n = resolution * resolution;
    if (a.rows() != n)
        throw std::invalid_argument("subject_map: resolution mismatch");
    std::vector<int> src_r(n), src_c(n, col);
    for (int i = 0; i < n; ++i) src_r[i] = i;
    return tape.gather_elements(a, src_r, src_c, resolution, resolution);
}

ad::Var gaussian_smooth(ad::Tape& tape, ad::Var map, const SmoothingKernel& k) {
    return tape.conv2d_reflect(map, k.matrix());
}

// ---- Off-tape variants ---------------------------------------------------

AggregatedAttention aggregate_attention(const AttentionStack& stack,
                                        int target_resolution) {
    AggregatedAttention out;
    out.resolution = target_resolution;
    int count = 0;
    for (const AttentionMap& m : stack.maps) {
        if (m.resolution != target_resolution) continue;
        if (count == 0)
            out.A = m.probs;
        else
            out.A += m.probs;
        ++count;
    }
    if (count == 0)
        throw std::invalid_argument(
            "aggregate_attention: no map at target resolution");
    out.A /= static_cast<double>(count);
    return out;
}

AggregatedAttention reweight_without_sot(const AggregatedAttention& a,
                                         SoftmaxMode mode) {
    if (a.sot_excluded)
        throw std::invalid_argument("reweight_without_sot: already re-weighted");
    ad::Tape tape;
    ad::Var v = reweight_without_sot(tape, tape.leaf(a.A), mode);
    AggregatedAttention out;
    out.A = v.value();
    out.resolution = a.resolution;
    out.sot_excluded = true;
    return out;
}

Eigen::MatrixXd subject_map(const AggregatedAttention& a, int s) {
    if (s < 1) throw std::invalid_argument("subject_map: <sot> index rejected");
    int col = a.sot_excluded ? s - 1 : s;
    if (col < 0 || col >= a.A.cols())
        throw std::invalid_argument("subject_map: token index out of range");
    const int G = a.resolution;
    Eigen::MatrixXd m(G, G);
    for (int y = 0; y < G; ++y)
        for (int x = 0; x < G; ++x) m(y, x) = a.A(y * G + x, col);
    return m;
}

Eigen::MatrixXd gaussian_smooth(const Eigen::MatrixXd& map,
                                const SmoothingKernel& k) {
    ad::Tape tape;
    return tape.conv2d_reflect(tape.leaf(map), k.matrix()).value();
}

int select_dominant_token(const AggregatedAttention& a,
                          const std::vector<int>& piece_indices) {
    if (piece_indices.empty())
        throw std::invalid_argument("select_dominant_token: empty piece set");
    int best = -1;
    double best_mass = -1.0;
    for (int s : piece_indices) {
        int col = a.sot_excluded ? s - 1 : s;
        if (col < 0 || col >= a.A.cols())
            throw std::invalid_argument(
                "select_dominant_token: index out of range");
        double mass = a.A.col(col).sum();
        if (mass > best_mass) {
            best_mass = mass;
            best = s;
        }
    }
    return best;
}

}  // namespace aex
