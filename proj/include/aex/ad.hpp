#pragma once

#include <Eigen/Dense>
#include <functional>
#include <deque>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

namespace aex::ad {

using Mat = Eigen::MatrixXd;

class Tape;

/// Handle into a Tape. Cheap to copy; valid as long as the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Mat& value() const;
    const Mat& grad() const;
    int rows() const { return static_cast<int>(value().rows()); }
    int cols() const { return static_cast<int>(value().cols()); }
};

/// Reverse-mode autodiff over dense matrices. Nodes are appended in
/// topological order; backward() walks them in reverse.
class Tape {
public:
    Var leaf(Mat v);

    Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var cmul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_const(Var a, double c);
    /// a: n x d, row: 1 x d broadcast over rows of a.
    Var add_row_broadcast(Var a, Var row);
    Var softmax_rows(Var a);
    /// Row-wise layer norm with per-column gain/bias (1 x d each).
    Var layernorm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
    Var silu(Var a);
    Var slice_cols(Var a, int from, int count);
    Var concat_cols(std::span<const Var> parts);
    /// Rows of `table` selected by ids (embedding lookup).
    Var gather_rows(Var table, const std::vector<int>& ids);
    /// General reindexing: out(r, c) = in(src_r[k], src_c[k]) where
    /// k = r * out_cols + c. Backward scatter-adds.
    Var gather_elements(Var a, const std::vector<int>& src_r,
                        const std::vector<int>& src_c, int out_rows,
                        int out_cols);
    /// 2D convolution of an h x w map with a full (odd) kernel, symmetric
    /// reflection at the boundary.
    Var conv2d_reflect(Var a, const Mat& kernel);
    /// Natural log with the input clamped below at `eps`.
    Var log_clamped(Var a, double eps = 1e-12);
    /// Maximum entry as a 1x1 var; subgradient goes to the first maximal
    /// entry in row-major scan order.
    Var max_all(Var a);
    /// Maximum of 1x1 vars; ties broken toward the lowest index.
    Var max_of(std::span<const Var> scalars, int* argmax = nullptr);
    Var mean_of(std::span<const Var> parts);
    Var sum_all(Var a);
    /// Mean squared error against a constant target, as a 1x1 var.
    Var mse(Var pred, const Mat& target);

    /// Accumulate d(root)/d(everything). root must be 1x1.
    void backward(Var root);

    const Mat& value(int id) const { return nodes_[id].value; }
    const Mat& grad(int id) const;
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool has_grad = false;
        std::function<void()> backprop;  // empty for leaves
    };

    std::deque<Node> nodes_;

    Var push(Mat value, std::function<void()> backprop = {});
    Mat& grad_ref(int id);
    static int reflect(int i, int n);

    friend struct Var;
};

}  // namespace aex::ad
