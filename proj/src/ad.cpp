#include "aex/ad.hpp"

#include <cmath>

namespace aex::ad {

const Mat& Var::value() const { return tape->value(id); }
const Mat& Var::grad() const { return tape->grad(id); }

const Mat& Tape::grad(int id) const {
    static const Mat empty;
    if (!nodes_[id].has_grad) {
        // Grad of a node the loss does not depend on is identically zero.
        const_cast<Tape*>(this)->grad_ref(id);
    }
    return nodes_[id].grad;
}

Var Tape::push(Mat value, std::function<void()> backprop) {
    Node n;
    n.value = std::move(value);
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_ref(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        n.has_grad = true;
    }
    return n.grad;
}

Var Tape::leaf(Mat v) { return push(std::move(v)); }

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
    const Mat& A = a.value();
    const Mat& B = b.value();
    Mat y;
    if (!trans_a && !trans_b) y = A * B;
    else if (trans_a && !trans_b) y = A.transpose() * B;
    else if (!trans_a && trans_b) y = A * B.transpose();
    else y = A.transpose() * B.transpose();
    Var out = push(std::move(y));
    int oid = out.id;
    nodes_[oid].backprop = [this, a, b, trans_a, trans_b, oid]() {
               const Mat& g = nodes_[oid].grad;
               const Mat& A = value(a.id);
               const Mat& B = value(b.id);
               if (!trans_a && !trans_b) {
                   grad_ref(a.id).noalias() += g * B.transpose();
                   grad_ref(b.id).noalias() += A.transpose() * g;
               } else if (trans_a && !trans_b) {
                   grad_ref(a.id).noalias() += B * g.transpose();
                   grad_ref(b.id).noalias() += A * g;
               } else if (!trans_a && trans_b) {
                   grad_ref(a.id).noalias() += g * B;
                   grad_ref(b.id).noalias() += g.transpose() * A;
               } else {
                   grad_ref(a.id).noalias() += B.transpose() * g.transpose();
                   grad_ref(b.id).noalias() += g.transpose() * A.transpose();
               }
    };
    return out;
}

Var Tape::add(Var a, Var b) {
    Var out = push(a.value() + b.value());
    int oid = out.id;
    nodes_[oid].backprop = [this, a, b, oid]() {
        grad_ref(a.id) += nodes_[oid].grad;
        grad_ref(b.id) += nodes_[oid].grad;
    };
    return out;
}

Var Tape::sub(Var a, Var b) {
    Var out = push(a.value() - b.value());
    int oid = out.id;
    nodes_[oid].backprop = [this, a, b, oid]() {
        grad_ref(a.id) += nodes_[oid].grad;
        grad_ref(b.id) -= nodes_[oid].grad;
    };
    return out;
}

Var Tape::cmul(Var a, Var b) {
    Var out = push(a.value().cwiseProduct(b.value()));
    int oid = out.id;
    nodes_[oid].backprop = [this, a, b, oid]() {
        grad_ref(a.id) += nodes_[oid].grad.cwiseProduct(value(b.id));
        grad_ref(b.id) += nodes_[oid].grad.cwiseProduct(value(a.id));
    };
    return out;
}

Var Tape::scale(Var a, double s) {
    Var out = push(a.value() * s);
    int oid = out.id;
    nodes_[oid].backprop = [this, a, s, oid]() {
        grad_ref(a.id) += nodes_[oid].grad * s;
    };
    return out;
}

Var Tape::add_const(Var a, double c) {
    Var out = push(a.value().array() + c);
    int oid = out.id;
    nodes_[oid].backprop = [this, a, oid]() {
        grad_ref(a.id) += nodes_[oid].grad;
    };
    return out;
}

Var Tape::add_row_broadcast(Var a, Var row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw std::invalid_argument("add_row_broadcast: bad row shape");
    Mat y = a.value();
    y.rowwise() += row.value().row(0);
    Var out = push(std::move(y));
    int oid = out.id;
    nodes_[oid].backprop = [this, a, row, oid]() {
        grad_ref(a.id) += nodes_[oid].grad;
        grad_ref(row.id).row(0) += nodes_[oid].grad.colwise().sum();
    };
    return out;
}

Var Tape::softmax_rows(Var a) {
    Mat y = a.value();
    for (int r = 0; r < y.rows(); ++r) {
        Eigen::RowVectorXd v = y.row(r);
        double m = v.maxCoeff();
        v = (v.array() - m).exp();
        y.row(r) = v / v.sum();
    }
    Var out = push(std::move(y));
    int oid = out.id;
    nodes_[oid].backprop = [this, a, oid]() {
        const Mat& p = nodes_[oid].value;
        const Mat& g = nodes_[oid].grad;
        Mat& ga = grad_ref(a.id);
        for (int r = 0; r < p.rows(); ++r) {
            double dot = p.row(r).dot(g.row(r));
            ga.row(r) += p.row(r).cwiseProduct(((g.row(r).array() - dot).matrix()));
        }
    };
    return out;
}

Var Tape::layernorm_rows(Var x, Var gain, Var bias, double eps) {
    const Mat& X = x.value();
    const int n = static_cast<int>(X.rows()), d = static_cast<int>(X.cols());
    Mat xhat(n, d);
    Eigen::VectorXd inv_sigma(n);
    for (int r = 0; r < n; ++r) {
        double mu = X.row(r).mean();
        double var = (X.row(r).array() - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma(r) = is;
        xhat.row(r) = (X.row(r).array() - mu) * is;
    }
    Mat y = xhat;
    for (int r = 0; r < n; ++r)
        y.row(r) = y.row(r).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
    Var out = push(std::move(y));
    int oid = out.id;
    nodes_[oid].backprop = [this, x, gain, bias, xhat, inv_sigma, oid]() {
        const Mat& g = nodes_[oid].grad;
        const int n = static_cast<int>(g.rows()), d = static_cast<int>(g.cols());
        Mat& gx = grad_ref(x.id);
        Mat& gg = grad_ref(gain.id);
        Mat& gb = grad_ref(bias.id);
        const Eigen::RowVectorXd gamma = value(gain.id).row(0);
        for (int r = 0; r < n; ++r) {
            gb.row(0) += g.row(r);
            gg.row(0) += g.row(r).cwiseProduct(xhat.row(r));
            Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gamma);
            double m1 = dxhat.mean();
            double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
            gx.row(r) += inv_sigma(r) *
                         (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
        }
        (void)d;
    };
    return out;
}

Var Tape::silu(Var a) {
    const Mat& x = a.value();
    Mat sig = (1.0 / (1.0 + (-x.array()).exp())).matrix();
    Var out = push(x.cwiseProduct(sig));
    int oid = out.id;
    nodes_[oid].backprop = [this, a, sig, oid]() {
        const Mat& x = value(a.id);
        Mat d = sig.array() * (1.0 + x.array() * (1.0 - sig.array()));
        grad_ref(a.id) += nodes_[oid].grad.cwiseProduct(d);
    };
    return out;
}

Var Tape::slice_cols(Var a, int from, int count) {
    if (from < 0 || from + count > a.cols())
        throw std::invalid_argument("slice_cols: out of range");
    Var out = push(a.value().middleCols(from, count));
    int oid = out.id;
    nodes_[oid].backprop = [this, a, from, count, oid]() {
        grad_ref(a.id).middleCols(from, count) += nodes_[oid].grad;
    };
    return out;
}

Var Tape::concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    int rows = parts[0].rows(), cols = 0;
    for (const Var& p : parts) cols += p.cols();
    Mat y(rows, cols);
    int at = 0;
    for (const Var& p : parts) {
        y.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    Var out = push(std::move(y));
    int oid = out.id;
    std::vector<Var> ps(parts.begin(), parts.end());
    nodes_[oid].backprop = [this, ps, oid]() {
        int at = 0;
        for (const Var& p : ps) {
            int c = static_cast<int>(value(p.id).cols());
            grad_ref(p.id) += nodes_[oid].grad.middleCols(at, c);
            at += c;
        }
    };
    return out;
}

Var Tape::gather_rows(Var table, const std::vector<int>& ids) {
    Mat y(static_cast<int>(ids.size()), table.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows())
            throw std::out_of_range("gather_rows: id out of range");
        y.row(static_cast<int>(i)) = table.value().row(ids[i]);
    }
    Var out = push(std::move(y));
    int oid = out.id;
    nodes_[oid].backprop = [this, table, ids, oid]() {
        Mat& gt = grad_ref(table.id);
        for (size_t i = 0; i < ids.size(); ++i)
            gt.row(ids[i]) += nodes_[oid].grad.row(static_cast<int>(i));
    };
    return out;
}

Var Tape::gather_elements(Var a, const std::vector<int>& src_r,
                          const std::vector<int>& src_c, int out_rows,
                          int out_cols) {
    if (src_r.size() != src_c.size() ||
        src_r.size() != static_cast<size_t>(out_rows) * out_cols)
        throw std::invalid_argument("gather_elements: index size mismatch");
    Mat y(out_rows, out_cols);
    const Mat& A = a.value();
    for (int r = 0; r < out_rows; ++r)
        for (int c = 0; c < out_cols; ++c) {
            size_t k = static_cast<size_t>(r) * out_cols + c;
            y(r, c) = A(src_r[k], src_c[k]);
        }
    Var out = push(std::move(y));
    int oid = out.id;
    nodes_[oid].backprop = [this, a, src_r, src_c, out_rows, out_cols, oid]() {
        Mat& ga = grad_ref(a.id);
        const Mat& g = nodes_[oid].grad;
        for (int r = 0; r < out_rows; ++r)
            for (int c = 0; c < out_cols; ++c) {
                size_t k = static_cast<size_t>(r) * out_cols + c;
                ga(src_r[k], src_c[k]) += g(r, c);
            }
    };
    return out;
}

int Tape::reflect(int i, int n) {
    // Symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2.
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

Var Tape::conv2d_reflect(Var a, const Mat& kernel) {
    const int kh = static_cast<int>(kernel.rows());
    const int kw = static_cast<int>(kernel.cols());
    if (kh % 2 == 0 || kw % 2 == 0)
        throw std::invalid_argument("conv2d_reflect: kernel size must be odd");
    const Mat& X = a.value();
    const int h = static_cast<int>(X.rows()), w = static_cast<int>(X.cols());
    if (h < kh || w < kw)
        throw std::invalid_argument("conv2d_reflect: map smaller than kernel");
    Mat y = Mat::Zero(h, w);
    const int rh = kh / 2, rw = kw / 2;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int di = -rh; di <= rh; ++di)
                for (int dj = -rw; dj <= rw; ++dj)
                    acc += kernel(di + rh, dj + rw) *
                           X(reflect(i + di, h), reflect(j + dj, w));
            y(i, j) = acc;
        }
    Var out = push(std::move(y));
    int oid = out.id;
    nodes_[oid].backprop = [this, a, kernel, h, w, rh, rw, oid]() {
        Mat& ga = grad_ref(a.id);
        const Mat& g = nodes_[oid].grad;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int di = -rh; di <= rh; ++di)
                    for (int dj = -rw; dj <= rw; ++dj)
                        ga(reflect(i + di, h), reflect(j + dj, w)) +=
                            kernel(di + rh, dj + rw) * g(i, j);
    };
    return out;
}

Var Tape::log_clamped(Var a, double eps) {
    const Mat& x = a.value();
    Mat y = x.array().max(eps).log();
    Var out = push(std::move(y));
    int oid = out.id;
    nodes_[oid].backprop = [this, a, eps, oid]() {
        const Mat& x = value(a.id);
        Mat d = (x.array() > eps).select(1.0 / x.array(), Mat::Zero(x.rows(), x.cols()));
        grad_ref(a.id) += nodes_[oid].grad.cwiseProduct(d);
    };
    return out;
}

Var Tape::max_all(Var a) {
    const Mat& x = a.value();
    int br = 0, bc = 0;
    double best = x(0, 0);
    for (int r = 0; r < x.rows(); ++r)
        for (int c = 0; c < x.cols(); ++c)
            if (x(r, c) > best) { best = x(r, c); br = r; bc = c; }
    Mat y(1, 1);
    y(0, 0) = best;
    Var out = push(std::move(y));
    int oid = out.id;
    nodes_[oid].backprop = [this, a, br, bc, oid]() {
        grad_ref(a.id)(br, bc) += nodes_[oid].grad(0, 0);
    };
    return out;
}

Var Tape::max_of(std::span<const Var> scalars, int* argmax) {
    if (scalars.empty()) throw std::invalid_argument("max_of: empty");
    int best = 0;
    for (size_t i = 1; i < scalars.size(); ++i)
        if (scalars[i].value()(0, 0) > scalars[best].value()(0, 0))
            best = static_cast<int>(i);
    if (argmax) *argmax = best;
    Var winner = scalars[best];
    Var out = push(winner.value());
    int oid = out.id;
    nodes_[oid].backprop = [this, winner, oid]() {
        grad_ref(winner.id) += nodes_[oid].grad;
    };
    return out;
}

Var Tape::mean_of(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("mean_of: empty");
    Mat y = parts[0].value();
    for (size_t i = 1; i < parts.size(); ++i) y += parts[i].value();
    y /= static_cast<double>(parts.size());
    Var out = push(std::move(y));
    int oid = out.id;
    std::vector<Var> ps(parts.begin(), parts.end());
    nodes_[oid].backprop = [this, ps, oid]() {
        Mat g = nodes_[oid].grad / static_cast<double>(ps.size());
        for (const Var& p : ps) grad_ref(p.id) += g;
    };
    return out;
}

Var Tape::sum_all(Var a) {
    Mat y(1, 1);
    y(0, 0) = a.value().sum();
    Var out = push(std::move(y));
    int oid = out.id;
    nodes_[oid].backprop = [this, a, oid]() {
        grad_ref(a.id).array() += nodes_[oid].grad(0, 0);
    };
    return out;
}

Var Tape::mse(Var pred, const Mat& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw std::invalid_argument("mse: shape mismatch");
    Mat d = pred.value() - target;
    double n = static_cast<double>(d.size());
    Mat y(1, 1);
    y(0, 0) = d.squaredNorm() / n;
    Var out = push(std::move(y));
    int oid = out.id;
    nodes_[oid].backprop = [this, pred, d, n, oid]() {
        grad_ref(pred.id) += (2.0 / n) * nodes_[oid].grad(0, 0) * d;
    };
    return out;
}

void Tape::backward(Var root) {
    if (root.value().size() != 1)
        throw std::invalid_argument("backward: root must be 1x1");
    grad_ref(root.id)(0, 0) += 1.0;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.has_grad && n.backprop) n.backprop();
    }
}

}  // namespace aex::ad
