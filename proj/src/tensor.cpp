#include "ulip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace ulip::ag {

namespace {

int64_t shape_product(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeMismatch("tensor extents must be positive");
        n *= d;
    }
    return n;
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape() != b->shape())
        throw ShapeMismatch(std::string(op) + ": operand shapes differ");
}

bool track(const Graph& g, std::initializer_list<const TensorPtr*> ins) {
    if (!g.recording()) return false;
    for (const TensorPtr* t : ins)
        if ((*t)->requires_grad()) return true;
    return false;
}

TensorPtr make_out(std::vector<int64_t> shape, std::vector<float> data, bool tracked,
                   const char* op) {
    check_finite(data, op);
    auto t = std::make_shared<Tensor>(std::move(shape), std::move(data), false);
    t->set_requires_grad(tracked);
    return t;
}

} // namespace

Tensor::Tensor(std::vector<int64_t> shape, std::vector<float> data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    if (shape_product(shape_) != static_cast<int64_t>(data_.size()))
        throw ShapeMismatch("tensor data length does not match shape");
    check_finite(data_, "tensor");
}

TensorPtr Tensor::make(std::vector<int64_t> shape, std::vector<float> data, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data), requires_grad);
}

TensorPtr Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
    int64_t n = shape_product(shape);
    return std::make_shared<Tensor>(std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.0f),
                                    requires_grad);
}

TensorPtr Tensor::scalar(float v, bool requires_grad) {
    return std::make_shared<Tensor>(std::vector<int64_t>{1}, std::vector<float>{v}, requires_grad);
}

std::span<float> Tensor::grad() {
    if (!has_grad_) {
        grad_.assign(data_.size(), 0.0f);
        has_grad_ = true;
    }
    return grad_;
}

std::span<const float> Tensor::grad_view() const {
    if (!has_grad_) throw Error("grad_view: no gradient has been accumulated");
    return grad_;
}

void Tensor::zero_grad() {
    grad_.clear();
    has_grad_ = false;
}

float Tensor::item() const {
    if (size() != 1) throw ShapeMismatch("item: tensor is not a scalar");
    return data_[0];
}

void Graph::record(TensorPtr out, std::function<void()> pull) {
    nodes_.push_back(Node{std::move(out), std::move(pull)});
}

void Graph::backward(const TensorPtr& loss) {
    if (loss->size() != 1) throw NonScalarLoss("backward: loss must be a scalar");
    if (consumed_) throw GraphAlreadyConsumed("backward: graph already consumed; reset() first");
    consumed_ = true;
    loss->grad()[0] += 1.0f;
    for (size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.out->has_grad()) n.pull();
    }
}

void Graph::reset() {
    nodes_.clear();
    consumed_ = false;
}

void check_finite(std::span<const float> values, const char* what) {
    for (float v : values) {
        if (!std::isfinite(v))
            throw NonFiniteValue(std::string(what) + ": non-finite value encountered");
    }
}

// ---- kernels (float storage, double accumulation) ----

namespace {

// C[m,n] = A[m,k] * B[k,n]
void kernel_nn(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
    std::vector<double> acc(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* arow = a + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            const float* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * brow[j];
        }
        float* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            double v = acc[static_cast<size_t>(j)];
            crow[j] = accumulate ? crow[j] + static_cast<float>(v) : static_cast<float>(v);
        }
    }
}

// C[m,n] = A[m,k] * B[n,k]^T
void kernel_nt(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const float* brow = b + j * k;
            double acc = 0.0;
            for (int64_t kk = 0; kk < k; ++kk) acc += double(arow[kk]) * double(brow[kk]);
            float* out = c + i * n + j;
            *out = accumulate ? *out + static_cast<float>(acc) : static_cast<float>(acc);
        }
    }
}

// C[k,n] = A[m,k]^T * B[m,n]
void kernel_tn(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
    std::vector<double> acc(static_cast<size_t>(k * n), 0.0);
    for (int64_t r = 0; r < m; ++r) {
        const float* arow = a + r * k;
        const float* brow = b + r * n;
        for (int64_t i = 0; i < k; ++i) {
            double av = arow[i];
            double* accrow = acc.data() + i * n;
            for (int64_t j = 0; j < n; ++j) accrow[j] += av * brow[j];
        }
    }
    for (int64_t i = 0; i < k * n; ++i) {
        c[i] = accumulate ? c[i] + static_cast<float>(acc[static_cast<size_t>(i)])
                          : static_cast<float>(acc[static_cast<size_t>(i)]);
    }
}

void require_matrix(const TensorPtr& t, const char* op) {
    if (t->rank() != 2) throw ShapeMismatch(std::string(op) + ": expected a rank-2 tensor");
}

} // namespace

TensorPtr matmul(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    int64_t m = a->dim(0), k = a->dim(1), k2 = b->dim(0), n = b->dim(1);
    if (k != k2) throw ShapeMismatch("matmul: inner extents differ");

    std::vector<float> out(static_cast<size_t>(m * n));
    kernel_nn(a->data().data(), b->data().data(), out.data(), m, k, n, false);

    bool tracked = track(g, {&a, &b});
    TensorPtr y = make_out({m, n}, std::move(out), tracked, "matmul");
    if (tracked) {
        g.record(y, [a, b, y, m, k, n]() {
            std::span<const float> gy = y->grad_view();
            if (a->requires_grad())
                kernel_nt(gy.data(), b->data().data(), a->grad().data(), m, n, k, true);
            if (b->requires_grad())
                kernel_tn(a->data().data(), gy.data(), b->grad().data(), m, k, n, true);
        });
    }
    return y;
}

TensorPtr matmul_nt(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    int64_t m = a->dim(0), k = a->dim(1), n = b->dim(0);
    if (k != b->dim(1)) throw ShapeMismatch("matmul_nt: row widths differ");

    std::vector<float> out(static_cast<size_t>(m * n));
    kernel_nt(a->data().data(), b->data().data(), out.data(), m, k, n, false);

    bool tracked = track(g, {&a, &b});
    TensorPtr y = make_out({m, n}, std::move(out), tracked, "matmul_nt");
    if (tracked) {
        g.record(y, [a, b, y, m, k, n]() {
            std::span<const float> gy = y->grad_view();
            if (a->requires_grad())
                kernel_nn(gy.data(), b->data().data(), a->grad().data(), m, n, k, true);
            if (b->requires_grad())
                kernel_tn(gy.data(), a->data().data(), b->grad().data(), m, n, k, true);
        });
    }
    return y;
}

namespace {

template <typename Fwd, typename Bwd>
TensorPtr elementwise_binary(Graph& g, const TensorPtr& a, const TensorPtr& b, const char* op,
                             Fwd fwd, Bwd bwd) {
    require_same_shape(a, b, op);
    std::span<const float> av = a->data(), bv = b->data();
    std::vector<float> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
    bool tracked = track(g, {&a, &b});
    TensorPtr y = make_out(a->shape(), std::move(out), tracked, op);
    if (tracked) {
        g.record(y, [a, b, y, bwd]() {
            std::span<const float> gy = y->grad_view();
            std::span<const float> av = a->data(), bv = b->data();
            if (a->requires_grad()) {
                std::span<float> ga = a->grad();
                for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bwd(av[i], bv[i], true);
            }
            if (b->requires_grad()) {
                std::span<float> gb = b->grad();
                for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * bwd(av[i], bv[i], false);
            }
        });
    }
    return y;
}

} // namespace

TensorPtr add(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    return elementwise_binary(
        g, a, b, "add", [](float x, float y) { return x + y; },
        [](float, float, bool) { return 1.0f; });
}

TensorPtr sub(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    return elementwise_binary(
        g, a, b, "sub", [](float x, float y) { return x - y; },
        [](float, float, bool wrt_a) { return wrt_a ? 1.0f : -1.0f; });
}

TensorPtr mul(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    return elementwise_binary(
        g, a, b, "mul", [](float x, float y) { return x * y; },
        [](float x, float y, bool wrt_a) { return wrt_a ? y : x; });
}

TensorPtr scale_by(Graph& g, const TensorPtr& x, const TensorPtr& s) {
    if (s->size() != 1) throw ShapeMismatch("scale_by: scale must be a 1-element tensor");
    float sv = s->data()[0];
    std::span<const float> xv = x->data();
    std::vector<float> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * sv;
    bool tracked = track(g, {&x, &s});
    TensorPtr y = make_out(x->shape(), std::move(out), tracked, "scale_by");
    if (tracked) {
        g.record(y, [x, s, y]() {
            std::span<const float> gy = y->grad_view();
            std::span<const float> xv = x->data();
            float sv = s->data()[0];
            if (x->requires_grad()) {
                std::span<float> gx = x->grad();
                for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * sv;
            }
            if (s->requires_grad()) {
                double acc = 0.0;
                for (size_t i = 0; i < gy.size(); ++i) acc += double(gy[i]) * double(xv[i]);
                s->grad()[0] += static_cast<float>(acc);
            }
        });
    }
    return y;
}

TensorPtr scale_const(Graph& g, const TensorPtr& x, float c) {
    std::span<const float> xv = x->data();
    std::vector<float> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c;
    bool tracked = track(g, {&x});
    TensorPtr y = make_out(x->shape(), std::move(out), tracked, "scale_const");
    if (tracked) {
        g.record(y, [x, y, c]() {
            std::span<const float> gy = y->grad_view();
            std::span<float> gx = x->grad();
            for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * c;
        });
    }
    return y;
}

TensorPtr bias_add(Graph& g, const TensorPtr& x, const TensorPtr& b) {
    require_matrix(x, "bias_add");
    if (b->rank() != 1 || b->dim(0) != x->dim(1))
        throw ShapeMismatch("bias_add: bias width does not match matrix columns");
    int64_t n = x->dim(0), c = x->dim(1);
    std::span<const float> xv = x->data(), bv = b->data();
    std::vector<float> out(xv.size());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j)
            out[static_cast<size_t>(i * c + j)] = xv[static_cast<size_t>(i * c + j)] + bv[static_cast<size_t>(j)];
    bool tracked = track(g, {&x, &b});
    TensorPtr y = make_out(x->shape(), std::move(out), tracked, "bias_add");
    if (tracked) {
        g.record(y, [x, b, y, n, c]() {
            std::span<const float> gy = y->grad_view();
            if (x->requires_grad()) {
                std::span<float> gx = x->grad();
                for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
            }
            if (b->requires_grad()) {
                std::span<float> gb = b->grad();
                for (int64_t j = 0; j < c; ++j) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < n; ++i) acc += gy[static_cast<size_t>(i * c + j)];
                    gb[static_cast<size_t>(j)] += static_cast<float>(acc);
                }
            }
        });
    }
    return y;
}

TensorPtr relu(Graph& g, const TensorPtr& x) {
    std::span<const float> xv = x->data();
    std::vector<float> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
    bool tracked = track(g, {&x});
    TensorPtr y = make_out(x->shape(), std::move(out), tracked, "relu");
    if (tracked) {
        g.record(y, [x, y]() {
            std::span<const float> gy = y->grad_view();
            std::span<const float> xv = x->data();
            std::span<float> gx = x->grad();
            for (size_t i = 0; i < gy.size(); ++i)
                if (xv[i] > 0.0f) gx[i] += gy[i];
        });
    }
    return y;
}

TensorPtr exp_op(Graph& g, const TensorPtr& x) {
    std::span<const float> xv = x->data();
    std::vector<float> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = std::exp(xv[i]);
    bool tracked = track(g, {&x});
    TensorPtr y = make_out(x->shape(), std::move(out), tracked, "exp");
    if (tracked) {
        g.record(y, [x, y]() {
            std::span<const float> gy = y->grad_view();
            std::span<const float> yv = y->data();
            std::span<float> gx = x->grad();
            for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * yv[i];
        });
    }
    return y;
}

TensorPtr log_op(Graph& g, const TensorPtr& x) {
    std::span<const float> xv = x->data();
    std::vector<float> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = std::log(xv[i]);
    bool tracked = track(g, {&x});
    TensorPtr y = make_out(x->shape(), std::move(out), tracked, "log");
    if (tracked) {
        g.record(y, [x, y]() {
            std::span<const float> gy = y->grad_view();
            std::span<const float> xv = x->data();
            std::span<float> gx = x->grad();
            for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] / xv[i];
        });
    }
    return y;
}

TensorPtr rowgroup_max(Graph& g, const TensorPtr& x, int64_t group_size) {
    require_matrix(x, "rowgroup_max");
    int64_t rows = x->dim(0), cols = x->dim(1);
    if (group_size <= 0 || rows % group_size != 0)
        throw ShapeMismatch("rowgroup_max: rows not divisible by group size");
    int64_t groups = rows / group_size;

    std::span<const float> xv = x->data();
    std::vector<float> out(static_cast<size_t>(groups * cols));
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(groups * cols));
    for (int64_t gi = 0; gi < groups; ++gi) {
        for (int64_t j = 0; j < cols; ++j) {
            int64_t base = gi * group_size;
            float best = xv[static_cast<size_t>(base * cols + j)];
            int64_t best_row = base;
            for (int64_t r = 1; r < group_size; ++r) {
                float v = xv[static_cast<size_t>((base + r) * cols + j)];
                if (v > best) {
                    best = v;
                    best_row = base + r;
                }
            }
            out[static_cast<size_t>(gi * cols + j)] = best;
            (*argmax)[static_cast<size_t>(gi * cols + j)] = best_row;
        }
    }
    bool tracked = track(g, {&x});
    TensorPtr y = make_out({groups, cols}, std::move(out), tracked, "rowgroup_max");
    if (tracked) {
        g.record(y, [x, y, argmax, cols]() {
            std::span<const float> gy = y->grad_view();
            std::span<float> gx = x->grad();
            for (size_t i = 0; i < gy.size(); ++i) {
                int64_t row = (*argmax)[i];
                int64_t j = static_cast<int64_t>(i) % cols;
                gx[static_cast<size_t>(row * cols + j)] += gy[i];
            }
        });
    }
    return y;
}

TensorPtr sum_all(Graph& g, const TensorPtr& x) {
    std::span<const float> xv = x->data();
    double acc = 0.0;
    for (float v : xv) acc += v;
    bool tracked = track(g, {&x});
    TensorPtr y = make_out({1}, {static_cast<float>(acc)}, tracked, "sum_all");
    if (tracked) {
        g.record(y, [x, y]() {
            float gy = y->grad_view()[0];
            std::span<float> gx = x->grad();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
        });
    }
    return y;
}

TensorPtr mean_all(Graph& g, const TensorPtr& x) {
    std::span<const float> xv = x->data();
    double acc = 0.0;
    for (float v : xv) acc += v;
    double inv_n = 1.0 / static_cast<double>(xv.size());
    bool tracked = track(g, {&x});
    TensorPtr y = make_out({1}, {static_cast<float>(acc * inv_n)}, tracked, "mean_all");
    if (tracked) {
        g.record(y, [x, y, inv_n]() {
            double gy = y->grad_view()[0];
            std::span<float> gx = x->grad();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += static_cast<float>(gy * inv_n);
        });
    }
    return y;
}

TensorPtr l2_normalize_rows(Graph& g, const TensorPtr& x) {
    int64_t rows, cols;
    if (x->rank() == 1) {
        rows = 1;
        cols = x->dim(0);
    } else if (x->rank() == 2) {
        rows = x->dim(0);
        cols = x->dim(1);
    } else {
        throw ShapeMismatch("l2_normalize_rows: expected rank 1 or 2");
    }
    std::span<const float> xv = x->data();
    std::vector<float> out(xv.size());
    auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) {
        double sq = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            double v = xv[static_cast<size_t>(i * cols + j)];
            sq += v * v;
        }
        double norm = std::sqrt(sq);
        if (norm <= 1e-12)
            throw DegenerateEmbedding("l2_normalize_rows: row norm below 1e-12");
        (*norms)[static_cast<size_t>(i)] = norm;
        for (int64_t j = 0; j < cols; ++j)
            out[static_cast<size_t>(i * cols + j)] =
                static_cast<float>(xv[static_cast<size_t>(i * cols + j)] / norm);
    }
    bool tracked = track(g, {&x});
    TensorPtr y = make_out(x->shape(), std::move(out), tracked, "l2_normalize_rows");
    if (tracked) {
        g.record(y, [x, y, norms, rows, cols]() {
            std::span<const float> gy = y->grad_view();
            std::span<const float> yv = y->data();
            std::span<float> gx = x->grad();
            for (int64_t i = 0; i < rows; ++i) {
                double dot = 0.0;
                for (int64_t j = 0; j < cols; ++j)
                    dot += double(gy[static_cast<size_t>(i * cols + j)]) *
                           double(yv[static_cast<size_t>(i * cols + j)]);
                double inv_norm = 1.0 / (*norms)[static_cast<size_t>(i)];
                for (int64_t j = 0; j < cols; ++j) {
                    size_t idx = static_cast<size_t>(i * cols + j);
                    gx[idx] += static_cast<float>((double(gy[idx]) - dot * double(yv[idx])) * inv_norm);
                }
            }
        });
    }
    return y;
}

TensorPtr logsumexp_rows(Graph& g, const TensorPtr& x) {
    require_matrix(x, "logsumexp_rows");
    int64_t rows = x->dim(0), cols = x->dim(1);
    std::span<const float> xv = x->data();
    std::vector<float> out(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) {
        const float* row = xv.data() + i * cols;
        double m = row[0];
        for (int64_t j = 1; j < cols; ++j) m = std::max(m, double(row[j]));
        double s = 0.0;
        for (int64_t j = 0; j < cols; ++j) s += std::exp(double(row[j]) - m);
        out[static_cast<size_t>(i)] = static_cast<float>(m + std::log(s));
    }
    bool tracked = track(g, {&x});
    TensorPtr y = make_out({rows}, std::move(out), tracked, "logsumexp_rows");
    if (tracked) {
        g.record(y, [x, y, rows, cols]() {
            std::span<const float> gy = y->grad_view();
            std::span<const float> xv = x->data();
            std::span<float> gx = x->grad();
            for (int64_t i = 0; i < rows; ++i) {
                const float* row = xv.data() + i * cols;
                double m = row[0];
                for (int64_t j = 1; j < cols; ++j) m = std::max(m, double(row[j]));
                double s = 0.0;
                for (int64_t j = 0; j < cols; ++j) s += std::exp(double(row[j]) - m);
                double gi = gy[static_cast<size_t>(i)];
                for (int64_t j = 0; j < cols; ++j)
                    gx[static_cast<size_t>(i * cols + j)] +=
                        static_cast<float>(gi * std::exp(double(row[j]) - m) / s);
            }
        });
    }
    return y;
}

TensorPtr transpose(Graph& g, const TensorPtr& x) {
    require_matrix(x, "transpose");
    int64_t rows = x->dim(0), cols = x->dim(1);
    std::span<const float> xv = x->data();
    std::vector<float> out(xv.size());
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j)
            out[static_cast<size_t>(j * rows + i)] = xv[static_cast<size_t>(i * cols + j)];
    bool tracked = track(g, {&x});
    TensorPtr y = make_out({cols, rows}, std::move(out), tracked, "transpose");
    if (tracked) {
        g.record(y, [x, y, rows, cols]() {
            std::span<const float> gy = y->grad_view();
            std::span<float> gx = x->grad();
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < cols; ++j)
                    gx[static_cast<size_t>(i * cols + j)] += gy[static_cast<size_t>(j * rows + i)];
        });
    }
    return y;
}

TensorPtr trace_sum(Graph& g, const TensorPtr& x) {
    require_matrix(x, "trace_sum");
    if (x->dim(0) != x->dim(1)) throw ShapeMismatch("trace_sum: matrix is not square");
    int64_t n = x->dim(0);
    std::span<const float> xv = x->data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += xv[static_cast<size_t>(i * n + i)];
    bool tracked = track(g, {&x});
    TensorPtr y = make_out({1}, {static_cast<float>(acc)}, tracked, "trace_sum");
    if (tracked) {
        g.record(y, [x, y, n]() {
            float gy = y->grad_view()[0];
            std::span<float> gx = x->grad();
            for (int64_t i = 0; i < n; ++i) gx[static_cast<size_t>(i * n + i)] += gy;
        });
    }
    return y;
}

TensorPtr diag_vector(Graph& g, const TensorPtr& x) {
    require_matrix(x, "diag_vector");
    if (x->dim(0) != x->dim(1)) throw ShapeMismatch("diag_vector: matrix is not square");
    int64_t n = x->dim(0);
    std::span<const float> xv = x->data();
    std::vector<float> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = xv[static_cast<size_t>(i * n + i)];
    bool tracked = track(g, {&x});
    TensorPtr y = make_out({n}, std::move(out), tracked, "diag_vector");
    if (tracked) {
        g.record(y, [x, y, n]() {
            std::span<const float> gy = y->grad_view();
            std::span<float> gx = x->grad();
            for (int64_t i = 0; i < n; ++i) gx[static_cast<size_t>(i * n + i)] += gy[static_cast<size_t>(i)];
        });
    }
    return y;
}

TensorPtr cross_entropy(Graph& g, const TensorPtr& logits, const std::vector<int>& labels) {
    require_matrix(logits, "cross_entropy");
    int64_t n = logits->dim(0), c = logits->dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw ShapeMismatch("cross_entropy: label count does not match rows");
    for (int lab : labels)
        if (lab < 0 || lab >= c) throw ShapeMismatch("cross_entropy: label out of range");

    std::span<const float> xv = logits->data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const float* row = xv.data() + i * c;
        double m = row[0];
        for (int64_t j = 1; j < c; ++j) m = std::max(m, double(row[j]));
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) s += std::exp(double(row[j]) - m);
        acc += (m + std::log(s)) - double(row[labels[static_cast<size_t>(i)]]);
    }
    double inv_n = 1.0 / static_cast<double>(n);
    bool tracked = track(g, {&logits});
    TensorPtr y = make_out({1}, {static_cast<float>(acc * inv_n)}, tracked, "cross_entropy");
    if (tracked) {
        auto labs = std::make_shared<std::vector<int>>(labels);
        g.record(y, [logits, y, labs, n, c, inv_n]() {
            double gy = y->grad_view()[0];
            std::span<const float> xv = logits->data();
            std::span<float> gx = logits->grad();
            for (int64_t i = 0; i < n; ++i) {
                const float* row = xv.data() + i * c;
                double m = row[0];
                for (int64_t j = 1; j < c; ++j) m = std::max(m, double(row[j]));
                double s = 0.0;
                for (int64_t j = 0; j < c; ++j) s += std::exp(double(row[j]) - m);
                for (int64_t j = 0; j < c; ++j) {
                    double p = std::exp(double(row[j]) - m) / s;
                    double delta = (j == (*labs)[static_cast<size_t>(i)]) ? 1.0 : 0.0;
                    gx[static_cast<size_t>(i * c + j)] +=
                        static_cast<float>(gy * (p - delta) * inv_n);
                }
            }
        });
    }
    return y;
}

} // namespace ulip::ag
