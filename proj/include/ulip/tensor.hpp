#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ulip/errors.hpp"

namespace ulip::ag {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense float32 tensor (rank 1 or 2 is all the pipeline needs). Values are
// validated finite on construction and at every op boundary. Gradient
// buffers live on the tensor itself and accumulate across backward calls
// until zero_grad().
class Tensor {
  public:
    Tensor(std::vector<int64_t> shape, std::vector<float> data, bool requires_grad);

    static TensorPtr make(std::vector<int64_t> shape, std::vector<float> data,
                          bool requires_grad = false);
    static TensorPtr zeros(std::vector<int64_t> shape, bool requires_grad = false);
    static TensorPtr scalar(float v, bool requires_grad = false);

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }

    std::span<const float> data() const { return data_; }
    std::span<float> data_mut() { return data_; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v) { requires_grad_ = v; }

    bool has_grad() const { return has_grad_; }
    // Gradient buffer, allocated (zero) on first touch.
    std::span<float> grad();
    std::span<const float> grad_view() const;
    void zero_grad();

    // Scalar convenience; requires size() == 1.
    float item() const;

  private:
    std::vector<int64_t> shape_;
    std::vector<float> data_;
    std::vector<float> grad_;
    bool has_grad_ = false;
    bool requires_grad_ = false;
};

// Define-by-run tape. Ops append a node when recording is on and at least
// one input requires grad; backward() walks the tape once in reverse
// insertion order and is then consumed until reset().
class Graph {
  public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return recording_; }
    size_t node_count() const { return nodes_.size(); }

    void record(TensorPtr out, std::function<void()> pull);

    // Seeds d(loss)/d(loss) = 1 and propagates to every reachable input.
    // loss must be a scalar; a second backward without reset() throws.
    void backward(const TensorPtr& loss);

    void reset();

  private:
    struct Node {
        TensorPtr out;
        std::function<void()> pull;
    };
    std::vector<Node> nodes_;
    bool recording_ = true;
    bool consumed_ = false;
};

void check_finite(std::span<const float> values, const char* what);

// ---- differentiable primitives ----

// [m,k] x [k,n] -> [m,n]
TensorPtr matmul(Graph& g, const TensorPtr& a, const TensorPtr& b);
// Dot-product matrix of two row sets: [m,k] x [n,k] -> [m,n]
TensorPtr matmul_nt(Graph& g, const TensorPtr& a, const TensorPtr& b);

TensorPtr add(Graph& g, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Graph& g, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Graph& g, const TensorPtr& a, const TensorPtr& b);

// x * s where s is a 1-element tensor (broadcast over x).
TensorPtr scale_by(Graph& g, const TensorPtr& x, const TensorPtr& s);
TensorPtr scale_const(Graph& g, const TensorPtr& x, float c);

// [n,c] + [c] broadcast over rows.
TensorPtr bias_add(Graph& g, const TensorPtr& x, const TensorPtr& b);

TensorPtr relu(Graph& g, const TensorPtr& x);
TensorPtr exp_op(Graph& g, const TensorPtr& x);
TensorPtr log_op(Graph& g, const TensorPtr& x);

// Max over each block of group_size consecutive rows: [g*p, c] -> [g, c].
// The subgradient routes to the argmax row; ties go to the lowest index.
TensorPtr rowgroup_max(Graph& g, const TensorPtr& x, int64_t group_size);

TensorPtr sum_all(Graph& g, const TensorPtr& x);
TensorPtr mean_all(Graph& g, const TensorPtr& x);

// Row-wise L2 normalization; rank-1 input is treated as a single row.
// Rows with norm <= 1e-12 raise DegenerateEmbedding.
TensorPtr l2_normalize_rows(Graph& g, const TensorPtr& x);

// Stabilized log-sum-exp over each row: [n,m] -> [n].
TensorPtr logsumexp_rows(Graph& g, const TensorPtr& x);

TensorPtr transpose(Graph& g, const TensorPtr& x);

// Sum of the main diagonal of a square matrix -> scalar.
TensorPtr trace_sum(Graph& g, const TensorPtr& x);

// Main diagonal of a square matrix as a vector: [n,n] -> [n].
TensorPtr diag_vector(Graph& g, const TensorPtr& x);

// Mean over rows of -log softmax(logits)[label]: [n,c] + labels -> scalar.
TensorPtr cross_entropy(Graph& g, const TensorPtr& logits, const std::vector<int>& labels);

} // namespace ulip::ag
