#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vgpl/errors.hpp"

namespace vgpl {

class Tape;
class RngStream;

using Shape = std::vector<int>;

int64_t numel_of(const Shape& s);

/// 64-byte aligned allocator so BLAS kernel selection (and therefore
/// bit-level output) is identical from run to run.
template <typename T>
struct AlignedAlloc {
    using value_type = T;
    AlignedAlloc() = default;
    template <typename U>
    AlignedAlloc(const AlignedAlloc<U>&) {}
    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(64)));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(64)); }
    bool operator==(const AlignedAlloc&) const { return true; }
};

using Buffer = std::vector<double, AlignedAlloc<double>>;

struct TensorData {
    Shape shape;
    Buffer values;
    bool requires_grad = false;
    Tape* tape = nullptr;  // non-null while participating in a recording
    int node = -1;         // id of the tape node that produced this tensor
};

/// Row-major 64-bit float tensor with value semantics (cheap shared handle).
/// A default-constructed Tensor is empty and unusable except for assignment.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value) { return full({1}, value); }
    static Tensor from(std::vector<double> values, Shape shape);
    /// Uniform in [lo, hi), drawn in row-major order from `rng`.
    static Tensor uniform(Shape shape, double lo, double hi, RngStream& rng);

    const Shape& shape() const { return d_->shape; }
    int dim(int i) const { return d_->shape.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }
    bool defined() const { return d_ != nullptr; }

    const double* data() const { return d_->values.data(); }
    double* data() { return d_->values.data(); }
    const Buffer& values() const { return d_->values; }
    Buffer& values() { return d_->values; }

    double operator[](int64_t i) const { return d_->values[static_cast<size_t>(i)]; }
    double& operator[](int64_t i) { return d_->values[static_cast<size_t>(i)]; }

    /// Value of a scalar tensor.
    double item() const;

    bool requires_grad() const { return d_->requires_grad; }
    Tape* tape() const { return d_ ? d_->tape : nullptr; }
    int node() const { return d_ ? d_->node : -1; }

    /// Deep copy detached from any tape.
    Tensor clone() const;

    /// Same storage under a new shape (numel must match). Records on tape.
    Tensor reshape(Shape shape) const;

    TensorData* raw() const { return d_.get(); }

private:
    friend class Tape;
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
};

enum class Op : uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    MulScalarT,
    DivScalarT,
    Affine,
    AddBias,
    Matmul,
    Relu,
    Sigmoid,
    Tanh,
    Sqrt,
    Exp,
    Log,
    Softmax,
    LogSoftmax,
    ConcatCols,
    ConcatRows,
    SliceCols,
    SliceRows,
    GatherRows,
    GatherPerRow,
    SegmentSum,
    SegmentMean,
    SumAll,
    MeanAll,
    MeanRows,
    MseLoss,
    L1Loss,
    Conv3x3,
    AvgPool2x2,
    BatchNorm,
    Reshape,
};

/// Reverse-mode recording of tensor operations. Nodes are appended in
/// execution order, which is already a topological order; backward walks the
/// list once in reverse. Single-writer: one tape per training step.
class Tape {
public:
    struct Node {
        Op op;
        std::vector<int> inputs;    // node ids; -1 marks a constant input
        std::vector<Tensor> saved;  // values needed by backward
        std::vector<int64_t> iargs;
        std::vector<double> dargs;
        Shape out_shape;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape();

    /// Registers `t` as a differentiable source on this tape.
    void watch(Tensor& t);

    /// Computes d(loss)/d(node) for every node. `loss` must be a scalar
    /// recorded on this tape. May be called repeatedly; each call recomputes
    /// from scratch and yields identical results.
    void backward(const Tensor& loss);

    /// Gradient of `t` from the last backward() call. Zeros if `t` was never
    /// reached. `t` must live on this tape. Only gradients of watched tensors
    /// are retained; interior node gradients are dropped during the sweep.
    Tensor grad(const Tensor& t) const;

    size_t size() const { return nodes_.size(); }
    const Node& node(int i) const { return nodes_[static_cast<size_t>(i)]; }

    int append(Node n);

private:
    void accumulate(int node_id, const Shape& shape, const double* delta, int64_t n);
    void backward_node(int id);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;  // parallel to nodes_, filled by backward
    std::vector<TensorData*> watched_;
};

// ---- recorded tensor operations -------------------------------------------
// Each op validates shapes, computes eagerly, and appends a node when any
// input participates in a tape. Inputs from different live tapes are a
// contract violation.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// x * s with s a 1-element tensor.
Tensor mul_scalar(const Tensor& x, const Tensor& s);
/// x / s with s a 1-element tensor.
Tensor div_scalar(const Tensor& x, const Tensor& s);
/// a*x + b with compile-time scalars.
Tensor affine(const Tensor& x, double a, double b);
/// rows of x plus bias: x[n,d] + b[d].
Tensor add_bias(const Tensor& x, const Tensor& b);
/// 2-D product with optional transposes: op(a) [m,k] times op(b) [k,n].
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_t(const Tensor& x);
Tensor sqrt_t(const Tensor& x);
Tensor exp_t(const Tensor& x);
Tensor log_t(const Tensor& x);
/// Row-wise softmax over the last dimension of a 2-D tensor.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor slice_rows(const Tensor& x, int start, int len);
/// out[i,:] = x[idx[i],:]; duplicate indices accumulate in backward.
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
/// out[i,0] = x[i, cols[i]].
Tensor gather_per_row(const Tensor& x, const std::vector<int>& cols);
/// out[m,:] = sum of rows with seg[i]==m; seg values in [0,n_segments).
Tensor segment_sum(const Tensor& x, const std::vector<int>& seg, int n_segments);
/// Mean per segment; every segment must be non-empty.
Tensor segment_mean(const Tensor& x, const std::vector<int>& seg, int n_segments);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// Column means: [n,d] -> [1,d].
Tensor mean_rows(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor l1_loss(const Tensor& pred, const Tensor& target);
/// 3x3 convolution, stride 1, zero padding 1: x[B,C,H,W], w[C',C,3,3].
Tensor conv3x3(const Tensor& x, const Tensor& w);
/// 2x2 average pool, stride 2. H and W must be even.
Tensor avg_pool2x2(const Tensor& x);
/// Per-channel batch normalization over (B,H,W). In training mode uses batch
/// statistics and updates running stats in place (momentum 0.1) unless the
/// batch has a single element, in which case it falls back to running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5);

/// softmax followed by cross entropy against integer targets, averaged over
/// rows: mean_i(-log softmax(x)[i, target[i]]).
Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& targets);

class ParamStore;

/// d(loss)/d(entry) for every requires-grad entry of `params`. Entries the
/// loss does not reach get zero gradients. Loss must be scalar.
std::map<std::string, Tensor> backward(const Tensor& loss, const ParamStore& params);

}  // namespace vgpl
