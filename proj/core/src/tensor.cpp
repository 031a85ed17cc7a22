#include "vgpl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>

#include "vgpl/param_store.hpp"
#include "vgpl/rng.hpp"

#ifdef VGPL_USE_BLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

namespace vgpl {

int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw ContractViolation("negative dimension in shape");
        n *= d;
    }
    return n;
}

// ---- Tensor -----------------------------------------------------------------

static std::shared_ptr<TensorData> make_data(Shape shape) {
    auto d = std::make_shared<TensorData>();
    d->values.resize(static_cast<size_t>(numel_of(shape)));
    d->shape = std::move(shape);
    return d;
}

Tensor Tensor::zeros(Shape shape) { return Tensor(make_data(std::move(shape))); }

Tensor Tensor::full(Shape shape, double value) {
    auto d = make_data(std::move(shape));
    std::fill(d->values.begin(), d->values.end(), value);
    return Tensor(d);
}

Tensor Tensor::from(std::vector<double> values, Shape shape) {
    if (static_cast<int64_t>(values.size()) != numel_of(shape))
        throw ContractViolation("Tensor::from: value count does not match shape");
    auto d = make_data(std::move(shape));
    std::copy(values.begin(), values.end(), d->values.begin());
    return Tensor(d);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, RngStream& rng) {
    auto d = make_data(std::move(shape));
    for (auto& v : d->values) v = rng.uniform(lo, hi);
    return Tensor(d);
}

double Tensor::item() const {
    if (numel() != 1) throw ContractViolation("item() on a non-scalar tensor");
    return d_->values[0];
}

Tensor Tensor::clone() const {
    auto d = make_data(d_->shape);
    d->values = d_->values;
    return Tensor(d);
}

// ---- BLAS kernel ------------------------------------------------------------

static void runtime_init_once() {
#ifdef VGPL_USE_BLAS
    static std::once_flag flag;
    std::call_once(flag, [] { openblas_set_num_threads(1); });
#endif
}

// C[m,n] (+)= op_a(A) * op_b(B). Plain buffers, row-major.
static void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b,
                 double* c, bool accumulate) {
    runtime_init_once();
#ifdef VGPL_USE_BLAS
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a, trans_a ? m : k, b,
                trans_b ? k : n, accumulate ? 1.0 : 0.0, c, n);
#else
    if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
            const double av = trans_a ? a[static_cast<size_t>(l) * m + i]
                                      : a[static_cast<size_t>(i) * k + l];
            const double* brow = trans_b ? nullptr : b + static_cast<size_t>(l) * n;
            double* crow = c + static_cast<size_t>(i) * n;
            if (trans_b) {
                for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<size_t>(j) * k + l];
            } else {
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
#endif
}

// ---- Tape -------------------------------------------------------------------

Tape::~Tape() {
    for (TensorData* t : watched_) {
        if (t) {
            t->tape = nullptr;
            t->node = -1;
        }
    }
    for (auto& n : nodes_) {
        for (auto& s : n.saved) {
            if (s.defined() && s.raw()->tape == this) {
                s.raw()->tape = nullptr;
                s.raw()->node = -1;
            }
        }
    }
}

int Tape::append(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::watch(Tensor& t) {
    if (!t.defined()) throw ContractViolation("watch() on an empty tensor");
    TensorData* d = t.raw();
    if (d->tape == this && d->node >= 0) return;
    if (d->tape != nullptr && d->tape != this)
        throw ContractViolation("tensor already recorded on another tape");
    Node n;
    n.op = Op::Leaf;
    n.out_shape = d->shape;
    d->tape = this;
    d->node = append(std::move(n));
    d->requires_grad = true;
    watched_.push_back(d);
}

void Tape::accumulate(int node_id, const Shape& shape, const double* delta, int64_t n) {
    if (node_id < 0) return;
    Tensor& g = grads_[static_cast<size_t>(node_id)];
    if (!g.defined()) g = Tensor::zeros(shape);
    double* p = g.data();
    for (int64_t i = 0; i < n; ++i) p[i] += delta[i];
}

Tensor Tape::grad(const Tensor& t) const {
    if (t.tape() != this || t.node() < 0)
        throw ContractViolation("grad() of a tensor not on this tape");
    if (grads_.empty() || !grads_[static_cast<size_t>(t.node())].defined())
        return Tensor::zeros(t.shape());
    return grads_[static_cast<size_t>(t.node())].clone();
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractViolation("backward: loss must be a scalar tensor");
    if (loss.tape() != this || loss.node() < 0)
        throw ContractViolation("backward: loss is not recorded on this tape");
    grads_.assign(nodes_.size(), Tensor());
    grads_[static_cast<size_t>(loss.node())] = Tensor::full(loss.shape(), 1.0);
    for (int id = loss.node(); id >= 0; --id) {
        if (!grads_[static_cast<size_t>(id)].defined()) continue;
        if (nodes_[static_cast<size_t>(id)].op != Op::Leaf) {
            backward_node(id);
            // interior gradients are fully consumed once the sweep passes them;
            // only leaf gradients remain queryable via grad()
            grads_[static_cast<size_t>(id)] = Tensor();
        }
    }
}

// ---- op plumbing -------------------------------------------------------------

namespace {

Tape* merge_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (!t->defined()) throw ContractViolation("operation on an empty tensor");
        Tape* tt = t->tape();
        if (!tt) continue;
        if (tape && tape != tt) throw ContractViolation("inputs recorded on different tapes");
        tape = tt;
    }
    return tape;
}

struct Rec {
    Tape* tape;
    Tape::Node node;
    Rec(Op op, std::initializer_list<const Tensor*> inputs) : tape(merge_tape(inputs)) {
        node.op = op;
        if (tape) {
            for (const Tensor* t : inputs) node.inputs.push_back(t->node());
        }
    }
    void save(const Tensor& t) {
        if (tape) node.saved.push_back(t);
    }
    Tensor finish(Tensor out) {
        if (tape) {
            node.out_shape = out.shape();
            out.raw()->tape = tape;
            out.raw()->node = tape->append(std::move(node));
        }
        return out;
    }
};

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ContractViolation(std::string(what) + ": shape mismatch");
}

int rows_of(const Tensor& t) {
    if (t.rank() != 2) throw ContractViolation("expected a 2-D tensor");
    return t.dim(0);
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Rec rec(Op::Add, {&a, &b});
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    return rec.finish(std::move(out));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Rec rec(Op::Sub, {&a, &b});
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return rec.finish(std::move(out));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Rec rec(Op::Mul, {&a, &b});
    rec.save(a);
    rec.save(b);
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    return rec.finish(std::move(out));
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw ContractViolation("mul_scalar: s must have one element");
    Rec rec(Op::MulScalarT, {&x, &s});
    rec.save(x);
    rec.save(s);
    Tensor out = Tensor::zeros(x.shape());
    const double sv = s[0];
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] * sv;
    return rec.finish(std::move(out));
}

Tensor div_scalar(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw ContractViolation("div_scalar: s must have one element");
    Rec rec(Op::DivScalarT, {&x, &s});
    rec.save(x);
    rec.save(s);
    Tensor out = Tensor::zeros(x.shape());
    const double sv = s[0];
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] / sv;
    return rec.finish(std::move(out));
}

Tensor affine(const Tensor& x, double a, double b) {
    Rec rec(Op::Affine, {&x});
    rec.node.dargs = {a, b};
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = a * x[i] + b;
    return rec.finish(std::move(out));
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    const int n = rows_of(x);
    const int d = x.dim(1);
    if (b.numel() != d) throw ContractViolation("add_bias: bias length mismatch");
    Rec rec(Op::AddBias, {&x, &b});
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            out[static_cast<int64_t>(i) * d + j] = x[static_cast<int64_t>(i) * d + j] + b[j];
    return rec.finish(std::move(out));
}

// ---- matmul -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    if (a.rank() != 2 || b.rank() != 2) throw ContractViolation("matmul: 2-D tensors required");
    const int m = trans_a ? a.dim(1) : a.dim(0);
    const int ka = trans_a ? a.dim(0) : a.dim(1);
    const int kb = trans_b ? b.dim(1) : b.dim(0);
    const int n = trans_b ? b.dim(0) : b.dim(1);
    if (ka != kb) throw ContractViolation("matmul: inner dimensions disagree");
    Rec rec(Op::Matmul, {&a, &b});
    rec.save(a);
    rec.save(b);
    rec.node.iargs = {trans_a ? 1 : 0, trans_b ? 1 : 0};
    Tensor out = Tensor::zeros({m, n});
    gemm(trans_a, trans_b, m, n, ka, a.data(), b.data(), out.data(), false);
    return rec.finish(std::move(out));
}

// ---- unary --------------------------------------------------------------------

Tensor relu(const Tensor& x) {
    Rec rec(Op::Relu, {&x});
    rec.save(x);
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return rec.finish(std::move(out));
}

Tensor sigmoid(const Tensor& x) {
    Rec rec(Op::Sigmoid, {&x});
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    rec.save(out);
    return rec.finish(std::move(out));
}

Tensor tanh_t(const Tensor& x) {
    Rec rec(Op::Tanh, {&x});
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::tanh(x[i]);
    rec.save(out);
    return rec.finish(std::move(out));
}

Tensor sqrt_t(const Tensor& x) {
    Rec rec(Op::Sqrt, {&x});
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::sqrt(x[i]);
    rec.save(out);
    return rec.finish(std::move(out));
}

Tensor exp_t(const Tensor& x) {
    Rec rec(Op::Exp, {&x});
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::exp(x[i]);
    rec.save(out);
    return rec.finish(std::move(out));
}

Tensor log_t(const Tensor& x) {
    Rec rec(Op::Log, {&x});
    rec.save(x);
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::log(x[i]);
    return rec.finish(std::move(out));
}

Tensor softmax(const Tensor& x) {
    const int n = rows_of(x);
    const int d = x.dim(1);
    Rec rec(Op::Softmax, {&x});
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < n; ++i) {
        const double* row = x.data() + static_cast<int64_t>(i) * d;
        double* orow = out.data() + static_cast<int64_t>(i) * d;
        double mx = row[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < d; ++j) sum += (orow[j] = std::exp(row[j] - mx));
        for (int j = 0; j < d; ++j) orow[j] /= sum;
    }
    rec.save(out);
    return rec.finish(std::move(out));
}

Tensor log_softmax(const Tensor& x) {
    const int n = rows_of(x);
    const int d = x.dim(1);
    Rec rec(Op::LogSoftmax, {&x});
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < n; ++i) {
        const double* row = x.data() + static_cast<int64_t>(i) * d;
        double* orow = out.data() + static_cast<int64_t>(i) * d;
        double mx = row[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < d; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        for (int j = 0; j < d; ++j) orow[j] = row[j] - lse;
    }
    rec.save(out);
    return rec.finish(std::move(out));
}

// ---- layout ---------------------------------------------------------------------

Tensor concat_cols(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractViolation("concat_cols: no inputs");
    const int n = rows_of(xs[0]);
    int dtot = 0;
    Tape* tape = nullptr;
    for (const auto& x : xs) {
        if (rows_of(x) != n) throw ContractViolation("concat_cols: row counts differ");
        dtot += x.dim(1);
        Tape* tt = x.tape();
        if (tt) {
            if (tape && tape != tt) throw ContractViolation("inputs recorded on different tapes");
            tape = tt;
        }
    }
    Tensor out = Tensor::zeros({n, dtot});
    int off = 0;
    for (const auto& x : xs) {
        const int d = x.dim(1);
        for (int i = 0; i < n; ++i)
            std::memcpy(out.data() + static_cast<int64_t>(i) * dtot + off,
                        x.data() + static_cast<int64_t>(i) * d, sizeof(double) * d);
        off += d;
    }
    if (tape) {
        Tape::Node node;
        node.op = Op::ConcatCols;
        for (const auto& x : xs) {
            node.inputs.push_back(x.node());
            node.iargs.push_back(x.dim(1));
        }
        node.out_shape = out.shape();
        out.raw()->tape = tape;
        out.raw()->node = tape->append(std::move(node));
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractViolation("concat_rows: no inputs");
    const int d = xs[0].dim(1);
    int ntot = 0;
    Tape* tape = nullptr;
    for (const auto& x : xs) {
        if (x.rank() != 2 || x.dim(1) != d)
            throw ContractViolation("concat_rows: column counts differ");
        ntot += x.dim(0);
        Tape* tt = x.tape();
        if (tt) {
            if (tape && tape != tt) throw ContractViolation("inputs recorded on different tapes");
            tape = tt;
        }
    }
    Tensor out = Tensor::zeros({ntot, d});
    int off = 0;
    for (const auto& x : xs) {
        std::memcpy(out.data() + static_cast<int64_t>(off) * d, x.data(),
                    sizeof(double) * static_cast<size_t>(x.numel()));
        off += x.dim(0);
    }
    if (tape) {
        Tape::Node node;
        node.op = Op::ConcatRows;
        for (const auto& x : xs) {
            node.inputs.push_back(x.node());
            node.iargs.push_back(x.dim(0));
        }
        node.out_shape = out.shape();
        out.raw()->tape = tape;
        out.raw()->node = tape->append(std::move(node));
    }
    return out;
}

Tensor slice_cols(const Tensor& x, int start, int len) {
    const int n = rows_of(x);
    const int d = x.dim(1);
    if (start < 0 || len <= 0 || start + len > d) throw ContractViolation("slice_cols: bad range");
    Rec rec(Op::SliceCols, {&x});
    rec.node.iargs = {start, len, d};
    Tensor out = Tensor::zeros({n, len});
    for (int i = 0; i < n; ++i)
        std::memcpy(out.data() + static_cast<int64_t>(i) * len,
                    x.data() + static_cast<int64_t>(i) * d + start, sizeof(double) * len);
    return rec.finish(std::move(out));
}

Tensor slice_rows(const Tensor& x, int start, int len) {
    const int n = rows_of(x);
    const int d = x.dim(1);
    if (start < 0 || len <= 0 || start + len > n) throw ContractViolation("slice_rows: bad range");
    Rec rec(Op::SliceRows, {&x});
    rec.node.iargs = {start, len, n};
    Tensor out = Tensor::zeros({len, d});
    std::memcpy(out.data(), x.data() + static_cast<int64_t>(start) * d,
                sizeof(double) * static_cast<size_t>(out.numel()));
    return rec.finish(std::move(out));
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    const int n = rows_of(x);
    const int d = x.dim(1);
    Rec rec(Op::GatherRows, {&x});
    rec.node.iargs.assign(idx.begin(), idx.end());
    rec.node.iargs.push_back(n);
    Tensor out = Tensor::zeros({static_cast<int>(idx.size()), d});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= n) throw ContractViolation("gather_rows: index out of range");
        std::memcpy(out.data() + static_cast<int64_t>(i) * d,
                    x.data() + static_cast<int64_t>(idx[i]) * d, sizeof(double) * d);
    }
    return rec.finish(std::move(out));
}

Tensor gather_per_row(const Tensor& x, const std::vector<int>& cols) {
    const int n = rows_of(x);
    const int d = x.dim(1);
    if (static_cast<int>(cols.size()) != n)
        throw ContractViolation("gather_per_row: one column index per row required");
    Rec rec(Op::GatherPerRow, {&x});
    rec.node.iargs.assign(cols.begin(), cols.end());
    rec.node.iargs.push_back(d);
    Tensor out = Tensor::zeros({n, 1});
    for (int i = 0; i < n; ++i) {
        if (cols[i] < 0 || cols[i] >= d)
            throw ContractViolation("gather_per_row: column index out of range");
        out[i] = x[static_cast<int64_t>(i) * d + cols[i]];
    }
    return rec.finish(std::move(out));
}

static void check_segments(const std::vector<int>& seg, int n, int n_segments) {
    if (static_cast<int>(seg.size()) != n)
        throw ContractViolation("segment op: one segment id per row required");
    for (int s : seg)
        if (s < 0 || s >= n_segments) throw ContractViolation("segment op: id out of range");
}

Tensor segment_sum(const Tensor& x, const std::vector<int>& seg, int n_segments) {
    const int n = rows_of(x);
    const int d = x.dim(1);
    check_segments(seg, n, n_segments);
    Rec rec(Op::SegmentSum, {&x});
    rec.node.iargs.assign(seg.begin(), seg.end());
    rec.node.iargs.push_back(n_segments);
    Tensor out = Tensor::zeros({n_segments, d});
    for (int i = 0; i < n; ++i) {
        double* orow = out.data() + static_cast<int64_t>(seg[i]) * d;
        const double* row = x.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] += row[j];
    }
    return rec.finish(std::move(out));
}

Tensor segment_mean(const Tensor& x, const std::vector<int>& seg, int n_segments) {
    const int n = rows_of(x);
    const int d = x.dim(1);
    check_segments(seg, n, n_segments);
    std::vector<int> count(static_cast<size_t>(n_segments), 0);
    for (int s : seg) count[static_cast<size_t>(s)]++;
    for (int m = 0; m < n_segments; ++m)
        if (count[static_cast<size_t>(m)] == 0)
            throw ContractViolation("segment_mean: empty segment " + std::to_string(m));
    Rec rec(Op::SegmentMean, {&x});
    rec.node.iargs.assign(seg.begin(), seg.end());
    rec.node.iargs.push_back(n_segments);
    Tensor out = Tensor::zeros({n_segments, d});
    for (int i = 0; i < n; ++i) {
        double* orow = out.data() + static_cast<int64_t>(seg[i]) * d;
        const double* row = x.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] += row[j];
    }
    for (int m = 0; m < n_segments; ++m) {
        double* orow = out.data() + static_cast<int64_t>(m) * d;
        for (int j = 0; j < d; ++j) orow[j] /= count[static_cast<size_t>(m)];
    }
    return rec.finish(std::move(out));
}

// ---- reductions -----------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    Rec rec(Op::SumAll, {&x});
    rec.save(x);
    double s = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x[i];
    return rec.finish(Tensor::from({s}, {1}));
}

Tensor mean_all(const Tensor& x) {
    Rec rec(Op::MeanAll, {&x});
    if (rec.tape) rec.save(x);
    double s = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x[i];
    return rec.finish(Tensor::from({s / static_cast<double>(x.numel())}, {1}));
}

Tensor mean_rows(const Tensor& x) {
    const int n = rows_of(x);
    const int d = x.dim(1);
    Rec rec(Op::MeanRows, {&x});
    rec.node.iargs = {n, d};
    Tensor out = Tensor::zeros({1, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[j] += x[static_cast<int64_t>(i) * d + j];
    for (int j = 0; j < d; ++j) out[j] /= n;
    return rec.finish(std::move(out));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "mse_loss");
    Rec rec(Op::MseLoss, {&pred, &target});
    rec.save(pred);
    rec.save(target);
    double s = 0.0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const double e = pred[i] - target[i];
        s += e * e;
    }
    return rec.finish(Tensor::from({s / static_cast<double>(pred.numel())}, {1}));
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "l1_loss");
    Rec rec(Op::L1Loss, {&pred, &target});
    rec.save(pred);
    rec.save(target);
    double s = 0.0;
    for (int64_t i = 0; i < pred.numel(); ++i) s += std::abs(pred[i] - target[i]);
    return rec.finish(Tensor::from({s / static_cast<double>(pred.numel())}, {1}));
}

// ---- conv / pool / norm ------------------------------------------------------------

namespace {

void im2col3x3(const double* img, int c_in, int h, int w, double* cols) {
    // cols is [c_in*9, h*w] row-major
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                double* dst = cols + (static_cast<int64_t>(c) * 9 + ky * 3 + kx) * hw;
                const double* src = img + static_cast<int64_t>(c) * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    double* drow = dst + static_cast<int64_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(drow, drow + w, 0.0);
                        continue;
                    }
                    const double* srow = src + static_cast<int64_t>(sy) * w;
                    for (int x = 0; x < w; ++x) {
                        const int sx = x + kx - 1;
                        drow[x] = (sx < 0 || sx >= w) ? 0.0 : srow[sx];
                    }
                }
            }
        }
    }
}

void col2im3x3_accum(const double* cols, int c_in, int h, int w, double* img) {
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const double* src = cols + (static_cast<int64_t>(c) * 9 + ky * 3 + kx) * hw;
                double* dst = img + static_cast<int64_t>(c) * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    const double* srow = src + static_cast<int64_t>(y) * w;
                    double* drow = dst + static_cast<int64_t>(sy) * w;
                    for (int x = 0; x < w; ++x) {
                        const int sx = x + kx - 1;
                        if (sx >= 0 && sx < w) drow[sx] += srow[x];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv3x3(const Tensor& x, const Tensor& w) {
    if (x.rank() != 4) throw ContractViolation("conv3x3: input must be [B,C,H,W]");
    if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3)
        throw ContractViolation("conv3x3: weight must be [C',C,3,3]");
    const int b = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
    if (w.dim(1) != c_in) throw ContractViolation("conv3x3: channel mismatch");
    const int c_out = w.dim(0);
    Rec rec(Op::Conv3x3, {&x, &w});
    rec.save(x);
    rec.save(w);
    Tensor out = Tensor::zeros({b, c_out, h, wd});
    const int64_t hw = static_cast<int64_t>(h) * wd;
    Buffer cols(static_cast<size_t>(c_in) * 9 * hw);
    for (int bi = 0; bi < b; ++bi) {
        im2col3x3(x.data() + static_cast<int64_t>(bi) * c_in * hw, c_in, h, wd, cols.data());
        gemm(false, false, c_out, static_cast<int>(hw), c_in * 9, w.data(), cols.data(),
             out.data() + static_cast<int64_t>(bi) * c_out * hw, false);
    }
    return rec.finish(std::move(out));
}

Tensor avg_pool2x2(const Tensor& x) {
    if (x.rank() != 4) throw ContractViolation("avg_pool2x2: input must be [B,C,H,W]");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) throw ContractViolation("avg_pool2x2: H and W must be even");
    Rec rec(Op::AvgPool2x2, {&x});
    rec.node.iargs = {b, c, h, w};
    const int ho = h / 2, wo = w / 2;
    Tensor out = Tensor::zeros({b, c, ho, wo});
    for (int i = 0; i < b * c; ++i) {
        const double* src = x.data() + static_cast<int64_t>(i) * h * w;
        double* dst = out.data() + static_cast<int64_t>(i) * ho * wo;
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx)
                dst[static_cast<int64_t>(y) * wo + xx] =
                    0.25 * (src[static_cast<int64_t>(2 * y) * w + 2 * xx] +
                            src[static_cast<int64_t>(2 * y) * w + 2 * xx + 1] +
                            src[static_cast<int64_t>(2 * y + 1) * w + 2 * xx] +
                            src[static_cast<int64_t>(2 * y + 1) * w + 2 * xx + 1]);
    }
    return rec.finish(std::move(out));
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps) {
    if (x.rank() != 4) throw ContractViolation("batch_norm: input must be [B,C,H,W]");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
        running_var.numel() != c)
        throw ContractViolation("batch_norm: per-channel parameter length mismatch");
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int64_t n = static_cast<int64_t>(b) * hw;
    const bool use_batch_stats = training && n > 1;

    Tensor mean_used = Tensor::zeros({c});
    Tensor var_used = Tensor::zeros({c});
    if (use_batch_stats) {
        for (int ci = 0; ci < c; ++ci) {
            double s = 0.0;
            for (int bi = 0; bi < b; ++bi) {
                const double* p = x.data() + (static_cast<int64_t>(bi) * c + ci) * hw;
                for (int64_t i = 0; i < hw; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(n);
            double v = 0.0;
            for (int bi = 0; bi < b; ++bi) {
                const double* p = x.data() + (static_cast<int64_t>(bi) * c + ci) * hw;
                for (int64_t i = 0; i < hw; ++i) v += (p[i] - mu) * (p[i] - mu);
            }
            mean_used[ci] = mu;
            var_used[ci] = v / static_cast<double>(n);
            // running stats keep the unbiased variance
            const double unbiased = v / static_cast<double>(n - 1);
            running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mu;
            running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * unbiased;
        }
    } else {
        for (int ci = 0; ci < c; ++ci) {
            mean_used[ci] = running_mean[ci];
            var_used[ci] = running_var[ci];
        }
    }

    Rec rec(Op::BatchNorm, {&x, &gamma, &beta});
    rec.save(x);
    rec.save(gamma);
    rec.save(mean_used);
    rec.save(var_used);
    rec.node.iargs = {use_batch_stats ? 1 : 0, b, c, h, w};
    rec.node.dargs = {eps};

    Tensor out = Tensor::zeros(x.shape());
    for (int ci = 0; ci < c; ++ci) {
        const double inv = 1.0 / std::sqrt(var_used[ci] + eps);
        const double g = gamma[ci], bb = beta[ci], mu = mean_used[ci];
        for (int bi = 0; bi < b; ++bi) {
            const double* p = x.data() + (static_cast<int64_t>(bi) * c + ci) * hw;
            double* o = out.data() + (static_cast<int64_t>(bi) * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) o[i] = g * (p[i] - mu) * inv + bb;
        }
    }
    return rec.finish(std::move(out));
}

Tensor Tensor::reshape(Shape shape) const {
    if (numel_of(shape) != numel()) throw ContractViolation("reshape: element count mismatch");
    Rec rec(Op::Reshape, {this});
    Tensor out = Tensor::zeros(shape);
    out.values() = values();
    return rec.finish(std::move(out));
}

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& targets) {
    Tensor lsm = log_softmax(logits);
    Tensor picked = gather_per_row(lsm, targets);
    return affine(mean_all(picked), -1.0, 0.0);
}

// ---- backward dispatch ----------------------------------------------------------

void Tape::backward_node(int id) {
    Node& nd = nodes_[static_cast<size_t>(id)];
    const Tensor& gy = grads_[static_cast<size_t>(id)];
    const double* dy = gy.data();
    auto in_shape = [&](int slot) -> const Shape& {
        return nodes_[static_cast<size_t>(nd.inputs[static_cast<size_t>(slot)])].out_shape;
    };
    auto acc = [&](int slot, const Tensor& delta) {
        const int nid = nd.inputs[static_cast<size_t>(slot)];
        accumulate(nid, delta.shape(), delta.data(), delta.numel());
    };
    auto wants = [&](int slot) { return nd.inputs[static_cast<size_t>(slot)] >= 0; };

    switch (nd.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            for (int s = 0; s < 2; ++s)
                if (wants(s)) accumulate(nd.inputs[static_cast<size_t>(s)], gy.shape(), dy, gy.numel());
            break;
        }
        case Op::Sub: {
            if (wants(0)) accumulate(nd.inputs[0], gy.shape(), dy, gy.numel());
            if (wants(1)) {
                Tensor d = Tensor::zeros(gy.shape());
                for (int64_t i = 0; i < gy.numel(); ++i) d[i] = -dy[i];
                acc(1, d);
            }
            break;
        }
        case Op::Mul: {
            const Tensor& a = nd.saved[0];
            const Tensor& b = nd.saved[1];
            if (wants(0)) {
                Tensor d = Tensor::zeros(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i) d[i] = dy[i] * b[i];
                acc(0, d);
            }
            if (wants(1)) {
                Tensor d = Tensor::zeros(b.shape());
                for (int64_t i = 0; i < b.numel(); ++i) d[i] = dy[i] * a[i];
                acc(1, d);
            }
            break;
        }
        case Op::MulScalarT: {
            const Tensor& x = nd.saved[0];
            const Tensor& s = nd.saved[1];
            if (wants(0)) {
                Tensor d = Tensor::zeros(x.shape());
                for (int64_t i = 0; i < x.numel(); ++i) d[i] = dy[i] * s[0];
                acc(0, d);
            }
            if (wants(1)) {
                double ds = 0.0;
                for (int64_t i = 0; i < x.numel(); ++i) ds += dy[i] * x[i];
                acc(1, Tensor::from({ds}, {1}));
            }
            break;
        }
        case Op::DivScalarT: {
            const Tensor& x = nd.saved[0];
            const Tensor& s = nd.saved[1];
            const double sv = s[0];
            if (wants(0)) {
                Tensor d = Tensor::zeros(x.shape());
                for (int64_t i = 0; i < x.numel(); ++i) d[i] = dy[i] / sv;
                acc(0, d);
            }
            if (wants(1)) {
                double ds = 0.0;
                for (int64_t i = 0; i < x.numel(); ++i) ds += dy[i] * x[i];
                acc(1, Tensor::from({-ds / (sv * sv)}, {1}));
            }
            break;
        }
        case Op::Affine: {
            if (wants(0)) {
                const double a = nd.dargs[0];
                Tensor d = Tensor::zeros(gy.shape());
                for (int64_t i = 0; i < gy.numel(); ++i) d[i] = a * dy[i];
                acc(0, d);
            }
            break;
        }
        case Op::AddBias: {
            const Shape& xs = in_shape(0);
            const int n = xs[0], d = xs[1];
            if (wants(0)) accumulate(nd.inputs[0], xs, dy, gy.numel());
            if (wants(1)) {
                Tensor db = Tensor::zeros({d});
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) db[j] += dy[static_cast<int64_t>(i) * d + j];
                acc(1, db);
            }
            break;
        }
        case Op::Matmul: {
            const Tensor& a = nd.saved[0];
            const Tensor& b = nd.saved[1];
            const bool ta = nd.iargs[0] != 0, tb = nd.iargs[1] != 0;
            const int m = gy.dim(0), n = gy.dim(1);
            const int k = ta ? a.dim(0) : a.dim(1);
            if (wants(0)) {
                Tensor da = Tensor::zeros(a.shape());
                if (!ta)
                    gemm(false, !tb, m, k, n, dy, b.data(), da.data(), false);
                else
                    gemm(tb, true, k, m, n, b.data(), dy, da.data(), false);
                acc(0, da);
            }
            if (wants(1)) {
                Tensor db = Tensor::zeros(b.shape());
                if (!tb)
                    gemm(!ta, false, k, n, m, a.data(), dy, db.data(), false);
                else
                    gemm(true, ta, n, k, m, dy, a.data(), db.data(), false);
                acc(1, db);
            }
            break;
        }
        case Op::Relu: {
            const Tensor& x = nd.saved[0];
            Tensor d = Tensor::zeros(x.shape());
            for (int64_t i = 0; i < x.numel(); ++i) d[i] = x[i] > 0.0 ? dy[i] : 0.0;
            acc(0, d);
            break;
        }
        case Op::Sigmoid: {
            const Tensor& y = nd.saved[0];
            Tensor d = Tensor::zeros(y.shape());
            for (int64_t i = 0; i < y.numel(); ++i) d[i] = dy[i] * y[i] * (1.0 - y[i]);
            acc(0, d);
            break;
        }
        case Op::Tanh: {
            const Tensor& y = nd.saved[0];
            Tensor d = Tensor::zeros(y.shape());
            for (int64_t i = 0; i < y.numel(); ++i) d[i] = dy[i] * (1.0 - y[i] * y[i]);
            acc(0, d);
            break;
        }
        case Op::Sqrt: {
            const Tensor& y = nd.saved[0];
            Tensor d = Tensor::zeros(y.shape());
            for (int64_t i = 0; i < y.numel(); ++i) d[i] = dy[i] * 0.5 / y[i];
            acc(0, d);
            break;
        }
        case Op::Exp: {
            const Tensor& y = nd.saved[0];
            Tensor d = Tensor::zeros(y.shape());
            for (int64_t i = 0; i < y.numel(); ++i) d[i] = dy[i] * y[i];
            acc(0, d);
            break;
        }
        case Op::Log: {
            const Tensor& x = nd.saved[0];
            Tensor d = Tensor::zeros(x.shape());
            for (int64_t i = 0; i < x.numel(); ++i) d[i] = dy[i] / x[i];
            acc(0, d);
            break;
        }
        case Op::Softmax: {
            const Tensor& y = nd.saved[0];
            const int n = y.dim(0), d = y.dim(1);
            Tensor dx = Tensor::zeros(y.shape());
            for (int i = 0; i < n; ++i) {
                const double* yr = y.data() + static_cast<int64_t>(i) * d;
                const double* gr = dy + static_cast<int64_t>(i) * d;
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += yr[j] * gr[j];
                double* dr = dx.data() + static_cast<int64_t>(i) * d;
                for (int j = 0; j < d; ++j) dr[j] = yr[j] * (gr[j] - dot);
            }
            acc(0, dx);
            break;
        }
        case Op::LogSoftmax: {
            const Tensor& y = nd.saved[0];
            const int n = y.dim(0), d = y.dim(1);
            Tensor dx = Tensor::zeros(y.shape());
            for (int i = 0; i < n; ++i) {
                const double* yr = y.data() + static_cast<int64_t>(i) * d;
                const double* gr = dy + static_cast<int64_t>(i) * d;
                double s = 0.0;
                for (int j = 0; j < d; ++j) s += gr[j];
                double* dr = dx.data() + static_cast<int64_t>(i) * d;
                for (int j = 0; j < d; ++j) dr[j] = gr[j] - std::exp(yr[j]) * s;
            }
            acc(0, dx);
            break;
        }
        case Op::ConcatCols: {
            const int n = nd.out_shape[0];
            const int dtot = nd.out_shape[1];
            int off = 0;
            for (size_t s = 0; s < nd.inputs.size(); ++s) {
                const int d = static_cast<int>(nd.iargs[s]);
                if (nd.inputs[s] >= 0) {
                    Tensor dx = Tensor::zeros({n, d});
                    for (int i = 0; i < n; ++i)
                        std::memcpy(dx.data() + static_cast<int64_t>(i) * d,
                                    dy + static_cast<int64_t>(i) * dtot + off, sizeof(double) * d);
                    accumulate(nd.inputs[s], dx.shape(), dx.data(), dx.numel());
                }
                off += d;
            }
            break;
        }
        case Op::ConcatRows: {
            const int d = nd.out_shape[1];
            int off = 0;
            for (size_t s = 0; s < nd.inputs.size(); ++s) {
                const int n = static_cast<int>(nd.iargs[s]);
                if (nd.inputs[s] >= 0)
                    accumulate(nd.inputs[s], {n, d}, dy + static_cast<int64_t>(off) * d,
                               static_cast<int64_t>(n) * d);
                off += n;
            }
            break;
        }
        case Op::SliceCols: {
            const int start = static_cast<int>(nd.iargs[0]);
            const int len = static_cast<int>(nd.iargs[1]);
            const int d = static_cast<int>(nd.iargs[2]);
            const int n = nd.out_shape[0];
            Tensor dx = Tensor::zeros({n, d});
            for (int i = 0; i < n; ++i)
                std::memcpy(dx.data() + static_cast<int64_t>(i) * d + start,
                            dy + static_cast<int64_t>(i) * len, sizeof(double) * len);
            acc(0, dx);
            break;
        }
        case Op::SliceRows: {
            const int start = static_cast<int>(nd.iargs[0]);
            const int len = static_cast<int>(nd.iargs[1]);
            const int n = static_cast<int>(nd.iargs[2]);
            const int d = nd.out_shape[1];
            Tensor dx = Tensor::zeros({n, d});
            std::memcpy(dx.data() + static_cast<int64_t>(start) * d, dy,
                        sizeof(double) * static_cast<size_t>(len) * d);
            acc(0, dx);
            break;
        }
        case Op::GatherRows: {
            const size_t cnt = nd.iargs.size() - 1;
            const int n = static_cast<int>(nd.iargs[cnt]);
            const int d = nd.out_shape[1];
            Tensor dx = Tensor::zeros({n, d});
            for (size_t i = 0; i < cnt; ++i) {
                double* drow = dx.data() + nd.iargs[i] * d;
                const double* grow = dy + static_cast<int64_t>(i) * d;
                for (int j = 0; j < d; ++j) drow[j] += grow[j];
            }
            acc(0, dx);
            break;
        }
        case Op::GatherPerRow: {
            const size_t cnt = nd.iargs.size() - 1;
            const int d = static_cast<int>(nd.iargs[cnt]);
            Tensor dx = Tensor::zeros({static_cast<int>(cnt), d});
            for (size_t i = 0; i < cnt; ++i)
                dx[static_cast<int64_t>(i) * d + nd.iargs[i]] = dy[i];
            acc(0, dx);
            break;
        }
        case Op::SegmentSum: {
            const size_t cnt = nd.iargs.size() - 1;
            const int d = nd.out_shape[1];
            Tensor dx = Tensor::zeros({static_cast<int>(cnt), d});
            for (size_t i = 0; i < cnt; ++i)
                std::memcpy(dx.data() + static_cast<int64_t>(i) * d, dy + nd.iargs[i] * d,
                            sizeof(double) * d);
            acc(0, dx);
            break;
        }
        case Op::SegmentMean: {
            const size_t cnt = nd.iargs.size() - 1;
            const int m = static_cast<int>(nd.iargs[cnt]);
            const int d = nd.out_shape[1];
            std::vector<double> inv(static_cast<size_t>(m), 0.0);
            for (size_t i = 0; i < cnt; ++i) inv[static_cast<size_t>(nd.iargs[i])] += 1.0;
            for (auto& v : inv) v = 1.0 / v;
            Tensor dx = Tensor::zeros({static_cast<int>(cnt), d});
            for (size_t i = 0; i < cnt; ++i) {
                const double f = inv[static_cast<size_t>(nd.iargs[i])];
                double* drow = dx.data() + static_cast<int64_t>(i) * d;
                const double* grow = dy + nd.iargs[i] * d;
                for (int j = 0; j < d; ++j) drow[j] = f * grow[j];
            }
            acc(0, dx);
            break;
        }
        case Op::SumAll: {
            const Tensor& x = nd.saved[0];
            Tensor dx = Tensor::full(x.shape(), dy[0]);
            acc(0, dx);
            break;
        }
        case Op::MeanAll: {
            const Tensor& x = nd.saved[0];
            Tensor dx = Tensor::full(x.shape(), dy[0] / static_cast<double>(x.numel()));
            acc(0, dx);
            break;
        }
        case Op::MeanRows: {
            const int n = static_cast<int>(nd.iargs[0]);
            const int d = static_cast<int>(nd.iargs[1]);
            Tensor dx = Tensor::zeros({n, d});
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    dx[static_cast<int64_t>(i) * d + j] = dy[j] / static_cast<double>(n);
            acc(0, dx);
            break;
        }
        case Op::MseLoss: {
            const Tensor& a = nd.saved[0];
            const Tensor& b = nd.saved[1];
            const double f = 2.0 * dy[0] / static_cast<double>(a.numel());
            if (wants(0)) {
                Tensor d = Tensor::zeros(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i) d[i] = f * (a[i] - b[i]);
                acc(0, d);
            }
            if (wants(1)) {
                Tensor d = Tensor::zeros(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i) d[i] = -f * (a[i] - b[i]);
                acc(1, d);
            }
            break;
        }
        case Op::L1Loss: {
            const Tensor& a = nd.saved[0];
            const Tensor& b = nd.saved[1];
            const double f = dy[0] / static_cast<double>(a.numel());
            auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
            if (wants(0)) {
                Tensor d = Tensor::zeros(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i) d[i] = f * sgn(a[i] - b[i]);
                acc(0, d);
            }
            if (wants(1)) {
                Tensor d = Tensor::zeros(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i) d[i] = -f * sgn(a[i] - b[i]);
                acc(1, d);
            }
            break;
        }
        case Op::Conv3x3: {
            const Tensor& x = nd.saved[0];
            const Tensor& w = nd.saved[1];
            const int b = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
            const int c_out = w.dim(0);
            const int64_t hw = static_cast<int64_t>(h) * wd;
            Buffer cols(static_cast<size_t>(c_in) * 9 * hw);
            Tensor dw = wants(1) ? Tensor::zeros(w.shape()) : Tensor();
            Tensor dx = wants(0) ? Tensor::zeros(x.shape()) : Tensor();
            Buffer dcols(static_cast<size_t>(c_in) * 9 * hw);
            for (int bi = 0; bi < b; ++bi) {
                const double* dyb = dy + static_cast<int64_t>(bi) * c_out * hw;
                if (wants(1)) {
                    im2col3x3(x.data() + static_cast<int64_t>(bi) * c_in * hw, c_in, h, wd,
                              cols.data());
                    gemm(false, true, c_out, c_in * 9, static_cast<int>(hw), dyb, cols.data(),
                         dw.data(), true);
                }
                if (wants(0)) {
                    gemm(true, false, c_in * 9, static_cast<int>(hw), c_out, w.data(), dyb,
                         dcols.data(), false);
                    col2im3x3_accum(dcols.data(), c_in, h, wd,
                                    dx.data() + static_cast<int64_t>(bi) * c_in * hw);
                }
            }
            if (wants(1)) acc(1, dw);
            if (wants(0)) acc(0, dx);
            break;
        }
        case Op::AvgPool2x2: {
            const int b = static_cast<int>(nd.iargs[0]);
            const int c = static_cast<int>(nd.iargs[1]);
            const int h = static_cast<int>(nd.iargs[2]);
            const int w = static_cast<int>(nd.iargs[3]);
            const int ho = h / 2, wo = w / 2;
            Tensor dx = Tensor::zeros({b, c, h, w});
            for (int i = 0; i < b * c; ++i) {
                const double* g = dy + static_cast<int64_t>(i) * ho * wo;
                double* d = dx.data() + static_cast<int64_t>(i) * h * w;
                for (int y = 0; y < ho; ++y)
                    for (int xx = 0; xx < wo; ++xx) {
                        const double v = 0.25 * g[static_cast<int64_t>(y) * wo + xx];
                        d[static_cast<int64_t>(2 * y) * w + 2 * xx] += v;
                        d[static_cast<int64_t>(2 * y) * w + 2 * xx + 1] += v;
                        d[static_cast<int64_t>(2 * y + 1) * w + 2 * xx] += v;
                        d[static_cast<int64_t>(2 * y + 1) * w + 2 * xx + 1] += v;
                    }
            }
            acc(0, dx);
            break;
        }
        case Op::BatchNorm: {
            const Tensor& x = nd.saved[0];
            const Tensor& gamma = nd.saved[1];
            const Tensor& mu = nd.saved[2];
            const Tensor& var = nd.saved[3];
            const bool batch_stats = nd.iargs[0] != 0;
            const int b = static_cast<int>(nd.iargs[1]);
            const int c = static_cast<int>(nd.iargs[2]);
            const int h = static_cast<int>(nd.iargs[3]);
            const int w = static_cast<int>(nd.iargs[4]);
            const double eps = nd.dargs[0];
            const int64_t hw = static_cast<int64_t>(h) * w;
            const int64_t n = static_cast<int64_t>(b) * hw;
            Tensor dx = wants(0) ? Tensor::zeros(x.shape()) : Tensor();
            Tensor dgamma = Tensor::zeros({c});
            Tensor dbeta = Tensor::zeros({c});
            for (int ci = 0; ci < c; ++ci) {
                const double inv = 1.0 / std::sqrt(var[ci] + eps);
                const double g = gamma[ci];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int bi = 0; bi < b; ++bi) {
                    const double* xp = x.data() + (static_cast<int64_t>(bi) * c + ci) * hw;
                    const double* gp = dy + (static_cast<int64_t>(bi) * c + ci) * hw;
                    for (int64_t i = 0; i < hw; ++i) {
                        sum_dy += gp[i];
                        sum_dy_xhat += gp[i] * (xp[i] - mu[ci]) * inv;
                    }
                }
                dgamma[ci] = sum_dy_xhat;
                dbeta[ci] = sum_dy;
                if (!wants(0)) continue;
                for (int bi = 0; bi < b; ++bi) {
                    const double* xp = x.data() + (static_cast<int64_t>(bi) * c + ci) * hw;
                    const double* gp = dy + (static_cast<int64_t>(bi) * c + ci) * hw;
                    double* dp = dx.data() + (static_cast<int64_t>(bi) * c + ci) * hw;
                    if (batch_stats) {
                        const double nn = static_cast<double>(n);
                        for (int64_t i = 0; i < hw; ++i) {
                            const double xhat = (xp[i] - mu[ci]) * inv;
                            dp[i] = g * inv *
                                    (gp[i] - sum_dy / nn - xhat * sum_dy_xhat / nn);
                        }
                    } else {
                        for (int64_t i = 0; i < hw; ++i) dp[i] = g * inv * gp[i];
                    }
                }
            }
            if (wants(0)) acc(0, dx);
            if (wants(1)) acc(1, dgamma);
            if (wants(2)) acc(2, dbeta);
            break;
        }
        case Op::Reshape: {
            const Shape& xs = in_shape(0);
            accumulate(nd.inputs[0], xs, dy, gy.numel());
            break;
        }
    }
}

std::map<std::string, Tensor> backward(const Tensor& loss, const ParamStore& params) {
    Tape* tape = loss.tape();
    if (!tape) throw ContractViolation("backward: loss was not recorded on a tape");
    tape->backward(loss);
    std::map<std::string, Tensor> out;
    for (const auto& name : params.names()) {
        const Tensor& p = params.get(name);
        if (!params.trainable(name)) continue;
        if (p.tape() == tape && p.node() >= 0)
            out[name] = tape->grad(p);
        else
            out[name] = Tensor::zeros(p.shape());
    }
    return out;
}

}  // namespace vgpl
