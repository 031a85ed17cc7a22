#pragma once

#include <string>
#include <vector>

#include "vgpl/param_store.hpp"
#include "vgpl/rng.hpp"
#include "vgpl/tensor.hpp"

namespace vgpl::nn {

enum class Act { None, Relu, Sigmoid, Tanh };

Tensor apply_act(const Tensor& x, Act a);

/// Fully connected stack. Hidden layers use `hidden_act`, the final layer
/// `out_act`. Weights live in the ParamStore under `prefix.l<i>.{w,b}`,
/// initialized uniform in +-1/sqrt(fan_in).
class Mlp {
public:
    Mlp() = default;
    Mlp(ParamStore& store, const std::string& prefix, const std::vector<int>& sizes,
        Act hidden_act, Act out_act, RngStream& rng);
    /// Binds to already-created entries (checkpoint load path).
    Mlp(ParamStore& store, const std::string& prefix, const std::vector<int>& sizes, Act hidden_act,
        Act out_act);

    Tensor forward(const Tensor& x) const;

    int in_size() const { return sizes_.front(); }
    int out_size() const { return sizes_.back(); }

private:
    std::vector<Tensor> w_, b_;
    std::vector<int> sizes_;
    Act hidden_act_ = Act::Relu;
    Act out_act_ = Act::None;
};

/// One GRU direction step: gates in r,z,n order, PyTorch layout.
/// w_ih [3h,in], w_hh [3h,h], b_ih [3h], b_hh [3h].
struct GruLayer {
    Tensor w_ih, w_hh, b_ih, b_hh;
    int hidden = 0;
    Tensor step(const Tensor& x, const Tensor& h) const;
};

/// Bi-directional GRU with `layers` stacked layers per direction. The output
/// at step t concatenates the top-layer forward state (inputs 1..t) with the
/// top-layer backward state (inputs t..T). Initial states are zero.
class BiGru {
public:
    BiGru() = default;
    BiGru(ParamStore& store, const std::string& prefix, int input, int hidden, int layers,
          RngStream& rng);
    BiGru(ParamStore& store, const std::string& prefix, int input, int hidden, int layers);

    /// xs: [T*B, input] with T sequences of batch B -> [T*B, 2*hidden].
    Tensor forward(const Tensor& xs, int t_steps, int batch) const;

    int hidden_size() const { return hidden_; }

private:
    std::vector<GruLayer> fw_, bw_;
    int input_ = 0, hidden_ = 0;
};

/// 3x3 conv (no bias) -> batch norm -> ReLU -> 2x2 average pool.
class ConvBlock {
public:
    ConvBlock() = default;
    ConvBlock(ParamStore& store, const std::string& prefix, int c_in, int c_out, RngStream& rng);
    ConvBlock(ParamStore& store, const std::string& prefix, int c_in, int c_out);

    /// x: [B,C,H,W] with even H,W -> [B,C',H/2,W/2].
    Tensor forward(const Tensor& x, bool training) const;

private:
    Tensor w_, gamma_, beta_;
    mutable Tensor run_mean_, run_var_;
};

/// Bias-corrected Adam over the trainable entries of a ParamStore, updating
/// values in place. Missing gradients are treated as zero (with a one-time
/// warning per parameter name).
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& params, const std::map<std::string, Tensor>& grads);

    int t() const { return t_; }
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::map<std::string, Tensor> m_, v_;
    std::map<std::string, bool> warned_;
};

}  // namespace vgpl::nn
