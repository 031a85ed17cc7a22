#include "vgpl/nn.hpp"

#include <cmath>
#include <cstdio>

namespace vgpl::nn {

Tensor apply_act(const Tensor& x, Act a) {
    switch (a) {
        case Act::None: return x;
        case Act::Relu: return relu(x);
        case Act::Sigmoid: return sigmoid(x);
        case Act::Tanh: return tanh_t(x);
    }
    throw InternalError("unknown activation");
}

static Tensor init_uniform(Shape shape, int fan_in, RngStream& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), -bound, bound, rng);
}

// ---- Mlp ---------------------------------------------------------------------

Mlp::Mlp(ParamStore& store, const std::string& prefix, const std::vector<int>& sizes,
         Act hidden_act, Act out_act, RngStream& rng)
    : sizes_(sizes), hidden_act_(hidden_act), out_act_(out_act) {
    if (sizes.size() < 2) throw ContractViolation("Mlp: need at least input and output sizes");
    for (size_t i = 0; i + 1 < sizes.size(); ++i) {
        const std::string base = prefix + ".l" + std::to_string(i);
        w_.push_back(store.create(base + ".w",
                                  init_uniform({sizes[i + 1], sizes[i]}, sizes[i], rng)));
        b_.push_back(store.create(base + ".b", init_uniform({sizes[i + 1]}, sizes[i], rng)));
    }
}

Mlp::Mlp(ParamStore& store, const std::string& prefix, const std::vector<int>& sizes,
         Act hidden_act, Act out_act)
    : sizes_(sizes), hidden_act_(hidden_act), out_act_(out_act) {
    for (size_t i = 0; i + 1 < sizes.size(); ++i) {
        const std::string base = prefix + ".l" + std::to_string(i);
        w_.push_back(store.get(base + ".w"));
        b_.push_back(store.get(base + ".b"));
    }
}

Tensor Mlp::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != sizes_.front())
        throw ContractViolation("Mlp::forward: input width " +
                                std::to_string(x.rank() == 2 ? x.dim(1) : -1) + " does not match " +
                                std::to_string(sizes_.front()));
    Tensor h = x;
    for (size_t i = 0; i < w_.size(); ++i) {
        h = add_bias(matmul(h, w_[i], false, true), b_[i]);
        h = apply_act(h, i + 1 == w_.size() ? out_act_ : hidden_act_);
    }
    return h;
}

// ---- GRU ----------------------------------------------------------------------

Tensor GruLayer::step(const Tensor& x, const Tensor& h) const {
    Tensor gi = add_bias(matmul(x, w_ih, false, true), b_ih);
    Tensor gh = add_bias(matmul(h, w_hh, false, true), b_hh);
    Tensor r = sigmoid(add(slice_cols(gi, 0, hidden), slice_cols(gh, 0, hidden)));
    Tensor z = sigmoid(add(slice_cols(gi, hidden, hidden), slice_cols(gh, hidden, hidden)));
    Tensor n = tanh_t(
        add(slice_cols(gi, 2 * hidden, hidden), mul(r, slice_cols(gh, 2 * hidden, hidden))));
    // h' = (1-z)*n + z*h
    return add(mul(affine(z, -1.0, 1.0), n), mul(z, h));
}

static GruLayer make_gru_layer(ParamStore& store, const std::string& base, int input, int hidden,
                               RngStream& rng) {
    GruLayer l;
    l.hidden = hidden;
    l.w_ih = store.create(base + ".w_ih", init_uniform({3 * hidden, input}, input, rng));
    l.w_hh = store.create(base + ".w_hh", init_uniform({3 * hidden, hidden}, hidden, rng));
    l.b_ih = store.create(base + ".b_ih", Tensor::zeros({3 * hidden}));
    l.b_hh = store.create(base + ".b_hh", Tensor::zeros({3 * hidden}));
    return l;
}

static GruLayer bind_gru_layer(ParamStore& store, const std::string& base, int hidden) {
    GruLayer l;
    l.hidden = hidden;
    l.w_ih = store.get(base + ".w_ih");
    l.w_hh = store.get(base + ".w_hh");
    l.b_ih = store.get(base + ".b_ih");
    l.b_hh = store.get(base + ".b_hh");
    return l;
}

BiGru::BiGru(ParamStore& store, const std::string& prefix, int input, int hidden, int layers,
             RngStream& rng)
    : input_(input), hidden_(hidden) {
    for (int li = 0; li < layers; ++li) {
        const int in = li == 0 ? input : hidden;
        fw_.push_back(make_gru_layer(store, prefix + ".l" + std::to_string(li) + ".fw", in,
                                     hidden, rng));
        bw_.push_back(make_gru_layer(store, prefix + ".l" + std::to_string(li) + ".bw", in,
                                     hidden, rng));
    }
}

BiGru::BiGru(ParamStore& store, const std::string& prefix, int input, int hidden, int layers)
    : input_(input), hidden_(hidden) {
    for (int li = 0; li < layers; ++li) {
        fw_.push_back(bind_gru_layer(store, prefix + ".l" + std::to_string(li) + ".fw", hidden));
        bw_.push_back(bind_gru_layer(store, prefix + ".l" + std::to_string(li) + ".bw", hidden));
    }
}

Tensor BiGru::forward(const Tensor& xs, int t_steps, int batch) const {
    if (t_steps < 1) throw ContractViolation("BiGru::forward: empty sequence");
    if (xs.rank() != 2 || xs.dim(0) != t_steps * batch || xs.dim(1) != input_)
        throw ContractViolation("BiGru::forward: input must be [T*B, input]");

    auto run_direction = [&](const std::vector<GruLayer>& layers, bool reverse) {
        std::vector<Tensor> seq(static_cast<size_t>(t_steps));
        for (int t = 0; t < t_steps; ++t) seq[static_cast<size_t>(t)] = slice_rows(xs, t * batch, batch);
        for (const auto& layer : layers) {
            Tensor h = Tensor::zeros({batch, hidden_});
            if (!reverse) {
                for (int t = 0; t < t_steps; ++t) {
                    h = layer.step(seq[static_cast<size_t>(t)], h);
                    seq[static_cast<size_t>(t)] = h;
                }
            } else {
                for (int t = t_steps - 1; t >= 0; --t) {
                    h = layer.step(seq[static_cast<size_t>(t)], h);
                    seq[static_cast<size_t>(t)] = h;
                }
            }
        }
        return seq;
    };

    std::vector<Tensor> f = run_direction(fw_, false);
    std::vector<Tensor> b = run_direction(bw_, true);
    std::vector<Tensor> joined(static_cast<size_t>(t_steps));
    for (int t = 0; t < t_steps; ++t)
        joined[static_cast<size_t>(t)] =
            concat_cols({f[static_cast<size_t>(t)], b[static_cast<size_t>(t)]});
    return concat_rows(joined);
}

// ---- ConvBlock ------------------------------------------------------------------

ConvBlock::ConvBlock(ParamStore& store, const std::string& prefix, int c_in, int c_out,
                     RngStream& rng) {
    w_ = store.create(prefix + ".conv.w", init_uniform({c_out, c_in, 3, 3}, c_in * 9, rng));
    gamma_ = store.create(prefix + ".bn.gamma", Tensor::full({c_out}, 1.0));
    beta_ = store.create(prefix + ".bn.beta", Tensor::zeros({c_out}));
    run_mean_ = store.create(prefix + ".bn.run_mean", Tensor::zeros({c_out}), false);
    run_var_ = store.create(prefix + ".bn.run_var", Tensor::full({c_out}, 1.0), false);
}

ConvBlock::ConvBlock(ParamStore& store, const std::string& prefix, int c_in, int c_out) {
    (void)c_in;
    (void)c_out;
    w_ = store.get(prefix + ".conv.w");
    gamma_ = store.get(prefix + ".bn.gamma");
    beta_ = store.get(prefix + ".bn.beta");
    run_mean_ = store.get(prefix + ".bn.run_mean");
    run_var_ = store.get(prefix + ".bn.run_var");
}

Tensor ConvBlock::forward(const Tensor& x, bool training) const {
    if (x.rank() != 4) throw ContractViolation("ConvBlock: input must be [B,C,H,W]");
    if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
        throw ContractViolation("ConvBlock: H and W must be even");
    Tensor h = conv3x3(x, w_);
    h = batch_norm(h, gamma_, beta_, run_mean_, run_var_, training);
    h = relu(h);
    return avg_pool2x2(h);
}

// ---- Adam -----------------------------------------------------------------------

void Adam::step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (const auto& name : params.names()) {
        if (!params.trainable(name)) continue;
        Tensor& p = params.get(name);
        auto git = grads.find(name);
        const Tensor* g = git == grads.end() ? nullptr : &git->second;
        if (!g && !warned_[name]) {
            std::fprintf(stderr, "[adam] no gradient for %s; treating as zero\n", name.c_str());
            warned_[name] = true;
        }
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            mit = m_.emplace(name, Tensor::zeros(p.shape())).first;
            v_.emplace(name, Tensor::zeros(p.shape()));
        }
        Tensor& m = mit->second;
        Tensor& v = v_.at(name);
        double* pm = m.data();
        double* pv = v.data();
        double* pp = p.data();
        for (int64_t i = 0; i < p.numel(); ++i) {
            const double gi = g ? (*g)[i] : 0.0;
            pm[i] = beta1_ * pm[i] + (1.0 - beta1_) * gi;
            pv[i] = beta2_ * pv[i] + (1.0 - beta2_) * gi * gi;
            const double mhat = pm[i] / bc1;
            const double vhat = pv[i] / bc2;
            pp[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace vgpl::nn
