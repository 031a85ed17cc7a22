#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "vgpl/rng.hpp"
#include "vgpl/tensor.hpp"

namespace vgpl::testutil {

// Central finite differences against tape gradients.
//
// `f` maps the inputs to a scalar loss and must be a pure function of them;
// it is called once on a tape and 2*probes times without one. For each input,
// `probes` random coordinates are perturbed by +-h. Relative error uses the
// gradcheck convention: coordinates where both sides are below `floor` pass.
struct FdResult {
    double max_rel_err = 0.0;
    int checked = 0;
};

inline FdResult check_gradients(std::vector<Tensor> inputs,
                                const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                int probes, RngStream& rng, double h = 1e-5,
                                double floor = 1e-7) {
    Tape tape;
    for (auto& t : inputs) tape.watch(t);
    Tensor loss = f(inputs);
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(inputs.size());
    for (auto& t : inputs) grads.push_back(tape.grad(t));

    FdResult res;
    for (size_t k = 0; k < inputs.size(); ++k) {
        for (int p = 0; p < probes; ++p) {
            const int64_t i = static_cast<int64_t>(rng.next_below(
                static_cast<uint64_t>(inputs[k].numel())));
            std::vector<Tensor> plus, minus;
            for (size_t j = 0; j < inputs.size(); ++j) {
                plus.push_back(inputs[j].clone());
                minus.push_back(inputs[j].clone());
            }
            plus[k][i] += h;
            minus[k][i] -= h;
            const double fp = f(plus).item();
            const double fm = f(minus).item();
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = grads[k][i];
            const double denom = std::max(std::abs(ad), std::abs(fd));
            res.checked++;
            if (denom < floor) continue;
            res.max_rel_err = std::max(res.max_rel_err, std::abs(ad - fd) / denom);
        }
    }
    return res;
}

inline Tensor random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor::uniform(std::move(shape), lo, hi, rng);
}

}  // namespace vgpl::testutil
