#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "vgpl/param_store.hpp"
#include "vgpl/tensor.hpp"

using namespace vgpl;
using testutil::check_gradients;
using testutil::random_tensor;

namespace {
constexpr double kPrimitiveTol = 1e-4;
}

TEST_CASE("backward of x*x at x=3 gives 6") {
    Tape tape;
    Tensor x = Tensor::scalar(3.0);
    tape.watch(x);
    Tensor loss = mul(x, x);
    tape.backward(loss);
    CHECK(tape.grad(x).item() == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape tape;
    Tensor x = Tensor::full({2, 2}, 1.0);
    tape.watch(x);
    Tensor y = relu(x);
    CHECK_THROWS_AS(tape.backward(y), ContractViolation);
}

TEST_CASE("loss independent of a watched tensor gives zero grad") {
    Tape tape;
    Tensor x = Tensor::scalar(2.0);
    Tensor w = Tensor::full({3}, 1.0);
    tape.watch(x);
    tape.watch(w);
    Tensor loss = mul(x, x);
    tape.backward(loss);
    Tensor gw = tape.grad(w);
    for (int i = 0; i < 3; ++i) CHECK(gw[i] == 0.0);
}

TEST_CASE("backward through the paramstore zero-fills unreachable params") {
    ParamStore store;
    store.create("used", Tensor::scalar(1.5));
    store.create("unused", Tensor::full({2}, 0.3));
    Tape tape;
    store.attach_all(tape);
    Tensor loss = mul(store.get("used"), store.get("used"));
    auto grads = vgpl::backward(loss, store);
    CHECK(grads.at("used").item() == doctest::Approx(3.0));
    CHECK(grads.at("unused")[0] == 0.0);
    CHECK(grads.at("unused")[1] == 0.0);
}

TEST_CASE("backward is deterministic across repeated calls") {
    RngStream rng(11);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5, 3}, rng);
    Tape tape;
    tape.watch(a);
    tape.watch(b);
    Tensor loss = mean_all(tanh_t(matmul(a, b)));
    tape.backward(loss);
    Tensor g1 = tape.grad(a);
    tape.backward(loss);
    Tensor g2 = tape.grad(a);
    for (int64_t i = 0; i < g1.numel(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("finite differences: elementwise and matmul primitives") {
    RngStream rng(42);
    SUBCASE("add/sub/mul") {
        auto res = check_gradients(
            {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
            [](const std::vector<Tensor>& in) {
                return mean_all(mul(add(in[0], in[1]), sub(in[0], in[1])));
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("matmul plain") {
        auto res = check_gradients(
            {random_tensor({4, 6}, rng), random_tensor({6, 3}, rng)},
            [](const std::vector<Tensor>& in) { return sum_all(matmul(in[0], in[1])); }, 10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("matmul transposed variants") {
        auto res = check_gradients(
            {random_tensor({6, 4}, rng), random_tensor({6, 3}, rng)},
            [](const std::vector<Tensor>& in) {
                Tensor c = matmul(in[0], in[1], true, false);  // [4,3]
                Tensor d = matmul(c, in[1], false, true);      // [4,6]
                return mean_all(d);
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("mul_scalar and div_scalar") {
        auto res = check_gradients(
            {random_tensor({5, 2}, rng), Tensor::scalar(0.7)},
            [](const std::vector<Tensor>& in) {
                return mean_all(add(mul_scalar(in[0], in[1]), div_scalar(in[0], in[1])));
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("add_bias and affine") {
        auto res = check_gradients(
            {random_tensor({4, 3}, rng), random_tensor({3}, rng)},
            [](const std::vector<Tensor>& in) {
                return mean_all(affine(add_bias(in[0], in[1]), 2.5, -0.25));
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
}

TEST_CASE("finite differences: activations, softmax, reductions, losses") {
    RngStream rng(43);
    SUBCASE("relu/sigmoid/tanh composite") {
        auto res = check_gradients(
            {random_tensor({4, 6}, rng), random_tensor({6, 5}, rng)},
            [](const std::vector<Tensor>& in) {
                Tensor h = relu(matmul(in[0], in[1]));
                h = add(sigmoid(h), tanh_t(h));
                return mean_all(h);
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("sqrt/exp/log") {
        auto res = check_gradients(
            {random_tensor({3, 3}, rng, 0.5, 2.0)},
            [](const std::vector<Tensor>& in) {
                return mean_all(add(sqrt_t(in[0]), log_t(exp_t(in[0]))));
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("softmax") {
        Tensor r = random_tensor({4, 5}, rng);
        auto res = check_gradients(
            {random_tensor({4, 5}, rng)},
            [r](const std::vector<Tensor>& in) { return mean_all(mul(softmax(in[0]), r)); }, 10,
            rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("log_softmax") {
        Tensor r = random_tensor({4, 5}, rng);
        auto res = check_gradients(
            {random_tensor({4, 5}, rng)},
            [r](const std::vector<Tensor>& in) { return mean_all(mul(log_softmax(in[0]), r)); },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("mean/sum/mean_rows") {
        auto res = check_gradients(
            {random_tensor({6, 3}, rng)},
            [](const std::vector<Tensor>& in) {
                Tensor a = mean_rows(in[0]);
                return add(add(mean_all(in[0]), sum_all(a)), mean_all(a));
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("mse and l1 losses") {
        auto res = check_gradients(
            {random_tensor({5, 3}, rng), random_tensor({5, 3}, rng)},
            [](const std::vector<Tensor>& in) {
                return add(mse_loss(in[0], in[1]), l1_loss(in[0], in[1]));
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("cross entropy with logits") {
        std::vector<int> targets = {0, 2, 1, 2};
        auto res = check_gradients(
            {random_tensor({4, 3}, rng)},
            [targets](const std::vector<Tensor>& in) {
                return cross_entropy_with_logits(in[0], targets);
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
}

TEST_CASE("finite differences: layout and segment ops") {
    RngStream rng(44);
    SUBCASE("concat/slice cols and rows") {
        auto res = check_gradients(
            {random_tensor({4, 3}, rng), random_tensor({4, 2}, rng)},
            [](const std::vector<Tensor>& in) {
                Tensor c = concat_cols({in[0], in[1]});
                Tensor r = concat_rows({slice_rows(c, 0, 2), slice_rows(c, 1, 3)});
                return mean_all(mul(slice_cols(r, 1, 3), slice_cols(r, 1, 3)));
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("gather_rows with duplicates") {
        std::vector<int> idx = {0, 2, 2, 1, 3};
        auto res = check_gradients(
            {random_tensor({4, 3}, rng)},
            [idx](const std::vector<Tensor>& in) {
                Tensor g = gather_rows(in[0], idx);
                return mean_all(mul(g, g));
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("gather_per_row") {
        std::vector<int> cols = {1, 0, 2, 1};
        auto res = check_gradients(
            {random_tensor({4, 3}, rng)},
            [cols](const std::vector<Tensor>& in) {
                return mean_all(gather_per_row(in[0], cols));
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("segment sum and mean") {
        std::vector<int> seg = {0, 1, 0, 2, 1, 0};
        auto res = check_gradients(
            {random_tensor({6, 4}, rng)},
            [seg](const std::vector<Tensor>& in) {
                Tensor s = segment_sum(in[0], seg, 3);
                Tensor m = segment_mean(in[0], seg, 3);
                return add(mean_all(mul(s, s)), mean_all(mul(m, m)));
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
    SUBCASE("reshape") {
        auto res = check_gradients(
            {random_tensor({2, 6}, rng)},
            [](const std::vector<Tensor>& in) {
                Tensor r = in[0].reshape({3, 4});
                return mean_all(mul(r, r));
            },
            10, rng);
        CHECK(res.max_rel_err < kPrimitiveTol);
    }
}

TEST_CASE("softmax rows are distributions") {
    RngStream rng(7);
    Tensor x = random_tensor({20, 7}, rng, -5.0, 5.0);
    Tensor y = softmax(x);
    for (int i = 0; i < 20; ++i) {
        double s = 0.0;
        for (int j = 0; j < 7; ++j) {
            const double v = y[static_cast<int64_t>(i) * 7 + j];
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("cross entropy of a one-hot distribution against itself is zero") {
    // -sum_j t_j log p_j with p == t one-hot: the hit term is log 1 = 0.
    std::vector<double> p = {0.0, 1.0, 0.0};
    const double h = -std::log(p[1]);
    CHECK(h == 0.0);
    // and through the logits path: a very peaked softmax approaches 0
    Tensor logits = Tensor::from({-60.0, 60.0, -60.0}, {1, 3});
    Tensor ce = cross_entropy_with_logits(logits, {1});
    CHECK(std::abs(ce.item()) < 1e-12);
}

TEST_CASE("segment_mean equals brute-force per-group averaging up to N=50") {
    RngStream rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(49));
        const int m = 1 + static_cast<int>(rng.next_below(5));
        const int d = 1 + static_cast<int>(rng.next_below(6));
        std::vector<int> seg(static_cast<size_t>(n));
        // ensure every group is hit
        for (int i = 0; i < n; ++i)
            seg[static_cast<size_t>(i)] = i < m ? i : static_cast<int>(rng.next_below(m));
        if (n < m) continue;
        Tensor x = random_tensor({n, d}, rng);
        Tensor got = segment_mean(x, seg, m);
        for (int g = 0; g < m; ++g) {
            for (int j = 0; j < d; ++j) {
                double s = 0.0;
                int c = 0;
                for (int i = 0; i < n; ++i)
                    if (seg[static_cast<size_t>(i)] == g) {
                        s += x[static_cast<int64_t>(i) * d + j];
                        c++;
                    }
                CHECK(got[static_cast<int64_t>(g) * d + j] ==
                      doctest::Approx(s / c).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("segment_mean rejects empty segments") {
    Tensor x = Tensor::full({3, 2}, 1.0);
    std::vector<int> seg = {0, 0, 1};
    CHECK_THROWS_AS(segment_mean(x, seg, 3), ContractViolation);
}

TEST_CASE("mixing two live tapes is rejected") {
    Tape t1, t2;
    Tensor a = Tensor::scalar(1.0);
    Tensor b = Tensor::scalar(2.0);
    t1.watch(a);
    t2.watch(b);
    CHECK_THROWS_AS(add(a, b), ContractViolation);
}
