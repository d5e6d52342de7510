#include <doctest.h>

#include "gradcheck.hpp"
#include "impure/nn.hpp"
#include "impure/rng.hpp"

using namespace impure;
using D = double;
using VarD = ag::Var<D>;

namespace {

Tensor<D> rand_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor<D> t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal() * scale;
    return t;
}

// loss = sum(out .* w) with fixed random w, so every output coordinate
// contributes asymmetrically.
VarD weighted_sum(const VarD& out, const Tensor<D>& w) {
    return ag::sum_all(ag::mul(out, ag::constant(w.clone())));
}

// Checks d(loss)/d(x0) for a graph builder taking a single variable input.
void check_input_grad(const std::function<VarD(const VarD&)>& build, const Tensor<D>& x0,
                      double tol = 1e-6, double h = 1e-5) {
    auto eval = [&](const std::vector<double>& flat) {
        Tensor<D> x(x0.shape(), std::vector<double>(flat));
        auto in = ag::leaf(x, false);
        return build(in)->value[0];
    };
    auto in = ag::leaf(x0.clone(), true);
    auto loss = build(in);
    ag::backward(loss);
    std::vector<size_t> coords;
    Rng pick(42);
    for (int i = 0; i < 25; ++i) coords.push_back(pick.index(static_cast<uint64_t>(x0.numel())));
    double err = testing::max_rel_error(eval, x0.data(), in->grad.data(), coords, h);
    CHECK(err < tol);
}

}  // namespace

TEST_CASE("matmul forward and gradient") {
    Rng rng(1);
    auto a = rand_tensor({3, 4}, rng);
    auto b = rand_tensor({4, 5}, rng);
    auto w = rand_tensor({3, 5}, rng);
    // d/da
    check_input_grad([&](const VarD& x) { return weighted_sum(ag::matmul(x, ag::constant(b.clone())), w); }, a);
    // d/db
    check_input_grad([&](const VarD& x) { return weighted_sum(ag::matmul(ag::constant(a.clone()), x), w); }, b);
}

TEST_CASE("elementwise ops gradient") {
    Rng rng(2);
    auto a = rand_tensor({4, 6}, rng);
    auto b = rand_tensor({4, 6}, rng);
    auto w = rand_tensor({4, 6}, rng);
    check_input_grad([&](const VarD& x) { return weighted_sum(ag::add(x, ag::constant(b.clone())), w); }, a);
    check_input_grad([&](const VarD& x) { return weighted_sum(ag::sub(ag::constant(b.clone()), x), w); }, a);
    check_input_grad([&](const VarD& x) { return weighted_sum(ag::mul(x, ag::constant(b.clone())), w); }, a);
    check_input_grad([&](const VarD& x) { return weighted_sum(ag::scale(x, 1.7), w); }, a);
}

TEST_CASE("bias broadcast gradient") {
    Rng rng(3);
    auto x = rand_tensor({5, 4}, rng);
    auto v = rand_tensor({4}, rng);
    auto w = rand_tensor({5, 4}, rng);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::add_rowvec(in, ag::constant(v.clone())), w); }, x);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::add_rowvec(ag::constant(x.clone()), in), w); }, v);
}

TEST_CASE("activation gradients") {
    Rng rng(4);
    // keep relu inputs away from the kink
    Tensor<D> x({3, 7});
    for (auto& v : x.data()) {
        v = rng.normal();
        if (std::abs(v) < 0.05) v = 0.1;
    }
    auto w = rand_tensor({3, 7}, rng);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::relu(in), w); }, x);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::gelu(in), w); }, x);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::softmax_rows(in), w); }, x);
}

TEST_CASE("layer_norm matches finite differences") {
    Rng rng(5);
    auto x = rand_tensor({4, 8}, rng);
    auto gamma = rand_tensor({8}, rng, 0.5);
    auto beta = rand_tensor({8}, rng, 0.5);
    auto w = rand_tensor({4, 8}, rng);
    check_input_grad(
        [&](const VarD& in) {
            return weighted_sum(ag::layer_norm(in, ag::constant(gamma.clone()), ag::constant(beta.clone())), w);
        },
        x, 1e-5);
    check_input_grad(
        [&](const VarD& in) {
            return weighted_sum(ag::layer_norm(ag::constant(x.clone()), in, ag::constant(beta.clone())), w);
        },
        gamma);
}

TEST_CASE("indexing ops gradient") {
    Rng rng(6);
    auto x = rand_tensor({6, 5}, rng);
    auto w3 = rand_tensor({3, 5}, rng);
    auto w6 = rand_tensor({6, 5}, rng);
    std::vector<int> idx{4, 0, 2};
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::gather_rows(in, idx), w3); }, x);

    auto base = rand_tensor({6, 5}, rng);
    auto rows = rand_tensor({3, 5}, rng);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::scatter_rows(in, ag::constant(rows.clone()), idx), w6); }, base);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::scatter_rows(ag::constant(base.clone()), in, idx), w6); }, rows);

    auto v = rand_tensor({5}, rng);
    auto wslice = rand_tensor({6, 3}, rng);
    auto wtrans = rand_tensor({5, 6}, rng);
    auto wcat = rand_tensor({6, 10}, rng);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::repeat_row(in, 6), w6); }, v);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::slice_cols(in, 1, 3), wslice); }, x);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::transpose(in), wtrans); }, x);
    check_input_grad(
        [&](const VarD& in) {
            std::vector<VarD> parts{in, ag::constant(x.clone())};
            return weighted_sum(ag::concat_cols(parts), wcat);
        },
        x);
}

TEST_CASE("loss ops gradient") {
    Rng rng(7);
    Tensor<D> a({4, 4}), b({4, 4});
    for (auto& v : a.data()) v = rng.normal();
    for (auto& v : b.data()) v = rng.normal();
    // keep |a-b| away from the L1 kink
    for (size_t i = 0; i < a.data().size(); ++i)
        if (std::abs(a.data()[i] - b.data()[i]) < 0.05) a.data()[i] += 0.2;
    check_input_grad([&](const VarD& in) { return ag::l1_diff(in, ag::constant(b.clone())); }, a);
    check_input_grad([&](const VarD& in) { return ag::l1_diff(ag::constant(b.clone()), in); }, a);

    auto logits = rand_tensor({5, 3}, rng);
    std::vector<int> labels{0, 2, 1, 2, 0};
    check_input_grad([&](const VarD& in) { return ag::cross_entropy_mean(in, labels); }, logits);

    Tensor<D> c({3, 3});
    for (auto& v : c.data()) v = rng.uniform(0.05, 0.95);
    auto wc = rand_tensor({3, 3}, rng);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::clamp(in, 0.0, 1.0), wc); }, c);
}

TEST_CASE("conv2d and pooling gradients") {
    Rng rng(8);
    auto x = rand_tensor({6, 6, 3}, rng);
    auto wgt = rand_tensor({3 * 3 * 3, 4}, rng, 0.3);
    auto bias = rand_tensor({4}, rng, 0.1);
    auto w = rand_tensor({6, 6, 4}, rng);
    check_input_grad(
        [&](const VarD& in) {
            return weighted_sum(ag::conv2d(in, ag::constant(wgt.clone()), ag::constant(bias.clone()), 3, 3, 1, 1), w);
        },
        x);
    check_input_grad(
        [&](const VarD& in) {
            return weighted_sum(ag::conv2d(ag::constant(x.clone()), in, ag::constant(bias.clone()), 3, 3, 1, 1), w);
        },
        wgt);
    check_input_grad(
        [&](const VarD& in) {
            return weighted_sum(ag::conv2d(ag::constant(x.clone()), ag::constant(wgt.clone()), in, 3, 3, 1, 1), w);
        },
        bias);

    auto wp = rand_tensor({3, 3, 3}, rng);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::maxpool2(in), wp); }, x);
    auto wg = rand_tensor({1, 3}, rng);
    check_input_grad([&](const VarD& in) { return weighted_sum(ag::global_avg_pool(in), wg); }, x);
}

TEST_CASE("transformer block composite gradient") {
    Rng rng(9);
    nn::ParamStore<D> ps;
    nn::TransformerBlock<D> block(ps, "blk", 8, 2);
    Rng init(11);
    block.init(init);
    // nonzero norms offsets to exercise affine paths
    for (auto& v : block.ln1.beta.data()) v = init.normal() * 0.1;

    auto x0 = rand_tensor({5, 8}, rng);
    auto w = rand_tensor({5, 8}, rng);

    auto run = [&](bool train, const VarD** xout) -> VarD {
        nn::Graph<D> g(train);
        auto x = g.input(x0.clone(), train);
        if (xout) *xout = nullptr;
        auto out = block(g, x);
        return weighted_sum(out, w);
    };

    // gradient wrt input
    {
        nn::Graph<D> g(true);
        auto xin = g.input(x0.clone(), true);
        auto loss = weighted_sum(block(g, xin), w);
        ag::backward(loss);
        auto eval = [&](const std::vector<double>& flat) {
            nn::Graph<D> g2(false);
            auto x = g2.input(Tensor<D>(x0.shape(), std::vector<double>(flat)), false);
            return weighted_sum(block(g2, x), w)->value[0];
        };
        std::vector<size_t> coords;
        Rng pick(13);
        for (int i = 0; i < 20; ++i) coords.push_back(pick.index(static_cast<uint64_t>(x0.numel())));
        CHECK(testing::max_rel_error(eval, x0.data(), xin->grad.data(), coords) < 1e-5);
    }

    // gradient wrt every parameter tensor, via the flat interface
    {
        nn::Graph<D> g(true);
        auto loss = weighted_sum(block(g, g.input(x0.clone(), false)), w);
        ag::backward(loss);
        std::vector<double> grad_flat;
        g.harvest_grads(ps, grad_flat);

        auto backup = ps.flatten_values();
        auto eval = [&](const std::vector<double>& flat) {
            ps.unflatten_values(flat);
            nn::Graph<D> g2(false);
            double v = weighted_sum(block(g2, g2.input(x0.clone(), false)), w)->value[0];
            ps.unflatten_values(backup);
            return v;
        };
        std::vector<size_t> coords;
        Rng pick(17);
        for (int i = 0; i < 40; ++i) coords.push_back(pick.index(static_cast<uint64_t>(backup.size())));
        CHECK(testing::max_rel_error(eval, backup, grad_flat, coords) < 1e-5);
    }
    (void)run;
}

TEST_CASE("sincos position table is fixed and distinct per position") {
    auto t1 = nn::sincos_position_table<D>(4, 4, 16);
    auto t2 = nn::sincos_position_table<D>(4, 4, 16);
    CHECK(t1.data() == t2.data());
    // no two grid positions share an encoding
    for (int i = 0; i < 16; ++i)
        for (int j = i + 1; j < 16; ++j) {
            double d = 0;
            for (int k = 0; k < 16; ++k) d = std::max(d, std::abs(t1[i * 16 + k] - t1[j * 16 + k]));
            CHECK(d > 1e-6);
        }
}

TEST_CASE("adamw determinism and zero-lr no-op") {
    auto build = [](nn::ParamStore<D>& ps) {
        auto& w = ps.add("w", {4});
        Rng r(3);
        for (auto& v : w.data()) v = r.normal();
    };
    nn::ParamStore<D> ps1, ps2;
    build(ps1);
    build(ps2);
    nn::AdamW<D> opt1(ps1, {}), opt2(ps2, {});
    std::vector<double> g{0.5, -0.25, 0.1, 1.0};
    for (int i = 0; i < 5; ++i) {
        opt1.step(1e-3, g);
        opt2.step(1e-3, g);
    }
    CHECK(ps1.get("w").data() == ps2.get("w").data());

    auto before = ps1.get("w").data();
    opt1.step(0.0, g);
    CHECK(ps1.get("w").data() == before);
}
