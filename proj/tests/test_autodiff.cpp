#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "mood/autodiff.hpp"
#include "mood/nn.hpp"
#include "mood/rng.hpp"

using namespace mood;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Sums a node's elements into a scalar node so any op can be gradient-checked
// through a scalar objective with non-uniform weights.
int weighted_sum(Tape& t, int x, const Tensor& w) {
    const Tensor& xv = t.val(x);
    REQUIRE(int64_t(w.data.size()) == xv.numel());
    Tensor y({1});
    for (int64_t i = 0; i < xv.numel(); ++i) y[0] += xv[i] * w[i];
    return t.emit(std::move(y), {x}, [&t, x, w, id = int(t.size())]() {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(x);
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[0] * w[i];
    });
}

// Checks analytic vs numeric gradients of `build` w.r.t. every input element.
void check_op(const std::function<int(Tape&, std::vector<int>&)>& build,
              std::vector<Tensor> inputs, double tol = 1e-6, double eps = 1e-5) {
    Tape tape;
    std::vector<int> ids;
    for (auto& in : inputs) ids.push_back(tape.leaf(in, true));
    const int out = build(tape, ids);
    REQUIRE(tape.val(out).numel() == 1);
    tape.backward(out);

    gradcheck::ScalarFn f = [&build](const std::vector<Tensor>& ins) {
        Tape t2;
        std::vector<int> ids2;
        for (const auto& in : ins) ids2.push_back(t2.leaf(in, false));
        return t2.val(build(t2, ids2))[0];
    };

    for (size_t w = 0; w < inputs.size(); ++w) {
        const Tensor& g = tape.grad(ids[w]);
        for (int64_t i = 0; i < inputs[w].numel(); ++i) {
            const double num = gradcheck::numeric_partial(f, inputs, int(w), i, eps);
            INFO("input " << w << " element " << i);
            REQUIRE(gradcheck::rel_err(g[i], num) < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise op gradients") {
    Rng rng(11);
    const Tensor w = random_tensor({2, 3}, rng);
    auto mk = [&w](int (*op)(Tape&, int)) {
        return [op, w](Tape& t, std::vector<int>& ids) {
            return weighted_sum(t, op(t, ids[0]), w);
        };
    };
    check_op(mk(&relu), {random_tensor({2, 3}, rng)});
    check_op(mk(&sigmoid), {random_tensor({2, 3}, rng)});
    check_op(mk(&tanh_op), {random_tensor({2, 3}, rng)});
}

TEST_CASE("binary op gradients") {
    Rng rng(12);
    const Tensor w = random_tensor({2, 3}, rng);
    check_op([&w](Tape& t, std::vector<int>& ids) { return weighted_sum(t, add(t, ids[0], ids[1]), w); },
             {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    check_op([&w](Tape& t, std::vector<int>& ids) { return weighted_sum(t, mul(t, ids[0], ids[1]), w); },
             {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    check_op(
        [&w](Tape& t, std::vector<int>& ids) {
            return weighted_sum(t, affine_combine(t, ids[0], 0.3, ids[1], 0.7), w);
        },
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
}

TEST_CASE("broadcast multiply: shapes and gradients") {
    Rng rng(13);
    const Tensor w = random_tensor({2, 2, 2, 2, 2}, rng);
    // Gate over the channel axis.
    check_op(
        [&w](Tape& t, std::vector<int>& ids) {
            return weighted_sum(t, mul_bcast(t, ids[0], ids[1]), w);
        },
        {random_tensor({2, 2, 2, 2, 2}, rng), random_tensor({2, 2, 2, 2, 1}, rng)});
    // Gate over everything but the frame axis.
    check_op(
        [&w](Tape& t, std::vector<int>& ids) {
            return weighted_sum(t, mul_bcast(t, ids[0], ids[1]), w);
        },
        {random_tensor({2, 2, 2, 2, 2}, rng), random_tensor({2, 2, 1, 1, 1}, rng)});
}

TEST_CASE("matmul and bias gradients") {
    Rng rng(14);
    const Tensor w = random_tensor({3, 4}, rng);
    check_op(
        [&w](Tape& t, std::vector<int>& ids) {
            return weighted_sum(t, add_bias(t, matmul(t, ids[0], ids[1]), ids[2]), w);
        },
        {random_tensor({3, 5}, rng), random_tensor({5, 4}, rng), random_tensor({4}, rng)});
}

TEST_CASE("conv3d SAME output shape") {
    Tape t;
    Rng rng(15);
    const int x = t.leaf(random_tensor({1, 5, 32, 32, 3}, rng));
    const int w = t.leaf(random_tensor({3, 3, 3, 3, 16}, rng));
    const int b = t.leaf(Tensor({16}));
    const int y = conv3d(t, x, w, b, 3);
    REQUIRE(t.val(y).shape == std::vector<int>{1, 2, 11, 11, 16});
}

TEST_CASE("conv3d gradients, stride 1 and 3") {
    Rng rng(16);
    for (int stride : {1, 3}) {
        const Tensor wsum = random_tensor({1, (4 + stride - 1) / stride, (5 + stride - 1) / stride,
                                           (5 + stride - 1) / stride, 2},
                                          rng);
        check_op(
            [&wsum, stride](Tape& t, std::vector<int>& ids) {
                return weighted_sum(t, conv3d(t, ids[0], ids[1], ids[2], stride), wsum);
            },
            {random_tensor({1, 4, 5, 5, 2}, rng), random_tensor({3, 3, 3, 2, 2}, rng),
             random_tensor({2}, rng)},
            5e-6);
    }
}

TEST_CASE("avgpool3d SAME semantics and gradients") {
    Rng rng(17);
    Tape t;
    const int x = t.leaf(random_tensor({1, 1, 4, 4, 1}, rng));
    const int y = avgpool3d(t, x, 2);
    REQUIRE(t.val(y).shape == std::vector<int>{1, 1, 2, 2, 1});
    // Partial windows: length-5 axis pools to 3 cells, the last covering
    // only one element.
    Tape t2;
    Tensor line({1, 1, 1, 5, 1});
    for (int i = 0; i < 5; ++i) line[i] = i + 1;
    const int y2 = avgpool3d(t2, t2.leaf(line), 2);
    REQUIRE(t2.val(y2).shape == std::vector<int>{1, 1, 1, 3, 1});
    REQUIRE(t2.val(y2)[0] == Catch::Approx(1.5));
    REQUIRE(t2.val(y2)[1] == Catch::Approx(3.5));
    REQUIRE(t2.val(y2)[2] == Catch::Approx(5.0));

    const Tensor wsum = random_tensor({1, 2, 3, 3, 2}, rng);
    check_op(
        [&wsum](Tape& t3, std::vector<int>& ids) {
            return weighted_sum(t3, avgpool3d(t3, ids[0], 2), wsum);
        },
        {random_tensor({1, 3, 5, 5, 2}, rng)});
}

TEST_CASE("channel pooling ops") {
    Rng rng(18);
    Tape t;
    const Tensor x = random_tensor({1, 2, 3, 3, 4}, rng);
    const int xid = t.leaf(x);
    const int mx = channel_max(t, xid);
    const int av = channel_avg(t, xid);
    REQUIRE(t.val(mx).shape == std::vector<int>{1, 2, 3, 3, 1});
    // max plane dominates avg plane everywhere
    for (int64_t i = 0; i < t.val(mx).numel(); ++i)
        REQUIRE(t.val(mx)[i] >= t.val(av)[i]);

    const Tensor wsum = random_tensor({1, 2, 3, 3, 1}, rng);
    check_op(
        [&wsum](Tape& t2, std::vector<int>& ids) {
            return weighted_sum(t2, channel_max(t2, ids[0]), wsum);
        },
        {x});
    check_op(
        [&wsum](Tape& t2, std::vector<int>& ids) {
            return weighted_sum(t2, channel_avg(t2, ids[0]), wsum);
        },
        {x});
}

TEST_CASE("frame GAP, slicing, stacking, concat gradients") {
    Rng rng(19);
    const Tensor w3 = random_tensor({2, 3, 4}, rng);
    check_op(
        [&w3](Tape& t, std::vector<int>& ids) {
            return weighted_sum(t, frame_gap(t, ids[0]), w3);
        },
        {random_tensor({2, 3, 2, 2, 4}, rng)});

    const Tensor w2 = random_tensor({2, 4}, rng);
    check_op(
        [&w2](Tape& t, std::vector<int>& ids) {
            return weighted_sum(t, slice_time(t, ids[0], 1), w2);
        },
        {random_tensor({2, 3, 4}, rng)});
    check_op(
        [&w2](Tape& t, std::vector<int>& ids) {
            return weighted_sum(t, slice_cols(t, ids[0], 2, 6), w2);
        },
        {random_tensor({2, 7}, rng)});

    const Tensor wstack = random_tensor({2, 2, 3}, rng);
    check_op(
        [&wstack](Tape& t, std::vector<int>& ids) {
            std::vector<int> steps{ids[0], ids[1]};
            return weighted_sum(t, stack_time(t, steps), wstack);
        },
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});

    const Tensor wc = random_tensor({2, 1, 1, 1, 5}, rng);
    check_op(
        [&wc](Tape& t, std::vector<int>& ids) {
            return weighted_sum(t, concat_last(t, ids[0], ids[1]), wc);
        },
        {random_tensor({2, 1, 1, 1, 2}, rng), random_tensor({2, 1, 1, 1, 3}, rng)});
}

TEST_CASE("softmax cross-entropy value and gradient") {
    Tape t;
    Tensor z({2, 3});
    z.at(0, 0) = 0.0;
    z.at(0, 1) = 0.0;
    z.at(0, 2) = 0.0;
    z.at(1, 0) = 5.0;
    z.at(1, 1) = -1.0;
    z.at(1, 2) = 0.5;
    const int zid = t.leaf(z, true);
    const int loss = softmax_cross_entropy(t, zid, {1, 0});
    // First row uniform -> ln 3; second nearly certain on the true class.
    const double expected_row1 = std::log(3.0);
    REQUIRE(t.val(loss)[0] > 0.0);
    Rng rng(20);
    check_op(
        [](Tape& t2, std::vector<int>& ids) {
            return softmax_cross_entropy(t2, ids[0], {1, 0});
        },
        {z});
    Tape t3;
    Tensor uniform({4, 3});
    const int l3 = softmax_cross_entropy(t3, t3.leaf(uniform), {0, 1, 2, 0});
    REQUIRE(t3.val(l3)[0] == Catch::Approx(expected_row1).margin(1e-12));
}

TEST_CASE("distillation KL value and gradient") {
    Rng rng(21);
    Tensor teacher({2, 3});
    softmax_row(random_tensor({3}, rng).data.data(), 3, &teacher.data[0], 2.0);
    softmax_row(random_tensor({3}, rng).data.data(), 3, &teacher.data[3], 2.0);

    // KL(p||q) == 0 when the softened student matches the teacher.
    Tape t;
    Tensor z({2, 3});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) z.at(i, j) = 2.0 * std::log(teacher.at(i, j));
    const int kl0 = distill_kl(t, t.leaf(z), teacher, 2.0);
    REQUIRE(t.val(kl0)[0] == Catch::Approx(0.0).margin(1e-12));

    check_op(
        [&teacher](Tape& t2, std::vector<int>& ids) {
            return distill_kl(t2, ids[0], teacher, 3.0);
        },
        {random_tensor({2, 3}, rng)});
    // T^2 scaling flag multiplies the loss.
    Tape t4;
    const Tensor zr = random_tensor({2, 3}, rng);
    const int a = distill_kl(t4, t4.leaf(zr), teacher, 3.0, false);
    const int b = distill_kl(t4, t4.leaf(zr), teacher, 3.0, true);
    REQUIRE(t4.val(b)[0] == Catch::Approx(9.0 * t4.val(a)[0]));
}

TEST_CASE("batchnorm training and eval gradients") {
    Rng rng(22);
    const Tensor x = random_tensor({4, 3}, rng);
    const Tensor gamma = random_tensor({3}, rng, 0.5, 1.5);
    const Tensor beta = random_tensor({3}, rng);
    const Tensor w = random_tensor({4, 3}, rng);

    for (bool training : {true, false}) {
        check_op(
            [&w, training](Tape& t, std::vector<int>& ids) {
                // Fresh running buffers per call so the forward is pure.
                Tensor rm({3}), rv({3}, 1.0);
                for (int j = 0; j < 3; ++j) rm[j] = 0.1 * j;
                return weighted_sum(
                    t, batchnorm(t, ids[0], ids[1], ids[2], rm, rv, training), w);
            },
            {x, gamma, beta}, 1e-5);
    }
}

TEST_CASE("lstm sequence gradients") {
    Rng rng(23);
    ParamStore ps;
    init_lstm(ps, "l", 3, 4, rng);
    const Tensor x = random_tensor({2, 3, 3}, rng);
    const Tensor w = random_tensor({2, 3, 4}, rng);

    // Analytic.
    Tape tape;
    Binder bind(tape, ps, true);
    const int xid = tape.leaf(x, true);
    const int out = weighted_sum(tape, lstm_seq(tape, bind, "l", xid), w);
    tape.backward(out);

    // Numeric, over the input and a sample of each parameter.
    auto eval = [&ps, &w](const Tensor& xin) {
        ParamStore copy = ps;
        Tape t2;
        Binder b2(t2, copy, false);
        const int id = t2.leaf(xin);
        return t2.val(weighted_sum(t2, lstm_seq(t2, b2, "l", id), w))[0];
    };
    for (int64_t i = 0; i < x.numel(); i += 3) {
        Tensor xp = x;
        xp[i] += 1e-5;
        Tensor xm = x;
        xm[i] -= 1e-5;
        const double num = (eval(xp) - eval(xm)) / 2e-5;
        REQUIRE(gradcheck::rel_err(tape.grad(xid)[i], num) < 1e-5);
    }
    // Parameter gradient, sampled.
    for (const std::string pname : {"l/w", "l/u", "l/b"}) {
        Tape t3;
        Binder b3(t3, ps, true);
        const int x3 = t3.leaf(x);
        const int out3 = weighted_sum(t3, lstm_seq(t3, b3, "l", x3), w);
        t3.backward(out3);
        const Tensor& g = t3.grad(b3.bound().at(pname));
        Tensor& p = ps.param(pname);
        for (int64_t i = 0; i < std::min<int64_t>(p.numel(), 6); ++i) {
            const double save = p[i];
            p[i] = save + 1e-5;
            const double hi = eval(x);
            p[i] = save - 1e-5;
            const double lo = eval(x);
            p[i] = save;
            REQUIRE(gradcheck::rel_err(g[i], (hi - lo) / 2e-5) < 1e-5);
        }
    }
}

TEST_CASE("dropout scales and masks") {
    Rng rng(24);
    Tape t;
    Tensor x({1, 100}, 1.0);
    const int xid = t.leaf(x, true);
    Rng drop(99);
    const int y = dropout(t, xid, 0.4, &drop, true);
    int zeros = 0;
    for (int64_t i = 0; i < 100; ++i) {
        const double v = t.val(y)[i];
        REQUIRE((v == 0.0 || v == Catch::Approx(1.0 / 0.6)));
        if (v == 0.0) ++zeros;
    }
    REQUIRE(zeros > 10);
    REQUIRE(zeros < 80);
    // Eval mode: identity node (no copy).
    const int y2 = dropout(t, xid, 0.4, nullptr, false);
    REQUIRE(y2 == xid);
}
