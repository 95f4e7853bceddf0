#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "cws/losses.hpp"
#include "cws/nn.hpp"
#include "cws/optim.hpp"
#include "cws/rng.hpp"

using namespace cws;

namespace {

// scalar-loop oracle for the documented base loss:
// 0.5 * [ (1 - (2*sum(pg)+1)/(sum(p)+sum(g)+1)) + BCE(p, g, eps=1e-7) ]
double seg_loss_oracle(const Tensor& p, const Tensor& g) {
    double inter = 0, sp = 0, sg = 0, bce = 0;
    for (int64_t i = 0; i < p.numel(); ++i) {
        inter += p[i] * g[i];
        sp += p[i];
        sg += g[i];
        bce += g[i] * std::log(p[i] + 1e-7) + (1.0 - g[i]) * std::log(1.0 - p[i] + 1e-7);
    }
    double dice = 1.0 - (2.0 * inter + 1.0) / (sp + sg + 1.0);
    return 0.5 * (dice - bce / static_cast<double>(p.numel()));
}

}  // namespace

TEST_CASE("seg_loss is near zero for a perfect hard prediction") {
    Tensor gt(Shape{1, 1, 4, 4});
    for (int i = 0; i < 8; ++i) gt[i] = 1.0;
    CHECK(seg_loss(constant(gt), constant(gt)).value()[0] < 1e-5);
}

TEST_CASE("seg_loss is near its maximum for an inverted prediction") {
    Tensor gt(Shape{1, 1, 4, 4});
    for (int i = 0; i < 8; ++i) gt[i] = 1.0;
    Tensor inv(Shape{1, 1, 4, 4});
    for (int i = 0; i < 16; ++i) inv[i] = 1.0 - gt[i];
    double loss = seg_loss(constant(inv), constant(gt)).value()[0];
    // dice ~ 1, bce ~ -log(1e-7) ~ 16.1; mean ~ 8.5
    CHECK(loss > 8.0);
}

TEST_CASE("seg_loss of a flat 0.5 prediction matches the closed form") {
    Tensor gt(Shape{1, 1, 4, 4});
    for (int i = 0; i < 8; ++i) gt[i] = 1.0;  // half-positive mask
    Tensor half(Shape{1, 1, 4, 4}, 0.5);
    double got = seg_loss(constant(half), constant(gt)).value()[0];
    CHECK_THAT(got, Catch::Matchers::WithinAbs(seg_loss_oracle(half, gt), 1e-12));
}

TEST_CASE("seg_loss rejects size mismatches") {
    CHECK_THROWS(seg_loss(constant(Tensor(Shape{1, 1, 4, 4})), constant(Tensor(Shape{1, 1, 4, 5}))));
}

TEST_CASE("total_loss composition") {
    auto rng = make_rng(501);
    Tensor gt(Shape{1, 1, 8, 8});
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) gt.at4(0, 0, y, x) = 1.0;
    Var gtv = constant(gt);

    Tensor main = rand_uniform(Shape{1, 1, 8, 8}, rng, 0.01, 0.99);
    Tensor c1 = rand_uniform(Shape{1, 1, 8, 8}, rng, 0.01, 0.99);
    Tensor c2 = rand_uniform(Shape{1, 1, 8, 8}, rng, 0.01, 0.99);

    SECTION("zero companions, zero edge weight reduces to seg_loss(main)") {
        DecoderOutput out;
        out.main = constant(main);
        out.edge = constant(Tensor(Shape{1, 1, 8, 8}, 0.5));
        double total = total_loss(out, gtv, 0.0).value()[0];
        CHECK_THAT(total, Catch::Matchers::WithinAbs(seg_loss(constant(main), gtv).value()[0], 1e-12));
    }
    SECTION("summation over companions") {
        DecoderOutput out;
        out.main = constant(main);
        out.companions = {constant(c1), constant(c2)};
        out.edge = constant(Tensor(Shape{1, 1, 8, 8}, 0.5));
        double a = seg_loss(constant(c1), gtv).value()[0];
        double b = seg_loss(constant(c2), gtv).value()[0];
        double c = seg_loss(constant(main), gtv).value()[0];
        CHECK_THAT(total_loss(out, gtv, 0.0).value()[0], Catch::Matchers::WithinAbs(c + a + b, 1e-12));
    }
    SECTION("perfect main, companions and edge give a near-zero total") {
        DecoderOutput out;
        out.main = gtv;
        out.companions = {gtv, gtv};
        out.edge = constant(edge_target(gt));
        CHECK(total_loss(out, gtv, 1.0).value()[0] < 1e-4);
    }
    SECTION("total_loss is nonnegative for random maps") {
        for (int t = 0; t < 10; ++t) {
            DecoderOutput out;
            out.main = constant(rand_uniform(Shape{1, 1, 8, 8}, rng, 0.0, 1.0));
            out.companions = {constant(rand_uniform(Shape{1, 1, 8, 8}, rng, 0.0, 1.0))};
            out.edge = constant(rand_uniform(Shape{1, 1, 8, 8}, rng, 0.0, 1.0));
            CHECK(total_loss(out, gtv, 1.0).value()[0] >= 0.0);
        }
    }
}

TEST_CASE("edge_target is the 3x3 morphological gradient") {
    Tensor gt(Shape{1, 1, 5, 5});
    gt.at4(0, 0, 2, 2) = 1.0;  // single positive pixel
    Tensor e = edge_target(gt);
    // dilation covers the 3x3 neighbourhood, erosion is empty -> gradient = dilation
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) {
            bool near = std::abs(y - 2) <= 1 && std::abs(x - 2) <= 1;
            CHECK(e.at4(0, 0, y, x) == (near ? 1.0 : 0.0));
        }

    // interior of a large solid block has no edge
    Tensor big(Shape{1, 1, 7, 7});
    for (int y = 1; y < 6; ++y)
        for (int x = 1; x < 6; ++x) big.at4(0, 0, y, x) = 1.0;
    Tensor eb = edge_target(big);
    CHECK(eb.at4(0, 0, 3, 3) == 0.0);  // interior
    CHECK(eb.at4(0, 0, 1, 1) == 1.0);  // boundary
}

TEST_CASE("EMA recurrence and fixed point") {
    Var p = parameter(Tensor(Shape{1}, {0.0}));
    EmaState ema({{"p", p}}, 0.9);
    p.value()[0] = 1.0;
    ema.update({{"p", p}});
    // closed-form recurrence oracle, evaluated in the same arithmetic
    CHECK(ema.shadow()[0].second[0] == 0.9 * 0.0 + (1.0 - 0.9) * 1.0);
    CHECK_THAT(ema.shadow()[0].second[0], Catch::Matchers::WithinAbs(0.1, 1e-12));

    // shadow initialised at the parameter stays there under a constant parameter
    Var q = parameter(Tensor(Shape{2}, {3.0, -1.5}));
    EmaState ema2({{"q", q}}, 0.99);
    for (int i = 0; i < 50; ++i) ema2.update({{"q", q}});
    CHECK(ema2.shadow()[0].second[0] == 3.0);
    CHECK(ema2.shadow()[0].second[1] == -1.5);
}

TEST_CASE("EMA converges geometrically toward a constant parameter") {
    Var p = parameter(Tensor(Shape{1}, {5.0}));
    EmaState ema({{"p", p}}, 0.5);
    ema.shadow()[0].second[0] = 0.0;  // any init
    double prev_gap = 5.0;
    for (int i = 0; i < 20; ++i) {
        ema.update({{"p", p}});
        double gap = std::abs(ema.shadow()[0].second[0] - 5.0);
        CHECK(gap <= 0.5 * prev_gap + 1e-15);
        prev_gap = gap;
    }
    CHECK(prev_gap < 1e-5);
}

TEST_CASE("EMA never mutates the live parameters") {
    Var p = parameter(Tensor(Shape{3}, {1.0, 2.0, 3.0}));
    EmaState ema({{"p", p}}, 0.9);
    p.value()[1] = 7.0;
    ema.update({{"p", p}});
    CHECK(p.value()[0] == 1.0);
    CHECK(p.value()[1] == 7.0);
    CHECK(p.value()[2] == 3.0);
}

TEST_CASE("EMA rejects shape changes") {
    Var p = parameter(Tensor(Shape{2}, {1.0, 2.0}));
    EmaState ema({{"p", p}}, 0.9);
    Var q = parameter(Tensor(Shape{3}, {1.0, 2.0, 3.0}));
    CHECK_THROWS(ema.update({{"p", q}}));
    CHECK_THROWS(EmaState({{"p", p}}, 1.5));
}

TEST_CASE("a gradient step decreases the loss on a fixed batch") {
    auto rng = make_rng(503);
    Conv2d conv(2, 1, 3, 1, 1, rng);
    Tensor x = randn(Shape{1, 2, 8, 8}, rng);
    Tensor gt(Shape{1, 1, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x2 = 0; x2 < 4; ++x2) gt.at4(0, 0, y, x2) = 1.0;

    auto loss_fn = [&] { return seg_loss(sigmoid(conv.forward(constant(x))), constant(gt)); };
    AdamWConfig oc;
    oc.lr = 1e-3;
    oc.weight_decay = 0.0;
    AdamW opt(conv.named_parameters(), oc);
    double before = loss_fn().value()[0];
    Var l = loss_fn();
    opt.zero_grad();
    l.backward();
    opt.step();
    double after = loss_fn().value()[0];
    CHECK(after < before);
}

TEST_CASE("AdamW skips non-trainable parameters") {
    auto rng = make_rng(509);
    Var a = parameter(randn(Shape{4}, rng));
    Var b = parameter(randn(Shape{4}, rng));
    b.node()->trainable = false;
    Tensor a0 = a.value(), b0 = b.value();
    AdamWConfig oc;
    oc.lr = 0.1;
    AdamW opt({{"a", a}, {"b", b}}, oc);
    Var loss = sum_all(add(mul(a, a), mul(b, b)));
    opt.zero_grad();
    loss.backward();
    opt.step();
    for (int i = 0; i < 4; ++i) {
        CHECK(a.value()[i] != a0[i]);
        CHECK(b.value()[i] == b0[i]);
    }
}
