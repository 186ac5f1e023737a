#include <doctest.h>

#include <vector>

#include "fd_check.hpp"
#include "hr3d/losses.hpp"
#include "hr3d/ops.hpp"
#include "hr3d/rng.hpp"

using namespace hr3d;

namespace {

TensorD randu(Rng& rng, const Shape& s, double lo = -1, double hi = 1) {
    return random_fill<double>(rng, Dist::kUniform, lo, hi, s);
}

LabelVolume random_labels(Rng& rng, const Shape& spatial, std::int64_t classes) {
    TensorI l(spatial);
    for (std::int64_t i = 0; i < l.numel(); ++i) l[i] = rng.uniform_int(classes);
    return LabelVolume(l, classes);
}

}  // namespace

TEST_CASE("conv gradients match finite differences, r=1 on 1x5x5x5") {
    Rng rng(50);
    TensorD x = randu(rng, Shape{1, 5, 5, 5});
    TensorD w = randu(rng, Shape{2, 1, 3, 3, 3});
    for (Padding pad : {Padding::kSame, Padding::kValid}) {
        Shape out = conv3d_output_shape(x.shape(), w.shape(), 1, pad);
        TensorD probe = randu(rng, out);
        double err = fd_max_rel_err({x, w}, [&](GraphD& g, const std::vector<GraphD::NodeId>& ids) {
            auto y = op_conv3d(g, ids[0], ids[1], 1, pad);
            return op_weighted_sum(g, y, probe);
        });
        CHECK(err < 1e-6);
    }
}

TEST_CASE("conv gradients match finite differences, r=2 on 1x9x9x9") {
    Rng rng(51);
    TensorD x = randu(rng, Shape{1, 9, 9, 9});
    TensorD w = randu(rng, Shape{1, 1, 3, 3, 3});
    for (Padding pad : {Padding::kSame, Padding::kValid}) {
        Shape out = conv3d_output_shape(x.shape(), w.shape(), 2, pad);
        TensorD probe = randu(rng, out);
        double err = fd_max_rel_err({x, w}, [&](GraphD& g, const std::vector<GraphD::NodeId>& ids) {
            auto y = op_conv3d(g, ids[0], ids[1], 2, pad);
            return op_weighted_sum(g, y, probe);
        });
        CHECK(err < 1e-6);
    }
}

TEST_CASE("pointwise conv gradients match finite differences") {
    Rng rng(52);
    TensorD x = randu(rng, Shape{3, 4, 4, 4});
    TensorD w = randu(rng, Shape{2, 3, 1, 1, 1});
    TensorD probe = randu(rng, Shape{2, 4, 4, 4});
    double err = fd_max_rel_err({x, w}, [&](GraphD& g, const std::vector<GraphD::NodeId>& ids) {
        auto y = op_conv3d(g, ids[0], ids[1], 1, Padding::kSame);
        return op_weighted_sum(g, y, probe);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("zero upstream gradient produces zero conv gradients") {
    Graph g;
    Rng rng(53);
    auto x = g.leaf(random_fill<float>(rng, Dist::kUniform, -1, 1, Shape{2, 5, 5, 5}), true);
    auto w = g.leaf(random_fill<float>(rng, Dist::kUniform, -1, 1, Shape{2, 2, 3, 3, 3}), true);
    auto y = op_conv3d(g, x, w, 1, Padding::kSame);
    auto root = op_weighted_sum(g, y, Tensor(g.value(y).shape()));  // all-zero weighting
    g.backward(root);
    const Tensor& gx = g.grad(x);
    const Tensor& gw = g.grad(w);
    for (std::int64_t i = 0; i < gx.numel(); ++i) CHECK(gx[i] == 0.0f);
    for (std::int64_t i = 0; i < gw.numel(); ++i) CHECK(gw[i] == 0.0f);
}

TEST_CASE("batchnorm gradients match finite differences") {
    Rng rng(54);
    TensorD x = randu(rng, Shape{3, 3, 4, 3}, -2, 2);
    TensorD gamma = randu(rng, Shape{3}, 0.5, 1.5);
    TensorD beta = randu(rng, Shape{3}, -0.5, 0.5);
    TensorD probe = randu(rng, x.shape());
    double err =
        fd_max_rel_err({x, gamma, beta}, [&](GraphD& g, const std::vector<GraphD::NodeId>& ids) {
            auto y = op_batchnorm_train(g, ids[0], ids[1], ids[2], 1e-5);
            return op_weighted_sum(g, y, probe);
        });
    CHECK(err < 1e-4);
}

TEST_CASE("dropout gradients match finite differences with a pinned mask") {
    Rng rng(55);
    TensorD x = randu(rng, Shape{2, 4, 4, 4});
    TensorD probe = randu(rng, x.shape());
    double err = fd_max_rel_err({x}, [&](GraphD& g, const std::vector<GraphD::NodeId>& ids) {
        Rng mask_rng(909);  // same mask on every rebuild
        auto y = op_dropout(g, ids[0], 0.5, mask_rng);
        return op_weighted_sum(g, y, probe);
    });
    CHECK(err < 1e-8);
}

TEST_CASE("softmax gradients match finite differences") {
    Rng rng(56);
    TensorD x = randu(rng, Shape{4, 3, 3, 3}, -3, 3);
    TensorD probe = randu(rng, x.shape());
    double err = fd_max_rel_err({x}, [&](GraphD& g, const std::vector<GraphD::NodeId>& ids) {
        auto y = op_softmax_channels(g, ids[0]);
        return op_weighted_sum(g, y, probe);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("pad_channels gradients match finite differences") {
    Rng rng(57);
    TensorD x = randu(rng, Shape{2, 3, 3, 3});
    TensorD probe = randu(rng, Shape{4, 3, 3, 3});
    double err = fd_max_rel_err({x}, [&](GraphD& g, const std::vector<GraphD::NodeId>& ids) {
        auto y = op_pad_channels(g, ids[0], 4);
        return op_weighted_sum(g, y, probe);
    });
    CHECK(err < 1e-8);
}

TEST_CASE("cross-entropy gradient through softmax matches finite differences") {
    Rng rng(58);
    TensorD logits = randu(rng, Shape{3, 3, 3, 3}, -2, 2);
    LabelVolume truth = random_labels(rng, Shape{3, 3, 3}, 3);
    double err = fd_max_rel_err({logits}, [&](GraphD& g, const std::vector<GraphD::NodeId>& ids) {
        auto p = op_softmax_channels(g, ids[0]);
        return op_cross_entropy(g, p, truth);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("dice loss gradient through softmax matches finite differences") {
    Rng rng(59);
    TensorD logits = randu(rng, Shape{3, 4, 3, 3}, -2, 2);
    LabelVolume truth = random_labels(rng, Shape{4, 3, 3}, 3);
    for (DiceMode mode : {DiceMode::kExcludeAbsent, DiceMode::kSmooth}) {
        double err = fd_max_rel_err({logits}, [&](GraphD& g, const std::vector<GraphD::NodeId>& ids) {
            auto p = op_softmax_channels(g, ids[0]);
            return op_dice_loss(g, p, truth, mode);
        });
        CHECK(err < 1e-5);
    }
}

TEST_CASE("dice loss with an absent class keeps that channel's gradient at zero") {
    Rng rng(60);
    TensorD logits = randu(rng, Shape{4, 3, 3, 3}, -1, 1);
    TensorI l(Shape{3, 3, 3});
    for (std::int64_t i = 0; i < l.numel(); ++i) l[i] = rng.uniform_int(3);  // class 3 never used
    LabelVolume truth(l, 4);

    GraphD g;
    auto scores = g.leaf(softmax_channels(logits), true);
    auto loss = op_dice_loss(g, scores, truth, DiceMode::kExcludeAbsent);
    g.backward(loss);
    const TensorD& gs = g.grad(scores);
    const std::int64_t n = 27;
    for (std::int64_t v = 0; v < n; ++v) CHECK(gs[3 * n + v] == 0.0);
    // and some active-class gradient must be nonzero
    double mass = 0;
    for (std::int64_t i = 0; i < 3 * n; ++i) mass += std::abs(gs[i]);
    CHECK(mass > 0.0);
}

TEST_CASE("a residual micro-network passes finite differences end to end") {
    // conv(1->2) ; block A: BN-ReLU-conv(2->3, r=1) BN-ReLU-conv(3->3, r=1), padded skip;
    // block B: same at r=2 with identity skip; 1x1x1 classifier -> softmax -> dice.
    Rng rng(61);
    TensorD x_in = randu(rng, Shape{1, 7, 7, 7});
    LabelVolume truth = random_labels(rng, Shape{7, 7, 7}, 2);

    std::vector<TensorD> params;
    params.push_back(randu(rng, Shape{2, 1, 3, 3, 3}, -0.4, 0.4));  // 0 conv in
    params.push_back(random_fill<double>(rng, Dist::kUniform, 0.8, 1.2, Shape{2}));  // 1 gA1
    params.push_back(randu(rng, Shape{2}, -0.1, 0.1));                               // 2 bA1
    params.push_back(randu(rng, Shape{3, 2, 3, 3, 3}, -0.3, 0.3));  // 3 convA1
    params.push_back(random_fill<double>(rng, Dist::kUniform, 0.8, 1.2, Shape{3}));  // 4 gA2
    params.push_back(randu(rng, Shape{3}, -0.1, 0.1));                               // 5 bA2
    params.push_back(randu(rng, Shape{3, 3, 3, 3, 3}, -0.3, 0.3));  // 6 convA2
    params.push_back(random_fill<double>(rng, Dist::kUniform, 0.8, 1.2, Shape{3}));  // 7 gB1
    params.push_back(randu(rng, Shape{3}, -0.1, 0.1));                               // 8 bB1
    params.push_back(randu(rng, Shape{3, 3, 3, 3, 3}, -0.3, 0.3));  // 9 convB1
    params.push_back(random_fill<double>(rng, Dist::kUniform, 0.8, 1.2, Shape{3}));  // 10 gB2
    params.push_back(randu(rng, Shape{3}, -0.1, 0.1));                               // 11 bB2
    params.push_back(randu(rng, Shape{3, 3, 3, 3, 3}, -0.3, 0.3));  // 12 convB2
    params.push_back(randu(rng, Shape{2, 3, 1, 1, 1}, -0.5, 0.5));  // 13 classifier

    auto build = [&](GraphD& g, const std::vector<GraphD::NodeId>& ids) {
        auto x = g.leaf(x_in, false);
        auto h = op_conv3d(g, x, ids[0], 1, Padding::kSame);
        // block A with channel-padded skip
        auto a = op_batchnorm_train(g, h, ids[1], ids[2], 1e-5);
        a = op_relu(g, a);
        a = op_conv3d(g, a, ids[3], 1, Padding::kSame);
        a = op_batchnorm_train(g, a, ids[4], ids[5], 1e-5);
        a = op_relu(g, a);
        a = op_conv3d(g, a, ids[6], 1, Padding::kSame);
        auto merged = op_add(g, a, op_pad_channels(g, h, 3));
        // block B, identity skip, dilation 2
        auto b = op_batchnorm_train(g, merged, ids[7], ids[8], 1e-5);
        b = op_relu(g, b);
        b = op_conv3d(g, b, ids[9], 2, Padding::kSame);
        b = op_batchnorm_train(g, b, ids[10], ids[11], 1e-5);
        b = op_relu(g, b);
        b = op_conv3d(g, b, ids[12], 2, Padding::kSame);
        auto out = op_add(g, b, merged);
        auto logits = op_conv3d(g, out, ids[13], 1, Padding::kSame);
        auto p = op_softmax_channels(g, logits);
        return op_dice_loss(g, p, truth);
    };

    double err = fd_max_rel_err(params, build);
    CHECK(err < 1e-5);
}
