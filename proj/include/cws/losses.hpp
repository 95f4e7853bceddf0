#pragma once

#include <stdexcept>

#include "cws/autograd.hpp"
#include "cws/image.hpp"
#include "cws/lawin.hpp"

namespace cws {

// Soft Dice loss with +1 smoothing:
//   1 - (2*sum(p*g) + 1) / (sum(p) + sum(g) + 1)
// The smoothing term makes the perfect all-empty case score 0 rather than 0/0.
inline Var dice_loss(const Var& pred, const Var& gt) {
    Var inter = sum_all(mul(pred, gt));
    Var denom = add(sum_all(pred), sum_all(gt));
    return sub(constant(1.0), div(add_c(mul_c(inter, 2.0), 1.0), add_c(denom, 1.0)));
}

// Binary cross entropy on probabilities with a 1e-7 floor inside the logs:
//   -mean(g*log(p + 1e-7) + (1-g)*log(1 - p + 1e-7))
inline Var bce_loss(const Var& pred, const Var& gt) {
    constexpr double eps = 1e-7;
    Var pos = mul(gt, log(add_c(pred, eps)));
    Var negv = mul(sub(constant(1.0), gt), log(add_c(sub(constant(1.0), pred), eps)));
    return neg(mean_all(add(pos, negv)));
}

inline Tensor mask_to_tensor(const MaskBin& m) {
    Tensor t(Shape{1, 1, m.height, m.width});
    for (int64_t i = 0; i < m.size(); ++i) t[i] = m.data[static_cast<size_t>(i)];
    return t;
}

// Base segmentation loss: mean of soft Dice and BCE.
inline Var seg_loss(const Var& pred, const Var& gt) {
    if (pred.shape() != gt.shape())
        throw std::invalid_argument("seg_loss: prediction " + shape_str(pred.shape()) +
                                    " vs target " + shape_str(gt.shape()));
    return mul_c(add(dice_loss(pred, gt), bce_loss(pred, gt)), 0.5);
}

// Morphological gradient (3x3 dilation minus erosion) of a binary mask; the
// supervision target for the edge head.
inline Tensor edge_target(const Tensor& gt) {
    const Shape& s = gt.shape();
    int N = s[0], H = s[2], W = s[3];
    Tensor out(s);
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double mx = 0.0, mn = 1.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int yy = std::clamp(y + dy, 0, H - 1), xx = std::clamp(x + dx, 0, W - 1);
                        double v = gt.at4(n, 0, yy, xx);
                        mx = std::max(mx, v);
                        mn = std::min(mn, v);
                    }
                out.at4(n, 0, y, x) = mx - mn;
            }
    return out;
}

// Output loss plus the sum of the companion losses plus weighted edge loss.
inline Var total_loss(const DecoderOutput& out, const Var& gt, double edge_weight = 1.0) {
    Var loss = seg_loss(out.main, gt);
    for (const auto& c : out.companions) loss = add(loss, seg_loss(c, gt));
    if (edge_weight != 0.0) {
        Var target = constant(edge_target(gt.value()));
        loss = add(loss, mul_c(seg_loss(out.edge, target), edge_weight));
    }
    return loss;
}

}  // namespace cws
