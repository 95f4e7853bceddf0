#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cws/hardnet.hpp"
#include "cws/nn.hpp"

namespace cws {

struct DecoderConfig {
    int embed_dim = 32;
    int heads = 2;
    std::vector<int> window_ratios = {2, 4, 8};
    int query_patch = 4;
    int mixer_depth = 2;
    int mixer_tokens = 4;  // pooled token grid side for the MLP-Mixer branch
    std::vector<int> spp_bins = {1, 2, 3, 6};
    int companion_stages = 3;

    void validate() const {
        if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
            throw std::invalid_argument("DecoderConfig: embed_dim must be a positive multiple of heads");
        if (window_ratios.empty()) throw std::invalid_argument("DecoderConfig: no window ratios");
        for (int r : window_ratios)
            if (r < 2)
                throw std::invalid_argument("DecoderConfig: window ratio " + std::to_string(r) +
                                            " rejected, context must be larger than the query patch");
        if (query_patch < 1 || mixer_depth < 0 || mixer_tokens < 1)
            throw std::invalid_argument("DecoderConfig: bad query_patch/mixer settings");
        if (spp_bins.empty()) throw std::invalid_argument("DecoderConfig: no SPP bins");
        if (companion_stages < 1 || companion_stages > 3)
            throw std::invalid_argument("DecoderConfig: companion_stages must lie in 1..3");
    }
};

struct DecoderOutput {
    Var main;
    std::vector<Var> companions;
    Var edge;
};

namespace detail {

// reflection padding in steps so pads larger than size-1 work
inline Var reflect_pad_any(Var x, int pl, int pr, int pt, int pb) {
    while (pl > 0 || pr > 0 || pt > 0 || pb > 0) {
        int H = x.shape()[2], W = x.shape()[3];
        int l = std::min(pl, W - 1), r = std::min(pr, W - 1);
        int t = std::min(pt, H - 1), b = std::min(pb, H - 1);
        x = reflect_pad2d(x, l, r, t, b);
        pl -= l;
        pr -= r;
        pt -= t;
        pb -= b;
    }
    return x;
}

}  // namespace detail

// Large-window attention: the feature map is partitioned into query patches;
// each patch attends to a context window `ratio` times larger, average-pooled
// back to the patch size. Output keeps the input shape (residual form).
class LawinAttention : public Module {
public:
    LawinAttention(int dim, int heads, int query_patch, std::mt19937_64& rng)
        : dim_(dim), heads_(heads), qp_(query_patch) {
        wq_ = std::make_unique<Linear>(dim, dim, rng);
        wk_ = std::make_unique<Linear>(dim, dim, rng);
        wv_ = std::make_unique<Linear>(dim, dim, rng);
        wo_ = std::make_unique<Linear>(dim, dim, rng);
        add_child("wq", wq_.get());
        add_child("wk", wk_.get());
        add_child("wv", wv_.get());
        add_child("wo", wo_.get());
    }

    Var forward(const Var& feat, int ratio) {
        if (ratio < 2) throw std::invalid_argument("lawin_attention: ratio must be >= 2");
        if (feat.shape()[1] != dim_) throw std::invalid_argument("lawin_attention: channel mismatch");
        int H = feat.shape()[2], W = feat.shape()[3];
        int Hp = (H + qp_ - 1) / qp_ * qp_, Wp = (W + qp_ - 1) / qp_ * qp_;
        Var x = feat;
        if (Hp != H || Wp != W) x = detail::reflect_pad_any(x, 0, Wp - W, 0, Hp - H);

        int N = x.shape()[0];
        int T = qp_ * qp_;
        int dh = dim_ / heads_;
        int cp = ratio * qp_;
        int pad = (cp - qp_) / 2;

        Var q_patches = unfold_windows(x, qp_, qp_);                     // [B',D,qp,qp]
        Var ctx = detail::reflect_pad_any(x, pad, pad, pad, pad);
        Var c_windows = unfold_windows(ctx, cp, qp_);                    // [B',D,cp,cp]
        Var kv_patches = avg_pool2d(c_windows, ratio, ratio);            // [B',D,qp,qp]
        int B = q_patches.shape()[0];

        auto tokens = [&](const Var& p) {  // [B',D,qp,qp] -> [B'*T, D]
            return reshape(permute(reshape(p, Shape{B, dim_, T}), {0, 2, 1}), Shape{B * T, dim_});
        };
        auto heads_split = [&](const Var& t) {  // [B'*T, D] -> [B'*h, T, dh]
            return reshape(permute(reshape(t, Shape{B, T, heads_, dh}), {0, 2, 1, 3}),
                           Shape{B * heads_, T, dh});
        };
        Var q = heads_split(wq_->forward(tokens(q_patches)));
        Var k = heads_split(wk_->forward(tokens(kv_patches)));
        Var v = heads_split(wv_->forward(tokens(kv_patches)));

        Var scores = mul_c(bmm(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
        Var attn = softmax(scores, 2);
        Var ctx_out = bmm(attn, v);  // [B'*h, T, dh]
        Var merged = reshape(permute(reshape(ctx_out, Shape{B, heads_, T, dh}), {0, 2, 1, 3}),
                             Shape{B * T, dim_});
        Var out_tokens = wo_->forward(merged);  // [B'*T, D]
        Var patches = reshape(permute(reshape(out_tokens, Shape{B, T, dim_}), {0, 2, 1}),
                              Shape{B, dim_, qp_, qp_});
        Var y = add(x, fold_windows(patches, N, Hp, Wp));
        if (Hp != H || Wp != W) y = crop2d(y, 0, 0, H, W);
        return y;
    }

private:
    int dim_, heads_, qp_;
    std::unique_ptr<Linear> wq_, wk_, wv_, wo_;
};

// Token-mixing + channel-mixing blocks over a pooled token grid.
class MlpMixer : public Module {
public:
    MlpMixer(int dim, int tokens, int depth, std::mt19937_64& rng) : dim_(dim), tokens_(tokens) {
        for (int d = 0; d < depth; ++d) {
            token_norms_.push_back(std::make_unique<LayerNorm>(dim));
            token_fc1_.push_back(std::make_unique<Linear>(tokens, tokens, rng));
            token_fc2_.push_back(std::make_unique<Linear>(tokens, tokens, rng));
            chan_norms_.push_back(std::make_unique<LayerNorm>(dim));
            chan_fc1_.push_back(std::make_unique<Linear>(dim, dim, rng));
            chan_fc2_.push_back(std::make_unique<Linear>(dim, dim, rng));
            std::string tag = "block" + std::to_string(d + 1);
            add_child(tag + ".token_norm", token_norms_.back().get());
            add_child(tag + ".token_fc1", token_fc1_.back().get());
            add_child(tag + ".token_fc2", token_fc2_.back().get());
            add_child(tag + ".chan_norm", chan_norms_.back().get());
            add_child(tag + ".chan_fc1", chan_fc1_.back().get());
            add_child(tag + ".chan_fc2", chan_fc2_.back().get());
        }
    }

    // tokens_in: [N, T, D]
    Var forward(const Var& tokens_in) {
        int N = tokens_in.shape()[0], T = tokens_in.shape()[1];
        if (T != tokens_) throw std::invalid_argument("MlpMixer: token count mismatch");
        Var x = tokens_in;
        for (size_t d = 0; d < token_norms_.size(); ++d) {
            // token mixing operates across T for each channel
            Var n1 = token_norms_[d]->forward(reshape(x, Shape{N * T, dim_}));
            Var tt = reshape(permute(reshape(n1, Shape{N, T, dim_}), {0, 2, 1}), Shape{N * dim_, T});
            tt = token_fc2_[d]->forward(gelu(token_fc1_[d]->forward(tt)));
            Var mixed = permute(reshape(tt, Shape{N, dim_, T}), {0, 2, 1});
            x = add(x, mixed);
            // channel mixing
            Var n2 = chan_norms_[d]->forward(reshape(x, Shape{N * T, dim_}));
            Var cc = chan_fc2_[d]->forward(gelu(chan_fc1_[d]->forward(n2)));
            x = add(x, reshape(cc, Shape{N, T, dim_}));
        }
        return x;
    }

private:
    int dim_, tokens_;
    std::vector<std::unique_ptr<LayerNorm>> token_norms_, chan_norms_;
    std::vector<std::unique_ptr<Linear>> token_fc1_, token_fc2_, chan_fc1_, chan_fc2_;
};

// Spatial pyramid pooling: multi-bin pooled context re-expanded and fused.
class SppModule : public Module {
public:
    SppModule(int dim, std::vector<int> bins, std::mt19937_64& rng) : bins_(std::move(bins)) {
        for (size_t i = 0; i < bins_.size(); ++i) {
            branch_convs_.push_back(std::make_unique<Conv2d>(dim, dim, 1, 1, 0, rng));
            add_child("bin" + std::to_string(bins_[i]), branch_convs_.back().get());
        }
        fuse_ = std::make_unique<Conv2d>(dim * static_cast<int>(bins_.size() + 1), dim, 1, 1, 0, rng);
        add_child("fuse", fuse_.get());
    }

    Var forward(const Var& x) {
        int H = x.shape()[2], W = x.shape()[3];
        std::vector<Var> parts{x};
        for (size_t i = 0; i < bins_.size(); ++i) {
            Var pooled = adaptive_avg_pool2d(x, std::min(bins_[i], H), std::min(bins_[i], W));
            parts.push_back(upsample_bilinear(branch_convs_[i]->forward(pooled), H, W));
        }
        return fuse_->forward(cat(parts, 1));
    }

private:
    std::vector<int> bins_;
    std::vector<std::unique_ptr<Conv2d>> branch_convs_;
    std::unique_ptr<Conv2d> fuse_;
};

// Decoder head: MLP projections of the pyramid, Lawin attention at each
// window ratio, MLP-Mixer context from the pooled coarsest level, SPP, and
// sigmoid heads for the main, companion and edge maps.
class Decoder : public Module {
public:
    Decoder(const std::vector<int>& pyramid_channels, DecoderConfig cfg, std::mt19937_64& rng)
        : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (pyramid_channels.size() != 4)
            throw std::invalid_argument("Decoder: expected a 4-level pyramid");
        int D = cfg_.embed_dim;
        for (size_t i = 0; i < 4; ++i) {
            projs_.push_back(std::make_unique<Conv2d>(pyramid_channels[i], D, 1, 1, 0, rng));
            add_child("proj" + std::to_string(i), projs_.back().get());
        }
        fuse0_ = std::make_unique<Conv2d>(4 * D, D, 1, 1, 0, rng);
        add_child("fuse0", fuse0_.get());
        for (size_t i = 0; i < cfg_.window_ratios.size(); ++i) {
            lawins_.push_back(std::make_unique<LawinAttention>(D, cfg_.heads, cfg_.query_patch, rng));
            add_child("lawin_r" + std::to_string(cfg_.window_ratios[i]), lawins_.back().get());
        }
        spp_ = std::make_unique<SppModule>(D, cfg_.spp_bins, rng);
        add_child("spp", spp_.get());
        mixer_ = std::make_unique<MlpMixer>(D, cfg_.mixer_tokens * cfg_.mixer_tokens, cfg_.mixer_depth, rng);
        add_child("mixer", mixer_.get());
        mixer_out_ = std::make_unique<Conv2d>(D, D, 1, 1, 0, rng);
        add_child("mixer_out", mixer_out_.get());

        int fused_in = D * (2 + static_cast<int>(cfg_.window_ratios.size()) + 1);
        fuse1_ = std::make_unique<Conv2d>(fused_in, D, 1, 1, 0, rng);
        fuse1_act_ = std::make_unique<PReLU>(D);
        add_child("fuse1", fuse1_.get());
        add_child("fuse1_act", fuse1_act_.get());

        // refinement at half resolution before the heads sharpens boundaries
        int Dr = std::max(4, D / 2);
        refine_ = std::make_unique<Conv2d>(D, Dr, 3, 1, 1, rng);
        refine_act_ = std::make_unique<PReLU>(Dr);
        add_child("refine", refine_.get());
        add_child("refine_act", refine_act_.get());

        main_head_ = std::make_unique<Conv2d>(Dr, 1, 3, 1, 1, rng);
        edge_head_ = std::make_unique<Conv2d>(Dr, 1, 3, 1, 1, rng);
        add_child("main_head", main_head_.get());
        add_child("edge_head", edge_head_.get());
        for (int i = 0; i < cfg_.companion_stages; ++i) {
            companion_heads_.push_back(std::make_unique<Conv2d>(D, 1, 1, 1, 0, rng));
            add_child("companion" + std::to_string(i), companion_heads_.back().get());
        }
    }

    DecoderOutput forward(const Pyramid& pyr, int out_h, int out_w) {
        if (pyr.levels.size() != 4 || pyr.strides != std::vector<int>{4, 8, 16, 32})
            throw std::invalid_argument("decode: pyramid does not match the encoder contract");
        int D = cfg_.embed_dim;
        int Hg = pyr.levels[0].shape()[2], Wg = pyr.levels[0].shape()[3];

        std::vector<Var> proj(4);
        for (size_t i = 0; i < 4; ++i) proj[i] = projs_[i]->forward(pyr.levels[i]);

        std::vector<Var> lifted{proj[0]};
        for (size_t i = 1; i < 4; ++i) lifted.push_back(upsample_bilinear(proj[i], Hg, Wg));
        Var fused = fuse0_->forward(cat(lifted, 1));

        std::vector<Var> branches{fused};
        for (size_t i = 0; i < lawins_.size(); ++i)
            branches.push_back(lawins_[i]->forward(fused, cfg_.window_ratios[i]));
        branches.push_back(spp_->forward(fused));

        // MLP-Mixer context from the pooled coarsest level
        int t = cfg_.mixer_tokens;
        Var pooled = adaptive_avg_pool2d(proj[3], t, t);
        Var tokens = permute(reshape(pooled, Shape{pooled.shape()[0], D, t * t}), {0, 2, 1});
        Var mixed = mixer_->forward(tokens);
        Var mixed_map = reshape(permute(mixed, {0, 2, 1}), Shape{pooled.shape()[0], D, t, t});
        branches.push_back(upsample_bilinear(mixer_out_->forward(mixed_map), Hg, Wg));

        Var ffinal = fuse1_act_->forward(fuse1_->forward(cat(branches, 1)));
        Var refined = refine_act_->forward(
            refine_->forward(upsample_bilinear(ffinal, std::min(2 * Hg, out_h), std::min(2 * Wg, out_w))));

        DecoderOutput out;
        out.main = upsample_bilinear(sigmoid(main_head_->forward(refined)), out_h, out_w);
        out.edge = upsample_bilinear(sigmoid(edge_head_->forward(refined)), out_h, out_w);
        // companion heads sit on the coarsest projections
        for (int i = 0; i < cfg_.companion_stages; ++i) {
            const Var& src = proj[static_cast<size_t>(3 - i)];
            out.companions.push_back(
                upsample_bilinear(sigmoid(companion_heads_[static_cast<size_t>(i)]->forward(src)), out_h, out_w));
        }
        return out;
    }

    const DecoderConfig& config() const { return cfg_; }
    Conv2d& main_head() { return *main_head_; }

private:
    DecoderConfig cfg_;
    std::vector<std::unique_ptr<Conv2d>> projs_;
    std::unique_ptr<Conv2d> fuse0_, fuse1_, mixer_out_;
    std::vector<std::unique_ptr<LawinAttention>> lawins_;
    std::unique_ptr<SppModule> spp_;
    std::unique_ptr<MlpMixer> mixer_;
    std::unique_ptr<PReLU> fuse1_act_, refine_act_;
    std::unique_ptr<Conv2d> refine_, main_head_, edge_head_;
    std::vector<std::unique_ptr<Conv2d>> companion_heads_;
};

}  // namespace cws
