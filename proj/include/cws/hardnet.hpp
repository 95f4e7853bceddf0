#pragma once

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "cws/nn.hpp"

namespace cws {

// Inputs of layer k in a block of depth n: {k-f : f divides n, f <= k}.
// Index 0 denotes the block input. Distinct divisors give distinct sources,
// so the sorted result needs no dedup.
inline std::vector<int> link_set(int n, int k) {
    if (k < 1 || k > n) throw std::invalid_argument("link_set: layer index out of range");
    std::vector<int> out;
    for (int f = 1; f <= n; ++f)
        if (n % f == 0 && f <= k) out.push_back(k - f);
    std::sort(out.begin(), out.end());
    return out;
}

struct BlockLayer {
    std::vector<int> inputs;  // source indices, 0 = block input
    int in_channels = 0;
    int out_channels = 0;
};

struct BlockGraph {
    int depth = 0;
    std::vector<BlockLayer> layers;     // 1-based layer k stored at [k-1]
    std::vector<int> output_layers;     // concatenated into the block output
    int out_channels = 0;               // width of that concatenation
};

// Number of later layers in the block that consume layer k via the divisor
// rule. Drives the channel-splitting width rule.
inline int outbound_links(int n, int k) {
    int cnt = 0;
    for (int f = 1; f <= n; ++f)
        if (n % f == 0 && k + f <= n) ++cnt;
    return cnt;
}

inline int round_even(double x) {
    return std::max(2, static_cast<int>(std::llround(x / 2.0)) * 2);
}

// Assigns layer widths growth * multiplier^(outbound link count), rounded to
// the nearest even integer, and records concatenated input widths per link
// set. The block output concatenates odd-indexed layers plus the final one.
inline BlockGraph build_block(int depth, int growth, double multiplier, int block_in_channels) {
    if (depth < 1 || growth < 1 || multiplier < 1.0)
        throw std::invalid_argument("build_block: depth, growth >= 1 and multiplier >= 1 required");
    BlockGraph g;
    g.depth = depth;
    g.layers.resize(static_cast<size_t>(depth));
    for (int k = 1; k <= depth; ++k) {
        BlockLayer& L = g.layers[static_cast<size_t>(k - 1)];
        L.inputs = link_set(depth, k);
        L.out_channels = round_even(growth * std::pow(multiplier, outbound_links(depth, k)));
        L.in_channels = 0;
        for (int src : L.inputs)
            L.in_channels += src == 0 ? block_in_channels : g.layers[static_cast<size_t>(src - 1)].out_channels;
    }
    for (int k = 1; k <= depth; ++k)
        if (k % 2 == 1 || k == depth) g.output_layers.push_back(k);
    for (int k : g.output_layers) g.out_channels += g.layers[static_cast<size_t>(k - 1)].out_channels;
    return g;
}

struct BlockSpec {
    int layers = 1;
    int growth = 8;
    double multiplier = 1.7;
    int out_channels = 16;  // width after the 1x1 transition
    bool downsample = false;
};

struct BlockSchedule {
    std::vector<BlockSpec> blocks;

    void validate() const {
        if (blocks.size() < 4) throw std::invalid_argument("BlockSchedule: need at least 4 blocks");
        for (const auto& b : blocks) {
            if (b.layers < 1) throw std::invalid_argument("BlockSchedule: layer count must be >= 1");
            if (b.growth < 1 || b.multiplier < 1.0 || b.out_channels < 1)
                throw std::invalid_argument("BlockSchedule: bad growth/multiplier/out_channels");
        }
    }
    std::vector<int> layer_counts() const {
        std::vector<int> v;
        for (const auto& b : blocks) v.push_back(b.layers);
        return v;
    }
};

struct ScheduleStats {
    double mean = 0.0;
    double sd = 0.0;  // sample convention (n-1 divisor); see schedule_stats
};

// Mean and standard deviation of per-block layer counts. The sample (n-1)
// convention is used: it reproduces the reference schedules' published
// amplitude values, the population convention does not.
inline ScheduleStats schedule_stats(const BlockSchedule& s) {
    if (s.blocks.empty()) throw std::invalid_argument("schedule_stats: empty schedule");
    ScheduleStats st;
    for (const auto& b : s.blocks) st.mean += b.layers;
    st.mean /= static_cast<double>(s.blocks.size());
    if (s.blocks.size() > 1) {
        double ss = 0;
        for (const auto& b : s.blocks) ss += (b.layers - st.mean) * (b.layers - st.mean);
        st.sd = std::sqrt(ss / static_cast<double>(s.blocks.size() - 1));
    }
    return st;
}

inline BlockSchedule schedule_from_json(const nlohmann::json& j) {
    BlockSchedule s;
    for (const auto& jb : j.at("blocks")) {
        BlockSpec b;
        b.layers = jb.at("layers").get<int>();
        b.growth = jb.at("growth").get<int>();
        b.multiplier = jb.at("multiplier").get<double>();
        b.out_channels = jb.at("out_channels").get<int>();
        b.downsample = jb.value("downsample", false);
        s.blocks.push_back(b);
    }
    s.validate();
    if (j.contains("expected_layer_sd")) {
        double expected = j.at("expected_layer_sd").get<double>();
        double actual = schedule_stats(s).sd;
        if (std::abs(actual - expected) > 1e-3)
            throw std::runtime_error("schedule layer sd " + std::to_string(actual) +
                                     " does not match expected " + std::to_string(expected));
    }
    return s;
}

inline nlohmann::json schedule_to_json(const BlockSchedule& s) {
    nlohmann::json j;
    j["blocks"] = nlohmann::json::array();
    for (const auto& b : s.blocks)
        j["blocks"].push_back({{"layers", b.layers},
                               {"growth", b.growth},
                               {"multiplier", b.multiplier},
                               {"out_channels", b.out_channels},
                               {"downsample", b.downsample}});
    return j;
}

inline BlockSchedule load_schedule(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open schedule config: " + path);
    nlohmann::json j;
    in >> j;
    return schedule_from_json(j);
}

// Desk-scale default: six blocks, growth ~4x below the reference network.
inline BlockSchedule toy_schedule() {
    BlockSchedule s;
    s.blocks = {
        {2, 6, 1.7, 16, true},  {2, 8, 1.7, 24, true},  {3, 8, 1.7, 32, false},
        {2, 10, 1.7, 40, true}, {2, 10, 1.7, 48, false}, {2, 12, 1.7, 56, false},
    };
    return s;
}

struct StemConfig {
    int width1 = 8;
    int width2 = 16;
};

// One densely connected block: 3x3 conv -> BN -> PReLU per layer, inputs
// concatenated according to the divisor link sets.
class HarDNetBlock : public Module {
public:
    HarDNetBlock(int in_channels, const BlockSpec& spec, std::mt19937_64& rng)
        : graph_(build_block(spec.layers, spec.growth, spec.multiplier, in_channels)) {
        for (const auto& L : graph_.layers) {
            convs_.push_back(std::make_unique<Conv2d>(L.in_channels, L.out_channels, 3, 1, 1, rng,
                                                      /*groups=*/1, /*bias=*/false));
            norms_.push_back(std::make_unique<BatchNorm2d>(L.out_channels));
            acts_.push_back(std::make_unique<PReLU>(L.out_channels));
        }
        for (size_t i = 0; i < convs_.size(); ++i) {
            std::string tag = "layer" + std::to_string(i + 1);
            add_child(tag + ".conv", convs_[i].get());
            add_child(tag + ".norm", norms_[i].get());
            add_child(tag + ".act", acts_[i].get());
        }
    }

    Var forward(const Var& x, bool training) {
        std::vector<Var> produced{x};  // index 0 = block input
        for (size_t i = 0; i < graph_.layers.size(); ++i) {
            const auto& L = graph_.layers[i];
            Var input;
            if (L.inputs.size() == 1) {
                input = produced[static_cast<size_t>(L.inputs[0])];
            } else {
                std::vector<Var> srcs;
                for (int s : L.inputs) srcs.push_back(produced[static_cast<size_t>(s)]);
                input = cat(srcs, 1);
            }
            Var y = acts_[i]->forward(norms_[i]->forward(convs_[i]->forward(input), training));
            produced.push_back(y);
        }
        std::vector<Var> outs;
        for (int k : graph_.output_layers) outs.push_back(produced[static_cast<size_t>(k)]);
        return outs.size() == 1 ? outs[0] : cat(outs, 1);
    }

    const BlockGraph& graph() const { return graph_; }

private:
    BlockGraph graph_;
    std::vector<std::unique_ptr<Conv2d>> convs_;
    std::vector<std::unique_ptr<BatchNorm2d>> norms_;
    std::vector<std::unique_ptr<PReLU>> acts_;
};

struct Pyramid {
    std::vector<Var> levels;    // coarsest last
    std::vector<int> strides;   // matching strides, e.g. {4, 8, 16, 32}
};

// Encoder: two stem blocks (conv -> IBN -> PReLU, then conv -> SN -> PReLU,
// both stride 2) followed by the scheduled HarDNet blocks. Downsampling
// between blocks is a stride-2 depthwise conv. The pyramid collects the last
// feature map produced at each stride.
class Encoder : public Module {
public:
    Encoder(int in_channels, const StemConfig& stem, const BlockSchedule& schedule, std::mt19937_64& rng)
        : in_channels_(in_channels), schedule_(schedule) {
        schedule_.validate();
        stem1_conv_ = std::make_unique<Conv2d>(in_channels, stem.width1, 3, 2, 1, rng);
        stem1_norm_ = std::make_unique<IBN>(IBNConfig{stem.width1, 0.5});
        stem1_act_ = std::make_unique<PReLU>(stem.width1);
        stem2_conv_ = std::make_unique<Conv2d>(stem.width1, stem.width2, 3, 2, 1, rng);
        stem2_norm_ = std::make_unique<SwitchNorm2d>(stem.width2);
        stem2_act_ = std::make_unique<PReLU>(stem.width2);
        add_child("stem1.conv", stem1_conv_.get());
        add_child("stem1.norm", stem1_norm_.get());
        add_child("stem1.act", stem1_act_.get());
        add_child("stem2.conv", stem2_conv_.get());
        add_child("stem2.norm", stem2_norm_.get());
        add_child("stem2.act", stem2_act_.get());

        int ch = stem.width2;
        total_stride_ = 4;
        for (size_t i = 0; i < schedule_.blocks.size(); ++i) {
            const BlockSpec& spec = schedule_.blocks[i];
            std::string tag = "block" + std::to_string(i + 1);
            blocks_.push_back(std::make_unique<HarDNetBlock>(ch, spec, rng));
            add_child(tag, blocks_.back().get());
            transitions_.push_back(std::make_unique<Conv2d>(blocks_.back()->graph().out_channels,
                                                            spec.out_channels, 1, 1, 0, rng,
                                                            /*groups=*/1, /*bias=*/false));
            add_child(tag + ".transition", transitions_.back().get());
            ch = spec.out_channels;
            if (spec.downsample) {
                downsamples_.push_back(std::make_unique<Conv2d>(ch, ch, 3, 2, 1, rng, /*groups=*/ch,
                                                                /*bias=*/false));
                add_child(tag + ".down", downsamples_.back().get());
                total_stride_ *= 2;
            } else {
                downsamples_.push_back(nullptr);
            }
        }
    }

    Pyramid forward(const Var& x, bool training) {
        if (x.shape()[1] != in_channels_)
            throw std::invalid_argument("encoder: input has " + std::to_string(x.shape()[1]) +
                                        " channels, stem expects " + std::to_string(in_channels_));
        int H = x.shape()[2], W = x.shape()[3];
        if (H % total_stride_ != 0 || W % total_stride_ != 0)
            throw std::invalid_argument("encoder: spatial size " + std::to_string(H) + "x" +
                                        std::to_string(W) + " is not divisible by the total stride " +
                                        std::to_string(total_stride_));
        Var y = stem1_act_->forward(stem1_norm_->forward(stem1_conv_->forward(x), training));
        y = stem2_act_->forward(stem2_norm_->forward(stem2_conv_->forward(y), training));

        Pyramid pyr;
        int stride = 4;
        for (size_t i = 0; i < blocks_.size(); ++i) {
            y = transitions_[i]->forward(blocks_[i]->forward(y, training));
            bool last_block = i + 1 == blocks_.size();
            bool stride_ends = last_block || downsamples_[i] != nullptr;
            if (stride_ends) {
                pyr.levels.push_back(y);
                pyr.strides.push_back(stride);
            }
            if (downsamples_[i]) {
                y = downsamples_[i]->forward(y);
                stride *= 2;
            }
        }
        return pyr;
    }

    int total_stride() const { return total_stride_; }
    const BlockSchedule& schedule() const { return schedule_; }
    std::vector<int> pyramid_channels() const {
        std::vector<int> ch;
        for (size_t i = 0; i < schedule_.blocks.size(); ++i) {
            bool last_block = i + 1 == schedule_.blocks.size();
            if (last_block || schedule_.blocks[i].downsample) ch.push_back(schedule_.blocks[i].out_channels);
        }
        return ch;
    }

private:
    int in_channels_;
    BlockSchedule schedule_;
    int total_stride_ = 4;
    std::unique_ptr<Conv2d> stem1_conv_, stem2_conv_;
    std::unique_ptr<IBN> stem1_norm_;
    std::unique_ptr<SwitchNorm2d> stem2_norm_;
    std::unique_ptr<PReLU> stem1_act_, stem2_act_;
    std::vector<std::unique_ptr<HarDNetBlock>> blocks_;
    std::vector<std::unique_ptr<Conv2d>> transitions_;
    std::vector<std::unique_ptr<Conv2d>> downsamples_;
};

}  // namespace cws
