#pragma once

#include <json.hpp>

#include <memory>
#include <string>
#include <vector>

#include "cws/color.hpp"
#include "cws/hardnet.hpp"
#include "cws/lawin.hpp"

namespace cws {

struct ModelConfig {
    ChannelMode channel_mode = ChannelMode::RGB_EY;
    EyConfig ey{5, false};
    StemConfig stem{8, 16};
    BlockSchedule schedule = toy_schedule();
    DecoderConfig decoder{};
    uint64_t seed = 1;

    int input_channels() const { return channel_count(channel_mode); }
    void validate() const {
        ey.validate();
        schedule.validate();
        decoder.validate();
    }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["channel_mode"] = channel_mode_name(c.channel_mode);
    j["ey"] = {{"exponent", c.ey.exponent}, {"swap_rb", c.ey.swap_rb}};
    j["stem"] = {{"width1", c.stem.width1}, {"width2", c.stem.width2}};
    j["schedule"] = schedule_to_json(c.schedule);
    j["decoder"] = {{"embed_dim", c.decoder.embed_dim},
                    {"heads", c.decoder.heads},
                    {"window_ratios", c.decoder.window_ratios},
                    {"query_patch", c.decoder.query_patch},
                    {"mixer_depth", c.decoder.mixer_depth},
                    {"mixer_tokens", c.decoder.mixer_tokens},
                    {"spp_bins", c.decoder.spp_bins},
                    {"companion_stages", c.decoder.companion_stages}};
    j["seed"] = c.seed;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.channel_mode = parse_channel_mode(j.at("channel_mode").get<std::string>());
    c.ey.exponent = j.at("ey").at("exponent").get<int>();
    c.ey.swap_rb = j.at("ey").at("swap_rb").get<bool>();
    c.stem.width1 = j.at("stem").at("width1").get<int>();
    c.stem.width2 = j.at("stem").at("width2").get<int>();
    c.schedule = schedule_from_json(j.at("schedule"));
    const auto& jd = j.at("decoder");
    c.decoder.embed_dim = jd.at("embed_dim").get<int>();
    c.decoder.heads = jd.at("heads").get<int>();
    c.decoder.window_ratios = jd.at("window_ratios").get<std::vector<int>>();
    c.decoder.query_patch = jd.at("query_patch").get<int>();
    c.decoder.mixer_depth = jd.at("mixer_depth").get<int>();
    c.decoder.mixer_tokens = jd.at("mixer_tokens").get<int>();
    c.decoder.spp_bins = jd.at("spp_bins").get<std::vector<int>>();
    c.decoder.companion_stages = jd.at("companion_stages").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.validate();
    return c;
}

// Full segmentation network. Channel merging runs inside the model's input
// adapter so checkpoints are self-describing about their channel mode.
class WoundSegModel : public Module {
public:
    explicit WoundSegModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        auto rng = make_rng(cfg_.seed);
        encoder_ = std::make_unique<Encoder>(cfg_.input_channels(), cfg_.stem, cfg_.schedule, rng);
        decoder_ = std::make_unique<Decoder>(encoder_->pyramid_channels(), cfg_.decoder, rng);
        add_child("encoder", encoder_.get());
        add_child("decoder", decoder_.get());
    }

    // batch: [N, C, H, W] already merged and scaled to [0,1]
    DecoderOutput forward(const Var& batch, bool training) {
        Pyramid pyr = encoder_->forward(batch, training);
        return decoder_->forward(pyr, batch.shape()[2], batch.shape()[3]);
    }

    Tensor merge_image(const ImageU8& img) const {
        MergedTensor m = merge_channels(img, cfg_.channel_mode, cfg_.ey);
        Shape s = m.data.shape();
        return m.data.reshaped(Shape{1, s[0], s[1], s[2]});
    }

    DecoderOutput forward_image(const ImageU8& img, bool training = false) {
        return forward(Var(merge_image(img)), training);
    }

    const ModelConfig& config() const { return cfg_; }
    Encoder& encoder() { return *encoder_; }
    Decoder& decoder() { return *decoder_; }

private:
    ModelConfig cfg_;
    std::unique_ptr<Encoder> encoder_;
    std::unique_ptr<Decoder> decoder_;
};

// Marks parameters under the scope's prefixes as excluded from optimisation;
// everything else is (re)marked trainable, so the call is idempotent.
inline int freeze_prefix(Module& model, const std::string& scope) {
    std::vector<std::string> prefixes;
    if (scope == "none") {
        // nothing frozen
    } else if (scope == "stem") {
        prefixes = {"encoder.stem1.", "encoder.stem2."};
    } else if (scope == "stem+block1") {
        prefixes = {"encoder.stem1.", "encoder.stem2.", "encoder.block1."};
    } else {
        throw std::invalid_argument("freeze_prefix: unknown scope '" + scope +
                                    "' (expected none, stem or stem+block1)");
    }
    int frozen = 0;
    for (auto& p : model.named_parameters()) {
        bool match = false;
        for (const auto& pre : prefixes)
            if (p.name.rfind(pre, 0) == 0) match = true;
        p.var.node()->trainable = !match;
        if (match) ++frozen;
    }
    return frozen;
}

}  // namespace cws
