#pragma once

#include <algorithm>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cws/checkpoint.hpp"
#include "cws/data.hpp"
#include "cws/losses.hpp"
#include "cws/metrics.hpp"
#include "cws/model.hpp"
#include "cws/optim.hpp"

namespace cws {

struct FoldPlan {
    std::vector<std::vector<std::string>> folds;

    void validate_partition(std::vector<std::string> ids) const {
        std::vector<std::string> all;
        size_t max_sz = 0, min_sz = SIZE_MAX;
        for (const auto& f : folds) {
            all.insert(all.end(), f.begin(), f.end());
            max_sz = std::max(max_sz, f.size());
            min_sz = std::min(min_sz, f.size());
        }
        std::sort(all.begin(), all.end());
        std::sort(ids.begin(), ids.end());
        if (all != ids) throw std::logic_error("FoldPlan: folds do not partition the id set");
        if (folds.size() > 1 && max_sz - min_sz > 1)
            throw std::logic_error("FoldPlan: fold sizes differ by more than 1");
    }
};

// Seeded shuffle then round-robin assignment.
inline FoldPlan make_folds(std::vector<std::string> ids, int k, uint64_t seed) {
    if (k < 1) throw std::invalid_argument("make_folds: k must be >= 1");
    if (static_cast<int>(ids.size()) < k)
        throw std::invalid_argument("make_folds: need at least k samples (" + std::to_string(ids.size()) +
                                    " < " + std::to_string(k) + ")");
    std::sort(ids.begin(), ids.end());
    auto rng = make_rng(seed, 0xF01D);
    std::shuffle(ids.begin(), ids.end(), rng);
    FoldPlan plan;
    plan.folds.resize(static_cast<size_t>(k));
    for (size_t i = 0; i < ids.size(); ++i) plan.folds[i % static_cast<size_t>(k)].push_back(ids[i]);
    return plan;
}

struct TrainConfig {
    AdamWConfig opt;             // reference defaults: lr 1e-5, eps 1e-7, wd 0.01
    int batch_size = 2;
    int epochs = 100;
    double ema_decay = 0.999;
    uint64_t seed = 1;
    AugmentConfig aug;           // all transforms off unless enabled
    double edge_weight = 1.0;
    int image_size = 64;         // square resize target; 0 keeps native sizes
    int max_steps = 0;           // optimisation-step budget; 0 = unlimited
    int val_every = 1;           // epochs between validation passes
    bool verbose = false;

    void validate() const {
        if (batch_size < 1 || epochs < 1) throw std::invalid_argument("TrainConfig: batch_size/epochs >= 1");
        if (ema_decay <= 0.0 || ema_decay >= 1.0) throw std::invalid_argument("TrainConfig: ema decay in (0,1)");
    }
};

struct EpochMetrics {
    double loss = 0.0;
    double iou = 0.0;
    double dsc = 0.0;
};

struct FoldResult {
    Checkpoint checkpoint;
    int best_epoch = 0;
    double best_val_iou = 0.0;
    double best_val_dsc = 0.0;
    std::vector<double> loss_history;
};

namespace detail {

inline Tensor stack_batch(WoundSegModel& model, const std::vector<const Sample*>& batch) {
    Tensor first = model.merge_image(batch[0]->image);
    Shape s = first.shape();
    Tensor out(Shape{static_cast<int>(batch.size()), s[1], s[2], s[3]});
    std::copy_n(first.data(), first.numel(), out.data());
    for (size_t i = 1; i < batch.size(); ++i) {
        Tensor t = model.merge_image(batch[i]->image);
        if (!(t.shape() == s)) throw std::runtime_error("batch images disagree in size");
        std::copy_n(t.data(), t.numel(), out.data() + static_cast<int64_t>(i) * t.numel());
    }
    return out;
}

inline Tensor stack_masks(const std::vector<const Sample*>& batch) {
    int H = batch[0]->mask.height, W = batch[0]->mask.width;
    Tensor out(Shape{static_cast<int>(batch.size()), 1, H, W});
    for (size_t i = 0; i < batch.size(); ++i)
        for (int64_t j = 0; j < batch[i]->mask.size(); ++j)
            out[static_cast<int64_t>(i) * H * W + j] = batch[i]->mask.data[static_cast<size_t>(j)];
    return out;
}

inline Plane main_map_to_plane(const Tensor& main, int batch_index) {
    int H = main.shape()[2], W = main.shape()[3];
    Plane p(H, W);
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
        p.data[static_cast<size_t>(i)] = main[static_cast<int64_t>(batch_index) * H * W + i];
    return p;
}

inline EpochMetrics validate_fold(WoundSegModel& model, const std::vector<const Sample*>& val) {
    NoGradGuard guard;
    EpochMetrics em;
    if (val.empty()) return em;
    for (const Sample* s : val) {
        DecoderOutput out = model.forward_image(s->image, false);
        MaskBin pred = binarize(main_map_to_plane(out.main.value(), 0), 0.5);
        SegMetrics sm = metrics(confusion(s->mask, pred));
        em.iou += sm.iou;
        em.dsc += sm.dsc;
    }
    em.iou /= static_cast<double>(val.size());
    em.dsc /= static_cast<double>(val.size());
    return em;
}

}  // namespace detail

// Trains one model per fold: fold f validates on folds[f] and trains on the
// rest (with k = 1 the single fold trains and validates on everything). The
// best epoch by mean validation IoU/DSC is kept in the checkpoint, alongside
// the EMA shadow parameters.
inline std::vector<FoldResult> train(const std::vector<Sample>& samples, const FoldPlan& plan,
                                     const TrainConfig& tcfg, const ModelConfig& mcfg,
                                     const std::optional<Checkpoint>& init = std::nullopt,
                                     const std::string& freeze_scope = "none") {
    tcfg.validate();
    if (samples.empty()) throw std::invalid_argument("train: no samples");
    for (const auto& s : samples)
        if (s.mask.size() == 0) throw std::invalid_argument("train: sample '" + s.id + "' has no mask");
    if (init && !config_compatible(init->config, mcfg))
        throw std::invalid_argument("train: init checkpoint architecture does not match the model config");

    std::map<std::string, const Sample*> by_id;
    std::map<std::string, int> source_mix;
    for (const auto& s : samples) {
        by_id[s.id] = &s;
        ++source_mix[s.source];
    }

    std::vector<FoldResult> results;
    int k = static_cast<int>(plan.folds.size());
    for (int fold = 0; fold < k; ++fold) {
        std::vector<const Sample*> train_set, val_set;
        for (int f = 0; f < k; ++f)
            for (const auto& id : plan.folds[static_cast<size_t>(f)]) {
                auto it = by_id.find(id);
                if (it == by_id.end()) throw std::invalid_argument("train: fold id '" + id + "' not in sample set");
                if (f == fold && k > 1) val_set.push_back(it->second);
                else train_set.push_back(it->second);
            }
        if (k == 1) val_set = train_set;  // single fold: overfit-style run

        ModelConfig fold_cfg = mcfg;
        fold_cfg.seed = splitmix64(mcfg.seed + static_cast<uint64_t>(fold));
        WoundSegModel model(fold_cfg);
        if (init) apply_checkpoint(*init, model);
        freeze_prefix(model, freeze_scope);

        auto params = model.named_parameters();
        AdamW opt(params, tcfg.opt);
        EmaState ema(params, tcfg.ema_decay);

        FoldResult fr;
        double best_score = -1.0;
        Checkpoint best;
        int steps = 0;
        bool budget_hit = false;
        for (int epoch = 1; epoch <= tcfg.epochs && !budget_hit; ++epoch) {
            std::vector<size_t> order(train_set.size());
            std::iota(order.begin(), order.end(), 0);
            auto erng = make_rng(tcfg.seed, 0xE70C * static_cast<uint64_t>(fold + 1) + static_cast<uint64_t>(epoch));
            std::shuffle(order.begin(), order.end(), erng);

            double epoch_loss = 0.0;
            int batches = 0;
            for (size_t bi = 0; bi < order.size(); bi += static_cast<size_t>(tcfg.batch_size)) {
                std::vector<const Sample*> batch;
                std::vector<Sample> storage;
                storage.reserve(static_cast<size_t>(tcfg.batch_size));
                for (size_t j = bi; j < std::min(order.size(), bi + static_cast<size_t>(tcfg.batch_size)); ++j) {
                    const Sample* s = train_set[order[j]];
                    if (tcfg.aug.any()) {
                        uint64_t aseed = splitmix64(tcfg.seed ^ splitmix64(static_cast<uint64_t>(epoch) * 1315423911ULL +
                                                                           order[j]));
                        storage.push_back(augment(*s, tcfg.aug, aseed));
                    } else {
                        storage.push_back(*s);
                    }
                }
                for (const auto& s : storage) batch.push_back(&s);

                Var x(detail::stack_batch(model, batch));
                Var gt = constant(detail::stack_masks(batch));
                DecoderOutput out = model.forward(x, true);
                Var loss = total_loss(out, gt, tcfg.edge_weight);
                opt.zero_grad();
                loss.backward();
                opt.step();
                ema.update(params);
                epoch_loss += loss.value()[0];
                ++batches;
                ++steps;
                if (tcfg.max_steps > 0 && steps >= tcfg.max_steps) {
                    budget_hit = true;
                    break;
                }
            }
            epoch_loss /= std::max(1, batches);
            fr.loss_history.push_back(epoch_loss);

            if (epoch % tcfg.val_every == 0 || epoch == tcfg.epochs || budget_hit) {
                EpochMetrics vm = detail::validate_fold(model, val_set);
                double score = 0.5 * (vm.iou + vm.dsc);
                if (tcfg.verbose)
                    std::cout << "fold " << fold << " epoch " << epoch << " loss " << epoch_loss
                              << " val_iou " << vm.iou << " val_dsc " << vm.dsc << "\n";
                if (score > best_score) {
                    best_score = score;
                    Provenance prov;
                    prov.seed = tcfg.seed;
                    prov.fold = fold;
                    prov.best_epoch = epoch;
                    prov.source_mix = source_mix;
                    prov.freeze_scope = freeze_scope;
                    best = checkpoint_from_model(model, ema, prov);
                    fr.best_epoch = epoch;
                    fr.best_val_iou = vm.iou;
                    fr.best_val_dsc = vm.dsc;
                }
            }
        }
        fr.checkpoint = std::move(best);
        results.push_back(std::move(fr));
    }
    return results;
}

enum class FlipTransform { identity, horizontal, vertical, both };

inline const std::vector<FlipTransform>& tta_flips_default() {
    static const std::vector<FlipTransform> v{FlipTransform::identity, FlipTransform::horizontal,
                                              FlipTransform::vertical};
    return v;
}
inline const std::vector<FlipTransform>& tta_flips_group() {
    static const std::vector<FlipTransform> v{FlipTransform::identity, FlipTransform::horizontal,
                                              FlipTransform::vertical, FlipTransform::both};
    return v;
}

inline ImageU8 apply_flip(const ImageU8& img, FlipTransform t) {
    switch (t) {
        case FlipTransform::identity: return img;
        case FlipTransform::horizontal: return hflip_image(img);
        case FlipTransform::vertical: return vflip_image(img);
        case FlipTransform::both: return vflip_image(hflip_image(img));
    }
    return img;
}
inline Plane apply_flip_inverse(const Plane& p, FlipTransform t) {
    // every flip is an involution, so the inverse is the flip itself
    switch (t) {
        case FlipTransform::identity: return p;
        case FlipTransform::horizontal: return hflip_plane(p);
        case FlipTransform::vertical: return vflip_plane(p);
        case FlipTransform::both: return vflip_plane(hflip_plane(p));
    }
    return p;
}

// Test-time augmentation over one or more models: predict on each transformed
// image, invert the transform on the probability map, arithmetic mean over
// all (model, transform) pairs.
inline Plane tta_infer(std::vector<WoundSegModel*> models, const ImageU8& img,
                       const std::vector<FlipTransform>& flips = tta_flips_default()) {
    if (models.empty()) throw std::invalid_argument("tta_infer: no models");
    if (flips.empty()) throw std::invalid_argument("tta_infer: empty transform set");
    NoGradGuard guard;
    Plane acc(img.height, img.width, 0.0);
    for (WoundSegModel* model : models)
        for (FlipTransform t : flips) {
            DecoderOutput out = model->forward_image(apply_flip(img, t), false);
            Plane p = apply_flip_inverse(detail::main_map_to_plane(out.main.value(), 0), t);
            for (int64_t i = 0; i < acc.size(); ++i) acc.data[static_cast<size_t>(i)] += p.data[static_cast<size_t>(i)];
        }
    double inv = 1.0 / (static_cast<double>(models.size()) * static_cast<double>(flips.size()));
    for (auto& v : acc.data) v *= inv;
    return acc;
}

// Binarises TTA output and writes masks next to the images, returning a
// manifest fragment suitable for inclusion in a training set.
inline DatasetManifest pseudo_label(std::vector<WoundSegModel*> models,
                                    const std::vector<std::pair<std::string, ImageU8>>& images,
                                    const std::string& out_dir, double threshold = 0.5,
                                    const std::vector<FlipTransform>& flips = tta_flips_default(),
                                    const std::string& source = "pseudo") {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "masks");
    DatasetManifest m;
    m.base_dir = fs::absolute(out_dir);
    for (const auto& [name, img] : images) {
        Plane prob = tta_infer(models, img, flips);
        MaskBin mask = binarize(prob, threshold);
        std::string img_rel = "images/" + name + ".png";
        std::string mask_rel = "masks/" + name + ".png";
        fs::create_directories(fs::path(out_dir) / "images");
        write_image_png((fs::path(out_dir) / img_rel).string(), img);
        write_mask_png((fs::path(out_dir) / mask_rel).string(), mask);
        m.entries.push_back({img_rel, mask_rel, "train", source});
    }
    save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
    return m;
}

}  // namespace cws
