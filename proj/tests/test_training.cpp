#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <set>

#include "cws/train.hpp"

using namespace cws;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.channel_mode = ChannelMode::RGB_EY;
    cfg.stem = {4, 8};
    cfg.schedule.blocks = {
        {1, 4, 1.7, 8, true}, {1, 4, 1.7, 10, true}, {1, 4, 1.7, 12, true}, {1, 4, 1.7, 14, false},
    };
    cfg.decoder.embed_dim = 8;
    cfg.decoder.heads = 2;
    cfg.decoder.window_ratios = {2};
    cfg.decoder.mixer_depth = 1;
    cfg.decoder.mixer_tokens = 2;
    cfg.decoder.spp_bins = {1, 2};
    cfg.seed = 3;
    return cfg;
}

std::vector<Sample> tiny_dataset(int n, int size, uint64_t seed) {
    fs::path dir = fs::path(CWS_BINARY_DIR) / "scratch" / ("train_ds_" + std::to_string(seed));
    fs::remove_all(dir);
    SynthConfig cfg;
    cfg.n = n;
    cfg.size = size;
    cfg.seed = seed;
    DatasetManifest m = synth_dataset(cfg, dir.string());
    return load_split(m, "train", size);
}

std::vector<std::string> ids_of(const std::vector<Sample>& samples) {
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    return ids;
}

}  // namespace

TEST_CASE("make_folds partitions with near-equal sizes") {
    std::vector<std::string> ten;
    for (int i = 0; i < 10; ++i) ten.push_back("s" + std::to_string(i));
    FoldPlan p = make_folds(ten, 5, 1);
    REQUIRE(p.folds.size() == 5);
    for (const auto& f : p.folds) CHECK(f.size() == 2);
    p.validate_partition(ten);

    std::vector<std::string> eleven = ten;
    eleven.push_back("s10");
    FoldPlan q = make_folds(eleven, 5, 1);
    std::multiset<size_t> sizes;
    for (const auto& f : q.folds) sizes.insert(f.size());
    CHECK(sizes == std::multiset<size_t>{3, 2, 2, 2, 2});
    q.validate_partition(eleven);

    CHECK_THROWS(make_folds({"a", "b"}, 5, 1));
    CHECK_THROWS(make_folds(ten, 0, 1));
}

TEST_CASE("make_folds is deterministic in the seed and sensitive to it") {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) ids.push_back("s" + std::to_string(i));
    FoldPlan a = make_folds(ids, 4, 9);
    FoldPlan b = make_folds(ids, 4, 9);
    CHECK(a.folds == b.folds);
    FoldPlan c = make_folds(ids, 4, 10);
    CHECK(a.folds != c.folds);
}

TEST_CASE("training runs, records history and emits checkpoints per fold") {
    auto samples = tiny_dataset(4, 32, 21);
    FoldPlan plan = make_folds(ids_of(samples), 2, 1);
    TrainConfig tc;
    tc.batch_size = 2;
    tc.epochs = 1;
    tc.opt.lr = 1e-3;
    tc.seed = 5;
    tc.image_size = 32;
    auto results = train(samples, plan, tc, tiny_config());
    REQUIRE(results.size() == 2);
    for (const auto& r : results) {
        CHECK_FALSE(r.loss_history.empty());
        CHECK_FALSE(r.checkpoint.params.empty());
        CHECK(r.checkpoint.provenance.source_mix.at("synthetic") == 4);
        CHECK(r.best_epoch >= 1);
    }
}

TEST_CASE("identical seeds give identical loss trajectories") {
    auto samples = tiny_dataset(4, 32, 23);
    FoldPlan plan = make_folds(ids_of(samples), 1, 2);
    TrainConfig tc;
    tc.batch_size = 2;
    tc.epochs = 2;
    tc.opt.lr = 1e-3;
    tc.seed = 11;
    auto r1 = train(samples, plan, tc, tiny_config());
    auto r2 = train(samples, plan, tc, tiny_config());
    REQUIRE(r1[0].loss_history.size() == r2[0].loss_history.size());
    for (size_t i = 0; i < r1[0].loss_history.size(); ++i)
        CHECK(r1[0].loss_history[i] == r2[0].loss_history[i]);  // bitwise
}

TEST_CASE("training with a frozen prefix keeps those parameters bit-identical") {
    auto samples = tiny_dataset(4, 32, 27);
    FoldPlan plan = make_folds(ids_of(samples), 1, 3);
    ModelConfig mc = tiny_config();

    // build an init checkpoint from a fresh model
    WoundSegModel init_model(mc);
    EmaState init_ema(init_model.named_parameters(), 0.999);
    Checkpoint init = checkpoint_from_model(init_model, init_ema, {});

    TrainConfig tc;
    tc.batch_size = 2;
    tc.epochs = 1;
    tc.max_steps = 2;
    tc.opt.lr = 1e-3;
    auto results = train(samples, plan, tc, mc, init, "stem+block1");
    const Checkpoint& final = results[0].checkpoint;
    CHECK(final.provenance.freeze_scope == "stem+block1");

    bool any_changed = false;
    for (size_t i = 0; i < final.params.size(); ++i) {
        const std::string& name = final.params[i].first;
        REQUIRE(name == init.params[i].first);
        bool frozen_scope = name.rfind("encoder.stem1.", 0) == 0 || name.rfind("encoder.stem2.", 0) == 0 ||
                            name.rfind("encoder.block1.", 0) == 0;
        bool identical = true;
        for (int64_t j = 0; j < final.params[i].second.numel(); ++j)
            if (final.params[i].second[j] != init.params[i].second[j]) identical = false;
        if (frozen_scope) {
            INFO(name);
            CHECK(identical);
        } else if (!identical) {
            any_changed = true;
        }
    }
    CHECK(any_changed);
}

TEST_CASE("train rejects incompatible warm starts and unmasked samples") {
    auto samples = tiny_dataset(3, 32, 29);
    FoldPlan plan = make_folds(ids_of(samples), 1, 1);
    TrainConfig tc;
    tc.epochs = 1;

    ModelConfig other = tiny_config();
    other.decoder.embed_dim = 16;
    WoundSegModel m(other);
    EmaState e(m.named_parameters(), 0.999);
    Checkpoint bad_init = checkpoint_from_model(m, e, {});
    CHECK_THROWS(train(samples, plan, tc, tiny_config(), bad_init));

    auto unmasked = samples;
    unmasked[0].mask = MaskBin();
    CHECK_THROWS(train(unmasked, plan, tc, tiny_config()));
}

TEST_CASE("a single optimisation step decreases the full-model loss on a fixed batch") {
    WoundSegModel model(tiny_config());
    auto samples = tiny_dataset(2, 32, 61);
    Tensor x0 = model.merge_image(samples[0].image);
    Tensor gt(Shape{1, 1, 32, 32});
    for (int64_t i = 0; i < samples[0].mask.size(); ++i) gt[i] = samples[0].mask.data[static_cast<size_t>(i)];

    auto loss_of = [&](bool training) {
        DecoderOutput out = model.forward(Var(x0), training);
        return total_loss(out, constant(gt));
    };
    // Adam's first update moves every parameter by ~lr in its descent
    // direction, so "small learning rate" must be small in absolute terms
    AdamWConfig oc;
    oc.lr = 1e-6;
    oc.weight_decay = 0.0;
    AdamW opt(model.named_parameters(), oc);
    double before = loss_of(true).value()[0];
    Var l = loss_of(true);
    opt.zero_grad();
    l.backward();
    opt.step();
    double after = loss_of(true).value()[0];
    CHECK(after < before);
}

TEST_CASE("tta with the identity transform equals a plain forward") {
    WoundSegModel model(tiny_config());
    auto samples = tiny_dataset(1, 32, 31);
    NoGradGuard g;
    Plane tta = tta_infer({&model}, samples[0].image, {FlipTransform::identity});
    Tensor plain = model.forward_image(samples[0].image).main.value();
    for (int64_t i = 0; i < tta.size(); ++i)
        CHECK(tta.data[static_cast<size_t>(i)] == plain[i]);
}

TEST_CASE("tta over two models with three flips matches the enumeration oracle") {
    ModelConfig c1 = tiny_config();
    ModelConfig c2 = tiny_config();
    c2.seed = 99;
    WoundSegModel m1(c1), m2(c2);
    auto samples = tiny_dataset(1, 32, 37);
    const ImageU8& img = samples[0].image;

    NoGradGuard g;
    Plane got = tta_infer({&m1, &m2}, img, tta_flips_default());

    // oracle: hand-enumerate the six (model, transform) pairs
    Plane acc(img.height, img.width, 0.0);
    for (WoundSegModel* m : {&m1, &m2})
        for (FlipTransform t : {FlipTransform::identity, FlipTransform::horizontal, FlipTransform::vertical}) {
            ImageU8 tx = apply_flip(img, t);
            Tensor out = m->forward_image(tx).main.value();
            Plane p(img.height, img.width);
            for (int64_t i = 0; i < p.size(); ++i) p.data[static_cast<size_t>(i)] = out[i];
            p = apply_flip_inverse(p, t);
            for (int64_t i = 0; i < p.size(); ++i) acc.data[static_cast<size_t>(i)] += p.data[static_cast<size_t>(i)];
        }
    for (auto& v : acc.data) v /= 6.0;
    for (int64_t i = 0; i < got.size(); ++i)
        CHECK_THAT(got.data[static_cast<size_t>(i)], Catch::Matchers::WithinAbs(acc.data[static_cast<size_t>(i)], 1e-12));
}

TEST_CASE("tta with the closed flip group commutes with input flips") {
    WoundSegModel model(tiny_config());
    auto samples = tiny_dataset(1, 32, 41);
    const ImageU8& img = samples[0].image;
    NoGradGuard g;
    Plane tta_of_flipped = tta_infer({&model}, hflip_image(img), tta_flips_group());
    Plane flipped_tta = hflip_plane(tta_infer({&model}, img, tta_flips_group()));
    double worst = 0;
    for (int64_t i = 0; i < tta_of_flipped.size(); ++i)
        worst = std::max(worst, std::abs(tta_of_flipped.data[static_cast<size_t>(i)] -
                                         flipped_tta.data[static_cast<size_t>(i)]));
    CHECK(worst < 1e-6);
}

TEST_CASE("fold-ensemble mean is the exact arithmetic mean of member maps") {
    ModelConfig c1 = tiny_config(), c2 = tiny_config();
    c2.seed = 123;
    WoundSegModel m1(c1), m2(c2);
    auto samples = tiny_dataset(1, 32, 43);
    NoGradGuard g;
    Plane ens = tta_infer({&m1, &m2}, samples[0].image, {FlipTransform::identity});
    Tensor a = m1.forward_image(samples[0].image).main.value();
    Tensor b = m2.forward_image(samples[0].image).main.value();
    for (int64_t i = 0; i < ens.size(); ++i)
        CHECK_THAT(ens.data[static_cast<size_t>(i)], Catch::Matchers::WithinAbs((a[i] + b[i]) / 2.0, 1e-15));
}

TEST_CASE("pseudo labelling writes binary masks and a loadable manifest") {
    WoundSegModel model(tiny_config());
    auto samples = tiny_dataset(2, 32, 47);
    fs::path dir = fs::path(CWS_BINARY_DIR) / "scratch" / "pseudo";
    fs::remove_all(dir);
    std::vector<std::pair<std::string, ImageU8>> images{{"a", samples[0].image}, {"b", samples[1].image}};
    DatasetManifest m = pseudo_label({&model}, images, dir.string(), 0.5, {FlipTransform::identity}, "meat");
    REQUIRE(m.entries.size() == 2);
    CHECK(m.entries[0].source == "meat");
    DatasetManifest loaded = load_manifest((dir / "manifest.json").string());
    for (const auto& e : loaded.entries) {
        MaskBin mask = read_mask(loaded.resolve(e.mask).string());
        for (uint8_t v : mask.data) CHECK((v == 0 || v == 1));
    }
}

TEST_CASE("augmentation identity, involution and determinism") {
    auto samples = tiny_dataset(1, 32, 53);
    const Sample& s = samples[0];

    AugmentConfig off;
    Sample same = augment(s, off, 999);
    CHECK(same.image.data == s.image.data);
    CHECK(same.mask.data == s.mask.data);

    // flips are involutions on image and mask
    CHECK(hflip_image(hflip_image(s.image)).data == s.image.data);
    CHECK(vflip_image(vflip_image(s.image)).data == s.image.data);
    CHECK(hflip_mask(hflip_mask(s.mask)).data == s.mask.data);
    CHECK(vflip_mask(vflip_mask(s.mask)).data == s.mask.data);

    AugmentConfig all = AugmentConfig::all_on();
    Sample a1 = augment(s, all, 1234);
    Sample a2 = augment(s, all, 1234);
    CHECK(a1.image.data == a2.image.data);
    CHECK(a1.mask.data == a2.mask.data);
    Sample a3 = augment(s, all, 1235);
    CHECK(a1.image.data != a3.image.data);

    // geometric alignment: mask stays binary and the same size
    CHECK(a1.mask.height == s.mask.height);
    CHECK(a1.mask.width == s.mask.width);
    for (uint8_t v : a1.mask.data) CHECK((v == 0 || v == 1));
}
