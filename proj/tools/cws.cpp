// cws: chronic wound segmentation pipeline front end.
// Subcommands: merge, synth, train, infer, pseudo-label, eval, icc, dist.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>

#include "cws/checkpoint.hpp"
#include "cws/color.hpp"
#include "cws/data.hpp"
#include "cws/imageio.hpp"
#include "cws/metrics.hpp"
#include "cws/model.hpp"
#include "cws/reliability.hpp"
#include "cws/train.hpp"

namespace fs = std::filesystem;
using namespace cws;

namespace {

std::vector<fs::path> list_images(const fs::path& input) {
    std::vector<fs::path> files;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input)) {
            std::string ext = e.path().extension().string();
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(input);
    }
    if (files.empty()) throw std::runtime_error("no images found under " + input.string());
    return files;
}

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig t;
    if (j.contains("lr")) t.opt.lr = j["lr"].get<double>();
    if (j.contains("epsilon")) t.opt.epsilon = j["epsilon"].get<double>();
    if (j.contains("weight_decay")) t.opt.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<int>();
    if (j.contains("epochs")) t.epochs = j["epochs"].get<int>();
    if (j.contains("ema_decay")) t.ema_decay = j["ema_decay"].get<double>();
    if (j.contains("seed")) t.seed = j["seed"].get<uint64_t>();
    if (j.contains("edge_weight")) t.edge_weight = j["edge_weight"].get<double>();
    if (j.contains("image_size")) t.image_size = j["image_size"].get<int>();
    if (j.contains("max_steps")) t.max_steps = j["max_steps"].get<int>();
    if (j.contains("val_every")) t.val_every = j["val_every"].get<int>();
    if (j.contains("augment")) {
        const auto& a = j["augment"];
        t.aug.center_crop = a.value("center_crop", false);
        t.aug.random_crop = a.value("random_crop", false);
        t.aug.hflip = a.value("hflip", false);
        t.aug.vflip = a.value("vflip", false);
        t.aug.shift_scale_rotate = a.value("shift_scale_rotate", false);
        t.aug.gauss_noise = a.value("gauss_noise", false);
        t.aug.brightness_contrast = a.value("brightness_contrast", false);
        t.aug.clahe = a.value("clahe", false);
        t.aug.multi_scale = a.value("multi_scale", false);
    }
    return t;
}

struct ModelFlagOverrides {
    std::string channels;
    int exponent = 0;  // 0 = not given
    bool swap_rb = false;
    bool swap_rb_given = false;
    std::string schedule_path;
    uint64_t seed = 0;
    bool seed_given = false;
};

ModelConfig resolve_model_config(const std::string& config_path, const ModelFlagOverrides& f) {
    ModelConfig cfg;  // defaults
    if (!config_path.empty()) cfg = model_config_from_json(load_json(config_path));
    if (!f.channels.empty()) cfg.channel_mode = parse_channel_mode(f.channels);
    if (f.exponent > 0) cfg.ey.exponent = f.exponent;
    if (f.swap_rb_given) cfg.ey.swap_rb = f.swap_rb;
    if (!f.schedule_path.empty()) cfg.schedule = load_schedule(f.schedule_path);
    if (f.seed_given) cfg.seed = f.seed;
    cfg.validate();
    return cfg;
}

std::vector<FlipTransform> flips_for(bool tta, bool tta_group) {
    if (tta_group) return tta_flips_group();
    if (tta) return tta_flips_default();
    return {FlipTransform::identity};
}

int cmd_merge(const std::string& input, const std::string& out_dir, const std::string& channels,
              int exponent, bool swap_rb, bool write_diff) {
    fs::create_directories(out_dir);
    ImageU8 img = read_image(input);
    ChannelMode mode = parse_channel_mode(channels);
    EyConfig ey{exponent, swap_rb};
    MergedTensor merged = merge_channels(img, mode, ey);

    std::string stem = fs::path(input).stem().string();
    nlohmann::json sidecar;
    sidecar["channels"] = merged.channels;
    sidecar["mode"] = channel_mode_name(mode);
    sidecar["exponent"] = exponent;
    sidecar["swap_rb"] = swap_rb;
    sidecar["files"] = nlohmann::json::array();
    int H = img.height, W = img.width;
    for (size_t c = 0; c < merged.channels.size(); ++c) {
        Plane p(H, W);
        for (int64_t i = 0; i < p.size(); ++i)
            p.data[static_cast<size_t>(i)] = merged.data[static_cast<int64_t>(c) * H * W + i] * 255.0;
        std::string name = stem + "_" + merged.channels[c] + ".png";
        write_plane_png((fs::path(out_dir) / name).string(), p);
        sidecar["files"].push_back(name);
    }
    if (write_diff) {
        Plane e = derive_ey(img, EyConfig{exponent, false});
        Plane es = derive_ey(img, EyConfig{exponent, true});
        std::string name = stem + "_eY_absdiff.png";
        write_plane_png((fs::path(out_dir) / name).string(), plane_absdiff(e, es));
        sidecar["files"].push_back(name);
    }
    std::ofstream side((fs::path(out_dir) / (stem + "_channels.json")).string());
    side << sidecar.dump(2) << '\n';
    std::cout << "merged " << input << " -> " << out_dir << " (" << merged.channels.size()
              << " channels)\n";
    return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& out_dir, int folds,
              const TrainConfig& tcfg, const ModelConfig& mcfg, const std::string& init_path,
              const std::string& freeze_scope) {
    DatasetManifest manifest = load_manifest(manifest_path);
    auto counts = manifest.split_counts();
    std::cout << "manifest splits:";
    for (const auto& [split, n] : counts) std::cout << ' ' << split << '=' << n;
    std::cout << '\n';

    auto samples = load_split(manifest, "train", tcfg.image_size);
    if (samples.empty()) throw std::runtime_error("manifest has no train entries");
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    FoldPlan plan = make_folds(ids, folds, tcfg.seed);
    plan.validate_partition(ids);

    std::optional<Checkpoint> init;
    if (!init_path.empty()) init = load_checkpoint(init_path);

    fs::create_directories(out_dir);
    auto results = train(samples, plan, tcfg, mcfg, init, freeze_scope);

    nlohmann::json summary;
    summary["folds"] = nlohmann::json::array();
    for (size_t f = 0; f < results.size(); ++f) {
        std::string name = "fold_" + std::to_string(f) + ".ckpt";
        save_checkpoint((fs::path(out_dir) / name).string(), results[f].checkpoint);
        summary["folds"].push_back({{"checkpoint", name},
                                    {"best_epoch", results[f].best_epoch},
                                    {"val_iou", results[f].best_val_iou},
                                    {"val_dsc", results[f].best_val_dsc}});
        std::cout << "fold " << f << ": best epoch " << results[f].best_epoch << " val_iou "
                  << std::fixed << std::setprecision(4) << results[f].best_val_iou << " val_dsc "
                  << results[f].best_val_dsc << " -> " << name << '\n';
    }
    std::ofstream sf((fs::path(out_dir) / "summary.json").string());
    sf << summary.dump(2) << '\n';
    return 0;
}

std::vector<std::unique_ptr<WoundSegModel>> load_models(const std::vector<std::string>& ckpt_paths,
                                                        const std::string& ensemble_dir,
                                                        const std::string& channels_flag, bool use_ema) {
    std::vector<std::string> paths = ckpt_paths;
    if (!ensemble_dir.empty()) {
        std::vector<fs::path> found;
        for (const auto& e : fs::directory_iterator(ensemble_dir))
            if (e.path().extension() == ".ckpt") found.push_back(e.path());
        std::sort(found.begin(), found.end());
        for (const auto& p : found) paths.push_back(p.string());
    }
    if (paths.empty()) throw std::runtime_error("no checkpoints given (use --checkpoint or --ensemble)");
    std::vector<std::unique_ptr<WoundSegModel>> models;
    for (const auto& p : paths) {
        Checkpoint ck = load_checkpoint(p);
        if (!channels_flag.empty() && parse_channel_mode(channels_flag) != ck.config.channel_mode)
            throw std::runtime_error("channel-mode mismatch: checkpoint " + p + " was trained with " +
                                     channel_mode_name(ck.config.channel_mode) + ", requested " +
                                     channels_flag);
        auto model = std::make_unique<WoundSegModel>(ck.config);
        apply_checkpoint(ck, *model, use_ema);
        models.push_back(std::move(model));
    }
    return models;
}

int cmd_infer(const std::vector<std::string>& ckpts, const std::string& ensemble_dir,
              const std::string& input, const std::string& out_dir, bool tta, bool tta_group,
              double threshold, bool use_ema, bool save_prob, const std::string& channels_flag) {
    auto models = load_models(ckpts, ensemble_dir, channels_flag, use_ema);
    std::vector<WoundSegModel*> raw;
    for (auto& m : models) raw.push_back(m.get());
    auto flips = flips_for(tta, tta_group);

    fs::create_directories(out_dir);
    auto files = list_images(input);
    for (const auto& path : files) {
        ImageU8 img = read_image(path.string());
        Plane prob = tta_infer(raw, img, flips);
        std::string stem = path.stem().string();
        write_mask_png((fs::path(out_dir) / (stem + ".png")).string(), binarize(prob, threshold));
        if (save_prob) write_prob_png((fs::path(out_dir) / (stem + "_prob.png")).string(), prob);
    }
    std::cout << "inference complete: " << files.size() << " images -> " << out_dir << " ("
              << raw.size() << " model(s), " << flips.size() << " transform(s))\n";
    return 0;
}

int cmd_pseudo_label(const std::vector<std::string>& ckpts, const std::string& input,
                     const std::string& out_dir, double threshold, bool tta, bool tta_group,
                     const std::string& source) {
    auto models = load_models(ckpts, "", "", false);
    std::vector<WoundSegModel*> raw;
    for (auto& m : models) raw.push_back(m.get());
    std::vector<std::pair<std::string, ImageU8>> images;
    for (const auto& path : list_images(input))
        images.emplace_back(path.stem().string(), read_image(path.string()));
    DatasetManifest m = pseudo_label(raw, images, out_dir, threshold, flips_for(tta, tta_group), source);
    std::cout << "pseudo-labelled " << m.entries.size() << " images -> " << out_dir << '\n';
    return 0;
}

int cmd_eval(const std::string& gt_dir, const std::string& pred_dir, const std::string& out_csv) {
    std::vector<std::tuple<std::string, MaskBin, MaskBin>> pairs;
    std::vector<fs::path> gt_files;
    for (const auto& e : fs::directory_iterator(gt_dir))
        if (e.path().extension() == ".png") gt_files.push_back(e.path());
    std::sort(gt_files.begin(), gt_files.end());
    for (const auto& g : gt_files) {
        fs::path p = fs::path(pred_dir) / g.filename();
        if (!fs::exists(p)) throw std::runtime_error("missing prediction for " + g.filename().string());
        pairs.emplace_back(g.stem().string(), read_mask(g.string()), read_mask(p.string()));
    }
    EvalSummary s = evaluate_set(pairs);
    if (!out_csv.empty()) write_eval_csv(out_csv, s);
    std::cout << std::fixed << std::setprecision(4);
    std::cout << "images " << s.records.size() << " mean_iou " << s.mean_iou << " mean_dsc " << s.mean_dsc
              << " mean_fpe " << s.mean_fpe << " mean_fne " << s.mean_fne << " (fne undefined for "
              << s.fne_skipped << ")\n";
    if (!s.blank_audit.empty()) {
        std::cout << "blank-mask audit (empty gt, nonempty prediction):";
        for (const auto& id : s.blank_audit) std::cout << ' ' << id;
        std::cout << '\n';
    }
    return 0;
}

int cmd_icc(const std::string& ratings_path, const std::string& out_csv) {
    RatingsMatrix raw = load_ratings_csv(ratings_path);
    RatingsMatrix cc = complete_cases(raw);
    int dropped = raw.n() - cc.n();
    AnovaTable t = anova_two_way(cc);
    ReliabilityResult co = icc_consistency(t);
    ReliabilityResult ag = icc_agreement(t);

    std::cout << std::fixed << std::setprecision(4);
    std::cout << "subjects " << t.n << " raters " << t.k << " (listwise deleted " << dropped << ")\n";
    std::cout << "consistency ICC " << co.icc << " [" << co.lo95 << ", " << co.hi95 << "] "
              << band_name(co.band) << '\n';
    std::cout << "agreement   ICC " << ag.icc << " [" << ag.lo95 << ", " << ag.hi95 << "] "
              << band_name(ag.band) << '\n';

    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        if (!out) throw std::runtime_error("cannot write " + out_csv);
        out << std::fixed << std::setprecision(4);
        out << "Type,ICC,LB95%CI,UB95%CI,Band\n";
        out << "Co," << co.icc << ',' << co.lo95 << ',' << co.hi95 << ',' << band_name(co.band) << '\n';
        out << "Ag," << ag.icc << ',' << ag.lo95 << ',' << ag.hi95 << ',' << band_name(ag.band) << '\n';
    }
    return 0;
}

std::set<int> parse_band(const std::string& band) {
    if (band == "5") return {5};
    if (band == "4-5") return {4, 5};
    throw std::runtime_error("unknown star band '" + band + "' (expected 5 or 4-5)");
}

int cmd_dist(const std::string& ratings_path, const std::string& compare_path,
             const std::string& band_str, const std::string& out_csv) {
    std::set<int> band = parse_band(band_str);
    std::string label = band_str == "5" ? "5 Star" : "4-5 Star";
    RatingsMatrix base = load_ratings_csv(ratings_path);
    DistributionReport a = rating_distribution(base, band);

    std::cout << std::fixed << std::setprecision(2);
    std::ostringstream csv;
    csv << std::fixed << std::setprecision(2);
    if (compare_path.empty()) {
        csv << "Rater," << label << " %,In Band,Rated\n";
        for (size_t i = 0; i < a.raters.size(); ++i) {
            std::cout << a.raters[i] << ": " << a.band_percent[i] << "% in " << label << " band\n";
            csv << a.raters[i] << ',' << a.band_percent[i] << ',' << a.band_count[i] << ','
                << a.rated_count[i] << '\n';
        }
    } else {
        RatingsMatrix prop = load_ratings_csv(compare_path);
        DistributionReport b = rating_distribution(prop, band);
        if (a.raters != b.raters)
            throw std::runtime_error("dist: the two ratings files disagree on the rater set");
        csv << "Rater,DFUS " << label << ",CWS " << label << ",Improvement %\n";
        for (size_t i = 0; i < a.raters.size(); ++i) {
            double improvement = b.band_percent[i] - a.band_percent[i];
            std::cout << a.raters[i] << ": " << a.band_percent[i] << "% -> " << b.band_percent[i]
                      << "% (improvement " << improvement << "%)\n";
            csv << a.raters[i] << ',' << a.band_percent[i] << "%," << b.band_percent[i] << "%,"
                << improvement << "%\n";
        }
    }
    for (const auto& p : a.pairs)
        std::cout << "raters " << p.rater_a << '/' << p.rater_b << ": " << p.exact << " exact, "
                  << p.off_by_one << " off by one, " << p.larger << " larger (of " << p.rated << ")\n";
    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        if (!out) throw std::runtime_error("cannot write " + out_csv);
        out << csv.str();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chronic wound segmentation pipeline"};
    app.require_subcommand(1);

    // merge
    auto* merge = app.add_subcommand("merge", "convert an RGB image into merged colour-space planes");
    std::string m_input, m_out, m_channels = "RGB+eY";
    int m_exponent = 5;
    bool m_swap = false, m_diff = false;
    merge->add_option("--input", m_input, "input image (PNG/JPEG)")->required();
    merge->add_option("--out", m_out, "output directory")->required();
    merge->add_option("--channels", m_channels,
                      "channel mode (RGB, RGB+A, RGB+Y, RGB+Y+A, RGB+eY, RGB+eY+A)");
    merge->add_option("--exponent", m_exponent, "eY exponent (default 5)");
    merge->add_flag("--swap-rb", m_swap, "swap R and B luminance coefficients for eY");
    merge->add_flag("--diff", m_diff, "also write |eY - eY_swapped| difference map");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic desk-scale dataset");
    SynthConfig sy;
    std::string s_out;
    synth->add_option("--n", sy.n, "number of samples")->required();
    synth->add_option("--out", s_out, "output directory")->required();
    synth->add_option("--size", sy.size, "square image size (default 64)");
    synth->add_option("--seed", sy.seed, "RNG seed (default 7)");
    synth->add_option("--empty-frac", sy.empty_frac, "fraction of samples with empty masks");
    synth->add_option("--blob-min", sy.blob_min_frac, "min positive-area fraction");
    synth->add_option("--blob-max", sy.blob_max_frac, "max positive-area fraction");
    synth->add_option("--split", sy.split, "split tag for the manifest (default train)");
    synth->add_option("--source", sy.source, "source tag (default synthetic)");

    // train
    auto* tr = app.add_subcommand("train", "train fold models from a manifest");
    std::string t_manifest, t_out, t_model_cfg, t_train_cfg, t_init, t_freeze = "none", t_budget;
    int t_folds = 5;
    ModelFlagOverrides t_flags;
    double t_lr = -1, t_ema = -1, t_edge = -1;
    int t_epochs = -1, t_batch = -1, t_imgsize = -1, t_max_steps = -1;
    bool t_augment = false, t_verbose = false;
    tr->add_option("--manifest", t_manifest, "dataset manifest JSON")->required();
    tr->add_option("--out", t_out, "output directory for checkpoints")->required();
    tr->add_option("--folds", t_folds, "cross-validation folds (default 5)");
    tr->add_option("--model-config", t_model_cfg, "model config JSON file");
    tr->add_option("--train-config", t_train_cfg, "training config JSON file");
    tr->add_option("--channels", t_flags.channels, "channel mode override");
    tr->add_option("--exponent", t_flags.exponent, "eY exponent override (default 5)");
    auto* swopt = tr->add_flag("--swap-rb", t_flags.swap_rb, "swap R/B luminance coefficients");
    tr->add_option("--schedule", t_flags.schedule_path, "block schedule JSON override");
    auto* seedopt = tr->add_option("--seed", t_flags.seed, "seed override");
    tr->add_option("--lr", t_lr, "learning rate override");
    tr->add_option("--epochs", t_epochs, "epoch count override");
    tr->add_option("--epochs-budget", t_budget, "named budget: smoke, small or full");
    tr->add_option("--batch-size", t_batch, "batch size override");
    tr->add_option("--ema-decay", t_ema, "EMA decay override");
    tr->add_option("--edge-weight", t_edge, "edge loss weight override");
    tr->add_option("--image-size", t_imgsize, "square resize target (0 keeps native)");
    tr->add_option("--max-steps", t_max_steps, "optimisation step budget");
    tr->add_flag("--augment", t_augment, "enable the full nine-transform augmentation");
    tr->add_option("--init", t_init, "warm-start checkpoint");
    tr->add_option("--freeze", t_freeze, "freeze scope: none, stem or stem+block1");
    tr->add_flag("--verbose", t_verbose, "per-epoch logging");

    // infer
    auto* inf = app.add_subcommand("infer", "run segmentation inference");
    std::vector<std::string> i_ckpts;
    std::string i_ensemble, i_input, i_out, i_channels;
    bool i_tta = false, i_tta_group = false, i_ema = false, i_prob = false;
    double i_threshold = 0.5;
    inf->add_option("--checkpoint", i_ckpts, "model checkpoint (repeatable for ensembles)");
    inf->add_option("--ensemble", i_ensemble, "directory of .ckpt files to ensemble");
    inf->add_option("--input", i_input, "image file or directory")->required();
    inf->add_option("--out", i_out, "output directory")->required();
    inf->add_flag("--tta", i_tta, "test-time augmentation (identity, H, V)");
    inf->add_flag("--tta-group", i_tta_group, "TTA over the closed flip group (identity, H, V, HV)");
    inf->add_option("--threshold", i_threshold, "binarisation threshold (default 0.5)");
    inf->add_flag("--ema", i_ema, "use the EMA shadow parameters");
    inf->add_flag("--save-prob", i_prob, "also write probability maps");
    inf->add_option("--channels", i_channels, "expected channel mode (must match the checkpoint)");

    // pseudo-label
    auto* pl = app.add_subcommand("pseudo-label", "generate training masks for unlabelled images");
    std::vector<std::string> p_ckpts;
    std::string p_input, p_out, p_source = "pseudo";
    bool p_tta = false, p_tta_group = false;
    double p_threshold = 0.5;
    pl->add_option("--checkpoint", p_ckpts, "model checkpoint (repeatable)")->required();
    pl->add_option("--input", p_input, "image file or directory")->required();
    pl->add_option("--out", p_out, "output dataset directory")->required();
    pl->add_option("--threshold", p_threshold, "binarisation threshold (default 0.5)");
    pl->add_flag("--tta", p_tta, "test-time augmentation");
    pl->add_flag("--tta-group", p_tta_group, "TTA over the closed flip group");
    pl->add_option("--source", p_source, "source tag for the manifest (e.g. meat, gan)");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate predictions against ground truth masks");
    std::string e_gt, e_pred, e_out;
    ev->add_option("--gt", e_gt, "ground truth mask directory")->required();
    ev->add_option("--pred", e_pred, "prediction mask directory")->required();
    ev->add_option("--out", e_out, "summary CSV path");

    // icc
    auto* ic = app.add_subcommand("icc", "inter-rater reliability from a ratings CSV");
    std::string c_ratings, c_out;
    ic->add_option("--ratings", c_ratings, "ratings CSV (image_id,rater_id,rating)")->required();
    ic->add_option("--out", c_out, "report CSV path");

    // dist
    auto* di = app.add_subcommand("dist", "rating distribution analysis");
    std::string d_ratings, d_compare, d_band = "5", d_out;
    di->add_option("--ratings", d_ratings, "baseline ratings CSV")->required();
    di->add_option("--compare", d_compare, "proposed-model ratings CSV for improvement columns");
    di->add_option("--band", d_band, "star band: 5 or 4-5 (default 5)");
    di->add_option("--out", d_out, "report CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (merge->parsed()) return cmd_merge(m_input, m_out, m_channels, m_exponent, m_swap, m_diff);
        if (synth->parsed()) {
            synth_dataset(sy, s_out);
            std::cout << "synthesised " << sy.n << " samples -> " << s_out << '\n';
            return 0;
        }
        if (tr->parsed()) {
            t_flags.swap_rb_given = swopt->count() > 0;
            t_flags.seed_given = seedopt->count() > 0;
            ModelConfig mcfg = resolve_model_config(t_model_cfg, t_flags);
            TrainConfig tcfg;
            if (!t_train_cfg.empty()) tcfg = train_config_from_json(load_json(t_train_cfg));
            if (!t_budget.empty()) {
                if (t_budget == "smoke") {
                    tcfg.epochs = 1;
                    tcfg.max_steps = 2;
                } else if (t_budget == "small") {
                    tcfg.epochs = 8;
                    tcfg.max_steps = 60;
                } else if (t_budget != "full") {
                    throw std::runtime_error("unknown epochs budget '" + t_budget + "'");
                }
            }
            if (t_lr >= 0) tcfg.opt.lr = t_lr;
            if (t_epochs > 0) tcfg.epochs = t_epochs;
            if (t_batch > 0) tcfg.batch_size = t_batch;
            if (t_ema > 0) tcfg.ema_decay = t_ema;
            if (t_edge >= 0) tcfg.edge_weight = t_edge;
            if (t_imgsize >= 0) tcfg.image_size = t_imgsize;
            if (t_max_steps >= 0) tcfg.max_steps = t_max_steps;
            if (t_augment) tcfg.aug = AugmentConfig::all_on();
            if (t_flags.seed_given) tcfg.seed = t_flags.seed;
            tcfg.verbose = t_verbose;
            return cmd_train(t_manifest, t_out, t_folds, tcfg, mcfg, t_init, t_freeze);
        }
        if (inf->parsed())
            return cmd_infer(i_ckpts, i_ensemble, i_input, i_out, i_tta, i_tta_group, i_threshold, i_ema,
                             i_prob, i_channels);
        if (pl->parsed())
            return cmd_pseudo_label(p_ckpts, p_input, p_out, p_threshold, p_tta, p_tta_group, p_source);
        if (ev->parsed()) return cmd_eval(e_gt, e_pred, e_out);
        if (ic->parsed()) return cmd_icc(c_ratings, c_out);
        if (di->parsed()) return cmd_dist(d_ratings, d_compare, d_band, d_out);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return 0;
}
