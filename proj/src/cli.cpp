#include "hr3d/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "hr3d/analysis.hpp"
#include "hr3d/common.hpp"
#include "hr3d/inference.hpp"
#include "hr3d/io.hpp"
#include "hr3d/network.hpp"
#include "hr3d/training.hpp"

namespace fs = std::filesystem;

namespace hr3d {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw NumericError("unprintable value");
    return std::string(buf, p);
}

std::int64_t cfg_i64(const Config& c, const std::string& key) {
    const std::string& s = c.at(key);
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw UsageError("config key '" + key + "' needs an integer, got '" + s + "'");
    return v;
}

std::uint64_t cfg_u64(const Config& c, const std::string& key) {
    const std::string& s = c.at(key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw UsageError("config key '" + key + "' needs a non-negative integer, got '" + s + "'");
    return v;
}

double cfg_f64(const Config& c, const std::string& key) {
    const std::string& s = c.at(key);
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "' needs a number, got '" + s + "'");
    }
}

bool cfg_bool(const Config& c, const std::string& key) {
    const std::string& s = c.at(key);
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false") return false;
    throw UsageError("config key '" + key + "' needs 0 or 1, got '" + s + "'");
}

// ---- train ----------------------------------------------------------------------

struct TrainArgs {
    std::string data, out, config;
    std::string arch{"default"}, loss{"dice"}, dice_mode{"exclude_absent"};
    std::int64_t subvolume{24}, iters{500}, workers{1}, val_every{50}, patience{0};
    double target_dcs{-1.0}, lr{0.01}, beta1{0.9}, beta2{0.999}, eps{1e-8};
    double rotate{10.0}, scale_lo{0.9}, scale_hi{1.1};
    bool no_augment{false}, no_standardize{false};
    std::uint64_t seed{1};
};

const std::vector<std::string> kTrainKeys = {
    "arch",     "loss",    "dice_mode", "subvolume",  "iters",    "workers",
    "val_every", "patience", "target_train_dcs", "seed", "lr",     "beta1",
    "beta2",    "eps",     "augment",   "rotate_deg", "scale_lo", "scale_hi",
    "standardize", "data"};

int run_train(const TrainArgs& a, const CLI::App* cmd) {
    Config cfg;
    // defaults, overlaid by the config file, overlaid by explicit flags
    cfg["arch"] = "default";
    cfg["loss"] = "dice";
    cfg["dice_mode"] = "exclude_absent";
    cfg["subvolume"] = "24";
    cfg["iters"] = "500";
    cfg["workers"] = "1";
    cfg["val_every"] = "50";
    cfg["patience"] = "0";
    cfg["target_train_dcs"] = "-1";
    cfg["seed"] = "1";
    cfg["lr"] = fmt_double(0.01);
    cfg["beta1"] = fmt_double(0.9);
    cfg["beta2"] = fmt_double(0.999);
    cfg["eps"] = fmt_double(1e-8);
    cfg["augment"] = "1";
    cfg["rotate_deg"] = "10";
    cfg["scale_lo"] = fmt_double(0.9);
    cfg["scale_hi"] = fmt_double(1.1);
    cfg["standardize"] = "1";

    if (!a.config.empty()) {
        for (const auto& [k, v] : load_config(a.config)) {
            bool known = k == "data";
            for (const auto& key : kTrainKeys) known = known || k == key;
            if (!known) throw UsageError("unknown config key '" + k + "'");
            cfg[k] = v;
        }
    }

    auto passed = [&](const std::string& flag) { return cmd->count(flag) > 0; };
    if (passed("--data")) cfg["data"] = a.data;
    if (passed("--arch")) cfg["arch"] = a.arch;
    if (passed("--loss")) cfg["loss"] = a.loss;
    if (passed("--dice-mode")) cfg["dice_mode"] = a.dice_mode;
    if (passed("--subvolume")) cfg["subvolume"] = std::to_string(a.subvolume);
    if (passed("--iters")) cfg["iters"] = std::to_string(a.iters);
    if (passed("--workers")) cfg["workers"] = std::to_string(a.workers);
    if (passed("--val-every")) cfg["val_every"] = std::to_string(a.val_every);
    if (passed("--patience")) cfg["patience"] = std::to_string(a.patience);
    if (passed("--target-dcs")) cfg["target_train_dcs"] = fmt_double(a.target_dcs);
    if (passed("--seed")) cfg["seed"] = std::to_string(a.seed);
    if (passed("--lr")) cfg["lr"] = fmt_double(a.lr);
    if (passed("--beta1")) cfg["beta1"] = fmt_double(a.beta1);
    if (passed("--beta2")) cfg["beta2"] = fmt_double(a.beta2);
    if (passed("--eps")) cfg["eps"] = fmt_double(a.eps);
    if (passed("--rotate")) cfg["rotate_deg"] = fmt_double(a.rotate);
    if (passed("--scale-lo")) cfg["scale_lo"] = fmt_double(a.scale_lo);
    if (passed("--scale-hi")) cfg["scale_hi"] = fmt_double(a.scale_hi);
    if (a.no_augment) cfg["augment"] = "0";
    if (a.no_standardize) cfg["standardize"] = "0";

    if (!cfg.count("data")) throw UsageError("train needs --data or a 'data' config key");
    if (a.out.empty()) throw UsageError("train needs --out");
    // rerunning from the emitted config must not depend on the working directory
    cfg["data"] = fs::absolute(cfg.at("data")).lexically_normal().string();

    TrainConfig tc;
    tc.arch = variant_from_string(cfg.at("arch"));
    tc.loss = cfg.at("loss");
    if (tc.loss != "dice" && tc.loss != "xent")
        throw UsageError("unknown loss '" + tc.loss + "' (expected dice or xent)");
    tc.subvolume = cfg_i64(cfg, "subvolume");
    tc.iters = cfg_i64(cfg, "iters");
    tc.workers = cfg_i64(cfg, "workers");
    tc.val_every = cfg_i64(cfg, "val_every");
    tc.patience = cfg_i64(cfg, "patience");
    tc.target_train_dcs = cfg_f64(cfg, "target_train_dcs");
    tc.seed = cfg_u64(cfg, "seed");
    tc.adam.lr = cfg_f64(cfg, "lr");
    tc.adam.beta1 = cfg_f64(cfg, "beta1");
    tc.adam.beta2 = cfg_f64(cfg, "beta2");
    tc.adam.eps = cfg_f64(cfg, "eps");
    tc.augment.enabled = cfg_bool(cfg, "augment");
    tc.augment.rotate_deg = cfg_f64(cfg, "rotate_deg");
    tc.augment.scale_lo = cfg_f64(cfg, "scale_lo");
    tc.augment.scale_hi = cfg_f64(cfg, "scale_hi");
    tc.standardize = cfg_bool(cfg, "standardize");
    const std::string dm = cfg.at("dice_mode");
    if (dm == "exclude_absent")
        tc.dice_mode = DiceMode::kExcludeAbsent;
    else if (dm == "smooth")
        tc.dice_mode = DiceMode::kSmooth;
    else
        throw UsageError("dice_mode must be exclude_absent or smooth, got '" + dm + "'");

    fs::create_directories(a.out);
    save_config((fs::path(a.out) / "resolved.cfg").string(), cfg);
    std::cout << "resolved configuration:\n" << canonical_config(cfg);

    DatasetManifest data = load_manifest(cfg.at("data"));
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r = train(data, tc, a.out);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::cout << "steps: " << r.steps_run << "\n";
    std::cout << "elapsed_s: " << fmt_double(elapsed) << "\n";
    std::cout << "final_train_dcs: " << fmt_double(r.final_train_dcs) << "\n";
    if (r.best_val_dcs >= 0) std::cout << "best_val_dcs: " << fmt_double(r.best_val_dcs) << "\n";
    std::cout << "checkpoint: " << r.checkpoint_path << "\n";
    std::cout << "metrics: " << r.metrics_path << "\n";
    return 0;
}

// ---- other commands -------------------------------------------------------------

Volume read_image_volume(const std::string& path) {
    Volume v = read_volume(path);
    if (v.dtype != VoxelType::kF32) throw DataError(path + " is not an image volume");
    return v;
}

int run_count_params(const std::string& arch, std::int64_t classes) {
    ArchitectureSpec spec = build_highres3dnet(variant_from_string(arch), classes);
    Rng rng(0);
    ParameterStore store = init_parameters(spec, rng);
    const std::int64_t n = count_parameters(store);
    std::cout << "parameters: " << n << "\n";
    char band[32];
    std::snprintf(band, sizeof(band), "%.2f", static_cast<double>(n) / 1e6);
    std::cout << "approx: " << band << "M\n";
    return 0;
}

int run_analyze_rf(const std::string& arch, std::int64_t classes, const std::string& out) {
    ArchitectureSpec spec = build_highres3dnet(variant_from_string(arch), classes);
    RFHistogram h = rf_histogram(spec);
    write_rf_histogram_csv(h, out);
    std::cout << "paths: " << h.paths << "\n";
    std::cout << "extent_min: " << h.counts.begin()->first << "\n";
    std::cout << "extent_max: " << h.counts.rbegin()->first << "\n";
    std::cout << "csv: " << out << "\n";
    return 0;
}

int run_analyze_border(const std::string& ckpt_path, const std::string& data_path,
                       const std::string& split, const std::vector<std::int64_t>& borders,
                       const PaddingPolicy& policy, const std::string& out) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    DatasetManifest data = load_manifest(data_path);
    auto curve = border_effect_curve(ckpt, data, split, borders, policy);
    write_border_curve_csv(curve, out);
    std::cout << "plateau_border: " << detect_plateau(curve) << "\n";
    std::cout << "csv: " << out << "\n";
    return 0;
}

int run_analyze_curve(const std::string& ckpt_path, const std::string& data_path,
                      const std::string& split, std::vector<std::int64_t> counts,
                      std::int64_t samples, const std::vector<double>& thresholds,
                      std::uint64_t seed, const PaddingPolicy& policy,
                      const std::string& out_samples, const std::string& out_accuracy) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    DatasetManifest data = load_manifest(data_path);

    auto table = samples_vs_dcs(ckpt, data, split, counts, seed, policy);
    {
        std::ofstream f(out_samples);
        if (!f) throw DataError("cannot write " + out_samples);
        f << "samples,mean_dcs\n";
        for (const auto& [m, dcs] : table) f << m << "," << fmt_double(dcs) << "\n";
    }

    std::ofstream f(out_accuracy);
    if (!f) throw DataError("cannot write " + out_accuracy);
    f << "volume,threshold,accuracy,retained,defined\n";
    const auto entries = data.split(split);
    for (std::size_t v = 0; v < entries.size(); ++v) {
        Volume img = read_image_volume(data.resolve(entries[v].image));
        Volume lab = read_volume(data.resolve(entries[v].label));
        UncertaintyMap map = mc_sample_predict(ckpt, img.image, samples,
                                               seed + static_cast<std::uint64_t>(v), policy);
        auto curve = accuracy_vs_uncertainty(map, LabelVolume{lab.labels, data.num_classes},
                                             thresholds);
        for (const auto& p : curve)
            f << v << "," << fmt_double(p.threshold) << "," << fmt_double(p.accuracy) << ","
              << fmt_double(p.retained) << "," << (p.defined ? 1 : 0) << "\n";
    }
    if (!f) throw DataError("failed writing " + out_accuracy);
    std::cout << "samples_csv: " << out_samples << "\n";
    std::cout << "accuracy_csv: " << out_accuracy << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"dilated-convolution volumetric segmentation workbench"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "write a synthetic labelled dataset");
    SyntheticSpec gspec;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--size", gspec.size, "volume side length");
    gen->add_option("--classes", gspec.num_classes, "number of classes");
    gen->add_option("--train", gspec.train_count, "training volumes");
    gen->add_option("--val", gspec.val_count, "validation volumes");
    gen->add_option("--test", gspec.test_count, "test volumes");
    gen->add_option("--seed", gspec.seed, "generator seed");
    gen->add_option("--noise", gspec.noise_sigma, "intensity noise sigma");

    // train
    auto* tr = app.add_subcommand("train", "fit a model on a dataset");
    TrainArgs ta;
    tr->add_option("--data", ta.data, "dataset manifest");
    tr->add_option("--out", ta.out, "run output directory")->required();
    tr->add_option("--config", ta.config, "key=value config file");
    tr->add_option("--arch", ta.arch, "default | dropout | nores");
    tr->add_option("--loss", ta.loss, "dice | xent");
    tr->add_option("--dice-mode", ta.dice_mode, "exclude_absent | smooth");
    tr->add_option("--subvolume", ta.subvolume, "training crop size");
    tr->add_option("--iters", ta.iters, "optimisation steps");
    tr->add_option("--workers", ta.workers, "gradient workers (1 or 2)");
    tr->add_option("--val-every", ta.val_every, "validation period");
    tr->add_option("--patience", ta.patience, "validation plateau patience (0 = off)");
    tr->add_option("--target-dcs", ta.target_dcs, "stop once smoothed train DCS reaches this");
    tr->add_option("--seed", ta.seed, "training seed");
    tr->add_option("--lr", ta.lr, "Adam learning rate");
    tr->add_option("--beta1", ta.beta1, "Adam beta1");
    tr->add_option("--beta2", ta.beta2, "Adam beta2");
    tr->add_option("--eps", ta.eps, "Adam epsilon");
    tr->add_option("--rotate", ta.rotate, "augmentation rotation range (degrees)");
    tr->add_option("--scale-lo", ta.scale_lo, "augmentation scale lower bound");
    tr->add_option("--scale-hi", ta.scale_hi, "augmentation scale upper bound");
    tr->add_flag("--no-augment", ta.no_augment, "disable augmentation");
    tr->add_flag("--no-standardize", ta.no_standardize, "disable intensity standardisation");

    // predict
    auto* pr = app.add_subcommand("predict", "segment a volume with a checkpoint");
    std::string pr_ckpt, pr_in, pr_out;
    PaddingPolicy pr_pol;
    pr->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
    pr->add_option("--in", pr_in, "input image volume")->required();
    pr->add_option("--out", pr_out, "output label volume")->required();
    pr->add_option("--pad", pr_pol.pad, "zero padding per face");
    pr->add_option("--tile", pr_pol.tile, "tile size (0 = whole volume)");

    // sample
    auto* sa = app.add_subcommand("sample", "Monte Carlo dropout labels + uncertainty");
    std::string sa_ckpt, sa_in, sa_labels, sa_unc;
    std::int64_t sa_m = 10;
    std::uint64_t sa_seed = 1;
    PaddingPolicy sa_pol;
    sa->add_option("--checkpoint", sa_ckpt, "dropout-variant checkpoint")->required();
    sa->add_option("--in", sa_in, "input image volume")->required();
    sa->add_option("--samples", sa_m, "number of stochastic forwards");
    sa->add_option("--seed", sa_seed, "sampling seed");
    sa->add_option("--out-labels", sa_labels, "majority-vote label volume")->required();
    sa->add_option("--out-uncertainty", sa_unc, "voxelwise disagreement volume")->required();
    sa->add_option("--pad", sa_pol.pad, "zero padding per face");
    sa->add_option("--tile", sa_pol.tile, "tile size (0 = whole volume)");

    // analyze
    auto* an = app.add_subcommand("analyze", "receptive-field and evaluation analyses");
    an->require_subcommand(1);

    auto* rf = an->add_subcommand("rf", "receptive-field histogram over residual paths");
    std::string rf_arch = "default", rf_out = "rf_histogram.csv";
    std::int64_t rf_classes = 160;
    rf->add_option("--arch", rf_arch, "default | dropout | nores");
    rf->add_option("--classes", rf_classes, "class count");
    rf->add_option("--out", rf_out, "histogram csv path");

    auto* bo = an->add_subcommand("border", "mean DCS as border voxels are discarded");
    std::string bo_ckpt, bo_data, bo_split = "test", bo_out = "border_curve.csv";
    std::vector<std::int64_t> bo_borders = {0, 1, 2, 4, 8};
    PaddingPolicy bo_pol;
    bo->add_option("--checkpoint", bo_ckpt, "model checkpoint")->required();
    bo->add_option("--data", bo_data, "dataset manifest")->required();
    bo->add_option("--split", bo_split, "dataset split");
    bo->add_option("--borders", bo_borders, "border sizes")->delimiter(',');
    bo->add_option("--pad", bo_pol.pad, "zero padding per face");
    bo->add_option("--tile", bo_pol.tile, "tile size (0 = whole volume)");
    bo->add_option("--out", bo_out, "curve csv path");

    auto* cu = an->add_subcommand("curve", "sample-count and uncertainty-threshold sweeps");
    std::string cu_ckpt, cu_data, cu_split = "test";
    std::string cu_out_samples = "samples_dcs.csv", cu_out_acc = "accuracy_uncertainty.csv";
    std::vector<std::int64_t> cu_counts = {1, 2, 5, 10};
    std::vector<double> cu_thresholds = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::int64_t cu_samples = 0;
    std::uint64_t cu_seed = 1;
    PaddingPolicy cu_pol;
    cu->add_option("--checkpoint", cu_ckpt, "dropout-variant checkpoint")->required();
    cu->add_option("--data", cu_data, "dataset manifest")->required();
    cu->add_option("--split", cu_split, "dataset split");
    cu->add_option("--counts", cu_counts, "sample counts for the DCS sweep")->delimiter(',');
    cu->add_option("--samples", cu_samples, "samples for the accuracy map (default max of counts)");
    cu->add_option("--thresholds", cu_thresholds, "disagreement thresholds")->delimiter(',');
    cu->add_option("--seed", cu_seed, "sampling seed");
    cu->add_option("--pad", cu_pol.pad, "zero padding per face");
    cu->add_option("--tile", cu_pol.tile, "tile size (0 = whole volume)");
    cu->add_option("--out-samples", cu_out_samples, "samples-vs-DCS csv path");
    cu->add_option("--out-accuracy", cu_out_acc, "accuracy-vs-threshold csv path");

    // count-params
    auto* cp = app.add_subcommand("count-params", "trainable parameter count for a variant");
    std::string cp_arch = "default";
    std::int64_t cp_classes = 160;
    cp->add_option("--arch", cp_arch, "default | dropout | nores");
    cp->add_option("--classes", cp_classes, "class count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return 1;
    }

    try {
        if (app.got_subcommand(gen)) {
            const std::string manifest = generate_synthetic(gspec, gen_out);
            std::cout << "manifest: " << manifest << "\n";
            return 0;
        }
        if (app.got_subcommand(tr)) return run_train(ta, tr);
        if (app.got_subcommand(pr)) {
            Checkpoint ckpt = load_checkpoint(pr_ckpt);
            Volume in = read_image_volume(pr_in);
            Prediction p = predict(ckpt, in.image, pr_pol);
            write_volume(pr_out, make_label_volume(std::move(p.labels.labels), in.spacing_mm));
            std::cout << "labels: " << pr_out << "\n";
            return 0;
        }
        if (app.got_subcommand(sa)) {
            Checkpoint ckpt = load_checkpoint(sa_ckpt);
            Volume in = read_image_volume(sa_in);
            UncertaintyMap map = mc_sample_predict(ckpt, in.image, sa_m, sa_seed, sa_pol);
            double mean_u = 0;
            for (std::int64_t i = 0; i < map.disagreement.numel(); ++i) mean_u += map.disagreement[i];
            mean_u /= static_cast<double>(map.disagreement.numel());
            write_volume(sa_labels, make_label_volume(std::move(map.majority.labels), in.spacing_mm));
            write_volume(sa_unc, make_image_volume(std::move(map.disagreement), in.spacing_mm));
            std::cout << "labels: " << sa_labels << "\n";
            std::cout << "uncertainty: " << sa_unc << "\n";
            std::cout << "mean_disagreement: " << fmt_double(mean_u) << "\n";
            return 0;
        }
        if (app.got_subcommand(an)) {
            if (an->got_subcommand(rf)) return run_analyze_rf(rf_arch, rf_classes, rf_out);
            if (an->got_subcommand(bo))
                return run_analyze_border(bo_ckpt, bo_data, bo_split, bo_borders, bo_pol, bo_out);
            if (an->got_subcommand(cu)) {
                std::int64_t m = cu_samples;
                if (m <= 0)
                    for (const std::int64_t c : cu_counts) m = std::max(m, c);
                return run_analyze_curve(cu_ckpt, cu_data, cu_split, cu_counts, m, cu_thresholds,
                                         cu_seed, cu_pol, cu_out_samples, cu_out_acc);
            }
        }
        if (app.got_subcommand(cp)) return run_count_params(cp_arch, cp_classes);
        throw UsageError("no command given");
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: data: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: numeric: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: data: %s\n", e.what());
        return 2;
    }
}

}  // namespace hr3d
