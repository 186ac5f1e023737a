#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hr3d/common.hpp"
#include "hr3d/io.hpp"
#include "hr3d/network.hpp"
#include "hr3d/rng.hpp"
#include "hr3d/tensor.hpp"

using namespace hr3d;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CliResult run_cli(const std::string& args) {
    static int invocation = 0;
    const fs::path dir = fs::temp_directory_path() / "hr3d_cli_io";
    fs::create_directories(dir);
    const fs::path out = dir / ("out_" + std::to_string(invocation));
    const fs::path err = dir / ("err_" + std::to_string(invocation));
    ++invocation;
    const std::string cmd = std::string(HR3D_CLI) + " " + args + " > " + out.string() + " 2> " +
                            err.string();
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

bool files_equal(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_random_image(const fs::path& path, std::int64_t side, std::uint64_t seed) {
    Rng rng(seed);
    Tensor img = random_fill<float>(rng, Dist::kUniform, 5.f, 95.f, Shape{1, side, side, side});
    write_volume(path.string(), make_image_volume(std::move(img)));
    return path;
}

fs::path write_init_checkpoint(const fs::path& path, Variant variant, std::int64_t classes,
                               std::uint64_t seed) {
    Checkpoint c;
    c.variant = variant;
    c.num_classes = classes;
    c.in_channels = 1;
    ArchitectureSpec spec = build_highres3dnet(variant, classes);
    Rng rng(seed);
    c.params = init_parameters(spec, rng);
    save_checkpoint(path.string(), c);
    return path;
}

}  // namespace

TEST_CASE("cli reports parameter counts with the rounded band") {
    CliResult def = run_cli("count-params --arch default --classes 160");
    CHECK(def.code == 0);
    CHECK(def.out.find("parameters: 813712") != std::string::npos);
    CHECK(def.out.find("approx: 0.81M") != std::string::npos);

    CliResult drop = run_cli("count-params --arch dropout --classes 160");
    CHECK(drop.code == 0);
    CHECK(drop.out.find("parameters: 821392") != std::string::npos);
    CHECK(drop.out.find("approx: 0.82M") != std::string::npos);
}

TEST_CASE("cli receptive-field histogram totals every path") {
    fs::path dir = fresh_dir("hr3d_cli_rf");
    const std::string csv = (dir / "rf.csv").string();
    CliResult r = run_cli("analyze rf --arch default --out " + csv);
    CHECK(r.code == 0);
    CHECK(r.out.find("paths: 512") != std::string::npos);
    CHECK(r.out.find("extent_min: 3") != std::string::npos);
    CHECK(r.out.find("extent_max: 87") != std::string::npos);

    std::ifstream in(csv);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "extent,count");
    std::int64_t total = 0;
    while (std::getline(in, line)) total += std::stoll(line.substr(line.find(',') + 1));
    CHECK(total == 512);
}

TEST_CASE("cli dataset generation is byte-deterministic") {
    fs::path a = fresh_dir("hr3d_cli_gen_a");
    fs::path b = fresh_dir("hr3d_cli_gen_b");
    const std::string flags = "generate --size 16 --classes 2 --train 1 --val 1 --test 1 --seed 9";
    CliResult ra = run_cli(flags + " --out " + a.string());
    CliResult rb = run_cli(flags + " --out " + b.string());
    CHECK(ra.code == 0);
    CHECK(rb.code == 0);
    CHECK(ra.out.find("manifest: ") != std::string::npos);

    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename().string());
    CHECK(names.size() == 7);  // 3 images + 3 labels + manifest
    for (const auto& n : names) CHECK(files_equal(a / n, b / n));
}

TEST_CASE("cli maps error kinds onto exit codes") {
    CliResult unknown = run_cli("segment --foo");
    CHECK(unknown.code == 1);
    CHECK(unknown.err.find("error: usage:") != std::string::npos);

    CliResult missing_flag = run_cli("predict --in x.h3v --out y.h3v");
    CHECK(missing_flag.code == 1);
    CHECK(missing_flag.err.find("error: usage:") != std::string::npos);

    CliResult missing_file =
        run_cli("predict --checkpoint /nonexistent.h3c --in /nonexistent.h3v --out /tmp/y.h3v");
    CHECK(missing_file.code == 2);
    CHECK(missing_file.err.find("error: data:") != std::string::npos);

    fs::path dir = fresh_dir("hr3d_cli_badcfg");
    std::ofstream(dir / "bad.cfg") << "loss = focal\n";
    CliResult bad_loss = run_cli("train --config " + (dir / "bad.cfg").string() +
                                 " --data /nonexistent.json --out " + (dir / "run").string());
    CHECK(bad_loss.code == 1);  // rejected before the data path is touched
    CHECK(bad_loss.err.find("error: usage:") != std::string::npos);

    std::ofstream(dir / "unknown.cfg") << "optimizer = sgd\n";
    CliResult bad_key = run_cli("train --config " + (dir / "unknown.cfg").string() +
                                " --data /nonexistent.json --out " + (dir / "run").string());
    CHECK(bad_key.code == 1);
    CHECK(bad_key.err.find("unknown config key") != std::string::npos);
}

TEST_CASE("cli trains, emits a replayable config, and reruns identically") {
    fs::path data_dir = fresh_dir("hr3d_cli_train_data");
    CliResult gen = run_cli("generate --size 16 --classes 2 --train 2 --val 1 --test 1 --seed 5 --out " +
                            data_dir.string());
    REQUIRE(gen.code == 0);
    const std::string manifest = (data_dir / "manifest.json").string();

    fs::path run1 = fresh_dir("hr3d_cli_run1");
    const std::string flags = "train --data " + manifest +
                              " --subvolume 9 --iters 2 --val-every 2 --seed 3 --workers 1";
    CliResult r1 = run_cli(flags + " --out " + run1.string());
    REQUIRE(r1.code == 0);
    CHECK(r1.out.find("resolved configuration:") != std::string::npos);
    CHECK(r1.out.find("loss = dice") != std::string::npos);
    CHECK(r1.out.find("checkpoint: ") != std::string::npos);
    CHECK(fs::exists(run1 / "resolved.cfg"));
    CHECK(fs::exists(run1 / "metrics.csv"));
    CHECK(fs::exists(run1 / "checkpoint.h3c"));

    // identical flags reproduce the artifacts byte for byte
    fs::path run2 = fresh_dir("hr3d_cli_run2");
    CliResult r2 = run_cli(flags + " --out " + run2.string());
    REQUIRE(r2.code == 0);
    CHECK(files_equal(run1 / "checkpoint.h3c", run2 / "checkpoint.h3c"));
    CHECK(files_equal(run1 / "resolved.cfg", run2 / "resolved.cfg"));
    CHECK(files_equal(run1 / "metrics.csv", run2 / "metrics.csv"));

    // replaying the emitted config alone reproduces the run
    fs::path run3 = fresh_dir("hr3d_cli_run3");
    CliResult r3 = run_cli("train --config " + (run1 / "resolved.cfg").string() + " --out " +
                           run3.string());
    REQUIRE(r3.code == 0);
    CHECK(files_equal(run1 / "checkpoint.h3c", run3 / "checkpoint.h3c"));
    CHECK(files_equal(run1 / "metrics.csv", run3 / "metrics.csv"));
}

TEST_CASE("cli surfaces non-finite training as a numeric failure") {
    fs::path data_dir = fresh_dir("hr3d_cli_nan_data");
    CliResult gen = run_cli("generate --size 16 --classes 2 --train 1 --val 1 --seed 6 --out " +
                            data_dir.string());
    REQUIRE(gen.code == 0);

    fs::path dir = fresh_dir("hr3d_cli_nan");
    std::ofstream(dir / "nan.cfg") << "lr = nan\n";
    CliResult r = run_cli("train --config " + (dir / "nan.cfg").string() + " --data " +
                          (data_dir / "manifest.json").string() +
                          " --subvolume 9 --iters 3 --val-every 50 --seed 2 --out " +
                          (dir / "run").string());
    CHECK(r.code == 3);
    CHECK(r.err.find("error: numeric:") != std::string::npos);
}

TEST_CASE("cli predict writes a deterministic label volume") {
    fs::path dir = fresh_dir("hr3d_cli_predict");
    const fs::path ckpt = write_init_checkpoint(dir / "model.h3c", Variant::kDefault, 2, 11);
    const fs::path img = write_random_image(dir / "img.h3v", 10, 21);

    const std::string flags = "predict --checkpoint " + ckpt.string() + " --in " + img.string() +
                              " --pad 0";
    CliResult r1 = run_cli(flags + " --out " + (dir / "lab1.h3v").string());
    REQUIRE(r1.code == 0);
    CliResult r2 = run_cli(flags + " --out " + (dir / "lab2.h3v").string());
    REQUIRE(r2.code == 0);
    CHECK(files_equal(dir / "lab1.h3v", dir / "lab2.h3v"));

    Volume lab = read_volume((dir / "lab1.h3v").string());
    CHECK(lab.dtype == VoxelType::kU16);
    CHECK(lab.labels.shape() == Shape{10, 10, 10});
    for (std::int64_t i = 0; i < lab.labels.numel(); ++i) {
        CHECK(lab.labels[i] >= 0);
        CHECK(lab.labels[i] < 2);
    }
}

TEST_CASE("cli sampling emits labels plus a bounded uncertainty map") {
    fs::path dir = fresh_dir("hr3d_cli_sample");
    const fs::path ckpt = write_init_checkpoint(dir / "model.h3c", Variant::kDropout, 2, 13);
    const fs::path img = write_random_image(dir / "img.h3v", 8, 22);

    const std::string flags = "sample --checkpoint " + ckpt.string() + " --in " + img.string() +
                              " --samples 3 --seed 4 --pad 0";
    CliResult r1 = run_cli(flags + " --out-labels " + (dir / "lab1.h3v").string() +
                           " --out-uncertainty " + (dir / "unc1.h3v").string());
    REQUIRE(r1.code == 0);
    CHECK(r1.out.find("mean_disagreement: ") != std::string::npos);

    Volume unc = read_volume((dir / "unc1.h3v").string());
    CHECK(unc.dtype == VoxelType::kF32);
    CHECK(unc.image.shape() == Shape{1, 8, 8, 8});
    for (std::int64_t i = 0; i < unc.image.numel(); ++i) {
        CHECK(unc.image[i] >= 0.0f);
        CHECK(unc.image[i] <= 1.0f - 1.0f / 3.0f);
    }

    CliResult r2 = run_cli(flags + " --out-labels " + (dir / "lab2.h3v").string() +
                           " --out-uncertainty " + (dir / "unc2.h3v").string());
    REQUIRE(r2.code == 0);
    CHECK(files_equal(dir / "lab1.h3v", dir / "lab2.h3v"));
    CHECK(files_equal(dir / "unc1.h3v", dir / "unc2.h3v"));

    // a non-dropout checkpoint cannot sample
    const fs::path plain = write_init_checkpoint(dir / "plain.h3c", Variant::kDefault, 2, 14);
    CliResult bad = run_cli("sample --checkpoint " + plain.string() + " --in " + img.string() +
                            " --pad 0 --out-labels " + (dir / "x.h3v").string() +
                            " --out-uncertainty " + (dir / "y.h3v").string());
    CHECK(bad.code == 2);
    CHECK(bad.err.find("error: data:") != std::string::npos);
}

TEST_CASE("cli analysis sweeps write the documented tables") {
    fs::path data_dir = fresh_dir("hr3d_cli_curves_data");
    CliResult gen = run_cli("generate --size 16 --classes 2 --train 1 --val 0 --test 1 --seed 8 --out " +
                            data_dir.string());
    REQUIRE(gen.code == 0);
    const std::string manifest = (data_dir / "manifest.json").string();

    fs::path dir = fresh_dir("hr3d_cli_curves");
    const fs::path ckpt = write_init_checkpoint(dir / "model.h3c", Variant::kDropout, 2, 15);

    const std::string border_csv = (dir / "border.csv").string();
    CliResult bo = run_cli("analyze border --checkpoint " + ckpt.string() + " --data " + manifest +
                           " --split test --borders 0,2,4 --pad 0 --out " + border_csv);
    REQUIRE(bo.code == 0);
    CHECK(bo.out.find("plateau_border: ") != std::string::npos);
    {
        std::ifstream in(border_csv);
        std::string line;
        REQUIRE(std::getline(in, line));
        CHECK(line == "border,mean_dcs,stderr");
        std::int64_t rows = 0;
        while (std::getline(in, line)) ++rows;
        CHECK(rows == 3);
    }

    const std::string samples_csv = (dir / "samples.csv").string();
    const std::string acc_csv = (dir / "acc.csv").string();
    CliResult cu = run_cli("analyze curve --checkpoint " + ckpt.string() + " --data " + manifest +
                           " --split test --counts 1,2 --thresholds 0.5,1.0 --seed 3 --pad 0" +
                           " --out-samples " + samples_csv + " --out-accuracy " + acc_csv);
    REQUIRE(cu.code == 0);
    {
        std::ifstream in(samples_csv);
        std::string line;
        REQUIRE(std::getline(in, line));
        CHECK(line == "samples,mean_dcs");
        std::vector<std::string> rows;
        while (std::getline(in, line)) rows.push_back(line);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].substr(0, 2) == "1,");
        CHECK(rows[1].substr(0, 2) == "2,");
    }
    {
        std::ifstream in(acc_csv);
        std::string line;
        REQUIRE(std::getline(in, line));
        CHECK(line == "volume,threshold,accuracy,retained,defined");
        std::int64_t rows = 0;
        while (std::getline(in, line)) ++rows;
        CHECK(rows == 2);  // one test volume, two thresholds
    }
}
