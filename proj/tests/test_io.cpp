#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hr3d/common.hpp"
#include "hr3d/io.hpp"
#include "hr3d/rng.hpp"

using namespace hr3d;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.numel())) == 0;
}

}  // namespace

TEST_CASE("image volume round trip is bit-exact") {
    auto dir = fresh_dir("hr3d_io_img");
    Rng rng(11);
    Tensor img = random_fill<float>(rng, Dist::kNormal, 0, 3, Shape{2, 4, 5, 3});
    img[7] = -0.0f;  // signed zero must survive
    Volume v = make_image_volume(img, {0.5, 1.25, 2.0});
    const std::string path = (dir / "a.h3v").string();
    write_volume(path, v);

    Volume r = read_volume(path);
    CHECK(r.dtype == VoxelType::kF32);
    CHECK(bit_equal(r.image, img));
    CHECK(r.spacing_mm == std::array<double, 3>{0.5, 1.25, 2.0});

    Volume z = make_image_volume(Tensor::zeros(Shape{1, 4, 4, 4}));
    const std::string zp = (dir / "z.h3v").string();
    write_volume(zp, z);
    CHECK(bit_equal(read_volume(zp).image, z.image));
}

TEST_CASE("label volume round trip and range checks") {
    auto dir = fresh_dir("hr3d_io_lab");
    TensorI lab(Shape{3, 4, 5});
    for (std::int64_t i = 0; i < lab.numel(); ++i) lab[i] = i % 7;
    const std::string path = (dir / "l.h3v").string();
    write_volume(path, make_label_volume(lab));

    Volume r = read_volume(path);
    CHECK(r.dtype == VoxelType::kU16);
    REQUIRE(r.labels.shape() == lab.shape());
    for (std::int64_t i = 0; i < lab.numel(); ++i) CHECK(r.labels[i] == lab[i]);

    VolumeHeader h = read_volume_header(path);
    CHECK(h.dtype == VoxelType::kU16);
    CHECK(h.spatial == Shape{3, 4, 5});

    TensorI big(Shape{1, 1, 1});
    big[0] = 70000;
    CHECK_THROWS_AS(write_volume((dir / "b.h3v").string(), make_label_volume(big)), DataError);
}

TEST_CASE("volume reader rejects malformed files") {
    auto dir = fresh_dir("hr3d_io_bad");

    Tensor img = Tensor::full(Shape{1, 4, 4, 4}, 1.f);
    const std::string good = (dir / "good.h3v").string();
    write_volume(good, make_image_volume(img));

    // corrupted length: drop the last 10 payload bytes
    auto bytes = slurp(good);
    {
        std::ofstream out(dir / "short.h3v", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 10));
    }
    CHECK_THROWS_WITH_AS(read_volume((dir / "short.h3v").string()),
                         doctest::Contains("truncated payload"), DataError);

    // trailing garbage
    {
        std::ofstream out(dir / "long.h3v", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out << "x";
    }
    CHECK_THROWS_WITH_AS(read_volume((dir / "long.h3v").string()),
                         doctest::Contains("trailing bytes"), DataError);

    // header says 4x4x4 but only 63 elements follow
    {
        std::ofstream out(dir / "mismatch.h3v", std::ios::binary);
        out << "hr3dvol 1\ndtype f32\ndims 4 4 4\nchannels 1\nspacing 1 1 1\nbytes 252\ndata\n";
        std::vector<float> p(63, 0.f);
        out.write(reinterpret_cast<const char*>(p.data()), 252);
    }
    CHECK_THROWS_WITH_AS(read_volume((dir / "mismatch.h3v").string()),
                         doctest::Contains("payload size mismatch"), DataError);

    {
        std::ofstream out(dir / "vers.h3v", std::ios::binary);
        out << "hr3dvol 9\ndtype f32\ndims 1 1 1\nchannels 1\nbytes 4\ndata\nxxxx";
    }
    CHECK_THROWS_WITH_AS(read_volume((dir / "vers.h3v").string()),
                         doctest::Contains("unsupported volume format version"), DataError);

    CHECK_THROWS_AS(read_volume((dir / "absent.h3v").string()), DataError);
}

TEST_CASE("synthetic generator: deterministic, imbalanced, all classes present") {
    auto d1 = fresh_dir("hr3d_gen_a");
    auto d2 = fresh_dir("hr3d_gen_b");
    SyntheticSpec spec;
    spec.size = 32;
    spec.num_classes = 3;
    spec.train_count = 2;
    spec.val_count = 1;
    spec.test_count = 1;
    spec.seed = 7;

    const std::string m1 = generate_synthetic(spec, d1.string());
    const std::string m2 = generate_synthetic(spec, d2.string());

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(d1)) files.push_back(e.path().filename());
    std::sort(files.begin(), files.end());
    CHECK(files.size() == 9);  // 4 volumes x 2 + manifest
    for (const auto& f : files) CHECK(slurp(d1 / f) == slurp(d2 / f));

    DatasetManifest m = load_manifest(m1);
    CHECK(m.num_classes == 3);
    CHECK(m.split("train").size() == 2);
    CHECK(m.split("validation").size() == 1);
    CHECK(m.split("test").size() == 1);

    for (const auto& e : m.entries) {
        Volume lab = read_volume(m.resolve(e.label));
        std::vector<std::int64_t> hist(3, 0);
        for (std::int64_t i = 0; i < lab.labels.numel(); ++i)
            ++hist[static_cast<std::size_t>(lab.labels[i])];
        CHECK(hist[0] > 0);
        CHECK(hist[1] > 0);
        CHECK(hist[2] > 0);
        CHECK(static_cast<double>(hist[0]) >
              0.8 * static_cast<double>(lab.labels.numel()));
        Volume img = read_volume(m.resolve(e.image));
        CHECK(img.image.shape() == Shape{1, 32, 32, 32});
    }
}

TEST_CASE("synthetic generator rejects infeasible requests") {
    auto dir = fresh_dir("hr3d_gen_bad");
    SyntheticSpec spec;
    spec.size = 8;
    CHECK_THROWS_AS(generate_synthetic(spec, dir.string()), DataError);
    spec.size = 16;
    spec.num_classes = 1;
    CHECK_THROWS_AS(generate_synthetic(spec, dir.string()), DataError);
    spec.num_classes = 12;  // nested shells cannot fit in 16 voxels
    CHECK_THROWS_AS(generate_synthetic(spec, dir.string()), DataError);
}

TEST_CASE("manifest validation catches duplicates and dimension clashes") {
    auto dir = fresh_dir("hr3d_manifest");
    write_volume((dir / "i.h3v").string(), make_image_volume(Tensor::zeros(Shape{1, 4, 4, 4})));
    write_volume((dir / "l.h3v").string(), make_label_volume(TensorI(Shape{4, 4, 4})));
    write_volume((dir / "l5.h3v").string(), make_label_volume(TensorI(Shape{5, 5, 5})));

    DatasetManifest m;
    m.num_classes = 2;
    m.entries = {{"i.h3v", "l.h3v", "train"}, {"i.h3v", "l.h3v", "test"}};
    save_manifest((dir / "dup.json").string(), m);
    CHECK_THROWS_WITH_AS(load_manifest((dir / "dup.json").string()),
                         doctest::Contains("disjoint"), DataError);

    m.entries = {{"i.h3v", "l5.h3v", "train"}};
    save_manifest((dir / "dims.json").string(), m);
    CHECK_THROWS_WITH_AS(load_manifest((dir / "dims.json").string()),
                         doctest::Contains("differ"), DataError);

    m.entries = {{"missing.h3v", "l.h3v", "train"}};
    save_manifest((dir / "gone.json").string(), m);
    CHECK_THROWS_AS(load_manifest((dir / "gone.json").string()), DataError);

    m.entries = {{"i.h3v", "l.h3v", "holdout"}};
    save_manifest((dir / "split.json").string(), m);
    CHECK_THROWS_WITH_AS(load_manifest((dir / "split.json").string()),
                         doctest::Contains("unknown split"), DataError);
}

TEST_CASE("config files parse, merge and echo canonically") {
    auto dir = fresh_dir("hr3d_config");
    {
        std::ofstream out(dir / "run.cfg");
        out << "# a comment\n\n  seed = 42\narch=dropout\n  loss =  dice\n";
    }
    Config c = load_config((dir / "run.cfg").string());
    CHECK(c.size() == 3);
    CHECK(c["seed"] == "42");
    CHECK(c["arch"] == "dropout");
    CHECK(c["loss"] == "dice");
    CHECK(canonical_config(c) == "arch = dropout\nloss = dice\nseed = 42\n");

    save_config((dir / "echo.cfg").string(), c);
    CHECK(load_config((dir / "echo.cfg").string()) == c);

    {
        std::ofstream out(dir / "bad.cfg");
        out << "seed 42\n";
    }
    CHECK_THROWS_AS(load_config((dir / "bad.cfg").string()), UsageError);
}

TEST_CASE("checkpoint round trip is byte-exact and validates its architecture") {
    auto dir = fresh_dir("hr3d_ckpt");
    Rng rng(21);
    Checkpoint c;
    c.variant = Variant::kDropout;
    c.num_classes = 3;
    c.in_channels = 1;
    auto spec = build_highres3dnet(c.variant, c.num_classes);
    c.params = init_parameters(spec, rng);

    const std::string p1 = (dir / "a.h3c").string();
    const std::string p2 = (dir / "b.h3c").string();
    save_checkpoint(p1, c);
    Checkpoint r = load_checkpoint(p1);
    CHECK(r.variant == Variant::kDropout);
    CHECK(r.num_classes == 3);
    CHECK(r.in_channels == 1);
    REQUIRE(r.params.names() == c.params.names());
    for (const auto& n : c.params.names()) CHECK(bit_equal(r.params.get(n), c.params.get(n)));

    save_checkpoint(p2, r);
    CHECK(slurp(p1) == slurp(p2));

    ArchitectureSpec rebuilt = checkpoint_architecture(r);
    CHECK(rebuilt.num_classes == 3);
    CHECK(rebuilt.variant == Variant::kDropout);

    // class count that disagrees with the stored classifier
    Checkpoint wrong = load_checkpoint(p1);
    wrong.num_classes = 4;
    CHECK_THROWS_WITH_AS(checkpoint_architecture(wrong), doctest::Contains("mismatch"), DataError);

    Checkpoint empty;
    empty.variant = Variant::kDefault;
    empty.num_classes = 2;
    CHECK_THROWS_WITH_AS(checkpoint_architecture(empty), doctest::Contains("missing tensor"),
                         DataError);

    // truncated archive
    auto bytes = slurp(p1);
    {
        std::ofstream out(dir / "cut.h3c", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint((dir / "cut.h3c").string()),
                         doctest::Contains("truncated"), DataError);
}
