#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hr3d/analysis.hpp"
#include "hr3d/common.hpp"
#include "hr3d/io.hpp"
#include "hr3d/losses.hpp"
#include "hr3d/network.hpp"

using namespace hr3d;
namespace fs = std::filesystem;

namespace {

ArchitectureSpec conv_stack(std::vector<std::pair<int, int>> kernel_dilation) {
    ArchitectureSpec s;
    s.num_classes = 2;
    s.in_channels = 1;
    int i = 0;
    for (auto [k, r] : kernel_dilation) {
        s.layers.push_back({LayerKind::kConv, "c" + std::to_string(i++), k, r, 1, 1});
    }
    return s;
}

ArchitectureSpec micro_blocks(std::vector<int> dil) {
    ArchitectureSpec s;
    s.num_classes = 2;
    s.in_channels = 1;
    const std::int64_t width = 2;
    s.layers.push_back({LayerKind::kConv, "conv_in", 3, 1, 1, width});
    int bi = 0;
    for (int r : dil) {
        const std::string p = "m" + std::to_string(bi++);
        s.layers.push_back({LayerKind::kResidualBegin, p});
        s.layers.push_back({LayerKind::kBatchNorm, p + ".bn1", 0, 1, width});
        s.layers.push_back({LayerKind::kRelu, ""});
        s.layers.push_back({LayerKind::kConv, p + ".conv1", 3, r, width, width});
        s.layers.push_back({LayerKind::kBatchNorm, p + ".bn2", 0, 1, width});
        s.layers.push_back({LayerKind::kRelu, ""});
        s.layers.push_back({LayerKind::kConv, p + ".conv2", 3, r, width, width});
        s.layers.push_back({LayerKind::kResidualEnd, p});
    }
    s.layers.push_back({LayerKind::kConv, "classifier", 1, 1, width, 2});
    LayerSpec sm;
    sm.kind = LayerKind::kSoftmax;
    s.layers.push_back(sm);
    return s;
}

void make_weights_positive(ParameterStore& store) {
    for (const auto& name : store.names()) {
        if (name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0) {
            Tensor& t = store.get(name);
            for (std::int64_t i = 0; i < t.numel(); ++i)
                t[i] = t[i] < 0 ? -t[i] : (t[i] == 0.0f ? 0.01f : t[i]);
        }
    }
}

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("path extents follow the per-conv growth rule") {
    ArchitectureSpec spec = build_highres3dnet(Variant::kDefault, 160);
    const std::int64_t n = spec.residual_block_count();
    REQUIRE(n == 9);

    CHECK(receptive_field_of_path(spec, 0) == 3);
    CHECK(receptive_field_of_path(spec, (PathSubset{1} << n) - 1) == 87);

    // one block alone: 3 + 4r
    const auto dils = spec.block_dilations();  // per conv, two per block
    REQUIRE(dils.size() == 18);
    for (std::size_t b = 0; b < 9; ++b) {
        const std::int64_t want = 3 + 4 * dils[2 * b];
        CHECK(receptive_field_of_path(spec, PathSubset{1} << b) == want);
    }
    // one r=4 block gives 19
    CHECK(receptive_field_of_path(spec, PathSubset{1} << 8) == 19);

    CHECK_THROWS_AS(receptive_field_of_path(spec, PathSubset{1} << 9), UsageError);
}

TEST_CASE("histogram enumerates every residual path exactly once") {
    ArchitectureSpec spec = build_highres3dnet(Variant::kDefault, 4);
    RFHistogram h = rf_histogram(spec);

    CHECK(h.paths == 512);
    std::int64_t total = 0;
    for (const auto& [extent, count] : h.counts) {
        total += count;
        CHECK(extent % 2 == 1);  // odd extents only
        CHECK(extent >= 3);
        CHECK(extent <= 87);
    }
    CHECK(total == 512);
    CHECK(h.counts.at(3) == 1);
    CHECK(h.counts.at(87) == 1);
    CHECK(h.counts.at(7) == 3);  // exactly one of the three r=1 blocks

    // complementing the mask mirrors the extent around (3+87)/2
    for (PathSubset s = 0; s < 512; ++s) {
        const PathSubset comp = static_cast<PathSubset>(511u & ~s);
        CHECK(receptive_field_of_path(spec, s) + receptive_field_of_path(spec, comp) == 90);
    }

    // mirrored counts: as many paths at extent e as at 90-e
    for (const auto& [extent, count] : h.counts) {
        CHECK(h.counts.at(90 - extent) == count);
    }
}

TEST_CASE("stack without residual blocks has a single path") {
    ArchitectureSpec spec = build_highres3dnet(Variant::kNoRes, 4);
    REQUIRE(spec.residual_block_count() == 0);
    RFHistogram h = rf_histogram(spec);
    CHECK(h.paths == 1);
    REQUIRE(h.counts.size() == 1);
    CHECK(h.counts.begin()->first == 87);
    CHECK(h.counts.begin()->second == 1);
}

TEST_CASE("histogram guard rejects oversized enumerations") {
    ArchitectureSpec spec;
    spec.num_classes = 2;
    spec.in_channels = 1;
    spec.layers.push_back({LayerKind::kConv, "conv_in", 3, 1, 1, 2});
    for (int b = 0; b < 25; ++b) {
        const std::string p = "b" + std::to_string(b);
        spec.layers.push_back({LayerKind::kResidualBegin, p});
        spec.layers.push_back({LayerKind::kConv, p + ".conv1", 3, 1, 2, 2});
        spec.layers.push_back({LayerKind::kResidualEnd, p});
    }
    CHECK_THROWS_AS(rf_histogram(spec), UsageError);
}

TEST_CASE("numeric probe recovers analytic extents on plain conv stacks") {
    Rng rng(3);

    ArchitectureSpec one = conv_stack({{3, 1}});
    ParameterStore p1 = init_parameters(one, rng);
    make_weights_positive(p1);
    CHECK(numeric_rf_probe(one, p1) == 3);

    ArchitectureSpec two = conv_stack({{3, 1}, {3, 1}});
    ParameterStore p2 = init_parameters(two, rng);
    make_weights_positive(p2);
    CHECK(numeric_rf_probe(two, p2) == 5);

    ArchitectureSpec dilated = conv_stack({{3, 2}});
    ParameterStore p3 = init_parameters(dilated, rng);
    make_weights_positive(p3);
    CHECK(numeric_rf_probe(dilated, p3) == 5);

    // a 1^3 conv adds nothing
    ArchitectureSpec pointwise = conv_stack({{3, 1}, {1, 1}});
    ParameterStore p4 = init_parameters(pointwise, rng);
    make_weights_positive(p4);
    CHECK(numeric_rf_probe(pointwise, p4) == 3);
}

TEST_CASE("numeric probe agrees with the path formula on residual micro stacks") {
    Rng rng(7);
    ArchitectureSpec spec = micro_blocks({1, 2});
    ParameterStore params = init_parameters(spec, rng);
    make_weights_positive(params);

    const std::int64_t analytic = receptive_field_of_path(spec, 0b11);
    CHECK(analytic == 15);
    CHECK(numeric_rf_probe(spec, params) == analytic);

    // three blocks
    ArchitectureSpec spec3 = micro_blocks({1, 2, 4});
    ParameterStore params3 = init_parameters(spec3, rng);
    make_weights_positive(params3);
    CHECK(numeric_rf_probe(spec3, params3) == receptive_field_of_path(spec3, 0b111));
    CHECK(receptive_field_of_path(spec3, 0b111) == 31);
}

TEST_CASE("numeric probe sees the footprint shrink when a branch is disabled") {
    Rng rng(9);
    ArchitectureSpec spec = micro_blocks({1, 2});
    ParameterStore params = init_parameters(spec, rng);
    make_weights_positive(params);

    // zero out the second block's convs: only the skip path remains there
    for (const char* n : {"m1.conv1.w", "m1.conv2.w"}) {
        Tensor& t = params.get(n);
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = 0.0f;
    }
    CHECK(numeric_rf_probe(spec, params) == receptive_field_of_path(spec, 0b01));
    CHECK(receptive_field_of_path(spec, 0b01) == 7);
}

TEST_CASE("border curve scores shrinking centred interiors") {
    fs::path dir = fresh_dir("hr3d_border");
    SyntheticSpec gen;
    gen.size = 16;
    gen.num_classes = 2;
    gen.train_count = 1;
    gen.val_count = 2;
    gen.test_count = 0;
    gen.seed = 23;
    DatasetManifest data = load_manifest(generate_synthetic(gen, dir.string()));

    ArchitectureSpec spec = micro_blocks({1, 2});
    Rng rng(13);
    ParameterStore params = init_parameters(spec, rng);

    PaddingPolicy pol;
    pol.pad = 4;
    pol.tile = 0;
    auto curve = border_effect_curve_with(spec, params, data, "validation", {0, 2, 4}, pol);
    REQUIRE(curve.size() == 3);

    // b=0 equals the plain mean DCS over the split
    double want = 0;
    const auto entries = data.split("validation");
    for (const auto& e : entries) {
        Volume img = read_volume(data.resolve(e.image));
        Volume lab = read_volume(data.resolve(e.label));
        Prediction p = predict_with(spec, params, img.image, pol);
        want += mean_dcs(p.labels, LabelVolume{lab.labels, 2});
    }
    want /= static_cast<double>(entries.size());
    CHECK(curve[0].border == 0);
    CHECK(curve[0].mean_dcs == doctest::Approx(want).epsilon(1e-12));

    // interior voxel audit: two volumes of (16-2b)^3 voxels each
    CHECK(curve[0].total_voxels == 2 * 16 * 16 * 16);
    CHECK(curve[1].total_voxels == 2 * 12 * 12 * 12);
    CHECK(curve[2].total_voxels == 2 * 8 * 8 * 8);

    for (const auto& pt : curve) {
        CHECK(pt.mean_dcs >= 0.0);
        CHECK(pt.mean_dcs <= 1.0);
        CHECK(pt.std_err >= 0.0);
    }

    // a border that consumes the whole volume is an error
    CHECK_THROWS_AS(border_effect_curve_with(spec, params, data, "validation", {8}, pol),
                    DataError);
    CHECK_THROWS_AS(border_effect_curve_with(spec, params, data, "validation", {-1}, pol),
                    UsageError);
    CHECK_THROWS_AS(border_effect_curve_with(spec, params, data, "test", {0}, pol), DataError);
}

TEST_CASE("plateau detector finds where the curve settles") {
    auto mk = [](std::vector<std::pair<std::int64_t, double>> pts) {
        std::vector<BorderPoint> c;
        for (auto [b, d] : pts) {
            BorderPoint p;
            p.border = b;
            p.mean_dcs = d;
            c.push_back(p);
        }
        return c;
    };

    CHECK(detect_plateau(mk({{0, 0.50}, {1, 0.60}, {2, 0.606}, {3, 0.597}})) == 1);
    CHECK(detect_plateau(mk({{0, 0.90}, {2, 0.90}, {4, 0.90}})) == 0);
    // never settles until the final point
    CHECK(detect_plateau(mk({{0, 0.1}, {1, 0.3}, {2, 0.5}, {3, 0.7}})) == 3);
    CHECK_THROWS_AS(detect_plateau({}), UsageError);
}

TEST_CASE("analysis tables serialise as csv") {
    fs::path dir = fresh_dir("hr3d_csv");

    ArchitectureSpec spec = build_highres3dnet(Variant::kDefault, 4);
    RFHistogram h = rf_histogram(spec);
    const std::string hist_path = (dir / "rf.csv").string();
    write_rf_histogram_csv(h, hist_path);

    std::ifstream in(hist_path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "extent,count");
    std::int64_t rows = 0, total = 0;
    while (std::getline(in, line)) {
        ++rows;
        std::istringstream ss(line);
        std::string a, b;
        REQUIRE(std::getline(ss, a, ','));
        REQUIRE(std::getline(ss, b, ','));
        total += std::stoll(b);
    }
    CHECK(rows == static_cast<std::int64_t>(h.counts.size()));
    CHECK(total == 512);

    BorderPoint p;
    p.border = 2;
    p.mean_dcs = 0.75;
    p.std_err = 0.01;
    const std::string curve_path = (dir / "border.csv").string();
    write_border_curve_csv({p}, curve_path);
    std::ifstream cin_(curve_path);
    REQUIRE(std::getline(cin_, line));
    CHECK(line == "border,mean_dcs,stderr");
    REQUIRE(std::getline(cin_, line));
    CHECK(line == "2,0.75,0.01");
}
