#include "hr3d/io.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hr3d/common.hpp"
#include "hr3d/rng.hpp"

namespace hr3d {

static_assert(std::endian::native == std::endian::little,
              "file formats store payloads as little-endian raw buffers");

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::string header_line(std::istream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": truncated header");
    return line;
}

std::int64_t parse_i64(const std::string& s, const std::string& path) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(path + ": bad integer field '" + s + "'");
    }
}

double parse_f64(const std::string& s, const std::string& path) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(path + ": bad numeric field '" + s + "'");
    }
}

struct RawVolumeHeader {
    VolumeHeader h;
    std::int64_t bytes{0};
};

RawVolumeHeader read_raw_header(std::istream& in, const std::string& path) {
    auto magic = split_ws(header_line(in, path));
    if (magic.size() != 2 || magic[0] != "hr3dvol")
        throw DataError(path + ": not a volume file");
    if (magic[1] != "1")
        throw DataError(path + ": unsupported volume format version " + magic[1]);

    RawVolumeHeader r;
    bool saw_dtype = false, saw_dims = false, saw_bytes = false;
    for (;;) {
        auto f = split_ws(header_line(in, path));
        if (f.empty()) continue;
        if (f[0] == "data") break;
        if (f[0] == "dtype" && f.size() == 2) {
            if (f[1] == "f32") r.h.dtype = VoxelType::kF32;
            else if (f[1] == "u16") r.h.dtype = VoxelType::kU16;
            else throw DataError(path + ": unknown dtype " + f[1]);
            saw_dtype = true;
        } else if (f[0] == "dims" && f.size() == 4) {
            r.h.spatial = Shape{parse_i64(f[1], path), parse_i64(f[2], path), parse_i64(f[3], path)};
            saw_dims = true;
        } else if (f[0] == "channels" && f.size() == 2) {
            r.h.channels = parse_i64(f[1], path);
        } else if (f[0] == "spacing" && f.size() == 4) {
            for (int i = 0; i < 3; ++i) r.h.spacing_mm[i] = parse_f64(f[1 + i], path);
        } else if (f[0] == "bytes" && f.size() == 2) {
            r.bytes = parse_i64(f[1], path);
            saw_bytes = true;
        } else {
            throw DataError(path + ": unrecognised header field '" + f[0] + "'");
        }
    }
    if (!saw_dtype || !saw_dims || !saw_bytes)
        throw DataError(path + ": incomplete header");
    if (r.h.channels < 1) throw DataError(path + ": channel count must be positive");
    if (r.h.dtype == VoxelType::kU16 && r.h.channels != 1)
        throw DataError(path + ": label volumes are single-channel");
    return r;
}

void read_payload(std::istream& in, const std::string& path, char* dst, std::int64_t n) {
    in.read(dst, n);
    if (in.gcount() != n) throw DataError(path + ": truncated payload");
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0)
        throw DataError(path + ": trailing bytes after payload");
}

}  // namespace

VolumeHeader read_volume_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");
    return read_raw_header(in, path).h;
}

Volume read_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");
    RawVolumeHeader r = read_raw_header(in, path);

    Volume v;
    v.dtype = r.h.dtype;
    v.spacing_mm = r.h.spacing_mm;
    const std::int64_t voxels = r.h.spatial.numel();
    if (r.h.dtype == VoxelType::kF32) {
        const std::int64_t n = r.h.channels * voxels;
        if (r.bytes != n * static_cast<std::int64_t>(sizeof(float)))
            throw DataError(path + ": payload size mismatch (header dims imply " +
                            std::to_string(n * sizeof(float)) + " bytes, got " +
                            std::to_string(r.bytes) + ")");
        v.image = Tensor(Shape{r.h.channels, r.h.spatial[0], r.h.spatial[1], r.h.spatial[2]});
        read_payload(in, path, reinterpret_cast<char*>(v.image.data()), r.bytes);
    } else {
        if (r.bytes != voxels * static_cast<std::int64_t>(sizeof(std::uint16_t)))
            throw DataError(path + ": payload size mismatch (header dims imply " +
                            std::to_string(voxels * sizeof(std::uint16_t)) + " bytes, got " +
                            std::to_string(r.bytes) + ")");
        std::vector<std::uint16_t> raw(static_cast<std::size_t>(voxels));
        read_payload(in, path, reinterpret_cast<char*>(raw.data()), r.bytes);
        v.labels = TensorI(r.h.spatial);
        for (std::int64_t i = 0; i < voxels; ++i) v.labels[i] = raw[static_cast<std::size_t>(i)];
    }
    return v;
}

void write_volume(const std::string& path, const Volume& v) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");

    Shape spatial;
    std::int64_t channels = 1;
    std::int64_t bytes = 0;
    if (v.dtype == VoxelType::kF32) {
        if (v.image.shape().rank() != 4)
            throw DataError(path + ": image volumes must be rank 4 (c,d,h,w)");
        channels = v.image.shape()[0];
        spatial = Shape{v.image.shape()[1], v.image.shape()[2], v.image.shape()[3]};
        bytes = v.image.numel() * static_cast<std::int64_t>(sizeof(float));
    } else {
        if (v.labels.shape().rank() != 3)
            throw DataError(path + ": label volumes must be rank 3 (d,h,w)");
        spatial = v.labels.shape();
        bytes = v.labels.numel() * static_cast<std::int64_t>(sizeof(std::uint16_t));
    }

    out << "hr3dvol 1\n";
    out << "dtype " << (v.dtype == VoxelType::kF32 ? "f32" : "u16") << "\n";
    out << "dims " << spatial[0] << " " << spatial[1] << " " << spatial[2] << "\n";
    out << "channels " << channels << "\n";
    out << "spacing " << fmt_double(v.spacing_mm[0]) << " " << fmt_double(v.spacing_mm[1])
        << " " << fmt_double(v.spacing_mm[2]) << "\n";
    out << "bytes " << bytes << "\n";
    out << "data\n";

    if (v.dtype == VoxelType::kF32) {
        out.write(reinterpret_cast<const char*>(v.image.data()), bytes);
    } else {
        std::vector<std::uint16_t> raw(static_cast<std::size_t>(v.labels.numel()));
        for (std::int64_t i = 0; i < v.labels.numel(); ++i) {
            const std::int64_t x = v.labels[i];
            if (x < 0 || x > 0xffff)
                throw DataError(path + ": label " + std::to_string(x) + " out of u16 range");
            raw[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(x);
        }
        out.write(reinterpret_cast<const char*>(raw.data()), bytes);
    }
    if (!out) throw DataError(path + ": write failed");
}

Volume make_image_volume(Tensor image, std::array<double, 3> spacing) {
    if (image.shape().rank() == 3) {
        Tensor wrapped(Shape{1, image.shape()[0], image.shape()[1], image.shape()[2]});
        std::memcpy(wrapped.data(), image.data(), sizeof(float) * static_cast<std::size_t>(image.numel()));
        image = std::move(wrapped);
    }
    Volume v;
    v.dtype = VoxelType::kF32;
    v.image = std::move(image);
    v.spacing_mm = spacing;
    return v;
}

Volume make_label_volume(TensorI labels, std::array<double, 3> spacing) {
    Volume v;
    v.dtype = VoxelType::kU16;
    v.labels = std::move(labels);
    v.spacing_mm = spacing;
    return v;
}

// ---- manifest ---------------------------------------------------------------

std::vector<ManifestEntry> DatasetManifest::split(const std::string& name) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == name) out.push_back(e);
    return out;
}

std::string DatasetManifest::resolve(const std::string& rel) const {
    fs::path p(rel);
    if (p.is_absolute() || root.empty()) return rel;
    return (fs::path(root) / p).string();
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": invalid JSON: " + e.what());
    }

    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    try {
        if (j.value("format_version", 1) != 1)
            throw DataError(path + ": unsupported manifest version");
        m.num_classes = j.at("num_classes").get<std::int64_t>();
        for (const auto& e : j.at("entries")) {
            ManifestEntry me;
            me.image = e.at("image").get<std::string>();
            me.label = e.at("label").get<std::string>();
            me.split = e.at("split").get<std::string>();
            m.entries.push_back(std::move(me));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": malformed manifest: " + e.what());
    }

    if (m.num_classes < 2) throw DataError(path + ": num_classes must be at least 2");
    std::set<std::string> seen;
    for (const auto& e : m.entries) {
        if (e.split != "train" && e.split != "validation" && e.split != "test")
            throw DataError(path + ": unknown split '" + e.split + "'");
        if (!seen.insert(e.image).second)
            throw DataError(path + ": " + e.image + " listed more than once; splits must be disjoint");
        if (!seen.insert(e.label).second)
            throw DataError(path + ": " + e.label + " listed more than once; splits must be disjoint");
        VolumeHeader img = read_volume_header(m.resolve(e.image));
        VolumeHeader lab = read_volume_header(m.resolve(e.label));
        if (img.dtype != VoxelType::kF32) throw DataError(e.image + ": expected f32 image");
        if (lab.dtype != VoxelType::kU16) throw DataError(e.label + ": expected u16 labels");
        if (!(img.spatial == lab.spatial))
            throw DataError(path + ": dims of " + e.image + " and " + e.label + " differ");
    }
    return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["num_classes"] = m.num_classes;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : m.entries)
        j["entries"].push_back({{"image", e.image}, {"label", e.label}, {"split", e.split}});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << j.dump(2) << "\n";
    if (!out) throw DataError(path + ": write failed");
}

// ---- synthetic generator ----------------------------------------------------

namespace {

struct Structure {
    bool box{false};
    std::array<double, 3> semi{};  // per-axis half extent, voxels
};

bool inside(const Structure& s, double dz, double dy, double dx) {
    if (s.box)
        return std::abs(dz) <= s.semi[0] && std::abs(dy) <= s.semi[1] && std::abs(dx) <= s.semi[2];
    const double q = (dz / s.semi[0]) * (dz / s.semi[0]) + (dy / s.semi[1]) * (dy / s.semi[1]) +
                     (dx / s.semi[2]) * (dx / s.semi[2]);
    return q <= 1.0;
}

}  // namespace

std::string generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
    if (spec.num_classes < 2) throw DataError("synthetic generator needs at least 2 classes");
    if (spec.size < 16) throw DataError("synthetic volumes must be at least 16 voxels per side");
    if (spec.train_count < 1) throw DataError("synthetic dataset needs at least one training volume");

    const std::int64_t s = spec.size;
    const std::int64_t c = spec.num_classes;
    const double a_out = spec.outer_frac * static_cast<double>(s);
    const double a_min = spec.min_radius;
    const std::int64_t levels = c - 1;
    const double step = levels > 1 ? (a_out - a_min) / static_cast<double>(levels - 1) : 0.0;
    if (a_out < a_min || (levels > 1 && step < 0.75))
        throw DataError("class count too large for volume size: nested structures would collapse");

    fs::create_directories(out_dir);
    Rng master(spec.seed);

    DatasetManifest m;
    m.num_classes = c;
    m.root = out_dir;

    const std::int64_t total = spec.train_count + spec.val_count + spec.test_count;
    for (std::int64_t v = 0; v < total; ++v) {
        Rng rng = master.child(static_cast<std::uint64_t>(v));

        std::array<double, 3> center;
        for (auto& x : center)
            x = 0.5 * static_cast<double>(s - 1) +
                rng.uniform(-0.05 * static_cast<double>(s), 0.05 * static_cast<double>(s));

        std::vector<Structure> shapes(static_cast<std::size_t>(levels));
        for (std::int64_t i = 0; i < levels; ++i) {
            Structure& sh = shapes[static_cast<std::size_t>(i)];
            sh.box = (i % 2) == 1;
            const double base = a_out - step * static_cast<double>(i);
            for (int ax = 0; ax < 3; ++ax) {
                double semi = base * (1.0 + rng.uniform(-0.08, 0.08));
                if (i > 0)
                    semi = std::min(semi, shapes[static_cast<std::size_t>(i - 1)].semi[static_cast<std::size_t>(ax)] - 0.75);
                sh.semi[static_cast<std::size_t>(ax)] = std::max(semi, 1.0);
            }
        }

        TensorI labels(Shape{s, s, s});
        for (std::int64_t z = 0; z < s; ++z)
            for (std::int64_t y = 0; y < s; ++y)
                for (std::int64_t x = 0; x < s; ++x) {
                    const double dz = static_cast<double>(z) - center[0];
                    const double dy = static_cast<double>(y) - center[1];
                    const double dx = static_cast<double>(x) - center[2];
                    std::int64_t lab = 0;
                    for (std::int64_t i = 0; i < levels; ++i)
                        if (inside(shapes[static_cast<std::size_t>(i)], dz, dy, dx)) lab = i + 1;
                    labels[(z * s + y) * s + x] = lab;
                }

        std::vector<std::int64_t> hist(static_cast<std::size_t>(c), 0);
        for (std::int64_t i = 0; i < labels.numel(); ++i) ++hist[static_cast<std::size_t>(labels[i])];
        for (std::int64_t k = 0; k < c; ++k)
            if (hist[static_cast<std::size_t>(k)] == 0)
                throw DataError("synthetic volume " + std::to_string(v) + " lost class " +
                                std::to_string(k) + "; reduce class count or enlarge the volume");

        const double gain = rng.uniform(0.85, 1.2);
        const double bias = rng.uniform(-0.08, 0.08);
        Tensor img(Shape{1, s, s, s});
        for (std::int64_t i = 0; i < labels.numel(); ++i) {
            const double mean =
                0.15 + 0.75 * static_cast<double>(labels[i]) / static_cast<double>(c - 1);
            img[i] = static_cast<float>(gain * (mean + rng.normal(0.0, spec.noise_sigma)) + bias);
        }

        char img_name[32], lab_name[32];
        std::snprintf(img_name, sizeof(img_name), "vol_%03" PRId64 "_img.h3v", v);
        std::snprintf(lab_name, sizeof(lab_name), "vol_%03" PRId64 "_lab.h3v", v);
        write_volume((fs::path(out_dir) / img_name).string(), make_image_volume(std::move(img)));
        write_volume((fs::path(out_dir) / lab_name).string(), make_label_volume(std::move(labels)));

        ManifestEntry e;
        e.image = img_name;
        e.label = lab_name;
        e.split = v < spec.train_count                  ? "train"
                  : v < spec.train_count + spec.val_count ? "validation"
                                                          : "test";
        m.entries.push_back(std::move(e));
    }

    const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
    save_manifest(manifest_path, m);
    return manifest_path;
}

// ---- config ------------------------------------------------------------------

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open");
    Config c;
    std::string line;
    std::int64_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty())
            throw UsageError(path + ":" + std::to_string(lineno) + ": empty key");
        c[key] = val;
    }
    return c;
}

std::string canonical_config(const Config& c) {
    std::string out;
    for (const auto& [k, v] : c) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

void save_config(const std::string& path, const Config& c) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << canonical_config(c);
    if (!out) throw DataError(path + ": write failed");
}

// ---- checkpoints --------------------------------------------------------------

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");

    const auto names = c.params.names();
    out << "hr3dckpt 1\n";
    out << "arch " << variant_to_string(c.variant) << "\n";
    out << "classes " << c.num_classes << "\n";
    out << "in_channels " << c.in_channels << "\n";
    out << "tensors " << names.size() << "\n";
    std::int64_t offset = 0;
    for (const auto& name : names) {
        const Tensor& t = c.params.get(name);
        const std::int64_t nbytes = t.numel() * static_cast<std::int64_t>(sizeof(float));
        out << "tensor " << name << " f32 " << t.shape().rank();
        for (std::size_t i = 0; i < t.shape().rank(); ++i) out << " " << t.shape()[i];
        out << " " << offset << " " << nbytes << "\n";
        offset += nbytes;
    }
    out << "data\n";
    for (const auto& name : names) {
        const Tensor& t = c.params.get(name);
        out.write(reinterpret_cast<const char*>(t.data()),
                  t.numel() * static_cast<std::int64_t>(sizeof(float)));
    }
    if (!out) throw DataError(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");

    auto magic = split_ws(header_line(in, path));
    if (magic.size() != 2 || magic[0] != "hr3dckpt")
        throw DataError(path + ": not a checkpoint file");
    if (magic[1] != "1")
        throw DataError(path + ": unsupported checkpoint format version " + magic[1]);

    Checkpoint c;
    std::int64_t tensor_count = -1;
    struct Entry {
        std::string name;
        Shape shape;
        std::int64_t offset;
        std::int64_t nbytes;
    };
    std::vector<Entry> list;
    for (;;) {
        auto f = split_ws(header_line(in, path));
        if (f.empty()) continue;
        if (f[0] == "data") break;
        if (f[0] == "arch" && f.size() == 2) {
            c.variant = variant_from_string(f[1]);
        } else if (f[0] == "classes" && f.size() == 2) {
            c.num_classes = parse_i64(f[1], path);
        } else if (f[0] == "in_channels" && f.size() == 2) {
            c.in_channels = parse_i64(f[1], path);
        } else if (f[0] == "tensors" && f.size() == 2) {
            tensor_count = parse_i64(f[1], path);
        } else if (f[0] == "tensor") {
            if (f.size() < 6) throw DataError(path + ": malformed tensor record");
            Entry e;
            e.name = f[1];
            if (f[2] != "f32") throw DataError(path + ": unknown tensor dtype " + f[2]);
            const std::int64_t rank = parse_i64(f[3], path);
            if (rank < 0 || static_cast<std::int64_t>(f.size()) != 6 + rank)
                throw DataError(path + ": malformed tensor record for " + e.name);
            std::vector<std::int64_t> dims;
            for (std::int64_t i = 0; i < rank; ++i)
                dims.push_back(parse_i64(f[static_cast<std::size_t>(4 + i)], path));
            e.shape = Shape(dims);
            e.offset = parse_i64(f[static_cast<std::size_t>(4 + rank)], path);
            e.nbytes = parse_i64(f[static_cast<std::size_t>(5 + rank)], path);
            if (e.nbytes != e.shape.numel() * static_cast<std::int64_t>(sizeof(float)))
                throw DataError(path + ": tensor " + e.name + " length disagrees with its shape");
            list.push_back(std::move(e));
        } else {
            throw DataError(path + ": unrecognised header field '" + f[0] + "'");
        }
    }
    if (tensor_count != static_cast<std::int64_t>(list.size()))
        throw DataError(path + ": tensor count disagrees with manifest");
    if (c.num_classes < 2) throw DataError(path + ": missing or bad class count");

    std::int64_t expect = 0;
    for (const auto& e : list) {
        if (e.offset != expect)
            throw DataError(path + ": tensor " + e.name + " at unexpected offset");
        expect += e.nbytes;
    }
    for (const auto& e : list) {
        Tensor t(e.shape);
        in.read(reinterpret_cast<char*>(t.data()), e.nbytes);
        if (in.gcount() != e.nbytes) throw DataError(path + ": truncated payload");
        c.params.add(e.name, std::move(t));
    }
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0)
        throw DataError(path + ": trailing bytes after payload");
    return c;
}

ArchitectureSpec checkpoint_architecture(const Checkpoint& c) {
    ArchitectureSpec spec = build_highres3dnet(c.variant, c.num_classes, c.in_channels);
    Rng probe(0);
    ParameterStore want = init_parameters(spec, probe);
    for (const auto& name : want.names()) {
        if (!c.params.has(name))
            throw DataError("checkpoint/architecture mismatch: missing tensor " + name);
        if (!(c.params.get(name).shape() == want.get(name).shape()))
            throw DataError("checkpoint/architecture mismatch: tensor " + name +
                            " has shape " + c.params.get(name).shape().str() + ", expected " +
                            want.get(name).shape().str());
    }
    return spec;
}

}  // namespace hr3d
