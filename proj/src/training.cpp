#include "hr3d/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <thread>

#include "hr3d/common.hpp"
#include "hr3d/ops.hpp"
#include "hr3d/simd.hpp"

namespace hr3d {

namespace {

constexpr int kLandmarks = 9;  // foreground deciles p10..p90

void minmaxmean(const Tensor& v, double& vmin, double& vmax, double& vmean) {
    vmin = v[0];
    vmax = v[0];
    double acc = 0;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        const double x = v[i];
        vmin = std::min(vmin, x);
        vmax = std::max(vmax, x);
        acc += x;
    }
    vmean = acc / static_cast<double>(v.numel());
}

std::vector<double> foreground_deciles(const Tensor& v, double tau) {
    std::vector<float> fg;
    fg.reserve(static_cast<std::size_t>(v.numel()) / 2);
    for (std::int64_t i = 0; i < v.numel(); ++i)
        if (v[i] > tau) fg.push_back(v[i]);
    if (fg.empty()) throw DataError("intensity standardisation: empty foreground");
    std::sort(fg.begin(), fg.end());

    std::vector<double> q(kLandmarks);
    const double n1 = static_cast<double>(fg.size() - 1);
    for (int k = 0; k < kLandmarks; ++k) {
        const double pos = 0.1 * static_cast<double>(k + 1) * n1;
        const auto lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        const double a = fg[lo];
        const double b = fg[std::min(lo + 1, fg.size() - 1)];
        q[static_cast<std::size_t>(k)] = a + frac * (b - a);
    }
    return q;
}

// Piecewise-linear map of the input landmarks onto the reference ones,
// extended linearly beyond the end segments.
double map_landmarks(double x, const std::vector<double>& q, const std::vector<float>& ref) {
    auto slope = [&](int i) {
        const double dq = q[static_cast<std::size_t>(i + 1)] - q[static_cast<std::size_t>(i)];
        if (dq < 1e-12) return 0.0;
        return (static_cast<double>(ref[static_cast<std::size_t>(i + 1)]) -
                static_cast<double>(ref[static_cast<std::size_t>(i)])) /
               dq;
    };
    int i = 0;
    if (x >= q[kLandmarks - 1]) {
        i = kLandmarks - 2;
    } else {
        while (i < kLandmarks - 2 && x > q[static_cast<std::size_t>(i + 1)]) ++i;
    }
    return static_cast<double>(ref[static_cast<std::size_t>(i)]) +
           (x - q[static_cast<std::size_t>(i)]) * slope(i);
}

}  // namespace

IntensityModel learn_intensity_model(const std::vector<const Tensor*>& train_images) {
    if (train_images.empty()) throw DataError("intensity model needs at least one volume");
    std::vector<double> acc(kLandmarks, 0.0);
    for (const Tensor* v : train_images) {
        double vmin, vmax, vmean;
        minmaxmean(*v, vmin, vmax, vmean);
        if (!(vmax > vmin)) throw DataError("intensity model: constant volume");
        const auto q = foreground_deciles(*v, vmean);
        for (int k = 0; k < kLandmarks; ++k) acc[static_cast<std::size_t>(k)] += q[static_cast<std::size_t>(k)];
    }
    IntensityModel m;
    m.landmarks.resize(kLandmarks);
    for (int k = 0; k < kLandmarks; ++k)
        m.landmarks[static_cast<std::size_t>(k)] =
            static_cast<float>(acc[static_cast<std::size_t>(k)] / static_cast<double>(train_images.size()));
    return m;
}

Tensor standardize_intensity(const Tensor& volume, const IntensityModel& model,
                             IntensityMode mode, Rng& rng) {
    if (volume.numel() == 0) throw DataError("intensity standardisation: empty volume");
    double vmin, vmax, vmean;
    minmaxmean(volume, vmin, vmax, vmean);
    if (!(vmax > vmin)) throw DataError("intensity standardisation: constant volume");

    const double tau = mode == IntensityMode::kTrain ? rng.uniform(vmin, vmean) : vmean;

    Tensor mapped(volume.shape());
    if (model.trained()) {
        const auto q = foreground_deciles(volume, tau);
        for (std::int64_t i = 0; i < volume.numel(); ++i)
            mapped[i] = static_cast<float>(map_landmarks(volume[i], q, model.landmarks));
    } else {
        std::memcpy(mapped.data(), volume.data(),
                    sizeof(float) * static_cast<std::size_t>(volume.numel()));
    }

    double sum = 0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < volume.numel(); ++i)
        if (volume[i] > tau) {
            sum += mapped[i];
            ++n;
        }
    const double mu = sum / static_cast<double>(n);
    double sq = 0;
    for (std::int64_t i = 0; i < volume.numel(); ++i)
        if (volume[i] > tau) {
            const double d = mapped[i] - mu;
            sq += d * d;
        }
    const double sd = std::sqrt(sq / static_cast<double>(n));
    if (sd < 1e-12) throw DataError("intensity standardisation: foreground has zero spread");

    Tensor out(volume.shape());
    const double inv = 1.0 / sd;
    for (std::int64_t i = 0; i < volume.numel(); ++i)
        out[i] = static_cast<float>((mapped[i] - mu) * inv);
    return out;
}

Tensor intensity_to_tensor(const IntensityModel& m) {
    Tensor t(Shape{static_cast<std::int64_t>(m.landmarks.size())});
    for (std::size_t i = 0; i < m.landmarks.size(); ++i)
        t[static_cast<std::int64_t>(i)] = m.landmarks[i];
    return t;
}

IntensityModel intensity_from_tensor(const Tensor& t) {
    IntensityModel m;
    m.landmarks.resize(static_cast<std::size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        m.landmarks[static_cast<std::size_t>(i)] = t[i];
    return m;
}

// ---- spatial transforms -------------------------------------------------------

namespace {

using Mat3 = std::array<double, 9>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) c[static_cast<std::size_t>(3 * i + j)] +=
                a[static_cast<std::size_t>(3 * i + k)] * b[static_cast<std::size_t>(3 * k + j)];
    return c;
}

Mat3 transpose(const Mat3& a) {
    return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

// Axes ordered (z,y,x): axial rotates the (y,x) plane, coronal the (z,x)
// plane, sagittal the (z,y) plane.
Mat3 plane_rotation(int plane, double deg) {
    const double t = deg * (M_PI / 180.0);
    const double c = std::cos(t), s = std::sin(t);
    switch (plane) {
        case 0: return {1, 0, 0, 0, c, -s, 0, s, c};
        case 1: return {c, 0, -s, 0, 1, 0, s, 0, c};
        default: return {c, -s, 0, s, c, 0, 0, 0, 1};
    }
}

}  // namespace

std::pair<Tensor, TensorI> apply_spatial_transform(const Tensor& image, const TensorI& labels,
                                                   const SpatialTransform& t) {
    if (image.shape().rank() != 4) throw DataError("transform expects a (c,d,h,w) image");
    if (labels.shape().rank() != 3) throw DataError("transform expects (d,h,w) labels");
    const std::int64_t c = image.shape()[0];
    const std::int64_t d = image.shape()[1], h = image.shape()[2], w = image.shape()[3];
    if (!(labels.shape() == Shape{d, h, w}))
        throw DataError("transform: image and label shapes disagree");
    if (t.scale <= 0) throw DataError("transform: scale must be positive");

    if (t.angles_deg[0] == 0 && t.angles_deg[1] == 0 && t.angles_deg[2] == 0 && t.scale == 1.0)
        return {image, labels};

    // forward map: axial, then coronal, then sagittal, then uniform scale;
    // resampling walks the inverse
    const Mat3 fwd = matmul(plane_rotation(2, t.angles_deg[2]),
                            matmul(plane_rotation(1, t.angles_deg[1]), plane_rotation(0, t.angles_deg[0])));
    Mat3 inv = transpose(fwd);
    for (auto& x : inv) x /= t.scale;

    const double cz = 0.5 * static_cast<double>(d - 1);
    const double cy = 0.5 * static_cast<double>(h - 1);
    const double cx = 0.5 * static_cast<double>(w - 1);

    Tensor img_out(image.shape());
    TensorI lab_out(labels.shape());
    const std::int64_t plane_sz = h * w;

    for (std::int64_t z = 0; z < d; ++z)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const double pz = static_cast<double>(z) - cz;
                const double py = static_cast<double>(y) - cy;
                const double px = static_cast<double>(x) - cx;
                const double qz = inv[0] * pz + inv[1] * py + inv[2] * px + cz;
                const double qy = inv[3] * pz + inv[4] * py + inv[5] * px + cy;
                const double qx = inv[6] * pz + inv[7] * py + inv[8] * px + cx;

                const auto z0 = static_cast<std::int64_t>(std::floor(qz));
                const auto y0 = static_cast<std::int64_t>(std::floor(qy));
                const auto x0 = static_cast<std::int64_t>(std::floor(qx));
                const double fz = qz - static_cast<double>(z0);
                const double fy = qy - static_cast<double>(y0);
                const double fx = qx - static_cast<double>(x0);

                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const float* src = image.data() + ch * d * plane_sz;
                    auto sample = [&](std::int64_t zz, std::int64_t yy, std::int64_t xx) -> double {
                        if (zz < 0 || zz >= d || yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
                        return src[(zz * h + yy) * w + xx];
                    };
                    const double v =
                        (1 - fz) * ((1 - fy) * ((1 - fx) * sample(z0, y0, x0) + fx * sample(z0, y0, x0 + 1)) +
                                    fy * ((1 - fx) * sample(z0, y0 + 1, x0) + fx * sample(z0, y0 + 1, x0 + 1))) +
                        fz * ((1 - fy) * ((1 - fx) * sample(z0 + 1, y0, x0) + fx * sample(z0 + 1, y0, x0 + 1)) +
                              fy * ((1 - fx) * sample(z0 + 1, y0 + 1, x0) + fx * sample(z0 + 1, y0 + 1, x0 + 1)));
                    img_out[((ch * d + z) * h + y) * w + x] = static_cast<float>(v);
                }

                const std::int64_t zr = std::clamp<std::int64_t>(std::llround(qz), 0, d - 1);
                const std::int64_t yr = std::clamp<std::int64_t>(std::llround(qy), 0, h - 1);
                const std::int64_t xr = std::clamp<std::int64_t>(std::llround(qx), 0, w - 1);
                lab_out[(z * h + y) * w + x] = labels[(zr * h + yr) * w + xr];
            }
    return {std::move(img_out), std::move(lab_out)};
}

std::pair<Tensor, TensorI> augment_subvolume(const Tensor& image, const TensorI& labels,
                                             const AugmentationConfig& cfg, Rng& rng) {
    if (!cfg.enabled) return {image, labels};
    SpatialTransform t;
    for (int i = 0; i < 3; ++i) t.angles_deg[static_cast<std::size_t>(i)] =
        rng.uniform(-cfg.rotate_deg, cfg.rotate_deg);
    t.scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    return apply_spatial_transform(image, labels, t);
}

// ---- subvolume sampling ---------------------------------------------------------

SubvolumeSample sample_subvolume(const Tensor& image, const TensorI& labels, std::int64_t size,
                                 Rng& rng) {
    if (image.shape().rank() != 4) throw DataError("sampling expects a (c,d,h,w) image");
    const std::int64_t c = image.shape()[0];
    const std::int64_t d = image.shape()[1], h = image.shape()[2], w = image.shape()[3];
    if (!(labels.shape() == Shape{d, h, w}))
        throw DataError("sampling: image and label shapes disagree");
    if (size < 1 || size > d || size > h || size > w)
        throw DataError("subvolume size " + std::to_string(size) + " exceeds volume extent");

    SubvolumeSample s;
    s.origin = {rng.uniform_int(d - size + 1), rng.uniform_int(h - size + 1),
                rng.uniform_int(w - size + 1)};
    s.image = Tensor(Shape{c, size, size, size});
    s.labels = TensorI(Shape{size, size, size});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t z = 0; z < size; ++z)
            for (std::int64_t y = 0; y < size; ++y) {
                const float* src =
                    image.data() + ((ch * d + s.origin[0] + z) * h + s.origin[1] + y) * w + s.origin[2];
                std::memcpy(s.image.data() + ((ch * size + z) * size + y) * size, src,
                            sizeof(float) * static_cast<std::size_t>(size));
            }
    for (std::int64_t z = 0; z < size; ++z)
        for (std::int64_t y = 0; y < size; ++y) {
            const std::int64_t* src =
                labels.data() + ((s.origin[0] + z) * h + s.origin[1] + y) * w + s.origin[2];
            std::memcpy(s.labels.data() + (z * size + y) * size, src,
                        sizeof(std::int64_t) * static_cast<std::size_t>(size));
        }
    return s;
}

// ---- Adam -------------------------------------------------------------------------

void adam_step(ParameterStore& params, const std::map<std::string, Tensor>& grads,
               AdamState& state) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.t));

    for (const auto& [name, g] : grads) {
        Tensor& p = params.get(name);
        if (!p.same_shape(g))
            throw DataError("adam: gradient shape for " + name + " disagrees with the parameter");
        check_finite_span(g.data(), g.numel(), ("gradient of " + name).c_str());

        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(name, Tensor::zeros(p.shape())).first;
            state.v.emplace(name, Tensor::zeros(p.shape()));
        }
        Tensor& m = mit->second;
        Tensor& v = state.v.at(name);
        if (!m.same_shape(g)) throw DataError("adam: stale state for " + name);

        const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const double gi = g[i];
            const double mi = b1 * m[i] + (1 - b1) * gi;
            const double vi = b2 * v[i] + (1 - b2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            p[i] = static_cast<float>(p[i] - state.cfg.lr * (mi / bc1) /
                                                 (std::sqrt(vi / bc2) + state.cfg.eps));
        }
    }
}

// ---- per-step gradients --------------------------------------------------------------

StepGradients compute_gradients(const ArchitectureSpec& spec, const ParameterStore& store,
                                const Tensor& image, const LabelVolume& truth,
                                const std::string& loss_kind, DiceMode dice_mode,
                                Rng& dropout_rng) {
    flush_denormals_in_this_thread();
    Graph g;
    TapeNet net = forward_train(g, spec, store, image, dropout_rng);

    Graph::NodeId loss;
    if (loss_kind == "dice") {
        loss = op_dice_loss(g, net.scores, truth, dice_mode);
    } else if (loss_kind == "xent") {
        loss = op_cross_entropy(g, net.scores, truth);
    } else {
        throw UsageError("unknown loss '" + loss_kind + "' (expected dice or xent)");
    }

    StepGradients out;
    out.loss = g.value(loss)[0];
    if (!std::isfinite(out.loss)) throw NumericError("non-finite training loss");
    g.backward(loss);

    for (const auto& [name, id] : net.params)
        out.grads[name] = g.has_grad(id) ? g.grad(id) : Tensor::zeros(g.value(id).shape());
    out.bn_stats = std::move(net.bn_stats);

    LabelVolume pred{argmax(g.value(net.scores), 0), truth.num_classes};
    out.train_dcs = mean_dcs(pred, truth);
    return out;
}

// ---- training loop ----------------------------------------------------------------------

namespace {

struct LoadedVolume {
    Tensor image;
    TensorI labels;
};

std::vector<LoadedVolume> load_split(const DatasetManifest& data, const std::string& split) {
    std::vector<LoadedVolume> out;
    for (const auto& e : data.split(split)) {
        Volume img = read_volume(data.resolve(e.image));
        Volume lab = read_volume(data.resolve(e.label));
        if (img.dtype != VoxelType::kF32 || lab.dtype != VoxelType::kU16)
            throw DataError("dataset entry " + e.image + " has unexpected dtypes");
        LabelVolume check{lab.labels, data.num_classes};
        check.validate();
        out.push_back({std::move(img.image), std::move(check.labels)});
    }
    return out;
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

TrainResult train(const DatasetManifest& data, const TrainConfig& cfg, const std::string& out_dir) {
    if (cfg.workers != 1 && cfg.workers != 2)
        throw UsageError("worker count must be 1 or 2");
    if (cfg.iters < 1) throw UsageError("iteration count must be positive");
    if (cfg.val_every < 1) throw UsageError("validation cadence must be positive");
    if (cfg.loss != "dice" && cfg.loss != "xent")
        throw UsageError("unknown loss '" + cfg.loss + "' (expected dice or xent)");

    ArchitectureSpec spec = build_highres3dnet(cfg.arch, data.num_classes);
    std::int64_t max_dilation = 1;
    for (const auto& l : spec.layers)
        if (l.kind == LayerKind::kConv)
            max_dilation = std::max(max_dilation, static_cast<std::int64_t>(l.dilation));
    if (cfg.subvolume < 2 * max_dilation + 1)
        throw UsageError("subvolume size must be at least " + std::to_string(2 * max_dilation + 1));

    auto train_set = load_split(data, "train");
    auto val_set = load_split(data, "validation");
    if (train_set.empty()) throw DataError("dataset has no training volumes");
    for (const auto& v : train_set)
        if (v.image.shape()[1] < cfg.subvolume || v.image.shape()[2] < cfg.subvolume ||
            v.image.shape()[3] < cfg.subvolume)
            throw DataError("training volume smaller than the subvolume size");

    Rng master(cfg.seed);
    Rng init_rng = master.child(0);
    ParameterStore params = init_parameters(spec, init_rng);

    IntensityModel intensity;
    if (cfg.standardize) {
        std::vector<const Tensor*> imgs;
        for (const auto& v : train_set) imgs.push_back(&v.image);
        intensity = learn_intensity_model(imgs);
        params.add(kIntensityKey, intensity_to_tensor(intensity));
    }

    std::filesystem::create_directories(out_dir);
    const std::string metrics_path = (std::filesystem::path(out_dir) / "metrics.csv").string();
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw DataError(metrics_path + ": cannot open for writing");
    metrics << "step,loss,train_dcs,val_mean_dcs\n";

    AdamState adam;
    adam.cfg = cfg.adam;

    auto validate = [&]() -> double {
        double acc = 0;
        Rng unused(0);
        for (const auto& v : val_set) {
            Tensor in = cfg.standardize
                            ? standardize_intensity(v.image, intensity, IntensityMode::kTest, unused)
                            : v.image;
            Tensor scores = forward_inference(spec, params, std::move(in));
            LabelVolume pred{argmax(scores, 0), data.num_classes};
            acc += mean_dcs(pred, LabelVolume{v.labels, data.num_classes});
        }
        return acc / static_cast<double>(val_set.size());
    };

    TrainResult result;
    ParameterStore best_params = params;
    double plateau_best = -1.0;
    std::int64_t plateau_misses = 0;
    std::deque<double> dcs_window;
    constexpr std::size_t kWindow = 25;
    bool stop = false;

    for (std::int64_t step = 1; step <= cfg.iters && !stop; ++step) {
        std::vector<StepGradients> sg(static_cast<std::size_t>(cfg.workers));
        auto run_worker = [&](std::int64_t w) {
            Rng r = master.child(static_cast<std::uint64_t>(1 + 2 * step + w));
            const auto& vol = train_set[static_cast<std::size_t>(
                r.uniform_int(static_cast<std::int64_t>(train_set.size())))];
            Tensor img = cfg.standardize
                             ? standardize_intensity(vol.image, intensity, IntensityMode::kTrain, r)
                             : vol.image;
            SubvolumeSample s = sample_subvolume(img, vol.labels, cfg.subvolume, r);
            Tensor sub = std::move(s.image);
            TensorI slab = std::move(s.labels);
            if (cfg.augment.enabled) {
                auto aug = augment_subvolume(sub, slab, cfg.augment, r);
                sub = std::move(aug.first);
                slab = std::move(aug.second);
            }
            sg[static_cast<std::size_t>(w)] = compute_gradients(
                spec, params, sub, LabelVolume{std::move(slab), data.num_classes}, cfg.loss,
                cfg.dice_mode, r);
        };

        if (cfg.workers == 1) {
            run_worker(0);
        } else {
            std::exception_ptr worker_err;
            std::thread th([&] {
                try {
                    run_worker(1);
                } catch (...) {
                    worker_err = std::current_exception();
                }
            });
            try {
                run_worker(0);
            } catch (...) {
                th.join();
                throw;
            }
            th.join();
            if (worker_err) std::rethrow_exception(worker_err);
        }

        double loss = sg[0].loss;
        double train_dcs = sg[0].train_dcs;
        std::map<std::string, Tensor>& grads = sg[0].grads;
        if (cfg.workers == 2) {
            loss = 0.5 * (loss + sg[1].loss);
            train_dcs = 0.5 * (train_dcs + sg[1].train_dcs);
            for (auto& [name, ga] : grads) {
                const Tensor& gb = sg[1].grads.at(name);
                for (std::int64_t i = 0; i < ga.numel(); ++i)
                    ga[i] = 0.5f * (ga[i] + gb[i]);
            }
            for (std::size_t i = 0; i < sg[0].bn_stats.size(); ++i) {
                auto& [name, st] = sg[0].bn_stats[i];
                const auto& other = sg[1].bn_stats[i].second;
                for (std::int64_t k = 0; k < st.mean.numel(); ++k) {
                    st.mean[k] = 0.5f * (st.mean[k] + other.mean[k]);
                    st.var[k] = 0.5f * (st.var[k] + other.var[k]);
                }
            }
        }

        for (const auto& [name, st] : sg[0].bn_stats)
            batchnorm_update_running(params.get(name + ".running_mean"),
                                     params.get(name + ".running_var"), st, kBnMomentum);
        adam_step(params, grads, adam);

        dcs_window.push_back(train_dcs);
        if (dcs_window.size() > kWindow) dcs_window.pop_front();
        double smoothed = 0;
        for (double x : dcs_window) smoothed += x;
        smoothed /= static_cast<double>(dcs_window.size());
        result.final_train_dcs = smoothed;

        std::string val_field;
        const bool last_step = step == cfg.iters;
        if (!val_set.empty() && (step % cfg.val_every == 0 || last_step)) {
            const double val_dcs = validate();
            val_field = fmt_g(val_dcs);
            if (val_dcs > result.best_val_dcs) {
                result.best_val_dcs = val_dcs;
                best_params = params;
            }
            if (cfg.patience > 0) {
                if (val_dcs > plateau_best + 1e-3) {
                    plateau_best = val_dcs;
                    plateau_misses = 0;
                } else if (++plateau_misses >= cfg.patience) {
                    stop = true;
                }
            }
        }

        metrics << step << "," << fmt_g(loss) << "," << fmt_g(train_dcs) << "," << val_field
                << "\n";
        result.steps_run = step;

        if (cfg.target_train_dcs >= 0 && dcs_window.size() == kWindow &&
            smoothed >= cfg.target_train_dcs)
            stop = true;
    }
    metrics.flush();

    if (val_set.empty()) best_params = params;
    result.best.variant = cfg.arch;
    result.best.num_classes = data.num_classes;
    result.best.in_channels = spec.in_channels;
    result.best.params = std::move(best_params);

    const std::string ckpt_path = (std::filesystem::path(out_dir) / "checkpoint.h3c").string();
    save_checkpoint(ckpt_path, result.best);
    result.metrics_path = metrics_path;
    result.checkpoint_path = ckpt_path;
    return result;
}

}  // namespace hr3d
