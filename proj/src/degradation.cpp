// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#include "flowsr/degradation.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "flowsr/kernels.hpp"

#include "json.hpp"

namespace flowsr {

namespace fs = std::filesystem;
using Json = nlohmann::json;

void DegradationRecipe::validate() const {
    FLOWSR_REQUIRE(blur_sigma_lo <= blur_sigma_hi, "recipe: blur sigma range inverted");
    FLOWSR_REQUIRE(noise_sigma_lo <= noise_sigma_hi, "recipe: noise sigma range inverted");
    FLOWSR_REQUIRE(downscale_factor >= 1, "recipe: downscale factor must be >= 1");
    FLOWSR_REQUIRE(compression_keep > 0.0 && compression_keep <= 1.0,
                   "recipe: compression_keep must be in (0,1]");
    FLOWSR_REQUIRE(compression_block >= 2, "recipe: compression block too small");
}

// ---------------------------------------------------------------------------
// Procedural HQ images.
// ---------------------------------------------------------------------------

namespace {

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

struct Vec2 {
    double x, y;
};

double shape_signed_distance(int cls, double px, double py, double cx, double cy, double size,
                             double angle) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    // rotate into the shape frame
    const double dx = ca * (px - cx) + sa * (py - cy);
    const double dy = -sa * (px - cx) + ca * (py - cy);
    switch (cls) {
        case 1:  // disc
            return std::sqrt(dx * dx + dy * dy) - size;
        case 2:  // box
            return std::max(std::abs(dx) - size, std::abs(dy) - 0.7 * size);
        case 3: {  // triangle (convex hull of three half planes)
            const Vec2 v0{0.0, -size}, v1{-0.9 * size, 0.75 * size}, v2{0.9 * size, 0.75 * size};
            auto edge = [&](Vec2 a, Vec2 b) {
                const double ex = b.x - a.x, ey = b.y - a.y;
                const double len = std::sqrt(ex * ex + ey * ey);
                // outward normal of a CCW edge
                return ((dy - a.y) * ex - (dx - a.x) * ey) / len;
            };
            return std::max({edge(v0, v1), edge(v1, v2), edge(v2, v0)});
        }
        default:  // stripes live inside a soft disc patch
            return std::sqrt(dx * dx + dy * dy) - 1.3 * size;
    }
}

}  // namespace

std::vector<HqImage> synth_hq(int n, int size, uint64_t seed) {
    FLOWSR_REQUIRE(n >= 1, "synth_hq: need at least one image");
    FLOWSR_REQUIRE(size >= 16 && size % 4 == 0, "synth_hq: invalid size");
    std::vector<HqImage> out(n);
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
        HqImage& hq = out[i];
        hq.class_id = rng.uniform_int(1, kNumShapeClasses);
        hq.img = ImageBuffer(1, 3, size, size);
        ImageBuffer& img = hq.img;

        // smooth background gradient between two colors along a random axis
        double col_a[3], col_b[3];
        for (int ch = 0; ch < 3; ++ch) {
            col_a[ch] = rng.uniform(0.1, 0.9);
            col_b[ch] = rng.uniform(0.1, 0.9);
        }
        const double gang = rng.uniform(0.0, 2.0 * M_PI);
        const double gx = std::cos(gang), gy = std::sin(gang);
        const double bow = rng.uniform(-0.25, 0.25);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double u = ((x + 0.5) / size - 0.5) * gx + ((y + 0.5) / size - 0.5) * gy;
                const double t = std::clamp(0.5 + u + bow * std::sin(2.0 * M_PI * u), 0.0, 1.0);
                for (int ch = 0; ch < 3; ++ch)
                    img.at(0, ch, y, x) = (1.0 - t) * col_a[ch] + t * col_b[ch];
            }

        // shapes of this image's class, with soft edges and a coverage map
        // used to concentrate texture inside them
        ImageBuffer coverage(1, 1, size, size);
        const int num_shapes = hq.class_id == 4 ? rng.uniform_int(1, 2) : rng.uniform_int(2, 4);
        for (int s = 0; s < num_shapes; ++s) {
            const double cx = rng.uniform(0.15, 0.85) * size;
            const double cy = rng.uniform(0.15, 0.85) * size;
            const double sz = rng.uniform(0.10, 0.24) * size;
            const double angle = rng.uniform(0.0, 2.0 * M_PI);
            double col[3];
            for (int ch = 0; ch < 3; ++ch) col[ch] = rng.uniform(0.05, 0.95);
            const double stripe_freq = rng.uniform(0.25, 0.45);  // cycles per pixel
            const double stripe_ang = rng.uniform(0.0, M_PI);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double d = shape_signed_distance(hq.class_id, x + 0.5, y + 0.5, cx, cy,
                                                           sz, angle);
                    const double cov = smoothstep(-0.75, 0.75, -d);
                    if (cov <= 0.0) continue;
                    double shade = 1.0;
                    if (hq.class_id == 4) {
                        const double u = (x + 0.5) * std::cos(stripe_ang) +
                                         (y + 0.5) * std::sin(stripe_ang);
                        shade = 0.55 + 0.45 * std::sin(2.0 * M_PI * stripe_freq * u);
                    }
                    for (int ch = 0; ch < 3; ++ch) {
                        const double target = col[ch] * shade;
                        img.at(0, ch, y, x) =
                            (1.0 - cov) * img.at(0, ch, y, x) + cov * target;
                    }
                    coverage.at(0, 0, y, x) = std::max(coverage.at(0, 0, y, x), cov);
                }
        }

        // band-limited texture, stronger inside shapes
        const int ncomp = rng.uniform_int(4, 7);
        std::vector<double> fx(ncomp), fy(ncomp), ph(ncomp), amp(ncomp);
        for (int k = 0; k < ncomp; ++k) {
            const double f = rng.uniform(5.0, 18.0);  // cycles per image
            const double a = rng.uniform(0.0, 2.0 * M_PI);
            fx[k] = f * std::cos(a);
            fy[k] = f * std::sin(a);
            ph[k] = rng.uniform(0.0, 2.0 * M_PI);
            amp[k] = rng.uniform(0.015, 0.045);
        }
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double tex = 0.0;
                for (int k = 0; k < ncomp; ++k)
                    tex += amp[k] * std::sin(2.0 * M_PI * (fx[k] * x + fy[k] * y) / size + ph[k]);
                const double gain = 0.6 + 1.4 * coverage.at(0, 0, y, x);
                for (int ch = 0; ch < 3; ++ch) img.at(0, ch, y, x) += gain * tex;
            }
        clamp01(img);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Degradation pipeline.
// ---------------------------------------------------------------------------

namespace {

// Orthonormal DCT-II matrix rows.
std::vector<double> dct_matrix(int b) {
    std::vector<double> m(static_cast<size_t>(b) * b);
    for (int k = 0; k < b; ++k)
        for (int i = 0; i < b; ++i)
            m[k * b + i] = std::sqrt((k == 0 ? 1.0 : 2.0) / b) *
                           std::cos(M_PI * (2.0 * i + 1.0) * k / (2.0 * b));
    return m;
}

// Zigzag scan order of a b x b block.
std::vector<int> zigzag_order(int b) {
    std::vector<int> order;
    order.reserve(static_cast<size_t>(b) * b);
    for (int s = 0; s <= 2 * (b - 1); ++s)
        for (int i = 0; i <= s; ++i) {
            const int u = (s % 2 == 0) ? s - i : i;
            const int v = s - u;
            if (u < b && v < b) order.push_back(u * b + v);
        }
    return order;
}

void compress_blocks(ImageBuffer& img, int b, double keep) {
    FLOWSR_REQUIRE(img.h % b == 0 && img.w % b == 0,
                   "degrade: image dims must be divisible by the compression block");
    const auto m = dct_matrix(b);
    const auto order = zigzag_order(b);
    const int kept = static_cast<int>(std::ceil(keep * b * b));
    std::vector<double> block(static_cast<size_t>(b) * b), tmp(block.size()),
        coef(block.size());
    for (int ch = 0; ch < img.c; ++ch)
        for (int by = 0; by < img.h; by += b)
            for (int bx = 0; bx < img.w; bx += b) {
                for (int y = 0; y < b; ++y)
                    for (int x = 0; x < b; ++x) block[y * b + x] = img.at(0, ch, by + y, bx + x);
                // C = M X M^T
                for (int k = 0; k < b; ++k)
                    for (int x = 0; x < b; ++x) {
                        double acc = 0;
                        for (int y = 0; y < b; ++y) acc += m[k * b + y] * block[y * b + x];
                        tmp[k * b + x] = acc;
                    }
                for (int k = 0; k < b; ++k)
                    for (int l = 0; l < b; ++l) {
                        double acc = 0;
                        for (int x = 0; x < b; ++x) acc += tmp[k * b + x] * m[l * b + x];
                        coef[k * b + l] = acc;
                    }
                for (int i = kept; i < b * b; ++i) coef[order[i]] = 0.0;
                // X = M^T C M
                for (int y = 0; y < b; ++y)
                    for (int l = 0; l < b; ++l) {
                        double acc = 0;
                        for (int k = 0; k < b; ++k) acc += m[k * b + y] * coef[k * b + l];
                        tmp[y * b + l] = acc;
                    }
                for (int y = 0; y < b; ++y)
                    for (int x = 0; x < b; ++x) {
                        double acc = 0;
                        for (int l = 0; l < b; ++l) acc += tmp[y * b + l] * m[l * b + x];
                        img.at(0, ch, by + y, bx + x) = acc;
                    }
            }
}

}  // namespace

ImageBuffer degrade(const ImageBuffer& hq, const DegradationRecipe& recipe, Rng& rng) {
    recipe.validate();
    FLOWSR_REQUIRE(hq.h % recipe.downscale_factor == 0 && hq.w % recipe.downscale_factor == 0,
                   "degrade: dims must be divisible by the downscale factor");
    // Draw order is fixed regardless of which stages are active.
    const double blur_sigma = rng.uniform(recipe.blur_sigma_lo, recipe.blur_sigma_hi);
    const double noise_sigma = rng.uniform(recipe.noise_sigma_lo, recipe.noise_sigma_hi);

    ImageBuffer x = hq;
    if (blur_sigma > 0.0) {
        x = kernels::gaussian_blur(x, blur_sigma);
        clamp01(x);
    }
    if (recipe.downscale_factor > 1) {
        x = kernels::resample_bicubic(x, hq.h / recipe.downscale_factor,
                                      hq.w / recipe.downscale_factor);
        clamp01(x);
    }
    if (noise_sigma > 0.0) {
        for (auto& v : x.v) v += noise_sigma * rng.normal();
        clamp01(x);
    }
    if (recipe.compression_keep < 1.0) {
        compress_blocks(x, recipe.compression_block, recipe.compression_keep);
        clamp01(x);
    }
    return x;
}

std::vector<ImagePair> make_pairs(const std::vector<HqImage>& hq_set,
                                  const DegradationRecipe& recipe, uint64_t seed) {
    std::vector<ImagePair> pairs(hq_set.size());
    for (size_t i = 0; i < hq_set.size(); ++i) {
        Rng rng(mix_seed(seed, i));
        pairs[i].hq = hq_set[i].img;
        pairs[i].lq = degrade(hq_set[i].img, recipe, rng);
        pairs[i].class_id = hq_set[i].class_id;
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Spectral detail score.
// ---------------------------------------------------------------------------

namespace {

double high_band_energy(const ImageBuffer& img) {
    // luminance DFT energy at radial frequency above Nyquist/4; a Hann window
    // keeps the periodic boundary jump from polluting the high band
    const int n = img.h;
    std::vector<double> hann(n);
    for (int i = 0; i < n; ++i) hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (n - 1));
    std::vector<double> lum(static_cast<size_t>(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            lum[y * n + x] = hann[y] * hann[x] *
                             (0.299 * img.at(0, 0, y, x) + 0.587 * img.at(0, 1, y, x) +
                              0.114 * img.at(0, 2, y, x));
    // separable naive DFT
    std::vector<double> re_rows(lum.size()), im_rows(lum.size());
    for (int y = 0; y < n; ++y)
        for (int u = 0; u < n; ++u) {
            double re = 0, im = 0;
            for (int x = 0; x < n; ++x) {
                const double a = -2.0 * M_PI * u * x / n;
                re += lum[y * n + x] * std::cos(a);
                im += lum[y * n + x] * std::sin(a);
            }
            re_rows[y * n + u] = re;
            im_rows[y * n + u] = im;
        }
    double energy = 0;
    const double threshold = n / 8.0;  // Nyquist (n/2) over 4
    for (int v = 0; v < n; ++v)
        for (int u = 0; u < n; ++u) {
            double re = 0, im = 0;
            for (int y = 0; y < n; ++y) {
                const double a = -2.0 * M_PI * v * y / n;
                const double c = std::cos(a), s = std::sin(a);
                re += re_rows[y * n + u] * c - im_rows[y * n + u] * s;
                im += re_rows[y * n + u] * s + im_rows[y * n + u] * c;
            }
            const double fu = std::min(u, n - u);
            const double fv = std::min(v, n - v);
            if (std::sqrt(fu * fu + fv * fv) > threshold) energy += re * re + im * im;
        }
    return energy / (static_cast<double>(n) * n);
}

}  // namespace

double spectral_detail_score(const std::vector<HqImage>& set) {
    FLOWSR_REQUIRE(!set.empty(), "spectral_detail_score: empty set");
    const int n = set[0].img.h;
    ImageBuffer ramp(1, 3, n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (int ch = 0; ch < 3; ++ch) ramp.at(0, ch, y, x) = (x + 0.5) / n;
    const double ref = high_band_energy(ramp);
    double mean = 0;
    for (const auto& hq : set) mean += high_band_energy(hq.img);
    mean /= static_cast<double>(set.size());
    return mean / ref;
}

// ---------------------------------------------------------------------------
// Dataset I/O.
// ---------------------------------------------------------------------------

namespace {

Json recipe_to_json(const DegradationRecipe& r) {
    return Json{{"blur_sigma_lo", r.blur_sigma_lo},
                {"blur_sigma_hi", r.blur_sigma_hi},
                {"downscale_factor", r.downscale_factor},
                {"noise_sigma_lo", r.noise_sigma_lo},
                {"noise_sigma_hi", r.noise_sigma_hi},
                {"compression_block", r.compression_block},
                {"compression_keep", r.compression_keep},
                {"order_seed", r.order_seed}};
}

DegradationRecipe recipe_from_json(const Json& j) {
    DegradationRecipe r;
    r.blur_sigma_lo = j.at("blur_sigma_lo");
    r.blur_sigma_hi = j.at("blur_sigma_hi");
    r.downscale_factor = j.at("downscale_factor");
    r.noise_sigma_lo = j.at("noise_sigma_lo");
    r.noise_sigma_hi = j.at("noise_sigma_hi");
    r.compression_block = j.at("compression_block");
    r.compression_keep = j.at("compression_keep");
    r.order_seed = j.at("order_seed");
    return r;
}

void quantize8(ImageBuffer& img) {
    for (auto& v : img.v) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

std::string index_name(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d.png", prefix, i);
    return buf;
}

}  // namespace

Dataset make_dataset(int n, int size, uint64_t seed, const DegradationRecipe& recipe) {
    Dataset ds;
    ds.seed = seed;
    ds.recipe = recipe;
    auto hq = synth_hq(n, size, seed);
    ds.detail_score = spectral_detail_score(hq);
    ds.pairs = make_pairs(hq, recipe, mix_seed(seed, 0x9e1));
    for (auto& p : ds.pairs) {
        quantize8(p.hq);
        quantize8(p.lq);
    }
    return ds;
}

void write_dataset(const std::string& dir, const Dataset& ds) {
    fs::create_directories(dir);
    Json manifest;
    manifest["n"] = ds.pairs.size();
    manifest["size"] = ds.pairs.empty() ? 0 : ds.pairs[0].hq.h;
    manifest["seed"] = ds.seed;
    manifest["recipe"] = recipe_to_json(ds.recipe);
    manifest["detail_score"] = ds.detail_score;
    Json images = Json::array();
    for (size_t i = 0; i < ds.pairs.size(); ++i) {
        const std::string hq_name = index_name("hq", static_cast<int>(i));
        const std::string lq_name = index_name("lq", static_cast<int>(i));
        write_png(dir + "/" + hq_name, ds.pairs[i].hq);
        write_png(dir + "/" + lq_name, ds.pairs[i].lq);
        images.push_back(Json{{"id", i},
                              {"class_id", ds.pairs[i].class_id},
                              {"hq", hq_name},
                              {"lq", lq_name}});
    }
    manifest["images"] = images;
    std::ofstream out(dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw_runtime("load_dataset: missing manifest in " + dir);
    Json manifest = Json::parse(in);
    Dataset ds;
    ds.seed = manifest.at("seed");
    ds.recipe = recipe_from_json(manifest.at("recipe"));
    ds.detail_score = manifest.at("detail_score");
    for (const auto& entry : manifest.at("images")) {
        ImagePair p;
        p.hq = read_png(dir + "/" + entry.at("hq").get<std::string>());
        p.lq = read_png(dir + "/" + entry.at("lq").get<std::string>());
        p.class_id = entry.at("class_id");
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

}  // namespace flowsr
