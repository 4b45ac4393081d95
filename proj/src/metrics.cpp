// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#include "flowsr/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <sstream>

#include "flowsr/losses.hpp"

namespace flowsr {

Tensor<double> rgb_to_y(const ImageBuffer& img) {
    FLOWSR_REQUIRE(img.c == 3, "rgb_to_y: expected 3 channels");
    Tensor<double> y(img.n, 1, img.h, img.w);
    for (int in = 0; in < img.n; ++in)
        for (int iy = 0; iy < img.h; ++iy)
            for (int ix = 0; ix < img.w; ++ix)
                y.at(in, 0, iy, ix) = 0.299 * img.at(in, 0, iy, ix) +
                                      0.587 * img.at(in, 1, iy, ix) +
                                      0.114 * img.at(in, 2, iy, ix);
    return y;
}

double psnr_y(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_shape(a, b, "psnr_y");
    const double mse = mean_squared_diff(rgb_to_y(a), rgb_to_y(b));
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> ssim_window() {
    const double sigma = 1.5;
    std::vector<double> w(11);
    double total = 0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5;
        w[i] = std::exp(-0.5 * d * d / (sigma * sigma));
        total += w[i];
    }
    for (auto& x : w) x /= total;
    return w;
}

// Separable valid-region filtering of an (h,w) plane.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& taps, int& oh, int& ow) {
    const int r = static_cast<int>(taps.size());
    ow = w - r + 1;
    oh = h - r + 1;
    std::vector<double> tmp(static_cast<size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < r; ++i) acc += taps[i] * img[y * w + x + i];
            tmp[y * ow + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < r; ++i) acc += taps[i] * tmp[(y + i) * ow + x];
            out[y * ow + x] = acc;
        }
    return out;
}

}  // namespace

double ssim_y(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_shape(a, b, "ssim_y");
    FLOWSR_REQUIRE(a.h >= 11 && a.w >= 11, "ssim_y: image smaller than the 11x11 window");
    const Tensor<double> ya = rgb_to_y(a), yb = rgb_to_y(b);
    const int h = a.h, w = a.w;
    std::vector<double> pa(ya.v.begin(), ya.v.end()), pb(yb.v.begin(), yb.v.end());
    std::vector<double> paa(pa.size()), pbb(pa.size()), pab(pa.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        paa[i] = pa[i] * pa[i];
        pbb[i] = pb[i] * pb[i];
        pab[i] = pa[i] * pb[i];
    }
    const auto win = ssim_window();
    int oh = 0, ow = 0;
    const auto mu_a = filter_valid(pa, h, w, win, oh, ow);
    const auto mu_b = filter_valid(pb, h, w, win, oh, ow);
    const auto m_aa = filter_valid(paa, h, w, win, oh, ow);
    const auto m_bb = filter_valid(pbb, h, w, win, oh, ow);
    const auto m_ab = filter_valid(pab, h, w, win, oh, ow);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cab = m_ab[i] - mu_a[i] * mu_b[i];
        total += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cab + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

// ---------------------------------------------------------------------------
// Frechet feature distance.
// ---------------------------------------------------------------------------

int pooled_feature_dim(const Encoder<double>& featnet) {
    return 2 * featnet.base_width + featnet.latent_channels;
}

std::vector<double> pooled_features(const ImageBuffer& img, Encoder<double>& featnet) {
    auto taps = featnet.forward_taps(img, false);
    std::vector<double> feat;
    feat.reserve(pooled_feature_dim(featnet));
    const Tensor<double>& deep = taps.taps.back();
    for (int c = 0; c < deep.c; ++c) {
        double acc = 0;
        for (int y = 0; y < deep.h; ++y)
            for (int x = 0; x < deep.w; ++x) acc += deep.at(0, c, y, x);
        feat.push_back(acc / (deep.h * deep.w));
    }
    for (int c = 0; c < taps.latent.c; ++c) {
        double acc = 0;
        for (int y = 0; y < taps.latent.h; ++y)
            for (int x = 0; x < taps.latent.w; ++x) acc += taps.latent.at(0, c, y, x);
        feat.push_back(acc / (taps.latent.h * taps.latent.w));
    }
    return feat;
}

namespace {

void fit_gaussian(const std::vector<std::vector<double>>& feats, Eigen::VectorXd& mu,
                  Eigen::MatrixXd& cov) {
    const int m = static_cast<int>(feats.size());
    const int d = static_cast<int>(feats[0].size());
    Eigen::MatrixXd x(m, d);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = feats[i][j];
    mu = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(m - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_from_features(const std::vector<std::vector<double>>& feats_a,
                             const std::vector<std::vector<double>>& feats_b) {
    FLOWSR_REQUIRE(!feats_a.empty() && !feats_b.empty(), "frechet: empty feature set");
    const int d = static_cast<int>(feats_a[0].size());
    FLOWSR_REQUIRE(static_cast<int>(feats_a.size()) >= d + 1 &&
                       static_cast<int>(feats_b.size()) >= d + 1,
                   "frechet: need at least dim+1 samples per set");
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    fit_gaussian(feats_a, mu_a, cov_a);
    fit_gaussian(feats_b, mu_b, cov_b);
    const Eigen::MatrixXd sqrt_a = psd_sqrt(cov_a);
    Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
    inner = 0.5 * (inner + inner.transpose());  // symmetrize against roundoff
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double dist = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() -
                        2.0 * tr_sqrt;
    return std::max(0.0, dist);
}

double frechet_feature_distance(const std::vector<ImageBuffer>& set_a,
                                const std::vector<ImageBuffer>& set_b,
                                Encoder<double>& featnet) {
    std::vector<std::vector<double>> fa, fb;
    fa.reserve(set_a.size());
    fb.reserve(set_b.size());
    for (const auto& img : set_a) fa.push_back(pooled_features(img, featnet));
    for (const auto& img : set_b) fb.push_back(pooled_features(img, featnet));
    return frechet_from_features(fa, fb);
}

// ---------------------------------------------------------------------------
// Evaluation pass.
// ---------------------------------------------------------------------------

MetricsReport evaluate(StudentModel<double>& student, const std::vector<ImagePair>& test_pairs,
                       AutoEncoder<double>& ae) {
    MetricsReport report;
    std::vector<std::vector<double>> out_feats, hq_feats;
    for (size_t i = 0; i < test_pairs.size(); ++i) {
        const auto& pair = test_pairs[i];
        const int64_t evals_before = student.denoiser_evals();
        auto out = student.forward(pair.lq, false);
        MetricsRow row;
        row.id = std::to_string(i);
        row.denoiser_evals = student.denoiser_evals() - evals_before;
        row.psnr_y = psnr_y(out.xhat, pair.hq);
        row.ssim_y = ssim_y(out.xhat, pair.hq);
        row.perceptual = perceptual_distance(out.xhat, pair.hq, ae.enc);
        report.rows.push_back(row);
        out_feats.push_back(pooled_features(out.xhat, ae.enc));
        hq_feats.push_back(pooled_features(pair.hq, ae.enc));
    }
    auto mean_std = [&](auto get, double& mean, double& sd) {
        mean = 0;
        for (const auto& r : report.rows) mean += get(r);
        mean /= static_cast<double>(report.rows.size());
        sd = 0;
        for (const auto& r : report.rows) sd += (get(r) - mean) * (get(r) - mean);
        sd = std::sqrt(sd / static_cast<double>(report.rows.size()));
    };
    if (!report.rows.empty()) {
        mean_std([](const MetricsRow& r) { return r.psnr_y; }, report.mean_psnr,
                 report.std_psnr);
        mean_std([](const MetricsRow& r) { return r.ssim_y; }, report.mean_ssim,
                 report.std_ssim);
        mean_std([](const MetricsRow& r) { return r.perceptual; }, report.mean_perceptual,
                 report.std_perceptual);
    }
    const int dim = static_cast<int>(out_feats.empty() ? 0 : out_feats[0].size());
    report.ffd = (static_cast<int>(out_feats.size()) >= dim + 1)
                     ? frechet_from_features(out_feats, hq_feats)
                     : std::nan("");
    return report;
}

std::string report_to_csv(const MetricsReport& report) {
    std::ostringstream os;
    os.precision(17);
    os << "id,psnr_y,ssim_y,perceptual,denoiser_evals\n";
    for (const auto& r : report.rows)
        os << r.id << "," << r.psnr_y << "," << r.ssim_y << "," << r.perceptual << ","
           << r.denoiser_evals << "\n";
    os << "# mean_psnr_y," << report.mean_psnr << "\n";
    os << "# std_psnr_y," << report.std_psnr << "\n";
    os << "# mean_ssim_y," << report.mean_ssim << "\n";
    os << "# std_ssim_y," << report.std_ssim << "\n";
    os << "# mean_perceptual," << report.mean_perceptual << "\n";
    os << "# std_perceptual," << report.std_perceptual << "\n";
    os << "# ffd," << report.ffd << "\n";
    return os.str();
}

void write_report_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream out(path);
    if (!out) throw_runtime("write_report_csv: cannot open " + path);
    out << report_to_csv(report);
}

}  // namespace flowsr
