#pragma once

// Image quality metrics: PSNR, single-scale SSIM and elementwise difference stats.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "repast/image.hpp"

namespace repast {

inline constexpr double kPsnrCap = 99.0;

namespace detail {
inline void require_same_shape(const ImageF& a, const ImageF& b, const char* what) {
    if (!a.same_shape(b) || a.data.size() != b.data.size())
        throw std::invalid_argument(std::string(what) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                    std::to_string(b.width) + ")");
}
inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }
}  // namespace detail

/// 10 log10(1 / MSE) over all components with MAX = 1, capped at kPsnrCap.
inline double psnr(const ImageF& a, const ImageF& b) {
    detail::require_same_shape(a, b, "psnr");
    if (a.data.empty()) throw std::invalid_argument("psnr: empty image");
    double se = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = detail::clamp01(a.data[i]) - detail::clamp01(b.data[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.data.size());
    if (mse == 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

struct SsimConfig {
    static constexpr int window = 11;
    static constexpr double sigma = 1.5;
    static constexpr double k1 = 0.01;
    static constexpr double k2 = 0.03;
};

/// Normalized 2-D Gaussian window, row-major window x window.
inline std::array<double, SsimConfig::window * SsimConfig::window> ssim_window() {
    constexpr int n = SsimConfig::window;
    std::array<double, n> g{};
    double s = 0;
    for (int i = 0; i < n; ++i) {
        const double x = i - (n - 1) / 2.0;
        g[i] = std::exp(-x * x / (2 * SsimConfig::sigma * SsimConfig::sigma));
        s += g[i];
    }
    for (double& v : g) v /= s;
    std::array<double, n * n> w{};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) w[i * n + j] = g[i] * g[j];
    return w;
}

/// Mean SSIM over all valid window positions, computed per channel then averaged.
inline double ssim(const ImageF& a, const ImageF& b) {
    detail::require_same_shape(a, b, "ssim");
    constexpr int n = SsimConfig::window;
    if (a.height < n || a.width < n)
        throw std::invalid_argument("ssim: image must be at least 11x11, got " + std::to_string(a.height) + "x" +
                                    std::to_string(a.width));
    static const auto w = ssim_window();
    const double c1 = SsimConfig::k1 * SsimConfig::k1, c2 = SsimConfig::k2 * SsimConfig::k2;
    const int oh = a.height - n + 1, ow = a.width - n + 1;
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        double chan = 0;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double wt = w[i * n + j];
                        const double u = detail::clamp01(a.at(y + i, x + j, c));
                        const double v = detail::clamp01(b.at(y + i, x + j, c));
                        mx += wt * u;
                        my += wt * v;
                        sxx += wt * (u * u);
                        syy += wt * (v * v);
                        sxy += wt * (u * v);
                    }
                const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
                chan += ((2 * (mx * my) + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        total += chan / (static_cast<double>(oh) * ow);
    }
    return total / 3.0;
}

struct ChannelStats {
    double max_abs = 0;
    double mean_abs = 0;
};

struct DiffReport {
    double max_abs = 0;
    double mean_abs = 0;
    std::array<ChannelStats, 3> channels{};
};

/// Elementwise |a - b| statistics, overall and per channel.
inline DiffReport diff_report(const ImageF& a, const ImageF& b) {
    detail::require_same_shape(a, b, "diff_report");
    DiffReport r;
    const std::size_t pixels = a.data.size() / 3;
    std::array<double, 3> sums{};
    for (std::size_t p = 0; p < pixels; ++p)
        for (int c = 0; c < 3; ++c) {
            const double d = std::abs(a.data[p * 3 + c] - b.data[p * 3 + c]);
            sums[c] += d;
            r.channels[c].max_abs = std::max(r.channels[c].max_abs, d);
        }
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        r.channels[c].mean_abs = pixels ? sums[c] / static_cast<double>(pixels) : 0.0;
        r.max_abs = std::max(r.max_abs, r.channels[c].max_abs);
        total += sums[c];
    }
    r.mean_abs = a.data.empty() ? 0.0 : total / static_cast<double>(a.data.size());
    return r;
}

}  // namespace repast
