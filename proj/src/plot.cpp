// Minimal raster bar chart with 95% CI whiskers for the ablation runner.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "dapn/image.hpp"
#include "dapn/train.hpp"

namespace dapn {

namespace {

// 5x7 glyphs, one byte per row, low 5 bits used
const std::map<char, std::array<std::uint8_t, 7>>& font() {
    static const std::map<char, std::array<std::uint8_t, 7>> f = {
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}}, {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
        {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}}, {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D}},
        {'l', {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
        {'%', {0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13}}, {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    return f;
}

struct Canvas {
    Image img;
    explicit Canvas(int w, int h) : img(3, h, w, 1.0f) {}

    void set(int x, int y, float r, float g, float b) {
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
        img.at(0, y, x) = r;
        img.at(1, y, x) = g;
        img.at(2, y, x) = b;
    }
    void rect(int x0, int y0, int x1, int y1, float r, float g, float b) {
        for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
            for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, r, g, b);
    }
    void hline(int x0, int x1, int y, float r, float g, float b) { rect(x0, y, x1, y, r, g, b); }
    void vline(int x, int y0, int y1, float r, float g, float b) { rect(x, y0, x, y1, r, g, b); }
    void text(int x, int y, const std::string& s, float r = 0.0f, float g = 0.0f, float b = 0.0f) {
        const auto& f = font();
        for (char c : s) {
            auto it = f.find(c);
            if (it != f.end())
                for (int row = 0; row < 7; ++row)
                    for (int col = 0; col < 5; ++col)
                        if (it->second[static_cast<size_t>(row)] & (1 << (4 - col))) set(x + col, y + row, r, g, b);
            x += 6;
        }
    }
};

}  // namespace

void write_ablation_plot(const std::filesystem::path& png_path, const AblationResult& result) {
    const int W = 560, H = 360;
    const int left = 48, right = 20, top = 24, bottom = 40;
    Canvas c(W, H);

    // per-variant mean and across-seed 95% CI
    std::vector<std::string> labels;
    std::vector<double> means, errs;
    for (Variant v : result.variants) {
        std::vector<double> accs;
        for (const auto& row : result.rows)
            if (row.variant == v) accs.push_back(row.report.top1);
        const double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
        double ci = 0.0;
        if (accs.size() > 1) {
            double ss = 0.0;
            for (double a : accs) ss += (a - mean) * (a - mean);
            ci = 1.96 * std::sqrt(ss / (accs.size() - 1)) / std::sqrt(static_cast<double>(accs.size()));
        }
        labels.push_back(variant_name(v) == std::string("Full") ? "Full" : variant_name(v));
        means.push_back(mean);
        errs.push_back(ci);
    }

    const int x0 = left, x1 = W - right, y0 = H - bottom, y1 = top;
    c.vline(x0, y1, y0, 0, 0, 0);
    c.hline(x0, x1, y0, 0, 0, 0);
    auto ytopix = [&](double acc) { return y0 - static_cast<int>(std::lround(acc * (y0 - y1))); };
    for (int tick = 0; tick <= 4; ++tick) {
        const double acc = tick * 0.25;
        const int y = ytopix(acc);
        c.hline(x0 - 3, x0, y, 0, 0, 0);
        char lab[8];
        std::snprintf(lab, sizeof(lab), "%d%%", tick * 25);
        c.text(x0 - 4 - 6 * static_cast<int>(std::strlen(lab)), y - 3, lab);
    }

    const int n = static_cast<int>(means.size());
    const int span = (x1 - x0) / std::max(1, n);
    for (int i = 0; i < n; ++i) {
        const int cx = x0 + span * i + span / 2;
        const int bw = std::max(10, span / 3);
        const int by = ytopix(means[static_cast<size_t>(i)]);
        c.rect(cx - bw / 2, by, cx + bw / 2, y0 - 1, 0.27f, 0.45f, 0.77f);
        // CI whisker
        const int wtop = ytopix(std::min(1.0, means[static_cast<size_t>(i)] + errs[static_cast<size_t>(i)]));
        const int wbot = ytopix(std::max(0.0, means[static_cast<size_t>(i)] - errs[static_cast<size_t>(i)]));
        c.vline(cx, wtop, wbot, 0, 0, 0);
        c.hline(cx - 4, cx + 4, wtop, 0, 0, 0);
        c.hline(cx - 4, cx + 4, wbot, 0, 0, 0);
        const std::string& lab = labels[static_cast<size_t>(i)];
        c.text(cx - 3 * static_cast<int>(lab.size()), y0 + 6, lab);
        char val[16];
        std::snprintf(val, sizeof(val), "%.1f%%", means[static_cast<size_t>(i)] * 100.0);
        c.text(cx - 3 * static_cast<int>(std::strlen(val)), std::max(y1, by - 12), val);
    }

    write_png(png_path, c.img);
}

}  // namespace dapn
