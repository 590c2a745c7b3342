#include "sarmatch/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "sarmatch/errors.hpp"

namespace fs = std::filesystem;

namespace sarmatch {

std::vector<int> DatasetManifest::labeled_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].labeled) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> DatasetManifest::unlabeled_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < entries.size(); ++i)
        if (!entries[i].labeled) out.push_back(static_cast<int>(i));
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trimmed(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest: " + path);
    DatasetManifest m;
    m.base_dir = fs::path(path).parent_path().string();

    std::string line;
    int lineno = 0;
    if (!std::getline(is, line)) throw IoError(path + ": empty manifest");
    ++lineno;
    {
        auto hdr = split_csv_line(line);
        if (hdr.size() < 2 || trimmed(hdr[0]) != "optical" || trimmed(hdr[1]) != "sar")
            throw IoError(path + ":1: expected header optical,sar,row,col");
    }
    std::set<std::pair<std::string, std::string>> seen;
    while (std::getline(is, line)) {
        ++lineno;
        if (trimmed(line).empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() < 2 || f.size() > 4)
            throw IoError(path + ":" + std::to_string(lineno) + ": expected 2-4 fields, got " +
                          std::to_string(f.size()));
        ManifestEntry e;
        e.optical_path = trimmed(f[0]);
        e.sar_path = trimmed(f[1]);
        if (e.optical_path.empty() || e.sar_path.empty())
            throw IoError(path + ":" + std::to_string(lineno) + ": empty image path");
        const std::string row_s = f.size() > 2 ? trimmed(f[2]) : "";
        const std::string col_s = f.size() > 3 ? trimmed(f[3]) : "";
        if (row_s.empty() != col_s.empty())
            throw IoError(path + ":" + std::to_string(lineno) + ": row and col must come together");
        if (!row_s.empty()) {
            try {
                e.row = std::stoi(row_s);
                e.col = std::stoi(col_s);
            } catch (const std::exception&) {
                throw IoError(path + ":" + std::to_string(lineno) + ": non-integer row/col");
            }
            if (e.row < 0 || e.col < 0)
                throw IoError(path + ":" + std::to_string(lineno) + ": negative offset");
            e.labeled = true;
        }
        for (const std::string* p : {&e.optical_path, &e.sar_path}) {
            fs::path full = fs::path(m.base_dir) / *p;
            if (!fs::exists(full))
                throw IoError(path + ":" + std::to_string(lineno) + ": missing file " +
                              full.string());
        }
        auto key = std::make_pair(e.optical_path, e.sar_path);
        if (!seen.insert(key).second)
            std::cerr << "warning: " << path << ":" << lineno << ": duplicate pair "
                      << e.optical_path << "," << e.sar_path << "\n";
        m.entries.push_back(std::move(e));
    }
    return m;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "optical,sar,row,col\n";
    for (const auto& e : manifest.entries) {
        os << e.optical_path << "," << e.sar_path << ",";
        if (e.labeled) os << e.row << "," << e.col;
        else os << ",";
        os << "\n";
    }
    if (!os) throw IoError("write failed: " + path);
}

ImagePair crop_template_at(const Image& optical, const Image& sar_aligned, int tpl_h, int tpl_w,
                           int row, int col) {
    if (optical.h != sar_aligned.h || optical.w != sar_aligned.w)
        throw ArgumentError("crop_template: pair not aligned (" + std::to_string(optical.h) + "x" +
                            std::to_string(optical.w) + " vs " + std::to_string(sar_aligned.h) +
                            "x" + std::to_string(sar_aligned.w) + ")");
    if (tpl_h > optical.h || tpl_w > optical.w)
        throw ArgumentError("crop_template: template larger than the pair");
    if (row < 0 || col < 0 || row > optical.h - tpl_h || col > optical.w - tpl_w)
        throw ArgumentError("crop_template: offset (" + std::to_string(row) + "," +
                            std::to_string(col) + ") outside the valid grid");
    ImagePair p;
    p.optical = optical;
    p.sar = make_image(tpl_h, tpl_w);
    for (int y = 0; y < tpl_h; ++y)
        for (int x = 0; x < tpl_w; ++x) p.sar.at(y, x) = sar_aligned.at(row + y, col + x);
    p.has_gt = true;
    p.gt_row = row;
    p.gt_col = col;
    p.labeled = true;
    return p;
}

ImagePair crop_template(const Image& optical, const Image& sar_aligned, int tpl_h, int tpl_w,
                        Rng& rng) {
    if (optical.h != sar_aligned.h || optical.w != sar_aligned.w)
        throw ArgumentError("crop_template: pair not aligned");
    if (tpl_h > optical.h || tpl_w > optical.w)
        throw ArgumentError("crop_template: template larger than the pair");
    const int row = static_cast<int>(rng.range(0, optical.h - tpl_h));
    const int col = static_cast<int>(rng.range(0, optical.w - tpl_w));
    return crop_template_at(optical, sar_aligned, tpl_h, tpl_w, row, col);
}

ModalityGap gap_from_string(const std::string& s) {
    if (s == "none") return ModalityGap::None;
    if (s == "mild") return ModalityGap::Mild;
    if (s == "harsh") return ModalityGap::Harsh;
    throw ArgumentError("unknown modality gap '" + s + "' (expected none|mild|harsh)");
}

std::string to_string(ModalityGap g) {
    switch (g) {
        case ModalityGap::None: return "none";
        case ModalityGap::Mild: return "mild";
        case ModalityGap::Harsh: return "harsh";
    }
    return "?";
}

namespace {

void box_blur_inplace(Image& img, int radius) {
    // separable box blur with clamped borders
    const int h = img.h, w = img.w;
    std::vector<float> tmp(static_cast<size_t>(h) * w);
    const float inv = 1.0f / (2 * radius + 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float s = 0;
            for (int d = -radius; d <= radius; ++d)
                s += img.at(y, std::clamp(x + d, 0, w - 1));
            tmp[static_cast<size_t>(y) * w + x] = s * inv;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float s = 0;
            for (int d = -radius; d <= radius; ++d)
                s += tmp[static_cast<size_t>(std::clamp(y + d, 0, h - 1)) * w + x];
            img.at(y, x) = s * inv;
        }
}

void normalize_01(Image& img) {
    float mn = img.pix[0], mx = img.pix[0];
    for (float v : img.pix) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    const float r = (mx - mn) > 1e-12f ? (mx - mn) : 1.0f;
    for (auto& v : img.pix) v = (v - mn) / r;
}

void fill_polygon(Image& img, const std::vector<std::pair<float, float>>& poly, float delta) {
    // even-odd scanline fill
    float ymin = 1e9f, ymax = -1e9f;
    for (auto& [y, x] : poly) {
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
    }
    const int y0 = std::max(0, static_cast<int>(std::floor(ymin)));
    const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(ymax)));
    const int n = static_cast<int>(poly.size());
    for (int y = y0; y <= y1; ++y) {
        std::vector<float> xs;
        for (int i = 0; i < n; ++i) {
            const auto& [ay, ax] = poly[i];
            const auto& [by, bx] = poly[(i + 1) % n];
            const float fy = static_cast<float>(y) + 0.5f;
            if ((ay <= fy && by > fy) || (by <= fy && ay > fy))
                xs.push_back(ax + (fy - ay) / (by - ay) * (bx - ax));
        }
        std::sort(xs.begin(), xs.end());
        for (size_t i = 0; i + 1 < xs.size(); i += 2) {
            const int xa = std::max(0, static_cast<int>(std::ceil(xs[i] - 0.5f)));
            const int xb = std::min(img.w - 1, static_cast<int>(std::floor(xs[i + 1] - 0.5f)));
            for (int x = xa; x <= xb; ++x) img.at(y, x) += delta;
        }
    }
}

void draw_segment(Image& img, float y0, float x0, float y1, float x1, int thick, float delta) {
    const float len = std::hypot(y1 - y0, x1 - x0);
    const int steps = std::max(2, static_cast<int>(len * 2));
    for (int s = 0; s <= steps; ++s) {
        const float t = static_cast<float>(s) / steps;
        const int cy = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        const int cx = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        for (int dy = -thick; dy <= thick; ++dy)
            for (int dx = -thick; dx <= thick; ++dx) {
                const int y = cy + dy, x = cx + dx;
                if (y >= 0 && y < img.h && x >= 0 && x < img.w) img.at(y, x) = std::clamp(img.at(y, x) + delta, 0.0f, 1.0f);
            }
    }
}

// Scene content mixes fine texture with repeating structure (gratings, rows
// of identical shapes) so template matching has genuine competing offsets,
// not a single smooth correlation bump.
Image synth_optical(int size, Rng& rng) {
    Image img = make_image(size, size);
    for (auto& v : img.pix) v = static_cast<float>(rng.normal());
    box_blur_inplace(img, 1);
    normalize_01(img);
    for (auto& v : img.pix) v = 0.35f + 0.3f * v;

    // periodic gratings over random subregions
    const int n_gratings = static_cast<int>(rng.range(2, 3));
    for (int i = 0; i < n_gratings; ++i) {
        const double period = rng.uniform(8.0, 14.0);
        const double theta = rng.uniform(0.0, 3.14159265);
        const double cy = std::cos(theta), sy = std::sin(theta);
        const double phase = rng.uniform(0.0, period);
        const double duty = rng.uniform(0.3, 0.55);
        const float amp = static_cast<float>(rng.uniform(0.18, 0.32)) *
                          (rng.uniform() < 0.5 ? -1.0f : 1.0f);
        const int ry0 = static_cast<int>(rng.range(0, size / 2));
        const int rx0 = static_cast<int>(rng.range(0, size / 2));
        const int ry1 = std::min(size, ry0 + static_cast<int>(rng.range(size / 3, size)));
        const int rx1 = std::min(size, rx0 + static_cast<int>(rng.range(size / 3, size)));
        for (int y = ry0; y < ry1; ++y)
            for (int x = rx0; x < rx1; ++x) {
                const double t = std::fmod(y * cy + x * sy + phase, period) / period;
                if (t < duty) img.at(y, x) += amp;
            }
    }

    // rows of repeated identical shapes
    const int n_rows = static_cast<int>(rng.range(1, 2));
    for (int i = 0; i < n_rows; ++i) {
        const int verts = static_cast<int>(rng.range(3, 5));
        const float rad = static_cast<float>(rng.uniform(2.5, 5.5));
        std::vector<std::pair<float, float>> base;
        const float rot = static_cast<float>(rng.uniform(0.0, 6.2831853));
        for (int v = 0; v < verts; ++v) {
            const float a = rot + 6.2831853f * v / verts;
            const float rr = rad * (0.7f + 0.6f * static_cast<float>(rng.uniform(0.0, 1.0)));
            base.emplace_back(rr * std::sin(a), rr * std::cos(a));
        }
        const double spacing = rng.uniform(9.0, 15.0);
        const double dir = rng.uniform(0.0, 3.14159265);
        const int count = static_cast<int>(rng.range(3, 5));
        float cy = static_cast<float>(rng.uniform(0.15, 0.85)) * size;
        float cx = static_cast<float>(rng.uniform(0.15, 0.85)) * size;
        const float delta = static_cast<float>(rng.uniform(0.22, 0.4)) *
                            (rng.uniform() < 0.5 ? -1.0f : 1.0f);
        for (int c = 0; c < count; ++c) {
            std::vector<std::pair<float, float>> poly;
            for (auto& [dy, dx] : base) poly.emplace_back(cy + dy, cx + dx);
            fill_polygon(img, poly, delta);
            cy += static_cast<float>(spacing * std::sin(dir));
            cx += static_cast<float>(spacing * std::cos(dir));
        }
    }

    // isolated polygons
    const int n_polys = static_cast<int>(rng.range(3, 6));
    for (int i = 0; i < n_polys; ++i) {
        const int verts = static_cast<int>(rng.range(3, 5));
        const float cy = static_cast<float>(rng.uniform(0.1, 0.9)) * size;
        const float cx = static_cast<float>(rng.uniform(0.1, 0.9)) * size;
        const float rad = static_cast<float>(rng.uniform(0.04, 0.12)) * size;
        std::vector<std::pair<float, float>> poly;
        const float rot = static_cast<float>(rng.uniform(0.0, 6.2831853));
        for (int v = 0; v < verts; ++v) {
            const float a = rot + 6.2831853f * v / verts +
                            static_cast<float>(rng.uniform(-0.25, 0.25));
            const float rr = rad * (0.7f + 0.6f * static_cast<float>(rng.uniform(0.0, 1.0)));
            poly.emplace_back(cy + rr * std::sin(a), cx + rr * std::cos(a));
        }
        const float delta = static_cast<float>(rng.uniform(0.18, 0.35)) *
                            (rng.uniform() < 0.5 ? -1.0f : 1.0f);
        fill_polygon(img, poly, delta);
    }

    // a few linear features
    const int n_lines = static_cast<int>(rng.range(2, 4));
    for (int i = 0; i < n_lines; ++i) {
        const float y0 = static_cast<float>(rng.uniform(0.0, 1.0)) * size;
        const float x0 = static_cast<float>(rng.uniform(0.0, 1.0)) * size;
        const float ang = static_cast<float>(rng.uniform(0.0, 6.2831853));
        const float len = static_cast<float>(rng.uniform(0.4, 1.2)) * size;
        const float delta = static_cast<float>(rng.uniform(0.15, 0.3)) *
                            (rng.uniform() < 0.5 ? -1.0f : 1.0f);
        draw_segment(img, y0, x0, y0 + len * std::sin(ang), x0 + len * std::cos(ang),
                     rng.uniform() < 0.3 ? 1 : 0, delta);
    }
    for (auto& v : img.pix) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

Image sar_from_optical(const Image& optical, ModalityGap gap, Rng& rng) {
    Image img = optical;
    if (gap == ModalityGap::None) return img;

    // monotone intensity remap; the logistic saturates flat regions so raw
    // correlation carries little signal, harsh more so than mild
    const double g = (gap == ModalityGap::Mild) ? rng.uniform(1.5, 2.0) : rng.uniform(2.0, 3.0);
    const double k = (gap == ModalityGap::Mild) ? rng.uniform(7.0, 10.0) : rng.uniform(12.0, 18.0);
    const double mid = rng.uniform(0.35, 0.65);
    const double lo = 1.0 / (1.0 + std::exp(k * mid));
    const double hi = 1.0 / (1.0 + std::exp(-k * (1.0 - mid)));
    for (auto& v : img.pix) {
        double x = std::pow(static_cast<double>(v), g);
        x = 1.0 / (1.0 + std::exp(-k * (x - mid)));
        v = static_cast<float>((x - lo) / (hi - lo));
    }

    // Multiplicative speckle: product of a coarse-grained gamma field
    // (sampled on a subsampled lattice and bilinearly upsampled, so the lumps
    // keep their full amplitude inside matching windows) and a white gamma
    // field. Both have mean 1.
    const double looks_coarse = (gap == ModalityGap::Mild) ? 1.0 : 0.5;
    const double looks_fine = (gap == ModalityGap::Mild) ? 4.0 : 2.0;
    const int lump = (gap == ModalityGap::Mild) ? 4 : 6;
    const int gh = img.h / lump + 2, gw = img.w / lump + 2;
    std::vector<float> grid(static_cast<size_t>(gh) * gw);
    for (auto& v : grid) v = static_cast<float>(rng.gamma(looks_coarse) / looks_coarse);
    for (int y = 0; y < img.h; ++y) {
        const float fy = static_cast<float>(y) / lump;
        const int y0 = static_cast<int>(fy);
        const float wy = fy - y0;
        for (int x = 0; x < img.w; ++x) {
            const float fx = static_cast<float>(x) / lump;
            const int x0 = static_cast<int>(fx);
            const float wx = fx - x0;
            const float c00 = grid[static_cast<size_t>(y0) * gw + x0];
            const float c01 = grid[static_cast<size_t>(y0) * gw + x0 + 1];
            const float c10 = grid[static_cast<size_t>(y0 + 1) * gw + x0];
            const float c11 = grid[static_cast<size_t>(y0 + 1) * gw + x0 + 1];
            const float coarse = (1 - wy) * ((1 - wx) * c00 + wx * c01) +
                                 wy * ((1 - wx) * c10 + wx * c11);
            const float fine = static_cast<float>(rng.gamma(looks_fine) / looks_fine);
            img.at(y, x) *= coarse * fine;
        }
    }

    box_blur_inplace(img, 1);  // 3x3
    for (auto& v : img.pix) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

}  // namespace

std::pair<Image, Image> synth_pair(uint64_t seed, int size, ModalityGap gap) {
    if (size % 8 != 0) throw ArgumentError("synth_pair: size must be divisible by 8");
    Rng rng(seed * 0x100000001b3ull + 0xcbf29ce484222325ull);
    Image opt = synth_optical(size, rng);
    Image sar = sar_from_optical(opt, gap, rng);
    return {std::move(opt), std::move(sar)};
}

std::string generate_synth_dataset(const std::string& dir, const SynthDatasetConfig& cfg) {
    if (cfg.n_pairs < 1) throw ArgumentError("generate_synth_dataset: n_pairs must be >= 1");
    fs::create_directories(dir);
    DatasetManifest m;
    m.base_dir = dir;
    Rng offset_rng(cfg.seed ^ 0x5eedf00dull);
    const int n_labeled = static_cast<int>(std::ceil(cfg.n_pairs * cfg.labeled_fraction));
    for (int i = 0; i < cfg.n_pairs; ++i) {
        auto [opt, sar] = synth_pair(cfg.seed + static_cast<uint64_t>(i), cfg.size, cfg.gap);
        char opt_name[32], sar_name[32];
        std::snprintf(opt_name, sizeof(opt_name), "opt_%05d.pgm", i);
        std::snprintf(sar_name, sizeof(sar_name), "sar_%05d.pgm", i);
        save_pgm((fs::path(dir) / opt_name).string(), opt);
        save_pgm((fs::path(dir) / sar_name).string(), sar);
        ManifestEntry e;
        e.optical_path = opt_name;
        e.sar_path = sar_name;
        if (i < n_labeled) {
            e.labeled = true;
            e.row = static_cast<int>(offset_rng.range(0, cfg.size - cfg.tpl_size));
            e.col = static_cast<int>(offset_rng.range(0, cfg.size - cfg.tpl_size));
        }
        m.entries.push_back(std::move(e));
    }
    const std::string manifest_path = (fs::path(dir) / "manifest.csv").string();
    save_manifest(manifest_path, m);
    return manifest_path;
}

ImagePair load_pair(const ManifestEntry& entry, const std::string& base_dir, int tpl_h, int tpl_w,
                    Rng& crop_rng, bool static_crops) {
    Image opt = load_image((fs::path(base_dir) / entry.optical_path).string());
    Image sar = load_image((fs::path(base_dir) / entry.sar_path).string());
    if (sar.h == opt.h && sar.w == opt.w) {
        // aligned pair: crop the template out of the SAR side
        ImagePair p;
        if (entry.labeled && static_crops) {
            p = crop_template_at(opt, sar, tpl_h, tpl_w, entry.row, entry.col);
        } else if (entry.labeled) {
            p = crop_template(opt, sar, tpl_h, tpl_w, crop_rng);
        } else {
            p = crop_template(opt, sar, tpl_h, tpl_w, crop_rng);
            p.labeled = false;  // offset retained for evaluation only
        }
        p.labeled = entry.labeled;
        return p;
    }
    // pre-cropped template
    if (sar.h != tpl_h || sar.w != tpl_w)
        throw ArgumentError("load_pair: SAR image " + entry.sar_path + " is " +
                            std::to_string(sar.h) + "x" + std::to_string(sar.w) + ", expected " +
                            std::to_string(tpl_h) + "x" + std::to_string(tpl_w) +
                            " or aligned with the optical image");
    ImagePair p;
    p.optical = std::move(opt);
    p.sar = std::move(sar);
    p.labeled = entry.labeled;
    if (entry.labeled) {
        if (entry.row > p.optical.h - tpl_h || entry.col > p.optical.w - tpl_w)
            throw ArgumentError("load_pair: offset outside valid grid for " + entry.sar_path);
        p.has_gt = true;
        p.gt_row = entry.row;
        p.gt_col = entry.col;
    }
    return p;
}

BatchIterator::BatchIterator(const DatasetManifest& manifest, int batch_size,
                             int unlabeled_per_labeled, uint64_t seed)
    : labeled_pool_(manifest.labeled_indices()),
      unlabeled_pool_(manifest.unlabeled_indices()),
      batch_size_(batch_size),
      ratio_(unlabeled_per_labeled),
      seed_(seed) {
    if (batch_size_ < 1) throw ArgumentError("batch_iterator: batch_size must be >= 1");
    if (ratio_ < 0) throw ArgumentError("batch_iterator: negative labeled ratio");
    if (labeled_pool_.empty())
        throw ConfigError("batch_iterator: empty labeled pool with labeled batches requested");
}

namespace {

void shuffle_pool(std::vector<int>& pool, Rng& rng) {
    for (size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[rng.below(i)]);
}

}  // namespace

std::vector<BatchSpec> BatchIterator::epoch_schedule(int epoch) const {
    Rng rng(seed_ ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(epoch + 1)));
    std::vector<int> lab = labeled_pool_;
    std::vector<int> unl = unlabeled_pool_;
    shuffle_pool(lab, rng);
    shuffle_pool(unl, rng);

    std::vector<BatchSpec> out;
    const bool supervised_only = (ratio_ == 0 || unl.empty());
    size_t li = 0, ui = 0;

    auto next_labeled_batch = [&]() {
        BatchSpec b;
        b.labeled = true;
        for (int i = 0; i < batch_size_; ++i) {
            if (li == lab.size()) {  // labeled pool recycles
                shuffle_pool(lab, rng);
                li = 0;
            }
            b.entry_indices.push_back(lab[li++]);
        }
        return b;
    };

    if (supervised_only) {
        // plain epochs over the labeled pool, no recycling
        for (size_t i = 0; i < lab.size(); i += static_cast<size_t>(batch_size_)) {
            BatchSpec b;
            b.labeled = true;
            for (size_t j = i; j < std::min(lab.size(), i + static_cast<size_t>(batch_size_)); ++j)
                b.entry_indices.push_back(lab[j]);
            out.push_back(std::move(b));
        }
        return out;
    }

    while (ui < unl.size()) {
        out.push_back(next_labeled_batch());
        for (int k = 0; k < ratio_ && ui < unl.size(); ++k) {
            BatchSpec b;
            b.labeled = false;
            for (int i = 0; i < batch_size_ && ui < unl.size(); ++i)
                b.entry_indices.push_back(unl[ui++]);
            out.push_back(std::move(b));
        }
    }
    return out;
}

}  // namespace sarmatch
