#pragma once

#include <cmath>
#include <numbers>

#include "splitgen/image.hpp"
#include "splitgen/manifest.hpp"
#include "splitgen/rng.hpp"

namespace splitgen {

struct Rgb {
    int r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

inline void to_json(nlohmann::json& j, const Rgb& c) { j = nlohmann::json::array({c.r, c.g, c.b}); }
inline void from_json(const nlohmann::json& j, Rgb& c) {
    c.r = j.at(0).get<int>();
    c.g = j.at(1).get<int>();
    c.b = j.at(2).get<int>();
}

inline int l1_dist(Rgb a, Rgb b) {
    return std::abs(a.r - b.r) + std::abs(a.g - b.g) + std::abs(a.b - b.b);
}

// ---------------------------------------------------------------------------
// configs
// ---------------------------------------------------------------------------

enum class BackgroundKind { plain, checkerboard };

struct SceneConfig {
    int canvas_size = 48;
    int sprite_size = 14;
    int objects_lo = 0, objects_hi = 5;
    BackgroundKind background_kind = BackgroundKind::plain;
    // checkerboard backgrounds use consecutive entries as (a,b) color pairs
    std::vector<Rgb> train_colors, test_colors;
    double checker_angle_lo = 0.0, checker_angle_hi = 180.0;
    int checker_cell = 8;
    int n_images = 8000;
    std::uint64_t seed = 0;
};

struct GlyphConfig {
    int canvas_size = 32;
    int n_classes = 10;
    int fg_lo = 140, fg_hi = 255; // per-channel sampling range, foreground
    int bg_lo = 0, bg_hi = 115;   // background
    int n_images = 20000;
    std::uint64_t seed = 0;
};

inline SceneConfig scene_config_easy() {
    SceneConfig c;
    c.background_kind = BackgroundKind::plain;
    c.train_colors = {{220, 40, 40}, {40, 180, 60},  {50, 90, 220},  {230, 210, 50},
                      {200, 60, 200}, {60, 200, 200}, {240, 140, 40}, {130, 60, 180}};
    c.test_colors = {{160, 160, 160}, {240, 150, 170}, {40, 140, 120}, {150, 150, 60}};
    return c;
}

inline SceneConfig scene_config_hard() {
    SceneConfig c;
    c.background_kind = BackgroundKind::checkerboard;
    c.train_colors = {{200, 40, 40},  {250, 210, 160}, {40, 160, 60},  {220, 250, 190},
                      {40, 80, 200},  {190, 220, 255}, {150, 60, 180}, {240, 200, 250},
                      {210, 170, 40}, {90, 60, 20},    {40, 170, 170}, {10, 60, 80}};
    c.test_colors = {{120, 120, 120}, {230, 230, 230}, {230, 120, 150},
                     {250, 230, 210}, {110, 160, 40},  {40, 60, 10}};
    return c;
}

inline void validate(const SceneConfig& c) {
    SG_CHECK(c.sprite_size <= c.canvas_size, "sprite does not fit in canvas");
    SG_CHECK(0 <= c.objects_lo && c.objects_lo <= c.objects_hi, "bad objects_per_image range");
    for (const auto& a : c.train_colors)
        for (const auto& b : c.test_colors)
            SG_CHECK(!(a == b), "train and test color lists overlap");
    if (c.background_kind == BackgroundKind::checkerboard) {
        SG_CHECK(c.train_colors.size() % 2 == 0 && c.test_colors.size() % 2 == 0,
                 "checkerboard colors must come in pairs");
        SG_CHECK(c.checker_cell >= 1, "bad checker cell");
    }
    SG_CHECK(!c.train_colors.empty() && !c.test_colors.empty(), "empty color list");
}

inline void validate(const GlyphConfig& c) {
    SG_CHECK(c.n_classes >= 2 && c.n_classes <= 10, "n_classes must be in [2,10]");
    SG_CHECK(c.canvas_size >= 8, "canvas too small");
}

// ---------------------------------------------------------------------------
// checkerboard
// ---------------------------------------------------------------------------

// Pattern anchored at the canvas corner, rotated by angle about the canvas
// center, then shifted by (ox,oy); pixel (x,y) samples the pattern at its
// center with nearest-neighbor semantics.
inline Tensor<float> checkerboard(Rgb a, Rgb b, double angle_deg, int cell, int size, double ox = 0,
                                  double oy = 0) {
    SG_CHECK(!(a == b), "checkerboard colors must differ");
    SG_CHECK(cell >= 1 && size >= 1, "bad checkerboard geometry");
    Tensor<float> out(Shape{3, size, size});
    const double th = angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double ctr = size / 2.0;
    const float fa[3] = {a.r / 255.f, a.g / 255.f, a.b / 255.f};
    const float fb[3] = {b.r / 255.f, b.g / 255.f, b.b / 255.f};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double px = x + 0.5 - ctr, py = y + 0.5 - ctr;
            const double rx = c * px + s * py + ctr + ox;
            const double ry = -s * px + c * py + ctr + oy;
            const long long q =
                static_cast<long long>(std::floor(rx / cell)) +
                static_cast<long long>(std::floor(ry / cell));
            const bool first = ((q % 2) + 2) % 2 == 0;
            for (int ch = 0; ch < 3; ++ch)
                out[(static_cast<std::int64_t>(ch) * size + y) * size + x] =
                    first ? fa[ch] : fb[ch];
        }
    return out;
}

// ---------------------------------------------------------------------------
// sprites
// ---------------------------------------------------------------------------

struct SpriteSpec {
    int kind = 0; // 0 ellipse, 1..4 polygon with kind+2 vertices
    Rgb color;
    int x = 0, y = 0; // tile top-left on the canvas
    std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const SpriteSpec& s) {
    j = {{"kind", s.kind}, {"color", s.color}, {"x", s.x}, {"y", s.y}, {"seed", s.seed}};
}
inline void from_json(const nlohmann::json& j, SpriteSpec& s) {
    s.kind = j.at("kind").get<int>();
    s.color = j.at("color").get<Rgb>();
    s.x = j.at("x").get<int>();
    s.y = j.at("y").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
}

struct SpriteTile {
    Tensor<float> rgb;   // [3,s,s]
    Tensor<float> alpha; // [1,s,s] coverage in [0,1]
};

inline SpriteTile render_sprite(const SpriteSpec& spec, int s) {
    RngStream rs(spec.seed);
    const int kind = spec.kind;
    SG_CHECK(kind >= 0 && kind <= 4, "unknown sprite kind ", kind);

    double ea = 0, eb = 0, erot = 0;
    std::vector<double> vx, vy;
    if (kind == 0) {
        erot = rs.uniform(0, std::numbers::pi);
        ea = rs.uniform(0.30, 0.48);
        eb = rs.uniform(0.20, 0.38);
    } else {
        const int k = kind + 2;
        const double phase = rs.uniform(0, 2 * std::numbers::pi);
        for (int i = 0; i < k; ++i) {
            const double rad = rs.uniform(0.30, 0.48);
            const double ang = phase + 2 * std::numbers::pi * i / k;
            vx.push_back(0.5 + rad * std::cos(ang));
            vy.push_back(0.5 + rad * std::sin(ang));
        }
    }
    auto inside = [&](double u, double v) -> bool {
        if (kind == 0) {
            const double dx = u - 0.5, dy = v - 0.5;
            const double rx = std::cos(erot) * dx + std::sin(erot) * dy;
            const double ry = -std::sin(erot) * dx + std::cos(erot) * dy;
            return (rx * rx) / (ea * ea) + (ry * ry) / (eb * eb) <= 1.0;
        }
        bool in = false; // crossing number
        const int k = static_cast<int>(vx.size());
        for (int i = 0, j = k - 1; i < k; j = i++) {
            if ((vy[i] > v) != (vy[j] > v) &&
                u < (vx[j] - vx[i]) * (v - vy[i]) / (vy[j] - vy[i]) + vx[i])
                in = !in;
        }
        return in;
    };

    SpriteTile tile{Tensor<float>(Shape{3, s, s}), Tensor<float>(Shape{1, s, s})};
    const float base[3] = {spec.color.r / 255.f, spec.color.g / 255.f, spec.color.b / 255.f};
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            int hits = 0;
            for (int sy = 0; sy < 3; ++sy)
                for (int sx = 0; sx < 3; ++sx)
                    if (inside((x + (sx + 0.5) / 3.0) / s, (y + (sy + 0.5) / 3.0) / s)) ++hits;
            const float t = 1.f - 0.30f * static_cast<float>(rs.uniform()); // texture noise
            tile.alpha[static_cast<std::int64_t>(y) * s + x] = hits / 9.f;
            for (int c = 0; c < 3; ++c)
                tile.rgb[(static_cast<std::int64_t>(c) * s + y) * s + x] = base[c] * t;
        }
    return tile;
}

inline std::array<int, 4> sprite_bbox(const SpriteTile& tile, int x0, int y0) {
    const int s = tile.alpha.dim(1);
    int mnx = s, mny = s, mxx = -1, mxy = -1;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            if (tile.alpha[static_cast<std::int64_t>(y) * s + x] > 0.01f) {
                mnx = std::min(mnx, x);
                mny = std::min(mny, y);
                mxx = std::max(mxx, x);
                mxy = std::max(mxy, y);
            }
    if (mxx < 0) return {x0, y0, s, s};
    return {x0 + mnx, y0 + mny, mxx - mnx + 1, mxy - mny + 1};
}

// ---------------------------------------------------------------------------
// glyphs
// ---------------------------------------------------------------------------

// Ten fixed masks on the unit square; label picks one.
inline bool glyph_mask(int label, double u, double v) {
    const double px = u - 0.5, py = v - 0.5;
    const double r = std::hypot(px, py);
    switch (label) {
    case 0: return r <= 0.38;
    case 1: return r >= 0.20 && r <= 0.38;
    case 2: return (std::abs(px) <= 0.11 && std::abs(py) <= 0.40) ||
                   (std::abs(py) <= 0.11 && std::abs(px) <= 0.40);
    case 3: return std::abs(px) + std::abs(py) <= 0.40;
    case 4: return std::max(std::abs(px), std::abs(py)) <= 0.32;
    case 5: { // triangle, apex up
        if (py < -0.40 || py > 0.32) return false;
        const double half = 0.38 * (py + 0.40) / 0.72;
        return std::abs(px) <= half;
    }
    case 6: return (std::abs(px - py) <= 0.10 || std::abs(px + py) <= 0.10) &&
                   std::max(std::abs(px), std::abs(py)) <= 0.40;
    case 7: { // horizontal bars
        if (std::abs(px) > 0.40 || std::abs(py) > 0.40) return false;
        const int band = static_cast<int>(std::floor((py + 0.40) / 0.80 * 5.0));
        return band % 2 == 0;
    }
    case 8: // U
        return std::max(std::abs(px), std::abs(py)) <= 0.36 &&
               !(std::abs(px) <= 0.16 && py <= 0.10);
    case 9: { // four dots
        const double ax = std::abs(px) - 0.20, ay = std::abs(py) - 0.20;
        return std::hypot(ax, ay) <= 0.14;
    }
    default: fail("glyph label out of range: ", label);
    }
}

struct GlyphSpec {
    int label = 0;
    Rgb fg, bg;
    double dx = 0, dy = 0;  // translation in unit coords
    double scale = 1.0;
    double rot = 0.0;       // radians
};

inline void to_json(nlohmann::json& j, const GlyphSpec& s) {
    j = {{"label", s.label}, {"fg", s.fg},       {"bg", s.bg}, {"dx", s.dx},
         {"dy", s.dy},       {"scale", s.scale}, {"rot", s.rot}};
}
inline void from_json(const nlohmann::json& j, GlyphSpec& s) {
    s.label = j.at("label").get<int>();
    s.fg = j.at("fg").get<Rgb>();
    s.bg = j.at("bg").get<Rgb>();
    s.dx = j.at("dx").get<double>();
    s.dy = j.at("dy").get<double>();
    s.scale = j.at("scale").get<double>();
    s.rot = j.at("rot").get<double>();
}

inline GlyphSpec glyph_spec(const GlyphConfig& cfg, const std::string& split, int i) {
    auto rs = RngStream::named(cfg.seed, "glyph/" + split + "/" + std::to_string(i));
    GlyphSpec s;
    s.label = static_cast<int>(rs.below(cfg.n_classes));
    s.fg = {cfg.fg_lo + static_cast<int>(rs.below(cfg.fg_hi - cfg.fg_lo + 1)),
            cfg.fg_lo + static_cast<int>(rs.below(cfg.fg_hi - cfg.fg_lo + 1)),
            cfg.fg_lo + static_cast<int>(rs.below(cfg.fg_hi - cfg.fg_lo + 1))};
    s.bg = {cfg.bg_lo + static_cast<int>(rs.below(cfg.bg_hi - cfg.bg_lo + 1)),
            cfg.bg_lo + static_cast<int>(rs.below(cfg.bg_hi - cfg.bg_lo + 1)),
            cfg.bg_lo + static_cast<int>(rs.below(cfg.bg_hi - cfg.bg_lo + 1))};
    s.dx = rs.uniform(-0.09, 0.09);
    s.dy = rs.uniform(-0.09, 0.09);
    s.scale = rs.uniform(0.80, 1.10);
    s.rot = rs.uniform(-0.26, 0.26);
    return s;
}

inline Tensor<float> render_glyph(const GlyphConfig& cfg, const GlyphSpec& s) {
    const int S = cfg.canvas_size;
    Tensor<float> out(Shape{3, S, S});
    const float fg[3] = {s.fg.r / 255.f, s.fg.g / 255.f, s.fg.b / 255.f};
    const float bg[3] = {s.bg.r / 255.f, s.bg.g / 255.f, s.bg.b / 255.f};
    const double ca = std::cos(s.rot), sa = std::sin(s.rot);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            int hits = 0;
            for (int sy = 0; sy < 3; ++sy)
                for (int sx = 0; sx < 3; ++sx) {
                    const double uu = (x + (sx + 0.5) / 3.0) / S - 0.5 - s.dx;
                    const double vv = (y + (sy + 0.5) / 3.0) / S - 0.5 - s.dy;
                    const double rx = (ca * uu + sa * vv) / s.scale;
                    const double ry = (-sa * uu + ca * vv) / s.scale;
                    if (glyph_mask(s.label, rx + 0.5, ry + 0.5)) ++hits;
                }
            const float a = hits / 9.f;
            for (int c = 0; c < 3; ++c)
                out[(static_cast<std::int64_t>(c) * S + y) * S + x] =
                    a * fg[c] + (1.f - a) * bg[c];
        }
    return out;
}

// ---------------------------------------------------------------------------
// scenes
// ---------------------------------------------------------------------------

struct SceneSpec {
    int class_index = 0; // color (plain) or color-pair (checkerboard) index
    BackgroundKind background_kind = BackgroundKind::plain;
    Rgb bg_a, bg_b;
    double angle = 0, phase_x = 0, phase_y = 0;
    int cell = 8;
    std::vector<SpriteSpec> objects;
};

inline void to_json(nlohmann::json& j, const SceneSpec& s) {
    j = {{"class_index", s.class_index},
         {"background",
          {{"kind", s.background_kind == BackgroundKind::plain ? "plain" : "checkerboard"},
           {"a", s.bg_a},
           {"b", s.bg_b},
           {"angle", s.angle},
           {"cell", s.cell},
           {"phase", nlohmann::json::array({s.phase_x, s.phase_y})}}},
         {"objects", s.objects}};
}
inline void from_json(const nlohmann::json& j, SceneSpec& s) {
    s.class_index = j.at("class_index").get<int>();
    const auto& b = j.at("background");
    s.background_kind = b.at("kind").get<std::string>() == "plain" ? BackgroundKind::plain
                                                                   : BackgroundKind::checkerboard;
    s.bg_a = b.at("a").get<Rgb>();
    s.bg_b = b.at("b").get<Rgb>();
    s.angle = b.at("angle").get<double>();
    s.cell = b.at("cell").get<int>();
    s.phase_x = b.at("phase").at(0).get<double>();
    s.phase_y = b.at("phase").at(1).get<double>();
    s.objects = j.at("objects").get<std::vector<SpriteSpec>>();
}

inline SceneSpec scene_spec(const SceneConfig& cfg, const std::string& split, int i) {
    const auto& colors = split == "train" ? cfg.train_colors : cfg.test_colors;
    auto rs = RngStream::named(cfg.seed, "scene/" + split + "/" + std::to_string(i));
    SceneSpec s;
    s.background_kind = cfg.background_kind;
    s.cell = cfg.checker_cell;
    if (cfg.background_kind == BackgroundKind::plain) {
        s.class_index = static_cast<int>(rs.below(colors.size()));
        s.bg_a = colors[static_cast<std::size_t>(s.class_index)];
        s.bg_b = s.bg_a;
    } else {
        s.class_index = static_cast<int>(rs.below(colors.size() / 2));
        s.bg_a = colors[static_cast<std::size_t>(2 * s.class_index)];
        s.bg_b = colors[static_cast<std::size_t>(2 * s.class_index + 1)];
        s.angle = rs.uniform(cfg.checker_angle_lo, cfg.checker_angle_hi);
        s.phase_x = rs.uniform(0, cfg.checker_cell);
        s.phase_y = rs.uniform(0, cfg.checker_cell);
    }
    const int count =
        cfg.objects_lo + static_cast<int>(rs.below(cfg.objects_hi - cfg.objects_lo + 1));
    for (int k = 0; k < count; ++k) {
        SpriteSpec o;
        o.kind = static_cast<int>(rs.below(5));
        o.x = static_cast<int>(rs.below(cfg.canvas_size - cfg.sprite_size + 1));
        o.y = static_cast<int>(rs.below(cfg.canvas_size - cfg.sprite_size + 1));
        for (int tries = 0;; ++tries) {
            SG_CHECK(tries < 100, "sprite color sampling retries exhausted");
            o.color = {static_cast<int>(rs.below(256)), static_cast<int>(rs.below(256)),
                       static_cast<int>(rs.below(256))};
            const int guard = cfg.background_kind == BackgroundKind::plain ? 120 : 90;
            if (l1_dist(o.color, s.bg_a) >= guard && l1_dist(o.color, s.bg_b) >= guard) break;
        }
        o.seed = rs.next_u64();
        s.objects.push_back(o);
    }
    return s;
}

inline Tensor<float> render_scene(const SceneConfig& cfg, const SceneSpec& s) {
    const int S = cfg.canvas_size;
    Tensor<float> out(Shape{3, S, S});
    if (s.background_kind == BackgroundKind::plain) {
        const float f[3] = {s.bg_a.r / 255.f, s.bg_a.g / 255.f, s.bg_a.b / 255.f};
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < S * S; ++i) out[static_cast<std::int64_t>(c) * S * S + i] = f[c];
    } else {
        out = checkerboard(s.bg_a, s.bg_b, s.angle, s.cell, S, s.phase_x, s.phase_y);
    }
    for (const auto& o : s.objects) {
        SpriteTile tile = render_sprite(o, cfg.sprite_size);
        const int ts = cfg.sprite_size;
        for (int y = 0; y < ts; ++y)
            for (int x = 0; x < ts; ++x) {
                const float a = tile.alpha[static_cast<std::int64_t>(y) * ts + x];
                if (a <= 0.f) continue;
                for (int c = 0; c < 3; ++c) {
                    float& dst = out[(static_cast<std::int64_t>(c) * S + o.y + y) * S + o.x + x];
                    dst = a * tile.rgb[(static_cast<std::int64_t>(c) * ts + y) * ts + x] +
                          (1.f - a) * dst;
                }
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

inline std::string image_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "images/%06d.png", i);
    return buf;
}

inline DatasetManifest generate_glyphs(const GlyphConfig& cfg, const std::string& split,
                                       const std::filesystem::path& dir) {
    validate(cfg);
    std::filesystem::create_directories(dir / "images");
    DatasetManifest m;
    m.kind = "glyphs";
    for (int i = 0; i < cfg.n_images; ++i) {
        const GlyphSpec s = glyph_spec(cfg, split, i);
        write_png((dir / image_name(i)).string(), render_glyph(cfg, s));
        ManifestRecord r;
        r.id = i;
        r.file = image_name(i);
        r.global_class = s.label;
        r.object_count = 0;
        r.colors = s;
        m.records.push_back(std::move(r));
    }
    write_manifest(m, dir);
    return m;
}

inline DatasetManifest generate_scenes(const SceneConfig& cfg, const std::string& split,
                                       const std::filesystem::path& dir) {
    validate(cfg);
    std::filesystem::create_directories(dir / "images");
    DatasetManifest m;
    m.kind = cfg.background_kind == BackgroundKind::plain ? "scenes-easy" : "scenes-hard";
    for (int i = 0; i < cfg.n_images; ++i) {
        const SceneSpec s = scene_spec(cfg, split, i);
        write_png((dir / image_name(i)).string(), render_scene(cfg, s));
        ManifestRecord r;
        r.id = i;
        r.file = image_name(i);
        r.global_class = s.class_index;
        for (const auto& o : s.objects)
            r.object_boxes.push_back(sprite_bbox(render_sprite(o, cfg.sprite_size), o.x, o.y));
        r.object_count = static_cast<int>(s.objects.size());
        r.colors = s;
        m.records.push_back(std::move(r));
    }
    write_manifest(m, dir);
    return m;
}

// ---------------------------------------------------------------------------
// loading
// ---------------------------------------------------------------------------

struct Dataset {
    std::string kind;
    Tensor<float> images; // [N,C,H,W]
    std::vector<int> labels;
    std::vector<int> counts;
    std::vector<std::vector<std::array<int, 4>>> boxes;

    int size() const { return images.empty() ? 0 : images.dim(0); }

    Tensor<float> batch(const std::vector<int>& idx) const {
        const int C = images.dim(1), H = images.dim(2), W = images.dim(3);
        const std::int64_t stride = static_cast<std::int64_t>(C) * H * W;
        Tensor<float> out(Shape{static_cast<int>(idx.size()), C, H, W});
        for (std::size_t k = 0; k < idx.size(); ++k) {
            SG_CHECK(idx[k] >= 0 && idx[k] < size(), "batch index out of range");
            const float* src = images.data() + idx[k] * stride;
            std::copy(src, src + stride, out.data() + k * stride);
        }
        return out;
    }
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
    const DatasetManifest m = read_manifest(dir);
    Dataset d;
    d.kind = m.kind;
    SG_CHECK(!m.records.empty(), "empty dataset at ", dir.string());
    Tensor<float> first = read_png((dir / m.records[0].file).string());
    const int C = first.dim(0), H = first.dim(1), W = first.dim(2);
    d.images = Tensor<float>(Shape{static_cast<int>(m.records.size()), C, H, W});
    const std::int64_t stride = static_cast<std::int64_t>(C) * H * W;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        Tensor<float> img = i == 0 ? std::move(first) : read_png((dir / m.records[i].file).string());
        SG_CHECK(img.dim(0) == C && img.dim(1) == H && img.dim(2) == W,
                 "inconsistent image dims at record ", m.records[i].id);
        std::copy(img.data(), img.data() + stride, d.images.data() + i * stride);
        d.labels.push_back(m.records[i].global_class);
        d.counts.push_back(m.records[i].object_count);
        d.boxes.push_back(m.records[i].object_boxes);
    }
    return d;
}

} // namespace splitgen
