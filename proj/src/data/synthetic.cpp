#include "dgpose/data/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "dgpose/data/image_io.hpp"

namespace dgpose::data {

using pose::kJoints;
using pose::Vec2;
namespace J = pose;

// Mid-grey-free colours on a {0.15, 0.5, 0.85} lattice, each at least 0.29
// from every clothing colour and 0.35 from each other.
const std::array<Color, kJoints> kJointColors = {{
    {0.5, 0.5, 0.15},
    {0.5, 0.5, 0.85},
    {0.5, 0.15, 0.5},
    {0.5, 0.85, 0.5},
    {0.15, 0.5, 0.5},
    {0.85, 0.5, 0.5},
    {0.5, 0.15, 0.15},
    {0.5, 0.85, 0.85},
    {0.15, 0.5, 0.15},
    {0.85, 0.5, 0.85},
    {0.15, 0.15, 0.5},
    {0.85, 0.85, 0.5},
    {0.5, 0.15, 0.85},
    {0.15, 0.85, 0.5},
}};

namespace {

constexpr std::array<std::array<int, 2>, 4> kArmBones = {{
    {J::RShoulder, J::RElbow}, {J::RElbow, J::RWrist}, {J::LShoulder, J::LElbow}, {J::LElbow, J::LWrist}}};
constexpr std::array<std::array<int, 2>, 4> kLegBones = {{
    {J::RHip, J::RKnee}, {J::RKnee, J::RAnkle}, {J::LHip, J::LKnee}, {J::LKnee, J::LAnkle}}};

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.x - a.x - t * vx, p.y - a.y - t * vy);
}

// even-odd rule
bool inside_polygon(Vec2 p, const std::array<Vec2, 4>& poly) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Vec2 a = poly[i], b = poly[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (p.x < x) in = !in;
        }
    }
    return in;
}

std::array<Vec2, 4> torso_polygon(const std::array<Vec2, kJoints>& j) {
    return {j[J::RShoulder], j[J::LShoulder], j[J::LHip], j[J::RHip]};
}

struct HeadDisc {
    Vec2 center;
    double radius;
};

HeadDisc head_disc(const std::array<Vec2, kJoints>& j) {
    const Vec2 a = j[J::Neck], b = j[J::HeadTop];
    return {{0.5 * (a.x + b.x), 0.5 * (a.y + b.y)}, 0.5 * std::hypot(b.x - a.x, b.y - a.y)};
}

// Distances of one pixel to the figure's regions.
struct Regions {
    double arm;
    double leg;
    double head;  // signed: negative inside
    bool torso;
    double marker;
};

Regions regions_at(Vec2 p, const std::array<Vec2, kJoints>& j, const std::array<Vec2, 4>& torso,
                   const HeadDisc& head) {
    Regions r{1e9, 1e9, 0.0, false, 1e9};
    for (const auto& b : kArmBones) r.arm = std::min(r.arm, segment_distance(p, j[b[0]], j[b[1]]));
    for (const auto& b : kLegBones) r.leg = std::min(r.leg, segment_distance(p, j[b[0]], j[b[1]]));
    r.head = std::hypot(p.x - head.center.x, p.y - head.center.y) - head.radius;
    r.torso = inside_polygon(p, torso);
    for (const auto& q : j) r.marker = std::min(r.marker, std::hypot(p.x - q.x, p.y - q.y));
    return r;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec2 step(Vec2 from, double angle_from_down, double side, double len) {
    return {from.x + side * std::sin(angle_from_down) * len, from.y + std::cos(angle_from_down) * len};
}

nlohmann::json color_json(const Color& c) { return {c[0], c[1], c[2]}; }

}  // namespace

nlohmann::json Palette::to_json() const {
    return {{"head", color_json(head)},
            {"upper", color_json(upper)},
            {"lower", color_json(lower)},
            {"background", color_json(background)}};
}

Palette Palette::from_json(const nlohmann::json& j) {
    return {j.at("head").get<Color>(), j.at("upper").get<Color>(), j.at("lower").get<Color>(),
            j.at("background").get<Color>()};
}

Tensor<float> render_figure(const std::array<Vec2, kJoints>& j, const Palette& pal,
                            const SyntheticFigureSpec& spec) {
    const int n = spec.canvas;
    Tensor<float> img(Shape{1, 3, n, n});
    const auto torso = torso_polygon(j);
    const HeadDisc head = head_disc(j);
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    for (int v = 0; v < n; ++v) {
        for (int u = 0; u < n; ++u) {
            const Vec2 p{static_cast<double>(u), static_cast<double>(v)};
            const Regions r = regions_at(p, j, torso, head);
            // painter's order: background, torso, legs, arms, head, markers
            const Color* c = &pal.background;
            if (r.torso) c = &pal.upper;
            if (r.leg <= spec.limb_half_width) c = &pal.lower;
            if (r.arm <= spec.limb_half_width) c = &pal.upper;
            if (r.head <= 0.0) c = &pal.head;
            for (int k = 0; k < kJoints; ++k) {
                if (std::hypot(p.x - j[k].x, p.y - j[k].y) <= spec.marker_radius) c = &kJointColors[k];
            }
            for (int ch = 0; ch < 3; ++ch) {
                img[ch * plane + static_cast<std::size_t>(v) * n + u] = static_cast<float>((*c)[ch]);
            }
        }
    }
    return img;
}

std::array<Vec2, kJoints> sample_pose(std::mt19937_64& rng, const SyntheticFigureSpec& spec) {
    const double pi = std::numbers::pi;
    for (;;) {
        std::array<Vec2, kJoints> j;
        const double lean = uniform(rng, -0.25, 0.25);
        const Vec2 up{std::sin(lean), -std::cos(lean)};
        const Vec2 right{std::cos(lean), std::sin(lean)};  // image +x; the figure's left side
        const Vec2 hip{0.0, 0.0};
        const double torso = uniform(rng, 12.0, 16.0);
        j[J::Neck] = {hip.x + torso * up.x, hip.y + torso * up.y};
        const double head_len = uniform(rng, 7.0, 9.0), nod = lean + uniform(rng, -0.3, 0.3);
        j[J::HeadTop] = {j[J::Neck].x + head_len * std::sin(nod), j[J::Neck].y - head_len * std::cos(nod)};
        const double sw = uniform(rng, 4.5, 6.5), hw = uniform(rng, 3.0, 4.5);
        j[J::RShoulder] = {j[J::Neck].x - sw * right.x, j[J::Neck].y - sw * right.y};
        j[J::LShoulder] = {j[J::Neck].x + sw * right.x, j[J::Neck].y + sw * right.y};
        j[J::RHip] = {hip.x - hw * right.x, hip.y - hw * right.y};
        j[J::LHip] = {hip.x + hw * right.x, hip.y + hw * right.y};
        // limb angles are measured from straight down, positive away from the body
        const struct {
            int root, mid, end;
            double side;
        } arms[] = {{J::RShoulder, J::RElbow, J::RWrist, -1.0}, {J::LShoulder, J::LElbow, J::LWrist, 1.0}};
        for (const auto& a : arms) {
            const double upper = uniform(rng, 0.2, 0.85 * pi);
            const double lower = upper + uniform(rng, -1.5, 1.5);
            j[a.mid] = step(j[a.root], upper + lean * a.side, a.side, uniform(rng, 8.0, 10.0));
            j[a.end] = step(j[a.mid], lower + lean * a.side, a.side, uniform(rng, 7.0, 9.0));
        }
        const struct {
            int root, mid, end;
            double side;
        } legs[] = {{J::RHip, J::RKnee, J::RAnkle, -1.0}, {J::LHip, J::LKnee, J::LAnkle, 1.0}};
        for (const auto& l : legs) {
            const double thigh = uniform(rng, -0.15, 0.7);
            const double shin = thigh + uniform(rng, -0.8, 0.4);
            j[l.mid] = step(j[l.root], thigh + lean * l.side, l.side, uniform(rng, 10.0, 12.0));
            j[l.end] = step(j[l.mid], shin + lean * l.side, l.side, uniform(rng, 9.0, 11.0));
        }

        double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
        for (const auto& p : j) {
            x0 = std::min(x0, p.x);
            x1 = std::max(x1, p.x);
            y0 = std::min(y0, p.y);
            y1 = std::max(y1, p.y);
        }
        const double centre = 0.5 * (spec.canvas - 1) + 0.5;  // crops then start at offset 0
        const double dx = centre - 0.5 * (x0 + x1), dy = centre - 0.5 * (y0 + y1);
        bool ok = true;
        for (auto& p : j) {
            p.x += dx;
            p.y += dy;
            if (p.x < spec.margin || p.y < spec.margin || p.x > spec.canvas - 1 - spec.margin ||
                p.y > spec.canvas - 1 - spec.margin) {
                ok = false;
            }
        }
        for (int a = 0; a < kJoints && ok; ++a) {
            for (int b = a + 1; b < kJoints; ++b) {
                if (std::hypot(j[a].x - j[b].x, j[a].y - j[b].y) < spec.min_separation) {
                    ok = false;
                    break;
                }
            }
        }
        if (ok) return j;
    }
}

Palette sample_palette(std::mt19937_64& rng, const SyntheticFigureSpec& spec) {
    auto pick = [&](const std::vector<Color>& set) {
        return set[std::uniform_int_distribution<std::size_t>(0, set.size() - 1)(rng)];
    };
    Palette p;
    p.head = pick(spec.clothing_colors);
    p.upper = pick(spec.clothing_colors);
    p.lower = pick(spec.clothing_colors);
    p.background = pick(spec.backgrounds);
    return p;
}

Manifest generate_synthetic_dataset(const SyntheticFigureSpec& spec, int n, int n_test,
                                    const std::filesystem::path& dir) {
    if (n < 0 || n_test < 0 || n_test > n) throw std::invalid_argument("bad synthetic dataset size");
    Manifest m;
    m.root = dir;
    std::filesystem::create_directories(dir / "images");
    for (int i = 0; i < n; ++i) {
        std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                          static_cast<std::uint32_t>(i)};
        std::mt19937_64 rng(seq);
        const auto joints = sample_pose(rng, spec);
        const Palette palette = sample_palette(rng, spec);
        char name[32];
        std::snprintf(name, sizeof name, "fig%06d", i);
        ManifestEntry e;
        e.id = name;
        e.image = std::string("images/") + name + ".png";
        e.split = i >= n - n_test ? "test" : "train";
        e.joints = joints;
        e.extra["palette"] = palette.to_json();
        write_png(dir / e.image, render_figure(joints, palette, spec));
        m.entries.push_back(std::move(e));
    }
    m.write(dir / "manifest.jsonl");
    return m;
}

Palette measure_palette(const Tensor<float>& image, const std::array<Vec2, kJoints>& j,
                        const SyntheticFigureSpec& spec) {
    const Shape s = image.shape();
    const std::size_t plane = s.plane();
    const auto torso = torso_polygon(j);
    const HeadDisc head = head_disc(j);
    std::array<Color, 4> sum{};
    std::array<double, 4> count{};
    const double inner = spec.limb_half_width - 0.6;
    const double clear = spec.marker_radius + 1.5;
    for (int v = 0; v < s.h; ++v) {
        for (int u = 0; u < s.w; ++u) {
            const Vec2 p{static_cast<double>(u), static_cast<double>(v)};
            const Regions r = regions_at(p, j, torso, head);
            if (r.marker < clear) continue;
            int k = -1;
            if (r.head < -1.0) {
                k = 0;
            } else if (r.head > 1.0 && r.arm <= inner) {
                k = 1;
            } else if (r.head > 1.0 && r.arm > spec.limb_half_width + 1.0 && r.torso &&
                       r.leg > spec.limb_half_width + 1.0) {
                k = 1;
            } else if (r.head > 1.0 && r.leg <= inner && r.arm > spec.limb_half_width + 1.0 && !r.torso) {
                k = 2;
            } else if (r.head > 4.0 && r.arm > 4.0 && r.leg > 4.0 && !r.torso && r.marker > 4.0) {
                k = 3;
            }
            if (k < 0) continue;
            for (int c = 0; c < 3; ++c) sum[k][c] += image[c * plane + static_cast<std::size_t>(v) * s.w + u];
            count[k] += 1.0;
        }
    }
    Palette out;
    Color* dst[4] = {&out.head, &out.upper, &out.lower, &out.background};
    for (int k = 0; k < 4; ++k) {
        for (int c = 0; c < 3; ++c) (*dst[k])[c] = count[k] > 0 ? sum[k][c] / count[k] : 0.0;
    }
    return out;
}

double palette_distance(const Palette& a, const Palette& b) {
    auto d = [](const Color& x, const Color& y) {
        return std::sqrt((x[0] - y[0]) * (x[0] - y[0]) + (x[1] - y[1]) * (x[1] - y[1]) +
                         (x[2] - y[2]) * (x[2] - y[2]));
    };
    return 0.25 * (d(a.head, b.head) + d(a.upper, b.upper) + d(a.lower, b.lower) +
                   d(a.background, b.background));
}

}  // namespace dgpose::data
