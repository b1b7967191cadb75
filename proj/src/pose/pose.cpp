#include "dgpose/pose/pose.hpp"

#include <cmath>

namespace dgpose::pose {

const std::array<const char*, kJoints> kJointNames = {
    "head_top", "neck",       "r_shoulder", "r_elbow", "r_wrist", "r_hip",   "r_knee",
    "r_ankle",  "l_shoulder", "l_elbow",    "l_wrist", "l_hip",   "l_knee",  "l_ankle"};

const std::array<const char*, kRigidParts> kRigidPartNames = {
    "head",        "r_upper_arm", "r_lower_arm", "l_upper_arm", "l_lower_arm",
    "r_upper_leg", "r_lower_leg", "l_upper_leg", "l_lower_leg"};

const std::array<std::array<int, 2>, kRigidParts> kRigidPairs = {{
    {Neck, HeadTop},
    {RShoulder, RElbow},
    {RElbow, RWrist},
    {LShoulder, LElbow},
    {LElbow, LWrist},
    {RHip, RKnee},
    {RKnee, RAnkle},
    {LHip, LKnee},
    {LKnee, LAnkle},
}};

namespace {

bool finite(Vec2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

constexpr double kDegenerate = 1e-12;

}  // namespace

std::vector<double> PoseVector::flatten() const {
    std::vector<double> out;
    out.reserve(2 * kJoints);
    for (const auto& j : joints) {
        out.push_back(j.x);
        out.push_back(j.y);
    }
    return out;
}

PoseVector PoseVector::from_flat(const std::vector<double>& values) {
    if (values.size() != 2 * kJoints) {
        throw InvalidPoseError("pose vector needs 28 values, got " + std::to_string(values.size()));
    }
    PoseVector p;
    for (int i = 0; i < kJoints; ++i) p.joints[i] = {values[2 * i], values[2 * i + 1]};
    p.validate();
    return p;
}

void PoseVector::validate() const {
    for (int i = 0; i < kJoints; ++i) {
        if (!finite(joints[i])) {
            throw InvalidPoseError(std::string("non-finite coordinate at joint ") + kJointNames[i]);
        }
    }
}

std::vector<double> ExtendedPose::flatten() const {
    std::vector<double> out;
    out.reserve(2 * kParts);
    for (const auto& p : parts) {
        out.push_back(p.x);
        out.push_back(p.y);
    }
    return out;
}

ExtendedPose ExtendedPose::from_flat(const std::vector<double>& values) {
    if (values.size() != 2 * kParts) {
        throw InvalidPoseError("extended pose needs 48 values, got " + std::to_string(values.size()));
    }
    ExtendedPose e;
    for (int i = 0; i < kParts; ++i) e.parts[i] = {values[2 * i], values[2 * i + 1]};
    return e;
}

PoseVector ExtendedPose::joints() const {
    PoseVector p;
    std::copy_n(parts.begin(), kJoints, p.joints.begin());
    return p;
}

ExtendedPose extend_pose(const PoseVector& pose) {
    pose.validate();
    ExtendedPose e;
    std::copy(pose.joints.begin(), pose.joints.end(), e.parts.begin());
    for (int r = 0; r < kRigidParts; ++r) {
        const Vec2 a = pose.joints[kRigidPairs[r][0]];
        const Vec2 b = pose.joints[kRigidPairs[r][1]];
        e.parts[kJoints + r] = {0.5 * (a.x + b.x), 0.5 * (a.y + b.y)};
    }
    Vec2 c;
    for (const auto& j : pose.joints) {
        c.x += j.x;
        c.y += j.y;
    }
    e.parts[kParts - 1] = {c.x / kJoints, c.y / kJoints};
    return e;
}

std::array<double, 3> PartGeometry::covariance() const {
    const double a = sigma_i * sigma_i, b = sigma_j * sigma_j;
    const auto& r = rotation;
    // R diag(a, b) R^T with R columns i = (r00, r10), j = (r01, r11)
    return {a * r[0][0] * r[0][0] + b * r[0][1] * r[0][1],
            a * r[0][0] * r[1][0] + b * r[0][1] * r[1][1],
            a * r[1][0] * r[1][0] + b * r[1][1] * r[1][1]};
}

void PartGeometry::validate() const {
    if (!(sigma_i > 0.0) || !(sigma_j > 0.0) || !std::isfinite(sigma_i) || !std::isfinite(sigma_j)) {
        throw GeometryError("part standard deviations must be positive and finite");
    }
    if (!finite(center)) throw GeometryError("part center is not finite");
    const auto& r = rotation;
    const double det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
    const double n0 = r[0][0] * r[0][0] + r[1][0] * r[1][0];
    const double n1 = r[0][1] * r[0][1] + r[1][1] * r[1][1];
    const double dot = r[0][0] * r[0][1] + r[1][0] * r[1][1];
    if (std::abs(det - 1.0) > 1e-9 || std::abs(n0 - 1.0) > 1e-9 || std::abs(n1 - 1.0) > 1e-9 ||
        std::abs(dot) > 1e-9) {
        throw GeometryError("part rotation is not a proper orthonormal matrix");
    }
}

void AnthropometricTable::validate() const {
    for (double k : kappa) {
        if (!(k > 0.0)) throw GeometryError("kappa entries must be positive");
    }
    if (!(length_scale > 0.0) || !(body_scale > 0.0) || !(joint_sigma > 0.0)) {
        throw GeometryError("anthropometric scales must be positive");
    }
}

nlohmann::json AnthropometricTable::to_json() const {
    nlohmann::json k;
    for (int r = 0; r < kRigidParts; ++r) k[kRigidPartNames[r]] = kappa[r];
    return {{"kappa", k},
            {"length_scale", length_scale},
            {"body_scale", body_scale},
            {"joint_sigma", joint_sigma}};
}

AnthropometricTable AnthropometricTable::from_json(const nlohmann::json& j) {
    AnthropometricTable t;
    if (j.contains("kappa")) {
        for (int r = 0; r < kRigidParts; ++r) {
            if (j["kappa"].contains(kRigidPartNames[r])) t.kappa[r] = j["kappa"][kRigidPartNames[r]];
        }
    }
    t.length_scale = j.value("length_scale", t.length_scale);
    t.body_scale = j.value("body_scale", t.body_scale);
    t.joint_sigma = j.value("joint_sigma", t.joint_sigma);
    t.validate();
    return t;
}

PartGeometry joint_geometry(Vec2 center, const AnthropometricTable& table) {
    PartGeometry g;
    g.center = center;
    g.sigma_i = g.sigma_j = table.joint_sigma;
    return g;
}

PartGeometry rigid_part_geometry(Vec2 k, Vec2 l, const AnthropometricTable& table, int part_id) {
    if (part_id < 0 || part_id >= kRigidParts) throw GeometryError("rigid part id out of range");
    if (!finite(k) || !finite(l)) throw InvalidPoseError("non-finite joint in rigid part");
    const Vec2 mid{0.5 * (k.x + l.x), 0.5 * (k.y + l.y)};
    const double dx = l.x - k.x, dy = l.y - k.y;
    const double len = std::hypot(dx, dy);
    if (len < kDegenerate) return joint_geometry(mid, table);
    PartGeometry g;
    g.center = mid;
    g.sigma_i = table.length_scale * len;
    g.sigma_j = table.kappa[part_id] * g.sigma_i;
    const double cx = dx / len, cy = dy / len;
    g.rotation = {{{cx, -cy}, {cy, cx}}};
    return g;
}

PartGeometry body_geometry(const std::array<Vec2, kJoints>& joints, const AnthropometricTable& table) {
    Vec2 c;
    for (const auto& j : joints) {
        if (!finite(j)) throw InvalidPoseError("non-finite joint in body geometry");
        c.x += j.x;
        c.y += j.y;
    }
    c.x /= kJoints;
    c.y /= kJoints;
    double sxx = 0, sxy = 0, syy = 0;
    for (const auto& j : joints) {
        const double dx = j.x - c.x, dy = j.y - c.y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx + syy < kDegenerate) return joint_geometry(c, table);

    // principal axis of the 2x2 scatter, sign fixed so that it points to +x
    // (or +y when vertical)
    const double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    double ix = std::cos(theta), iy = std::sin(theta);
    if (ix < -kDegenerate || (std::abs(ix) <= kDegenerate && iy < 0)) {
        ix = -ix;
        iy = -iy;
    }
    const double jx = -iy, jy = ix;
    double lo_i = 1e300, hi_i = -1e300, lo_j = 1e300, hi_j = -1e300;
    for (const auto& p : joints) {
        const double pi = (p.x - c.x) * ix + (p.y - c.y) * iy;
        const double pj = (p.x - c.x) * jx + (p.y - c.y) * jy;
        lo_i = std::min(lo_i, pi);
        hi_i = std::max(hi_i, pi);
        lo_j = std::min(lo_j, pj);
        hi_j = std::max(hi_j, pj);
    }
    PartGeometry g;
    g.center = c;
    g.sigma_i = table.body_scale * (hi_i - lo_i);
    g.sigma_j = table.body_scale * (hi_j - lo_j);
    // a flat scatter has no secondary extent; keep the covariance regular
    if (g.sigma_i < kDegenerate) g.sigma_i = table.joint_sigma;
    if (g.sigma_j < kDegenerate) g.sigma_j = table.joint_sigma;
    g.rotation = {{{ix, jx}, {iy, jy}}};
    return g;
}

std::vector<PartGeometry> part_geometries(const std::array<Vec2, kJoints>& px,
                                          const AnthropometricTable& table) {
    std::vector<PartGeometry> out;
    out.reserve(kParts);
    for (const auto& j : px) {
        if (!finite(j)) throw InvalidPoseError("non-finite joint");
        out.push_back(joint_geometry(j, table));
    }
    for (int r = 0; r < kRigidParts; ++r) {
        out.push_back(rigid_part_geometry(px[kRigidPairs[r][0]], px[kRigidPairs[r][1]], table, r));
    }
    out.push_back(body_geometry(px, table));
    return out;
}

void render_heatmaps_into(const std::vector<PartGeometry>& geometries, int height, int width,
                          float* out) {
    if (height < 1 || width < 1) throw GeometryError("heatmap extent must be positive");
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (std::size_t p = 0; p < geometries.size(); ++p) {
        const PartGeometry& g = geometries[p];
        g.validate();
        const double ix = g.rotation[0][0], iy = g.rotation[1][0];
        const double jx = g.rotation[0][1], jy = g.rotation[1][1];
        const double inv_i = 1.0 / g.sigma_i, inv_j = 1.0 / g.sigma_j;
        float* ch = out + p * plane;
        for (int v = 0; v < height; ++v) {
            const double dy = v - g.center.y;
            for (int u = 0; u < width; ++u) {
                const double dx = u - g.center.x;
                const double a = (dx * ix + dy * iy) * inv_i;
                const double b = (dx * jx + dy * jy) * inv_j;
                const double q = a * a + b * b;
                // exp(-40) is far below float resolution near 1 and below 1e-17 absolute
                const double val = q > 80.0 ? 0.0 : std::exp(-0.5 * q);
                ch[static_cast<std::size_t>(v) * width + u] =
                    static_cast<float>(std::clamp(val, 0.0, 1.0));
            }
        }
    }
}

Tensor<float> render_heatmaps(const std::vector<PartGeometry>& geometries, int height, int width) {
    Tensor<float> out(Shape{1, static_cast<int>(geometries.size()), height, width});
    render_heatmaps_into(geometries, height, width, out.data());
    return out;
}

Tensor<float> pose_heatmaps(const PoseVector& pose, int height, int width,
                            const AnthropometricTable& table) {
    return render_heatmaps(part_geometries(pose_to_pixels(pose, height, width), table), height, width);
}

Vec2 to_pixels(Vec2 p, int height, int width) {
    return {p.x * (width - 1), p.y * (height - 1)};
}

Vec2 from_pixels(Vec2 px, int height, int width) {
    return {width > 1 ? px.x / (width - 1) : 0.0, height > 1 ? px.y / (height - 1) : 0.0};
}

std::array<Vec2, kJoints> pose_to_pixels(const PoseVector& pose, int height, int width) {
    std::array<Vec2, kJoints> out;
    for (int i = 0; i < kJoints; ++i) out[i] = to_pixels(pose.joints[i], height, width);
    return out;
}

PoseVector pixels_to_pose(const std::array<Vec2, kJoints>& px, int height, int width) {
    PoseVector p;
    for (int i = 0; i < kJoints; ++i) p.joints[i] = from_pixels(px[i], height, width);
    return p;
}

nlohmann::json pose_schema() {
    nlohmann::json parts = nlohmann::json::array();
    for (int i = 0; i < kJoints; ++i) parts.push_back({{"index", i}, {"name", kJointNames[i]}, {"kind", "joint"}});
    for (int r = 0; r < kRigidParts; ++r) {
        parts.push_back({{"index", kJoints + r},
                         {"name", kRigidPartNames[r]},
                         {"kind", "rigid"},
                         {"joints", {kJointNames[kRigidPairs[r][0]], kJointNames[kRigidPairs[r][1]]}}});
    }
    parts.push_back({{"index", kParts - 1}, {"name", "body"}, {"kind", "body"}});
    return {{"schema", "dgpose-pose"},
            {"version", 1},
            {"joint_count", kJoints},
            {"part_count", kParts},
            {"coordinates",
             {{"normalized", "x and y in [0, 1] relative to the crop"},
              {"pixels", "x_px = x * (W - 1), y_px = y * (H - 1); x is the column"}}},
            {"pose_vector", "14 joints, flattened x0, y0, x1, y1, ..."},
            {"extended_pose", "24 parts: joints, rigid-part midpoints, joint mean; flattened length 48"},
            {"heatmaps", "float32 array P x H x W in part order, amplitude 1 at part centers"},
            {"parts", parts}};
}

}  // namespace dgpose::pose
