#include "stprompt/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace stp {

namespace {

Vec3 mat3_vec(const Matrix& m, const Vec3& x) {
    return {m(0, 0) * x[0] + m(0, 1) * x[1] + m(0, 2) * x[2],
            m(1, 0) * x[0] + m(1, 1) * x[1] + m(1, 2) * x[2],
            m(2, 0) * x[0] + m(2, 1) * x[1] + m(2, 2) * x[2]};
}

Vec3 mat3t_vec(const Matrix& m, const Vec3& x) {
    return {m(0, 0) * x[0] + m(1, 0) * x[1] + m(2, 0) * x[2],
            m(0, 1) * x[0] + m(1, 1) * x[1] + m(2, 1) * x[2],
            m(0, 2) * x[0] + m(1, 2) * x[1] + m(2, 2) * x[2]};
}

double det3(const Matrix& m) {
    return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
           m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
           m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
}

Matrix inverse3(const Matrix& m) {
    const double det = det3(m);
    if (!std::isfinite(det) || std::abs(det) < 1e-300) {
        throw GeometryError("intrinsics matrix is not invertible");
    }
    Matrix inv(3, 3);
    inv(0, 0) = (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) / det;
    inv(0, 1) = (m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2)) / det;
    inv(0, 2) = (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) / det;
    inv(1, 0) = (m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2)) / det;
    inv(1, 1) = (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) / det;
    inv(1, 2) = (m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2)) / det;
    inv(2, 0) = (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0)) / det;
    inv(2, 1) = (m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1)) / det;
    inv(2, 2) = (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) / det;
    return inv;
}

Vec3 normalized(Vec3 v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace

void Camera::validate(double tol) const {
    if (K.rows() != 3 || K.cols() != 3 || R.rows() != 3 || R.cols() != 3) {
        throw GeometryError("camera matrices must be 3x3");
    }
    const Matrix rrt = matmul_nt(R, R);
    if (max_abs_diff(rrt, Matrix::identity(3)) > tol || std::abs(det3(R) - 1.0) > tol) {
        throw GeometryError("camera rotation is not orthonormal with det +1");
    }
    if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) {
        throw GeometryError("intrinsics must be upper-triangular");
    }
    if (!(K(0, 0) > 0.0 && K(1, 1) > 0.0 && K(2, 2) > 0.0)) {
        throw GeometryError("intrinsics diagonal must be positive");
    }
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, double focal, double cx, double cy) {
    const Vec3 fwd = normalized({target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]});
    const Vec3 right = normalized(cross(fwd, Vec3{0.0, 0.0, 1.0}));
    const Vec3 down = cross(fwd, right);
    Camera cam;
    cam.R = Matrix{{right[0], right[1], right[2]}, {down[0], down[1], down[2]}, {fwd[0], fwd[1], fwd[2]}};
    const Vec3 re = mat3_vec(cam.R, eye);
    cam.T = {-re[0], -re[1], -re[2]};
    cam.K = Matrix{{focal, 0.0, cx}, {0.0, focal, cy}, {0.0, 0.0, 1.0}};
    return cam;
}

Projection project(const Camera& camera, const Vec3& world) {
    const Vec3 rc = mat3_vec(camera.R, world);
    const Vec3 xc{rc[0] + camera.T[0], rc[1] + camera.T[1], rc[2] + camera.T[2]};
    const Vec3 h = mat3_vec(camera.K, xc);
    return {h[0] / h[2], h[1] / h[2], xc[2]};
}

Vec3 unproject(const Camera& camera, double u, double v, double depth) {
    if (!(depth > 0.0)) throw GeometryError("unproject: depth must be positive");
    const Vec3 ray = mat3_vec(inverse3(camera.K), Vec3{u, v, 1.0});
    const Vec3 xc{depth * ray[0] - camera.T[0], depth * ray[1] - camera.T[1],
                  depth * ray[2] - camera.T[2]};
    return mat3t_vec(camera.R, xc);
}

bool Aabb::valid() const {
    for (int i = 0; i < 3; ++i)
        if (!(hi[i] > lo[i])) return false;
    return true;
}

Vec3 Aabb::center() const {
    return {(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0};
}

Vec3 Aabb::normalize(const Vec3& p) const {
    Vec3 q;
    for (int i = 0; i < 3; ++i) {
        q[i] = std::clamp(2.0 * (p[i] - lo[i]) / (hi[i] - lo[i]) - 1.0, -1.0, 1.0);
    }
    return q;
}

Vec3 Aabb::denormalize(const Vec3& q) const {
    Vec3 p;
    for (int i = 0; i < 3; ++i) p[i] = lo[i] + (q[i] + 1.0) * 0.5 * (hi[i] - lo[i]);
    return p;
}

double patch_median_depth(const CameraFrame& frame, std::size_t r0, std::size_t c0, std::size_t patch) {
    std::vector<double> d;
    d.reserve(patch * patch);
    for (std::size_t r = r0; r < r0 + patch; ++r)
        for (std::size_t c = c0; c < c0 + patch; ++c) {
            const double z = frame.depth_at(r, c);
            if (std::isfinite(z) && z > 0.0) d.push_back(z);
        }
    if (d.empty()) return std::numeric_limits<double>::infinity();
    std::sort(d.begin(), d.end());
    const std::size_t n = d.size();
    return n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

std::vector<const CameraFrame*> order_frames(const std::vector<CameraFrame>& frames,
                                             std::size_t patch, GridLayout& layout) {
    if (frames.empty()) throw GeometryError("no frames");
    if (patch == 0) throw GeometryError("patch size must be positive");
    const std::size_t h = frames.front().height;
    const std::size_t w = frames.front().width;
    if (h % patch || w % patch) throw GeometryError("frame size not divisible by patch size");
    std::map<std::pair<std::size_t, int>, const CameraFrame*> keyed;
    std::map<std::size_t, int> view_ids;
    std::map<int, int> time_ids;
    for (const auto& f : frames) {
        if (f.height != h || f.width != w) throw GeometryError("frames differ in size");
        if (!keyed.emplace(std::make_pair(f.view_id, f.time_index), &f).second) {
            throw GeometryError("duplicate (view, time) frame");
        }
        view_ids[f.view_id] = 0;
        time_ids[f.time_index] = 0;
    }
    layout = {view_ids.size(), time_ids.size(), h / patch, w / patch};
    if (keyed.size() != layout.frame_count()) throw GeometryError("frames do not form a full view×time grid");
    std::vector<const CameraFrame*> ordered;
    ordered.reserve(keyed.size());
    for (const auto& kv : keyed) ordered.push_back(kv.second);
    return ordered;
}

Coord4DGrid build_coord_grid(const std::vector<CameraFrame>& frames, std::size_t patch,
                             const Aabb& bounds) {
    if (!bounds.valid()) throw GeometryError("scene bounds are empty");
    Coord4DGrid grid;
    const auto ordered = order_frames(frames, patch, grid.layout);
    const auto& L = grid.layout;
    grid.coords = Matrix(L.token_count(), 4);
    grid.flow_mag.assign(L.token_count(), 0.0);
    grid.valid.assign(L.token_count(), true);
    std::size_t tok = 0;
    for (const CameraFrame* f : ordered) {
        for (std::size_t pr = 0; pr < L.rows; ++pr) {
            for (std::size_t pc = 0; pc < L.cols; ++pc, ++tok) {
                const double z = patch_median_depth(*f, pr * patch, pc * patch, patch);
                Vec3 q = kBackgroundSentinel;
                if (std::isfinite(z)) {
                    const double u = (static_cast<double>(pc) + 0.5) * static_cast<double>(patch);
                    const double v = (static_cast<double>(pr) + 0.5) * static_cast<double>(patch);
                    q = bounds.normalize(unproject(f->camera, u, v, z));
                } else {
                    grid.valid[tok] = false;
                }
                grid.coords(tok, 0) = q[0];
                grid.coords(tok, 1) = q[1];
                grid.coords(tok, 2) = q[2];
                grid.coords(tok, 3) = f->time_value;
            }
        }
    }
    return grid;
}

std::vector<double> block_matching_flow(const CameraFrame& a, const CameraFrame& b,
                                        std::size_t patch, std::size_t window, int search) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
        throw GeometryError("block matching: frame shapes differ");
    }
    if (a.view_id != b.view_id) throw GeometryError("block matching: frames from different views");
    if (patch == 0 || a.height % patch || a.width % patch) {
        throw GeometryError("block matching: frame size not divisible by patch size");
    }
    if (window == 0) throw GeometryError("block matching: window must be positive");
    const std::size_t rows = a.height / patch;
    const std::size_t cols = a.width / patch;
    const long H = static_cast<long>(a.height);
    const long W = static_cast<long>(a.width);
    const long half = static_cast<long>(window) / 2;
    std::vector<double> out(rows * cols, 0.0);
    for (std::size_t pr = 0; pr < rows; ++pr) {
        for (std::size_t pc = 0; pc < cols; ++pc) {
            const long cy = static_cast<long>(pr * patch + patch / 2);
            const long cx = static_cast<long>(pc * patch + patch / 2);
            const long y0 = std::clamp(cy - half, 0L, H - static_cast<long>(window));
            const long x0 = std::clamp(cx - half, 0L, W - static_cast<long>(window));
            double best = std::numeric_limits<double>::infinity();
            long best_dy = 0, best_dx = 0;
            for (long dy = -search; dy <= search; ++dy) {
                for (long dx = -search; dx <= search; ++dx) {
                    if (y0 + dy < 0 || x0 + dx < 0 || y0 + dy + static_cast<long>(window) > H ||
                        x0 + dx + static_cast<long>(window) > W) {
                        continue;
                    }
                    double ssd = 0.0;
                    for (long y = 0; y < static_cast<long>(window); ++y)
                        for (long x = 0; x < static_cast<long>(window); ++x)
                            for (std::size_t ch = 0; ch < a.channels; ++ch) {
                                const double d =
                                    a.pixel(static_cast<std::size_t>(y0 + y), static_cast<std::size_t>(x0 + x), ch) -
                                    b.pixel(static_cast<std::size_t>(y0 + y + dy), static_cast<std::size_t>(x0 + x + dx), ch);
                                ssd += d * d;
                            }
                    const long mag2 = dy * dy + dx * dx;
                    const long best2 = best_dy * best_dy + best_dx * best_dx;
                    const bool better =
                        ssd < best ||
                        (ssd == best && (mag2 < best2 ||
                                         (mag2 == best2 && std::make_pair(dy, dx) < std::make_pair(best_dy, best_dx))));
                    if (better) {
                        best = ssd;
                        best_dy = dy;
                        best_dx = dx;
                    }
                }
            }
            out[pr * cols + pc] = std::sqrt(static_cast<double>(best_dy * best_dy + best_dx * best_dx));
        }
    }
    return out;
}

}  // namespace stp
