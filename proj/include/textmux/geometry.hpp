#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

namespace textmux {

struct Point {
    double x = 0;
    double y = 0;
};

using Polygon = std::vector<Point>;

inline double signed_area(const Polygon& p) {
    double acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Point& a = p[i];
        const Point& b = p[(i + 1) % p.size()];
        acc += a.x * b.y - b.x * a.y;
    }
    return acc / 2.0;
}

inline double polygon_area(const Polygon& p) { return std::fabs(signed_area(p)); }

inline double polygon_perimeter(const Polygon& p) {
    double acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Point& a = p[i];
        const Point& b = p[(i + 1) % p.size()];
        acc += std::hypot(b.x - a.x, b.y - a.y);
    }
    return acc;
}

// counterclockwise in plain xy coordinates (positive signed area)
inline Polygon normalized_ccw(Polygon p) {
    if (signed_area(p) < 0) std::reverse(p.begin(), p.end());
    return p;
}

// Clips `subject` against the half-plane on the left of the directed line
// a -> b (Sutherland-Hodgman step).
inline Polygon clip_halfplane(const Polygon& subject, Point a, Point b, double offset = 0.0) {
    auto side = [&](const Point& p) {
        double nx = -(b.y - a.y), ny = b.x - a.x;
        double len = std::hypot(nx, ny);
        nx /= len;
        ny /= len;
        return (p.x - a.x) * nx + (p.y - a.y) * ny - offset;
    };
    Polygon out;
    const double eps = 1e-12;
    for (std::size_t i = 0; i < subject.size(); ++i) {
        const Point& cur = subject[i];
        const Point& nxt = subject[(i + 1) % subject.size()];
        double sc = side(cur), sn = side(nxt);
        if (sc >= -eps) out.push_back(cur);
        if ((sc > eps && sn < -eps) || (sc < -eps && sn > eps)) {
            double t = sc / (sc - sn);
            out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
        }
    }
    return out;
}

// Intersection of a simple subject polygon with a convex clip polygon.
inline Polygon clip_polygon(const Polygon& subject, const Polygon& clip) {
    Polygon c = normalized_ccw(clip);
    Polygon out = subject;
    for (std::size_t i = 0; i < c.size() && !out.empty(); ++i)
        out = clip_halfplane(out, c[i], c[(i + 1) % c.size()]);
    return out;
}

inline double intersection_area(const Polygon& a, const Polygon& b) {
    if (a.size() < 3 || b.size() < 3) return 0.0;
    Polygon inter = clip_polygon(a, b);
    return inter.size() < 3 ? 0.0 : polygon_area(inter);
}

inline double polygon_iou(const Polygon& a, const Polygon& b) {
    if (a.size() < 3 || b.size() < 3) return 0.0;
    double aa = polygon_area(a), ab = polygon_area(b);
    if (aa <= 0.0 || ab <= 0.0) return 0.0;
    double inter = intersection_area(a, b);
    double uni = aa + ab - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// Offset distance of the shrink rule: d = A(1 - r^2) / L.
inline double shrink_distance(double area, double perimeter, double shrink_ratio) {
    return area * (1.0 - shrink_ratio * shrink_ratio) / perimeter;
}

// Inward offset by distance d; nullopt when the polygon collapses.
inline std::optional<Polygon> inward_offset(const Polygon& poly, double d) {
    if (poly.size() < 3) return std::nullopt;
    Polygon p = normalized_ccw(poly);
    Polygon out = p;
    for (std::size_t i = 0; i < p.size() && !out.empty(); ++i)
        out = clip_halfplane(out, p[i], p[(i + 1) % p.size()], d);
    if (out.size() < 3 || polygon_area(out) < 1e-9) return std::nullopt;
    return out;
}

// Miter outward offset for convex polygons: shift every edge line out by d
// and intersect consecutive lines.
inline Polygon outward_offset(const Polygon& poly, double d) {
    Polygon p = normalized_ccw(poly);
    const std::size_t n = p.size();
    if (n < 3) throw std::invalid_argument("outward_offset: degenerate polygon");
    struct Line {
        Point origin;
        Point dir;
    };
    std::vector<Line> lines(n);
    for (std::size_t i = 0; i < n; ++i) {
        Point a = p[i], b = p[(i + 1) % n];
        double tx = b.x - a.x, ty = b.y - a.y;
        double len = std::hypot(tx, ty);
        tx /= len;
        ty /= len;
        // interior is on the left of a->b; outward normal points right
        double nx = ty, ny = -tx;
        lines[i] = {{a.x + nx * d, a.y + ny * d}, {tx, ty}};
    }
    Polygon out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Line& l1 = lines[(i + n - 1) % n];
        const Line& l2 = lines[i];
        double det = l1.dir.x * (-l2.dir.y) - l1.dir.y * (-l2.dir.x);
        if (std::fabs(det) < 1e-12) {  // collinear edges: fall back to shared corner shift
            out[i] = l2.origin;
            continue;
        }
        double bx = l2.origin.x - l1.origin.x, by = l2.origin.y - l1.origin.y;
        double t = (bx * (-l2.dir.y) - by * (-l2.dir.x)) / det;
        out[i] = {l1.origin.x + t * l1.dir.x, l1.origin.y + t * l1.dir.y};
    }
    return out;
}

// Positive root of the expansion consistency equation: find d such that the
// polygon grown by d satisfies d = A(1 - r^2)/L for the grown polygon (exact
// inverse of the shrink rule at rectangle level).
inline double unclip_distance(double shrunk_area, double shrunk_perimeter, double shrink_ratio) {
    double u = 1.0 - shrink_ratio * shrink_ratio;
    double a = 8.0 - 4.0 * u;
    double b = shrunk_perimeter * (1.0 - u);
    double c = -u * shrunk_area;
    double disc = b * b - 4.0 * a * c;
    if (disc < 0) return 0.0;
    return (-b + std::sqrt(disc)) / (2.0 * a);
}

inline Polygon convex_hull(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }),
              pts.end());
    if (pts.size() < 3) return pts;
    auto cross = [](const Point& o, const Point& a, const Point& b) {
        return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    };
    std::vector<Point> hull(2 * pts.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

// Minimum-area enclosing rectangle via rotating the box onto each hull edge.
inline Polygon min_area_rect(const std::vector<Point>& pts) {
    if (pts.empty()) throw std::invalid_argument("min_area_rect: no points");
    Polygon hull = convex_hull(pts);
    if (hull.size() == 1) {
        Point p = hull[0];
        return {{p.x, p.y}, {p.x, p.y}, {p.x, p.y}, {p.x, p.y}};
    }
    if (hull.size() == 2) {
        return {hull[0], hull[1], hull[1], hull[0]};
    }
    double best_area = -1;
    Polygon best;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        Point a = hull[i], b = hull[(i + 1) % hull.size()];
        double tx = b.x - a.x, ty = b.y - a.y;
        double len = std::hypot(tx, ty);
        if (len < 1e-12) continue;
        tx /= len;
        ty /= len;
        double nx = -ty, ny = tx;
        double lo_t = 1e300, hi_t = -1e300, lo_n = 1e300, hi_n = -1e300;
        for (const Point& p : hull) {
            double pt = (p.x - a.x) * tx + (p.y - a.y) * ty;
            double pn = (p.x - a.x) * nx + (p.y - a.y) * ny;
            lo_t = std::min(lo_t, pt);
            hi_t = std::max(hi_t, pt);
            lo_n = std::min(lo_n, pn);
            hi_n = std::max(hi_n, pn);
        }
        double area = (hi_t - lo_t) * (hi_n - lo_n);
        if (best_area < 0 || area < best_area) {
            best_area = area;
            auto corner = [&](double t, double n) {
                return Point{a.x + t * tx + n * nx, a.y + t * ty + n * ny};
            };
            best = {corner(lo_t, lo_n), corner(hi_t, lo_n), corner(hi_t, hi_n), corner(lo_t, hi_n)};
        }
    }
    return best;
}

inline bool point_in_polygon(const Polygon& poly, double x, double y) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point& a = poly[i];
        const Point& b = poly[j];
        if ((a.y > y) != (b.y > y)) {
            double xi = a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x);
            if (x < xi) inside = !inside;
        }
    }
    return inside;
}

inline void polygon_bounds(const Polygon& p, double& x0, double& y0, double& x1, double& y1) {
    x0 = y0 = 1e300;
    x1 = y1 = -1e300;
    for (const Point& q : p) {
        x0 = std::min(x0, q.x);
        y0 = std::min(y0, q.y);
        x1 = std::max(x1, q.x);
        y1 = std::max(y1, q.y);
    }
}

// Scanline fill over pixel centers into a row-major h x w grid.
template <class SetPixel>
void rasterize_polygon(const Polygon& poly, int h, int w, SetPixel&& set) {
    if (poly.size() < 3) return;
    double x0, y0, x1, y1;
    polygon_bounds(poly, x0, y0, x1, y1);
    int ys = std::max(0, static_cast<int>(std::floor(y0)));
    int ye = std::min(h - 1, static_cast<int>(std::ceil(y1)));
    std::vector<double> xs;
    for (int y = ys; y <= ye; ++y) {
        double cy = y + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < poly.size(); ++i) {
            const Point& a = poly[i];
            const Point& b = poly[(i + 1) % poly.size()];
            if ((a.y <= cy && b.y > cy) || (b.y <= cy && a.y > cy)) {
                double t = (cy - a.y) / (b.y - a.y);
                xs.push_back(a.x + t * (b.x - a.x));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            int xa = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
            int xb = std::min(w - 1, static_cast<int>(std::floor(xs[k + 1] - 0.5)));
            for (int x = xa; x <= xb; ++x) set(y, x);
        }
    }
}

}  // namespace textmux
