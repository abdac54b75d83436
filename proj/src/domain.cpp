#include "insens/domain.hpp"

#include "insens/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace insens {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double sq(double v) { return v * v; }

double interval_overlap(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

double rect_point_distance(const AxisRect& r, double x, double y) {
    const double dx = std::max({r.x0 - x, 0.0, x - r.x1});
    const double dy = std::max({r.y0 - y, 0.0, y - r.y1});
    return std::hypot(dx, dy);
}

} // namespace

bool RegionShape::contains(double x, double y) const {
    return std::visit(Overloaded{
                          [&](const AxisRect& r) { return x > r.x0 && x < r.x1 && y > r.y0 && y < r.y1; },
                          [&](const Disk& d) { return sq(x - d.cx) + sq(y - d.cy) < sq(d.r); },
                          [&](const Annulus& a) {
                              const double rho2 = sq(x - a.cx) + sq(y - a.cy);
                              return rho2 > sq(a.r_in) && rho2 < sq(a.r_out);
                          },
                      },
                      shape_);
}

bool RegionShape::contains_closed(double x, double y) const {
    return std::visit(Overloaded{
                          [&](const AxisRect& r) { return x >= r.x0 && x <= r.x1 && y >= r.y0 && y <= r.y1; },
                          [&](const Disk& d) { return sq(x - d.cx) + sq(y - d.cy) <= sq(d.r); },
                          [&](const Annulus& a) {
                              const double rho2 = sq(x - a.cx) + sq(y - a.cy);
                              return rho2 >= sq(a.r_in) && rho2 <= sq(a.r_out);
                          },
                      },
                      shape_);
}

bool RegionShape::well_formed() const {
    return std::visit(Overloaded{
                          [](const AxisRect& r) { return r.x1 > r.x0 && r.y1 > r.y0; },
                          [](const Disk& d) { return d.r > 0.0; },
                          [](const Annulus& a) { return a.r_in >= 0.0 && a.r_out > a.r_in; },
                      },
                      shape_);
}

AxisRect RegionShape::bounding_box() const {
    return std::visit(Overloaded{
                          [](const AxisRect& r) { return r; },
                          [](const Disk& d) { return AxisRect{d.cx - d.r, d.cx + d.r, d.cy - d.r, d.cy + d.r}; },
                          [](const Annulus& a) {
                              return AxisRect{a.cx - a.r_out, a.cx + a.r_out, a.cy - a.r_out, a.cy + a.r_out};
                          },
                      },
                      shape_);
}

double RegionShape::cell_overlap(double xc, double yc, double hx, double hy) const {
    if (const auto* r = std::get_if<AxisRect>(&shape_)) {
        const double ox = interval_overlap(xc - 0.5 * hx, xc + 0.5 * hx, r->x0, r->x1);
        const double oy = interval_overlap(yc - 0.5 * hy, yc + 0.5 * hy, r->y0, r->y1);
        return (ox * oy) / (hx * hy);
    }
    constexpr int kSub = 16;
    int inside = 0;
    for (int a = 0; a < kSub; ++a) {
        for (int b = 0; b < kSub; ++b) {
            const double px = xc + hx * ((a + 0.5) / kSub - 0.5);
            const double py = yc + hy * ((b + 0.5) / kSub - 0.5);
            inside += contains(px, py) ? 1 : 0;
        }
    }
    return static_cast<double>(inside) / (kSub * kSub);
}

std::string RegionShape::describe() const {
    std::ostringstream os;
    std::visit(Overloaded{
                   [&](const AxisRect& r) { os << "rect(" << r.x0 << "," << r.x1 << "," << r.y0 << "," << r.y1 << ")"; },
                   [&](const Disk& d) { os << "disk(" << d.cx << "," << d.cy << "," << d.r << ")"; },
                   [&](const Annulus& a) {
                       os << "annulus(" << a.cx << "," << a.cy << "," << a.r_in << "," << a.r_out << ")";
                   },
               },
               shape_);
    return os.str();
}

bool closures_disjoint(const RegionShape& a, const RegionShape& b) {
    const auto& va = a.variant();
    const auto& vb = b.variant();
    if (const auto* ra = std::get_if<AxisRect>(&va)) {
        if (const auto* rb = std::get_if<AxisRect>(&vb)) {
            return ra->x1 < rb->x0 || rb->x1 < ra->x0 || ra->y1 < rb->y0 || rb->y1 < ra->y0;
        }
        if (const auto* db = std::get_if<Disk>(&vb)) {
            return rect_point_distance(*ra, db->cx, db->cy) > db->r;
        }
    }
    if (const auto* da = std::get_if<Disk>(&va)) {
        if (const auto* db = std::get_if<Disk>(&vb)) {
            return std::hypot(da->cx - db->cx, da->cy - db->cy) > da->r + db->r;
        }
        if (std::holds_alternative<AxisRect>(vb)) {
            return closures_disjoint(b, a);
        }
    }
    // Annulus combinations: sample the intersection of the bounding boxes.
    const AxisRect ba = a.bounding_box();
    const AxisRect bb = b.bounding_box();
    const double x0 = std::max(ba.x0, bb.x0), x1 = std::min(ba.x1, bb.x1);
    const double y0 = std::max(ba.y0, bb.y0), y1 = std::min(ba.y1, bb.y1);
    if (x1 < x0 || y1 < y0) {
        return true;
    }
    constexpr int kSamples = 400;
    for (int i = 0; i <= kSamples; ++i) {
        for (int j = 0; j <= kSamples; ++j) {
            const double px = x0 + (x1 - x0) * i / kSamples;
            const double py = y0 + (y1 - y0) * j / kSamples;
            if (a.contains_closed(px, py) && b.contains_closed(px, py)) {
                return false;
            }
        }
    }
    return true;
}

std::string_view to_string(Face face) noexcept {
    switch (face) {
    case Face::Bottom: return "bottom";
    case Face::Right: return "right";
    case Face::Top: return "top";
    case Face::Left: return "left";
    }
    return "?";
}

Eigen::VectorXd BoundaryGeometry::weights() const {
    Eigen::VectorXd w(static_cast<Eigen::Index>(points.size()));
    for (std::size_t p = 0; p < points.size(); ++p) {
        w[static_cast<Eigen::Index>(p)] = points[p].weight;
    }
    return w;
}

double BoundaryGeometry::perimeter() const {
    double s = 0.0;
    for (const auto& p : points) {
        s += p.weight;
    }
    return s;
}

Eigen::VectorXd Grid::intersection_mask() const { return omega_mask.cwiseProduct(theta_mask); }

void validate_spec(const DomainSpec& spec) {
    if (!(spec.lx > 0.0) || !(spec.ly > 0.0)) {
        throw Error(ErrorCode::InvalidSpec, "domain lengths must be positive");
    }
    if (spec.nx < 3 || spec.ny < 3) {
        throw Error(ErrorCode::InvalidSpec, "at least 3 interior nodes per axis are required");
    }
    const auto inside_rectangle = [&](const RegionShape& r, const char* name) {
        if (!r.well_formed()) {
            throw Error(ErrorCode::InvalidSpec, std::string(name) + " region parameters are degenerate");
        }
        const AxisRect bb = r.bounding_box();
        if (bb.x0 < 0.0 || bb.x1 > spec.lx || bb.y0 < 0.0 || bb.y1 > spec.ly) {
            throw Error(ErrorCode::InvalidSpec, std::string(name) + " region " + r.describe() +
                                                    " leaves the domain rectangle");
        }
    };
    inside_rectangle(spec.omega, "omega");
    inside_rectangle(spec.theta, "theta");

    if (spec.geometric_case == GeometricCase::Disjoint) {
        const AxisRect bb = spec.theta.bounding_box();
        if (!(bb.x0 > 0.0 && bb.x1 < spec.lx && bb.y0 > 0.0 && bb.y1 < spec.ly)) {
            throw Error(ErrorCode::InvalidSpec, "disjoint case requires closure(theta) inside the open rectangle");
        }
        if (!closures_disjoint(spec.omega, spec.theta)) {
            throw Error(ErrorCode::InvalidSpec, "disjoint case requires closure(theta) disjoint from omega");
        }
        if (std::holds_alternative<Annulus>(spec.theta.variant())) {
            throw Error(ErrorCode::InvalidSpec,
                        "disjoint case requires a connected complement of closure(theta); an annulus separates it");
        }
    }
}

Grid build_grid(const DomainSpec& spec, MaskRule rule) {
    validate_spec(spec);

    Grid g;
    g.spec = spec;
    g.hx = spec.lx / (spec.nx + 1);
    g.hy = spec.ly / (spec.ny + 1);
    const int n = spec.nx * spec.ny;
    g.x.resize(n);
    g.y.resize(n);
    g.omega_mask.setZero(n);
    g.theta_mask.setZero(n);
    for (int j = 1; j <= spec.ny; ++j) {
        for (int i = 1; i <= spec.nx; ++i) {
            const int k = g.node(i, j);
            const double px = i * g.hx;
            const double py = j * g.hy;
            g.x[k] = px;
            g.y[k] = py;
            if (rule == MaskRule::NodeIndicator) {
                g.omega_mask[k] = spec.omega.contains(px, py) ? 1.0 : 0.0;
                g.theta_mask[k] = spec.theta.contains(px, py) ? 1.0 : 0.0;
            } else {
                g.omega_mask[k] = spec.omega.cell_overlap(px, py, g.hx, g.hy);
                g.theta_mask[k] = spec.theta.cell_overlap(px, py, g.hx, g.hy);
            }
        }
    }
    for (int k = 0; k < n; ++k) {
        if (g.omega_mask[k] > 0.0) {
            g.omega_nodes.push_back(k);
        }
    }
    if (g.omega_nodes.empty()) {
        throw Error(ErrorCode::InvalidSpec, "omega region " + spec.omega.describe() + " contains no grid node");
    }
    if (g.theta_mask.maxCoeff() <= 0.0) {
        throw Error(ErrorCode::InvalidSpec, "theta region " + spec.theta.describe() + " contains no grid node");
    }
    const double shared = g.intersection_mask().sum();
    if (spec.geometric_case == GeometricCase::Disjoint && shared != 0.0) {
        throw Error(ErrorCode::InvalidSpec, "disjoint case but omega and theta masks share nodes");
    }
    if (spec.geometric_case == GeometricCase::Intersecting && !(shared > 0.0)) {
        throw Error(ErrorCode::InvalidSpec, "intersecting case but omega and theta masks share no node");
    }

    // Boundary samples: one per interior grid line. The end samples of each
    // face carry the half cell next to the corner, so weights sum to the
    // perimeter exactly.
    auto& pts = g.boundary.points;
    const auto face_weight = [](int idx, int count, double h) {
        return (idx == 1 || idx == count) ? 1.5 * h : h;
    };
    const double lx = spec.lx, ly = spec.ly;
    for (int i = 1; i <= spec.nx; ++i) {
        pts.push_back({Face::Bottom, i * g.hx, 0.0, 0.0, -1.0, face_weight(i, spec.nx, g.hx), i * g.hx,
                       g.node(i, 1), g.node(i, 2), g.hy});
    }
    for (int j = 1; j <= spec.ny; ++j) {
        pts.push_back({Face::Right, lx, j * g.hy, 1.0, 0.0, face_weight(j, spec.ny, g.hy), lx + j * g.hy,
                       g.node(spec.nx, j), g.node(spec.nx - 1, j), g.hx});
    }
    for (int i = spec.nx; i >= 1; --i) {
        pts.push_back({Face::Top, i * g.hx, ly, 0.0, 1.0, face_weight(i, spec.nx, g.hx), lx + ly + (lx - i * g.hx),
                       g.node(i, spec.ny), g.node(i, spec.ny - 1), g.hy});
    }
    for (int j = spec.ny; j >= 1; --j) {
        pts.push_back({Face::Left, 0.0, j * g.hy, -1.0, 0.0, face_weight(j, spec.ny, g.hy),
                       2.0 * lx + ly + (ly - j * g.hy), g.node(1, j), g.node(2, j), g.hx});
    }
    return g;
}

PerturbationField PerturbationField::face_dilation(Face face) {
    return PerturbationField{AnalyticRectFamily{face}};
}

PerturbationField PerturbationField::samples(Eigen::VectorXd values) {
    return PerturbationField{NormalTraceSamples{std::move(values)}};
}

Eigen::VectorXd normal_component(const PerturbationField& v, const BoundaryGeometry& b) {
    const auto n = static_cast<Eigen::Index>(b.size());
    if (const auto* s = std::get_if<NormalTraceSamples>(&v.field)) {
        require_size(static_cast<std::size_t>(s->values.size()), b.size(), "normal trace samples");
        return s->values;
    }
    const auto& fam = std::get<AnalyticRectFamily>(v.field);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (Eigen::Index p = 0; p < n; ++p) {
        const auto& pt = b.points[static_cast<std::size_t>(p)];
        if (pt.face != fam.face) {
            continue;
        }
        const double along = (pt.face == Face::Bottom || pt.face == Face::Top) ? pt.x : pt.y;
        out[p] = fam.profile(along);
    }
    return out;
}

double normal_sup_norm(const PerturbationField& v, const BoundaryGeometry& b) {
    const Eigen::VectorXd vn = normal_component(v, b);
    return vn.size() == 0 ? 0.0 : vn.cwiseAbs().maxCoeff();
}

} // namespace insens
