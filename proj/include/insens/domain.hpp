#pragma once

#include <Eigen/Core>

#include <functional>
#include <string>
#include <variant>
#include <vector>

namespace insens {

// ---------------------------------------------------------------------------
// Region shapes
// ---------------------------------------------------------------------------

struct AxisRect {
    double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;
};

struct Disk {
    double cx = 0.0, cy = 0.0, r = 0.0;
};

struct Annulus {
    double cx = 0.0, cy = 0.0, r_in = 0.0, r_out = 0.0;
};

/// Open planar region used for the control set and the observation set.
class RegionShape {
public:
    using Variant = std::variant<AxisRect, Disk, Annulus>;

    RegionShape() = default;
    RegionShape(AxisRect r) : shape_(r) {}
    RegionShape(Disk d) : shape_(d) {}
    RegionShape(Annulus a) : shape_(a) {}

    [[nodiscard]] const Variant& variant() const noexcept { return shape_; }

    /// Membership in the open set.
    [[nodiscard]] bool contains(double x, double y) const;
    /// Membership in the closure.
    [[nodiscard]] bool contains_closed(double x, double y) const;
    /// Parameters describe a nonempty open set.
    [[nodiscard]] bool well_formed() const;
    /// Axis-aligned bounding box of the closure, as {x0, x1, y0, y1}.
    [[nodiscard]] AxisRect bounding_box() const;
    /// Fraction of the cell [xc ± hx/2] × [yc ± hy/2] covered by the region.
    /// Exact for rectangles; 16×16 midpoint sampling for round shapes.
    [[nodiscard]] double cell_overlap(double xc, double yc, double hx, double hy) const;
    /// Short human-readable description, e.g. "rect(0.1,0.4,0.2,0.8)".
    [[nodiscard]] std::string describe() const;

private:
    Variant shape_{AxisRect{}};
};

/// True when the closures of `a` and `b` do not meet.
bool closures_disjoint(const RegionShape& a, const RegionShape& b);

// ---------------------------------------------------------------------------
// Domain specification and grid
// ---------------------------------------------------------------------------

enum class GeometricCase { Disjoint, Intersecting };

struct DomainSpec {
    double lx = 1.0;
    double ly = 1.0;
    int nx = 33;  ///< interior nodes along x
    int ny = 33;  ///< interior nodes along y
    RegionShape omega;
    RegionShape theta;
    GeometricCase geometric_case = GeometricCase::Disjoint;
};

enum class Face { Bottom, Right, Top, Left };

std::string_view to_string(Face face) noexcept;

/// One boundary quadrature sample on the rectangle perimeter.
struct BoundaryPoint {
    Face face;
    double x, y;        ///< position on the perimeter
    double nx, ny;      ///< outward unit normal
    double weight;      ///< arc-length quadrature weight
    double arc;         ///< arc-length coordinate, counter-clockwise from (0,0)
    int inner1, inner2; ///< first and second interior nodes along the inward normal
    double h_normal;    ///< grid spacing along the normal
};

/// Perimeter samples (corners excluded), ordered counter-clockwise starting
/// on the bottom face.
struct BoundaryGeometry {
    std::vector<BoundaryPoint> points;

    [[nodiscard]] std::size_t size() const noexcept { return points.size(); }
    [[nodiscard]] Eigen::VectorXd weights() const;
    [[nodiscard]] double perimeter() const;
};

/// Node-mask construction rule. `NodeIndicator` gives {0,1} masks from
/// open-set membership; `CellOverlap` gives cell-coverage fractions and is
/// used for re-gridded rectangles that must see regions fixed in absolute
/// coordinates.
enum class MaskRule { NodeIndicator, CellOverlap };

/// Uniform interior grid of a rectangle with homogeneous Dirichlet data.
/// Node k = (j-1)*nx + (i-1) sits at (i*hx, j*hy) for i in [1,nx], j in [1,ny].
struct Grid {
    DomainSpec spec;
    double hx = 0.0, hy = 0.0;
    Eigen::VectorXd x, y;           ///< node coordinates
    Eigen::VectorXd omega_mask;     ///< 1_ω sampled at nodes
    Eigen::VectorXd theta_mask;     ///< 1_Θ sampled at nodes
    std::vector<int> omega_nodes;   ///< nodes with positive ω mask, ascending
    BoundaryGeometry boundary;

    [[nodiscard]] int nx() const noexcept { return spec.nx; }
    [[nodiscard]] int ny() const noexcept { return spec.ny; }
    [[nodiscard]] int num_nodes() const noexcept { return spec.nx * spec.ny; }
    [[nodiscard]] int node(int i, int j) const noexcept { return (j - 1) * spec.nx + (i - 1); }
    [[nodiscard]] double cell_area() const noexcept { return hx * hy; }
    /// Elementwise product of the two masks (the ω∩Θ mask).
    [[nodiscard]] Eigen::VectorXd intersection_mask() const;
};

/// Builds the grid, masks and boundary geometry; throws InvalidSpec.
Grid build_grid(const DomainSpec& spec, MaskRule rule = MaskRule::NodeIndicator);

/// Checks the region/geometric-case invariants on parameters only.
void validate_spec(const DomainSpec& spec);

// ---------------------------------------------------------------------------
// Perturbation fields
// ---------------------------------------------------------------------------

/// Dilation of one rectangle face: V = ramp · profile(s) · n_face, where the
/// ramp is 1 on the face and 0 on the opposite face, and s is the absolute
/// coordinate along the face. With profile ≡ 1 the perturbed domain stays a
/// rectangle.
struct AnalyticRectFamily {
    Face face = Face::Right;
    std::function<double(double)> profile = [](double) { return 1.0; };
    bool unit_profile = true; ///< set when profile ≡ 1 (rectangle-preserving)
};

struct NormalTraceSamples {
    Eigen::VectorXd values;
};

struct PerturbationField {
    std::variant<AnalyticRectFamily, NormalTraceSamples> field;

    static PerturbationField face_dilation(Face face);
    static PerturbationField samples(Eigen::VectorXd values);
};

/// V·n at each boundary sample. Throws DimensionMismatch for sample-count mismatch.
Eigen::VectorXd normal_component(const PerturbationField& v, const BoundaryGeometry& b);

/// sup |V·n| over the boundary samples; stands in for the W^{3,∞} norm.
double normal_sup_norm(const PerturbationField& v, const BoundaryGeometry& b);

} // namespace insens
