#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

using namespace insens;
using namespace testsupport;

TEST_CASE("full-domain control region covers every node") {
    const Grid g = build_grid(unit_square(3, AxisRect{0, 1, 0, 1}, AxisRect{0.2, 0.8, 0.2, 0.8},
                                          GeometricCase::Intersecting));
    CHECK(g.num_nodes() == 9);
    CHECK(g.omega_mask.size() == 9);
    CHECK(g.omega_mask.minCoeff() == 1.0);
    CHECK(g.omega_nodes.size() == 9);
}

TEST_CASE("boundary weights sum to the perimeter") {
    for (const auto& [lx, ly, n] : {std::tuple{1.0, 1.0, 33}, std::tuple{2.0, 0.5, 9}, std::tuple{1.3, 0.7, 17}}) {
        DomainSpec s = disjoint_square(n);
        s.lx = lx;
        s.ly = ly;
        s.omega = AxisRect{0.05 * lx, 0.45 * lx, 0.1 * ly, 0.9 * ly};
        s.theta = AxisRect{0.6 * lx, 0.9 * lx, 0.3 * ly, 0.7 * ly};
        const Grid g = build_grid(s);
        CHECK(rel(g.boundary.perimeter(), 2.0 * (lx + ly)) <= 1e-12);
        for (const auto& p : g.boundary.points) {
            CHECK(std::abs(std::hypot(p.nx, p.ny) - 1.0) < 1e-15);
            CHECK((p.nx == 0.0 || p.ny == 0.0));
        }
    }
    const Grid g = build_grid(disjoint_square(33));
    CHECK(std::abs(g.boundary.perimeter() - 4.0) <= 1e-12);
}

TEST_CASE("contradictory disjoint spec is rejected") {
    const RegionShape r = AxisRect{0.3, 0.6, 0.3, 0.6};
    try {
        (void)build_grid(unit_square(9, r, r, GeometricCase::Disjoint));
        FAIL("expected InvalidSpec");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidSpec);
    }
}

TEST_CASE("intersecting case needs a shared node") {
    DomainSpec s = disjoint_square(9);
    s.geometric_case = GeometricCase::Intersecting;
    CHECK_THROWS_AS((void)build_grid(s), Error);
}

TEST_CASE("regions must lie inside the rectangle and be nonempty") {
    DomainSpec s = disjoint_square(9);
    s.omega = AxisRect{-0.1, 0.3, 0.1, 0.9};
    CHECK_THROWS_AS((void)build_grid(s), Error);
    s.omega = AxisRect{0.01, 0.02, 0.5, 0.51};
    CHECK_THROWS_AS((void)build_grid(s), Error);
}

TEST_CASE("masks in the disjoint case never overlap") {
    const Grid g = build_grid(disjoint_square(33));
    CHECK(g.intersection_mask().sum() == 0.0);
    const Grid gi = build_grid(intersecting_square(33));
    CHECK(gi.intersection_mask().sum() > 0.0);
    for (int k = 0; k < gi.num_nodes(); ++k) {
        CHECK(gi.intersection_mask()[k] == gi.omega_mask[k] * gi.theta_mask[k]);
        CHECK((gi.omega_mask[k] == 0.0 || gi.omega_mask[k] == 1.0));
    }
}

TEST_CASE("rasterization is monotone under enlargement") {
    const std::vector<std::pair<RegionShape, RegionShape>> pairs = {
        {AxisRect{0.2, 0.4, 0.2, 0.4}, AxisRect{0.15, 0.45, 0.2, 0.5}},
        {Disk{0.5, 0.5, 0.1}, Disk{0.5, 0.5, 0.17}},
        {Annulus{0.5, 0.5, 0.2, 0.3}, Annulus{0.5, 0.5, 0.15, 0.35}},
    };
    for (const auto& [small, big] : pairs) {
        DomainSpec s = unit_square(21, small, AxisRect{0.0, 1.0, 0.0, 1.0}, GeometricCase::Intersecting);
        const Grid a = build_grid(s);
        s.omega = big;
        const Grid b = build_grid(s);
        CHECK(((b.omega_mask - a.omega_mask).minCoeff() >= 0.0));
    }
}

TEST_CASE("face dilation normal component") {
    const Grid g = build_grid(disjoint_square(9));
    const Eigen::VectorXd right = normal_component(PerturbationField::face_dilation(Face::Right), g.boundary);
    const Eigen::VectorXd top = normal_component(PerturbationField::face_dilation(Face::Top), g.boundary);
    for (std::size_t p = 0; p < g.boundary.size(); ++p) {
        const auto& bp = g.boundary.points[p];
        CHECK(right[static_cast<Eigen::Index>(p)] == (bp.face == Face::Right ? 1.0 : 0.0));
        if (bp.face == Face::Left) {
            CHECK(top[static_cast<Eigen::Index>(p)] == 0.0);
        }
    }
    CHECK(normal_sup_norm(PerturbationField::face_dilation(Face::Right), g.boundary) == 1.0);
}

TEST_CASE("sampled normal traces pass through unchanged") {
    const Grid g = build_grid(disjoint_square(9));
    Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(g.boundary.size()), -1.0, 2.0);
    CHECK(normal_component(PerturbationField::samples(v), g.boundary) == v);
    CHECK(normal_sup_norm(PerturbationField::samples(v), g.boundary) == 2.0);
    try {
        (void)normal_component(PerturbationField::samples(Eigen::VectorXd::Ones(5)), g.boundary);
        FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimensionMismatch);
    }
}

TEST_CASE("boundary points run counter-clockwise from the bottom face") {
    const Grid g = build_grid(disjoint_square(5));
    REQUIRE(g.boundary.size() == 20);
    CHECK(g.boundary.points.front().face == Face::Bottom);
    CHECK(g.boundary.points[5].face == Face::Right);
    CHECK(g.boundary.points[10].face == Face::Top);
    CHECK(g.boundary.points[15].face == Face::Left);
    for (std::size_t p = 1; p < g.boundary.size(); ++p) {
        CHECK(g.boundary.points[p].arc > g.boundary.points[p - 1].arc);
    }
}

TEST_CASE("cell overlap masks are fractional at region edges") {
    DomainSpec s = disjoint_square(9);
    s.omega = AxisRect{0.05, 0.45, 0.1, 0.9};
    const Grid g = build_grid(s, MaskRule::CellOverlap);
    CHECK(g.omega_mask.maxCoeff() == doctest::Approx(1.0));
    const double area = g.omega_mask.sum() * g.cell_area();
    CHECK(area == doctest::Approx(0.4 * 0.8).epsilon(1e-12));
}
