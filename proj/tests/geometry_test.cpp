#include "misfit/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace misfit {
namespace {

TEST(BuildGridTest, SquareCounts) {
  const Grid g = build_grid({Shape::square, 1.0}, 2.0, 0.5);
  EXPECT_EQ(g.n_axial(), 8);
  EXPECT_EQ(g.n_cross(), 4);
  EXPECT_EQ(g.cell_count(), 128u);
}

TEST(BuildGridTest, DiskCountMatchesEnumeration) {
  const Grid g = build_grid({Shape::disk, 1.0}, 1.0, 0.25);
  // Enumerate 0.25-cells of [-1, 1]^2 with centre inside the unit disk.
  int per_layer = 0;
  for (int j = 0; j < 8; ++j) {
    for (int k = 0; k < 8; ++k) {
      const double x = -1.0 + 0.125 + 0.25 * j;
      const double y = -1.0 + 0.125 + 0.25 * k;
      if (x * x + y * y < 1.0) ++per_layer;
    }
  }
  EXPECT_EQ(g.cross_cell_count(), per_layer);
  EXPECT_NEAR(per_layer, std::numbers::pi / 0.0625, 2.0 * 8.0);
  EXPECT_EQ(g.cell_count(), static_cast<std::size_t>(per_layer * g.n_axial()));
}

TEST(BuildGridTest, RejectsBadSpacing) {
  EXPECT_THROW(build_grid({Shape::square, 1.0}, 2.0, 0.3), InvalidArgument);
  EXPECT_THROW(build_grid({Shape::square, 1.0}, 1.0, 0.6), InvalidArgument);
  EXPECT_THROW(build_grid({Shape::disk, 0.4}, 1.0, 0.25), InvalidArgument);
}

TEST(BuildGridTest, InterfaceIsGridPlane) {
  const Grid g = build_grid({Shape::disk, 1.0}, 1.5, 0.25);
  EXPECT_EQ(g.axial_coordinate(g.interface_layer()), 0.0);
}

TEST(BuildGridTest, MaskIsPointSymmetric) {
  for (Shape shape : {Shape::disk, Shape::square}) {
    const Grid g = build_grid({shape, 1.0}, 1.0, 0.125);
    const int n = g.n_cross();
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k) EXPECT_EQ(g.cross_masked(j, k), g.cross_masked(n - 1 - j, n - 1 - k));
    }
  }
}

TEST(BuildGridTest, MaskedCellsHaveActiveNodes) {
  const Grid g = build_grid({Shape::disk, 1.0}, 1.0, 0.25);
  for (const Cell& c : g.cells()) {
    for (int node : c.nodes) EXPECT_TRUE(g.node_active(node));
  }
}

TEST(RasterizeTest, CircleFaceCount) {
  const Grid g = build_grid({Shape::disk, 1.0}, 1.0, 0.125);
  const DislocationSpec d = rasterize_dislocation(circle_polygon({0, 0}, 0.5), g, Vec3::UnitX());
  // independent count: face centres strictly inside the circle
  int expected = 0;
  for (int j = 0; j < 16; ++j) {
    for (int k = 0; k < 16; ++k) {
      const double x = -1.0 + 0.0625 + 0.125 * j;
      const double y = -1.0 + 0.0625 + 0.125 * k;
      if (x * x + y * y < 0.25) ++expected;
    }
  }
  EXPECT_EQ(static_cast<int>(d.faces.size()), expected);
  const double area = std::numbers::pi * 0.25 / (0.125 * 0.125);
  EXPECT_NEAR(static_cast<double>(d.faces.size()), area, 0.08 * area);
}

TEST(RasterizeTest, AlignedSquareGivesExactTiling) {
  const Grid g = build_grid({Shape::square, 1.0}, 1.0, 0.25);
  const DislocationSpec d = rasterize_dislocation(square_polygon({0, 0}, 0.5), g, Vec3::UnitY());
  EXPECT_EQ(d.faces.size(), 16u);
  EXPECT_TRUE(d.warning.empty());
}

TEST(RasterizeTest, DegeneratePolygonWarns) {
  const Grid g = build_grid({Shape::square, 1.0}, 1.0, 0.25);
  const DislocationSpec d = rasterize_dislocation(square_polygon({0.1, 0.1}, 0.1), g, Vec3::UnitY());
  EXPECT_TRUE(d.faces.empty());
  EXPECT_FALSE(d.warning.empty());
}

TEST(RasterizeTest, TieCountsAsInside) {
  const Grid g = build_grid({Shape::square, 1.0}, 1.0, 0.25);
  // polygon edge passes exactly through face centres at x2 = 0.125
  const Polygon poly{{-0.375, -0.375}, {0.125, -0.375}, {0.125, 0.375}, {-0.375, 0.375}};
  const DislocationSpec d = rasterize_dislocation(poly, g, Vec3::UnitY());
  EXPECT_EQ(d.faces.size(), 12u);
}

TEST(RasterizeTest, RejectsBoundaryContactAndSelfIntersection) {
  const Grid g = build_grid({Shape::square, 1.0}, 1.0, 0.25);
  EXPECT_THROW(rasterize_dislocation(square_polygon({0, 0}, 1.0), g, Vec3::UnitY()), InvalidArgument);
  const Polygon bowtie{{-0.5, -0.5}, {0.5, 0.5}, {0.5, -0.5}, {-0.5, 0.5}};
  EXPECT_THROW(rasterize_dislocation(bowtie, g, Vec3::UnitY()), InvalidArgument);
}

TEST(RasterizeTest, AreaConvergesAtFirstOrder) {
  const Polygon poly = circle_polygon({0.05, -0.1}, 0.55, 512);
  const double area = polygon_area(poly);
  for (double a : {1.0 / 8, 1.0 / 16, 1.0 / 32}) {
    const Grid g = build_grid({Shape::disk, 1.0}, 0.25, a);
    const DislocationSpec d = rasterize_dislocation(poly, g, Vec3::UnitY());
    const double err = std::abs(d.faces.size() * a * a - area);
    EXPECT_LE(err, 4.0 * a);
  }
}

TEST(JumpSetTest, RejectsOverlap) {
  const Grid g = build_grid({Shape::square, 1.0}, 1.0, 0.25);
  auto a = rasterize_dislocation(square_polygon({0, 0}, 0.5), g, Vec3::UnitY(), "a");
  auto b = rasterize_dislocation(square_polygon({0.25, 0}, 0.5), g, Vec3::UnitZ(), "b");
  EXPECT_THROW(JumpSet(g, {a, b}), InvalidArgument);
  const JumpSet ok(g, {a});
  EXPECT_EQ(ok.owner(4, 4), 0);
  EXPECT_EQ(ok.owner(0, 0), -1);
}

TEST(LoopTest, RectangularLoopIsClosedEdgePath) {
  const LatticeLoop loop = rectangular_loop(2, 6, 1, 5, 3);
  EXPECT_EQ(loop.front(), loop.back());
  for (std::size_t e = 0; e + 1 < loop.size(); ++e) {
    int steps = 0;
    for (int d = 0; d < 3; ++d) steps += std::abs(loop[e][d] - loop[e + 1][d]);
    EXPECT_EQ(steps, 1);
  }
  const LatticeLoop twice = concatenate(loop, loop);
  EXPECT_EQ(twice.size(), 2 * loop.size() - 1);
}

}  // namespace
}  // namespace misfit
