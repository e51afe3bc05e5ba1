"""Mesh construction, covariate attachment, and trap-mesh distances."""

import numpy as np
import pytest
import shapely

from openscr.errors import ValidationError
from openscr.mesh import (
    RasterCovariate,
    attach_categorical,
    attach_salinity,
    build_mesh,
    distance_matrix,
)
from openscr.survey import TrapArray

from _synth import grid_traps

KM = 1000.0


def square(x0, y0, x1, y1):
    return shapely.box(x0 * KM, y0 * KM, x1 * KM, y1 * KM)


class TestBuildMesh:
    def test_two_by_two_square(self):
        mesh = build_mesh(square(0, 0, 2, 2), buffer_km=0, spacing_km=1)
        assert mesh.n_points == 4
        assert mesh.cell_area == 1.0
        assert mesh.total_area == 4.0

    def test_land_removes_north_half(self):
        mesh = build_mesh(square(0, 0, 2, 2), land=square(0, 1, 2, 2),
                          buffer_km=0, spacing_km=1)
        assert mesh.n_points == 2
        assert np.all(mesh.xy[:, 1] == 500.0)

    def test_one_km_buffer_gives_four_by_four(self):
        # dilating the 2 km square by 1 km admits 16 centers at 1 km spacing:
        # the corner centers are ~0.71 km from the square, inside the buffer
        mesh = build_mesh(square(0, 0, 2, 2), buffer_km=1, spacing_km=1)
        assert mesh.n_points == 16

    def test_empty_mesh_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            build_mesh(square(0, 0, 2, 2), land=square(-1, -1, 3, 3),
                       buffer_km=0, spacing_km=1)

    def test_land_order_irrelevant(self):
        land_a = [square(0, 1, 2, 2), square(0, 0, 1, 1)]
        mesh_ab = build_mesh(square(0, 0, 2, 2), land=land_a, spacing_km=1)
        mesh_ba = build_mesh(square(0, 0, 2, 2), land=land_a[::-1], spacing_km=1)
        assert mesh_ab.n_points == mesh_ba.n_points == 1
        assert np.array_equal(mesh_ab.xy, mesh_ba.xy)

    def test_km_covariates_present(self):
        mesh = build_mesh(square(0, 0, 3, 1), spacing_km=1)
        assert list(mesh.covariates.columns) == ["x", "y"]
        assert mesh.covariates["x"].tolist() == [0.5, 1.5, 2.5]


class TestAttachCategorical:
    def test_first_polygon_wins_on_boundary(self):
        mesh = build_mesh(square(0, 0, 2, 1), spacing_km=1)
        # both polygons cover the whole mesh; first listed takes every point
        both = [("a", square(0, 0, 2, 1)), ("b", square(0, 0, 2, 1))]
        tagged = attach_categorical(mesh, "stratum", both)
        assert set(tagged.covariates["stratum"]) == {"a"}

    def test_split_assignment(self):
        mesh = build_mesh(square(0, 0, 2, 1), spacing_km=1)
        tagged = attach_categorical(mesh, "stratum",
                                    [("west", square(0, 0, 1, 1)),
                                     ("east", square(1, 0, 2, 1))])
        assert tagged.covariates["stratum"].tolist() == ["west", "east"]

    def test_uncovered_point_rejected(self):
        mesh = build_mesh(square(0, 0, 2, 1), spacing_km=1)
        with pytest.raises(ValidationError, match="not covered"):
            attach_categorical(mesh, "stratum", [("west", square(0, 0, 1, 1))])


class TestAttachSalinity:
    def _mesh(self):
        return build_mesh(square(0, 0, 2, 1), spacing_km=1)

    def test_uniform_field(self):
        mesh = self._mesh()
        raster = RasterCovariate(xy=mesh.xy.copy(), values=np.full(2, 15.0))
        out = attach_salinity(mesh, raster, radius_km=5)
        assert out.covariates["avg_salinity"].tolist() == [15.0, 15.0]

    def test_mean_of_two_cells(self):
        mesh = build_mesh(square(0, 0, 1, 1), spacing_km=1)
        raster = RasterCovariate(xy=np.array([[400.0, 500.0], [600.0, 500.0]]),
                                 values=np.array([10.0, 20.0]))
        out = attach_salinity(mesh, raster, radius_km=1)
        assert out.covariates["avg_salinity"].tolist() == [15.0]

    def test_singleton_radius(self):
        mesh = build_mesh(square(0, 0, 1, 1), spacing_km=1)
        raster = RasterCovariate(xy=np.array([[450.0, 500.0], [2000.0, 500.0]]),
                                 values=np.array([12.3, 99.0]))
        out = attach_salinity(mesh, raster, radius_km=0.1)
        assert out.covariates["avg_salinity"].tolist() == [12.3]

    def test_no_coverage_rejected(self):
        mesh = self._mesh()
        raster = RasterCovariate(xy=np.array([[50000.0, 50000.0]]),
                                 values=np.array([1.0]))
        with pytest.raises(ValidationError, match="no raster coverage"):
            attach_salinity(mesh, raster, radius_km=1)

    def test_bounded_by_raster_range(self):
        rng = np.random.default_rng(3)
        mesh = build_mesh(square(0, 0, 5, 5), spacing_km=1)
        pts = rng.uniform(0, 5000, size=(200, 2))
        vals = rng.uniform(5, 30, size=200)
        out = attach_salinity(mesh, RasterCovariate(xy=pts, values=vals), radius_km=2)
        sal = out.covariates["avg_salinity"].to_numpy()
        assert sal.min() >= vals.min() and sal.max() <= vals.max()


class TestDistanceMatrix:
    def test_three_four_five(self):
        traps = TrapArray(xy=np.array([[0.0, 0.0]]), cell_size=1000.0,
                          effort=np.ones((1, 1, 1), dtype=np.int64))
        mesh = build_mesh(shapely.box(2500, 3500, 3500, 4500), spacing_km=1)
        assert np.allclose(mesh.xy, [[3000.0, 4000.0]])
        r = distance_matrix(traps, mesh)
        assert r == pytest.approx(np.array([[5000.0]]))

    def test_coincident_zero_and_translation_invariance(self):
        traps = grid_traps(2, 2, K=1, L=1)
        mesh = build_mesh(square(0, 0, 2, 2), spacing_km=1)
        r = distance_matrix(traps, mesh)
        assert np.min(r) == 0.0  # traps coincide with mesh centers

        shifted_traps = TrapArray(xy=traps.xy + 1000.0, cell_size=traps.cell_size,
                                  effort=traps.effort)
        shifted_mesh = build_mesh(square(1, 1, 3, 3), spacing_km=1)
        assert np.allclose(distance_matrix(shifted_traps, shifted_mesh), r)

    def test_triangle_inequality_on_sampled_triples(self):
        rng = np.random.default_rng(5)
        traps = TrapArray(xy=rng.uniform(0, 9000, size=(6, 2)), cell_size=1000.0,
                          effort=np.ones((6, 1, 1), dtype=np.int64))
        mesh = build_mesh(square(0, 0, 9, 9), spacing_km=1)
        r = distance_matrix(traps, mesh)
        d_tt = np.linalg.norm(traps.xy[:, None] - traps.xy[None, :], axis=2)
        for _ in range(200):
            a, b = rng.integers(6, size=2)
            m = rng.integers(mesh.n_points)
            assert r[a, m] <= d_tt[a, b] + r[b, m] + 1e-9
        assert np.all(r >= 0)
