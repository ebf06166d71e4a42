"""Range-view and bird's-eye grids, cell transfer, range-image bytes."""
import numpy as np
import pytest

from mvfuse.dataio import PointCloud
from mvfuse.errors import DataError
from mvfuse.projection import (
    BEVConfig,
    EMPTY_CELL,
    RVConfig,
    azimuth_column,
    build_range_image,
    gather_cell_scores_to_points,
    project_bev,
    project_rv,
    read_range_image,
    scatter_scores_to_cells,
    write_range_image,
)


def _cloud(rows):
    return PointCloud(np.asarray(rows, dtype=np.float64))


RV = RVConfig.from_degrees(height=64, width=2048)


class TestAzimuthColumn:
    def test_forward_axis_maps_to_the_image_center(self):
        idx = project_rv(_cloud([[10.0, 0.0, 0.0, 0.0]]), RV)
        assert idx.cols[0] == 1024

    def test_left_axis_maps_to_the_quarter_column(self):
        idx = project_rv(_cloud([[0.0, 10.0, 0.0, 0.0]]), RV)
        assert idx.cols[0] == 512

    def test_full_turn_is_periodic(self):
        rng = np.random.default_rng(0)
        yaw = rng.uniform(-np.pi, np.pi, 500)
        shifted = np.mod(yaw + np.pi, 2.0 * np.pi) - np.pi  # same angle re-wrapped
        np.testing.assert_array_equal(
            azimuth_column(yaw, 2048), azimuth_column(shifted, 2048)
        )

    def test_columns_cover_the_grid(self):
        yaw = np.linspace(-np.pi, np.pi, 10_000)
        cols = azimuth_column(yaw, 64)
        assert cols.min() == 0
        assert cols.max() == 63


class TestRangeView:
    def test_formula_recomputation_matches(self, make_cloud):
        cloud = make_cloud(400, seed=1, spread=30.0)
        idx = project_rv(cloud, RV)
        xyz = cloud.xyz
        rng = np.linalg.norm(xyz, axis=1)
        for i in range(cloud.n):
            if rng[i] == 0.0:
                assert not idx.in_bounds[i]
                continue
            yaw = np.arctan2(xyz[i, 1], xyz[i, 0])
            col = int(np.clip(np.floor(0.5 * (1.0 - yaw / np.pi) * 2048), 0, 2047))
            pitch = np.arcsin(xyz[i, 2] / rng[i])
            v = (pitch - RV.fov_down) / (RV.fov_up - RV.fov_down)
            row = int(np.clip(np.floor((1.0 - v) * 64), 0, 63))
            assert idx.cols[i] == col
            assert idx.rows[i] == row

    def test_closer_point_wins_the_cell(self):
        # same direction, ranges 5 and 3
        cloud = _cloud([[5.0, 0.0, 0.0, 0.0], [3.0, 0.0, 0.0, 0.0]])
        idx = project_rv(cloud, RV)
        r, c = idx.rows[0], idx.cols[0]
        assert (idx.rows[1], idx.cols[1]) == (r, c)
        assert idx.representative[r, c] == 1

    def test_representative_is_always_the_minimum_range(self, make_cloud):
        cloud = make_cloud(600, seed=2, spread=15.0)
        idx = project_rv(cloud, RV)
        depth = idx.depth
        for r, c in zip(*np.nonzero(idx.occupancy())):
            members = np.nonzero(
                (idx.rows == r) & (idx.cols == c) & idx.in_bounds
            )[0]
            rep = idx.representative[r, c]
            assert rep in members
            assert depth[rep] == depth[members].min()

    def test_origin_point_is_out_of_bounds(self):
        idx = project_rv(_cloud([[0.0, 0.0, 0.0, 0.9]]), RV)
        assert not idx.in_bounds[0]
        assert idx.rows[0] == EMPTY_CELL
        assert idx.cols[0] == EMPTY_CELL

    def test_cylindrical_rows_follow_height(self):
        cfg = RVConfig(height=10, width=16, mode="cylindrical", z_min=0.0, z_max=10.0)
        cloud = _cloud([[1.0, 0.0, 9.5, 0.0], [1.0, 0.0, 0.5, 0.0]])
        idx = project_rv(cloud, cfg)
        assert idx.rows[0] == 0   # top of the band renders at the top row
        assert idx.rows[1] == 9

    def test_config_validation(self):
        with pytest.raises(ValueError, match="positive"):
            RVConfig(height=0, width=10).validate()
        with pytest.raises(ValueError, match="mode"):
            RVConfig(height=4, width=4, mode="conical").validate()
        with pytest.raises(ValueError, match="fov_up"):
            RVConfig.from_degrees(4, 4, fov_up=-10.0, fov_down=3.0).validate()


BEV = BEVConfig(r_bins=480, theta_bins=360, r_max=50.0)


class TestBirdsEyeView:
    def test_three_four_five_lands_in_ring_48(self):
        idx = project_bev(_cloud([[3.0, 4.0, 0.0, 0.0]]), BEV)
        assert idx.rows[0] == 48

    def test_radius_at_the_rim_is_out_of_bounds(self):
        idx = project_bev(_cloud([[50.0, 0.0, 0.0, 0.0]]), BEV)
        assert not idx.in_bounds[0]

    def test_angle_just_under_a_full_turn_fills_the_last_sector(self):
        theta = 2.0 * np.pi - 1e-9
        pt = [10.0 * np.cos(theta), 10.0 * np.sin(theta), 0.0, 0.0]
        idx = project_bev(_cloud([pt]), BEV)
        assert idx.cols[0] == 359

    def test_zero_azimuth_starts_sector_zero(self):
        idx = project_bev(_cloud([[10.0, 0.0, 0.0, 0.0]]), BEV)
        assert idx.cols[0] == 0

    def test_height_band_is_half_open(self):
        cfg = BEVConfig(r_bins=4, theta_bins=4, r_max=10.0, z_min=-1.0, z_max=1.0)
        below = project_bev(_cloud([[1.0, 0.0, -1.0, 0.0]]), cfg)
        at_top = project_bev(_cloud([[1.0, 0.0, 1.0, 0.0]]), cfg)
        assert below.in_bounds[0]
        assert not at_top.in_bounds[0]

    def test_representative_minimizes_planar_radius(self, make_cloud):
        cloud = make_cloud(500, seed=3, spread=20.0)
        idx = project_bev(cloud, BEV)
        for r, c in zip(*np.nonzero(idx.occupancy())):
            members = np.nonzero(
                (idx.rows == r) & (idx.cols == c) & idx.in_bounds
            )[0]
            rep = idx.representative[r, c]
            assert idx.depth[rep] == idx.depth[members].min()

    def test_config_validation(self):
        with pytest.raises(ValueError, match="positive"):
            BEVConfig(r_bins=0, theta_bins=4, r_max=10.0).validate()
        with pytest.raises(ValueError, match="r_max"):
            BEVConfig(r_bins=4, theta_bins=4, r_max=0.0).validate()
        with pytest.raises(ValueError, match="z_max"):
            BEVConfig(r_bins=4, theta_bins=4, r_max=10.0, z_min=1.0, z_max=1.0).validate()


class TestCellTransfer:
    def test_cell_scores_broadcast_to_every_member_point(self):
        cloud = _cloud([
            [5.0, 0.0, 0.0, 0.0],
            [5.1, 0.0, 0.0, 0.0],
            [4.9, 0.0, 0.0, 0.0],
        ])
        cfg = BEVConfig(r_bins=2, theta_bins=2, r_max=20.0)
        idx = project_bev(cloud, cfg)
        cell_scores = np.zeros((2, 2, 2))
        cell_scores[idx.rows[0], idx.cols[0]] = [0.9, 0.1]
        out = gather_cell_scores_to_points(cell_scores, idx)
        np.testing.assert_allclose(out, [[0.9, 0.1]] * 3)

    def test_out_of_bounds_points_get_the_uniform_row(self):
        cfg = BEVConfig(r_bins=4, theta_bins=4, r_max=10.0)
        idx = project_bev(_cloud([[99.0, 0.0, 0.0, 0.0]]), cfg)
        out = gather_cell_scores_to_points(np.zeros((4, 4, 4)), idx)
        np.testing.assert_allclose(out[0], [0.25, 0.25, 0.25, 0.25])

    def test_representatives_round_trip_their_own_scores(self, make_cloud, make_scores):
        cloud = make_cloud(200, seed=4, spread=12.0)
        idx = project_bev(cloud, BEVConfig(r_bins=32, theta_bins=32, r_max=25.0))
        scores = make_scores(200, 3, seed=5)
        cells = scatter_scores_to_cells(scores, idx)
        back = gather_cell_scores_to_points(cells, idx)
        reps = idx.representative[idx.occupancy()]
        np.testing.assert_allclose(back[reps], scores[reps], atol=0)

    def test_empty_cells_scatter_as_uniform(self):
        idx = project_bev(_cloud([[1.0, 0.0, 0.0, 0.0]]), BEVConfig(2, 2, 10.0))
        cells = scatter_scores_to_cells(np.array([[1.0, 0.0]]), idx)
        empties = ~idx.occupancy()
        np.testing.assert_allclose(cells[empties], 0.5)

    def test_shape_validation(self):
        idx = project_bev(_cloud([[1.0, 0.0, 0.0, 0.0]]), BEVConfig(2, 2, 10.0))
        with pytest.raises(ValueError, match="do not match"):
            gather_cell_scores_to_points(np.zeros((3, 2, 4)), idx)
        with pytest.raises(ValueError, match="do not match"):
            scatter_scores_to_cells(np.zeros((5, 4)), idx)


class TestRangeImage:
    def test_channels_carry_the_representative_point(self):
        cloud = _cloud([[5.0, 0.0, 0.0, 0.7], [3.0, 0.0, 0.0, 0.2]])
        idx = project_rv(cloud, RV)
        img = build_range_image(cloud, idx)
        r, c = idx.rows[1], idx.cols[1]
        np.testing.assert_allclose(img[r, c], [3.0, 0.0, 0.0, 0.2, 3.0, 1.0])

    def test_empty_cells_are_all_zero(self):
        cloud = _cloud([[5.0, 0.0, 0.0, 0.7]])
        idx = project_rv(cloud, RV)
        img = build_range_image(cloud, idx)
        assert img.shape == (64, 2048, 6)
        assert img[..., 5].sum() == 1.0
        assert np.count_nonzero(img) == np.count_nonzero(img[idx.rows[0], idx.cols[0]])

    def test_round_trip_is_byte_identical(self, make_cloud):
        cloud = make_cloud(300, seed=6)
        cfg = RVConfig.from_degrees(height=16, width=128)
        img = build_range_image(cloud, project_rv(cloud, cfg))
        first = write_range_image(img)
        again = write_range_image(read_range_image(first))
        assert first == again

    def test_header_validation(self):
        img = np.zeros((2, 3, 6))
        data = write_range_image(img)
        with pytest.raises(DataError, match="magic"):
            read_range_image(b"NOPE" + data[4:])
        with pytest.raises(DataError, match="length"):
            read_range_image(data[:-4])
        with pytest.raises(DataError, match="header"):
            read_range_image(b"\x00" * 4)
