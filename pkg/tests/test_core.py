import numpy as np
import pytest

from groundflow.core import (
    CameraModel,
    GroundGrid,
    Heatmap,
    OffsetField,
    Trajectory,
    homography_from_calib,
    project_point,
)
from groundflow.errors import PointAtInfinity, SingularHomography


class TestGroundGrid:
    def test_shape_and_defaults(self):
        g = GroundGrid(180, 80)
        assert g.shape == (80, 180)
        assert g.cell_size_m == 0.20

    @pytest.mark.parametrize("w,h,cell", [(0, 4, 0.2), (4, 0, 0.2), (4, 4, 0.0), (4, 4, -1.0)])
    def test_rejects_bad_dimensions(self, w, h, cell):
        with pytest.raises(ValueError):
            GroundGrid(w, h, cell)


class TestHeatmap:
    def test_accepts_unit_range(self):
        g = GroundGrid(3, 2)
        hm = Heatmap(g, [[0.0, 0.5, 1.0], [0.2, 0.0, 0.9]])
        assert hm.values.shape == (2, 3)
        assert not hm.values.flags.writeable

    @pytest.mark.parametrize("bad", [-0.01, 1.01, np.nan, np.inf])
    def test_rejects_out_of_range(self, bad):
        g = GroundGrid(2, 2)
        vals = np.zeros((2, 2))
        vals[0, 1] = bad
        with pytest.raises(ValueError):
            Heatmap(g, vals)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            Heatmap(GroundGrid(3, 3), np.zeros((2, 2)))


class TestOffsetField:
    def test_rejects_nonfinite(self):
        g = GroundGrid(2, 2)
        bad = np.zeros((2, 2))
        bad[1, 1] = np.inf
        with pytest.raises(ValueError):
            OffsetField(g, bad, np.zeros((2, 2)))

    def test_zeros(self):
        f = OffsetField.zeros(GroundGrid(4, 3))
        assert f.dx.shape == (3, 4)
        assert np.all(f.dx == 0) and np.all(f.dy == 0)


class TestTrajectory:
    def test_strictly_increasing_required(self):
        Trajectory(0, [(0, 1.0, 1.0), (1, 2.0, 2.0)])
        with pytest.raises(ValueError):
            Trajectory(0, [(0, 1.0, 1.0), (0, 2.0, 2.0)])
        with pytest.raises(ValueError):
            Trajectory(0, [(2, 1.0, 1.0), (1, 2.0, 2.0)])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Trajectory(0, [])


class TestHomography:
    def test_identity_case(self):
        H = homography_from_calib(np.eye(3), np.eye(3), (0, 0, 1))
        assert np.allclose(H, np.eye(3))

    def test_pure_scaling(self):
        H = homography_from_calib(np.diag([2.0, 2.0, 1.0]), np.eye(3), (0, 0, 1))
        assert np.allclose(H, np.diag([2.0, 2.0, 1.0]))

    def test_singular_rejected(self):
        with pytest.raises(SingularHomography):
            homography_from_calib(np.eye(3), np.eye(3), (0, 0, 0))

    def test_round_trip_oracle(self):
        # project ground->image->ground must return the input on random
        # well-conditioned calibrations
        rng = np.random.default_rng(42)
        for _ in range(10):
            K = np.array([[500 + 100 * rng.random(), 0, 320],
                          [0, 500 + 100 * rng.random(), 240],
                          [0, 0, 1.0]])
            angle = 0.3 * rng.standard_normal()
            c, s = np.cos(angle), np.sin(angle)
            R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]]) @ np.array(
                [[1, 0, 0], [0, np.cos(0.9), -np.sin(0.9)], [0, np.sin(0.9), np.cos(0.9)]])
            t = np.array([rng.standard_normal(), rng.standard_normal(), 3.0 + rng.random()])
            cam = CameraModel(K, R, t)
            worst = 0.0
            for _ in range(100):
                p = (20 * rng.random(), 20 * rng.random())
                q = cam.image_to_ground(cam.ground_to_image(p))
                worst = max(worst, abs(q[0] - p[0]), abs(q[1] - p[1]))
            assert worst < 1e-9


class TestProjectPoint:
    def test_identity(self):
        assert project_point(np.eye(3), (3.5, 2.0)) == (3.5, 2.0)

    def test_scaling(self):
        assert project_point(np.diag([2.0, 2.0, 1.0]), (1, 1)) == (2.0, 2.0)

    def test_translation_by_hand(self):
        H = np.array([[1.0, 0, 5], [0, 1.0, 0], [0, 0, 1.0]])
        assert project_point(H, (0, 0)) == (5.0, 0.0)

    def test_point_at_infinity(self):
        H = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 0]])  # z row kills (0, y)
        with pytest.raises(PointAtInfinity):
            project_point(H, (0.0, 1.0))
