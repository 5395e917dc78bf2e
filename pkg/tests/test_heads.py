import numpy as np
import pytest

from affground import heads
from affground.errors import DataError


def identity_trunk(params):
    """Make the two trunk convs pass features through unchanged."""
    for w in (params.w1, params.w2):
        w[:] = 0.0
        d = min(w.shape[2], w.shape[3])
        w[1, 1, :d, :d] = np.eye(d)
    params.b1[:] = 0.0
    params.b2[:] = 0.0


class TestInitParams:
    def test_same_seed_identical(self):
        a = heads.init_params(5, 8, 4, 3)
        b = heads.init_params(5, 8, 4, 3)
        for n in heads.PARAM_NAMES:
            assert np.array_equal(getattr(a, n), getattr(b, n))

    def test_different_seed_differs(self):
        a = heads.init_params(5, 8, 4, 3)
        b = heads.init_params(6, 8, 4, 3)
        assert not np.array_equal(a.w1, b.w1)

    def test_biases_zero(self):
        p = heads.init_params(0, 8, 4, 3)
        for n in ("b1", "b2", "bp", "bx", "bc"):
            assert not getattr(p, n).any()

    def test_weight_variance_tracks_fan_in(self):
        # uniform(-sqrt(6/fan), sqrt(6/fan)) has variance 2/fan
        p = heads.init_params(0, 64, 32, 4, trunk_hidden=64)
        fan = 9 * 64
        var = p.w1.var()
        assert abs(var - 2.0 / fan) / (2.0 / fan) < 0.2

    def test_trunk_hidden_widens_interior(self):
        p = heads.init_params(0, 8, 4, 3, trunk_hidden=16)
        assert p.w1.shape == (3, 3, 8, 16)
        assert p.w2.shape == (3, 3, 16, 8)


class TestForward:
    def test_zero_classifier_uniform_logits(self, rng):
        p = heads.init_params(0, 6, 4, 36)
        p.wc[:] = 0.0
        p.bc[:] = 0.0
        out = heads.forward(rng.standard_normal((4, 4, 6)), 3, p)
        np.testing.assert_allclose(out.logits, np.zeros(36), atol=1e-12)

    def test_identity_trunk_planted_direction_cam_peak(self, rng):
        d = 6
        p = heads.init_params(0, d, 4, 2)
        identity_trunk(p)
        direction = np.zeros(d)
        direction[0] = 1.0
        p.wc[:] = 0.0
        p.wc[:, 1] = direction
        p.bc[:] = 0.0
        feats = np.abs(rng.standard_normal((5, 5, d))) * 0.1
        feats[2, 3] = direction * 5.0  # planted part pixel
        out = heads.forward(feats, 1, p)
        assert np.unravel_index(np.argmax(out.cam_target), (5, 5)) == (2, 3)
        assert out.cam_target.max() == 1.0

    def test_logits_equal_spatial_mean_of_cam(self, rng):
        p = heads.init_params(1, 6, 4, 3)
        out = heads.forward(rng.standard_normal((4, 5, 6)), 0, p)
        np.testing.assert_allclose(out.logits, out.cam_all.mean(axis=(1, 2)),
                                   atol=1e-6)

    def test_pure_function(self, rng):
        p = heads.init_params(2, 6, 4, 3)
        feats = rng.standard_normal((4, 4, 6))
        a = heads.forward(feats, 1, p)
        b = heads.forward(feats, 1, p)
        assert np.array_equal(a.proto_feats, b.proto_feats)
        assert np.array_equal(a.pixel_feats, b.pixel_feats)
        assert np.array_equal(a.logits, b.logits)

    def test_projection_shapes(self, rng):
        p = heads.init_params(0, 6, 9, 3)
        out = heads.forward(rng.standard_normal((4, 5, 6)), 2, p)
        assert out.proto_feats.shape == (4, 5, 9)
        assert out.pixel_feats.shape == (4, 5, 9)
        assert out.cam_all.shape == (3, 4, 5)
        assert out.cam_target.shape == (4, 5)

    def test_cam_target_minmaxed(self, rng):
        p = heads.init_params(3, 6, 4, 3)
        out = heads.forward(rng.standard_normal((6, 6, 6)), 1, p)
        assert out.cam_target.min() == 0.0
        assert out.cam_target.max() == 1.0


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        p = heads.init_params(4, 8, 4, 3)
        state = heads.OptState.fresh(p)
        # dirty the velocities so the round trip covers them too
        grads = {n: rng.standard_normal(t.shape) for n, t in p.tensors().items()}
        heads.sgd_step(p, grads, 0.01, 0.0005, 0.9, state)
        path = tmp_path / "ckpt"
        heads.save_checkpoint(str(path), p, state, meta={"classes": ["a", "b"]})
        p2, state2, meta = heads.load_checkpoint(str(path))
        for n in heads.PARAM_NAMES:
            assert np.array_equal(getattr(p, n), getattr(p2, n))
            assert np.array_equal(state.velocity[n], state2.velocity[n])
        assert meta["classes"] == ["a", "b"]
        assert meta["kind"] == heads.CHECKPOINT_KIND

    def test_wrong_kind_rejected(self, tmp_path):
        from affground import container
        container.write_container(tmp_path / "c", {"x": np.ones(3)},
                                  meta={"kind": "feature-cache"})
        with pytest.raises(DataError):
            heads.load_checkpoint(str(tmp_path / "c"))

    def test_missing_velocity_rejected(self, tmp_path):
        from affground import container
        p = heads.init_params(0, 4, 4, 2)
        entries = dict(p.tensors())
        container.write_container(tmp_path / "c", entries,
                                  meta={"kind": heads.CHECKPOINT_KIND})
        with pytest.raises(DataError):
            heads.load_checkpoint(str(tmp_path / "c"))
