"""Finite-difference checks for every hand-derived gradient path."""

import copy

import numpy as np
import pytest

from affground import heads, losses
from affground.affinity import ObjectAffinity
from affground.part_discovery import PartSelection
from affground.pixel_discovery import PART_LEVEL, PixelSets

from oracles import fd_grad, rel_err


def aff(m):
    m = np.asarray(m, dtype=np.float64)
    return ObjectAffinity(map=m, raw=m, view="ego")


def proto_fixture(rng, n_inst=2, h=3, w=3, d=4, reliable=False):
    """Feature tensors plus frozen masks for a proto-loss closure."""
    feats = {}
    masks = []
    for b in range(n_inst):
        feats[(b, "ego")] = rng.standard_normal((h, w, d))
        feats[(b, "exo0")] = rng.standard_normal((h, w, d))
        if reliable:
            sel = PartSelection(reliable=True, prototype=np.ones(d),
                                part_map_ego=rng.random((h, w)),
                                part_map_exo=[rng.random((h, w))])
        else:
            sel = PartSelection(reliable=False)
        masks.append({
            "a_ego": aff(rng.random((h, w))),
            "a_exo": [aff(rng.random((h, w)))],
            "sel": sel,
            "cam_ego": rng.random((h, w)),
            "cam_exo": [rng.random((h, w))],
            "label": int(rng.integers(0, 2)),
        })
    return feats, masks


def build_packs(feats, masks):
    packs = []
    for b, m in enumerate(masks):
        packs.append(losses.build_pack(
            feats[(b, "ego")], [feats[(b, "exo0")]], m["a_ego"], m["a_exo"],
            m["sel"], m["cam_ego"], m["cam_exo"], m["label"], index=b))
    return packs


class TestProtoLossGradient:
    @pytest.mark.parametrize("reliable", [False, True])
    def test_matches_finite_differences(self, rng, reliable):
        feats, masks = proto_fixture(rng, reliable=reliable)
        _, grads, _ = losses.proto_loss_and_grads(
            build_packs(feats, masks), tau=0.5)
        for key in feats:
            f = lambda: losses.proto_loss(build_packs(feats, masks), 0.5)
            num = fd_grad(f, feats[key])
            assert rel_err(grads[key], num) < 1e-6


class TestPixelLossGradient:
    def test_matches_finite_differences(self, rng):
        feats = rng.standard_normal((4, 4, 5))
        pos = rng.random((4, 4)) > 0.5
        pos[0, 0] = True
        sets = PixelSets(positives=pos, negatives=~pos, mode=PART_LEVEL)
        _, grad = losses.pixel_loss_and_grad(feats, sets, 0.5)
        f = lambda: losses.pixel_loss_and_grad(feats, sets, 0.5)[0]
        num = fd_grad(f, feats)
        assert rel_err(grad, num) < 1e-6

    def test_nonpartition_sets_also_differentiable(self, rng):
        feats = rng.standard_normal((3, 3, 4))
        pos = np.zeros((3, 3), dtype=bool)
        neg = np.zeros((3, 3), dtype=bool)
        pos[0, 0] = pos[1, 1] = True
        neg[2, 2] = True
        sets = PixelSets(positives=pos, negatives=neg, mode=PART_LEVEL,
                         subsampled=True)
        _, grad = losses.pixel_loss_and_grad(feats, sets, 0.5)
        f = lambda: losses.pixel_loss_and_grad(feats, sets, 0.5)[0]
        assert rel_err(grad, fd_grad(f, feats)) < 1e-6


class TestClassificationGradient:
    def test_matches_finite_differences(self, rng):
        logits_ego = rng.standard_normal(5)
        logits_exo = [rng.standard_normal(5), rng.standard_normal(5)]
        _, grads = losses.classification_loss_and_grads(logits_ego, logits_exo, 2)
        all_logits = [logits_ego] + logits_exo
        for v, g in zip(all_logits, grads):
            f = lambda: losses.classification_loss_and_grads(
                logits_ego, logits_exo, 2)[0]
            assert rel_err(g, fd_grad(f, v)) < 1e-5


class TestHeadsBackward:
    def test_full_chain_matches_finite_differences(self, rng):
        h = w = 3
        d, dp, n_cls = 4, 4, 2
        params = heads.init_params(0, d, dp, n_cls)
        feats_ego = rng.standard_normal((h, w, d))
        feats_exo = rng.standard_normal((h, w, d))
        label = 1
        a_ego = aff(rng.random((h, w)))
        a_exo = [aff(rng.random((h, w)))]
        sel = PartSelection(reliable=False)
        pos = rng.random((h, w)) > 0.5
        pos[0, 0] = True
        sets = PixelSets(positives=pos, negatives=~pos, mode=PART_LEVEL)
        # pseudo-labels frozen at the base parameter point
        base_ego = heads.forward(feats_ego, label, params)
        base_exo = heads.forward(feats_exo, label, params)
        cam_ego = base_ego.cam_target.copy()
        cam_exo = [base_exo.cam_target.copy()]

        def total():
            o_ego = heads.forward(feats_ego, label, params)
            o_exo = heads.forward(feats_exo, label, params)
            pack = losses.build_pack(
                o_ego.proto_feats, [o_exo.proto_feats], a_ego, a_exo, sel,
                cam_ego, cam_exo, label, index=0)
            proto = losses.proto_loss([pack], 0.5)
            pix, _ = losses.pixel_loss_and_grad(o_ego.pixel_feats, sets, 0.5)
            ce, _ = losses.classification_loss_and_grads(
                o_ego.logits, [o_exo.logits], label)
            return ce + proto + pix

        o_ego = heads.forward(feats_ego, label, params)
        o_exo = heads.forward(feats_exo, label, params)
        pack = losses.build_pack(
            o_ego.proto_feats, [o_exo.proto_feats], a_ego, a_exo, sel,
            cam_ego, cam_exo, label, index=0)
        _, pgrads, _ = losses.proto_loss_and_grads([pack], 0.5)
        _, dpix = losses.pixel_loss_and_grad(o_ego.pixel_feats, sets, 0.5)
        _, ce_grads = losses.classification_loss_and_grads(
            o_ego.logits, [o_exo.logits], label)
        grads = heads.zero_grads(params)
        heads.accumulate_grads(grads, heads.backward(
            o_ego, params, pgrads.get((0, "ego")), dpix, ce_grads[0]))
        heads.accumulate_grads(grads, heads.backward(
            o_exo, params, pgrads.get((0, "exo0")), None, ce_grads[1]))

        for name in heads.PARAM_NAMES:
            num = fd_grad(total, getattr(params, name), step=1e-5)
            err = rel_err(grads[name], num)
            assert err < 1e-5, f"{name}: rel err {err}"


class TestSgdStep:
    def test_zero_grads_zero_decay_no_change(self):
        params = heads.init_params(0, 3, 3, 2)
        state = heads.OptState.fresh(params)
        before = {n: t.copy() for n, t in params.tensors().items()}
        zero = {n: np.zeros_like(t) for n, t in params.tensors().items()}
        heads.sgd_step(params, zero, lr=0.1, weight_decay=0.0, momentum=0.9,
                       state=state)
        for n, t in params.tensors().items():
            assert np.array_equal(t, before[n])

    def test_quadratic_trajectory_matches_recursion(self):
        # gradient of 0.5*||p||^2 is p itself: closed-form recursion check
        params = heads.init_params(3, 3, 3, 2)
        state = heads.OptState.fresh(params)
        lr, wd, mu = 0.1, 0.01, 0.9
        expect = {n: t.copy() for n, t in params.tensors().items()}
        vel = {n: np.zeros_like(t) for n, t in params.tensors().items()}
        for _ in range(3):
            grads = {n: t.copy() for n, t in params.tensors().items()}
            heads.sgd_step(params, grads, lr, wd, mu, state)
            for n in expect:
                vel[n] = mu * vel[n] + expect[n]
                expect[n] = expect[n] - lr * (vel[n] + wd * expect[n])
        for n, t in params.tensors().items():
            np.testing.assert_allclose(t, expect[n], atol=1e-12)

    def test_nonfinite_gradient_rejects_whole_step(self):
        from affground.errors import NumericError
        params = heads.init_params(1, 3, 3, 2)
        state = heads.OptState.fresh(params)
        before = {n: t.copy() for n, t in params.tensors().items()}
        grads = {n: np.ones_like(t) for n, t in params.tensors().items()}
        grads["w2"][0, 0, 0, 0] = np.nan
        with pytest.raises(NumericError):
            heads.sgd_step(params, grads, 0.1, 0.0, 0.9, state)
        for n, t in params.tensors().items():
            assert np.array_equal(t, before[n]), "step must not partially apply"
        assert all(not v.any() for v in state.velocity.values())
