"""Built-in consistency checks: gradients, brute-force oracles and closed-form fixtures."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .goe import SOBEL_X, SOBEL_Y, decouple_gradients, goe_forward, orientation_basis
from .hkcf import HkcfConfig, hkcf_inner, hxconv, init_params
from .losses import Box, InstanceCrop, bce_loss, dice_loss, eiou_loss, scale_aware_loss, scale_weight
from .masknms import mask_nms
from .metrics import EvalPair, map_at
from .warp import CylinderParams, WaveParams, cylinder_map, wave_map

__all__ = ["CheckResult", "run_checks", "format_table"]

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)


def _fixed(rng, shape):
    # constant weights for projecting a map to a scalar
    return T.Tensor(rng.normal(size=shape), dtype=np.float64)


def _grad_checks(rng):
    x = rng.normal(size=(2, 4, 5, 6))

    w = rng.normal(size=(6, 2, 3, 3))
    b = rng.normal(size=6)
    c_conv = _fixed(rng, (2, 6, 5, 6))
    yield "grad conv2d", lambda: T.grad_check(
        lambda x, w, b: T.sum(T.conv2d(x, w, b, padding=1, groups=2) * c_conv), [x, w, b])

    c_sm = _fixed(rng, x.shape)
    yield "grad softmax", lambda: T.grad_check(lambda x: T.sum(T.softmax_channels(x) * c_sm), [x])

    c_in = _fixed(rng, x.shape)
    yield "grad instance_norm", lambda: T.grad_check(lambda x: T.sum(T.instance_norm(x) * c_in), [x])

    lw, lb = rng.normal(size=(3, 4)), rng.normal(size=3)
    yield "grad gap/linear/sigmoid", lambda: T.grad_check(
        lambda x, w, b: T.sum(T.sigmoid(T.linear(T.reshape(T.global_avg_pool(x), (2, 4)), w, b))), [x, lw, lb])

    pred = rng.uniform(0.05, 0.95, size=(8, 8))
    gt = (rng.random((8, 8)) > 0.5).astype(float)
    yield "grad bce", lambda: T.grad_check(lambda p: bce_loss(p, gt), [pred])
    yield "grad dice", lambda: T.grad_check(lambda p: dice_loss(p, gt), [pred])

    pred2 = rng.uniform(0.05, 0.95, size=(6, 9))
    gt2 = (rng.random((6, 9)) > 0.3).astype(float)
    yield "grad scale-aware", lambda: T.grad_check(
        lambda p, q: scale_aware_loss([InstanceCrop(p, gt, 0.2), InstanceCrop(q, gt2, 0.03)]), [pred, pred2])

    img = rng.normal(size=(1, 3, 6, 7))
    c_goe = _fixed(rng, (1, 8, 6, 7))
    yield "grad goe", lambda: T.grad_check(
        lambda x, kx, ky, w: T.sum(goe_forward(x, kx, ky, w) * c_goe),
        [img, SOBEL_X, SOBEL_Y, orientation_basis(8)])

    cfg = HkcfConfig(in_channels=8, k=3)
    with T.double_precision():
        params = init_params(cfg, seed=1)
    names = ["cab_w1", "cab_b1", "cab_w2", "cab_b2", "cross_h", "cross_v"]
    feat = rng.normal(size=(1, cfg.reduced_channels, 5, 5))
    c_hk = _fixed(rng, feat.shape)
    yield "grad hkcf_inner", lambda: T.grad_check(
        lambda x, *ws: T.sum(hkcf_inner(x, dict(zip(names, ws)), cfg.k) * c_hk),
        [feat] + [params[n].data for n in names])


def _brute_conv(x, w, ph, pw):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, o, h + 2 * ph - kh + 1, wd + 2 * pw - kw + 1))
    for oc in range(o):
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                out[:, oc, i, j] = (xp[:, :, i:i + kh, j:j + kw] * w[oc]).sum(axis=(1, 2, 3))
    return out


def _brute_nms(masks, scores, t):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = []
    for rank, i in enumerate(order):
        ok = True
        for j in order[:rank]:
            inter = np.logical_and(masks[i], masks[j]).sum()
            union = np.logical_or(masks[i], masks[j]).sum()
            if union and inter / union > t:
                ok = False
        if ok:
            kept.append(i)
    return kept


def _oracle_checks(rng):
    def hx():
        err = 0.0
        for k in (3, 5, 7):
            x = rng.normal(size=(1, 2, 9, 9))
            wh, wv = rng.normal(size=(2, 2, 1, k)), rng.normal(size=(2, 2, k, 1))
            ref = _brute_conv(x, wh, 0, k // 2) + _brute_conv(x, wv, k // 2, 0)
            with T.double_precision():
                got = hxconv(x, wh, wv).data
            err = max(err, float(np.abs(got - ref).max()))
        return err

    yield "oracle hxconv", hx, 1e-6

    def nms():
        mismatches = 0
        for _ in range(20):
            n = int(rng.integers(1, 15))
            masks = []
            for _ in range(n):
                m = np.zeros((24, 24), bool)
                x0, y0 = rng.integers(0, 18, size=2)
                m[y0:y0 + rng.integers(2, 7), x0:x0 + rng.integers(2, 7)] = True
                masks.append(m)
            scores = rng.random(n).round(1).tolist()
            t = float(rng.random())
            mismatches += mask_nms(masks, scores, t) != _brute_nms(masks, scores, t)
        return float(mismatches)

    yield "oracle mask nms", nms, 0.0

    def ap():
        a = np.zeros((10, 10), bool)
        a[:3, :3] = True
        b = np.zeros((10, 10), bool)
        b[5:, 5:] = True
        return abs(map_at([EvalPair([a], [0.9], [a, b])])["map50"] - 51 / 101)

    yield "fixture AP 2-GT/1-det", ap, 1e-9


def _fixture_checks():
    yield "fixture wave map", lambda: float(np.abs(
        np.array(wave_map((25.0, 25.0), WaveParams(10, 100))) - (35.0, 25.0)).max()), 1e-3
    yield "fixture cylinder map", lambda: float(np.abs(
        np.array(cylinder_map((100.0, 50.0), CylinderParams(0.8, 2, 100))) - (100.0, 34.8353)).max()), 1e-3
    yield "fixture bce 0.5", lambda: abs(bce_loss(np.full((4, 4), 0.5), np.eye(4)).item() - math.log(2)), 1e-4

    def dice_half():
        gt = np.zeros((4, 4))
        gt[:2] = 1
        return abs(dice_loss(np.ones((4, 4)), gt).item() - 1 / 3)

    yield "fixture dice half", dice_half, 1e-6
    yield "fixture scale weight", lambda: max(abs(scale_weight(0.1) - 1 - math.log(10)),
                                                abs(scale_weight(1.0) - 1.0)), 1e-4
    yield "fixture eiou", lambda: abs(eiou_loss(Box(0, 0, 2, 2), Box(1, 0, 2, 2)) - 0.7436), 1e-4

    def sobel():
        ramp = np.tile(np.arange(7.0), (6, 1))[None, None]
        gx, gy = decouple_gradients(ramp)
        return float(max(np.abs(gx.data[0, 0, 1:-1, 1:-1] - 8).max(), np.abs(gy.data[0, 0, 1:-1, 1:-1]).max()))

    yield "fixture sobel ramp", sobel, 1e-6


def run_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    def timed(name, fn, tol):
        start = time.perf_counter()
        try:
            err = fn()
            err = float(getattr(err, "max_rel_error", err))
        except Exception:  # a crashing check counts as failed, with its name in the table
            err = math.inf
        results.append(CheckResult(name, err, tol, time.perf_counter() - start))

    for name, fn in _grad_checks(rng):
        timed(name, fn, GRAD_TOL)
    for name, fn, tol in _oracle_checks(rng):
        timed(name, fn, tol)
    for name, fn, tol in _fixture_checks():
        timed(name, fn, tol)
    return results


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'max error':>10}  {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.error:>10.3e}  {r.tol:>8.1e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
