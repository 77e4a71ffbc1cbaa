"""Finite-difference verification of every differentiable primitive and the full model.

Each check builds a scalar loss ``sum(f(inputs) * R)`` with a fixed random
readout ``R`` (so that, for example, softmax gradients are not trivially zero),
runs backward once, then compares every input gradient against central
differences. The error for one input tensor is::

    ||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, 1e-12)

over the checked coordinates. Small tensors are checked exhaustively; large ones
(embedding tables, the visual projections) on a random subset of coordinates plus
one random directional derivative that touches every entry.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad
from .decoders import AnswerSpace, hinge_loss, multichoice_scores, open_ended_logits
from .model import MHN, Batch, ModelConfig
from .pvr import add_encoder, encode_level, fuse_levels
from .rmi import MCAWeights, add_interaction_block, interaction_block, mca, recurrent_align
from .text import encode_text, init_text_params

TOLERANCE = 1e-4
STEP = 1e-6
MAX_COORDS = 64


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    coords: int
    tol: float = TOLERANCE

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tol)


@dataclass
class GradcheckReport:
    seed: int
    results: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    @property
    def max_rel_error(self):
        return max((r.max_rel_error for r in self.results), default=0.0)

    def to_dict(self):
        return {
            "seed": self.seed,
            "passed": self.passed,
            "seconds": round(self.seconds, 3),
            "tolerance": TOLERANCE,
            "checks": [{"op": r.name, "max_rel_error": r.max_rel_error, "coords": r.coords,
                        "passed": r.passed} for r in self.results],
        }

    def table(self):
        width = max([len(r.name) for r in self.results] + [2])
        lines = [f"{'op':<{width}}  {'max_rel_error':>13}  {'coords':>6}  status"]
        for r in self.results:
            lines.append(f"{r.name:<{width}}  {r.max_rel_error:>13.3e}  {r.coords:>6d}  "
                         f"{'ok' if r.passed else 'FAIL'}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: {sum(r.passed for r in self.results)}/{len(self.results)} checks "
                     f"under {TOLERANCE:g} in {self.seconds:.1f}s")
        return "\n".join(lines)


def _rel(a, n):
    a, n = np.ravel(a), np.ravel(n)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))


def check_function(name, fn, inputs, rng, tol=TOLERANCE, h=STEP, max_coords=MAX_COORDS):
    """Gradient-check ``fn(**tensors) -> Tensor`` with respect to every array in ``inputs``."""
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    probe = fn(**{k: Tensor(v) for k, v in inputs.items()})
    readout = rng.normal(size=probe.shape)

    def loss_value(arrays):
        with no_grad():
            return float((fn(**{k: Tensor(v) for k, v in arrays.items()}) * readout).data.sum())

    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in inputs.items()}
    (fn(**tensors) * readout).sum().backward()
    worst, coords = 0.0, 0
    for key, base in inputs.items():
        analytic = tensors[key].grad if tensors[key].grad is not None else np.zeros_like(base)
        flat_idx = np.arange(base.size)
        if base.size > max_coords:
            flat_idx = rng.choice(base.size, size=max_coords, replace=False)
        numeric = np.empty(len(flat_idx))
        arrays = dict(inputs)
        for j, i in enumerate(flat_idx):
            pert = base.copy().ravel()
            pert[i] += h
            arrays[key] = pert.reshape(base.shape)
            up = loss_value(arrays)
            pert[i] -= 2 * h
            arrays[key] = pert.reshape(base.shape)
            down = loss_value(arrays)
            numeric[j] = (up - down) / (2 * h)
        err = _rel(analytic.ravel()[flat_idx], numeric)
        coords += len(flat_idx)
        if base.size > max_coords:
            v = rng.normal(size=base.shape)
            arrays[key] = base + h * v
            up = loss_value(arrays)
            arrays[key] = base - h * v
            down = loss_value(arrays)
            err = max(err, _rel(np.sum(analytic * v), (up - down) / (2 * h)))
            coords += 1
        worst = max(worst, err)
    return CheckResult(name, worst, coords, tol)


# ---------------------------------------------------------------------------
# the suite
# ---------------------------------------------------------------------------


def _primitive_checks(rng):
    r = rng.normal
    away = lambda shape: np.sign(r(size=shape)) * rng.uniform(0.3, 2.0, size=shape)  # noqa: E731
    mask = np.array([[True, True, False], [True, True, True]])
    yield "add_broadcast", lambda a, b: a + b, {"a": r(size=(3, 4)), "b": r(size=(4,))}
    yield "sub", lambda a, b: a - b, {"a": r(size=(3, 4)), "b": r(size=(3, 1))}
    yield "mul_broadcast", lambda a, b: a * b, {"a": r(size=(2, 3, 4)), "b": r(size=(3, 1))}
    yield "div", lambda a, b: a / b, {"a": r(size=(3, 4)), "b": away((3, 4))}
    yield "matmul", ag.matmul, {"a": r(size=(3, 4)), "b": r(size=(4, 2))}
    yield "matmul_batched", ag.matmul, {"a": r(size=(2, 3, 4)), "b": r(size=(2, 4, 5))}
    yield "matmul_weight", ag.matmul, {"a": r(size=(2, 3, 4)), "b": r(size=(4, 5))}
    yield "getitem", lambda x: x[:, 1:3] * 1.0 + x[np.array([0, 0, 2])].sum(), {"x": r(size=(3, 4))}
    yield "reshape_transpose", lambda x: x.reshape(4, 3).transpose(1, 0).swap_last(), {"x": r(size=(3, 4))}
    yield "sum_mean", lambda x: x.sum(axis=0) + x.mean(axis=1, keepdims=True), {"x": r(size=(3, 3))}
    yield "softmax_last", ag.softmax_last, {"x": r(size=(2, 5))}
    yield "softmax_masked", lambda x: ag.softmax_last(x, mask), {"x": r(size=(2, 3))}
    yield "layer_norm", ag.layer_norm, {"x": r(size=(2, 8)), "gamma": r(size=8), "beta": r(size=8)}
    yield "gelu", ag.gelu, {"x": r(size=(3, 5)) * 2}
    yield "sigmoid", ag.sigmoid, {"x": r(size=(3, 4))}
    yield "tanh", ag.tanh, {"x": r(size=(3, 4))}
    yield "relu", ag.relu, {"x": away((3, 4))}
    yield "mean_pool_time", ag.mean_pool_time, {"x": r(size=(5, 4))}
    yield "mean_pool_masked", lambda x: ag.mean_pool_time(x, mask), {"x": r(size=(2, 3, 4))}
    yield "concat", lambda a, b: ag.concat([a, b], axis=-1), {"a": r(size=(2, 3)), "b": r(size=(2, 2))}
    yield "stack", lambda a, b: ag.stack([a, b], axis=1), {"a": r(size=(2, 3)), "b": r(size=(2, 3))}
    ids = np.array([[0, 2, 2], [1, 3, 0]])
    yield "embedding", lambda t: ag.embedding(t, ids), {"t": r(size=(4, 3))}
    targets = np.array([1, 0, 3])
    yield "cross_entropy", lambda z: ag.cross_entropy(z, targets), {"z": r(size=(3, 4))}
    yield "mse", lambda p: ag.mse(p, np.array([1.0, 2.0, -1.0])), {"p": r(size=3)}
    # scores far from the hinge kinks
    yield "hinge", lambda p: hinge_loss(p, np.array([0, 2])), {"p": np.array([[0.1, 0.4, 3.0], [0.2, -0.5, 0.0]])}


def _module_checks(rng, d=8, heads=2):
    r = rng.normal
    store = ag.ParamStore()
    init_text_params(store, rng, vocab_size=6, d=4, embed_dim=5, prefix="t")
    names = [n for n in store.names() if n.startswith("t.")]
    ids = np.array([[2, 3, 4], [5, 2, 0]])
    tmask = ids > 0

    def lstm(**kw):
        p = ag.ParamStore()
        for n in names:
            p.bind(n, kw[n.replace(".", "_")])
        return encode_text(ids, tmask, p, prefix="t")

    yield "bilstm", lstm, {n.replace(".", "_"): store[n].data for n in names}

    def mca_fn(x, q, wq, wk, wv, wo):
        return mca(x, q, MCAWeights(wq, wk, wv, wo, heads))

    w = {k: r(size=(d, d)) * 0.5 for k in ("wq", "wk", "wv", "wo")}
    yield "mca", mca_fn, {"x": r(size=(3, d)), "q": r(size=(2, d)), **w}

    block = ag.ParamStore()
    add_interaction_block(block, rng, "b", d, heads)
    _randomize(block, rng)
    bnames = block.names()

    def block_fn(x, q, **kw):
        p = ag.ParamStore()
        for n in bnames:
            p.bind(n, kw[n.replace(".", "_")])
        out = interaction_block(x, q, p, "b", heads)
        return ag.concat([out.x_hat.reshape(-1), out.q_hat.reshape(-1)], axis=0)

    yield "interaction_block", block_fn, {"x": r(size=(3, d)), "q": r(size=(2, d)),
                                         **{n.replace(".", "_"): block[n].data for n in bnames}}
    yield "recurrent_align", recurrent_align, {"x_cur": r(size=(4, d)), "x_prev_hat": r(size=(3, d)),
                                               "w1": r(size=(d, d)) * 0.5, "w2": r(size=(d, d)) * 0.5}

    enc = ag.ParamStore()
    add_encoder(enc, rng, "e", d, heads)
    _randomize(enc, rng)
    enames = enc.names()

    def enc_fn(x, **kw):
        p = ag.ParamStore()
        for n in enames:
            p.bind(n, kw[n.replace(".", "_")])
        return encode_level(x, p, "e", heads)

    yield "encode_level", enc_fn, {"x": r(size=(3, d)), **{n.replace(".", "_"): enc[n].data for n in enames}}

    def fuse_fn(q1, q2, r1, r2):
        return fuse_levels([q1, q2], [r1, r2]).o

    yield "fuse_levels", fuse_fn, {"q1": r(size=(2, d)), "q2": r(size=(2, d)),
                                   "r1": r(size=(3, d)), "r2": r(size=(5, d))}

    dec = ag.ParamStore()
    from .decoders import add_decoder
    add_decoder(dec, rng, AnswerSpace("open_ended", ["a", "b", "c"]), d)
    add_decoder(dec, rng, AnswerSpace("multi_choice", [], num_candidates=3), d, prefix="mc")

    def oe_fn(o, w1, b1, w2, b2):
        p = ag.ParamStore()
        for n, t in {"decoder.hidden.weight": w1, "decoder.hidden.bias": b1,
                     "decoder.out.weight": w2, "decoder.out.bias": b2}.items():
            p.bind(n, t)
        return open_ended_logits(o, p)

    yield "open_ended_decoder", oe_fn, {"o": r(size=(2, d)), "w1": dec["decoder.hidden.weight"].data,
                                        "b1": r(size=d), "w2": dec["decoder.out.weight"].data,
                                        "b2": r(size=3)}

    def mc_fn(oq, oa, w1, b1, w2, b2):
        p = ag.ParamStore()
        for n, t in {"mc.layer1.weight": w1, "mc.layer1.bias": b1,
                     "mc.layer2.weight": w2, "mc.layer2.bias": b2}.items():
            p.bind(n, t)
        return multichoice_scores(oq, oa, p, prefix="mc")

    yield "multichoice_decoder", mc_fn, {"oq": r(size=(2, d)), "oa": r(size=(2, 3, d)),
                                         "w1": dec["mc.layer1.weight"].data, "b1": r(size=d),
                                         "w2": dec["mc.layer2.weight"].data, "b2": r(size=1)}


def _randomize(store, rng, scale=0.3):
    """Replace zero/identity initialisations so every path carries gradient."""
    for name, t in store.items():
        if name.endswith(("gamma",)):
            t.data = 1.0 + scale * rng.normal(size=t.data.shape)
        elif name.endswith(("beta", "bias")) or not np.any(t.data):
            t.data = scale * rng.normal(size=t.data.shape)


def _model_batch(cfg, rng, batch=2, frames=4, q_len=3):
    from .sampling import gather_clip_features, sample_clip_indices, FeatureRecord

    app, mot = {}, {}
    for n in sorted(set(cfg.scales)):
        plan = sample_clip_indices(frames, cfg.T, n)
        a_rows, m_rows = [], []
        for _ in range(batch):
            rec = FeatureRecord("v", rng.normal(size=(frames, cfg.d_app)), rng.normal(size=(frames, cfg.d_mot)))
            a, m = gather_clip_features(rec, plan)
            a_rows.append(a)
            m_rows.append(m)
        app[n], mot[n] = np.stack(a_rows), np.stack(m_rows)
    ids = rng.integers(2, cfg.vocab_size, size=(batch, q_len))
    ids[1, -1] = 0
    return app, mot, ids, ids > 0


def model_check(rng, kind="open_ended", d=8, heads=2, n_levels=2, T=2, max_coords=8):
    """Check every parameter tensor of a small MHN through its task loss."""
    spaces = {"open_ended": AnswerSpace("open_ended", ["a", "b", "c"]),
              "count": AnswerSpace("count", [], count_min=1, count_max=5),
              "multi_choice": AnswerSpace("multi_choice", [], num_candidates=3)}
    cfg = ModelConfig(d=d, heads=heads, n_levels=n_levels, T=T, vocab_size=7, d_app=6, d_mot=5,
                      embed_dim=12, answer=spaces[kind])
    model = MHN(cfg, seed=int(rng.integers(1 << 30)))
    _randomize(model.params, rng, scale=0.2)
    app, mot, ids, mask = _model_batch(cfg, rng)
    target = {"open_ended": np.array([0, 2]), "count": np.array([2.0, 4.0]),
              "multi_choice": np.array([1, 0])}[kind]
    cand_ids = cand_mask = None
    if kind == "multi_choice":
        cand_ids = rng.integers(2, cfg.vocab_size, size=(2, 3, 2))
        cand_mask = np.ones_like(cand_ids, dtype=bool)
    batch = Batch(app, mot, ids, mask, target, cand_ids, cand_mask)
    names = model.params.names()

    def fn(**kw):
        for n in names:
            model.params.bind(n, kw[n])
        if kind == "multi_choice":
            # a smooth readout of the scores, so the check does not straddle hinge kinks
            return model.forward(batch)
        return model.loss(batch).reshape(1)

    originals = {n: model.params[n].data.copy() for n in names}
    result = check_function(f"mhn_{kind}", fn, originals, rng, max_coords=max_coords)
    for n in names:
        model.params.bind(n, Tensor(originals[n], requires_grad=True, name=n))
    return result


def run_gradcheck(seed=0, include_model=True):
    rng = np.random.default_rng(seed)
    report = GradcheckReport(seed)
    start = time.perf_counter()
    for name, fn, inputs in _primitive_checks(rng):
        report.results.append(check_function(name, fn, inputs, rng))
    for name, fn, inputs in _module_checks(rng):
        report.results.append(check_function(name, fn, inputs, rng))
    if include_model:
        for kind in ("open_ended", "count", "multi_choice"):
            report.results.append(model_check(rng, kind))
    report.seconds = time.perf_counter() - start
    return report
