"""Dense NumPy references for the network simulations.

No kernels, no memory model: every network is written as straight array
arithmetic over float64 values. Two flavours share the code:

* ``"bf16"`` rounds each operation result to BF16 (round to nearest even,
  subnormals kept), which the simulator must match bit for bit;
* ``"wide"`` keeps float64 throughout, to measure BF16 drift.

The BF16 rounding here works on float64 bit patterns (integer RNE at the
8-bit significand, scaled rounding below the normal range) and does not
share code with the simulator's conversion routines.
Threshold decisions are discontinuous, so the wide flavour accepts forced
spikes or events taken from a BF16 run (teacher forcing).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "rounder",
    "bits_to_float",
    "if_reference",
    "sd_reference",
    "sd_dense_reference",
    "HebbianReference",
    "eprop_reference",
    "relative_drift",
]


_DROP = 45  # float64 fraction bits below the BF16 significand
_MIN_NORMAL = 2.0 ** -126
_QUANTUM = 2.0 ** -133  # spacing of BF16 subnormals
_OVERFLOW = 2.0 ** 128


def _rne16(x) -> np.ndarray:
    x = np.array(x, dtype=np.float64, ndmin=1)
    u = x.view(np.uint64)
    half = np.uint64((1 << (_DROP - 1)) - 1)
    r = ((u + half + ((u >> np.uint64(_DROP)) & np.uint64(1))) >> np.uint64(_DROP)) << np.uint64(_DROP)
    out = r.view(np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        tiny = np.abs(x) < _MIN_NORMAL
        out = np.where(tiny, np.round(x / _QUANTUM) * _QUANTUM, out)
        out = np.where(np.abs(out) >= _OVERFLOW, np.copysign(np.inf, x), out)
    return np.where(np.isnan(x), np.nan, out)


def _wide(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def rounder(precision: str):
    """Result rounding for ``"bf16"`` or ``"wide"`` arithmetic."""
    if precision == "bf16":
        return _rne16
    if precision == "wide":
        return _wide
    raise ValueError(f"unknown precision '{precision}'")


def bits_to_float(bits) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint16).astype(np.uint32) << 16
    return b.view(np.float32).astype(np.float64)


def _quant(z, q, R):
    # ReLU, scale, round half away from zero, rescale; each op rounded
    r = R(np.maximum(z, 0.0) / q)
    r = R(np.sign(r) * np.floor(np.abs(r) + 0.5))
    return R(r * q)


def _spike_reset(v, vth, R, forced=None):
    s = (v > vth) if forced is None else forced
    s = s.astype(np.float64)
    return s, R(v - R(s * v))


def if_reference(weights, vth: float, spikes, precision: str = "bf16", forced=None):
    """Chain of IF layers; ``weights[l]`` is (n_in, n_out) for layer l+1.

    Returns ``(states, outputs)``: per step, a list of membrane vectors and a
    list of spike-index arrays per layer. ``forced[k][l]`` replaces the spike
    decision of layer l at step k.
    """
    R = rounder(precision)
    ws = [R(np.asarray(w, dtype=np.float64)) for w in weights]
    v = [np.zeros(w.shape[1]) for w in ws]
    states, outputs = [], []
    for k, row in enumerate(np.asarray(spikes)):
        events = np.flatnonzero(row)
        step_out = []
        for l, w in enumerate(ws):
            for j in events:
                v[l] = R(v[l] + w[j])
            mask = None
            if forced is not None:
                mask = np.zeros(w.shape[1], dtype=bool)
                mask[forced[k][l]] = True
            s, v[l] = _spike_reset(v[l], vth, R, mask)
            events = np.flatnonzero(s)
            step_out.append(events)
        states.append([x.copy() for x in v])
        outputs.append(step_out)
    return states, outputs


def sd_reference(weights, q: float, frames, precision: str = "bf16", delta_every: int = 1,
                 forced=None):
    """Chain of sigma-delta layers driven by quantized input changes.

    Returns per frame ``(z_list, a_list)``. In wide mode ``forced[f][l]``
    supplies the quantized activations of a BF16 run so that the sigma
    states see identical events.
    """
    R = rounder(precision)
    ws = [R(np.asarray(w, dtype=np.float64)) for w in weights]
    z = [np.zeros(w.shape[1]) for w in ws]
    a = [np.zeros(w.shape[1]) for w in ws]
    prev_in = np.zeros(ws[0].shape[0])
    out = []
    for f, frame in enumerate(np.asarray(frames, dtype=np.float64)):
        cur = _quant(_rne16(frame), q, _rne16)  # the host sends BF16 inputs
        d = _rne16(cur - prev_in)
        prev_in = cur
        idx = np.flatnonzero(d != 0)
        pay = d[idx]
        evaluate = (f + 1) % delta_every == 0
        for l, w in enumerate(ws):
            for j, p in zip(idx, pay):
                z[l] = R(z[l] + R(w[j] * p))
            if evaluate:
                new = _quant(z[l], q, R) if forced is None else np.asarray(forced[f][l], dtype=np.float64)
                diff = R(new - a[l])
                a[l] = new
                idx = np.flatnonzero(diff != 0)
                pay = diff[idx]
            else:
                idx, pay = np.zeros(0, np.int64), np.zeros(0)
        out.append(([x.copy() for x in z], [x.copy() for x in a]))
    return out


def sd_dense_reference(weights, q: float, frames):
    """Quantized dense network: each layer computes ``quant(W^T x)`` exactly."""
    acts = []
    for frame in np.asarray(frames, dtype=np.float64):
        x = _quant(_rne16(frame), q, _rne16)
        layer = []
        for w in weights:
            x = _quant(np.asarray(w, dtype=np.float64).T @ x, q, _wide)
            layer.append(x)
        acts.append(layer)
    return acts


class HebbianReference:
    """The Hebbian digit network as dense arrays (see ``sim.hebbian``)."""

    def __init__(self, cfg, precision: str = "bf16"):
        self.cfg = cfg
        self.precision = precision
        self.rnd = rounder(precision)
        c = {k: bits_to_float(v) for k, v in cfg.constants.items()}
        self.vth, self.eta = float(c["vth"]), float(c["eta"])
        self.beta, self.omb = float(c["beta"]), float(c["one_minus_beta"])
        m, n = cfg.n_neurons, cfg.n_inputs
        self.rec = np.full((m, m), float(c["inhibition"]))
        np.fill_diagonal(self.rec, 0.0)
        self.w = np.zeros((m, n))
        self.fb = np.zeros((m, n))
        self.log: list | None = None

    def get_weights(self):
        return self.w.copy(), self.fb.copy()

    def set_weights(self, w, fb) -> None:
        self.w = self.rnd(w)
        self.fb = self.rnd(fb)

    def present(self, spikes, learn: bool, forced=None) -> np.ndarray:
        R, cfg = self.rnd, self.cfg
        m, n = cfg.n_neurons, cfg.n_inputs
        v, x = np.zeros(m), np.zeros(n)
        tin, tout = np.zeros(n), np.zeros(m)
        counts = np.zeros(m, dtype=np.int64)
        prev = np.zeros(0, dtype=np.int64)
        for k, row in enumerate(np.asarray(spikes)):
            ev = np.flatnonzero(row)
            for j in ev:
                v = R(v + self.w[:, j])
            for p in prev:
                v = R(v + self.rec[p])
                if cfg.feedback:
                    x = R(x + self.fb[p])
            mask = None
            if forced is not None:
                mask = np.zeros(m, dtype=bool)
                mask[forced[k]] = True
            s, v = _spike_reset(v, self.vth, R, mask)
            out = np.flatnonzero(s)
            counts[out] += 1
            if learn:
                s_in = np.zeros(n)
                s_in[ev] = 1.0
                tin = R(R(tin * self.beta) + R(s_in * self.omb))
                tout = R(R(tout * self.beta) + R(s * self.omb))
                dw = R(R(tout[:, None] * tin[None, :]) * self.eta)
                self.w = R(self.w + dw)
                if cfg.feedback:
                    self.fb = R(self.fb + dw)
            if self.log is not None:
                self.log.append({"spikes": out, "v": v.copy(), "trace_in": tin.copy(),
                                 "trace_out": tout.copy()})
            prev = out
        return counts


def eprop_reference(cfg, w0, feedback, inputs, targets, supervised, precision: str = "bf16",
                    forced=None):
    """Single IF layer trained by e-prop with random error feedback.

    Returns per step a dict of ``v``, ``trace_in``, ``e``, ``w``, ``fb``,
    ``spikes`` and the surrogate ``gate`` (neurons inside the window).
    ``forced[k]`` is a ``(spikes, gate)`` pair from another run.
    """
    R = rounder(precision)
    c = {k: bits_to_float(v) for k, v in cfg.constants.items()}
    vth, eta, beta, omb = (float(c[k]) for k in ("vth", "eta", "beta", "one_minus_beta"))
    half, inv = float(c["a1_half"]), float(c["inv_a1"])
    n, m = cfg.n_inputs, cfg.n_neurons
    w = R(np.asarray(w0, dtype=np.float64))
    b = R(np.asarray(feedback, dtype=np.float64))
    e = np.zeros((n, m))
    v, tin, fb = np.zeros(m), np.zeros(n), np.zeros(m)
    readout = np.asarray(cfg.readout)
    log = []
    for k, row in enumerate(np.asarray(inputs)):
        ev = np.flatnonzero(row)
        s_in = np.zeros(n)
        s_in[ev] = 1.0
        tin = R(R(tin * beta) + R(s_in * omb))
        for j in ev:
            v = R(v + w[j])
        gate = half > np.abs(R(v - vth))
        mask = None
        if forced is not None:
            mask = np.zeros(m, dtype=bool)
            mask[forced[k][0]] = True
            gate = np.zeros(m, dtype=bool)
            gate[forced[k][1]] = True
        h = R(gate.astype(np.float64) * inv)
        e = R(e + R(h[None, :] * tin[:, None]))
        s, v = _spike_reset(v, vth, R, mask)
        if supervised[k]:
            y = s[readout] - np.asarray(targets[k], dtype=np.float64)
            fb = np.zeros(m)
            for kk in np.flatnonzero(y):
                fb = R(fb + R(b[kk] * y[kk]))
            w = R(w - R(fb[None, :] * R(eta * e)))
        log.append({"spikes": np.flatnonzero(s), "gate": np.flatnonzero(gate), "v": v.copy(), "trace_in": tin.copy(),
                    "e": e.copy(), "w": w.copy(), "fb": fb.copy()})
    return log


def relative_drift(reference, approx) -> np.ndarray:
    """Per step ``max|approx - reference| / running max|reference|``."""
    peak, out = 0.0, []
    for r, a in zip(reference, approx):
        r = np.asarray(r, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        peak = max(peak, float(np.max(np.abs(r))) if r.size else 0.0)
        err = float(np.max(np.abs(a - r))) if r.size else 0.0
        out.append(err / peak if peak > 0 else (0.0 if err == 0 else np.inf))
    return np.asarray(out)
