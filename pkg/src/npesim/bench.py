"""Benchmarks and reports behind the command-line tool.

Every command returns a ``Report``: a small table plus metadata that pins
down its inputs (seed, configuration hash, cost-table digest). Rendering is
deterministic, so rerunning with the same inputs gives identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .energy import DEFAULT_TABLE, EnergyTable, kernel_breakdown, kernel_energy
from .errors import ConfigError
from .kernels import build_synop, get_kernel, synop_grid

SIGMA_KERNEL = "sd_sigma"
DELTA_KERNEL = "sd_delta"
PJ_PER_UJ = 1e6


@dataclass
class Report:
    """Rows under fixed columns; ``digits`` maps a column to its decimals."""

    title: str
    columns: tuple[str, ...] = ("quantity", "value", "unit")
    rows: list[tuple] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    digits: dict = field(default_factory=dict)

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row {row!r} does not match columns {self.columns}")
        self.rows.append(tuple(row))

    def _cell(self, col: str, value):
        d = self.digits.get(col)
        if isinstance(value, (float, np.floating)):
            return round(float(value), d) if d is not None else float(value)
        if isinstance(value, np.integer):
            return int(value)
        return value

    def _text(self, col: str, value) -> str:
        v = self._cell(col, value)
        d = self.digits.get(col)
        if isinstance(v, float) and d is not None:
            return f"{v:.{d}f}"
        return str(v)

    def value(self, quantity: str):
        """Value column of the row whose first cell is ``quantity``."""
        for row in self.rows:
            if row[0] == quantity:
                return self._cell(self.columns[1], row[1])
        raise KeyError(quantity)

    def to_json(self) -> str:
        doc = {
            "title": self.title,
            "metadata": self.metadata,
            "columns": list(self.columns),
            "rows": [[self._cell(c, v) for c, v in zip(self.columns, row)] for row in self.rows],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self.title}\n")
        for key in sorted(self.metadata):
            buf.write(f"# {key}: {self.metadata[key]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([self._text(c, v) for c, v in zip(self.columns, row)])
        return buf.getvalue()

    def render(self, fmt: str = "csv") -> str:
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        raise ConfigError(f"unknown format '{fmt}' (json or csv)")


def _meta(table: EnergyTable, **extra) -> dict:
    return {"cost_table": table.digest(), **{k: v for k, v in extra.items() if v is not None}}


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


# -- kernel and synop energies ---------------------------------------------------


def cmd_kernel_energy(name: str, event_rate: float = 1.0, table: EnergyTable | None = None) -> Report:
    """Per-iteration energy of a built-in kernel and its instruction breakdown."""
    table = table or DEFAULT_TABLE
    rep = Report(f"kernel energy: {name}", metadata=_meta(table, kernel=name, event_rate=event_rate),
                 digits={"value": 4})
    if name.startswith("synop:"):
        plan = build_synop(name)
        kernel, amortize = plan.kernel, plan.amortize
        rep.add("energy_per_iteration", kernel_energy(kernel, event_rate, table, amortize), "pJ")
        rep.add("synops_per_iteration", plan.synops_per_iteration, "count")
        rep.add("energy_per_synop", plan.energy_pj(table), "pJ")
    else:
        kernel = get_kernel(name)
        rep.add("energy_per_iteration", kernel_energy(kernel, event_rate, table), "pJ")
    rep.add("instructions", len(kernel), "count")
    for mnemonic, count, pj in kernel_breakdown(kernel, event_rate, table):
        rep.add(f"{mnemonic} x{count}", pj, "pJ")
    return rep


def cmd_synop_table(table: EnergyTable | None = None) -> Report:
    """Energy per synaptic operation for every weight mode and event batching."""
    table = table or DEFAULT_TABLE
    rep = Report("energy per synaptic operation",
                 columns=("mode", "events", "pj_per_synop", "derived_pj", "source"),
                 metadata=_meta(table, note=(
                     "int4_full cells are configured constants; derived_pj is the instruction sum "
                     "of the modelled kernel, shown for comparison")),
                 digits={"pj_per_synop": 4, "derived_pj": 4})
    for row in synop_grid(table):
        rep.add(row["mode"], row["events"], row["pj_per_synop"], row["derived_pj"], row["source"])
    return rep


# -- sigma-delta frame energy -------------------------------------------------------


@dataclass(frozen=True)
class OpCount:
    name: str
    sigma_ops: int
    delta_evals: int

    def __post_init__(self):
        if self.sigma_ops < 0 or self.delta_evals < 0:
            raise ConfigError(f"{self.name}: operation counts must be non-negative")


@dataclass(frozen=True)
class OpCountSheet:
    """Per-frame operation counts of one or more sigma-delta networks."""

    networks: tuple[OpCount, ...]

    @classmethod
    def from_dict(cls, doc: dict, where: str = "op-count sheet") -> "OpCountSheet":
        try:
            rows = doc["networks"]
            nets = tuple(OpCount(str(r["name"]), _count(r["sigma_ops"]), _count(r["delta_evals"])) for r in rows)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{where}: each network needs name, sigma_ops and delta_evals ({exc})") from None
        return cls(nets)

    @classmethod
    def load(cls, path: str | Path) -> "OpCountSheet":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"op-count sheet not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc, str(path))

    @classmethod
    def builtin(cls) -> "OpCountSheet":
        text = (resources.files("npesim") / "data" / "sd_frame_counts.json").read_text()
        return cls.from_dict(json.loads(text), "built-in sheet")


def _count(x) -> int:
    if isinstance(x, bool) or not float(x).is_integer():
        raise ConfigError(f"operation count {x!r} is not an integer")
    return int(x)


def cmd_sd_frame_energy(sheet: OpCountSheet | None = None, table: EnergyTable | None = None) -> Report:
    """Per-frame sigma and delta energy in µJ from operation counts."""
    table = table or DEFAULT_TABLE
    sheet = sheet or OpCountSheet.builtin()
    e_sigma = kernel_energy(get_kernel(SIGMA_KERNEL), 1, table)
    e_delta = kernel_energy(get_kernel(DELTA_KERNEL), 1, table)
    rep = Report("sigma-delta energy per frame",
                 columns=("network", "sigma_ops", "delta_evals", "sigma_uJ", "delta_uJ", "total_uJ"),
                 metadata=_meta(table, sigma_pj=e_sigma, delta_pj=e_delta),
                 digits={"sigma_uJ": 1, "delta_uJ": 1, "total_uJ": 1})
    for net in sheet.networks:
        s = net.sigma_ops * e_sigma / PJ_PER_UJ
        d = net.delta_evals * e_delta / PJ_PER_UJ
        rep.add(net.name, net.sigma_ops, net.delta_evals, s, d, s + d)
    return rep


# -- Hebbian accuracy / energy sweep ------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    m: int
    seed: int
    accuracy: float
    energy_pj: float


def _sweep_job(args) -> SweepPoint:
    from .sim.hebbian import run_hebbian_training

    cfg, dataset, seed, sizes, table = args
    r = run_hebbian_training(cfg, dataset, seed=seed, n_train=sizes[0], n_label=sizes[1], n_test=sizes[2],
                             table=table)
    return SweepPoint(cfg.n_neurons, seed, r.accuracy, r.energy_per_step_pj)


def hebbian_sweep(m_list, seeds, dataset, base=None, table: EnergyTable | None = None,
                  sizes=(600, 300, 400), workers: int = 1) -> list[SweepPoint]:
    """Train and test one network per (M, seed); points come back in input order."""
    from dataclasses import replace

    from .sim.hebbian import HebbianConfig

    base = base or HebbianConfig()
    jobs = [(replace(base, n_neurons=int(m)), dataset, int(s), tuple(sizes), table) for m in m_list for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_sweep_job, jobs))
    return [_sweep_job(j) for j in jobs]


def cmd_hebbian_sweep(m_list, seeds, dataset, base=None, table: EnergyTable | None = None,
                      sizes=(600, 300, 400), workers: int = 1, plot: str | Path | None = None,
                      dataset_id: str = "builtin") -> Report:
    """Accuracy and per-step energy for each network size M."""
    table = table or DEFAULT_TABLE
    points = hebbian_sweep(m_list, seeds, dataset, base, table, sizes, workers)
    rep = Report("Hebbian accuracy and energy per time step",
                 columns=("M", "energy_uJ_per_step", "accuracy_mean", "accuracy_std"),
                 metadata=_meta(table, seeds=" ".join(map(str, seeds)), dataset=dataset_id,
                                split="/".join(map(str, sizes))),
                 digits={"energy_uJ_per_step": 4, "accuracy_mean": 4, "accuracy_std": 4})
    for m in m_list:
        pts = [p for p in points if p.m == m]
        acc = np.array([p.accuracy for p in pts])
        energy = float(np.mean([p.energy_pj for p in pts])) / PJ_PER_UJ
        rep.add(int(m), energy, float(acc.mean()), float(acc.std()))
    rep.metadata["points"] = "; ".join(f"M={p.m} seed={p.seed} acc={p.accuracy:.4f}" for p in points)
    if plot is not None:
        plot_sweep(rep, plot)
    return rep


def plot_sweep(rep: Report, path: str | Path) -> Path:
    """Accuracy against energy per step, one marker per M, written to ``path``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    m, energy, mean, std = (np.array(c, dtype=np.float64) for c in zip(*rep.rows))
    # fixed salt and metadata keep the file identical across runs
    with plt.rc_context({"svg.hashsalt": "npesim"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.errorbar(energy, mean, yerr=std, marker="o", capsize=3)
        for mi, e, a in zip(m, energy, mean):
            ax.annotate(f"M={int(mi)}", (e, a), textcoords="offset points", xytext=(4, -10), fontsize=8)
        ax.set_xlabel("energy per time step (µJ)")
        ax.set_ylabel("held-out accuracy")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        meta = {"svg": {"Date": None}, "pdf": {"CreationDate": None}, "png": {}}.get(path.suffix.lstrip("."), {})
        fig.savefig(path, metadata=meta)
    plt.close(fig)
    return path


# -- full network runs ------------------------------------------------------------------


def _load_array(path: Path, key: str | None = None) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    if path.suffix == ".npy":
        return np.load(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            return {k: z[k] for k in z.files}
    if path.suffix == ".csv":
        try:
            return np.loadtxt(path, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    raise ConfigError(f"{path}: inputs are read from .npy, .npz or .csv files")


def cmd_run(spec_path: str | Path, input_path: str | Path | None = None, table: EnergyTable | None = None,
            seed: int | None = None, sizes=(600, 300, 400)) -> Report:
    """Run the network described by a spec file and report its energy ledger.

    Inputs by network kind: IF takes a spike raster (steps, N); SD takes frames
    (frames, N); Hebbian takes a digits CSV (the bundled set when omitted);
    e-prop takes an .npz with ``inputs``, ``targets`` and optional
    ``supervised``.
    """
    from .sim.eprop import run_eprop_training
    from .sim.hebbian import HebbianConfig, run_hebbian_training
    from .sim.networks import run_if_network, run_sd_network
    from .sim.spec import load_spec
    from .sim.data import load_dataset

    table = table or DEFAULT_TABLE
    spec_path = Path(spec_path)
    spec = load_spec(spec_path)
    seed = spec.seed if seed is None else seed
    inp = Path(input_path) if input_path is not None else None
    meta = _meta(table, spec=digest_bytes(spec_path.read_bytes()), seed=seed,
                 input=digest_bytes(inp.read_bytes()) if inp is not None and inp.exists() else None)
    rep = Report(f"run: {spec_path.name}", metadata=meta, digits={"value": 4})
    accuracy = None
    if spec.learning == "hebbian":
        cfg = HebbianConfig.from_spec(spec)
        result = run_hebbian_training(cfg, load_dataset(inp), seed=seed, n_train=sizes[0], n_label=sizes[1],
                                      n_test=sizes[2], table=table)
        outcome, accuracy = result.outcome, result.accuracy
    elif spec.learning == "eprop":
        if inp is None:
            raise ConfigError("e-prop runs need an .npz input with inputs and targets")
        data = _load_array(inp)
        if not isinstance(data, dict) or not {"inputs", "targets"} <= set(data):
            raise ConfigError(f"{inp}: needs arrays 'inputs' and 'targets'")
        outcome = run_eprop_training(spec, data["inputs"], data["targets"], data.get("supervised"), table=table)
    else:
        if inp is None:
            raise ConfigError("IF and SD runs need an input file")
        data = _load_array(inp)
        if isinstance(data, dict):
            raise ConfigError(f"{inp}: expected a single array")
        if spec.neuron_model == "SD":
            outcome = run_sd_network(spec, data, table=table)
        else:
            outcome = run_if_network(spec, data != 0, table=table)
    rep.add("total_energy", outcome.total_energy_pj, "pJ")
    rep.add("dynamic_energy", outcome.ledger.dynamic_pj, "pJ")
    rep.add("leakage_energy", outcome.leakage_pj, "pJ")
    rep.add("cycles", outcome.cycles, "cycles")
    for name in sorted(outcome.per_kernel_energy_pj):
        rep.add(f"energy[{name}]", outcome.per_kernel_energy_pj[name], "pJ")
    for name in sorted(outcome.kernel_iterations):
        rep.add(f"iterations[{name}]", outcome.kernel_iterations[name], "count")
    for name in sorted(outcome.event_counts):
        rep.add(f"events[{name}]", outcome.event_counts[name], "count")
    if accuracy is not None:
        rep.add("accuracy", accuracy, "fraction")
    return rep
