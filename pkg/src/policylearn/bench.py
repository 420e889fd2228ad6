"""Synthetic benchmark protocol: per-rep fits, regret, RMRR and parameter MSE.

Each rep samples a scenario, draws a training and an equally sized tuning
sample, fits nuisances on the tuning sample, scores the training sample with
DR scores, and fits every method on that identical scored dataset. Regret is
``J* - J(theta_hat)`` from the Monte-Carlo oracle. Parameter error compares
unit-normalized ``theta_hat`` with the optimal linear rule (Linear scenario,
linear class only).
"""
import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import nn
from .data import Dataset, derive_seed, dump_json, rng_stream
from .esprm import EsprmConfig, esprm_fit
from .gmm import PolynomialBasis, RandomFourierBasis, finite_gmm_fit
from .nuisance import ScoreConfig, compute_scores, fit_nuisances
from .scenarios import generate_data, oracle_policy_value, sample_scenario
from .surrogate import ErmSettings, PolicyModel, erm_fit

REPORT_SCHEMA_VERSION = "1.0"
DEFAULT_N_GRID = (100, 200, 500, 1000, 2000, 5000, 10000)
METHODS = ("erm", "esprm", "finite_gmm_poly3", "finite_gmm_rks64")


def normalize_params(theta, align_sign: bool = False) -> np.ndarray:
    """Unit-norm parameters; optionally flip so the first coordinate is positive."""
    theta = np.asarray(theta, dtype=np.float64)
    norm = np.linalg.norm(theta)
    if norm == 0:
        return theta.copy()
    out = theta / norm
    if align_sign and out[0] < 0:
        out = -out
    return out


def param_sq_error(theta_hat, theta_star, align_sign: bool = False) -> float:
    d = normalize_params(theta_hat, align_sign) - normalize_params(theta_star, align_sign)
    return float(d @ d)


@dataclass
class ExperimentPlan:
    scenario: str = "Linear"
    policy_class: str = "linear"
    methods: Sequence[str] = ("erm", "esprm")
    n_grid: Sequence[int] = DEFAULT_N_GRID
    reps: int = 64
    seed: int = 0
    nuisance_family: Optional[str] = None   # None: matched to the scenario kind
    score_kind: str = "DR"
    clip: float = 0.01
    mc_size: int = 1_000_000
    esprm_epoch_budget: float = 8_000_000
    esprm_max_epochs: int = 8000
    esprm_batch_size: Optional[int] = None
    bootstrap: int = 1000
    align_sign: bool = False

    def __post_init__(self):
        if self.scenario not in ("Linear", "Quadratic"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.policy_class not in ("linear", "flexible"):
            raise ValueError(f"unknown policy class {self.policy_class!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if not self.methods or self.methods[0] != "erm":
            raise ValueError("the first method must be the 'erm' baseline")
        if self.reps < 1 or any(n < 2 for n in self.n_grid):
            raise ValueError("reps and n must be positive")
        self.methods = list(self.methods)
        self.n_grid = [int(n) for n in self.n_grid]

    @property
    def family(self) -> str:
        if self.nuisance_family is not None:
            return self.nuisance_family
        return "linear-logistic" if self.scenario == "Linear" else "correct-spec-quadratic"

    def policy_spec(self) -> nn.MlpSpec:
        return nn.linear_spec(2) if self.policy_class == "linear" else nn.flexible_spec(2)

    def method_labels(self) -> List[str]:
        labels, seen = [], {}
        for m in self.methods:
            seen[m] = seen.get(m, 0) + 1
            labels.append(m if seen[m] == 1 else f"{m}#{seen[m]}")
        return labels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["n_grid"] = list(self.n_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown plan fields: {sorted(unknown)}")
        return cls(**d)


def fit_method(method: str, scored, spec: nn.MlpSpec, seed: int, plan: ExperimentPlan) -> PolicyModel:
    if method == "erm":
        return erm_fit(scored, spec, ErmSettings(), seed=seed)
    if method == "esprm":
        cfg = EsprmConfig(spec, seed=seed, epoch_budget=plan.esprm_epoch_budget,
                          max_epochs=plan.esprm_max_epochs, batch_size=plan.esprm_batch_size)
        return esprm_fit(scored, cfg)
    if method == "finite_gmm_poly3":
        return finite_gmm_fit(scored, spec, PolynomialBasis(3), stages=3, seed=seed)
    if method == "finite_gmm_rks64":
        return finite_gmm_fit(scored, spec, RandomFourierBasis(64, 0.5, seed=seed), stages=3, seed=seed)
    raise ValueError(f"unknown method {method!r}")


def run_rep(plan: ExperimentPlan, n: int, rep: int) -> dict:
    """One (n, rep) cell: returns per-method regret and parameter error."""
    rep_seed = derive_seed(plan.seed, f"n={n}/rep={rep}")
    scenario = sample_scenario(plan.scenario, derive_seed(plan.seed, f"scenario/rep={rep}"))
    train = generate_data(scenario, n, rep_seed, "train")
    tune = generate_data(scenario, n, rep_seed, "tune")
    both = Dataset(np.vstack([train.X, tune.X]), np.concatenate([train.T, tune.T]),
                   np.concatenate([train.Y, tune.Y]))
    nuis = fit_nuisances(both, np.arange(n, 2 * n), plan.family, seed=rep_seed)
    scored = compute_scores(train, nuis, ScoreConfig(plan.score_kind, plan.clip))
    spec = plan.policy_spec()
    theta_star = scenario.optimal_linear_params() if plan.policy_class == "linear" else None
    out = {"n": n, "rep": rep, "clip_binding": scored.clip_binding, "methods": {}}
    cache: Dict[str, dict] = {}
    for label, method in zip(plan.method_labels(), plan.methods):
        if method not in cache:
            try:
                model = fit_method(method, scored, spec, rep_seed, plan)
                pv = oracle_policy_value(scenario, model, plan.mc_size, seed=derive_seed(rep_seed, "oracle"))
                cache[method] = {
                    "ok": True,
                    "status": model.status,
                    "regret": pv.regret,
                    "regret_se": pv.regret_se,
                    "value": pv.value,
                    "optimum": pv.optimum,
                    "sq_error": None if theta_star is None else param_sq_error(model.params, theta_star, plan.align_sign),
                }
            except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
                cache[method] = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
        out["methods"][label] = cache[method]
    return out


def _run_rep_args(args):
    return run_rep(*args)


def _bootstrap(rng, values: np.ndarray, stat, B: int):
    idx = rng.integers(0, values.shape[0], size=(B, values.shape[0]))
    return np.array([stat(values[i]) for i in idx])


def _ci(samples):
    lo, hi = np.percentile(samples, [2.5, 97.5])
    return [float(lo), float(hi)]


def _rmrr(pair):
    base = pair[:, 0].mean()
    return float((1.0 - pair[:, 1].mean() / base) * 100.0) if base > 0 else 0.0


def aggregate(plan: ExperimentPlan, rows: List[dict]) -> dict:
    labels = plan.method_labels()
    base = labels[0]
    results = []
    for n in plan.n_grid:
        cell = [r for r in rows if r["n"] == n]
        ok = [r for r in cell if all(r["methods"][m]["ok"] for m in labels)]
        excluded = len(cell) - len(ok)
        rng = rng_stream(plan.seed, f"bootstrap/n={n}")
        base_regret = np.array([r["methods"][base]["regret"] for r in ok])
        for m in labels:
            regret = np.array([r["methods"][m]["regret"] for r in ok])
            entry = {"n": n, "method": m, "reps": len(ok), "excluded": excluded,
                     "degraded": int(sum(r["methods"][m]["status"] != "ok" for r in ok))}
            if len(ok) == 0:
                results.append(entry)
                continue
            entry["mean_regret"] = float(regret.mean())
            entry["mean_regret_ci"] = _ci(_bootstrap(rng, regret, np.mean, plan.bootstrap))
            pair = np.column_stack([base_regret, regret])
            entry["rmrr"] = 0.0 if m == base else _rmrr(pair)
            entry["rmrr_ci"] = [0.0, 0.0] if m == base else _ci(_bootstrap(rng, pair, _rmrr, plan.bootstrap))
            if ok[0]["methods"][m]["sq_error"] is not None:
                se = np.array([r["methods"][m]["sq_error"] for r in ok])
                se_base = np.array([r["methods"][base]["sq_error"] for r in ok])
                entry["param_mse"] = float(se.mean())
                entry["param_mse_ci"] = _ci(_bootstrap(rng, se, np.mean, plan.bootstrap))
                diff = se_base - se
                entry["mse_improvement"] = float(diff.mean())
                entry["mse_improvement_ci"] = _ci(_bootstrap(rng, diff, np.mean, plan.bootstrap))
                ratio = lambda p: float(p[:, 1].mean() / p[:, 0].mean()) if p[:, 0].mean() > 0 else 1.0
                entry["mse_ratio"] = ratio(np.column_stack([se_base, se]))
                entry["mse_ratio_ci"] = _ci(_bootstrap(rng, np.column_stack([se_base, se]), ratio, plan.bootstrap))
            results.append(entry)
    return {"schema_version": REPORT_SCHEMA_VERSION, "plan": plan.to_dict(), "results": results}


def run_experiment(plan: ExperimentPlan, workers: int = 1):
    """Run every (n, rep) cell; returns ``(report, rows, seconds)``.

    Rows are reduced in (n, rep) order, so the report does not depend on the
    number of workers.
    """
    tasks = [(plan, n, rep) for n in plan.n_grid for rep in range(plan.reps)]
    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_rep_args, tasks))
    else:
        rows = [_run_rep_args(t) for t in tasks]
    elapsed = time.perf_counter() - start
    return aggregate(plan, rows), rows, elapsed


def rows_to_csv(plan: ExperimentPlan, rows: List[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "rep", "method", "ok", "status", "regret", "regret_se", "value", "optimum", "sq_error"])
    for r in rows:
        for m in plan.method_labels():
            e = r["methods"][m]
            if e["ok"]:
                writer.writerow([r["n"], r["rep"], m, 1, e["status"], repr(e["regret"]), repr(e["regret_se"]),
                                 repr(e["value"]), repr(e["optimum"]),
                                 "" if e["sq_error"] is None else repr(e["sq_error"])])
            else:
                writer.writerow([r["n"], r["rep"], m, 0, e["error"], "", "", "", "", ""])
    return buf.getvalue()


def write_report(report: dict, rows: List[dict], plan: ExperimentPlan, out_dir, seconds: Optional[float] = None):
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(report, out / "report.json")
    (out / "reps.csv").write_text(rows_to_csv(plan, rows))
    if seconds is not None:
        dump_json({"seconds": round(seconds, 3)}, out / "timing.json")
