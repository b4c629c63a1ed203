"""Command-line experiment runner.

Every subcommand writes CSV artifacts plus ``<subcommand>.json`` into the
output directory (``--out``, else ``$ROUGHREG_OUT``, else ``./roughreg-out``)
and exits with 0 when every check passes, 1 when one fails and 2 on a usage
or configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path as FsPath

import numpy as np

from .timegrid import ExponentConfig

SCHEMA = "roughreg-report/v1"
SUBCOMMANDS = ("fbm", "cmspace", "lift", "flow", "germ-rate", "besov", "regularise", "all")
OUT_ENV = "ROUGHREG_OUT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    exponents: ExponentConfig = ExponentConfig()
    level: int = 8
    seed: int = 0
    replicas: int = 100
    inner: int = 200
    out: str | None = None
    sigma: str = "sin"
    b: str = "none"
    germ: str = "increment"
    scales: tuple = (2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6)
    eps_levels: tuple = (2, 4, 6)
    s: float = 0.25

    def output_dir(self) -> FsPath:
        return FsPath(self.out or os.environ.get(OUT_ENV) or "roughreg-out")


_EXPONENT_KEYS = {f.name for f in fields(ExponentConfig)}
_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"exponents"}


def _coerce(key, text):
    text = text.strip()
    if key in _EXPONENT_KEYS or key == "s":
        return float(text)
    if key in ("level", "seed", "replicas", "inner"):
        return int(text)
    if key == "scales":
        return tuple(float(eval_fraction(x)) for x in text.split(","))
    if key == "eps_levels":
        return tuple(int(x) for x in text.split(","))
    return text


def eval_fraction(x: str) -> float:
    """'2^-3', '0.125' or '1/8' to a float."""
    x = x.strip()
    if "^" in x:
        base, exp = x.split("^")
        return float(base) ** float(exp)
    if "/" in x:
        num, den = x.split("/")
        return float(num) / float(den)
    return float(x)


def build_config(values: dict) -> RunConfig:
    unknown = set(values) - _EXPONENT_KEYS - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    try:
        coerced = {k: _coerce(k, str(v)) if isinstance(v, str) else v for k, v in values.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    exps = ExponentConfig(**{k: v for k, v in coerced.items() if k in _EXPONENT_KEYS})
    bad = exps.violations()
    if bad:
        raise ConfigError("exponent constraints violated: " + "; ".join(bad))
    cfg = RunConfig(exponents=exps, **{k: v for k, v in coerced.items() if k in _RUN_KEYS})
    if cfg.level < 2:
        raise ConfigError("level must be at least 2")
    return cfg


def parse_config(text: str) -> RunConfig:
    """``key=value`` lines (``#`` starts a comment; commas also separate pairs
    outside of list values)."""
    values = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for part in _split_pairs(line):
            if "=" not in part:
                raise ConfigError(f"expected key=value, got {part!r}")
            k, v = part.split("=", 1)
            values[k.strip()] = v.strip()
    return build_config(values)


def _split_pairs(line):
    out, cur = [], ""
    for piece in line.split(","):
        if "=" in piece or not out and not cur:
            if cur:
                out.append(cur)
            cur = piece
        else:
            cur += "," + piece
    if cur:
        out.append(cur)
    return [p.strip() for p in out if p.strip()]


@dataclass
class Report:
    command: str
    config: RunConfig
    checks: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def check(self, name, value, tolerance, comparison, tag):
        value = float(value)
        if comparison == "<=":
            ok = value <= tolerance
        elif comparison == ">=":
            ok = value >= tolerance
        elif comparison == ">":
            ok = value > tolerance
        elif comparison == "within":
            target, tol = tolerance
            ok = abs(value - target) <= tol
        else:
            raise ValueError(comparison)
        ok = bool(ok) and math.isfinite(value)
        self.checks.append(
            {"name": name, "value": value, "tolerance": tolerance, "comparison": comparison, "verdict": "pass" if ok else "fail", "tag": tag}
        )
        return ok

    def reported(self, name, value, tag="reported"):
        """A number that is recorded but not asserted."""
        self.checks.append({"name": name, "value": float(value), "tolerance": None, "comparison": "none", "verdict": "reported", "tag": tag})

    def write_csv(self, name, header, rows):
        path = self.config.output_dir() / name
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [",".join(header)] + [",".join(_fmt(x) for x in row) for row in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.artifacts.append(name)

    @property
    def passed(self):
        return all(c["verdict"] != "fail" for c in self.checks)

    def failures(self):
        return [c["name"] for c in self.checks if c["verdict"] == "fail"]

    def to_json(self) -> str:
        exps = self.config.exponents
        cfg = {k: getattr(self.config, k) for k in sorted(_RUN_KEYS) if k != "out"}
        cfg.update({k: getattr(exps, k) for k in sorted(_EXPONENT_KEYS)})
        doc = {
            "schema": SCHEMA,
            "command": self.command,
            "config": cfg,
            "checks": self.checks,
            "artifacts": self.artifacts,
            "info": self.info,
            "status": "pass" if self.passed else "fail",
        }
        return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# --- experiments -----------------------------------------------------------


def run_fbm(cfg: RunConfig, rep: Report):
    from .fbm import FbmParams, conditional_structure_checks, covariance_Q, covariance_representation_residual, past_kernel_gram
    from .timegrid import TimeGrid, dyadic_grid

    H = cfg.exponents.H
    params = FbmParams(H)
    grid = TimeGrid(np.arange(1, 33) / 32)
    res = covariance_representation_residual(grid, params)
    rep.check(f"covariance_representation_residual[H={H}]", res, 1e-3, "<=", "oracle")
    t = grid.times[::4]
    Q = covariance_Q(t[:, None], t[None, :], params)
    R = past_kernel_gram(1.0, t, t, params)
    rows = [(a, b, Q[i, j], R[i, j], abs(Q[i, j] - R[i, j])) for i, a in enumerate(t) for j, b in enumerate(t) if j >= i]
    rep.write_csv("fbm_covariance.csv", ["s", "t", "Q", "kernel_gram", "abs_diff"], rows)
    st = conditional_structure_checks(params, dyadic_grid(4), cfg.s)
    rep.check("conditional_offdiag_max", st.max_offdiag, 1e-10, "<=", "exact")
    rep.check("conditional_dominance_slack_min", st.min_dominance_slack, -1e-10, ">=", "exact")
    rep.check("conditional_increment_ratio_max", st.max_increment_ratio, 1e6, "<=", "reported-finite")
    rep.check("conditional_variance_ratio_min", st.min_condvar_ratio, 0.0, ">", "exact")
    rep.reported("conditional_variance_exponent", st.theta_fit, "fit")


def run_cmspace(cfg: RunConfig, rep: Report):
    from .cmspace import indicator, kstar_apply, projected_inner
    from .fbm import FbmParams, conditional_cov_Qs, kernel_K
    from .timegrid import TimeGrid

    params = FbmParams(cfg.exponents.H)
    s = cfg.s
    pts = [p for p in (0.375, 0.5, 0.75, 1.0) if p > s]
    rows, worst = [], 0.0
    for i, u in enumerate(pts):
        for v in pts[i:]:
            a = projected_inner(indicator(u, s), indicator(v, s), s, params)
            b = conditional_cov_Qs(s, u, v, params)
            worst = max(worst, abs(a - b))
            rows.append((u, v, a, b, abs(a - b)))
    rep.write_csv("cmspace_projection.csv", ["u", "v", "projected_inner", "Q_s", "abs_diff"], rows)
    rep.check("projected_inner_vs_Qs", worst, 2e-3, "<=", "two-route")
    grid = TimeGrid(np.linspace(0.02, 0.98, 49))
    t = 0.6
    img = kstar_apply(indicator(t), grid, params).values[:, 0]
    ref = np.array([kernel_K(t, r, params) if r < t else 0.0 for r in grid.times])
    rep.check("kstar_indicator_pointwise", float(np.max(np.abs(img - ref))), 1e-4, "<=", "two-route")


def run_lift(cfg: RunConfig, rep: Report):
    from .fbm import FbmParams, GaussianDriver, sample_fbm_volterra
    from .roughpath import assemble_mixed, chen_defect, lift_piecewise_linear, mixed_chen_defect, product_rule_defect, symmetric_defect
    from .timegrid import Path, TwoParamField, dyadic_grid, path_to_csv

    params = FbmParams(cfg.exponents.H, 2)
    grid = dyadic_grid(cfg.level)
    B = sample_fbm_volterra(GaussianDriver.from_seed(grid, cfg.seed, 2), params)
    rp = lift_piecewise_linear(B, cfg.exponents.H_minus)
    rep.check("pl_lift_chen_defect", chen_defect(rp), 1e-12, "<=", "exact")
    rep.check("pl_lift_symmetric_defect", symmetric_defect(rp), 1e-12, "<=", "exact")
    L = Path(grid, np.stack([grid.times, grid.times**2], axis=1))
    dB = np.diff(B.flat(), axis=0)
    dL = np.diff(L.flat(), axis=0)
    cell = 0.5 * dB[:, :, None] * dL[:, None, :]
    from .roughpath import areas_from_cells

    BL = areas_from_cells(B.flat(), cell, L.flat())
    mrp = assemble_mixed(rp, L, TwoParamField(grid, BL))
    rep.check("mixed_chen_defect", mixed_chen_defect(mrp), 1e-6, "<=", "exact")
    rep.check("product_rule_defect", product_rule_defect(mrp), 1e-12, "<=", "exact")
    out = cfg.output_dir() / "lift_path.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(path_to_csv(B), encoding="utf-8")
    rep.artifacts.append("lift_path.csv")


DRIFTS = {
    "none": None,
    "quadratic-bump": lambda x: x * x * np.exp(-x * x),
    "linear": lambda x: -x,
}


def run_flow(cfg: RunConfig, rep: Report):
    from .fbm import FbmParams, GaussianDriver, sample_fbm_volterra
    from .rde import COEFFICIENTS, flow_identity_residual, solve_flow, solve_jacobian, solve_with_drift
    from .roughpath import lift_piecewise_linear
    from .timegrid import dyadic_grid

    if cfg.sigma not in COEFFICIENTS:
        raise ConfigError(f"unknown sigma {cfg.sigma!r}; choose from {', '.join(COEFFICIENTS)}")
    if cfg.b not in DRIFTS:
        raise ConfigError(f"unknown drift {cfg.b!r}; choose from {', '.join(DRIFTS)}")
    coeff = COEFFICIENTS[cfg.sigma]()
    params = FbmParams(cfg.exponents.H, coeff.d0)
    grid = dyadic_grid(cfg.level)
    rp = lift_piecewise_linear(sample_fbm_volterra(GaussianDriver.from_seed(grid, cfg.seed, coeff.d0), params))
    x = np.full(coeff.d, 0.3)
    sol = solve_jacobian(coeff, rp, 0.0, x)
    ortho = float(np.max(np.abs(sol.J.values @ sol.Jinv.values - np.eye(coeff.d))))
    coarse = lift_piecewise_linear(sample_fbm_volterra(GaussianDriver.from_seed(grid, cfg.seed, coeff.d0).coarsen(2), params))
    self_err = float(np.max(np.abs(solve_flow(coeff, coarse, 0.0, x).phi.values - sol.phi.values[::2])))
    rep.check("jacobian_times_inverse_residual", ortho, 10 * max(self_err, 1e-14), "<=", "self-convergence")
    rep.check("flow_identity_residual", flow_identity_residual(coeff, rp, 0.5, x), 10 * max(self_err, 1e-14), "<=", "self-convergence")
    rep.reported("scheme_self_error", self_err)
    X = solve_with_drift(DRIFTS[cfg.b], coeff, rp, x)
    rows = [(t, *sol.phi.values[k], *sol.J.values[k].ravel(), *X.values[k]) for k, t in enumerate(grid.times)]
    header = ["t"] + [f"phi{i + 1}" for i in range(coeff.d)] + [f"J{i + 1}{j + 1}" for i in range(coeff.d) for j in range(coeff.d)]
    header += [f"X{i + 1}" for i in range(coeff.d)]
    rep.write_csv("flow.csv", header, rows)


def run_germ_rate(cfg: RunConfig, rep: Report):
    from .fbm import FbmParams, IncrementGermSample
    from .sewing import PlantedGermSample, mc_rate_beta1, mc_rate_beta2

    H = cfg.exponents.H
    scales = tuple(cfg.scales)
    if cfg.germ == "increment":
        params = FbmParams(H)
        fit = mc_rate_beta1(lambda sd: IncrementGermSample(sd, params, cfg.level), scales=scales, replicas=cfg.replicas, seed=cfg.seed)
        rep.check("beta1_increment", fit.slope, (H, 0.1), "within", "fit")
        fits = {"beta1": fit}
    elif cfg.germ == "planted":
        fit = mc_rate_beta1(lambda sd: PlantedGermSample(sd, 1.3), scales=scales, replicas=cfg.replicas, seed=cfg.seed)
        rep.check("beta1_planted", fit.slope, (1.3, 0.1), "within", "oracle")
        fits = {"beta1": fit}
    elif cfg.germ in ("L", "K"):
        fits = germ_rates(cfg, rep, kinds=(cfg.germ,))
    else:
        raise ConfigError(f"unknown germ {cfg.germ!r}")
    for name, fit in fits.items():
        noise = fit.noise if fit.noise is not None else np.zeros_like(fit.lp_norms)
        rep.write_csv(f"germ_rate_{name}.csv", ["scale", "norm", "stderr"], list(zip(fit.scales, fit.lp_norms, noise)))
    rep.info["fits"] = {k: {"slope": v.slope, "stderr": v.stderr, "reliable": v.reliable} for k, v in fits.items()}


def germ_experiment(cfg: RunConfig, kind: str, eps: float = 2.0**-4):
    from .fbm import FbmParams
    from .rde import COEFFICIENTS
    from .regularisation import DriftSpec, GermExperiment

    coeff = COEFFICIENTS[cfg.sigma]()
    spec = DriftSpec(cfg.exponents.alpha, coeff.d, 8, cfg.seed)
    inner = cfg.inner + (cfg.inner % 2)
    return GermExperiment(
        FbmParams(cfg.exponents.H, coeff.d0),
        coeff,
        spec.drift(eps),
        lambda x: spec.derivative(x, eps)[..., :1],
        level=cfg.level,
        inner=inner,
        kind=kind,
    )


def germ_rates(cfg: RunConfig, rep: Report, kinds=("L", "K")):
    from .sewing import mc_rate_beta1, mc_rate_beta2

    H, a = cfg.exponents.H, cfg.exponents.alpha
    scales = tuple(cfg.scales)
    fits = {}
    family = germ_experiment(cfg, "L").family() if "L" in kinds or "K" in kinds else None
    if "L" in kinds or "K" in kinds:
        f1 = mc_rate_beta1(family, scales=scales, replicas=cfg.replicas, seed=cfg.seed)
        fits["beta1_L"] = f1
        rep.check("beta1_L", f1.slope, 1 + (a - 1) * H - 0.15, ">=", "fit")
    if "L" in kinds:
        f2 = mc_rate_beta2(family, scales=scales, outer=cfg.replicas, inner=family(cfg.seed).exp.inner, seed=cfg.seed)
        fits["beta2_L"] = f2
        rep.check("beta2_L", f2.slope, 1.0, ">", "fit")
        rep.check("beta2_L_noise_ratio", float(np.max(f2.noise / f2.lp_norms)), 0.2, "<=", "mc-guard")
    if "K" in kinds:
        fk = mc_rate_beta1(germ_experiment(cfg, "K").family(), scales=scales, replicas=cfg.replicas, seed=cfg.seed)
        fits["beta1_K"] = fk
        rep.check("beta1_K_gain", fk.slope - fits["beta1_L"].slope, (H, 0.15), "within", "fit")
    return fits


def run_besov(cfg: RunConfig, rep: Report):
    from .regularisation import DriftSpec, besov_neg_norm

    spec = DriftSpec(0.8, 1, 7, cfg.seed)
    rows, vals = [], []
    for n in (2**12, 2**13, 2**14):
        x = np.linspace(-np.pi, np.pi, n, endpoint=False)
        dx = x[1] - x[0]
        v = besov_neg_norm(spec.derivative(x[:, None])[:, 0], -0.2, dx, levels=12)
        rows.append((n, dx, v))
        vals.append(v)
    rep.write_csv("besov.csv", ["points", "dx", "norm"], rows)
    spread = (max(vals) - min(vals)) / max(vals)
    rep.check("besov_refinement_spread", spread, 0.1, "<=", "sweep")
    c = besov_neg_norm(np.full(256, 0.7), -0.2, 0.01)
    rep.check("besov_constant", c, (0.7, 1e-12), "within", "exact")


def run_regularise(cfg: RunConfig, rep: Report):
    from .regularisation import UniquenessConfig, uniqueness_experiment

    ucfg = UniquenessConfig(
        H=cfg.exponents.H,
        alpha=cfg.exponents.alpha,
        eps=tuple(2.0**-k for k in cfg.eps_levels),
        levels=tuple(range(max(cfg.level - 3, 4), cfg.level + 1)),
        identity_level=cfg.level,
        seed=cfg.seed,
        sigma=cfg.sigma,
    )
    r = uniqueness_experiment(ucfg)
    rows = []
    for i, e in enumerate(r.eps):
        for j, lev in enumerate(r.levels):
            rows.append((e, int(lev), r.differences[i, j]))
        rep.check(f"scheme_difference_decrease[eps={float(e)!r}]", float(np.min(r.ratios[i])), 1.5, ">=", "sweep")
    rep.write_csv("uniqueness.csv", ["eps", "level", "sup_difference"], rows)
    rep.check("drift_identity_residual_over_tol", r.identity.residual / r.identity.tolerance, 5.0, "<=", "two-route")
    rep.check("linear_Z_zero_start", r.z_zero_max, 0.0, "<=", "exact")
    germ_rates(cfg, rep)


RUNNERS = {
    "fbm": run_fbm,
    "cmspace": run_cmspace,
    "lift": run_lift,
    "flow": run_flow,
    "germ-rate": run_germ_rate,
    "besov": run_besov,
    "regularise": run_regularise,
}


def run(subcommand: str, cfg: RunConfig) -> Report:
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    rep = Report(subcommand, cfg)
    names = [k for k in RUNNERS] if subcommand == "all" else [subcommand]
    for name in names:
        sub = Report(name, cfg)
        RUNNERS[name](cfg, sub)
        for c in sub.checks:
            rep.checks.append(dict(c, name=f"{name}:{c['name']}") if subcommand == "all" else c)
        rep.artifacts.extend(sub.artifacts)
        if sub.info:
            rep.info[name] = sub.info
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{subcommand}.json").write_text(rep.to_json(), encoding="utf-8")
    rep.artifacts.append(f"{subcommand}.json")
    return rep


def _parser():
    p = argparse.ArgumentParser(prog="roughreg", description="Run rough-path and regularisation experiments.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="file of key=value lines")
    p.add_argument("--out")
    p.add_argument("--H", type=float)
    p.add_argument("--H-minus", dest="H_minus", type=float)
    p.add_argument("--H-plus", dest="H_plus", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--level", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--inner", type=int)
    p.add_argument("--sigma")
    p.add_argument("--b")
    p.add_argument("--germ")
    p.add_argument("--scales", help="comma-separated, e.g. 2^-3,2^-4,2^-5")
    p.add_argument("--eps-levels", dest="eps_levels", help="comma-separated k with eps = 2^-k")
    p.add_argument("--s", type=float)
    return p


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    values = {}
    try:
        if args.config:
            base = parse_config(FsPath(args.config).read_text(encoding="utf-8"))
            values.update({k: getattr(base, k) for k in _RUN_KEYS})
            values.update({k: getattr(base.exponents, k) for k in _EXPONENT_KEYS})
        for k, v in vars(args).items():
            if k in ("subcommand", "config") or v is None:
                continue
            values[k] = v
        cfg = build_config(values)
        rep = run(args.subcommand, cfg)
    except ConfigError as exc:
        print(f"roughreg: error: {exc}", file=sys.stderr)
        return 2
    for c in rep.checks:
        print(f"{c['verdict']:>8}  {c['name']}  value={c['value']!r}  tol={c['tolerance']!r}")
    if not rep.passed:
        print("failed checks: " + ", ".join(rep.failures()), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
