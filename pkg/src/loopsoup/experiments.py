"""Experiment registry, statistical reports and the near-critical comparisons.

Each experiment maps a :class:`RunConfig` to a :class:`StatReport` whose
checks store the numbers their pass/fail was computed from.  Reports are
deterministic functions of the config: they hold no wall-clock data (run
times go to a separate ``timings.json``), and randomness flows from the
config seed through named streams in fixed-size blocks, so the worker
count does not change any output byte.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .brownian import (
    BrownianSoupConfig,
    conformal_transport,
    mass_transport,
    propose_loops,
    sample_brownian_soup,
    thin_to_massive_brownian,
)
from .config import RunConfig, parse_mass
from .geometry import (
    Grid,
    build_clusters,
    carpet,
    carpet_dimension,
    cluster_diameter_tail,
    crossing_event,
    filled_cluster_at,
    hausdorff_prediction,
)
from .gff import (
    ising_exact,
    isomorphism_field,
    loop_hit_indicator,
    loop_hit_probability_exact,
    perturbation_coupling,
    sample_gff,
    sample_signs,
)
from .lattice import build_domain, green_function, killing_from_mass, precision_matrix, transition_kernel
from .loops import enumerate_loops, return_probabilities, rooted_weight, total_mass, truncation_tail, unrooted_weight
from .occupation import laplace_exact, laplace_mc, occupation_field
from .rng import stream
from .soup import intensity_table, sample_plane_walk_soup, sample_soups, thinned_intensity_table, thin_to_massive
from .stats import contrast, mean_se, one_sample_ks, poisson_gof, two_sample_ks

__all__ = [
    "Check",
    "StatReport",
    "REGISTRY",
    "available",
    "run_experiment",
    "scaling_comparison",
    "dichotomy_experiment",
    "write_report",
]

BROWNIAN_BLOCK = 64

TWO_SITE = {"sites": [[0, 0], [1, 0]]}
ONE_SITE = {"sites": [[0, 0]]}
SQUARE3 = {"rectangle": {"x0": 0, "y0": 0, "x1": 2, "y1": 2}}
SQUARE4 = {"rectangle": {"x0": 0, "y0": 0, "x1": 3, "y1": 3}}


def _num(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_num(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _num(x) for k, x in v.items()}
    return v


@dataclass
class Check:
    """One asserted comparison.

    ``passed`` is recomputable from the stored numbers: for ``kind="abs"``
    it is ``|estimate - target| <= tolerance``; ``"le"`` means
    ``estimate <= target + tolerance``; ``"gt"`` means
    ``estimate > target``; ``"flag"`` stores a boolean estimate.
    """

    name: str
    estimate: Any
    target: Any
    tolerance: float | None
    kind: str = "abs"
    stderr: float | None = None
    replicas: int | None = None
    note: str = ""

    @property
    def passed(self) -> bool:
        e, t, tol = self.estimate, self.target, self.tolerance
        if e is None or (isinstance(e, float) and not math.isfinite(e)):
            return False
        if self.kind == "abs":
            return bool(abs(e - t) <= tol)
        if self.kind == "le":
            return bool(e <= t + (tol or 0.0))
        if self.kind == "gt":
            return bool(e > t)
        if self.kind == "flag":
            return bool(e) == bool(t)
        raise ValueError(f"unknown check kind {self.kind!r}")

    def to_dict(self) -> dict:
        return _num({
            "name": self.name, "estimate": self.estimate, "target": self.target,
            "tolerance": self.tolerance, "kind": self.kind, "stderr": self.stderr,
            "replicas": self.replicas, "note": self.note, "passed": self.passed,
        })


@dataclass
class StatReport:
    experiment: str
    criterion: int
    config: dict
    checks: list[Check] = field(default_factory=list)
    bias: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return _num({
            "experiment": self.experiment, "criterion": self.criterion, "version": __version__,
            "config": self.config, "checks": [c.to_dict() for c in self.checks],
            "bias": self.bias, "info": self.info, "passed": self.passed,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def summary_lines(self) -> list[str]:
        out = []
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            out.append(f"  [{tag}] {c.name}: estimate={_fmt(c.estimate)} target={_fmt(c.target)}"
                       f" tol={_fmt(c.tolerance)}" + (f" se={_fmt(c.stderr)}" if c.stderr is not None else ""))
        return out


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


# ---------------------------------------------------------------- helpers

def _pmap(fn: Callable, jobs: list, workers: int) -> list:
    """Ordered map; results do not depend on ``workers``."""
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def _blocks(n: int, size: int = BROWNIAN_BLOCK) -> list[tuple[int, int]]:
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def _cov_check(name: str, psi: np.ndarray, G: np.ndarray, sigmas: float = 3.0) -> Check:
    """Max over unique entries of ``|cov - G| / se``; ``E psi = 0`` is used."""
    R = len(psi)
    iu = np.triu_indices(G.shape[0])
    prods = psi[:, iu[0]] * psi[:, iu[1]]
    est = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / np.sqrt(R)
    z = np.abs(est - G[iu]) / se
    return Check(name, float(z.max()), 0.0, sigmas, kind="abs", replicas=R,
                 note=f"largest |cov - G|/stderr over {len(z)} entries")


def _mass_arg(cfg: RunConfig, default=None):
    return default if cfg.mass is None else cfg.mass_fn


# ---------------------------------------------------------------- criteria 1-8: lattice

def exp_measure_oracle(cfg: RunConfig, rep: StatReport) -> None:
    maxlen = int(cfg.cutoffs.get("maxlen", 8))
    for label, spec in (("two-site", TWO_SITE), ("3x3", SQUARE3)):
        dom = build_domain(spec)
        for mlabel, m in (("critical", 0.0), ("m=0.5", 0.5)):
            k = killing_from_mass(dom, m)
            loops = enumerate_loops(dom, k, maxlen)
            worst_rot = 0.0
            acc = np.zeros((maxlen + 1, dom.n))
            for loop, w in loops:
                w_u = unrooted_weight(loop, dom, k)
                rot = math.fsum(rooted_weight(r, dom, k) for r in loop.rotations())
                worst_rot = max(worst_rot, abs(w_u - rot), abs(w - w_u))
                for s, c in loop.multiplicity.items():
                    acc[len(loop), dom.index(s)] += c / len(loop) * w_u
            q = return_probabilities(transition_kernel(dom, k), maxlen)
            worst_q = 0.0
            for L in range(2, maxlen + 1, 2):
                worst_q = max(worst_q, float(np.abs(acc[L] - q[L] / L).max()))
            rep.checks.append(Check(f"{label} {mlabel}: unrooted weight vs rotation sum", worst_rot, 0.0, 1e-12,
                                    note=f"{len(loops)} loops up to length {maxlen}"))
            rep.checks.append(Check(f"{label} {mlabel}: per-(root,length) sums vs q/length", worst_q, 0.0, 1e-12))


def exp_determinant_identities(cfg: RunConfig, rep: StatReport) -> None:
    dom2 = build_domain(TWO_SITE)
    tm = total_mass(transition_kernel(dom2))
    rep.checks.append(Check("two-site total mass vs ln(16/15)", tm, math.log(16 / 15), 1e-12))
    maxlen = int(cfg.cutoffs.get("maxlen", 12))
    dom = build_domain(SQUARE3)
    P = transition_kernel(dom)
    enum = math.fsum(w for _, w in enumerate_loops(dom, None, maxlen))
    tail = truncation_tail(P, maxlen)
    total = total_mass(P)
    rep.checks.append(Check("3x3 enumeration <= total mass", enum, total, 1e-12, kind="le"))
    rep.checks.append(Check("3x3 total mass <= enumeration + tail", total, enum + tail, 1e-12, kind="le"))
    rep.checks.append(Check("3x3 enumeration + tail vs total mass", enum + tail, total, 1e-12,
                            note="the tail is exact, so the bracket closes"))
    rep.info.update({"maxlen": maxlen, "enumerated": enum, "tail": tail, "total_mass": total})


def exp_poisson_sampling(cfg: RunConfig, rep: StatReport) -> None:
    R = cfg.replicas or 100_000
    lam = cfg.lam or 1.0
    maxlen = int(cfg.cutoffs.get("maxlen", 8))
    dom = build_domain(cfg.domain or TWO_SITE)
    soup = sample_soups(dom, lam, maxlen, cfg.seed, R, workers=cfg.workers)
    two = np.bincount(soup.replica[soup.length == 2], minlength=R)
    target = lam * intensity_table(transition_kernel(dom), 1.0, maxlen)[2].sum()
    res = poisson_gof(two, target)
    rep.checks.append(Check("2-step loop counts Poisson goodness of fit p-value", res.pvalue, 0.01, None,
                            kind="gt", replicas=R, note=f"chi2={res.statistic:.4f} df={res.df}"))
    m, se = mean_se(two)
    rep.info.update({"mean_2step": m, "mean_2step_se": se, "target_mean": target})
    rep.bias["truncation_tail"] = truncation_tail(transition_kernel(dom), maxlen)
    rep.tables["count_histogram"] = (["count", "replicas"], [[i, int(c)] for i, c in enumerate(np.bincount(two))])


def exp_massive_thinning(cfg: RunConfig, rep: StatReport) -> None:
    maxlen = int(cfg.cutoffs.get("maxlen", 20))
    for label, spec in (("two-site", TWO_SITE), ("3x3", SQUARE3)):
        dom = build_domain(spec)
        for m in (0.3, 0.5 ** 0.5, 1.0):
            P0 = transition_kernel(dom)
            thin = thinned_intensity_table(P0, m, 0.5, maxlen)
            direct = intensity_table(transition_kernel(dom, killing_from_mass(dom, m)), 0.5, maxlen)
            rep.checks.append(Check(f"{label} m={m:.4g}: thinned vs direct intensity table",
                                    float(np.abs(thin - direct).max()), 0.0, 1e-12))
    R = cfg.replicas or 100_000
    dom = build_domain(TWO_SITE)
    soup = sample_soups(dom, 1.0, 8, cfg.seed, R, workers=cfg.workers)
    msq = 0.5
    thinned = thin_to_massive(soup, msq ** 0.5)
    n0 = int(np.sum(soup.length == 2))
    n1 = int(np.sum(thinned.length == 2))
    p = n1 / n0
    se = math.sqrt(math.exp(-1) * (1 - math.exp(-1)) / n0)
    rep.checks.append(Check("2-step loop survival at m^2=0.5 vs exp(-1)", p, math.exp(-1), 4 * se,
                            stderr=se, replicas=R, note=f"{n0} two-step loops"))


def exp_laplace_identity(cfg: RunConfig, rep: StatReport) -> None:
    R = cfg.replicas or 100_000
    maxlen = int(cfg.cutoffs.get("maxlen", 40))
    dom = build_domain(cfg.domain or SQUARE3)
    masses = [0.0, 0.5] if cfg.mass is None else [cfg.mass_fn]
    for i, m in enumerate(masses):
        k = killing_from_mass(dom, m)
        soup = sample_soups(dom, 0.5, maxlen, cfg.seed + i, R, k=k, workers=cfg.workers)
        L = occupation_field(soup, seed=cfg.seed + i)
        est, se = laplace_mc(L, 1.0)
        exact = laplace_exact(precision_matrix(dom, k), 1.0)
        bias = 0.5 * truncation_tail(transition_kernel(dom, k), maxlen)
        label = f"m={m}" if not callable(m) else "m=expr"
        rep.checks.append(Check(f"{label}: Laplace transform at v=1 vs determinant ratio", est, exact,
                                3 * se + bias, stderr=se, replicas=R, note=f"bias budget {bias:.3g}"))
        rep.bias[f"{label} truncation bias budget"] = bias


def _iso_fields(dom, k, R, seed, maxlen, workers, method=None):
    soup = sample_soups(dom, 0.5, maxlen, seed, R, k=k, workers=workers, stream_name="iso-soup")
    L = occupation_field(soup, seed=seed)
    S = sample_signs(L, dom, stream(seed, "iso-signs"), method=method or ("exact" if dom.n <= 10 else "cluster"))
    return L, isomorphism_field(L, S)


def exp_iso_covariance(cfg: RunConfig, rep: StatReport) -> None:
    R = cfg.replicas or 100_000
    maxlen = int(cfg.cutoffs.get("maxlen", 40))
    for label, spec in (("one-site", ONE_SITE), ("two-site", TWO_SITE), ("3x3", SQUARE3)):
        dom = build_domain(spec)
        k = killing_from_mass(dom, _mass_arg(cfg, 0.0))
        G = green_function(precision_matrix(dom, k))
        L, psi = _iso_fields(dom, k, R, cfg.seed, maxlen, cfg.workers)
        rep.checks.append(_cov_check(f"{label}: psi covariance vs Green function", psi, G))
        # squaring sqrt(2L) is exact only to the last bit, so compare in single precision
        ks2 = max(two_sample_ks((psi[:, x] ** 2).astype(np.float32), (2 * L[:, x]).astype(np.float32)).statistic
                  for x in range(dom.n))
        rel = float(np.max(np.abs(psi**2 - 2 * L) / np.maximum(2 * L, 1e-300)))
        rep.checks.append(Check(f"{label}: KS of psi^2 vs 2L", ks2, 0.0, 0.0, replicas=R,
                                note=f"max relative gap {rel:.2g}"))
        gff = sample_gff(G, stream(cfg.seed, "iso-gff"), size=R)
        pmin = min(two_sample_ks(psi[:, x], gff[:, x]).pvalue for x in range(dom.n))
        rep.checks.append(Check(f"{label}: smallest per-site KS p-value of psi vs GFF samples", pmin, 0.01, None,
                                kind="gt", replicas=R))
        rep.bias[f"{label} truncation tail"] = truncation_tail(transition_kernel(dom, k), maxlen)


def _edge_marginals(S: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Per edge the frequencies of the four sign pairs, shape ``(E, 4)``."""
    code = (S[:, edges[:, 0]] > 0) * 2 + (S[:, edges[:, 1]] > 0)
    return np.stack([(code == c).mean(axis=0) for c in range(4)], axis=1)


def exp_sign_exactness(cfg: RunConfig, rep: StatReport) -> None:
    R = cfg.replicas or 100_000
    for label, spec in (("two-site", TWO_SITE), ("3x3", SQUARE3), ("4x4", SQUARE4)):
        dom = build_domain(spec)
        soup = sample_soups(dom, 0.5, 40, cfg.seed, 1, stream_name="sign-field")
        L = occupation_field(soup, seed=cfg.seed)[0]
        configs, probs = ising_exact(L, dom)
        edges = dom.edges()
        exact = np.stack([
            [probs[((configs[:, a] > 0) * 2 + (configs[:, b] > 0)) == c].sum() for c in range(4)]
            for a, b in edges])
        for method in ("cluster", "heat-bath"):
            S, info = sample_signs(np.tile(L, (R, 1)), dom, stream(cfg.seed, "sign-chain", method), method=method,
                                   return_info=True)
            tv = 0.5 * np.abs(_edge_marginals(S, edges) - exact).sum(axis=1).max()
            rep.checks.append(Check(f"{label} {method}: max edge-marginal total variation", float(tv), 0.0, 0.01,
                                    replicas=R, note=f"{info.sweeps} sweeps, converged={info.converged}"))
            if dom.n == 2:
                idx = ((S > 0) * (1 << np.arange(dom.n)[::-1])).sum(axis=1)
                emp = np.bincount(idx, minlength=4) / R
                ex_idx = ((configs > 0) * (1 << np.arange(dom.n)[::-1])).sum(axis=1)
                tvj = 0.5 * np.abs(emp[ex_idx] - probs).sum()
                rep.checks.append(Check(f"{label} {method}: joint total variation", float(tvj), 0.0, 0.01,
                                        replicas=R))


def exp_domain_perturbation(cfg: RunConfig, rep: StatReport) -> None:
    R = cfg.replicas or 100_000
    maxlen = int(cfg.cutoffs.get("maxlen", 40))
    dom = build_domain(cfg.domain or SQUARE3)
    m = _mass_arg(cfg, 0.3)
    x0 = int(cfg.params.get("x0", dom.index((1, 1)) if dom.contains((1, 1)) else 0))
    sub_mask = np.ones(dom.n, dtype=bool)
    sub_mask[int(cfg.params.get("removed", dom.index((0, 0)) if dom.contains((0, 0)) else dom.n - 1))] = False
    res = perturbation_coupling(dom, sub_mask, x0, m, cfg.seed, R, maxlen=maxlen)
    differ = res.psi[:, x0] != res.psi_sub[:, res.x0_sub]
    p1, se1 = mean_se(differ)
    k = killing_from_mass(dom, m)
    indep = sample_soups(dom, 0.5, maxlen, cfg.seed, R, k=k, workers=cfg.workers, stream_name="independent-soup")
    hit = loop_hit_indicator(indep, x0, ~sub_mask)
    p2, se2 = mean_se(hit)
    se = math.hypot(se1, se2)
    rep.checks.append(Check("P(fields differ at x0) vs independent loop-hit estimate", p1, p2, 3 * se,
                            stderr=se, replicas=R))
    G = green_function(precision_matrix(dom, k))
    G_sub = green_function(precision_matrix(res.subdomain, killing_from_mass(res.subdomain, m)))
    rep.checks.append(_cov_check("big-domain field covariance vs Green function", res.psi, G))
    rep.checks.append(_cov_check("subdomain field covariance vs Green function", res.psi_sub, G_sub))
    exact = loop_hit_probability_exact(dom, sub_mask, x0, m)
    rep.info.update({"coupling_estimate": p1, "independent_estimate": p2, "exact_hit_probability": exact})
    rep.bias["truncation_tail"] = truncation_tail(transition_kernel(dom, k), maxlen)


# ---------------------------------------------------------------- criterion 9: Brownian

def _brownian_block(job):
    cfg_kw, r0, r1, stream_name, mass = job
    cfg = BrownianSoupConfig(**cfg_kw)
    out = []
    for r in range(r0, r1):
        s = sample_brownian_soup(cfg, r, rng=stream(cfg.seed, stream_name, r))
        if mass is not None:
            s = thin_to_massive_brownian(s, parse_mass(mass) if isinstance(mass, str) else mass)
        out.append(s)
    return out


def _brownian_soups(cfg_kw: dict, replicas: int, stream_name: str, mass, workers: int) -> list:
    jobs = [(cfg_kw, a, b, stream_name, mass) for a, b in _blocks(replicas)]
    return [s for blk in _pmap(_brownian_block, jobs, workers) for s in blk]


def _count_summary(cfg_kw, replicas, stream_name, workers):
    jobs = [(cfg_kw, a, b, stream_name, None) for a, b in _blocks(replicas, 512)]
    return _pmap(_proposal_block, jobs, workers)


def _proposal_block(job):
    cfg_kw, r0, r1, stream_name, _ = job
    cfg = BrownianSoupConfig(**cfg_kw)
    props = [propose_loops(cfg, stream(cfg.seed, stream_name, r)) for r in range(r0, r1)]
    return np.array([len(p[1]) for p in props]), np.concatenate([p[1] for p in props])


def exp_brownian_sanity(cfg: RunConfig, rep: StatReport) -> None:
    t0 = float(cfg.cutoffs.get("t0", 0.05))
    lam = cfg.lam or 1.0
    box = cfg.domain or {"rectangle": {"x0": 0.0, "y0": 0.0, "x1": 1.0, "y1": 1.0}}
    R = cfg.replicas or 4000
    h = float(cfg.params.get("h", 0.02))
    kw = dict(domain=box, lam=lam, t0=t0, h=h, seed=cfg.seed)
    parts = _count_summary(kw, R, "brownian", cfg.workers)
    counts = np.concatenate([p[0] for p in parts])
    durs = np.concatenate([p[1] for p in parts])
    expect = BrownianSoupConfig(**kw).expected_count()
    m, se = mean_se(counts)
    rep.checks.append(Check("proposed loop count mean vs lam*Area/(2 pi t0)", m, expect, 4 * se, stderr=se,
                            replicas=R))
    frac = float(np.mean(durs > 2 * t0))
    se_f = math.sqrt(0.25 / len(durs))
    rep.checks.append(Check("P(duration > 2 t0) vs 1/2 (median = 2 t0)", frac, 0.5, 4 * se_f, stderr=se_f,
                            note=f"median={np.median(durs):.6g}, {len(durs)} loops"))
    # conformal covariance under f(z) = 2z
    a = 2.0
    Rc = int(cfg.params.get("conformal_replicas", 400))
    mass = float(cfg.params.get("conformal_mass", 1.0))
    t0c = float(cfg.params.get("conformal_t0", 0.01))
    kw1 = dict(domain=box, lam=lam, t0=t0c, h=h, seed=cfg.seed)
    soups = _brownian_soups(kw1, Rc, "conformal-source", mass, cfg.workers)
    f, fp = (lambda z: a * z), (lambda z: np.full(np.shape(z), a, dtype=complex))
    moved = [conformal_transport(l, f, fp).duration for s in soups for l in s.loops]
    mt = mass_transport(mass, lambda w: w / a, fp)
    box2 = {"rectangle": {k: a * v for k, v in box["rectangle"].items()}}
    kw2 = dict(domain=box2, lam=lam, t0=a * a * t0c, h=a * h, seed=cfg.seed)
    m_tilde = float(mt(np.array([0.5]), np.array([0.5]))[0])
    direct = [l.duration for s in _brownian_soups(kw2, Rc, "conformal-target", m_tilde, cfg.workers) for l in s.loops]
    ks = two_sample_ks(moved, direct)
    rep.checks.append(Check("conformal covariance f(z)=2z: duration KS p-value", ks.pvalue, 0.01, None, kind="gt",
                            replicas=Rc, note=f"KS={ks.statistic:.4f}, {len(moved)} vs {len(direct)} loops"))
    rep.info.update({
        "transported_mass": m_tilde,
        "expected_count_source": BrownianSoupConfig(**kw1).expected_count(),
        "expected_count_target": BrownianSoupConfig(**kw2).expected_count(),
        "t0": t0, "t0_conformal": t0c,
    })


# ---------------------------------------------------------------- criterion 10: geometry

def _carpet_block(job):
    kw, r0, r1, mass, eps, window = job
    cfg = BrownianSoupConfig(**kw)
    grid = Grid.covering(cfg.plane_domain.box, eps)
    out = []
    for r in range(r0, r1):
        s = sample_brownian_soup(cfg, r, rng=stream(cfg.seed, "carpet", r))
        if mass is not None:
            s = thin_to_massive_brownian(s, mass)
        C = carpet(build_clusters(s, grid=grid))
        i0, i1, j0, j1 = window
        out.append(C[j0:j1, i0:i1])
    return out


def _tail_block(job):
    kw, r0, r1, mass, eps, z = job
    cfg = BrownianSoupConfig(**kw)
    grid = Grid.covering(cfg.plane_domain.box, eps)
    out = []
    for r in range(r0, r1):
        s = thin_to_massive_brownian(sample_brownian_soup(cfg, r, rng=stream(cfg.seed, "tail", r)), mass)
        out.append(filled_cluster_at(build_clusters(s, grid=grid), z)[1])
    return out


def _crossing_block(job):
    kw, r0, r1, mass, eps, ls = job
    cfg = BrownianSoupConfig(**kw)
    out = []
    for r in range(r0, r1):
        s = thin_to_massive_brownian(sample_brownian_soup(cfg, r, rng=stream(cfg.seed, "crossing", r)), mass)
        out.append([crossing_event(s, (0.0, 0.0, 3.0 * l, float(l)), eps) for l in ls])
    return out


def exp_geometry(cfg: RunConfig, rep: StatReport) -> None:
    p = cfg.params
    for lam, target in ((0.0, 2.0), (1.0, 15 / 8), (0.5, 187 / 96)):
        rep.checks.append(Check(f"h({lam:g}) exact", hausdorff_prediction(lam), target, 1e-14))
    h_half = hausdorff_prediction(0.5)
    # carpet dimension
    side = float(p.get("carpet_side", 4.0))
    cells = int(p.get("carpet_cells", 512))
    eps = side / cells
    Rc = int(p.get("carpet_replicas", 40))
    sizes = (1, 2, 4, 8, 16, 32)
    window = (cells // 4, 3 * cells // 4, cells // 4, 3 * cells // 4)
    t0c = float(p.get("carpet_t0", 0.002))
    kw = dict(domain={"rectangle": {"x0": 0.0, "y0": 0.0, "x1": side, "y1": side}}, lam=0.5, t0=t0c,
              h=float(p.get("h", 0.01)), seed=cfg.seed)
    dims = {}
    for label, mass in (("critical", None), ("m=1", 1.0)):
        jobs = [(kw, a, b, mass, eps, window) for a, b in _blocks(Rc, 8)]
        rasters = [r for blk in _pmap(_carpet_block, jobs, cfg.workers) for r in blk]
        res = carpet_dimension(rasters, eps, sizes)
        dims[label] = res
        rep.checks.append(Check(f"lam=1/2 {label}: box-count slope vs h(1/2)", res["dimension"], h_half, 0.15,
                                stderr=res["stderr"], replicas=Rc,
                                note=f"eps={eps:.5g}, t0={t0c}, excluded={res['excluded']}"))
        rep.tables[f"boxcount_{label.replace('=', '')}"] = (
            ["eps", "mean_log_count"], [[e, float(v)] for e, v in zip(res["eps"], np.log(res["counts"]).mean(0))])
    # diameter tails
    Rt = int(p.get("tail_replicas", 1000))
    half = float(p.get("tail_half_width", 3.0))
    eps_t = float(p.get("tail_eps", 0.03))
    kw_t = dict(domain={"rectangle": {"x0": -half, "y0": -half, "x1": half, "y1": half}}, lam=0.5,
                t0=float(p.get("tail_t0", 0.01)), h=float(p.get("tail_h", 0.02)), seed=cfg.seed)
    tails = {}
    for mass in (1.0, 2.0):
        jobs = [(kw_t, a, b, mass, eps_t, (0.01, 0.01)) for a, b in _blocks(Rt)]
        d = np.array([x for blk in _pmap(_tail_block, jobs, cfg.workers) for x in blk])
        grid_L = np.linspace(0.0, 2 * half, 121)
        tails[mass] = cluster_diameter_tail(d, grid_L, seed=cfg.seed)
        rep.tables[f"survival_m{mass:g}"] = (["L", "survival"], [[a, b] for a, b in zip(grid_L, tails[mass]["survival"])])
    t1 = tails[1.0]
    rep.checks.append(Check("m=1: log-survival monotone decreasing", t1["monotone"], True, None, kind="flag",
                            replicas=Rt))
    rep.checks.append(Check("m=1: fitted decay length finite", float(np.isfinite(t1["xi"])), 1.0, 0.0,
                            note=f"xi={t1['xi']:.4g} se={t1['xi_se']:.3g}"))
    ok, z = contrast(tails[2.0]["xi"], tails[2.0]["xi_se"], t1["xi"], t1["xi_se"])
    rep.checks.append(Check("xi(m=1) - xi(m=2) in standard errors", z, 3.0, None, kind="gt", replicas=Rt,
                            note=f"xi(1)={t1['xi']:.4g}, xi(2)={tails[2.0]['xi']:.4g}"))
    # crossings
    ls = (1, 3, 9)
    eps_c = float(p.get("crossing_eps", 0.05))
    t0x = float(p.get("crossing_t0", 0.01))
    margin = 1.0
    dom_c = {"rectangle": {"x0": -margin, "y0": -margin, "x1": 3 * ls[-1] + margin, "y1": ls[-1] + margin}}
    cross = {}
    for lam, R, lset in ((0.5, int(p.get("crossing_replicas", 100)), ls),
                         (1.5, int(p.get("crossing_replicas_high", 60)), (3,))):
        kw_c = dict(domain=dom_c, lam=lam, t0=t0x, h=float(p.get("tail_h", 0.02)), seed=cfg.seed)
        jobs = [(kw_c, a, b, 1.0, eps_c, lset) for a, b in _blocks(R, 16)]
        A = np.array([x for blk in _pmap(_crossing_block, jobs, cfg.workers) for x in blk], dtype=float)
        cross[lam] = (A, lset)
    A, _ = cross[0.5]
    diff = A[:, -1] - A[:, 0]
    dm, dse = mean_se(diff)
    pm = A.mean(axis=0)
    rep.checks.append(Check("lam=0.5: crossing P(l=9) - P(l=1) in standard errors", dm / dse if dse > 0 else
                            (math.inf if dm > 0 else 0.0), 3.0, None, kind="gt", replicas=len(A),
                            note="P(l) = " + ", ".join(f"{l}:{v:.3f}" for l, v in zip(ls, pm))))
    rep.checks.append(Check("lam=0.5: crossing probability non-decreasing in l",
                            bool(np.all(np.diff(pm) >= 0)), True, None, kind="flag"))
    Ah, _ = cross[1.5]
    p_lo, se_lo = mean_se(A[:, 1])
    p_hi, se_hi = mean_se(Ah[:, 0])
    ok, z = contrast(p_hi, se_hi, p_lo, se_lo)
    if not (se_lo > 0 or se_hi > 0):
        z = math.inf if p_lo > p_hi else 0.0
    rep.checks.append(Check("l=3: P_cross(lam=0.5) - P_cross(lam=1.5) in standard errors", z, 3.0, None,
                            kind="gt", note=f"{p_lo:.3f} vs {p_hi:.3f}"))
    rep.info.update({"carpet_eps": eps, "tail_eps": eps_t, "crossing_eps": eps_c, "crossing_t0": t0x,
                     "tail_xi": {str(k): v["xi"] for k, v in tails.items()},
                     "tail_xi_se": {str(k): v["xi_se"] for k, v in tails.items()}})


# ---------------------------------------------------------------- criterion 11: near-critical

def _walk_stats(soup) -> dict:
    return {"durations": soup.duration, "diameters": soup.diameters(), "counts": soup.counts()}


def _brownian_stats_block(job):
    kw, r0, r1, mass = job
    cfg = BrownianSoupConfig(**kw)
    d, diam, counts = [], [], []
    for r in range(r0, r1):
        s = sample_brownian_soup(cfg, r, rng=stream(cfg.seed, "scaling-brownian", r))
        if mass is not None:
            s = thin_to_massive_brownian(s, mass)
        d.extend(l.duration for l in s.loops)
        diam.extend(l.diameter for l in s.loops)
        counts.append(len(s.loops))
    return np.array(d), np.array(diam), np.array(counts)


def _batched_ks(a: np.ndarray, b: np.ndarray, n_batches: int) -> tuple[float, float]:
    """Mean and standard error of KS statistics over ``n_batches`` disjoint sub-samples."""
    sa = np.array_split(a, n_batches)
    sb = np.array_split(b, n_batches)
    D = np.array([two_sample_ks(x, y).statistic for x, y in zip(sa, sb)])
    return float(D.mean()), float(D.std(ddof=1) / np.sqrt(n_batches))


def scaling_comparison(N_list: Sequence[int], lam: float, m, box: Sequence[float], t0: float, t_max: float,
                       replicas: int, seed: int, workers: int = 1, h: float = 0.02, n_batches: int = 10) -> dict:
    """Rescaled massive walk soups against the massive Brownian soup.

    The walk on ``Z^2 / N`` carries lattice mass ``m / (sqrt 2 N)``, so a
    loop survives with probability ``exp(-sum over visits m^2 / (2 N^2))``,
    which matches ``exp(-R_m)`` of a Brownian loop of the rescaled duration.
    Returns per-N rows and the endpoint contrasts.
    """
    N_list = [int(n) for n in N_list]
    if N_list != sorted(N_list) or N_list[0] < 4:
        raise ValueError("N_list must be ascending with N >= 4")
    if t0 < 4.0 / N_list[0] ** 2:
        raise ValueError(f"t0={t0} below 4/N^2 for N={N_list[0]}")
    mfun = parse_mass(m) if isinstance(m, str) else m
    kw = dict(domain={"rectangle": dict(zip(("x0", "y0", "x1", "y1"), map(float, box)))}, lam=lam, t0=t0,
              t_max=t_max, h=h, seed=seed)
    parts = _pmap(_brownian_stats_block, [(kw, a, b, mfun) for a, b in _blocks(replicas, 256)], workers)
    bd = np.concatenate([p[0] for p in parts])
    bdiam = np.concatenate([p[1] for p in parts])
    bc = np.concatenate([p[2] for p in parts])
    bmean, bse = mean_se(bc)
    rows = []
    for N in N_list:
        soup = sample_plane_walk_soup(box, N, lam, t0, t_max, seed, replicas, stream_name=f"scaling-walk-{N}")
        if mfun is not None:
            sq = (lambda x, y: np.asarray(mfun(x, y), dtype=float) ** 2) if callable(mfun) else \
                (lambda x, y: np.full(np.shape(x), float(mfun) ** 2))
            expo = soup.loop_sum(lambda x, y: sq(x, y) / (2.0 * N * N))
            soup = soup.subset(expo <= soup.marks)
        st = _walk_stats(soup)
        cm, cse = mean_se(st["counts"])
        kd, kd_se = _batched_ks(st["durations"], bd, n_batches)
        kg, kg_se = _batched_ks(st["diameters"], bdiam, n_batches)
        rows.append({"N": N, "count_mean": cm, "count_se": cse, "count_gap": cm - bmean,
                     "ks_duration": kd, "ks_duration_se": kd_se,
                     "ks_diameter": kg, "ks_diameter_se": kg_se, "loops": int(len(st["durations"]))})
    lo, hi = rows[0], rows[-1]
    gap_se = math.hypot(lo["count_se"], hi["count_se"])
    z_count = (abs(lo["count_gap"]) - abs(hi["count_gap"])) / gap_se if gap_se > 0 else 0.0
    _, z_dur = contrast(hi["ks_duration"], hi["ks_duration_se"], lo["ks_duration"], lo["ks_duration_se"])
    _, z_diam = contrast(hi["ks_diameter"], hi["ks_diameter_se"], lo["ks_diameter"], lo["ks_diameter_se"])
    return {"rows": rows, "brownian_count_mean": bmean, "brownian_count_se": bse,
            "brownian_loops": int(len(bd)), "z_count": z_count, "z_ks_duration": z_dur, "z_ks_diameter": z_diam}


def dichotomy_experiment(N_list: Sequence[int], alphas: Sequence[float], c: float, box: Sequence[float],
                         t0: float, t_max: float, replicas: int, seed: int) -> dict:
    """Survival of rescaled critical walk loops under lattice mass ``c N^-alpha``.

    A loop of ``|g|`` steps is killed iff ``|g| c^2 N^(-2 alpha)`` exceeds
    its Exp(1) mark.  In rescaled time ``t = |g| / (2N^2)`` the exponent is
    ``2 t c^2 N^(2 - 2 alpha)``, so survival tends to 1 when ``N m_N -> 0``
    and to 0 when ``N m_N -> infinity``.
    """
    N_list = [int(n) for n in N_list]
    if N_list != sorted(N_list) or N_list[0] < 4:
        raise ValueError("N_list must be ascending with N >= 4")
    if t0 < 4.0 / N_list[0] ** 2:
        raise ValueError(f"t0={t0} below 4/N^2 for N={N_list[0]}")
    out = {str(a): [] for a in alphas}
    for N in N_list:
        soup = sample_plane_walk_soup(box, N, 1.0, t0, t_max, seed, replicas, stream_name=f"dichotomy-{N}")
        n = len(soup)
        for a in alphas:
            mN2 = c * c * float(N) ** (-2.0 * a)
            s = float(np.mean(soup.length * mN2 <= soup.marks)) if n else float("nan")
            se = math.sqrt(max(s * (1 - s), 0.0) / n) if n else float("nan")
            out[str(a)].append({"N": N, "survival": s, "se": se, "loops": n, "N_mN": N * math.sqrt(mN2)})
    return out


def exp_near_critical(cfg: RunConfig, rep: StatReport) -> None:
    p = cfg.params
    Ns = cfg.cutoffs.get("N", [8, 16, 32, 64])
    t0 = float(cfg.cutoffs.get("t0", 0.1))
    t_max = float(cfg.cutoffs.get("t_max", 1.0))
    box = tuple(p.get("box", (0.0, 0.0, 2.0, 2.0)))
    R = cfg.replicas or 10_000
    dic = dichotomy_experiment(Ns, (1.5, 1.0, 0.5), float(p.get("c", 1.0)), box, t0, t_max,
                               int(p.get("dichotomy_replicas", R)), cfg.seed)
    for a, expect in (("1.5", "up"), ("0.5", "down")):
        lo, hi = dic[a][0], dic[a][-1]
        if expect == "up":
            _, z = contrast(lo["survival"], lo["se"], hi["survival"], hi["se"])
        else:
            _, z = contrast(hi["survival"], hi["se"], lo["survival"], lo["se"])
        rep.checks.append(Check(f"dichotomy alpha={a}: survival {'rises' if expect == 'up' else 'falls'} "
                                f"from N={lo['N']} to N={hi['N']} (standard errors)", z, 3.0, None, kind="gt",
                                note=f"{lo['survival']:.4f} -> {hi['survival']:.4f}"))
    rep.info["dichotomy"] = dic
    rep.info["dichotomy_alpha1_reported_only"] = [r["survival"] for r in dic["1.0"]]
    rep.tables["dichotomy"] = (["alpha", "N", "survival", "se", "loops"],
                               [[float(a), r["N"], r["survival"], r["se"], r["loops"]] for a in dic for r in dic[a]])
    mass = cfg.mass if cfg.mass is not None else 1.0
    sc = scaling_comparison(Ns, cfg.lam or 0.5, mass, box, t0, t_max, R, cfg.seed, cfg.workers,
                            h=float(p.get("h", 0.02)))
    rep.checks.append(Check(f"scaling: |count gap| shrinks N={Ns[0]} -> N={Ns[-1]} (standard errors)",
                            sc["z_count"], 3.0, None, kind="gt",
                            note=", ".join(f"N={r['N']}:{r['count_gap']:+.4f}" for r in sc["rows"])))
    rep.checks.append(Check(f"scaling: duration KS falls N={Ns[0]} -> N={Ns[-1]} (standard errors)",
                            sc["z_ks_duration"], 3.0, None, kind="gt",
                            note=", ".join(f"N={r['N']}:{r['ks_duration']:.4f}" for r in sc["rows"])))
    rep.checks.append(Check(f"scaling: diameter KS falls N={Ns[0]} -> N={Ns[-1]} (standard errors)",
                            sc["z_ks_diameter"], 3.0, None, kind="gt",
                            note=", ".join(f"N={r['N']}:{r['ks_diameter']:.4f}" for r in sc["rows"])))
    rep.info["scaling"] = sc
    rep.tables["scaling"] = (["N", "count_mean", "count_se", "ks_duration", "ks_duration_se", "ks_diameter",
                              "ks_diameter_se"],
                             [[r["N"], r["count_mean"], r["count_se"], r["ks_duration"], r["ks_duration_se"],
                               r["ks_diameter"], r["ks_diameter_se"]] for r in sc["rows"]])
    rep.info.update({"t0": t0, "t_max": t_max, "box": list(box)})


# ---------------------------------------------------------------- criterion 12: determinism

DETERMINISM_RUNS = (
    ("poisson-sampling", {"replicas": 5000}),
    ("laplace-identity", {"replicas": 5000}),
    ("brownian-sanity", {"replicas": 600, "params": {"conformal_replicas": 64}}),
)


def exp_determinism(cfg: RunConfig, rep: StatReport) -> None:
    for name, over in DETERMINISM_RUNS:
        texts = []
        for workers in (1, 2, 1):
            sub = RunConfig(experiment=name, seed=cfg.seed, workers=workers, **over)
            texts.append(_run(sub).to_json())
        same = len(set(texts)) == 1
        rep.checks.append(Check(f"{name}: identical report bytes over reruns and worker counts 1,2,1", same, True,
                                None, kind="flag"))


# ---------------------------------------------------------------- registry

@dataclass(frozen=True)
class Experiment:
    name: str
    criterion: int
    run: Callable[[RunConfig, StatReport], None]
    summary: str


REGISTRY: dict[str, Experiment] = {e.name: e for e in (
    Experiment("measure-oracle", 1, exp_measure_oracle, "enumerated loop weights vs return probabilities"),
    Experiment("determinant-identities", 2, exp_determinant_identities, "total mass and truncation bracket"),
    Experiment("poisson-sampling", 3, exp_poisson_sampling, "Poisson law of sampled loop counts"),
    Experiment("massive-thinning", 4, exp_massive_thinning, "thinning a critical soup into a massive one"),
    Experiment("laplace-identity", 5, exp_laplace_identity, "occupation-field Laplace transform"),
    Experiment("iso-covariance", 6, exp_iso_covariance, "sign-dressed occupation field vs free field"),
    Experiment("sign-exactness", 7, exp_sign_exactness, "sign samplers vs exact enumeration"),
    Experiment("domain-perturbation", 8, exp_domain_perturbation, "coupled fields on nested domains"),
    Experiment("brownian-sanity", 9, exp_brownian_sanity, "Brownian soup counts, durations, conformal scaling"),
    Experiment("geometry", 10, exp_geometry, "carpet dimension, cluster tails, crossings"),
    Experiment("near-critical", 11, exp_near_critical, "dichotomy and walk-to-Brownian convergence"),
    Experiment("determinism", 12, exp_determinism, "byte-identical reruns"),
)}


def available() -> list[str]:
    return list(REGISTRY)


def _run(cfg: RunConfig) -> StatReport:
    if cfg.experiment not in REGISTRY:
        raise KeyError(f"unknown experiment {cfg.experiment!r}; available: {', '.join(available())}")
    exp = REGISTRY[cfg.experiment]
    # the worker count and output path do not affect results, so reports omit them
    conf = {k: v for k, v in cfg.to_dict().items() if k not in ("workers", "out")}
    rep = StatReport(experiment=exp.name, criterion=exp.criterion, config=conf)
    t = time.perf_counter()
    exp.run(cfg, rep)
    rep.runtime = time.perf_counter() - t
    return rep


def run_experiment(cfg: RunConfig) -> StatReport:
    """Run a registered experiment; with ``cfg.out`` also write its report and tables."""
    rep = _run(cfg)
    if cfg.out:
        write_report(rep, cfg.out)
    return rep


def write_report(rep: StatReport, out_dir: str) -> str:
    """Write ``<name>.json`` (deterministic), CSV tables, and ``timings.json``."""
    from .geometry import write_table_csv

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{rep.experiment}.json")
    with open(path, "w") as fh:
        fh.write(rep.to_json())
    for name, (header, rows) in rep.tables.items():
        write_table_csv(os.path.join(out_dir, f"{rep.experiment}_{name}.csv"), header, rows)
    tpath = os.path.join(out_dir, "timings.json")
    timings = {}
    if os.path.exists(tpath):
        with open(tpath) as fh:
            timings = json.load(fh)
    timings[rep.experiment] = round(rep.runtime, 3)
    with open(tpath, "w") as fh:
        json.dump(timings, fh, sort_keys=True, indent=1)
    return path
