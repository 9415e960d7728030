"""Controller synthesis by alternating sum-of-squares feasibility steps.

The design program couples a Lyapunov function V, a controller k, a scalar
multiplier lambda, and four class-Kinf comparison functions through one
matrix inequality over the consistency ellipsoid.  V*k products make it
bilinear, so it is solved by alternation: fix k and fit (V, lambda, alphas),
then fix (V, lambda) and refit (k, alphas), for a configured number of
rounds.  Each step maximizes a scalar margin added to the matrix slot's
Gram diagonal; the margin value is recorded as a slack diagnostic, and a
step is accepted only if the extracted tuple satisfies the matrix
inequality pointwise on a sampled box.

Scale note: the constraints are nearly homogeneous in (V, lambda, alphas,
Grams), so without a normalization the solver parks the whole problem at
the epsilon floors, where the required decay alpha3 >= epsilon*r^2 is a
large fraction of V and the margin suffers.  Pinning the alpha1
coefficient sum to one forces V to be at least a unit-scale function, which
makes the epsilon floors negligible.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .consistency import ConsistencyEllipsoid, RegressorBases
from .poly import Polynomial, Variable, monomial_basis, parse_poly, variables
from .sdp import SolveOptions
from .sos import AffinePoly, CoeffVar, SosProgram
from . import verify as _verify


class SynthesisError(RuntimeError):
    pass


R_VAR = variables(["r"])


def build_classKinf(coeffs: Sequence[float], epsilon: float) -> Polynomial:
    """Polynomial sum_k c_k r^(2k); valid class Kinf when the gates hold.

    Rejects any negative coefficient and coefficient sums below epsilon,
    which are exactly the hypotheses making the function class Kinf.
    """
    cs = [float(c) for c in coeffs]
    if not cs:
        raise ValueError("at least one coefficient is required")
    if min(cs) < 0.0:
        raise ValueError(f"negative coefficient {min(cs)} in class-Kinf template")
    if sum(cs) < epsilon:
        raise ValueError(
            f"coefficient sum {sum(cs)} below epsilon {epsilon}; function "
            "would not be class Kinf")
    return Polynomial(R_VAR, {(2 * (k + 1),): c for k, c in enumerate(cs)})


@dataclass
class SynthesisConfig:
    """Degree caps, floors, and the alternation seed controller."""

    k_init: tuple[Polynomial, ...]
    deg_V: int = 2
    deg_k: int = 3
    deg_lambda: int = 4
    N1: int = 2
    N2: int = 2
    N3: int = 2
    N4: int = 2
    epsilon: float = 1e-4
    rounds: int = 3
    u_max: Optional[Polynomial] = None
    check_box: float = 2.0
    check_samples: int = 2000

    def __post_init__(self):
        self.k_init = tuple(self.k_init)
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.check_box <= 0.0 or self.check_samples < 1:
            raise ValueError("sample box check needs a positive box and count")
        if self.deg_V < 1 or self.deg_k < 1 or self.deg_lambda < 0:
            raise ValueError("degree caps must allow nonconstant V and k")
        if min(self.N1, self.N2, self.N3, self.N4) < 1:
            raise ValueError("alpha templates need at least one term")
        if not self.k_init:
            raise ValueError("k_init must have one entry per input")
        for p in self.k_init:
            if not isinstance(p, Polynomial):
                raise TypeError("k_init entries must be polynomials")
            if p.constant_term() != 0.0:
                raise ValueError("k_init must vanish at the origin")
            if p.degree() > self.deg_k:
                raise ValueError(
                    f"k_init degree {p.degree()} exceeds deg_k={self.deg_k}")


@dataclass
class SynthesisResult:
    """Controller, Lyapunov data, and Gram certificates from one alternation."""

    bases: RegressorBases
    k: tuple[Polynomial, ...]
    V: Polynomial
    alpha: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    lam: Polynomial
    epsilon: float
    certificates: dict
    history: list = field(default_factory=list)
    margin: float = 0.0
    ellipsoid_hash: str = ""

    def alpha_polys(self) -> tuple[Polynomial, ...]:
        return tuple(build_classKinf(c, self.epsilon) for c in self.alpha)

    def to_json_dict(self) -> dict:
        return {
            "variables": [v.name for v in self.bases.vars],
            "error_variables": [v.name for v in self.lam.vars[self.bases.n:]],
            "Z_basis": [p.to_string() for p in self.bases.Z],
            "W_basis": [[p.to_string() for p in row] for row in self.bases.W],
            "k": [p.to_string() for p in self.k],
            "V": self.V.to_string(),
            "lambda": self.lam.to_string(),
            "alpha": [np.asarray(c, dtype=float).tolist() for c in self.alpha],
            "epsilon": self.epsilon,
            "certificates": self.certificates,
            "history": self.history,
            "margin": self.margin,
            "ellipsoid_hash": self.ellipsoid_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, d: dict) -> "SynthesisResult":
        xv = variables(d["variables"])
        xev = variables(d["variables"] + d["error_variables"])
        bases = RegressorBases(
            xv,
            [parse_poly(s, xv) for s in d["Z_basis"]],
            [[parse_poly(s, xv) for s in row] for row in d["W_basis"]],
        )
        return cls(
            bases=bases,
            k=tuple(parse_poly(s, xv) for s in d["k"]),
            V=parse_poly(d["V"], xv),
            alpha=tuple(np.asarray(c, dtype=float) for c in d["alpha"]),
            lam=parse_poly(d["lambda"], xev),
            epsilon=float(d["epsilon"]),
            certificates=d.get("certificates", {}),
            history=d.get("history", []),
            margin=float(d.get("margin", 0.0)),
            ellipsoid_hash=d.get("ellipsoid_hash", ""),
        )

    @classmethod
    def from_json(cls, s: str) -> "SynthesisResult":
        return cls.from_json_dict(json.loads(s))


# ---------------------------------------------------------------------------
# program assembly


def _sym_sqrt(M: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def _alpha_template(prog: SosProgram, prefix: str, n_terms: int,
                    sq: Polynomial) -> tuple[AffinePoly, list[CoeffVar]]:
    """Template sum_k c_k (sq)^k with fresh nonnegative-to-be coefficients."""
    cs = prog.new_coeffs(prefix, n_terms)
    lin = {}
    power = sq
    for c in cs:
        lin[c.index] = power
        power = power * sq
    return AffinePoly(sq.vars, Polynomial.zero(sq.vars), lin), cs


def _shift_by_error(poly_or_affine, xvars, xevars):
    """Substitute x -> x + e, exactly expanded."""
    n = len(xvars)
    mapping = {
        xv: (Polynomial.from_var(xevars, xevars[i])
             + Polynomial.from_var(xevars, xevars[n + i]))
        for i, xv in enumerate(xvars)
    }
    return poly_or_affine.subst(mapping)


def assemble_theorem1(ell: ConsistencyEllipsoid, cfg: SynthesisConfig,
                      fixed: dict) -> tuple[SosProgram, dict]:
    """One alternation step as an SOS program, plus a legend of handles.

    fixed must be exactly {"k": [...]} (fit V, lambda, alphas) or
    {"V": ..., "lambda": ...} (fit k, alphas); anything else would make the
    matrix slot bilinear in the decision variables.
    """
    if ell.bases is None:
        raise SynthesisError(
            "ellipsoid carries no regressor bases; fit it with bases attached")
    bases = ell.bases
    n, m, p = bases.n, bases.m, bases.N + bases.M

    keys = set(fixed)
    if keys == {"k"}:
        mode = "fit_V"
    elif keys == {"V", "lambda"}:
        mode = "fit_k"
    else:
        raise SynthesisError(
            f"exactly one of {{'k'}} or {{'V','lambda'}} must be fixed, got "
            f"{sorted(keys)}; freeing both sides makes the program bilinear")

    xvars = bases.vars
    e_names = [f"e{i + 1}" for i in range(n)]
    clash = [v.name for v in xvars if v.name in e_names]
    if clash:
        raise SynthesisError(f"state names collide with error names: {clash}")
    xevars = variables([v.name for v in xvars] + e_names)

    prog = SosProgram()
    legend: dict = {"mode": mode, "xvars": xvars, "xevars": xevars}

    # squared norms feeding the class-Kinf templates
    sq_x = Polynomial.zero(xvars)
    for v in xvars:
        sq_x = sq_x + Polynomial.from_var(xvars, v) ** 2
    sq_x_xe = sq_x.extend(xevars)
    sq_e = Polynomial.zero(xevars)
    for i in range(n):
        sq_e = sq_e + Polynomial.from_var(xevars, xevars[n + i]) ** 2

    a3, c3 = _alpha_template(prog, "a3_", cfg.N3, sq_x_xe)
    a4, c4 = _alpha_template(prog, "a4_", cfg.N4, sq_e)
    legend["alpha_coeffs"] = {"a3": c3, "a4": c4}

    # coefficient gates: nonnegative, sums at least epsilon (small headroom
    # so solver-accurate results still clear the exact gate downstream);
    # alpha2 is fit after the solve, directly against the extracted V
    eps_row = _eps_row(cfg.epsilon)
    for cs in (c3, c4):
        for c in cs:
            prog.add_linear([(c, 1.0)], 0.0, ">=")
        prog.add_linear([(c, 1.0) for c in cs], eps_row, ">=")

    a1 = None
    if mode == "fit_V":
        # scale normalization, only meaningful while V is free: pin the
        # alpha1 sum so V is bounded below by a unit-scale class-Kinf
        # function, keeping the epsilon floors negligible
        a1, c1 = _alpha_template(prog, "a1_", cfg.N1, sq_x)
        legend["alpha_coeffs"]["a1"] = c1
        for c in c1:
            prog.add_linear([(c, 1.0)], 0.0, ">=")
        prog.add_linear([(c, 1.0) for c in c1], eps_row, ">=")
        eta = 1.0
        prog.add_linear([(c, 1.0) for c in c1], eta, "==")
        legend["eta"] = eta

    if mode == "fit_V":
        kfix = []
        for pk in fixed["k"]:
            if pk.constant_term() != 0.0:
                raise SynthesisError("fixed controller must vanish at the origin")
            kfix.append(pk if pk.vars == xvars else pk.extend(xvars))
        if len(kfix) != m:
            raise SynthesisError(f"controller needs {m} entries, got {len(kfix)}")
        k_parts = kfix
        V_mons = monomial_basis(xvars, cfg.deg_V, include_constant=False)
        V, v_cs = prog.template(xvars, V_mons, "v_")
        lam_mons = monomial_basis(xevars, cfg.deg_lambda, include_constant=True)
        lam, l_cs = prog.template(xevars, lam_mons, "l_")
        # with alpha2 fit outside the program, these caps cut the scaling
        # ray (V, lambda, alpha3, alpha4, margin) -> gamma * (...) from above
        for c in (*v_cs, *l_cs):
            prog.add_linear([(c, 1.0)], 1e3, "<=")
            prog.add_linear([(c, 1.0)], -1e3, ">=")
        legend["V_coeffs"], legend["lam_coeffs"] = v_cs, l_cs
    else:
        Vf = fixed["V"]
        lamf = fixed["lambda"]
        V = AffinePoly.promote(Vf if Vf.vars == xvars else Vf.extend(xvars), xvars)
        lam = AffinePoly.promote(
            lamf if lamf.vars == xevars else lamf.extend(xevars), xevars)
        k_mons = monomial_basis(xvars, cfg.deg_k, include_constant=False)
        k_parts = []
        legend["k_coeffs"] = []
        for j in range(m):
            kj, kc = prog.template(xvars, k_mons, f"k{j}_")
            k_parts.append(kj)
            legend["k_coeffs"].append(kc)
    legend["V"], legend["lam"], legend["k"] = V, lam, k_parts

    # phi = [Z(x); W(x) k(x+e)] over the stacked variables
    k_shift = [_shift_by_error(kj, xvars, xevars) for kj in k_parts]
    phi: list = [z.extend(xevars) for z in bases.Z]
    for row in bases.W:
        acc = AffinePoly.promote(0.0, xevars)
        for wij, ks in zip(row, k_shift):
            acc = acc + AffinePoly.promote(ks, xevars) * wij.extend(xevars)
        phi.append(acc)

    grad_V = [AffinePoly.promote(V, xvars).diff(v).extend(xevars) for v in xvars]
    lam_xe = AffinePoly.promote(lam, xevars)
    a3_xe = AffinePoly.promote(a3, xevars)
    a4_xe = AffinePoly.promote(a4, xevars)

    zeta = ell.zeta_bar            # (p, n)
    Q_sqrt = _sym_sqrt(ell.Q_bar)  # (n, n)
    Ainv = ell.A_bar_inv_sqrt      # (p, p)

    # dissipation block matrix, negated into the SOS slot
    d = 1 + n + p
    S = [[AffinePoly.promote(0.0, xevars) for _ in range(d)] for _ in range(d)]
    s00 = a4_xe - a3_xe
    for l in range(n):
        zphi = AffinePoly.promote(0.0, xevars)
        for a in range(p):
            if zeta[a, l]:
                zphi = zphi + AffinePoly.promote(phi[a], xevars) * float(zeta[a, l])
        s00 = s00 - grad_V[l] * zphi
    S[0][0] = s00
    for i in range(n):
        entry = AffinePoly.promote(0.0, xevars)
        for l in range(n):
            if Q_sqrt[i, l]:
                entry = entry - grad_V[l] * float(Q_sqrt[i, l])
        S[1 + i][0] = entry
        S[0][1 + i] = entry
    for a in range(p):
        entry = AffinePoly.promote(0.0, xevars)
        for b in range(p):
            if abs(Ainv[a, b]) > 0.0:
                # exactly one of lambda / phi carries decision variables here
                entry = entry - lam_xe * AffinePoly.promote(phi[b], xevars) \
                    * float(Ainv[a, b])
        S[1 + n + a][0] = entry
        S[0][1 + n + a] = entry
    for i in range(1, d):
        S[i][i] = lam_xe * 2.0

    # per-row Gram bases: the scalar row covers the full target degree, the
    # shaping rows only need affine elements; cheap and matches the degree
    # bookkeeping of the matched coefficients
    deg_phi = max(max(z.degree() for z in bases.Z),
                  max(max(q.degree() for q in row) for row in bases.W) + cfg.deg_k)
    row0_deg = max(2 * max(cfg.N3, cfg.N4),
                   max(cfg.deg_V - 1, 0) + deg_phi)
    row0_deg = (row0_deg + 1) // 2
    rows_deg = max(1, (cfg.deg_V) // 2)
    z0 = monomial_basis(xevars, row0_deg, include_constant=True)
    zr = monomial_basis(xevars, rows_deg, include_constant=True)
    z_bases = [z0] + [zr] * (n + p)
    cliq1 = [(0, q) for q in range(len(z0))] + \
            [(1 + i, q) for i in range(n) for q in range(len(zr))]
    cliq2 = [(0, q) for q in range(len(z0))] + \
            [(1 + n + a, q) for a in range(p) for q in range(len(zr))]

    t = prog.new_coeff("t_margin")
    legend["t"] = t
    h4 = prog.add_matrix_sos(S, z_bases=z_bases, cliques=[cliq1, cliq2],
                             margin=t, margin_skip_constant=True, name="s4")

    legend["s_handles"] = {"s4": h4}
    if mode == "fit_V":
        # lower sandwich (carries the scale pin) and multiplier floor only
        # constrain the free (V, lambda); with them fixed these slots have
        # no interior and are certified separately against the extraction
        sb = monomial_basis(
            xvars, max(1, (max(cfg.deg_V, 2 * cfg.N1, 2 * cfg.N2) + 1) // 2),
            include_constant=False)
        h1 = prog.add_scalar_sos(AffinePoly.promote(V, xvars) - a1,
                                 basis=sb, name="s1")
        s3b = monomial_basis(xevars, max(1, (cfg.deg_lambda + 1) // 2),
                             include_constant=True)
        h3 = prog.add_scalar_sos(lam_xe - cfg.epsilon, basis=s3b, name="s3")
        legend["s_handles"].update({"s1": h1, "s3": h3})

    if cfg.u_max is not None and mode == "fit_k":
        u2 = cfg.u_max if cfg.u_max.vars == xvars else cfg.u_max.extend(xvars)
        B = [[AffinePoly.promote(0.0, xvars) for _ in range(1 + m)]
             for _ in range(1 + m)]
        B[0][0] = AffinePoly.promote(u2 * u2, xvars)
        for j in range(m):
            kj = AffinePoly.promote(k_parts[j], xvars)
            B[0][1 + j] = kj * -1.0
            B[1 + j][0] = kj * -1.0
            B[1 + j][1 + j] = AffinePoly.promote(1.0, xvars)
        ub0 = monomial_basis(xvars, max(1, u2.degree()), include_constant=True)
        ubr = monomial_basis(xvars, max(1, (cfg.deg_k + 1) // 2),
                             include_constant=True)
        h5 = prog.add_matrix_sos(B, z_bases=[ub0] + [ubr] * m, name="s5")
        legend["s_handles"]["s5"] = h5

    # objective: grow the margin; the tiny alpha4 penalty keeps the error
    # weight from inflating freely, which would shrink the triggering
    # threshold (and hence inter-event times) to nothing, and the penalty
    # on higher alpha3 terms pins an otherwise flat split between its
    # coefficients that the solver would leave at noise level
    prog.set_objective(
        [(t, 1.0)] + [(c, -1e-3) for c in c4] + [(c, -1e-3) for c in c3[1:]],
        "max")
    return prog, legend


# ---------------------------------------------------------------------------
# alternation


def _localize_infeasibility(sol) -> str:
    """Name the constraint family the dual improving ray concentrates on."""
    fams = sol.index.get("row_families", [])
    y = np.abs(np.asarray(sol.sdp.y, dtype=float))
    if y.size == 0 or y.max() == 0.0 or not fams:
        return "no dual ray available"
    scores = [(name, float(y[a:b].sum())) for name, a, b in fams if b > a]
    total = sum(s for _, s in scores) or 1.0
    name, mass = max(scores, key=lambda t: t[1])
    return f"dual ray concentrates on {name} rows ({100.0 * mass / total:.0f}% of mass)"


def _eps_row(epsilon: float) -> float:
    """Gate level for alpha coefficient sums, a hair above epsilon."""
    return epsilon + max(1e-7, 1e-6 * epsilon)


def _clip_alpha(vals: np.ndarray, name: str) -> np.ndarray:
    # the coupled solve satisfies rows only to ~1e-5 absolute, so allow
    # that much noise before declaring the sign genuinely wrong
    if vals.min() < -1e-4:
        raise SynthesisError(
            f"{name} coefficient {vals.min():.3e} is negative beyond solver noise")
    return np.maximum(vals, 0.0)


def _chop(p: Polynomial, rel: float = 1e-10) -> Polynomial:
    """Drop coefficients below rel * max(1, |largest coefficient|).

    Interior-point extraction leaves 1e-13-ish dust on every template
    monomial; chopping keeps the stored polynomials readable without
    moving any sampled value by more than basis-size * cutoff.
    """
    if not p.terms:
        return p
    cut = rel * max(1.0, max(abs(c) for c in p.terms.values()))
    return Polynomial(p.vars, {e: c for e, c in p.terms.items() if abs(c) >= cut})


def _cert_entry(sol, h: int, fold: bool = True) -> dict:
    entry = sol.index["grams"][h]
    meta = entry["meta"]
    if meta["kind"] == "matrix":
        names = [f"_q{i}" for i in range(meta["n_rows"])] \
            + [v.name for v in meta["vars"]]
    else:
        names = [v.name for v in meta["vars"]]
    return {
        "blocks": [np.asarray(G).tolist() for G in sol.gram(h, fold=fold)],
        "block_exps": [[list(e) for e in blk] for blk in entry["blocks"]],
        "vars": names,
    }


def _extract_certificates(sol, legend) -> dict:
    """Matrix-slot certificates from the coupled solve.

    The s4 blocks are stored unfolded: they are PSD and certify
    s4 - margin * (masked Gram diagonal), with the margin and mask stored
    alongside.  s5, when present, is a plain Gram certificate.
    """
    certs = {"s4": _cert_entry(sol, legend["s_handles"]["s4"], fold=False)}
    entry = sol.index["grams"][legend["s_handles"]["s4"]]
    certs["s4"]["margin"] = float(sol.coeff(legend["t"]))
    certs["s4"]["margin_mask"] = [
        [float(v) for v in blk] for blk in entry["margin_mask"]]
    if "s5" in legend["s_handles"]:
        certs["s5"] = _cert_entry(sol, legend["s_handles"]["s5"])
    return certs


def _refit_envelopes(V: Polynomial, lam: Polynomial, cfg: SynthesisConfig,
                     xvars, xevars) -> tuple[np.ndarray, np.ndarray, dict]:
    """Fit the sandwich envelopes around an extracted V in small solves.

    The coupled step solve leaves absolute row error near its convergence
    floor, too loose for the sandwich and reconstruction tolerances.  These
    single-purpose programs are tiny and well scaled, so their Grams come
    back orders of magnitude tighter.  alpha1 is pushed up (largest lower
    envelope), alpha2 down (smallest upper envelope); the multiplier floor
    slot is re-certified against the chopped lambda.
    """
    eps_row = _eps_row(cfg.epsilon)
    sq_x = Polynomial.zero(xvars)
    for v in xvars:
        sq_x = sq_x + Polynomial.from_var(xvars, v) ** 2
    sb = monomial_basis(
        xvars, max(1, (max(V.degree(), 2 * cfg.N1, 2 * cfg.N2) + 1) // 2),
        include_constant=False)

    vals: dict[str, np.ndarray] = {}
    certs: dict[str, dict] = {}
    for name, prefix, n_terms, sense in (("s1", "a1_", cfg.N1, "max"),
                                         ("s2", "a2_", cfg.N2, "min")):
        prog = SosProgram()
        a, cs = _alpha_template(prog, prefix, n_terms, sq_x)
        for c in cs:
            prog.add_linear([(c, 1.0)], 0.0, ">=")
        prog.add_linear([(c, 1.0) for c in cs], eps_row, ">=")
        Vp = AffinePoly.promote(V, xvars)
        target = (Vp - a) if name == "s1" else (a - Vp)
        h = prog.add_scalar_sos(target, basis=sb, name=name)
        prog.set_objective([(c, 1.0) for c in cs], sense)
        sol = prog.solve()
        if sol.status not in ("optimal", "feasible"):
            raise SynthesisError(
                f"envelope refit {name} failed with status {sol.status}")
        vals[name] = _clip_alpha(
            np.array([sol.coeff(c) for c in cs]), prefix.rstrip("_"))
        certs[name] = _cert_entry(sol, h)

    prog = SosProgram()
    lam_p = lam if lam.vars == xevars else lam.extend(xevars)
    s3b = monomial_basis(xevars, max(1, (lam_p.degree() + 1) // 2),
                         include_constant=True)
    h = prog.add_scalar_sos(
        AffinePoly.promote(lam_p, xevars) - cfg.epsilon, basis=s3b, name="s3")
    sol = prog.solve()
    if sol.status not in ("optimal", "feasible"):
        raise SynthesisError(
            f"multiplier floor re-certification failed: {sol.status}")
    certs["s3"] = _cert_entry(sol, h)
    return vals["s1"], vals["s2"], certs


def alternate(ell: ConsistencyEllipsoid, cfg: SynthesisConfig,
              opts: SolveOptions | None = None,
              verify_seed: int = 0) -> SynthesisResult:
    """Run the two-step alternation and return a fully verified result.

    The first step fixes k = cfg.k_init and fits (V, lambda, alphas); the
    second fixes (V, lambda) and refits (k, alphas); rounds repeat the pair.
    A first step that is infeasible, or whose extracted tuple fails the
    sampled matrix check, raises; a later failure stops the loop and the
    last accepted step is returned.  The returned tuple is re-verified by
    the independent oracles before being handed back; verification failure
    of a solver-accepted result is a hard error.
    """
    if ell.bases is None:
        raise SynthesisError(
            "ellipsoid carries no regressor bases; fit it with bases attached")
    if len(cfg.k_init) != ell.bases.m:
        raise SynthesisError(
            f"k_init needs {ell.bases.m} entries, got {len(cfg.k_init)}")
    for pk in cfg.k_init:
        if {v.name for v in pk.vars} - {v.name for v in ell.bases.vars}:
            raise SynthesisError("k_init uses variables outside the state tuple")

    k_cur: tuple[Polynomial, ...] = tuple(
        pk if pk.vars == ell.bases.vars else pk.extend(ell.bases.vars)
        for pk in cfg.k_init)
    V_cur: Polynomial | None = None
    lam_cur: Polynomial | None = None
    best: dict | None = None
    history: list[dict] = []

    def run_step(rnd: int, step: str) -> bool:
        nonlocal k_cur, V_cur, lam_cur, best
        fixed = {"k": list(k_cur)} if step == "V" else \
            {"V": V_cur, "lambda": lam_cur}
        prog, legend = assemble_theorem1(ell, cfg, fixed)
        t0 = time.perf_counter()
        sol = prog.solve(opts)
        rec = {"round": rnd, "step": step, "status": sol.status,
               "seconds": round(time.perf_counter() - t0, 3)}
        if sol.status not in ("optimal", "feasible"):
            rec["diagnostic"] = _localize_infeasibility(sol)
            history.append(rec)
            return False
        t_val = float(sol.coeff(legend["t"]))
        rec["t"] = t_val
        rec["objective"] = None if sol.objective is None else -float(sol.objective)
        # alpha extraction with gate repair: the coupled solve can leave a
        # sum a hair under the epsilon gate, so bump the r^2 coefficient
        eps_row = _eps_row(cfg.epsilon)
        try:
            ext = {}
            for nm, cs in legend["alpha_coeffs"].items():
                v = _clip_alpha(np.array([sol.coeff(c) for c in cs]), nm)
                if v.sum() < eps_row:
                    v[0] += eps_row - v.sum()
                ext[nm] = v
            if step == "V":
                V_new = _chop(sol.value(legend["V"]))
                lam_new = _chop(sol.value(legend["lam"]))
                k_new = k_cur
                a1_new, a2_new, env_certs = _refit_envelopes(
                    V_new, lam_new, cfg, legend["xvars"], legend["xevars"])
            else:
                V_new, lam_new = V_cur, lam_cur
                k_new = tuple(_chop(sol.value(kj)) for kj in legend["k"])
                # V and lambda are unchanged, so the envelope fits carry over
                a1_new, a2_new = best["alpha"][0], best["alpha"][1]
                env_certs = {nm: best["certificates"][nm]
                             for nm in ("s1", "s2", "s3")}
        except SynthesisError as exc:
            rec["status"] = "extraction-failure"
            rec["diagnostic"] = str(exc)
            history.append(rec)
            return False
        alphas = (a1_new, a2_new, ext["a3"], ext["a4"])
        # the Gram margin t is a slack diagnostic, not the acceptance test:
        # the extracted tuple must satisfy the matrix inequality pointwise
        # on the sample box
        rng = np.random.default_rng(1000 * rnd + (0 if step == "V" else 1))
        XE = rng.uniform(-cfg.check_box, cfg.check_box,
                         size=(cfg.check_samples, 2 * ell.bases.n))
        M = _verify.theorem1_matrix_values(
            ell, ell.bases, V_new, k_new, lam_new, alphas[2], alphas[3], XE)
        worst = float(np.linalg.eigvalsh(M)[:, -1].max())
        rec["box_worst"] = worst
        if worst > 1e-6:
            rec["status"] = "feasibility-loss"
            rec["diagnostic"] = (
                "solver-accepted step violates the matrix inequality on the "
                f"sample box (worst eigenvalue {worst:.3e})")
            history.append(rec)
            return False
        V_cur, lam_cur, k_cur = V_new, lam_new, k_new
        best = {
            "k": k_cur, "V": V_cur, "lam": lam_cur, "alpha": alphas,
            "certificates": {**env_certs, **_extract_certificates(sol, legend)},
            "margin": t_val,
        }
        history.append(rec)
        return True

    stopped = False
    for rnd in range(1, cfg.rounds + 1):
        for step in ("V", "k"):
            ok = run_step(rnd, step)
            if not ok:
                if best is None:
                    rec = history[-1]
                    raise SynthesisError(
                        "infeasible-first-step (bad k_init): status "
                        f"{rec['status']}, {rec.get('diagnostic', '')}")
                stopped = True
                break
        if stopped:
            break

    assert best is not None
    res = SynthesisResult(
        bases=ell.bases, k=best["k"], V=best["V"], alpha=best["alpha"],
        lam=best["lam"], epsilon=cfg.epsilon,
        certificates=best["certificates"], history=history,
        margin=best["margin"],
        ellipsoid_hash=hashlib.sha256(ell.to_json().encode()).hexdigest(),
    )
    reports = _verify.verify_suite(res, ell, seed=verify_seed)
    failed = [r for r in reports if not r.passed]
    if failed:
        lines = "; ".join(r.summary() for r in failed)
        raise SynthesisError(
            f"verification failed on a solver-accepted result: {lines}")
    return res


def scale_lyapunov(res: SynthesisResult, gamma: float) -> SynthesisResult:
    """Scale (V, lambda, all alphas) jointly by gamma > 0.

    The sandwich and dissipation constraints are jointly homogeneous in
    these quantities, so feasibility is preserved for any positive gamma;
    certificates are dropped because their targets pick up the unscaled
    epsilon offset.
    """
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    return SynthesisResult(
        bases=res.bases, k=res.k, V=res.V * gamma,
        alpha=tuple(np.asarray(c, dtype=float) * gamma for c in res.alpha),
        lam=res.lam * gamma, epsilon=res.epsilon, certificates={},
        history=list(res.history), margin=res.margin * gamma,
        ellipsoid_hash=res.ellipsoid_hash,
    )
