"""Brute-force NPMLE for tiny instances, used to check the AMLE.

The real line is cut at every endpoint of every observation-derived set.
Pieces (single points and open gaps) that belong to the same sets are
grouped into atoms, and the likelihood is maximized over the masses of the
atoms and the piecewise recall matrix jointly by multi-start quasi-Newton
search.  Dominated atoms can be removed beforehand; comparing the two
maxima checks that the removal loses nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .model import Dataset, PiecewiseRecall
from .nonparametric import CENSORED, recall_types

MAX_SUBJECTS = 6
MAX_KNOTS = 2


class TooLarge(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AtomSystem:
    """Atoms of the observation algebra and their likelihood coefficients.

    ``types[i, r]``/``segs[i, r]`` give the recall matrix entry multiplying
    atom ``r`` for subject ``i``; type ``-1`` means factor 1 (censored rows)
    and ``-2`` means the atom is outside the subject's set.
    """

    signatures: tuple
    representatives: np.ndarray
    types: np.ndarray
    segs: np.ndarray
    n_exact: int
    n_types: int
    n_segments: int

    def __len__(self):
        return len(self.signatures)

    def coefficients(self, b):
        vals = b[np.maximum(self.types, 0), self.segs]
        vals = np.where(self.types == CENSORED, 1.0, vals)
        return np.where(self.types == -2, 0.0, vals)

    def subset(self, keep):
        keep = np.asarray(keep)
        return AtomSystem(tuple(self.signatures[k] for k in keep), self.representatives[keep],
                          self.types[:, keep], self.segs[:, keep], self.n_exact,
                          self.n_types, self.n_segments)

    def dominated(self):
        """Indices of atoms removed by the containment and point-shift rules."""
        sigs = [frozenset(s) for s in self.signatures]
        out = set()
        for r, s in enumerate(sigs):
            for r2, s2 in enumerate(sigs):
                if r == r2:
                    continue
                if s < s2:
                    out.add(r)
                    break
                extra, missing = s2 - s, s - s2
                if (len(extra) == 1 and len(missing) == 1):
                    (j,), (k,) = extra, missing
                    if j < self.n_exact and k == j + self.n_exact:
                        out.add(r)
                        break
        return sorted(out)

    def reduced(self) -> "AtomSystem":
        drop = set(self.dominated())
        return self.subset([r for r in range(len(self)) if r not in drop])

    def exact_points(self) -> "AtomSystem":
        """Atoms sitting on exactly recalled ages only."""
        return self.subset([r for r, s in enumerate(self.signatures)
                            if any(j < self.n_exact for j in s)])


def build_atoms(data: Dataset, knots, t_max=None) -> AtomSystem:
    knots = np.asarray(knots, float)
    if len(data) > MAX_SUBJECTS or len(knots) > MAX_KNOTS:
        raise TooLarge(f"oracle handles at most {MAX_SUBJECTS} subjects and {MAX_KNOTS} knots")
    types = recall_types(data)
    lo, hi = data.recall_bounds()
    exact = np.flatnonzero(types == 0)
    tv = np.sort(data.v[exact])
    exact = exact[np.argsort(data.v[exact])]
    s = data.s
    t_min = min(np.nanmin(lo), s.min() - knots[-1] - 1.0)
    t_min = min(t_min, 0.0)
    if t_max is None:
        t_max = max(s.max(), tv.max() if len(tv) else 0.0) + 1.0
    rec = PiecewiseRecall(knots, np.ones((1, len(knots))))

    cuts = {t_min, t_max}
    cuts.update(s.tolist())
    cuts.update(tv.tolist())
    for i in range(len(data)):
        cuts.update((s[i] - knots).tolist())
        if types[i] in (1, 2):
            cuts.update((lo[i], hi[i]))
    cuts = np.array(sorted(c for c in cuts if t_min <= c <= t_max))
    reps = np.concatenate([cuts, (cuts[:-1] + cuts[1:]) / 2])

    # B sets as membership predicates over the piece representatives
    sets = [reps == t for t in tv]
    sets += [reps > t for t in tv]
    extra = []
    seg_of = rec.segment(np.maximum(s[:, None] - reps, 0.0))
    for i in range(len(data)):
        if types[i] == CENSORED:
            extra.append(reps > s[i])
        elif types[i] in (1, 2, 3):
            inside = reps <= s[i]
            if types[i] in (1, 2):
                inside &= (reps >= lo[i]) & (reps <= hi[i])
            for seg in range(len(knots)):
                extra.append(inside & (seg_of[i] == seg))
    seen = {m.tobytes() for m in sets}
    for m in extra:
        if m.any() and m.tobytes() not in seen:
            seen.add(m.tobytes())
            sets.append(m)
    member = np.array(sets)

    groups = {}
    for p in range(len(reps)):
        sig = tuple(np.flatnonzero(member[:, p]))
        if sig:
            groups.setdefault(sig, []).append(p)
    sigs = tuple(groups)
    rep = np.array([reps[groups[g][0]] for g in sigs])

    n, R = len(data), len(sigs)
    tcode = np.full((n, R), -2)
    segs = np.zeros((n, R), int)
    seg_rep = rec.segment(np.maximum(s[:, None] - rep, 0.0))
    for i in range(n):
        if types[i] == CENSORED:
            tcode[i] = np.where(rep > s[i], CENSORED, -2)
            continue
        if types[i] == 0:
            ok = rep == data.v[i]
        elif types[i] == 3:
            ok = rep <= s[i]
        else:
            ok = (rep >= lo[i]) & (rep <= min(hi[i], s[i]))
        tcode[i] = np.where(ok, types[i], -2)
        segs[i] = seg_rep[i]
    return AtomSystem(sigs, rep, tcode, segs, len(tv), 4, len(knots))


def _unpack(z, atoms: AtomSystem):
    R = len(atoms)
    q = special.softmax(z[:R])
    b = special.softmax(z[R:].reshape(atoms.n_types, atoms.n_segments), axis=0)
    return q, b


def _objective(z, atoms: AtomSystem):
    """Negative log-likelihood and its gradient in softmax coordinates."""
    q, b = _unpack(z, atoms)
    alpha = atoms.coefficients(b)
    tot = alpha @ q
    if np.any(tot <= 0):
        return 1e10, np.zeros_like(z)
    w = 1.0 / tot
    g_q = -(w @ alpha)
    live = atoms.types >= 0
    g_b = np.zeros_like(b)
    contrib = -(w[:, None] * q[None, :])
    np.add.at(g_b, (atoms.types[live], atoms.segs[live]), contrib[live])
    dz_q = q * (g_q - q @ g_q)
    dz_b = b * (g_b - (b * g_b).sum(axis=0))
    return -np.sum(np.log(tot)), np.concatenate([dz_q, dz_b.ravel()])


def maximize(atoms: AtomSystem, starts=24, seed=0):
    """Maximum log-likelihood over atom masses and recall matrix.

    Starts are the uniform point plus Dirichlet draws; each is polished by
    L-BFGS on a softmax parametrization.
    """
    rng = np.random.default_rng(seed)
    R, k = len(atoms), atoms.n_types * atoms.n_segments
    best = None
    for i in range(starts):
        z0 = np.zeros(R + k) if i == 0 else np.log(rng.dirichlet(np.ones(R + k)) + 1e-3) * 2
        res = optimize.minimize(_objective, z0, args=(atoms,), jac=True, method="L-BFGS-B",
                                options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-10})
        if best is None or res.fun < best.fun:
            best = res
    q, b = _unpack(best.x, atoms)
    return -best.fun, q, b


@dataclass(frozen=True)
class OracleResult:
    loglik: float
    loglik_reduced: float
    loglik_restricted: float
    masses: np.ndarray
    atoms: AtomSystem
    n_removed: int


def brute_force_npmle(data: Dataset, knots, starts=24, seed=0) -> OracleResult:
    """Maximize over all atoms, over the reduced atoms, and over exact points only."""
    atoms = build_atoms(data, knots)
    full, q, _ = maximize(atoms, starts, seed)
    reduced = atoms.reduced()
    red, _, _ = maximize(reduced, starts, seed)
    restricted, _, _ = maximize(atoms.exact_points(), starts, seed)
    return OracleResult(full, red, restricted, q, atoms, len(atoms) - len(reduced))
