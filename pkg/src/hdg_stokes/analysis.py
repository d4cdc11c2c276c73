"""Manufactured solutions, error norms, convergence studies and tau sweeps."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import sympy

from .global_solver import solve_stokes
from .mesh import (
    DIRICHLET,
    FAMILIES,
    NEUMANN,
    Mesh,
    classify_boundary,
    generate_cartesian_mesh,
)
from .postprocess import PostprocessedField, postprocess_all
from .ref_element import MappedCell, build_reference_element, cell_basis, face_type
from .voigt import VoigtOps

DEFAULT_TAU = {"quad": 4.0, "tri1": 4.0, "tri2": 40.0, "hex": 4.0, "tet": 4.0}

PROBLEM_NAMES = ("wang2d", "exp3d", "poly2d", "poly3d")


@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form Stokes solution used for boundary data and error norms.

    velocity, pressure and velocity_gradient are vectorized callables of the
    physical coordinates (complex-safe, so tests can differentiate them by
    complex step); velocity_gradient[i, j] holds du_i/dx_j.  source may be
    None for a zero body force.
    """

    name: str
    dim: int
    viscosity: float
    domain: tuple
    velocity: object
    pressure: object
    velocity_gradient: object
    source: object = None
    neumann_predicate: object = None

    def traction(self, x, normal):
        """Boundary traction sigma . n of the exact solution."""
        g = np.asarray(self.velocity_gradient(x))
        p = np.asarray(self.pressure(x))
        sig = self.viscosity * (g + np.swapaxes(g, -1, -2))
        for i in range(self.dim):
            sig[..., i, i] -= p
        return np.einsum("qij,qj->qi", sig, np.asarray(normal))

    def mixed_exact(self, x):
        """The Voigt strain unknown of the scheme, -D^(1/2) (strain of u)."""
        ops = VoigtOps(self.dim, self.viscosity)
        g = np.asarray(self.velocity_gradient(x))
        return -ops.d_sqrt * ops.strain_from_gradient(g)


def wang_flow() -> ManufacturedSolution:
    """Beltrami-type flow on the unit square: zero pressure and body force,
    Neumann boundary along x2 = 0."""
    a = b = lam = 1.0

    def velocity(x):
        e = np.exp(-lam * x[:, 1])
        return np.stack(
            [
                2.0 * a * x[:, 1] - b * lam * np.cos(lam * x[:, 0]) * e,
                b * lam * np.sin(lam * x[:, 0]) * e,
            ],
            axis=-1,
        )

    def pressure(x):
        return np.zeros(len(x), dtype=np.asarray(x).dtype)

    def velocity_gradient(x):
        e = np.exp(-lam * x[:, 1])
        sin, cos = np.sin(lam * x[:, 0]), np.cos(lam * x[:, 0])
        g11 = b * lam**2 * sin * e
        g12 = 2.0 * a + b * lam**2 * cos * e
        g21 = b * lam**2 * cos * e
        g22 = -b * lam**2 * sin * e
        return np.stack(
            [np.stack([g11, g12], -1), np.stack([g21, g22], -1)], axis=-2
        )

    return ManufacturedSolution(
        name="wang2d",
        dim=2,
        viscosity=1.0,
        domain=((0.0, 1.0), (0.0, 1.0)),
        velocity=velocity,
        pressure=pressure,
        velocity_gradient=velocity_gradient,
        source=None,
        neumann_predicate=lambda c: abs(c[1]) < 1e-12,
    )


def exp_flow_3d() -> ManufacturedSolution:
    """Exponential divergence-free flow on the unit cube with parabolic
    pressure, Neumann boundary along x3 = 0."""
    a, b = 1.0, 0.5
    lap = a * a + b * b + (a + b) ** 2  # each factor is a Laplacian eigenfunction

    def _factors(x):
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        E1 = np.exp(a * (x1 - x3) + b * (x2 - x3))
        E2 = np.exp(a * (x3 - x2) + b * (x1 - x2))
        E3 = np.exp(a * (x2 - x1) + b * (x3 - x1))
        return E1, E2, E3

    def velocity(x):
        E1, E2, E3 = _factors(x)
        return np.stack([b * E1 - a * E2, b * E3 - a * E1, b * E2 - a * E3], axis=-1)

    def pressure(x):
        return x[:, 0] * (1.0 - x[:, 0])

    def velocity_gradient(x):
        E1, E2, E3 = _factors(x)
        d1 = np.stack([a * E1, b * E1, -(a + b) * E1], -1)
        d2 = np.stack([b * E2, -(a + b) * E2, a * E2], -1)
        d3 = np.stack([-(a + b) * E3, a * E3, b * E3], -1)
        return np.stack([b * d1 - a * d2, b * d3 - a * d1, b * d2 - a * d3], axis=-2)

    def source(x):
        grad_p = np.stack(
            [1.0 - 2.0 * x[:, 0], np.zeros(len(x), dtype=np.asarray(x).dtype),
             np.zeros(len(x), dtype=np.asarray(x).dtype)],
            axis=-1,
        )
        return grad_p - lap * velocity(x)

    return ManufacturedSolution(
        name="exp3d",
        dim=3,
        viscosity=1.0,
        domain=((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)),
        velocity=velocity,
        pressure=pressure,
        velocity_gradient=velocity_gradient,
        source=source,
        neumann_predicate=lambda c: abs(c[2]) < 1e-12,
    )


def _lambdify_stack(exprs, symbols):
    """Vectorized evaluator returning stacked columns, one per expression."""
    fns = [sympy.lambdify(symbols, e, modules="numpy") for e in exprs]

    def call(x):
        x = np.asarray(x)
        args = [x[:, i] for i in range(len(symbols))]
        cols = []
        for f in fns:
            v = np.asarray(f(*args))
            if v.ndim == 0:
                v = np.full(len(x), v.item(), dtype=np.result_type(v, x.dtype))
            cols.append(v)
        return np.stack(cols, axis=-1)

    return call


def polynomial_solution(dim: int, degree: int, seed: int = 0,
                        viscosity: float = 1.0) -> ManufacturedSolution:
    """Random divergence-free polynomial velocity of the given total degree.

    2D velocities come from a random stream function, 3D from a random vector
    potential, so the divergence vanishes identically; the body force follows
    symbolically.  The same seed reproduces the same solution.
    """
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    rng = np.random.default_rng(seed)
    xs = sympy.symbols("x1 x2 x3")[:dim]

    def rand_poly(deg):
        monomials = [
            np.prod([s**e for s, e in zip(xs, exps)], initial=sympy.Integer(1))
            for total in range(deg + 1)
            for exps in _exponents_of_total(dim, total)
        ]
        coeffs = rng.integers(-3, 4, size=len(monomials))
        return sum(int(c) * m for c, m in zip(coeffs, monomials))

    if dim == 2:
        psi = rand_poly(degree + 1)
        u = [sympy.diff(psi, xs[1]), -sympy.diff(psi, xs[0])]
    else:
        pot = [rand_poly(degree + 1) for _ in range(3)]
        u = [
            sympy.diff(pot[2], xs[1]) - sympy.diff(pot[1], xs[2]),
            sympy.diff(pot[0], xs[2]) - sympy.diff(pot[2], xs[0]),
            sympy.diff(pot[1], xs[0]) - sympy.diff(pot[0], xs[1]),
        ]
    p = rand_poly(degree)
    grad = [[sympy.expand(sympy.diff(ui, xj)) for xj in xs] for ui in u]
    lap_u = [sum(sympy.diff(ui, xj, 2) for xj in xs) for ui in u]
    s = [sympy.expand(sympy.diff(p, xs[i]) - viscosity * lap_u[i]) for i in range(dim)]

    vel = _lambdify_stack(u, xs)
    grad_flat = _lambdify_stack([g for row in grad for g in row], xs)
    pres = _lambdify_stack([p], xs)
    src = _lambdify_stack(s, xs)

    return ManufacturedSolution(
        name=f"poly{dim}d",
        dim=dim,
        viscosity=viscosity,
        domain=((0.0, 1.0),) * dim,
        velocity=vel,
        pressure=lambda x: pres(x)[:, 0],
        velocity_gradient=lambda x: grad_flat(x).reshape(len(x), dim, dim),
        source=src,
        neumann_predicate=lambda c: abs(c[-1]) < 1e-12,
    )


def _exponents_of_total(dim, total):
    if dim == 2:
        return [(a, total - a) for a in range(total + 1)]
    return [
        (a, b, total - a - b) for a in range(total + 1) for b in range(total + 1 - a)
    ]


def resolve_problem(problem, degree: int = 2, seed: int = 0):
    """Map a problem name to its ManufacturedSolution (pass-through for
    solution objects).  Polynomial problems match the scheme degree."""
    if isinstance(problem, ManufacturedSolution):
        return problem
    if problem == "wang2d":
        return wang_flow()
    if problem == "exp3d":
        return exp_flow_3d()
    if problem == "poly2d":
        return polynomial_solution(2, degree, seed=seed)
    if problem == "poly3d":
        return polynomial_solution(3, degree, seed=seed)
    raise ValueError(f"unknown problem {problem!r} (expected one of {PROBLEM_NAMES})")


def build_problem_mesh(sol: ManufacturedSolution, family: str, n: int) -> Mesh:
    if FAMILIES[family] != sol.dim:
        raise ValueError(f"family {family!r} is {FAMILIES[family]}D, problem is {sol.dim}D")
    mesh = generate_cartesian_mesh(sol.domain, n, family)
    if sol.neumann_predicate is not None:
        mesh = classify_boundary(mesh, sol.neumann_predicate)
    return mesh


# errors ---------------------------------------------------------------------

def l2_error(mesh: Mesh, degree: int, coeffs, exact, order: int | None = None) -> float:
    """L2 norm of (discrete - exact) over the mesh.

    coeffs has shape (n_el, n_comp, nb), or (n_el, nb) for scalar fields;
    exact maps (npts, dim) coordinates to (npts, n_comp) or (npts,).
    """
    if order is None:
        order = 2 * (degree + 1) + 2
    coeffs = np.asarray(coeffs)
    scalar = coeffs.ndim == 2
    total = 0.0
    for e in range(mesh.n_elements):
        etype, _ = mesh.elements[e]
        cell = MappedCell(cell_basis(etype, degree, order), mesh.element_coords(e))
        ce = coeffs[e] if not scalar else coeffs[e][None, :]
        vals = cell.vals @ ce.T
        ex = np.asarray(exact(cell.x))
        if ex.ndim == 1:
            ex = ex[:, None]
        total += float(np.einsum("q,qc->", cell.wdet, (vals - ex) ** 2))
    return float(np.sqrt(total))


def interpolate(mesh: Mesh, degree: int, fn) -> np.ndarray:
    """Nodal interpolation of a callable onto the broken degree-k space."""
    etype0, _ = mesh.elements[0]
    ref = build_reference_element(etype0, degree)
    geo = build_reference_element(etype0, 1)
    geo_at_nodes = geo.eval_basis(ref.nodes)
    out = None
    for e in range(mesh.n_elements):
        x = geo_at_nodes @ mesh.element_coords(e)
        vals = np.asarray(fn(x))
        if vals.ndim == 1:
            vals = vals[:, None]
        if out is None:
            out = np.empty((mesh.n_elements, vals.shape[1], ref.num_basis))
        out[e] = vals.T
    return out


def compute_errors(fields, sol: ManufacturedSolution, post: PostprocessedField | None = None,
                   order: int | None = None) -> dict:
    mesh = fields.mesh
    errs = {
        "u": l2_error(mesh, fields.degree, fields.velocity, sol.velocity, order),
        "p": l2_error(mesh, fields.degree, fields.pressure, sol.pressure, order),
        "L": l2_error(mesh, fields.degree, fields.mixed, sol.mixed_exact, order),
    }
    if post is not None:
        errs["ustar"] = l2_error(mesh, post.degree, post.velocity, sol.velocity, order)
    return errs


def expected_trace_dofs(mesh: Mesh, degree: int) -> int:
    """Dof count of the condensed system (traces + rho + optional multiplier)."""
    etype, _ = mesh.elements[0]
    nfn = build_reference_element(face_type(etype), degree).num_basis
    free = [f for f in mesh.faces if f.tag != DIRICHLET]
    count = mesh.dim * nfn * len(free) + mesh.n_elements
    if not mesh.tagged_faces(NEUMANN):
        count += 1
    return count


def fit_rate(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if np.any(h <= 0) or np.any(err <= 0):
        raise ValueError("rates need positive mesh sizes and errors")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def random_polynomial_field(dim: int, n_comp: int, degree: int, rng) -> object:
    """Vector field with random polynomial components (complex-safe)."""
    terms = [e for total in range(degree + 1) for e in _exponents_of_total(dim, total)]
    coef = rng.uniform(-1.0, 1.0, (n_comp, len(terms)))

    def fn(x):
        mono = np.stack(
            [np.prod([x[:, ax] ** e[ax] for ax in range(dim)], axis=0) for e in terms],
            axis=-1,
        )
        return mono @ coef.T

    return fn


def identity_residual_sweep(max_degree: int = 3, seed: int = 0) -> dict:
    """Divergence- and curl-theorem residuals on random affine elements.

    For every supported cell type and degree up to max_degree, random
    polynomial stress and velocity fields are checked on a randomly sheared
    element.  Returns the worst residuals and the per-case table.
    """
    from .ref_element import cell_dim, cell_vertices
    from .voigt import gauss_residual, stokes_residual

    rng = np.random.default_rng(seed)
    cases = []
    for etype in ("tri", "quad", "tet", "hex"):
        dim = cell_dim(etype)
        ops = VoigtOps(dim)
        for degree in range(1, max_degree + 1):
            while True:
                amat = np.eye(dim) + 0.3 * rng.uniform(-1.0, 1.0, (dim, dim))
                if np.linalg.det(amat) > 0.3:
                    break
            verts = cell_vertices(etype) @ amat.T + rng.uniform(-1.0, 1.0, dim)
            stress = random_polynomial_field(dim, ops.msd, degree, rng)
            vector = random_polynomial_field(dim, dim, degree, rng)
            order = 2 * degree + 2
            g = gauss_residual(etype, verts, ops, stress, vector, order=order)
            s = stokes_residual(etype, verts, ops, vector, order=order)
            cases.append(
                {"element": etype, "degree": degree, "gauss": g, "stokes": s}
            )
    return {
        "max_gauss": max(c["gauss"] for c in cases),
        "max_stokes": max(c["stokes"] for c in cases),
        "max_residual": max(max(c["gauss"], c["stokes"]) for c in cases),
        "cases": cases,
    }


# convergence studies --------------------------------------------------------

@dataclass
class ConvergenceRow:
    problem: str
    family: str
    degree: int
    tau: float
    level: int
    n: int
    h: float
    dofs: int
    err_u: float
    err_p: float
    err_L: float
    err_ustar: float


@dataclass
class ConvergenceReport:
    problem: str
    rows: list = field(default_factory=list)

    def series(self, family, degree):
        return [r for r in self.rows if r.family == family and r.degree == degree]

    def slopes(self, fit_levels: int = 3) -> dict:
        """Least-squares rates over the finest fit_levels rows per series."""
        out = {}
        for key in {(r.family, r.degree) for r in self.rows}:
            rows = sorted(self.series(*key), key=lambda r: r.level)[-fit_levels:]
            h = [r.h for r in rows]
            out[key] = {
                "u": fit_rate(h, [r.err_u for r in rows]),
                "p": fit_rate(h, [r.err_p for r in rows]),
                "L": fit_rate(h, [r.err_L for r in rows]),
                "ustar": fit_rate(h, [r.err_ustar for r in rows]),
            }
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["family", "k", "tau", "level", "h", "dofs",
                 "err_u", "err_p", "err_L", "err_ustar"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.family, r.degree, f"{r.tau:.17g}", r.level, f"{r.h:.17g}",
                     r.dofs, f"{r.err_u:.17g}", f"{r.err_p:.17g}",
                     f"{r.err_L:.17g}", f"{r.err_ustar:.17g}"]
                )

    def to_json(self, path):
        slopes = [
            {"family": fam, "k": deg, **vals}
            for (fam, deg), vals in sorted(self.slopes().items())
        ]
        payload = {
            "problem": self.problem,
            "rows": [vars(r) for r in self.rows],
            "slopes": slopes,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def convergence_study(problem, family: str, degrees, levels, tau: float | None = None,
                      order: int | None = None, seed: int = 0,
                      progress=None) -> ConvergenceReport:
    """Solve a refinement sequence and collect errors.

    Parameters
    ----------
    problem : str or ManufacturedSolution
        Problem name ('wang2d', 'exp3d', 'poly2d', 'poly3d') or solution.
    family : str
        Mesh family; must match the problem dimension.
    degrees, levels : iterables of int
        Scheme degrees and refinement levels; level l uses n = 2**l cells
        per axis.
    tau : float, optional
        Stabilization; defaults to the family value.
    """
    if tau is None:
        tau = DEFAULT_TAU[family]
    report = ConvergenceReport(problem=getattr(problem, "name", problem))
    for degree in degrees:
        sol = resolve_problem(problem, degree=degree, seed=seed)
        for level in levels:
            n = 2 ** level
            mesh = build_problem_mesh(sol, family, n)
            fields, stats = solve_stokes(mesh, degree, tau, sol, order=order)
            post = postprocess_all(fields, dirichlet=sol.velocity)
            errs = compute_errors(fields, sol, post, order=order)
            side = sol.domain[0][1] - sol.domain[0][0]
            row = ConvergenceRow(
                problem=report.problem,
                family=family,
                degree=degree,
                tau=tau,
                level=level,
                n=n,
                h=side / n,
                dofs=stats["matrix_dim"],
                err_u=errs["u"],
                err_p=errs["p"],
                err_L=errs["L"],
                err_ustar=errs["ustar"],
            )
            report.rows.append(row)
            if progress is not None:
                progress(row)
    return report


def tau_sweep(problem, family: str, degree: int, level: int, taus,
              order: int | None = None, seed: int = 0, progress=None) -> list:
    """Fixed mesh, sweep of the stabilization parameter.

    Solver failures are recorded per tau and the sweep continues.
    """
    sol = resolve_problem(problem, degree=degree, seed=seed)
    mesh = build_problem_mesh(sol, family, 2 ** level)
    rows = []
    for tau in taus:
        row = {"tau": float(tau), "family": family, "k": degree, "level": level}
        try:
            fields, stats = solve_stokes(mesh, degree, float(tau), sol, order=order)
            post = postprocess_all(fields, dirichlet=sol.velocity)
            errs = compute_errors(fields, sol, post, order=order)
            row.update(
                {
                    "dofs": stats["matrix_dim"],
                    "err_u": errs["u"],
                    "err_p": errs["p"],
                    "err_L": errs["L"],
                    "err_ustar": errs["ustar"],
                    "failed": None,
                }
            )
        except (ValueError, RuntimeError) as exc:
            row.update({"failed": str(exc)})
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows
