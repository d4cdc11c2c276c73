"""Element-local saddle systems, condensation and recovery.

Single-element problems with every face Dirichlet have no trace unknowns, so
the local solve is fully determined by the boundary data and rho; that gives
hand-computable oracles for the mixed unknown and the pressure.
"""

import numpy as np
import pytest

from hdg_stokes.local_solver import (
    assemble_local,
    condense,
    default_order,
    element_context,
    local_residual,
    reconstruct,
    reconstruct_direct,
)
from hdg_stokes.mesh import Mesh, generate_cartesian_mesh
from hdg_stokes.voigt import VoigtOps

UNIT = ((0.0, 1.0), (0.0, 1.0))


def _single_element(family="quad", degree=1, tau=4.0, viscosity=1.0,
                    dirichlet=None, source=None):
    if family == "tri":
        mesh = Mesh(2, [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [("tri", (0, 1, 2))])
    else:
        mesh = generate_cartesian_mesh(UNIT, 1, family)
    ops = VoigtOps(mesh.dim, viscosity)
    ctx = element_context(mesh, 0, degree)
    ls = assemble_local(ctx, ops, tau, source=source, dirichlet=dirichlet)
    return ops, ls, condense(ls, ops)


def test_default_order():
    assert default_order(1) == 4
    assert default_order(3) == 8


def test_zero_data_gives_zero_fields():
    _, _, ce = _single_element()
    L, u, p, z = reconstruct(ce, np.zeros(0), 0.0)
    assert np.max(np.abs(L)) < 1e-13
    assert np.max(np.abs(u)) < 1e-13
    assert np.max(np.abs(p)) < 1e-13
    assert abs(z) < 1e-13


@pytest.mark.parametrize("family,degree", [("quad", 1), ("quad", 2), ("tri", 1)])
def test_linear_shear_mixed_unknown(family, degree):
    # u = (x2, 0): strain has engineering shear 1, so the scaled strain
    # unknown is (0, 0, -sqrt(nu)); the pressure vanishes
    nu = 2.0

    def shear(x):
        return np.stack([x[:, 1], np.zeros(len(x))], axis=-1)

    _, _, ce = _single_element(family, degree, viscosity=nu, dirichlet=shear)
    L, u, p, z = reconstruct(ce, np.zeros(0), 0.0)
    assert np.allclose(L[0], 0.0, atol=1e-12)
    assert np.allclose(L[1], 0.0, atol=1e-12)
    assert np.allclose(L[2], -np.sqrt(nu), atol=1e-12)
    assert np.allclose(p, 0.0, atol=1e-12)
    assert abs(z) < 1e-12
    # the velocity coefficients are nodal values of (x2, 0)
    assert np.allclose(u[1], 0.0, atol=1e-12)


def test_rho_sets_the_pressure_level():
    _, _, ce = _single_element(degree=2)
    L, u, p, z = reconstruct(ce, np.zeros(0), 3.0)
    assert np.allclose(p, 3.0, atol=1e-12)
    assert np.max(np.abs(u)) < 1e-12
    assert np.max(np.abs(L)) < 1e-12
    assert abs(z) < 1e-12


def test_local_matrix_symmetric_and_compatibility_data():
    def inflow(x):
        return np.stack([x[:, 0] ** 2, -2.0 * x[:, 0] * x[:, 1]], axis=-1)

    _, ls, ce = _single_element(degree=2, dirichlet=inflow)
    assert np.max(np.abs(ls.matrix - ls.matrix.T)) < 1e-12
    assert np.max(np.abs(ce.K_trace - ce.K_trace.T)) < 1e-12 if ce.K_trace.size else True
    # d_data integrates u_D . n over the Dirichlet boundary; divergence-free
    # data on a closed boundary integrates to zero
    assert abs(ce.d_data) < 1e-13
    assert ce.boundary_measure == pytest.approx(4.0)
    assert ce.outer_measure == pytest.approx(4.0)


def test_recovery_satisfies_the_uncondensed_equations():
    # on a 2x2 mesh interior faces carry traces, so recovery is a genuine
    # affine map of (uhat, rho); plug it back into the full local system
    mesh = generate_cartesian_mesh(UNIT, 2, "quad")
    ops = VoigtOps(2)
    rng = np.random.default_rng(7)
    for e in range(mesh.n_elements):
        ctx = element_context(mesh, e, 1)
        ls = assemble_local(ctx, ops, 4.0, dirichlet=lambda x: x)
        ce = condense(ls, ops)
        uhat = rng.normal(size=ce.n_trace)
        rho = float(rng.normal())
        L, u, p, z = reconstruct(ce, uhat, rho)
        x = np.concatenate([L.ravel(), u.ravel(), p, [z]])
        assert local_residual(ls, x, uhat, rho) < 1e-10
        # direct re-solve agrees with the stored recovery operators
        Ld, ud, pd, zd = reconstruct_direct(ls, ops, uhat, rho)
        assert np.allclose(Ld, L, atol=1e-11)
        assert np.allclose(ud, u, atol=1e-11)
        assert np.allclose(pd, p, atol=1e-11)
        assert zd == pytest.approx(z, abs=1e-11)


def test_strip_recovery_keeps_pressure_rows():
    mesh = generate_cartesian_mesh(UNIT, 2, "quad")
    ops = VoigtOps(2)
    ctx = element_context(mesh, 0, 1)
    ls = assemble_local(ctx, ops, 4.0, dirichlet=lambda x: x)
    ce = condense(ls, ops)
    before = tuple(np.array(b) for b in ce.pressure_recovery())
    ce.strip_recovery()
    after = ce.pressure_recovery()
    for b, a in zip(before, after):
        assert np.array_equal(b, a)
    assert ce.recovery_trace is None
    with pytest.raises(ValueError):
        reconstruct(ce, np.zeros(ce.n_trace), 0.0)
    assert ce.n_trace == before[0].shape[1]


def test_tau_must_be_positive():
    mesh = generate_cartesian_mesh(UNIT, 1, "quad")
    ctx = element_context(mesh, 0, 1)
    with pytest.raises(ValueError):
        assemble_local(ctx, VoigtOps(2), 0.0)
    with pytest.raises(ValueError):
        assemble_local(ctx, VoigtOps(2), -1.0)
