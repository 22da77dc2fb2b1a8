"""Boundary exact control by conjugate-gradient HUM, and the representation
identity that links the control to the inclusion perturbation.

The control operator maps an initial velocity ``phi0`` to Dirichlet boundary
data ``v`` such that the solution of

    d2phi/dt2 - c^2 lap phi = 0,  phi(0) = 0,  dt phi(0) = phi0,  phi|bdry = v

is steered to rest at T.  HUM realizes ``v`` as the normal trace of a
backward homogeneous solve from unknown final data ``z = (z0, z1)``; the
Gramian is assembled as ``T^* W T`` with the exact algebraic transpose of
the discrete solve, so its symmetry defect is at roundoff and plain CG in
the c^-2-weighted inner product applies.

All volume duality pairings are evaluated as c^-2-weighted grid inner
products of the regular grid representatives.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .geometry import CONTRAST_CONTROL_LO, SpeedField
from .initial_data import InitialData
from .wave_dirichlet import DirichletProblem, simulate_dirichlet
from .wave_forward import simulate_forward, stable_dt, n_steps_for
from . import norms


class ControlError(RuntimeError):
    pass


@dataclass
class ControlProblem:
    speed: SpeedField               # the reference speed (c2 of the pair)
    phi0: np.ndarray                # initial velocity to be steered to rest
    T: float
    tol: float = 1e-4               # relative final-energy target
    max_iter: int = 200
    cfl: float = 0.5

    def __post_init__(self):
        a = self.speed.a
        if not (CONTRAST_CONTROL_LO < a <= 1.0):
            raise ControlError(
                f"contrast a={a} outside the exact-controllability regime (3/4, 1]")
        T_ref = 4.0 * self.speed.domain.diam
        if abs(self.T - T_ref) > 1e-9 * T_ref:
            raise ControlError(f"control horizon must be T = 4 diam = {T_ref:.6g}")
        if self.speed.domain.shape != "rectangle":
            raise NotImplementedError("HUM control is implemented on rectangle domains")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.phi0, dtype=float).tobytes())
        s = (f"{self.speed.a:.16g}|{self.T:.16g}|{self.tol:.3g}|{self.cfl:.6g}"
             f"|{self.speed.domain.grid_resolution}|{self.speed.domain.shape}")
        h.update(s.encode())
        h.update(np.asarray(self.speed.chi, dtype=float).tobytes())
        return h.hexdigest()[:16]


@dataclass
class ControlCertificate:
    control: np.ndarray             # (N+1, nb) Dirichlet boundary data
    final_energy_rel: float
    iterations: int
    lambda_norm_emp: float          # ||v||_L2((0,T)x bdry) / ||phi0||_{L2(c^-2)}
    sup_state_const: float          # max_t ||phi(t)||_L2 / ||phi0||_{L2(c^-2)}
    gramian_residual: float         # final CG residual, relative
    n_steps: int
    dt: float
    problem_hash: str


class _HumOperator:
    """Exact-transpose HUM machinery on one time grid.

    The duality between the pinned-boundary controlled run and backward
    homogeneous runs holds exactly for the discrete scheme when the control
    is paired through the variational co-normal flux ``K_ib' w`` with
    trapezoid-in-time weights.  Building the Gramian and right-hand side
    from that identity makes "Gramian residual -> 0" equivalent to "final
    two-level state of the certified run -> 0", so the certificate can meet
    tight energy targets instead of flooring at the discretization error.
    """

    def __init__(self, speed: SpeedField, T: float, cfl: float):
        domain = speed.domain
        disc = domain.disc
        self.disc = disc
        self.N = n_steps_for(T, stable_dt(domain, speed.c_max, cfl))
        self.dt = T / self.N
        self.ii = disc.inside_idx
        self.Kii = disc.K_ii
        self.Kib = disc.K_ib
        self.M = (speed.c_inv2 * disc.w_vol)[self.ii]
        # CG runs in the H_0^1 x L^2 energy inner product; the Riesz map of
        # the position component is a Laplace solve (classical HUM
        # preconditioning, keeps the iteration count mesh-independent)
        self._Kii_lu = spla.splu(self.Kii.tocsc())
        # flux normalization: sum of w_face / h over each boundary node's
        # interior faces, so that K_ib' w / scale ~ dn w in function units
        f = disc.faces
        scale = np.zeros(disc.n_nodes)
        bmask = np.zeros(disc.n_nodes, dtype=bool)
        bmask[disc.boundary.idx] = True
        for i, j, w, h in zip(f.i, f.j, f.w, f.h):
            if bmask[i] != bmask[j]:
                scale[i if bmask[i] else j] += w / h
        self.flux_scale = scale[disc.boundary.idx]
        self.flux_alive = self.flux_scale > 0
        # s-order time weights of the exact duality (s = T - t):
        # physical tau_0 = dt/2, tau_n = dt, tau_N = 0
        self.tau_s = np.full(self.N + 1, self.dt)
        self.tau_s[0] = 0.0
        self.tau_s[-1] = 0.5 * self.dt

    def solve(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Homogeneous-Dirichlet leapfrog from (a, b); interior history."""
        N, dt, M = self.N, self.dt, self.M
        x = np.empty((N + 1, a.size))
        x[0] = a
        x[1] = a + dt * b + 0.5 * dt**2 * (-(self.Kii @ a) / M)
        for n in range(1, N):
            x[n + 1] = 2.0 * x[n] - x[n - 1] - dt**2 * ((self.Kii @ x[n]) / M)
        return x

    def solve_transpose(self, xb: np.ndarray):
        """Exact transpose of ``(a, b) -> x``; ``xb`` holds the level sources."""
        N, dt, M = self.N, self.dt, self.M
        for n in range(N - 1, 0, -1):
            t = xb[n + 1]
            xb[n] += 2.0 * t - dt**2 * (self.Kii @ (t / M))
            xb[n - 1] -= t
        u = xb[1]
        a_bar = xb[0] + u - 0.5 * dt**2 * (self.Kii @ (u / M))
        b_bar = dt * u
        return a_bar, b_bar

    def flux(self, x: np.ndarray) -> np.ndarray:
        """Variational co-normal flux K_ib' x per level, (N+1, nb)."""
        return (self.Kib.T @ x.T).T

    def control_of(self, z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
        """HUM Dirichlet control in function units, physical time order."""
        x = self.solve(z0, -z1)
        g = self.flux(x)
        g[:, self.flux_alive] /= self.flux_scale[self.flux_alive]
        g[:, ~self.flux_alive] = 0.0
        return g[::-1].copy()

    def riesz_inv(self, d0: np.ndarray, d1: np.ndarray):
        return self._Kii_lu.solve(d0), d1 / self.M

    def gramian_apply(self, z0: np.ndarray, z1: np.ndarray):
        x = self.solve(z0, -z1)
        q = self.flux(x)
        s = np.zeros_like(q)
        s[:, self.flux_alive] = (self.tau_s[:, None] * q[:, self.flux_alive]
                                 / self.flux_scale[self.flux_alive])
        xb = (self.Kib @ s.T).T
        a_bar, b_bar = self.solve_transpose(xb)
        return self.riesz_inv(a_bar, -b_bar)

    def rhs(self, phi0_int: np.ndarray):
        """Riesz representer of z -> (w at t=0, M phi0), by exact transpose."""
        xb = np.zeros((self.N + 1, self.ii.size))
        xb[self.N] = self.M * phi0_int
        a_bar, b_bar = self.solve_transpose(xb)
        return self.riesz_inv(a_bar, -b_bar)

    def inner(self, x0, x1, y0, y1) -> float:
        """H_0^1 x L^2(c^-2) energy inner product."""
        return float(x0 @ (self.Kii @ y0) + (self.M * x1 * y1).sum())


def hum_control(problem: ControlProblem, *, cg_check_every: int = 10,
                verbose: bool = False) -> ControlCertificate:
    """Conjugate-gradient HUM; terminates on the certified final energy."""
    speed = problem.speed
    domain = speed.domain
    disc = domain.disc
    op = _HumOperator(speed, problem.T, problem.cfl)
    N, dt = op.N, op.dt
    phi0 = np.asarray(problem.phi0, dtype=float)
    phi0_norm = float(np.sqrt((speed.c_inv2 * disc.w_vol * phi0 * phi0).sum()))

    if phi0_norm == 0.0:
        control = np.zeros((N + 1, disc.boundary.idx.size))
        return ControlCertificate(control, 0.0, 0, 0.0, 0.0, 0.0, N, dt,
                                  problem.digest())

    def staggered_final_energy(x):
        v = (x[N] - x[N - 1]) / dt
        return float((op.M * v * v).sum() + x[N] @ (op.Kii @ x[N - 1]))

    # uncontrolled run: supplies the final-energy reference scale
    x_psi = op.solve(np.zeros(op.ii.size), phi0[op.ii])
    E_ref = staggered_final_energy(x_psi)
    if E_ref <= 0:
        raise ControlError("uncontrolled run carries no final energy to remove")
    b0, b1 = op.rhs(phi0[op.ii])

    def final_energy(z0, z1):
        control = op.control_of(z0, z1)
        traj = simulate_dirichlet(
            DirichletProblem(speed, np.zeros(disc.n_nodes), phi0, problem.T,
                             g_bc=control, cfl=problem.cfl), n_steps=N)[0]
        return staggered_final_energy(traj.run.x) / E_ref, control, traj

    z0 = np.zeros(op.ii.size)
    z1 = np.zeros(op.ii.size)
    r0, r1 = b0.copy(), b1.copy()
    p0, p1 = r0.copy(), r1.copy()
    rr = op.inner(r0, r1, r0, r1)
    bb = rr
    best = None
    iterations = 0
    for it in range(1, problem.max_iter + 1):
        g0, g1 = op.gramian_apply(p0, p1)
        alpha = rr / op.inner(p0, p1, g0, g1)
        z0 += alpha * p0
        z1 += alpha * p1
        r0 -= alpha * g0
        r1 -= alpha * g1
        rr_new = op.inner(r0, r1, r0, r1)
        iterations = it
        if it % cg_check_every == 0 or rr_new <= 1e-16 * bb or it == problem.max_iter:
            e_rel, control, traj_ctrl = final_energy(z0, z1)
            if verbose:
                print(f"  hum iter {it}: residual {np.sqrt(rr_new / bb):.3e} "
                      f"final energy {e_rel:.3e}")
            best = (e_rel, control, traj_ctrl, np.sqrt(rr_new / bb))
            if e_rel <= problem.tol:
                break
        beta = rr_new / rr
        p0 = r0 + beta * p0
        p1 = r1 + beta * p1
        rr = rr_new
    if best is None:
        e_rel, control, traj_ctrl = final_energy(z0, z1)
        best = (e_rel, control, traj_ctrl, np.sqrt(rr / bb))
    e_rel, control, traj_ctrl, cg_res = best
    if e_rel > problem.tol:
        raise ControlError(
            f"CG-HUM did not reach the energy target within {problem.max_iter} "
            f"iterations (final energy {e_rel:.3e}, CG residual {cg_res:.3e})")

    w_t = norms.time_weights(N + 1, dt)
    v_l2 = float(np.sqrt((w_t[:, None] * disc.trace.weights[None, :]
                          * control**2).sum()))
    sup_state = 0.0
    for n in range(N + 1):
        full = disc.scatter(traj_ctrl.run.x[n], control[n])
        sup_state = max(sup_state, float(np.sqrt((disc.w_vol * full**2).sum())))
    return ControlCertificate(
        control=control, final_energy_rel=e_rel, iterations=iterations,
        lambda_norm_emp=v_l2 / phi0_norm, sup_state_const=sup_state / phi0_norm,
        gramian_residual=cg_res, n_steps=N, dt=dt, problem_hash=problem.digest())


def controlled_solution(problem: ControlProblem, certificate: ControlCertificate,
                        *, store_states: bool = False):
    """Re-simulate the controlled trajectory from the stored boundary control."""
    if certificate.problem_hash != problem.digest():
        raise ControlError("certificate does not match the control problem")
    disc = problem.speed.domain.disc
    traj, _ = simulate_dirichlet(
        DirichletProblem(problem.speed, np.zeros(disc.n_nodes),
                         np.asarray(problem.phi0, dtype=float), problem.T,
                         g_bc=certificate.control, cfl=problem.cfl),
        n_steps=certificate.n_steps, store_states=store_states)
    return traj


def gramian_symmetry_defect(speed: SpeedField, T: float, rng, *,
                            cfl: float = 0.5, n_probes: int = 3) -> float:
    """Relative symmetry defect <Gx, y> - <x, Gy> on random probes."""
    op = _HumOperator(speed, T, cfl)
    worst = 0.0
    for _ in range(n_probes):
        x0, x1, y0, y1 = (rng.normal(size=op.ii.size) for _ in range(4))
        gx = op.gramian_apply(x0, x1)
        gy = op.gramian_apply(y0, y1)
        lhs = op.inner(gx[0], gx[1], y0, y1)
        rhs = op.inner(x0, x1, gy[0], gy[1])
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return worst


@dataclass
class RepresentationResidual:
    A: float            # <phi0, f>_{c2^-2} with f = f2 - f1
    B: float            # int control * beta dt(p2 - p1) over the boundary
    C: float            # int dn(phi) * (p2 - p1) over the boundary
    D: float            # <c2^2(c1^-2 - c2^-2) d2t p1, phi>_{c2^-2}
    residual_rel: float
    meta: dict = field(default_factory=dict)


def representation_residual(speed1: SpeedField, speed2: SpeedField,
                            data1: InitialData, data2: InitialData,
                            phi0: np.ndarray, *, tol: float = 1e-4,
                            max_iter: int = 200, cfl: float = 0.5,
                            certificate: ControlCertificate | None = None
                            ) -> RepresentationResidual:
    """Defect of the weak identity tying the speed perturbation to the data.

    Conventions: ``p = p2 - p1`` and ``f = f2 - f1`` (this pairing makes the
    source of the difference equation ``c2^2 (c1^-2 - c2^-2) d2t p1``); all
    volume pairings carry the ``c2^-2`` weight.
    """
    domain = speed2.domain
    if speed1.domain is not domain and speed1.domain != domain:
        raise ValueError("both speed fields must share one domain")
    disc = domain.disc
    T = 4.0 * domain.diam
    problem = ControlProblem(speed2, phi0, T, tol=tol, max_iter=max_iter, cfl=cfl)
    if certificate is None:
        certificate = hum_control(problem)
    phi_traj = controlled_solution(problem, certificate, store_states=True)
    N, dt = certificate.n_steps, certificate.dt

    traj1, trace1, _ = simulate_forward(speed1, data1, T, cfl=cfl,
                                        store_states=True)
    traj2, trace2, _ = simulate_forward(speed2, data2, T, cfl=cfl,
                                        store_states=True)
    if traj1.n_steps != N or traj2.n_steps != N:
        raise ControlError("time grids of the forward and control runs differ")

    w_t = norms.time_weights(N + 1, dt)
    w_vol = disc.w_vol
    beta = data2.beta

    # A: c2^-2-weighted pairing of phi0 with the pressure difference
    f_diff = data2.f - data1.f
    A = float((w_vol * speed2.c_inv2 * phi0 * f_diff).sum())

    # B: control against beta * dt(p2 - p1) on the boundary
    p_b = trace2.values - trace1.values
    dp_b = norms.time_derivative(p_b, dt)
    w_surf = disc.boundary.weights
    B = float((w_t[:, None] * w_surf[None, :] * certificate.control
               * beta[None, :] * dp_b).sum())

    # C: one-sided normal derivative of the controlled field against p
    dnphi = np.empty((N + 1, disc.trace.weights.size))
    for n in range(N + 1):
        dnphi[n] = disc.trace.apply(phi_traj.states[n])
    C = float((w_t[:, None] * disc.trace.weights[None, :] * dnphi * p_b).sum())

    # D: weighted volume pairing with the second time derivative of p1
    coef = speed2.c2 * (speed1.c_inv2 - speed2.c_inv2)
    kernel = np.zeros(disc.n_nodes)
    s1 = traj1.states
    d2 = np.empty_like(s1)
    d2[1:N] = (s1[2:] - 2.0 * s1[1:N] + s1[:N - 1]) / dt**2
    K = disc.K
    C_damp = np.zeros(disc.n_nodes)
    C_damp[disc.boundary.idx] = data1.beta * disc.boundary.weights
    M1 = speed1.c_inv2 * w_vol
    d2[0] = (-(K @ data1.f) - C_damp * data1.g) / M1
    d2[N] = (2.0 * s1[N] - 5.0 * s1[N - 1] + 4.0 * s1[N - 2] - s1[N - 3]) / dt**2
    for n in range(N + 1):
        kernel += w_t[n] * d2[n] * phi_traj.states[n]
    D = float((w_vol * speed2.c_inv2 * coef * kernel).sum())

    scale = max(abs(A), abs(B), abs(C), abs(D), 1e-30)
    return RepresentationResidual(A, B, C, D, abs(A + B + C - D) / scale,
                                  meta={"n": domain.grid_resolution, "T": T,
                                        "dt": dt, "iterations": certificate.iterations,
                                        "final_energy_rel": certificate.final_energy_rel})
