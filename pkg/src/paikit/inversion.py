"""Single-measurement shape inversion and Lipschitz-stability scans.

The forward map is

    radial coefficients -> smoothed indicator -> (c, D, mu)
        -> fluence u (diffusion solve) -> f = Gamma mu u
        -> g (harmonic extension of -beta^-1 dn f)
        -> damped wave run -> boundary trace

and the misfit is half the squared H1((0,T) x bdry) distance to the
observed trace plus a quadratic penalty on the oscillatory coefficients.
The gradient is assembled by transposing every stage of the discrete
forward map exactly (the continuous adjoint of the damped problem,
discretized with the same leapfrog, coincides with this transpose), so the
finite-difference check passes near roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (Domain, GeometryError, SpeedField, StarInclusion,
                       _smoothstep, _smoothstep_prime, build_speed_field,
                       smoothed_indicator, star_shape_check)
from .initial_data import (InitialData, OpticalCoefficients, as_boundary_beta,
                           diffusion_system, make_initial_data, solve_spd,
                           reverse_inequality_probe)
from .norms import TraceH1Form, grid_h1
from .wave_forward import BoundaryTrace, simulate_forward, stable_dt, n_steps_for, trace_norms


@dataclass
class InverseProblem:
    observed: BoundaryTrace
    a: float
    optics: OpticalCoefficients
    domain: Domain
    x0: tuple
    k_max: int
    beta: float | np.ndarray = 1.0
    gamma: float = 0.0
    eps: float | None = None      # indicator smoothing width (defaults to 1.5 h)
    cfl: float = 0.5
    margin: float | None = None

    def __post_init__(self):
        if not (0.75 < self.a < 1.0):
            raise ValueError("inversion requires contrast a in (3/4, 1)")
        if self.domain.dimension != 2 or self.domain.shape != "rectangle":
            raise NotImplementedError("inversion is implemented on 2-d rectangles")
        meta = self.observed.meta
        if meta and meta.get("n") not in (None, self.domain.grid_resolution):
            raise ValueError("observed trace resolution does not match the domain")
        if self.eps is None:
            self.eps = 1.5 * self.domain.grid.h_min
        if self.margin is None:
            self.margin = 0.02 * self.domain.diam

    def inclusion_of(self, params: np.ndarray) -> StarInclusion:
        return StarInclusion.from_params(self.x0, params, self.k_max,
                                         smoothing_width=self.eps)


def _trace_form(problem: InverseProblem, n_samples: int, dt: float) -> TraceH1Form:
    disc = problem.domain.disc
    return TraceH1Form(dt, n_samples, disc.boundary.weights, disc.boundary.ds)


@dataclass
class _Forward:
    params: np.ndarray
    incl: StarInclusion
    speed: SpeedField
    chi: np.ndarray
    D: np.ndarray
    mu: np.ndarray
    u: np.ndarray
    f: np.ndarray
    g_b: np.ndarray
    g: np.ndarray
    states: np.ndarray | None
    trace: np.ndarray
    dt: float
    N: int
    J_mis: float
    J_reg: float

    @property
    def J(self) -> float:
        return self.J_mis + self.J_reg


def _forward(params: np.ndarray, problem: InverseProblem,
             need_states: bool) -> _Forward:
    domain = problem.domain
    disc = domain.disc
    incl = problem.inclusion_of(params)
    incl.validate_inside(domain, problem.margin)
    speed = build_speed_field(incl, problem.a, domain, eps=problem.eps,
                              margin=problem.margin)
    chi = speed.chi
    D, mu = problem.optics.fields(chi)
    A, b, act = diffusion_system(problem.optics, chi, disc)
    u = np.zeros(disc.n_nodes)
    u[act] = solve_spd(A, b, rtol=1e-12)
    f = problem.optics.grueneisen * mu * u

    beta_b = as_boundary_beta(problem.beta, disc)
    nd = disc.trace.apply(f)
    g_b = -nd / beta_b
    g_i = solve_spd(disc.K_ii, -(disc.K_ib @ g_b), rtol=1e-12)
    g = disc.scatter(g_i, g_b)

    data = InitialData(f, g, beta_b, {})
    T = problem.observed.T
    traj, trace, _ = simulate_forward(speed, data, T, cfl=problem.cfl,
                                      store_states=need_states,
                                      check_compat=False)
    if trace.values.shape != problem.observed.values.shape:
        raise ValueError("forward trace shape does not match the observation; "
                         "check T, resolution and CFL settings")
    res = trace.values - problem.observed.values
    form = _trace_form(problem, trace.n_samples, trace.dt)
    J_mis = 0.5 * form.norm_sq(res)
    hi = params[1:]
    J_reg = problem.gamma * float(hi @ hi)
    return _Forward(params=np.asarray(params, float).copy(), incl=incl,
                    speed=speed, chi=chi, D=D, mu=mu, u=u, f=f, g_b=g_b, g=g,
                    states=traj.states, trace=trace.values, dt=trace.dt,
                    N=traj.n_steps, J_mis=J_mis, J_reg=J_reg)


def misfit(params: np.ndarray, problem: InverseProblem) -> float:
    """J = 0.5 ||trace(params) - observed||^2_H1 + gamma ||high modes||^2."""
    return _forward(np.asarray(params, dtype=float), problem, need_states=False).J


def _wave_adjoint(fw: _Forward, problem: InverseProblem):
    """Transpose of the damped leapfrog; returns (f_bar, g_bar, m_bar)."""
    domain = problem.domain
    disc = domain.disc
    p = fw.states
    N, dt = fw.N, fw.dt
    b_idx = disc.boundary.idx
    K = disc.K
    M = fw.speed.c_inv2 * disc.w_vol
    C = np.zeros(disc.n_nodes)
    C[b_idx] = as_boundary_beta(problem.beta, disc) * disc.boundary.weights
    A_plus = M / dt**2 + C / (2.0 * dt)
    A_minus = M / dt**2 - C / (2.0 * dt)

    res = fw.trace - problem.observed.values
    form = _trace_form(problem, N + 1, dt)
    r = form.apply(res)          # dJ/dtrace, (N+1, nb)

    def seed(n):
        out = np.zeros(disc.n_nodes)
        out[b_idx] = r[n]
        return out

    M_bar = np.zeros(disc.n_nodes)
    bar_next = seed(N)                     # p_bar[N], complete
    bar_cur = seed(N - 1)                  # p_bar[N-1], awaiting step-N terms
    for n in range(N - 1, 0, -1):
        t = bar_next / A_plus
        bar_cur += (2.0 / dt**2) * (M * t) - K @ t
        bar_prev = seed(n - 1) - A_minus * t
        M_bar += t * (2.0 * p[n] - p[n + 1] - p[n - 1]) / dt**2
        bar_next = bar_cur
        bar_cur = bar_prev
    # bar_next = p_bar[1], bar_cur = p_bar[0]
    u1 = bar_next
    w = 0.5 * dt**2 * (u1 / M)
    f_bar = bar_cur + u1 - K @ w
    g_bar = dt * u1 - C * w
    r0 = -(K @ fw.f) - C * fw.g
    M_bar += -0.5 * dt**2 * u1 * r0 / (M * M)
    m_bar = M_bar * disc.w_vol
    return f_bar, g_bar, m_bar


def adjoint_gradient(params: np.ndarray, problem: InverseProblem):
    """Misfit value and its exact gradient over the radial coefficients."""
    params = np.asarray(params, dtype=float)
    domain = problem.domain
    disc = domain.disc
    fw = _forward(params, problem, need_states=True)

    f_bar, g_bar, m_bar = _wave_adjoint(fw, problem)

    # harmonic extension transpose: g = scatter(-Kii^-1 Kib g_b, g_b)
    beta_b = as_boundary_beta(problem.beta, disc)
    v = solve_spd(disc.K_ii, g_bar[disc.inside_idx], rtol=1e-12)
    gb_bar = g_bar[disc.boundary.idx] - disc.K_ib.T @ v
    f_bar = f_bar + disc.trace.op.T @ (-gb_bar / beta_b)

    # f = Gamma mu u
    gam = problem.optics.grueneisen
    u_bar = gam * fw.mu * f_bar
    mu_bar = gam * fw.u * f_bar

    # diffusion solve transpose: A(D, mu) u = b, b parameter-free
    A, b, act = diffusion_system(problem.optics, fw.chi, disc)
    wadj = np.zeros(disc.n_nodes)
    wadj[act] = solve_spd(A, u_bar[act], rtol=1e-12)
    mu_bar = mu_bar - wadj * disc.w_vol * fw.u
    faces = disc.faces
    du = fw.u[faces.j] - fw.u[faces.i]
    dw = wadj[faces.j] - wadj[faces.i]
    Df_bar = -(du * dw) * faces.w / faces.h**2
    Di, Dj = fw.D[faces.i], fw.D[faces.j]
    den = (Di + Dj) ** 2
    D_bar = np.zeros(disc.n_nodes)
    np.add.at(D_bar, faces.i, Df_bar * 2.0 * Dj * Dj / den)
    np.add.at(D_bar, faces.j, Df_bar * 2.0 * Di * Di / den)

    # collapse onto the indicator
    op = problem.optics
    a = problem.a
    c = fw.speed.c
    chi_bar = (m_bar * (-2.0 * (a - 1.0) / c**3)
               + mu_bar * (op.mu_in - op.mu_out)
               + D_bar * (op.D_in - op.D_out))

    # indicator -> radial coefficients through the smoothed level set
    pts = domain.grid.coords
    rho = fw.incl.level_set(pts)
    eps = problem.eps
    band = np.abs(rho) < eps
    sprime = _smoothstep_prime(-rho[band] / eps) / eps
    theta = fw.incl.angles_of(pts[band])
    jac = fw.incl.radius_jacobian(theta)
    grad = jac.T @ (chi_bar[band] * sprime)
    grad[1:] += 2.0 * problem.gamma * params[1:]
    return fw.J, grad


@dataclass
class ReconstructionResult:
    inclusion_hat: StarInclusion
    params_hat: np.ndarray
    misfit_history: list
    grad_norm_history: list
    n_iterations: int
    converged: bool
    message: str
    f_hat: np.ndarray
    hausdorff_to_truth: float | None = None


def hausdorff_distance(incl1: StarInclusion, incl2: StarInclusion,
                       n: int = 1024) -> float:
    b1 = incl1.boundary_points(n)
    b2 = incl2.boundary_points(n)
    d12 = np.sqrt(((b1[:, None, :] - b2[None, :, :]) ** 2).sum(-1))
    return float(max(d12.min(axis=1).max(), d12.min(axis=0).max()))


def symmetric_difference_area(incl1: StarInclusion, incl2: StarInclusion,
                              n: int = 2048) -> float:
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    r1 = incl1.radius(th)
    r2 = incl2.radius(th)
    if np.allclose(incl1.x0, incl2.x0):
        return float(0.5 * np.abs(r1 * r1 - r2 * r2).sum() * (2.0 * np.pi / n))
    # different centers: Monte-Carlo-free box quadrature on a common grid
    lo = np.minimum(incl1.x0, incl2.x0) - max(r1.max(), r2.max()) * 1.2
    hi = np.maximum(incl1.x0, incl2.x0) + max(r1.max(), r2.max()) * 1.2
    m = 400
    xs = np.linspace(lo[0], hi[0], m)
    ys = np.linspace(lo[1], hi[1], m)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    s1 = incl1.level_set(pts) < 0
    s2 = incl2.level_set(pts) < 0
    cell = (xs[1] - xs[0]) * (ys[1] - ys[0])
    return float((s1 != s2).sum() * cell)


def reconstruct(problem: InverseProblem, initial_guess: StarInclusion, *,
                max_iter: int = 100, tol_g: float = 1e-6, lbfgs_mem: int = 8,
                max_backtracks: int = 30, armijo: float = 1e-4,
                r0_bracket: int = 5, verbose: bool = False) -> ReconstructionResult:
    """Limited-memory quasi-Newton descent with Armijo backtracking.

    The trace misfit oscillates in the base radius once the horizon holds
    several reverberations, so descent alone can walk away from the data
    basin.  A coarse probe of ``2 r0_bracket + 1`` radii (two grid cells
    apart) around the guess picks the best basin first; set
    ``r0_bracket=0`` to skip it.
    """
    params = initial_guess.params.copy()
    k = problem.k_max
    if params.size != 1 + 2 * k:
        full = np.zeros(1 + 2 * k)
        full[0] = params[0]
        ka = len(initial_guess.cos_coeffs)
        kb = len(initial_guess.sin_coeffs)
        full[1:1 + ka] = initial_guess.params[1:1 + ka]
        full[1 + k:1 + k + kb] = initial_guess.params[1 + ka:]
        params = full

    if r0_bracket > 0:
        h = problem.domain.grid.h_min
        best = (np.inf, params[0])
        for j in range(-r0_bracket, r0_bracket + 1):
            trial = params.copy()
            trial[0] = params[0] + 2.0 * h * j
            try:
                Jt = misfit(trial, problem)
            except (GeometryError, ValueError):
                continue
            if Jt < best[0]:
                best = (Jt, trial[0])
        params[0] = best[1]
        if verbose:
            print(f"  bracket: r0 -> {params[0]:.4f} (J={best[0]:.4e})")

    gamma0 = problem.gamma
    J, grad = adjoint_gradient(params, problem)
    if gamma0 == 0.0 and J > 0.0:
        # project-default regularization, fixed from the initial state
        problem.gamma = 1e-6 * J / max(float(params @ params), 1e-30)
        J, grad = adjoint_gradient(params, problem)
    g_scale = max(np.linalg.norm(grad), 1e-300)
    obs_scale = _trace_form(problem, problem.observed.n_samples,
                            problem.observed.dt).norm_sq(problem.observed.values)

    misfit_history = [J]
    grad_history = [np.linalg.norm(grad)]
    s_list, y_list = [], []
    converged = False
    message = "max iterations reached"
    it = 0
    if J <= 1e-12 * max(obs_scale, 1e-300):
        converged, message = True, "initial guess already matches the data"
    while not converged and it < max_iter:
        q = grad.copy()
        alphas = []
        for s, y in zip(reversed(s_list), reversed(y_list)):
            a_i = (s @ q) / (y @ s)
            alphas.append(a_i)
            q -= a_i * y
        if y_list:
            y_last, s_last = y_list[-1], s_list[-1]
            q *= (s_last @ y_last) / (y_last @ y_last)
        else:
            q *= 0.01 * max(abs(params[0]), problem.domain.grid.h_min) / g_scale
        for s, y, a_i in zip(s_list, y_list, reversed(alphas)):
            b_i = (y @ q) / (y @ s)
            q += (a_i - b_i) * s
        direction = -q
        slope = grad @ direction
        if slope >= 0:
            direction = -grad
            slope = -float(grad @ grad)

        # cap the initial step so the radius moves at most one grid cell,
        # which keeps the iterates inside the data basin of the oscillatory
        # trace misfit; the cap relaxes automatically as the gradient decays
        radial_move = float(np.abs(direction).sum())
        step = min(1.0, problem.domain.grid.h_min / max(radial_move, 1e-300))
        accepted = False
        for _ in range(max_backtracks):
            trial = params + step * direction
            try:
                J_trial = misfit(trial, problem)
            except (GeometryError, ValueError):
                step *= 0.5
                continue
            if J_trial <= J + armijo * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            message = "line search failed after 30 backtracks"
            break

        J_new, grad_new = adjoint_gradient(trial, problem)
        s_vec = trial - params
        y_vec = grad_new - grad
        if (s_vec @ y_vec) > 1e-14 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            s_list.append(s_vec)
            y_list.append(y_vec)
            if len(s_list) > lbfgs_mem:
                s_list.pop(0)
                y_list.pop(0)
        params, J, grad = trial, J_new, grad_new
        misfit_history.append(J)
        grad_history.append(np.linalg.norm(grad))
        it += 1
        if verbose:
            print(f"  iter {it}: J={J:.6e} |g|={grad_history[-1]:.3e} step={step:g}")
        if grad_history[-1] <= tol_g * g_scale:
            converged, message = True, "gradient tolerance reached"
        elif J <= 1e-12 * max(obs_scale, 1e-300):
            converged, message = True, "misfit at the noiseless floor"

    problem.gamma = gamma0
    incl_hat = problem.inclusion_of(params)
    speed_hat = build_speed_field(incl_hat, problem.a, problem.domain,
                                  eps=problem.eps, margin=problem.margin)
    data_hat = make_initial_data(problem.optics, speed_hat, problem.domain,
                                 beta=problem.beta)
    return ReconstructionResult(
        inclusion_hat=incl_hat, params_hat=params,
        misfit_history=misfit_history, grad_norm_history=grad_history,
        n_iterations=it, converged=converged, message=message,
        f_hat=data_hat.f)


@dataclass
class StabilityScanReport:
    rows: list                    # per-pair records
    C_emp1: float                 # max (1-a) ||chi1-chi2||_inf / ||p1-p2||_H1
    C_emp2: float                 # max ||f1-f2||_H1 / (H32 + weighted-t)
    d_emp: float                  # min ||f1-f2||_H1 (reverse-inequality probe)
    a0_emp: float                 # max(3/4, 1 - d_emp / (6 C_emp1))
    meta: dict = field(default_factory=dict)


def stability_scan(pairs, a: float, model: OpticalCoefficients, domain: Domain,
                   *, beta=1.0, T: float | None = None, cfl: float = 0.5,
                   data_floor: float = 1e-10) -> StabilityScanReport:
    """Both sides of the stability estimates over a list of inclusion pairs."""
    if T is None:
        T = 4.0 * domain.diam
    disc = domain.disc
    cache = {}

    def solve_one(incl):
        key = id(incl)
        if key not in cache:
            speed = build_speed_field(incl, a, domain)
            data = make_initial_data(model, speed, domain, beta=beta)
            _, trace, _ = simulate_forward(speed, data, T, cfl=cfl)
            cache[key] = (speed, data, trace)
        return cache[key]

    probe = reverse_inequality_probe(model, pairs, a, domain)
    rows = []
    for k, (i1, i2) in enumerate(pairs):
        s1, d1, tr1 = solve_one(i1)
        s2, d2, tr2 = solve_one(i2)
        diff = BoundaryTrace(tr1.values - tr2.values, tr1.dt, T,
                             tr1.weights, tr1.node_idx)
        tn = trace_norms(diff, domain)
        ind_sup = float(np.abs(s1.indicator_crisp() - s2.indicator_crisp()).max())
        f_h1 = grid_h1(d1.f - d2.f, disc)
        if tn["h1"] <= data_floor:
            raise ValueError(f"pair {k}: boundary data difference below the "
                             f"identifiability floor {data_floor}")
        rows.append({
            "pair": k, "a": a,
            "indicator_sup": ind_sup,
            "one_minus_a": 1.0 - a,
            "p_h1": tn["h1"], "p_h32": tn["h32"],
            "p_weighted_t": tn["weighted_t"],
            "f_h1": f_h1,
            "hausdorff": hausdorff_distance(i1, i2),
            "symdiff_area": symmetric_difference_area(i1, i2),
        })
    C1 = max((1.0 - a) * r["indicator_sup"] / r["p_h1"] for r in rows)
    C2 = max(r["f_h1"] / (r["p_h32"] + r["p_weighted_t"]) for r in rows)
    a0 = max(0.75, 1.0 - probe.d_emp / (6.0 * C1))
    return StabilityScanReport(rows=rows, C_emp1=float(C1), C_emp2=float(C2),
                               d_emp=probe.d_emp, a0_emp=float(a0),
                               meta={"T": T, "n": domain.grid_resolution,
                                     "n_pairs": len(rows),
                                     "model_admissible": probe.admissible})
