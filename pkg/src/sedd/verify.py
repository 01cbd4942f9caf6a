"""Self-checks of the closed forms against the brute-force oracle.

Each check returns a :class:`CheckResult`; ``run_all`` is what the ``verify``
subcommand reports.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import likelihood, losses, oracle, process, samplers, scores
from .process import TransitionSpec


@dataclass
class CheckResult:
    name: str
    metric: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.metric) and self.metric <= self.threshold)

    def to_dict(self) -> dict:
        return {**asdict(self), "pass": self.passed}


def _specs(n):
    return [TransitionSpec.uniform(n), TransitionSpec.absorbing(n)]


def check_kernels(rng) -> CheckResult:
    err = 0.0
    for n in (2, 5, 12):
        for spec in _specs(n):
            for sb in rng.uniform(0, 6, size=5):
                err = max(err, np.abs(process.kernel_matrix(spec, sb) - oracle.token_kernel(spec, sb)).max())
    return CheckResult("kernel_closed_form_vs_expm", float(err), 1e-8)


def check_loss_equivalence(rng) -> CheckResult:
    err = 0.0
    for spec in _specs(3):
        p0 = oracle.EnumeratedDist(2, 3, rng.dirichlet(np.ones(9)))
        sb = 0.7
        pt = oracle.evolve(p0.embed(spec), spec, sb)
        m1 = scores.TabularScore(spec, 2, rng.normal(size=2 * spec.n_states**3))
        m2 = scores.TabularScore(spec, 2, rng.normal(size=m1.n_params))
        d_se = losses.score_entropy(m1, pt, "rate", sb) - losses.score_entropy(m2, pt, "rate", sb)
        d_ise = (losses.implicit_score_entropy(m1, pt, "rate", sb)
                 - losses.implicit_score_entropy(m2, pt, "rate", sb))
        d_dse = (losses.denoising_score_entropy(m1, p0, spec, sb, "rate")
                 - losses.denoising_score_entropy(m2, p0, spec, sb, "rate"))
        err = max(err, abs(d_ise - d_se), abs(d_dse - d_se))
    return CheckResult("score_entropy_variants_agree", float(err), 1e-10)


def check_tweedie(rng) -> CheckResult:
    err = 0.0
    for spec in _specs(6):
        for sb in (0.1, 1.0, 5.0):
            p = rng.dirichlet(np.ones(spec.n))
            p_prev = np.zeros(spec.n_states)
            p_prev[: spec.n] = p
            K = process.kernel_matrix(spec, sb)
            p_now = K @ p_prev
            for x in range(spec.n_states):
                if p_now[x] <= 0:
                    continue
                got = samplers.exact_tweedie_denoise(p_now / p_now[x], spec, sb, x)
                want = K[x] * p_prev / p_now[x]
                err = max(err, oracle.tv_distance(got, want))
    return CheckResult("tweedie_denoiser_exact", float(err), 1e-10)


def check_mean_bridge(rng) -> CheckResult:
    err = 0.0
    for spec in _specs(5):
        p0 = oracle.EnumeratedDist(1, 5, rng.dirichlet(np.ones(5)))
        sb = 0.8
        pt = oracle.evolve(p0.embed(spec), spec, sb)
        K = process.kernel_matrix(spec, sb)
        for x in range(spec.n_states):
            if pt.probs[x] <= 0:
                continue
            post = K[x, : spec.n] * p0.probs / pt.probs[x]
            ev = scores.score_from_mean(post[None], spec, sb, np.array([x]))
            want = oracle.exact_concrete_score(pt, [x])
            got = ev.full_ratios(np.array([x]))
            mask = scores.structural_live(spec, np.array([x]))
            err = max(err, np.abs(got - want)[mask].max(initial=0.0))
    return CheckResult("mean_parameterization_bridge", float(err), 1e-9)


def check_gradients(rng) -> CheckResult:
    spec = TransitionSpec.absorbing(3)
    p0 = oracle.EnumeratedDist(2, 3, rng.dirichlet(np.ones(9)))
    model = scores.MlpScore(spec, 2, embed=4, hidden=6, features=5, seed=1)
    model.params = model.params + 0.1 * rng.normal(size=model.n_params)

    def f(theta):
        return losses.denoising_score_entropy(model.with_params(theta), p0, spec, 0.6)

    _, g = losses.denoising_score_entropy(model, p0, spec, 0.6, return_grad=True)
    fd = oracle.finite_difference_grad(f, model.params, 1e-5)
    rel = np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12)
    return CheckResult("dse_gradient_vs_finite_difference", float(rel), 1e-4)


def check_elbo(rng) -> CheckResult:
    """Largest ``NLL - (bound + 3 stderr)`` over one-token toys; nonpositive when the bound holds."""
    worst = -np.inf
    for spec, sched in zip(_specs(3), (process.GeometricSchedule(), process.LogLinearSchedule())):
        p0 = oracle.EnumeratedDist(1, 3, rng.dirichlet(np.full(3, 2.0)))
        model = oracle.ExactScoreModel(p0, spec)
        p_model = oracle.exact_reverse_solve(model, spec, sched, 1, steps=400)
        for x in range(3):
            b, se = likelihood.nll_bound(model, [x], spec, sched, 1000, rng)
            worst = max(worst, oracle.exact_nll(p_model, [x]) - b - 3 * se)
    return CheckResult("elbo_upper_bounds_nll", float(worst), 0.0)


CHECKS = (check_kernels, check_loss_equivalence, check_tweedie, check_mean_bridge, check_gradients,
          check_elbo)


def run_all(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [check(rng) for check in CHECKS]
