"""Gradient verification against independent numerical oracles.

Two kinds of check: central finite differences in double precision on a
reduced model (8x8 inputs, two conv blocks, d=4), and a closed-form
bilevel quadratic whose outer gradient is known exactly.  Every evaluation
recreates its noise generator from the same seed, so stochastic terms see
common random numbers and stay differentiable functions of the parameters.

The quadratic oracle: with L_trn = w^2, one inner step gives
w' = w(1 - 2a), and L_tst = w'^2 / 2 has dL_tst/dw = w(1 - 2a)^2.  A
first-order variant (gradient stopped through w') instead yields w(1 - 2a),
so the two provably differ for a > 0.
"""

from __future__ import annotations

import torch

from .config import TrainConfig
from .losses import (
    EpisodeBatch,
    Phase,
    episode_losses,
    kl_divergence,
    reconstruction_loss,
    regulariser_loss,
    triplet_loss,
)
from .model import DisentangledVAE, FeatureTransform, init_parameters
from .seeding import torch_generator
from .trainer import inner_update

FD_STEP = 1e-5
REL_TOL = 1e-4
_DENOM_FLOOR = 1e-3  # below this gradient magnitude the check is absolute


def finite_difference_grad(f, params: dict[str, torch.Tensor], step: float = FD_STEP):
    """Central differences df/dp per element, mutating params in place."""
    out = {}
    for name, p in params.items():
        flat = p.detach().reshape(-1)
        g = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * step)
        out[name] = g.reshape(p.shape)
    return out


def max_relative_error(analytic: dict, numeric: dict) -> float:
    worst = 0.0
    for name in analytic:
        a, n = analytic[name].reshape(-1), numeric[name].reshape(-1)
        denom = torch.clamp(torch.maximum(a.abs(), n.abs()), min=_DENOM_FLOOR)
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst


def _check(f, params: dict[str, torch.Tensor]) -> float:
    """Compare autograd against finite differences; returns max relative error."""
    loss = f()
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    analytic = {
        n: (torch.zeros_like(p) if g is None else g)
        for (n, p), g in zip(params.items(), grads)
    }

    def f_value() -> float:
        with torch.no_grad():
            return float(f())

    numeric = finite_difference_grad(f_value, params)
    return max_relative_error(analytic, numeric)


# -- individual loss terms ----------------------------------------------------


def check_loss_terms(seed: int = 3) -> dict[str, float]:
    g = torch_generator(seed)
    dd = dict(dtype=torch.float64)
    errors = {}

    pred = torch.randn(1, 6, 6, generator=g, **dd).requires_grad_()
    target = torch.randn(1, 6, 6, generator=g, **dd)
    errors["rec"] = _check(lambda: reconstruction_loss(pred, target), {"pred": pred})

    mu = torch.randn(5, generator=g, **dd).requires_grad_()
    log_var = torch.randn(5, generator=g, **dd).requires_grad_()
    errors["kl"] = _check(
        lambda: kl_divergence(mu, log_var), {"mu": mu, "log_var": log_var}
    )

    for key, margin in (("tri_zinv", 0.5), ("tri_zf", 0.3)):
        a = torch.randn(4, generator=g, **dd).requires_grad_()
        p = (a + 0.3 * torch.randn(4, generator=g, **dd)).detach().requires_grad_()
        d_pos = float((a - p).pow(2).sum().detach())
        # place the negative so the hinge is active with a safe 0.2 gap;
        # central differences then never cross the kink
        u = torch.randn(4, generator=g, **dd)
        u = u / u.norm() * (max(margin + d_pos - 0.2, 0.05)) ** 0.5
        n = (a + u).detach().requires_grad_()
        hinge = float((margin + d_pos - (a - n).pow(2).sum()).detach())
        assert abs(hinge) > 1e-2, "degenerate triplet draw sits on the hinge"
        errors[key] = _check(
            lambda a=a, p=p, n=n, m=margin: triplet_loss(a, p, n, m),
            {"a": a, "p": p, "n": n},
        )

    psi = torch.rand(6, generator=g, **dd).requires_grad_()
    omega = (torch.randn(6, generator=g, **dd) + 0.5).detach()
    omega[omega.abs() < 0.2] += 0.4  # keep clear of the |.| kink
    omega.requires_grad_()
    errors["reg"] = _check(
        lambda: regulariser_loss(psi, omega), {"psi": psi, "omega": omega}
    )

    ft = FeatureTransform(3).double()
    feat = torch.randn(2, 3, 4, 4, generator=g, **dd)
    eps_b = torch.randn(3, generator=g, **dd)
    eps_s = torch.randn(3, generator=g, **dd)
    errors["ft_spreads"] = _check(
        lambda: (ft(feat, eps_b, eps_s).pow(2)).sum(),
        {"bias_spread": ft.bias_spread, "scale_spread": ft.scale_spread},
    )
    return errors


# -- full composite on the reduced model --------------------------------------


def reduced_config(**overrides) -> TrainConfig:
    base = dict(
        d=4, image_size=8, image_channels=1, channels=(4, 8),
        epochs=10, warmup_epochs=2, lambda1_ramp_last_epochs=4,
        meta_batch=2, warmup_batch_size=2,
    )
    base.update(overrides)
    return TrainConfig(**base)


def reduced_model(seed: int = 0, **overrides) -> tuple[DisentangledVAE, TrainConfig]:
    cfg = reduced_config(**overrides)
    model = DisentangledVAE.from_config(cfg).double()
    init_parameters(model, torch_generator(seed, "reduced-init"))
    return model, cfg


def reduced_batch(cfg: TrainConfig, seed: int, n: int = 2) -> EpisodeBatch:
    g = torch_generator(seed, "reduced-batch")
    shape = (n, cfg.image_channels, cfg.image_size, cfg.image_size)
    mk = lambda: torch.rand(*shape, generator=g, dtype=torch.float64) * 2 - 1
    cross = torch.full((n,), -1, dtype=torch.long)
    cross[0] = 1 % n  # one cross-style pair exercises term (d)
    return EpisodeBatch(sketches=mk(), photos=mk(), negatives=mk(), cross_idx=cross)


def check_composite(phase: Phase, seed: int = 11) -> float:
    """FD check of the episode loss in one phase over every parameter and psi."""
    model, cfg = reduced_model(seed)
    batch = reduced_batch(cfg, seed)
    weights = cfg.loss_weights(lambda1=0.3)
    psi = (0.5 + torch.rand(model.zinv_head_numel(),
                            generator=torch_generator(seed, "psi"),
                            dtype=torch.float64)).requires_grad_()
    noise_seed = (seed, "composite-noise", str(phase))

    def f():
        return episode_losses(
            model, batch, phase, weights, psi=psi,
            generator=torch_generator(*noise_seed),
        ).total

    params = {n: p for n, p in model.named_parameters()}
    if Phase(phase) is Phase.INNER:
        params["__psi__"] = psi
    return _check(f, params)


# -- bilevel quadratic oracle -------------------------------------------------


def bilevel_quadratic(alpha: float = 0.1, w0: float = 1.0) -> dict[str, float]:
    """Outer gradients of the closed-form bilevel problem, both orders."""

    def outer_grad(create_graph: bool) -> float:
        w = torch.tensor(w0, dtype=torch.float64, requires_grad=True)
        fast = inner_update(
            {"w": w}, lambda p: p["w"] ** 2, alpha, create_graph=create_graph
        )
        (g,) = torch.autograd.grad(0.5 * fast["w"] ** 2, [w])
        return float(g)

    return {
        "second_order": outer_grad(True),
        "first_order": outer_grad(False),
        "analytic": w0 * (1.0 - 2.0 * alpha) ** 2,
        "analytic_first_order": w0 * (1.0 - 2.0 * alpha),
    }


def run_all(verbose: bool = False) -> dict:
    """Every gradient suite; ``ok`` is the overall verdict."""
    report: dict = {"terms": check_loss_terms(), "composite": {}, "tolerance": REL_TOL}
    for phase in (Phase.WARMUP, Phase.INNER, Phase.OUTER):
        report["composite"][phase.value] = check_composite(phase)
    report["bilevel"] = bilevel_quadratic()

    errs = list(report["terms"].values()) + list(report["composite"].values())
    b = report["bilevel"]
    report["ok"] = (
        all(e < REL_TOL for e in errs)
        and abs(b["second_order"] - b["analytic"]) < 1e-6
        and abs(b["first_order"] - b["analytic_first_order"]) < 1e-6
        and abs(b["second_order"] - b["first_order"]) > 1e-3
    )
    if verbose:
        for name, err in {**report["terms"],
                          **{f"composite/{k}": v for k, v in report["composite"].items()}}.items():
            print(f"  {name:<20} max rel err {err:.3e}  {'ok' if err < REL_TOL else 'FAIL'}")
        print(f"  bilevel second-order {b['second_order']:.8f} expected {b['analytic']:.8f}")
        print(f"  bilevel first-order  {b['first_order']:.8f} expected "
              f"{b['analytic_first_order']:.8f}")
    return report
