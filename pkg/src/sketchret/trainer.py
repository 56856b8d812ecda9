"""Warm-up plus episodic second-order meta-training.

Two phases: a non-episodic warm-up of the base model (FT layers inactive,
no regulariser), then meta-training where each episode takes one
differentiable inner gradient step on its train pairs (FT active,
regulariser on the z_inv head) and the outer loss on its validation pairs
updates the shared initialization, the regulariser weights psi, and the FT
spread parameters through the inner step.

Per-episode noise streams derive from (seed, epoch, episode index), so the
schedule of random draws is independent of evaluation order.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import torch
from torch import nn

from .checkpoint import save_checkpoint
from .config import TrainConfig
from .dataset import Dataset, load_dataset, split_dataset
from .episodes import build_batch, sample_task
from .errors import ContractViolation, DatasetError, NonFiniteLossError
from .evaluation import evaluate
from .losses import EpisodeBatch, Phase, episode_losses
from .model import DisentangledVAE, init_parameters
from .retrieval import embed_images
from .seeding import derive_seed, python_rng, torch_generator


def lambda1_schedule(epoch: int, config: TrainConfig) -> float:
    """KL weight: constant start value, then a linear ramp ending at the final epoch."""
    if not 0 <= epoch < config.epochs:
        raise ContractViolation(f"epoch {epoch} outside [0, {config.epochs})")
    ramp = config.lambda1_ramp_last_epochs
    ramp_start = config.epochs - ramp
    if epoch < ramp_start:
        return config.lambda1_start
    t = 1.0 if ramp == 1 else (epoch - ramp_start) / (ramp - 1)
    return config.lambda1_start + (config.lambda1_end - config.lambda1_start) * t


def clip_gradients(grads: list[torch.Tensor], max_norm: float) -> list[torch.Tensor]:
    """Differentiable global-norm clip (identity when under the threshold)."""
    total = torch.sqrt(sum(g.pow(2).sum() for g in grads))
    scale = max_norm / torch.clamp(total, min=max_norm)
    return [g * scale for g in grads]


def inner_update(
    params: dict[str, torch.Tensor],
    loss_fn,
    alpha: float,
    inner_steps: int = 1,
    grad_clip: float | None = None,
    create_graph: bool = True,
    adaptive: bool = False,
) -> dict[str, torch.Tensor]:
    """Apply ``inner_steps`` gradient steps, keeping the map differentiable.

    ``loss_fn`` receives the current parameter dict and returns a scalar.
    With ``create_graph`` the returned fast weights carry the full graph
    back to the inputs (second-order meta-gradients); ``adaptive`` swaps in
    a detached adaptive-moment step and is therefore first-order only.
    """
    if inner_steps < 1:
        raise ContractViolation("inner_steps must be >= 1")
    current = dict(params)
    names = sorted(current)
    m = {n: torch.zeros_like(current[n]) for n in names} if adaptive else None
    v = {n: torch.zeros_like(current[n]) for n in names} if adaptive else None
    for step in range(1, inner_steps + 1):
        loss = loss_fn(current)
        if not torch.isfinite(loss):
            raise NonFiniteLossError(f"inner loss is {loss.item()} at step {step}")
        grads = torch.autograd.grad(
            loss,
            [current[n] for n in names],
            create_graph=create_graph and not adaptive,
            allow_unused=True,
        )
        grads = [
            torch.zeros_like(current[n]) if g is None else g for n, g in zip(names, grads)
        ]
        if grad_clip is not None:
            grads = clip_gradients(grads, grad_clip)
        if adaptive:
            b1, b2, eps = 0.9, 0.999, 1e-8
            new = {}
            for n, g in zip(names, grads):
                g = g.detach()
                m[n] = b1 * m[n] + (1 - b1) * g
                v[n] = b2 * v[n] + (1 - b2) * g * g
                m_hat = m[n] / (1 - b1 ** step)
                v_hat = v[n] / (1 - b2 ** step)
                new[n] = current[n] - alpha * m_hat / (v_hat.sqrt() + eps)
            current = new
        else:
            current = {
                n: current[n] - alpha * g for n, g in zip(names, grads)
            }
    return current


def warmup_step(
    model: DisentangledVAE,
    batch: EpisodeBatch,
    weights,
    optimizer: torch.optim.Optimizer,
    epoch: int,
    config: TrainConfig,
    generator: torch.Generator,
):
    """One plain gradient step on the base objective (FT inactive, no L_Reg)."""
    if not config.no_meta and epoch >= config.warmup_epochs:
        raise ContractViolation(
            f"warmup_step called at epoch {epoch} >= warmup_epochs {config.warmup_epochs}"
        )
    terms = episode_losses(
        model, batch, Phase.WARMUP, weights, generator=generator,
        decode_photo_to_sketch=config.photo_to_sketch,
    )
    if not torch.isfinite(terms.total):
        raise NonFiniteLossError(f"warm-up loss is {terms.total.item()}")
    optimizer.zero_grad()
    terms.total.backward()
    nn.utils.clip_grad_norm_([p for p in model.parameters() if p.grad is not None],
                             config.grad_clip)
    optimizer.step()
    return terms


def outer_step(
    model: DisentangledVAE,
    psi: torch.Tensor,
    prepared: list[tuple[EpisodeBatch, EpisodeBatch, int]],
    weights,
    config: TrainConfig,
    optimizer: torch.optim.Optimizer,
) -> dict:
    """One meta-update from a batch of prepared episodes.

    ``prepared`` holds (trn_batch, val_batch, episode_seed) triples.  Each
    episode contributes L_tst evaluated at its adapted fast weights; the
    mean over episodes is backpropagated into the shared initialization,
    psi, and the FT spreads, then psi is clamped non-negative.
    """
    model.train()
    stats = {"episodes": len(prepared), "skipped_episodes": 0, "grad_skips": 0,
             "n_cross_skipped": 0}
    task_names = model.task_param_names()
    outer_terms = []
    for trn_batch, val_batch, ep_seed in prepared:
        g_inner = torch_generator(ep_seed, "inner")
        g_ft = torch_generator(ep_seed, "ft")
        g_outer = torch_generator(ep_seed, "outer")
        params0 = {n: model.get_parameter(n) for n in task_names}

        def trn_loss(p):
            return episode_losses(
                model, trn_batch, Phase.INNER, weights, psi=psi,
                generator=g_inner, ft_generator=g_ft, params=p,
                decode_photo_to_sketch=config.photo_to_sketch,
            ).total

        try:
            fast = inner_update(
                params0, trn_loss, config.alpha, config.inner_steps,
                grad_clip=config.grad_clip, adaptive=config.adaptive_inner,
            )
            terms = episode_losses(
                model, val_batch, Phase.OUTER, weights,
                generator=g_outer, params=fast,
                decode_photo_to_sketch=config.photo_to_sketch,
            )
            if not torch.isfinite(terms.total):
                raise NonFiniteLossError("outer loss non-finite")
        except NonFiniteLossError:
            stats["skipped_episodes"] += 1
            continue
        stats["n_cross_skipped"] += terms.n_cross_skipped
        outer_terms.append(terms)

    if not outer_terms:
        stats["loss"] = float("nan")
        return stats

    meta_loss = torch.stack([t.total for t in outer_terms]).mean()
    optimizer.zero_grad()
    meta_loss.backward()

    trainable = [p for group in optimizer.param_groups for p in group["params"]]
    grads = [p.grad for p in trainable if p.grad is not None]
    if any(not torch.isfinite(g).all() for g in grads):
        optimizer.zero_grad()
        stats["grad_skips"] += 1
    else:
        nn.utils.clip_grad_norm_(trainable, config.grad_clip)
        optimizer.step()
        with torch.no_grad():
            psi.clamp_(min=0)

    for key in ("rec", "kl", "tri_inv", "tri_f"):
        stats[key] = float(torch.stack([getattr(t, key).detach() for t in outer_terms]).mean())
    stats["loss"] = float(meta_loss.detach())
    return stats


def hard_negative_map(model: DisentangledVAE, split: Dataset, top: int = 10) -> dict:
    """Nearest other-task instances per instance under the current embeddings."""
    insts = sorted({p.instance_id for p in split.points})
    task_of = {}
    for p in split.points:
        task_of[p.instance_id] = p.instance_id if split.mode == "finegrained" else p.category_id
    from .dataset import load_image

    photos = torch.stack([load_image(split.photo_paths[i], split.image_size) for i in insts])
    emb = embed_images(model, photos)
    out = {}
    for i, inst in enumerate(insts):
        d = ((emb - emb[i]) ** 2).sum(axis=1)
        order = sorted(range(len(insts)), key=lambda j: (d[j], insts[j]))
        ranked = [insts[j] for j in order if task_of[insts[j]] != task_of[inst]]
        out[inst] = ranked[:top]
    return out


def _fix_ft_spreads(model: DisentangledVAE, config: TrainConfig) -> None:
    for ft in model.encoder.fts:
        with torch.no_grad():
            ft.bias_spread.fill_(config.fixed_ft_omega)
            ft.scale_spread.fill_(config.fixed_ft_eta)
        ft.bias_spread.requires_grad_(False)
        ft.scale_spread.requires_grad_(False)


def _warmup_epoch(model, split, config, weights, optimizer, epoch) -> dict:
    order = list(split.points)
    rng = python_rng(config.seed, "warmup-order", epoch)
    rng.shuffle(order)
    insts = sorted({p.instance_id for p in split.points})
    task_of = {
        p.instance_id: (p.instance_id if split.mode == "finegrained" else p.category_id)
        for p in split.points
    }
    totals, count = {}, 0
    for b, start in enumerate(range(0, len(order), config.warmup_batch_size)):
        pairs = tuple(order[start: start + config.warmup_batch_size])
        rng_b = python_rng(config.seed, "warmup-batch", epoch, b)
        negs = []
        for p in pairs:
            pool = [i for i in insts if task_of[i] != task_of[p.instance_id]]
            if not pool:
                raise DatasetError("warm-up needs at least two tasks for negatives")
            negs.append(pool[rng_b.randrange(len(pool))])
        batch = build_batch(pairs, tuple(negs), split, rng_b,
                            cross_enabled=config.cross_style)
        g = torch_generator(config.seed, "warmup-noise", epoch, b)
        terms = warmup_step(model, batch, weights, optimizer, epoch, config, g)
        for k, val in terms.scalars().items():
            totals[k] = totals.get(k, 0.0) + val
        count += 1
    record = {k: v / count for k, v in totals.items() if k != "n_cross_skipped"}
    record["loss"] = record.pop("total")
    record["n_cross_skipped"] = int(totals.get("n_cross_skipped", 0))
    record["phase"] = "warmup"
    record["batches"] = count
    return record


def _meta_epoch(model, psi, split, config, weights, optimizer, epoch, hard) -> dict:
    n_episodes = config.episodes_per_epoch or max(config.meta_batch, len(split.tasks()))
    n_steps = math.ceil(n_episodes / config.meta_batch)
    agg = {"episodes": 0, "skipped_episodes": 0, "grad_skips": 0, "n_cross_skipped": 0}
    losses, parts = [], {k: [] for k in ("rec", "kl", "tri_inv", "tri_f")}
    i = 0
    for _ in range(n_steps):
        prepared = []
        for _ in range(min(config.meta_batch, n_episodes - i)):
            ep_seed = derive_seed(config.seed, "episode", epoch, i)
            ep = sample_task(
                split,
                python_rng(config.seed, "task", epoch, i),
                val_ratio=config.val_ratio,
                hard_negatives=hard,
                seed=ep_seed,
            )
            trn_b = build_batch(ep.trn_pairs, ep.trn_negatives, split,
                                python_rng(ep_seed, "trn"), config.cross_style)
            val_b = build_batch(ep.val_pairs, ep.val_negatives, split,
                                python_rng(ep_seed, "val"), config.cross_style)
            prepared.append((trn_b, val_b, ep_seed))
            i += 1
        stats = outer_step(model, psi, prepared, weights, config, optimizer)
        for k in ("episodes", "skipped_episodes", "grad_skips", "n_cross_skipped"):
            agg[k] += stats[k]
        if math.isfinite(stats["loss"]):
            losses.append(stats["loss"])
            for k in parts:
                parts[k].append(stats[k])
    record = {"phase": "meta", **agg}
    record["loss"] = sum(losses) / len(losses) if losses else float("nan")
    for k, vals in parts.items():
        record[k] = sum(vals) / len(vals) if vals else float("nan")
    record["psi_sum"] = float(psi.detach().sum())
    record["psi_nonzero"] = int((psi.detach() > 0).sum())
    return record


def train(config: TrainConfig, data: str | Path | Dataset, out_dir: str | Path) -> Path:
    """Full training run; returns the checkpoint path to use for evaluation.

    Writes ``config.json``, a JSONL training log, ``last.ckpt`` every
    ``checkpoint_every`` epochs, and ``best.ckpt`` whenever the
    meta-validation acc@1 matches or improves the running best.
    Bit-identical across runs with the same config and seed.
    """
    config.validate()
    dataset = data if isinstance(data, Dataset) else load_dataset(data)
    meta_train, meta_val, _ = split_dataset(dataset, seed=config.seed)
    if len(meta_train.points) == 0:
        raise DatasetError("meta_train split is empty; refusing to start")
    heldout = set(dataset.styles_heldout)
    if heldout & (meta_train.styles() | meta_val.styles()):
        raise DatasetError("held-out styles leaked into a training split; refusing to start")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")

    model = DisentangledVAE.from_config(config)
    init_parameters(model, torch_generator(config.seed, "init"))
    if config.fixed_ft and model.with_ft:
        _fix_ft_spreads(model, config)
    psi = nn.Parameter(torch.zeros(model.zinv_head_numel()))
    if config.no_regd:
        psi.requires_grad_(False)

    warm_opt = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad], lr=config.warmup_lr
    )
    meta_params = [p for p in model.parameters() if p.requires_grad]
    if psi.requires_grad:
        meta_params = meta_params + [psi]
    meta_opt = torch.optim.Adam(meta_params, lr=config.beta)

    best_acc = -1.0
    last_path, best_path = out / "last.ckpt", out / "best.ckpt"
    with open(out / "train_log.jsonl", "w") as log:
        for epoch in range(config.epochs):
            lam1 = lambda1_schedule(epoch, config)
            weights = config.loss_weights(lambda1=lam1)
            if config.no_meta or epoch < config.warmup_epochs:
                record = _warmup_epoch(model, meta_train, config, weights, warm_opt, epoch)
            else:
                hard = None if config.random_negatives else hard_negative_map(model, meta_train)
                record = _meta_epoch(model, psi, meta_train, config, weights, meta_opt,
                                     epoch, hard)
            record["epoch"] = epoch
            record["lambda1"] = lam1

            run_eval = config.eval_every and (epoch + 1) % config.eval_every == 0
            if (run_eval or epoch == config.epochs - 1) and len(meta_val.points) > 0:
                metrics = evaluate(model, meta_val, gallery="full")
                record["eval"] = metrics
                acc = metrics.get("acc@1", -1.0)
                # >= so a tie prefers the more-trained model; validation
                # accuracy saturates long before the KL ramp finishes
                if acc >= best_acc:
                    best_acc = acc
                    save_checkpoint(best_path, model, config, psi=psi.detach(),
                                    optimizers={"warmup": warm_opt, "meta": meta_opt},
                                    extra={"epoch": epoch, "meta_val_acc1": acc})
            if (epoch + 1) % config.checkpoint_every == 0 or epoch == config.epochs - 1:
                save_checkpoint(last_path, model, config, psi=psi.detach(),
                                optimizers={"warmup": warm_opt, "meta": meta_opt},
                                extra={"epoch": epoch})
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()
    return best_path if best_path.exists() else last_path
