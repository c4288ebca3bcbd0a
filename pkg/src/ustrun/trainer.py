"""Mean-teacher training loop with UCP, symmetric guidance, TP-RAM and reliability."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import segnet
from .grid import argmax_field, blend, confidence_mask, one_hot
from .losses import LossBreakdown, ce_dice, lambda_schedule, total_loss
from .masks import RectSpec, sample_rect_mask
from .metrics import EvalReport
from .reliability import (ReliableEntry, ReliableQueue, build_unreliable_intermediate, hardness,
                          pick_unreliable)
from .synthdata import Dataset, weak_augment, weak_strong_pair
from .tpram import StyleSchedule, mix_amplitude, sample_mixing_ratio
from .ucp import compose_ucp, ensemble_weight, merge_intermediate_pseudolabels

log = logging.getLogger(__name__)

FLAGS = ("ucp", "vanilla_gd", "sym_gd", "tp_ram", "ram", "reliable", "unreliable")

# ablation rows; "supervised" and "fixmatch" are the two baselines
ROWS = {
    "supervised": (),
    "fixmatch": ("vanilla_gd",),
    "row1": ("ucp",),
    "row2": ("ucp", "vanilla_gd"),
    "row3": ("ucp", "sym_gd"),
    "row4": ("ucp", "tp_ram"),
    "row5": ("ucp", "sym_gd", "ram"),
    "row6": ("ucp", "sym_gd", "tp_ram"),
    "row7": ("ucp", "sym_gd", "tp_ram", "reliable"),
    "row8": ("ucp", "sym_gd", "tp_ram", "reliable", "unreliable"),
}


@dataclass
class TrainConfig:
    t_total: int = 2000
    labeled_batch: int = 4
    unlabeled_batch: int = 4
    tau: float = 0.95
    beta: float = 0.01
    capacity: int = 20
    delta: float = 1.0005
    gamma0: float = 0.05
    lr0: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 1e-4
    ema_decay: float = 0.99
    reliable_source_prob: float = 0.5
    rect_area: tuple = (0.04, 0.36)
    rect_aspect: tuple = (0.5, 2.0)
    eval_every: int = 200
    seed: int = 0
    ucp: bool = False
    vanilla_gd: bool = False
    sym_gd: bool = False
    tp_ram: bool = False
    ram: bool = False
    reliable: bool = False
    unreliable: bool = False

    def validate(self) -> None:
        if self.sym_gd and self.vanilla_gd:
            raise ValueError("sym_gd and vanilla_gd are mutually exclusive")
        if self.ram and self.tp_ram:
            raise ValueError("ram and tp_ram are mutually exclusive")
        for flag in ("sym_gd", "reliable", "unreliable"):
            if getattr(self, flag) and not self.ucp:
                raise ValueError(f"{flag} requires ucp")
        if self.t_total < 1:
            raise ValueError("t_total must be positive")

    @classmethod
    def for_row(cls, row: str, **overrides) -> "TrainConfig":
        flags = {f: f in ROWS[row] for f in FLAGS}
        return cls(**{**flags, **overrides})

    def flags(self) -> tuple:
        return tuple(f for f in FLAGS if getattr(self, f))


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in types:
            raise KeyError(f"unknown config key {key!r}")
        out[key] = coerce(key, value)
    return out


def coerce(key: str, value: str):
    default = getattr(TrainConfig(), key)
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: not a boolean: {value!r}")
    if isinstance(default, tuple):
        return tuple(float(v) for v in value.replace(",", " ").split())
    return type(default)(value)


@dataclass
class IterationTrace:
    iter: int
    losses: LossBreakdown
    lr: float
    gamma: float
    queue_size: int
    admitted: int
    unreliable_id: int
    rho: float


@dataclass
class TrainResult:
    config: TrainConfig
    student: dict
    teacher: dict
    best_student: dict
    best_dc: float
    traces: list = field(default_factory=list)
    evals: list = field(default_factory=list)          # (iter, mean DC over all test domains)
    reliability: list = field(default_factory=list)    # per-epoch dicts
    seconds: float = 0.0


# ----------------------------------------------------------------- helpers

def _stack(samples, attr):
    return np.stack([getattr(s, attr) for s in samples])


def predict(params, images, batch: int = 32) -> np.ndarray:
    return np.concatenate([segnet.forward(params, images[i:i + batch])
                           for i in range(0, len(images), batch)])


def evaluate(params, samples, num_classes: int) -> EvalReport:
    report = EvalReport(num_classes)
    labels = argmax_field(predict(params, _stack(samples, "image")))
    for s, pred in zip(samples, labels):
        report.add(s.domain, pred, s.label)
    return report


def infer(params, image) -> np.ndarray:
    """Student-only prediction for one (D, H, W) image."""
    return argmax_field(segnet.forward(params, image))[0]


# ----------------------------------------------------------------- training

def train(config: TrainConfig, dataset: Dataset, init: dict | None = None,
          teacher_init: dict | None = None, progress: bool = False) -> TrainResult:
    config.validate()
    start = time.time()
    rng = np.random.default_rng(config.seed)
    c = dataset.num_classes
    d_in = dataset.labeled[0].image.shape[0]
    size = dataset.labeled[0].image.shape[-1]
    params = segnet.init_params(d_in, c, rng=rng) if init is None else {k: v.copy() for k, v in init.items()}
    pair = segnet.TeacherStudent.create(params, config.ema_decay)
    if teacher_init is not None:
        pair.teacher = {k: v.copy() for k, v in teacher_init.items()}
    sgd = segnet.SGD(config.momentum, config.weight_decay)
    queue = ReliableQueue(config.capacity, config.gamma0, config.delta)
    rect = RectSpec(tuple(config.rect_area), tuple(config.rect_aspect))
    result = TrainResult(config, pair.student, pair.teacher, {k: v.copy() for k, v in pair.student.items()},
                         float("-inf"))
    carried = None      # unreliable pick from the previous iteration
    n_lb, n_ub = len(dataset.labeled), len(dataset.unlabeled)
    epoch_len = max(1, -(-n_ub // config.unlabeled_batch))
    epoch_admitted = 0
    use_unlabeled = any(getattr(config, f) for f in FLAGS)

    for t in range(config.t_total):
        lam = lambda_schedule(t, config.t_total)
        lr = segnet.poly_lr(config.lr0, t, config.t_total)
        lb = rng.choice(n_lb, size=config.labeled_batch, replace=n_lb < config.labeled_batch)
        weak_lb = [weak_augment(dataset.labeled[i], rng) for i in lb]
        x_w, y_w = _stack(weak_lb, "image"), _stack(weak_lb, "label")

        pieces = [("sup", x_w, y_w, np.ones(y_w.shape, np.uint8), 1.0)]
        rho_mean = 0.0
        admitted = 0
        unreliable_id = -1

        if use_unlabeled:
            ub = rng.choice(n_ub, size=config.unlabeled_batch, replace=n_ub < config.unlabeled_batch)
            views = [weak_strong_pair(dataset.unlabeled[i], rng) for i in ub]
            u_w = np.stack([v[0].image for v in views])
            u_s = np.stack([v[1].image for v in views])
            p_hat = segnet.forward(pair.teacher, u_w)
            q_hat = argmax_field(p_hat)
            w_hat = confidence_mask(p_hat, config.tau)
            n_pair = min(config.labeled_batch, config.unlabeled_batch)

            # style transition of the labeled images (student side only)
            x_u = x_w
            if config.tp_ram or config.ram:
                sched = StyleSchedule(t, config.t_total, config.beta)
                rhos = [sample_mixing_ratio(sched, rng) if config.tp_ram else float(rng.uniform(0, 1))
                        for _ in range(n_pair)]
                x_u = x_w.copy()
                for i, r in enumerate(rhos):
                    x_u[i] = mix_amplitude(x_w[i], u_w[i], r, config.beta)
                rho_mean = float(np.mean(rhos))

            if config.ucp:
                masks = np.stack([sample_rect_mask(size, size, rect, rng) for _ in range(n_pair)])
                if config.reliable and len(queue) and rng.random() < config.reliable_source_prob:
                    entries = [queue.sample(rng) for _ in range(n_pair)]
                    src_student = np.stack([e.sample for e in entries])
                    src_teacher = src_student
                    src_prob = np.stack([e.prob for e in entries])
                else:
                    src_student = x_u[:n_pair]
                    src_teacher = x_w[:n_pair]
                    src_prob = one_hot(y_w[:n_pair], c, dtype=p_hat.dtype)
                inter = compose_ucp(src_student, src_prob, u_s[:n_pair], p_hat[:n_pair], masks, config.tau)
                in_img, in_lbl, in_w = inter.sample_in, inter.label_in, inter.weight_in
                if config.unreliable and carried is not None:
                    ur_s, ur_prob, unreliable_id = carried
                    s_ur, l_ur, w_ur = build_unreliable_intermediate(x_u[0], y_w[0], ur_s, ur_prob, config.tau)
                    in_img = np.concatenate([in_img, s_ur[None]])
                    in_lbl = np.concatenate([in_lbl, l_ur[None]])
                    in_w = np.concatenate([in_w, w_ur[None]])
                pieces.append(("in", in_img, in_lbl, in_w, lam))
                pieces.append(("out", inter.sample_out, inter.label_out, inter.weight_out, lam))

                if config.sym_gd:
                    u_w_in = blend(src_teacher, u_w[:n_pair], masks)
                    u_w_out = blend(u_w[:n_pair], src_teacher, masks)
                    preds = segnet.forward(pair.teacher, np.concatenate([u_w_in, u_w_out]))
                    q_mg, w_mg = merge_intermediate_pseudolabels(preds[:n_pair], preds[n_pair:], masks, config.tau)
                    w_ens = ensemble_weight(q_hat[:n_pair], q_mg, w_hat[:n_pair], w_mg)
                    pieces.append(("sym", u_s[:n_pair], q_mg, w_ens, lam * lam))
                elif config.vanilla_gd:
                    pieces.append(("sym", u_s, q_hat, w_hat, lam * lam))
            elif config.vanilla_gd:
                # without UCP the plain pseudo-label term is the only unsupervised
                # term and takes the unlabeled-direction slot (weight lambda)
                pieces.append(("out", u_s, q_hat, w_hat, lam))

            if config.reliable or config.unreliable:
                q_student = argmax_field(segnet.forward(pair.student, u_w))
                scores = [hardness(q_hat[i], q_student[i], c) for i in range(len(ub))]
                if config.reliable:
                    for i, h in enumerate(scores):
                        admitted += queue.try_admit(ReliableEntry(u_w[i], p_hat[i], q_hat[i], h, int(ub[i])))
                    if admitted == 0:
                        queue.relax_threshold()
                if config.unreliable:
                    k = pick_unreliable(scores)
                    next_carried = (u_s[k], p_hat[k], int(ub[k]))
                else:
                    next_carried = None

        images = np.concatenate([p[1] for p in pieces])
        probs, cache = segnet.forward(pair.student, images, return_cache=True)
        values = {"sup": 0.0, "in": 0.0, "out": 0.0, "sym": 0.0}
        dprobs = np.empty_like(probs)
        pos = 0
        for name, imgs, lbl, w, weight in pieces:
            n = len(imgs)
            v, g = ce_dice(lbl, probs[pos:pos + n], w)
            values[name] = v
            dprobs[pos:pos + n] = weight * g
            pos += n
        grads = segnet.backward(pair.student, cache, dprobs)
        losses = total_loss(values["sup"], values["in"], values["out"], values["sym"], lam)
        sgd.step(pair.student, grads, lr)
        pair.update_teacher(t)

        if config.unreliable and use_unlabeled:
            carried = next_carried
        epoch_admitted += admitted
        result.traces.append(IterationTrace(t, losses, lr, queue.gamma, len(queue), admitted,
                                            unreliable_id, rho_mean))
        if (t + 1) % epoch_len == 0 or t + 1 == config.t_total:
            result.reliability.append(dict(epoch=t // epoch_len, admitted=epoch_admitted, gamma=queue.gamma,
                                           queue_mean_hardness=queue.mean_hardness()))
            epoch_admitted = 0

        if config.eval_every and ((t + 1) % config.eval_every == 0 or t + 1 == config.t_total):
            dc = evaluate(pair.student, dataset.test, c).mean_dc()
            result.evals.append((t + 1, dc))
            if dc > result.best_dc:
                result.best_dc = dc
                result.best_student = {k: v.copy() for k, v in pair.student.items()}
            if progress:
                log.info("iter %d  loss %.4f  lambda %.4f  gamma %.4f  queue %d  test DC %.4f",
                         t + 1, losses.l_total, lam, queue.gamma, len(queue), dc)

    result.seconds = time.time() - start
    return result


# ----------------------------------------------------------------- outputs

def config_header(config: TrainConfig) -> str:
    return "".join(f"# {k}={' '.join(map(str, v)) if isinstance(v, tuple) else v}\n"
                   for k, v in asdict(config).items())


def telemetry_csv(result: TrainResult) -> str:
    lines = [config_header(result.config)
             + "iter,l_s,l_in,l_out,l_sym,l_total,lambda,lr,gamma,queue_size,admitted,unreliable_id,rho"]
    for tr in result.traces:
        b = tr.losses
        lines.append(f"{tr.iter},{b.l_s!r},{b.l_in!r},{b.l_out!r},{b.l_sym!r},{b.l_total!r},{b.lambda_t!r},"
                     f"{tr.lr!r},{tr.gamma!r},{tr.queue_size},{tr.admitted},{tr.unreliable_id},{tr.rho!r}")
    return "\n".join(lines) + "\n"


def reliability_csv(result: TrainResult) -> str:
    lines = ["epoch,admitted,gamma,queue_mean_hardness"]
    lines += [f"{r['epoch']},{r['admitted']},{r['gamma']!r},{r['queue_mean_hardness']!r}"
              for r in result.reliability]
    return "\n".join(lines) + "\n"


def write_outputs(result: TrainResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    segnet.save_checkpoint(out / "student.segn", result.student)
    segnet.save_checkpoint(out / "teacher.segn", result.teacher)
    segnet.save_checkpoint(out / "best.segn", result.best_student)
    (out / "telemetry.csv").write_text(telemetry_csv(result))
    (out / "reliability.csv").write_text(reliability_csv(result))
    with open(out / "evals.csv", "w") as f:
        f.write("iter,mean_dc\n")
        for it, dc in result.evals:
            f.write(f"{it},{dc!r}\n")
    return out


# ----------------------------------------------------------------- ablation

def run_ablation(base: TrainConfig, rows, seeds, dataset_fn, held_out=None, progress: bool = False):
    """Train every row for every seed; ``dataset_fn(seed)`` supplies the data.

    Returns one dict per row with per-seed DC on the held-out domains and
    its mean and standard deviation.
    """
    out = []
    for row in rows:
        flags = {f: f in ROWS[row] for f in FLAGS}
        dcs, dcs_all = [], []
        for seed in seeds:
            cfg = replace(base, seed=seed, **flags)
            ds = dataset_fn(seed)
            domains = held_out if held_out is not None else sorted({s.domain for s in ds.test} - {0})
            res = train(cfg, ds, progress=progress)
            report = evaluate(res.student, ds.test, ds.num_classes)
            dcs.append(report.mean_dc(domains))
            dcs_all.append(report.mean_dc())
            log.info("%s seed %d: held-out DC %.4f (%.0fs)", row, seed, dcs[-1], res.seconds)
        out.append(dict(row=row, flags="+".join(ROWS[row]) or "none", seeds=list(seeds), dc=dcs,
                        mean=float(np.mean(dcs)), std=float(np.std(dcs)),
                        mean_all=float(np.mean(dcs_all))))
    return out


def ablation_csv(rows) -> str:
    lines = ["row,flags,n_seeds,dc_mean,dc_std,dc_all_domains,per_seed"]
    for r in rows:
        lines.append(f"{r['row']},{r['flags']},{len(r['seeds'])},{r['mean']:.6f},{r['std']:.6f},"
                     f"{r['mean_all']:.6f},{' '.join(f'{d:.6f}' for d in r['dc'])}")
    return "\n".join(lines) + "\n"
