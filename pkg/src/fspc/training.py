"""Episodic meta-training and meta-testing.

A run trains on episodes from the base split, validates each epoch,
checkpoints, then reports mean accuracy with a 95% confidence interval over
meta-testing episodes from the novel split. All randomness is counter-based
off the run seed, so a (config, seed) pair pins the whole run.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbones import BackboneConfig, init_backbone, embed
from .checkpoint import save_checkpoint
from .cia import init_cia, cia_forward, CiaParameters
from .data import AugmentationConfig, PointCloud, augment, normalize_cloud, sample_points
from .episodes import Episode, EpisodeSpec, episode_seed, sample_episode
from .errors import NumericError
from .protohead import classify, compute_prototypes, episode_accuracy, episode_loss

# substream domains for the run's counter-based seeding
_TRAIN, _VAL, _TEST, _DATA, _FOLD = 0, 1, 2, 3, 9


@dataclass
class OptimizerConfig:
    lr0: float = 0.0008
    gamma: float = 0.5
    step_epochs: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.step_epochs < 1:
            raise ValueError("step_epochs must be >= 1")


@dataclass
class TrainConfig:
    profile: str = "paper"
    epochs: int = 80
    train_episodes_per_epoch: int = 400
    val_episodes_per_epoch: int = 600
    test_episodes: int = 700
    n_way: int = 5
    k_shot: int = 1
    q_query: int = 15
    n_points: int = 512
    seed: int = 0
    folds: int = 5
    sci: bool = True
    cif: bool = True
    k1: int = 3
    k2: int = 2
    cif_hidden: int = 32
    augment: bool = True
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.train_episodes_per_epoch < 1 or self.test_episodes < 1:
            raise ValueError("episode and epoch counts must be >= 1")
        if self.val_episodes_per_epoch < 0:
            raise ValueError("val episodes must be >= 0")

    @property
    def episode_spec(self) -> EpisodeSpec:
        return EpisodeSpec(self.n_way, self.k_shot, self.q_query)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["backbone"]["layer_widths"] = list(out["backbone"]["layer_widths"])
        return out


def paper_profile(**overrides) -> TrainConfig:
    return TrainConfig(profile="paper", **overrides)


def desk_profile(**overrides) -> TrainConfig:
    """Small synthetic-pool profile sized for CPU desk runs."""
    defaults = dict(
        profile="desk",
        epochs=10,
        train_episodes_per_epoch=100,
        val_episodes_per_epoch=50,
        test_episodes=200,
        n_points=64,
        folds=2,
        backbone=BackboneConfig(kind="dgcnn", layer_widths=(16, 16, 32, 64),
                                k_neighbors=10, embed_dim=64),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


PROFILES = {"paper": paper_profile, "desk": desk_profile}


def lr_at(epoch: int, cfg: OptimizerConfig) -> float:
    """Step decay: lr0 * gamma^floor(epoch / step_epochs)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.gamma ** (epoch // cfg.step_epochs)


class Adam:
    """Standard Adam with bias correction; one slot per named parameter."""

    def __init__(self, params: dict, cfg: OptimizerConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, params: dict, lr: float):
        c = self.cfg
        self.t += 1
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            m_hat = self.m[name] / (1 - c.beta1**self.t)
            v_hat = self.v[name] / (1 - c.beta2**self.t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + c.epsilon)


# ---------------------------------------------------------------------------
# Model


class Model:
    """Backbone plus optional cross-instance adaptation, with toggles."""

    def __init__(self, backbone_config: BackboneConfig, seed: int,
                 cia: CiaParameters | None = None, sci: bool = True, cif: bool = True):
        self.backbone_config = backbone_config
        self.backbone = init_backbone(
            backbone_config, episode_seed(seed, 1001))
        self.cia = cia
        self.sci = sci
        self.cif = cif

    def parameters(self) -> dict:
        out = dict(self.backbone.tensors)
        if self.cia is not None:
            out.update(self.cia.named_tensors())
        return out

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def state_tensors(self) -> dict:
        out = {name: p.data for name, p in self.parameters().items()}
        for lname, norm in self.backbone.norms.items():
            out[f"backbone.norm.{lname}.mean"] = norm.mean
            out[f"backbone.norm.{lname}.var"] = norm.var
        return out

    def load_state(self, tensors: dict):
        for name, p in self.parameters().items():
            p.data = np.array(tensors[name], dtype=np.float64)
        for lname, norm in self.backbone.norms.items():
            norm.mean = np.array(tensors[f"backbone.norm.{lname}.mean"])
            norm.var = np.array(tensors[f"backbone.norm.{lname}.var"])

    def snapshot(self) -> dict:
        return {name: arr.copy() for name, arr in self.state_tensors().items()}

    def episode_probs(self, support, support_labels, query, training=False) -> Tensor:
        """Embed support+query in one batch, adapt, classify."""
        n_support = support.shape[0]
        clouds = np.concatenate([support, query]) if query.shape[0] else support
        emb = embed(clouds, self.backbone_config, self.backbone, training=training)
        s_emb = ad.take_rows(emb, np.arange(n_support))
        q_emb = ad.take_rows(emb, n_support + np.arange(query.shape[0]))
        protos = compute_prototypes(s_emb, support_labels)
        if self.cia is not None:
            protos, q_emb = cia_forward(protos, q_emb, self.cia,
                                        sci=self.sci, cif=self.cif)
        return classify(protos, q_emb)


def build_model(cfg: TrainConfig, with_cia: bool = True) -> Model:
    cia = None
    if with_cia:
        cia = init_cia(cfg.backbone.embed_dim, k1=cfg.k1, k2=cfg.k2,
                       hidden=cfg.cif_hidden, seed=episode_seed(cfg.seed, 1002))
    return Model(cfg.backbone, seed=cfg.seed, cia=cia, sci=cfg.sci, cif=cfg.cif)


# ---------------------------------------------------------------------------
# Episode tensors


def episode_arrays(episode: Episode, n_points: int, seed: int,
                   augment_cfg: AugmentationConfig | None = None):
    """Sample, normalize and optionally augment an episode's clouds."""

    def prep(ex, j):
        s_sample, s_aug = np.random.SeedSequence((seed, j)).generate_state(2)
        cloud = normalize_cloud(sample_points(ex.cloud, n_points, int(s_sample)))
        if augment_cfg is not None:
            cloud = augment(cloud, augment_cfg, int(s_aug))
        return cloud.points

    support = np.stack([prep(ex, j) for j, ex in enumerate(episode.support)])
    if episode.query:
        query = np.stack([prep(ex, len(episode.support) + j)
                          for j, ex in enumerate(episode.query)])
    else:
        query = np.zeros((0, n_points, 3))
    return support, episode.support_labels, query, episode.query_labels


# ---------------------------------------------------------------------------
# Training and evaluation


def train_episode(model: Model, opt: Adam, episode: Episode, cfg: TrainConfig,
                  lr: float, data_seed: int):
    """One forward/backward/Adam step; returns (loss, accuracy)."""
    aug = AugmentationConfig() if cfg.augment else None
    support, s_labels, query, q_labels = episode_arrays(
        episode, cfg.n_points, data_seed, aug)
    probs = model.episode_probs(support, s_labels, query, training=True)
    # the log floor in the loss would silently mask non-finite probabilities
    if not np.isfinite(probs.data).all():
        raise NumericError("non-finite probabilities; run aborted")
    loss = episode_loss(probs, q_labels)
    if not np.isfinite(loss.data):
        raise NumericError(f"non-finite loss {loss.data!r}; run aborted")
    acc = episode_accuracy(probs, q_labels)
    model.zero_grad()
    loss.backward()
    opt.step(model.parameters(), lr)
    return float(loss.data), acc


@dataclass
class RunReport:
    mean_accuracy: float
    ci95_halfwidth: float
    per_episode_accuracies: list
    config: dict = field(default_factory=dict)
    wall_time_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "ci95_halfwidth": self.ci95_halfwidth,
            "n_episodes": len(self.per_episode_accuracies),
            "per_episode_accuracies": self.per_episode_accuracies,
            "config": self.config,
            "wall_time_seconds": self.wall_time_seconds,
        }


def summarize_accuracies(accs) -> tuple:
    accs = np.asarray(accs, dtype=np.float64)
    if accs.size == 0:
        raise ValueError("need at least one episode")
    mean = float(accs.mean())
    if accs.size == 1:
        return mean, 0.0
    sd = float(accs.std(ddof=1))
    return mean, 1.96 * sd / np.sqrt(accs.size)


def evaluate(model: Model, episodes, n_points: int, seed: int = 0,
             config: dict | None = None) -> RunReport:
    """Score episodes without updating any state; mean with 95% CI."""
    start = time.perf_counter()
    accs = []
    for i, ep in enumerate(episodes):
        support, s_labels, query, q_labels = episode_arrays(
            ep, n_points, episode_seed(seed, i), None)
        probs = model.episode_probs(support, s_labels, query, training=False)
        accs.append(episode_accuracy(probs, q_labels))
    mean, ci = summarize_accuracies(accs)
    return RunReport(mean_accuracy=mean, ci95_halfwidth=ci,
                     per_episode_accuracies=accs, config=config or {},
                     wall_time_seconds=time.perf_counter() - start)


def _write_history(path, rows):
    lines = ["epoch,lr,train_loss,train_acc,val_acc"]
    for r in rows:
        val = "" if r["val_acc"] is None else f"{r['val_acc']:.6f}"
        lines.append(f"{r['epoch']},{r['lr']:.8g},{r['train_loss']:.6f},"
                     f"{r['train_acc']:.6f},{val}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def fit(cfg: TrainConfig, base_pool, novel_pool, out_dir=None,
        val_pool=None) -> RunReport:
    """Full meta-training run; returns the meta-test report.

    Tests the checkpoint with the best validation accuracy (last epoch when
    validation is disabled). Writes config.json, history.csv, report.json
    and per-epoch checkpoints when out_dir is given.
    """
    start = time.perf_counter()
    model = build_model(cfg, with_cia=cfg.sci or cfg.cif)
    opt = Adam(model.parameters(), cfg.optimizer)
    spec = cfg.episode_spec
    val_pool = base_pool if val_pool is None else val_pool
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "checkpoints").mkdir(exist_ok=True)
        (out / "config.json").write_text(
            json.dumps({"schema_version": 1, **cfg.to_dict()}, indent=2) + "\n",
            encoding="utf-8")

    history = []
    best = (-1.0, None, None)  # (val acc, epoch, snapshot)
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg.optimizer)
        losses, accs = [], []
        for i in range(cfg.train_episodes_per_epoch):
            idx = epoch * cfg.train_episodes_per_epoch + i
            ep = sample_episode(base_pool, spec,
                                episode_seed(cfg.seed, (_TRAIN, idx)))
            loss, acc = train_episode(model, opt, ep, cfg, lr,
                                      episode_seed(cfg.seed, (_DATA, idx)))
            losses.append(loss)
            accs.append(acc)
        val_acc = None
        if cfg.val_episodes_per_epoch > 0:
            val_eps = [sample_episode(val_pool, spec,
                                      episode_seed(cfg.seed, (_VAL, epoch, i)))
                       for i in range(cfg.val_episodes_per_epoch)]
            val_acc = evaluate(model, val_eps, cfg.n_points,
                               seed=episode_seed(cfg.seed, (_VAL, epoch))).mean_accuracy
            if val_acc > best[0]:
                best = (val_acc, epoch, model.snapshot())
        history.append({"epoch": epoch, "lr": lr,
                        "train_loss": float(np.mean(losses)),
                        "train_acc": float(np.mean(accs)), "val_acc": val_acc})
        if out is not None:
            save_checkpoint(out / "checkpoints" / f"epoch_{epoch}.bin",
                            model.state_tensors(), config=cfg.to_dict())
            _write_history(out / "history.csv", history)

    if best[2] is not None:
        model.load_state(best[2])
    test_eps = [sample_episode(novel_pool, spec, episode_seed(cfg.seed, (_TEST, i)))
                for i in range(cfg.test_episodes)]
    report = evaluate(model, test_eps, cfg.n_points,
                      seed=episode_seed(cfg.seed, (_TEST,)),
                      config={"schema_version": 1, **cfg.to_dict(),
                              "selected_epoch": best[1] if best[2] is not None
                              else cfg.epochs - 1})
    report.wall_time_seconds = time.perf_counter() - start
    if out is not None:
        (out / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        save_checkpoint(out / "checkpoints" / "best.bin", model.state_tensors(),
                        config=cfg.to_dict())
    return report


def partition_classes(class_ids, folds: int, seed: int) -> list:
    """Random near-even partition of class ids into `folds` subsets."""
    classes = sorted(set(class_ids))
    if folds < 2:
        raise ValueError("folds must be >= 2")
    rng = np.random.default_rng(episode_seed(seed, (_FOLD, 0)))
    perm = rng.permutation(classes)
    return [sorted(chunk.tolist()) for chunk in np.array_split(perm, folds)]


def cross_validate(cfg: TrainConfig, base_pool, novel_pool, out_dir=None):
    """Class-level k-fold over the base split; tests each fold on novel.

    Returns (fold reports, aggregate dict).
    """
    classes = sorted({ex.class_id for ex in base_pool})
    if len(classes) < cfg.folds * cfg.n_way:
        raise ValueError(f"{len(classes)} base classes cannot support "
                         f"{cfg.folds} folds of {cfg.n_way}-way episodes")
    subsets = partition_classes(classes, cfg.folds, cfg.seed)
    reports = []
    for f, held_out in enumerate(subsets):
        held = set(held_out)
        train_pool = [ex for ex in base_pool if ex.class_id not in held]
        val_pool = [ex for ex in base_pool if ex.class_id in held]
        fold_dir = None if out_dir is None else Path(out_dir) / f"fold_{f}"
        reports.append(fit(cfg, train_pool, novel_pool, out_dir=fold_dir,
                           val_pool=val_pool))
    mean = float(np.mean([r.mean_accuracy for r in reports]))
    aggregate = {"mean_of_folds": mean,
                 "fold_accuracies": [r.mean_accuracy for r in reports],
                 "fold_subsets": subsets}
    if out_dir is not None:
        Path(out_dir, "aggregate.json").write_text(
            json.dumps(aggregate, indent=2) + "\n", encoding="utf-8")
    return reports, aggregate


# ---------------------------------------------------------------------------
# Gradient verification


def _episode_loss_value(model: Model, arrays) -> Tensor:
    support, s_labels, query, q_labels = arrays
    probs = model.episode_probs(support, s_labels, query, training=False)
    if not np.isfinite(probs.data).all():
        raise NumericError("non-finite intermediate in gradient check")
    loss = episode_loss(probs, q_labels)
    if not np.isfinite(loss.data):
        raise NumericError("non-finite intermediate in gradient check")
    return loss


def analytic_gradients(model: Model, arrays) -> dict:
    model.zero_grad()
    _episode_loss_value(model, arrays).backward()
    return {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for name, p in model.parameters().items()}


def numeric_gradients(model: Model, arrays, step: float = 1e-5) -> dict:
    grads = {}
    for name, p in model.parameters().items():
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(_episode_loss_value(model, arrays).data)
            flat[i] = orig - step
            lo = float(_episode_loss_value(model, arrays).data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads[name] = g
    return grads


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-8) -> float:
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def grad_check(model: Model, episode: Episode, n_points: int,
               step: float = 1e-5) -> float:
    """Central finite differences of the episode loss vs backprop.

    Requires a normalization-off model so the forward map is smooth in the
    parameters at the evaluation point.
    """
    if model.backbone_config.normalize:
        raise ValueError("grad_check requires a normalization-off backbone config")
    arrays = episode_arrays(episode, n_points, seed=0, augment_cfg=None)
    return max_relative_error(analytic_gradients(model, arrays),
                              numeric_gradients(model, arrays, step))


def randomize_parameters(model: Model, seed: int, scale: float = 0.8):
    """Overwrite all learnable tensors with uniform draws in [-scale, scale].

    Gradient checks run at such a point: zero-init biases leave many
    gradients below the finite-difference noise floor, which says nothing
    about backprop correctness.
    """
    rng = np.random.default_rng(seed)
    params = model.parameters()
    for name in sorted(params):
        params[name].data = rng.uniform(-scale, scale, size=params[name].data.shape)


def tiny_gradcheck_setup(kind: str, pool=None, param_seed: int | None = None):
    """Frozen tiny model + episode used by the gradcheck command and tests."""
    from .data import build_synthetic_pool

    if pool is None:
        pool = build_synthetic_pool(4, 6, 32, seed=0)
    cfg = TrainConfig(
        profile="desk", epochs=1, train_episodes_per_epoch=1,
        val_episodes_per_epoch=0, test_episodes=1,
        n_way=2, k_shot=1, q_query=2, n_points=8, cif_hidden=3, k1=2, k2=2,
        backbone=BackboneConfig(kind=kind, layer_widths=(4, 4), k_neighbors=3,
                                embed_dim=4, normalize=False))
    model = build_model(cfg)
    if param_seed is None:
        param_seed = 23 if kind == "pointnet" else 0
    randomize_parameters(model, param_seed)
    episode = sample_episode(pool, cfg.episode_spec, seed=4)
    return model, episode, cfg


def state_hash(model: Model) -> str:
    """SHA-256 over the checkpoint serialization of the current state."""
    h = hashlib.sha256()
    for name in sorted(model.state_tensors()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(model.state_tensors()[name], dtype="<f8").tobytes())
    return h.hexdigest()
