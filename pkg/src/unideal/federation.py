"""Round orchestration for the simulated federation.

Each round the server broadcasts the method's shared object, every
participating client trains locally, uploads its share, and the server
averages the uploads. Clients draw randomness only from their own stream,
seeded from ``(seed, client_id, round)``, so results do not depend on the
order (or thread) in which clients run.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .clkd import KD_REDUCTIONS, CurriculumSchedule, SimilarityMetric, clkd_batch, combined_objective, kept_count
from .errors import ConfigurationError, IncompatibleHeadError, InvalidInputError
from .model import Architecture, DecoupledModel, ParamSnapshot, backward_student, forward_dual, head_fraction
from .nn import Batch, GradientSet, backward, cross_entropy_loss, forward, sgd_step

log = logging.getLogger(__name__)

METHOD_KINDS = ("local", "fedavg", "fedrep", "partial_avg", "partial_avg_kd", "partial_kd", "unideal")
_SHARES = {
    "local": "none",
    "fedavg": "full",
    "fedrep": "extractor",
    "partial_avg": "head",
    "partial_avg_kd": "head",
    "partial_kd": "head",
    "unideal": "head",
}
_INIT_STREAM = 0
_SERVER_STREAM = 2**31 - 1


@dataclass(frozen=True)
class Method:
    kind: str
    metric: SimilarityMetric = SimilarityMetric()

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigurationError(f"unknown method {self.kind!r}; expected one of {list(METHOD_KINDS)}")

    @classmethod
    def parse(cls, text: str, default_metric: SimilarityMetric = SimilarityMetric()) -> Method:
        """``"unideal"`` or ``"unideal:inv_l1"``."""
        kind, _, metric = text.strip().partition(":")
        if metric:
            return cls(kind, SimilarityMetric(metric, default_metric.epsilon))
        return cls(kind, default_metric)

    @property
    def shares(self) -> str:
        return _SHARES[self.kind]

    @property
    def distills(self) -> bool:
        return self.kind in ("partial_avg_kd", "partial_kd", "unideal")

    @property
    def replaces_head(self) -> bool:
        return self.kind in ("partial_avg", "partial_avg_kd")

    @property
    def needs_homogeneous(self) -> bool:
        return self.kind in ("fedavg", "fedrep")

    @property
    def label(self) -> str:
        if self.distills and self.kind != "partial_kd" and self.metric.kind != "cosine":
            return f"{self.kind}-{self.metric.kind}"
        return self.kind


@dataclass(frozen=True)
class LocalHyper:
    lr: float = 0.003
    local_epochs: int = 2
    batch_size: int = 32
    alpha: float = 1.0
    kd_reduction: str = "batchmean"

    def __post_init__(self):
        if self.kd_reduction not in KD_REDUCTIONS:
            raise ConfigurationError(f"unknown kd_reduction {self.kd_reduction!r}")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be non-negative")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("local_epochs and batch_size must be positive")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be non-negative")


@dataclass
class ClientState:
    client_id: int
    model: DecoupledModel
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    seed: int = 0
    loss_history: list[float] = field(default_factory=list)
    accuracy_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.x_train.shape[0] < 1 or self.x_test.shape[0] < 1:
            raise InvalidInputError(f"client {self.client_id} needs non-empty train and test data")

    def rng(self, round_index: int) -> np.random.Generator:
        return client_rng(self.seed, self.client_id, round_index + 1)

    def accuracy(self) -> float:
        return float(np.mean(self.model.predict(self.x_test) == self.y_test))


def client_rng(seed: int, client_id: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, client_id, stream])


@dataclass
class LocalStats:
    train_loss: float
    ce_loss: float
    cl_loss: float
    kept_fraction: float
    n_batches: int


@dataclass
class RoundReport:
    round: int
    train_loss: list[float]
    objective: list[float]
    accuracy: list[float]
    mean_accuracy: float
    bytes_up: int
    bytes_down: int
    wall_seconds: float

    @property
    def mean_objective(self) -> float:
        return float(np.mean(self.objective))


@dataclass
class FederationResult:
    method: Method
    seed: int
    reports: list[RoundReport]
    architectures: list[Architecture]

    @property
    def best_accuracy(self) -> float:
        return max(r.mean_accuracy for r in self.reports)

    @property
    def best_round(self) -> int:
        best = self.best_accuracy
        return next(r.round for r in self.reports if r.mean_accuracy == best)

    def objective_curve(self) -> list[float]:
        return [r.mean_objective for r in self.reports]


# -- aggregation -------------------------------------------------------------


def aggregate_heads(snapshots: Sequence[ParamSnapshot], weights: Sequence[float] | None = None) -> ParamSnapshot:
    """Elementwise mean of client snapshots (unweighted unless ``weights``).

    Values are sorted per coordinate and averaged as offsets from the
    smallest, which makes the result independent of client order and exact
    when all snapshots agree.
    """
    if not snapshots:
        raise InvalidInputError("cannot aggregate zero snapshots")
    sig = snapshots[0].signature
    for s in snapshots[1:]:
        if s.signature != sig:
            raise IncompatibleHeadError(f"signature {s.signature} differs from {sig}")
    if len(snapshots) == 1:
        return snapshots[0]
    stack = np.stack([s.values for s in snapshots])
    order = np.argsort(stack, axis=0, kind="stable")
    ordered = np.take_along_axis(stack, order, axis=0)
    ref = ordered[0]
    offsets = ordered - ref
    if weights is None:
        mean = ref + offsets.sum(axis=0) / len(snapshots)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(snapshots),) or (w < 0).any() or w.sum() <= 0:
            raise InvalidInputError("need one non-negative weight per snapshot with a positive sum")
        w_ordered = w[order]
        mean = ref + (w_ordered * offsets).sum(axis=0) / w.sum()
    return ParamSnapshot(sig, mean)


def shared_snapshot(model: DecoupledModel, shares: str) -> ParamSnapshot | None:
    if shares == "head":
        return model.head_snapshot()
    if shares == "full":
        return model.full_snapshot()
    if shares == "extractor":
        return model.extractor_snapshot()
    return None


# -- local training ----------------------------------------------------------


def schedule_step(round_index: int, epoch: int, local_epochs: int, reset_each_round: bool) -> int:
    return epoch if reset_each_round else round_index * local_epochs + epoch


def _student_forward(model: DecoupledModel, x: np.ndarray):
    ext_acts = forward(model.extractor, x)
    head_acts = forward(model.head, ext_acts[-1])
    return ext_acts, head_acts


def _backward_split(model: DecoupledModel, ext_acts, head_acts, grad_out) -> GradientSet:
    head_grads, g_feat = backward(model.head, head_acts, grad_out)
    ext_grads, _ = backward(model.extractor, ext_acts, g_feat)
    return GradientSet(ext_grads.weights + head_grads.weights, ext_grads.biases + head_grads.biases)


def install_shared(client: ClientState, shared: ParamSnapshot | None, method: Method) -> None:
    if shared is None:
        if method.shares != "none":
            raise IncompatibleHeadError(f"method {method.kind} requires a shared snapshot")
        return
    if method.shares == "full":
        client.model.install_full(shared)
    elif method.shares == "extractor":
        client.model.install_extractor(shared)
    elif method.replaces_head:
        client.model.install_head(shared)
    elif method.shares == "head":
        # validate compatibility even when the head is only used as a teacher
        client.model.head_layers_from(shared)


def local_round(
    client: ClientState,
    shared: ParamSnapshot | None,
    method: Method,
    schedule: CurriculumSchedule,
    hyper: LocalHyper,
    round_index: int = 0,
    reset_each_round: bool = False,
) -> tuple[ClientState, LocalStats]:
    """Train one client for ``hyper.local_epochs`` epochs; updates in place."""
    install_shared(client, shared, method)
    teacher = client.model.head_layers_from(shared) if method.distills else None
    if method.kind == "partial_kd":
        schedule = replace(schedule, mode="full")
    rng = client.rng(round_index)
    x, y = client.x_train, client.y_train
    n = x.shape[0]
    B = hyper.batch_size
    totals = np.zeros(3)
    kept_total = 0
    seen = 0
    batches = 0
    for epoch in range(hyper.local_epochs):
        step = schedule_step(round_index, epoch, hyper.local_epochs, reset_each_round)
        perm = rng.permutation(n)
        for start in range(0, n, B):
            idx = perm[start : start + B]
            batch = Batch(x[idx], y[idx])
            model = client.model
            if teacher is None:
                ext_acts, head_acts = _student_forward(model, batch.inputs)
                ce = cross_entropy_loss(head_acts[-1], batch.labels)
                loss, grad_out = ce
                cl_loss = 0.0
                kept = 0
                grads = _backward_split(model, ext_acts, head_acts, grad_out)
            else:
                fwd = forward_dual(model, teacher, batch)
                ce = cross_entropy_loss(fwd.student_logits, batch.labels)
                kept = kept_count(step, schedule, batch.size)
                cl = clkd_batch(fwd.teacher_logits, fwd.student_logits, method.metric, kept, hyper.kd_reduction)
                loss, grad_out = combined_objective(ce, cl, hyper.alpha)
                cl_loss = cl.loss
                kept = cl.kept_count
                grads = backward_student(model, fwd, grad_out)
            model.set_layers(sgd_step(model.layers, grads, hyper.lr))
            totals += (loss, ce[0], cl_loss)
            kept_total += kept
            seen += batch.size
            batches += 1
    means = totals / batches
    stats = LocalStats(float(means[0]), float(means[1]), float(means[2]), kept_total / seen, batches)
    client.loss_history.append(stats.train_loss)
    return client, stats


def evaluate_objective(client: ClientState, teacher_head: ParamSnapshot | None, method: Method, hyper: LocalHyper) -> float:
    """Mean per-batch combined objective over the client's training set.

    Batches are taken in storage order and every sample is kept in the
    distillation term, so the value is comparable across rounds regardless of
    the curriculum position. Non-distilling methods report cross-entropy.
    """
    model = client.model
    teacher = model.head_layers_from(teacher_head) if (method.distills and teacher_head is not None) else None
    x, y = client.x_train, client.y_train
    B = hyper.batch_size
    total = 0.0
    count = 0
    for start in range(0, x.shape[0], B):
        batch = Batch(x[start : start + B], y[start : start + B])
        if teacher is None:
            loss = cross_entropy_loss(model.logits(batch.inputs), batch.labels)[0]
        else:
            fwd = forward_dual(model, teacher, batch)
            ce = cross_entropy_loss(fwd.student_logits, batch.labels)
            cl = clkd_batch(fwd.teacher_logits, fwd.student_logits, method.metric, batch.size, hyper.kd_reduction)
            loss = combined_objective(ce, cl, hyper.alpha)[0]
        total += loss
        count += 1
    return total / count


# -- federation --------------------------------------------------------------


@dataclass(frozen=True)
class FederationSettings:
    rounds: int = 50
    hyper: LocalHyper = LocalHyper()
    schedule_mode: str = "linear_kept"
    reset_each_round: bool = False
    weighted_aggregation: bool = False
    sample_fraction: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigurationError("rounds must be at least 1")
        if not 0 < self.sample_fraction <= 1:
            raise ConfigurationError("sample_fraction must lie in (0, 1]")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")

    def schedule(self) -> CurriculumSchedule:
        steps = self.hyper.local_epochs * (1 if self.reset_each_round else self.rounds)
        return CurriculumSchedule(steps, self.schedule_mode)


def check_compatibility(method: Method, archs: Sequence[Architecture]) -> None:
    if not archs:
        raise ConfigurationError("a federation needs at least one client")
    if method.needs_homogeneous and len({a for a in archs}) > 1:
        raise ConfigurationError(f"{method.kind} requires identical architectures on every client")
    if method.shares == "head" and len({a.head_signature() for a in archs}) > 1:
        raise ConfigurationError(f"{method.kind} requires identical head signatures on every client")


def make_clients(
    data: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
    archs: Sequence[Architecture],
    seed: int,
) -> list[ClientState]:
    clients = []
    for cid, ((xtr, ytr, xte, yte), arch) in enumerate(zip(data, archs)):
        model = DecoupledModel.init(arch, client_rng(seed, cid, _INIT_STREAM))
        clients.append(ClientState(cid, model, xtr, ytr, xte, yte, seed))
    return clients


def run_federation(
    clients: list[ClientState],
    method: Method,
    settings: FederationSettings,
    seed: int = 0,
    client_order: Sequence[int] | None = None,
) -> FederationResult:
    """Run ``settings.rounds`` rounds; clients are updated in place.

    ``client_order`` only changes the sequence in which clients execute within
    a round (useful to check order independence); results are unaffected.
    """
    archs = [c.model.arch for c in clients]
    check_compatibility(method, archs)
    schedule = settings.schedule()
    hyper = settings.hyper
    K = len(clients)
    order = list(range(K)) if client_order is None else list(client_order)
    if sorted(order) != list(range(K)):
        raise InvalidInputError("client_order must be a permutation of the client ids")
    weights = [float(c.x_train.shape[0]) for c in clients] if settings.weighted_aggregation else None

    def aggregate(snaps, ids):
        w = None if weights is None else [weights[i] for i in ids]
        return aggregate_heads(snaps, w)

    # the initial global object is the mean of the clients' initial shares
    if method.shares != "none":
        shared = aggregate([shared_snapshot(c.model, method.shares) for c in clients], range(K))
    else:
        shared = None

    n_pick = max(1, int(np.floor(settings.sample_fraction * K + 0.5)))
    reports: list[RoundReport] = []
    pool = ThreadPoolExecutor(settings.workers) if settings.workers > 1 else None
    try:
        for t in range(settings.rounds):
            t0 = time.perf_counter()
            if n_pick < K:
                picked = set(np.random.default_rng([seed, _SERVER_STREAM, t]).choice(K, n_pick, replace=False).tolist())
            else:
                picked = set(range(K))
            run_ids = [i for i in order if i in picked]

            def work(i, _shared=shared, _t=t):
                return local_round(clients[i], _shared, method, schedule, hyper, _t, settings.reset_each_round)[1]

            if pool is not None:
                results = dict(zip(run_ids, pool.map(work, run_ids)))
            else:
                results = {i: work(i) for i in run_ids}

            ids = sorted(picked)
            down = sum(shared.nbytes for _ in ids) if shared is not None else 0
            teacher_used = shared
            if method.shares != "none":
                uploads = [shared_snapshot(clients[i].model, method.shares) for i in ids]
                up = sum(s.nbytes for s in uploads)
                shared = aggregate(uploads, ids)
            else:
                up = 0

            acc, obj, train_loss = [], [], []
            for c in clients:
                a = c.accuracy()
                c.accuracy_history.append(a)
                acc.append(a)
                obj.append(evaluate_objective(c, teacher_used, method, hyper))
                train_loss.append(results[c.client_id].train_loss if c.client_id in results else float("nan"))
            reports.append(
                RoundReport(t, train_loss, obj, acc, float(np.mean(acc)), up, down, time.perf_counter() - t0)
            )
            log.debug("round %d %s mean acc %.4f", t, method.label, reports[-1].mean_accuracy)
    finally:
        if pool is not None:
            pool.shutdown()
    return FederationResult(method, seed, reports, archs)


# -- communication accounting --------------------------------------------------


@dataclass(frozen=True)
class CommAccounting:
    bytes_per_round: int
    rounds_to_target: int | None
    total_bytes: int | None
    target: float


def shipped_bytes(method: Method, arch: Architecture) -> int:
    """Payload bytes of one transfer (one direction) for one client."""
    shares = method.shares
    if shares == "none":
        return 0
    head, total, _ = head_fraction(arch)
    n = {"head": head, "full": total, "extractor": total - head}[shares]
    return 4 * n


def communication_accounting(
    method: Method,
    architectures: Sequence[Architecture],
    reports: Sequence[RoundReport] | None = None,
    target: float = 0.5,
) -> CommAccounting:
    """Per-round bytes (upload plus download, all clients), rounds needed to
    reach ``target`` mean accuracy (1-based; None if never) and their product."""
    c_r = sum(2 * shipped_bytes(method, a) for a in architectures)
    n_c = None
    if reports is not None:
        n_c = next((r.round + 1 for r in reports if r.mean_accuracy >= target), None)
    c_t = None if n_c is None else c_r * n_c
    return CommAccounting(c_r, n_c, c_t, target)
