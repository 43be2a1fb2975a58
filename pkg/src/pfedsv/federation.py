"""Round loop for the Shapley-value collaboration algorithm and its baselines.

Each round: participants train locally and upload to a pool; each client then
downloads a small, relevance-ranked set of peer models, prices every member of
the downloaded coalition by Shapley value on its own validation data, folds
those values into a running relevance vector, and rebuilds its personal model
as a Shapley-and-distance weighted average.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from pfedsv.config import ExperimentConfig
from pfedsv.data import (
    ClientSplit,
    Dataset,
    PartitionSpec,
    load_idx,
    partition_dirichlet,
    partition_pathological,
    split_client,
    subset,
    synth_blobs,
)
from pfedsv.learner import (
    ArchitectureSpec,
    LabeledBatch,
    ParamVector,
    add_gaussian_noise,
    average_params,
    evaluate,
    init_params,
    local_train,
    param_distance,
    weighted_aggregate,
)
from pfedsv.rngs import stream
from pfedsv.shapley import CoalitionGame, exact_shapley_subset, monte_carlo_shapley

DISTANCE_FLOOR = 1e-12  # identical uploads would otherwise divide by zero
PAIRWISE_EPS = 1e-6
PAIRWISE_SELF_DIST = 1.0


@dataclass
class ClientState:
    """One simulated client: personal model, relevance memory, local data."""

    id: int
    params: ParamVector
    relevance: np.ndarray
    split: ClientSplit
    evaluated: set = field(default_factory=set)
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class ModelPool:
    """Uploads visible to everyone for one round."""

    round_index: int
    models: dict

    def others(self, client_id):
        return sorted(j for j in self.models if j != client_id)


@dataclass(frozen=True)
class DownloadPlan:
    chosen: tuple
    k_nominal: int

    def __post_init__(self):
        if len(set(self.chosen)) != len(self.chosen):
            raise ValueError("download plan repeats a client")

    @property
    def k_eff(self) -> int:
        return len(self.chosen)


@dataclass(frozen=True)
class AggregationRecord:
    """How one client rebuilt its model: members, their prices, final weights."""

    members: tuple
    shapley: tuple
    raw_weights: tuple
    weights: tuple
    fallback: bool


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    participants: tuple
    accuracies: tuple  # per client, on its own test split, after aggregation
    mta: float
    k_eff: tuple
    records: tuple  # per client AggregationRecord or None
    utility_evaluations: int


@dataclass
class SimulationResult:
    config: ExperimentConfig
    dataset: Dataset
    partition: PartitionSpec
    states: list
    reports: list

    def relevance_matrix(self) -> np.ndarray:
        return np.vstack([s.relevance for s in self.states])


def select_downloads(state: ClientState, pool: ModelPool, k: int, rng) -> DownloadPlan:
    """Top-k peers by relevance, excluding anyone priced negative so far.

    Peers this client has never priced come first (uniformly shuffled), ahead
    of every already-priced peer; that guarantees full coverage of n-1 peers
    within ceil((n-1)/k) rounds. Priced peers follow, best relevance first.
    """
    candidates = [j for j in pool.others(state.id) if state.relevance[j] >= 0]
    if not candidates:
        return DownloadPlan((), k)
    shuffle = {j: rank for rank, j in enumerate(rng.permutation(candidates))}
    candidates.sort(
        key=lambda j: (j in state.evaluated, -state.relevance[j], shuffle[j])
    )
    return DownloadPlan(tuple(candidates[: min(k, len(candidates))]), k)


def _member_params(state: ClientState, pool: ModelPool, member: int) -> ParamVector:
    # the client trusts its own local copy over its possibly-noised upload
    return state.params if member == state.id else pool.models[member]


def evaluate_coalition(
    state: ClientState,
    plan: DownloadPlan,
    pool: ModelPool,
    samples: int | None = None,
    exact_threshold: int = 6,
    force_monte_carlo: bool = False,
    rng=None,
):
    """Shapley value per coalition member, utility = validation accuracy.

    Exact values when the coalition is small enough to enumerate; Monte Carlo
    permutation sampling (3 times the coalition size by default) otherwise.
    """
    players = sorted({*plan.chosen, state.id})
    val = LabeledBatch(state.split.validation.features, state.split.validation.labels)

    def utility(members):
        merged = average_params([_member_params(state, pool, j) for j in members])
        return evaluate(merged, val)[0]

    game = CoalitionGame(players, utility)
    if not force_monte_carlo and len(players) <= exact_threshold:
        result = exact_shapley_subset(game)
    else:
        draws = samples if samples is not None else 3 * len(players)
        result = monte_carlo_shapley(game, draws, rng)
    return dict(zip(result.players, result.values)), result


def update_relevance(state: ClientState, svs: dict, alpha_ema: float) -> None:
    """Exponential moving average of per-member prices; non-members keep theirs."""
    if not 0 <= alpha_ema <= 1:
        raise ValueError("alpha_ema must be in [0, 1]")
    for j, sv in svs.items():
        state.relevance[j] = alpha_ema * state.relevance[j] + (1 - alpha_ema) * sv
    state.evaluated.update(j for j in svs if j != state.id)


def compute_weights(
    state: ClientState,
    svs: dict,
    pool: ModelPool,
    distance: str = "l2",
) -> AggregationRecord:
    """Clamp prices at zero, discount peers by parameter distance, normalize.

    The self model has no distance to itself; it is priced against the mean
    distance of the positively-priced peers (1.0 when there are none). A raw
    sum of zero falls back to keeping the local model untouched.
    """
    members = tuple(sorted(svs))
    squared = distance == "l2sq"
    dists, raw = {}, []
    for j in members:
        if j == state.id:
            continue
        d = param_distance(state.params, pool.models[j], squared=squared)
        dists[j] = max(d, DISTANCE_FLOOR)
    positive = [dists[j] for j in members if j != state.id and svs[j] > 0]
    self_div = sum(positive) / len(positive) if positive else 1.0
    for j in members:
        divisor = self_div if j == state.id else dists[j]
        raw.append(max(svs[j], 0.0) / divisor)
    total = sum(raw)
    if total == 0.0:
        weights = tuple(1.0 if j == state.id else 0.0 for j in members)
        return AggregationRecord(members, tuple(svs[j] for j in members), tuple(raw), weights, True)
    weights = tuple(w / total for w in raw)
    return AggregationRecord(members, tuple(svs[j] for j in members), tuple(raw), weights, False)


def client_participation_sampler(n: int, fraction: float, rng) -> tuple:
    """Uniform ceil(fraction * n)-subset of client ids, ascending."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    size = math.ceil(fraction * n)
    return tuple(sorted(rng.choice(n, size=size, replace=False).tolist()))


def build_clients(cfg: ExperimentConfig):
    """Dataset, partition, and freshly initialized client states for a config."""
    cfg.validate()
    if cfg.dataset == "synth":
        ds = synth_blobs(
            cfg.synth_classes,
            cfg.synth_dim,
            cfg.synth_per_class,
            cfg.synth_spread,
            stream(cfg.seed, "data"),
        )
    else:
        ds = load_idx(cfg.idx_images, cfg.idx_labels)
    if cfg.partition == "pathological":
        part = partition_pathological(
            ds, cfg.clients, cfg.labels_per_client, stream(cfg.seed, "partition")
        )
    else:
        part = partition_dirichlet(
            ds, cfg.clients, cfg.dirichlet_alpha, stream(cfg.seed, "partition")
        )
    arch = ArchitectureSpec(ds.input_dim, cfg.hidden_dim, ds.class_count)
    start = init_params(arch, stream(cfg.seed, "init"))  # one shared starting point
    states = []
    for i in range(cfg.clients):
        split = split_client(
            subset(ds, part.client_indices[i]),
            cfg.val_frac,
            cfg.test_frac,
            stream(cfg.seed, "split", i),
        )
        states.append(
            ClientState(
                id=i,
                params=start,
                relevance=np.zeros(cfg.clients),
                split=split,
            )
        )
    return ds, part, states


def _train_batch(split: ClientSplit) -> LabeledBatch:
    return LabeledBatch(split.train.features, split.train.labels)


def _test_batch(split: ClientSplit) -> LabeledBatch:
    return LabeledBatch(split.test.features, split.test.labels)


def _train_upload(state: ClientState, cfg: ExperimentConfig, round_index: int):
    trained = local_train(
        state.params,
        _train_batch(state.split),
        cfg.epochs,
        cfg.lr,
        cfg.batch_size,
        stream(cfg.seed, "train", round_index, state.id),
    )
    upload = trained
    if cfg.noise_sigma > 0:
        upload = add_gaussian_noise(
            trained, cfg.noise_sigma, stream(cfg.seed, "noise", round_index, state.id)
        )
    return trained, upload


def _personalization_round(states, cfg, round_index, participants):
    """One full round of the Shapley algorithm; returns (records, eval count)."""
    uploads = {}
    for i in participants:
        trained, upload = _train_upload(states[i], cfg, round_index)
        states[i].params = trained
        uploads[i] = upload
    pool = ModelPool(round_index, uploads)
    records = [None] * len(states)
    staged = {}
    eval_count = 0
    for i in participants:
        state = states[i]
        plan = select_downloads(state, pool, cfg.k, stream(cfg.seed, "select", round_index, i))
        if plan.chosen:
            svs, result = evaluate_coalition(
                state,
                plan,
                pool,
                samples=cfg.mc_samples,
                exact_threshold=cfg.exact_threshold,
                force_monte_carlo=cfg.force_monte_carlo,
                rng=stream(cfg.seed, "shapley", round_index, i),
            )
            eval_count += result.utility_evaluations
            update_relevance(state, svs, cfg.alpha_ema)
            record = compute_weights(state, svs, pool, distance=cfg.distance)
            staged[i] = weighted_aggregate(
                [
                    (_member_params(state, pool, j), w)
                    for j, w in zip(record.members, record.weights)
                    if w > 0
                ]
            )
        else:
            record = AggregationRecord((i,), (), (), (1.0,), True)
            staged[i] = state.params
        records[i] = record
        state.history.append(record)
    for i, params in staged.items():
        states[i].params = params
    return records, eval_count


def _baseline_round(states, cfg, round_index, participants, server):
    """separate / fedavg / fedavg_ft / pairwise_sim; returns new server params."""
    algo = cfg.algorithm
    if algo == "separate":
        for i in participants:
            trained, _ = _train_upload(states[i], cfg, round_index)
            states[i].params = trained
        return None
    if algo in ("fedavg", "fedavg_ft"):
        uploads = []
        for i in participants:
            states[i].params = server
            trained, upload = _train_upload(states[i], cfg, round_index)
            uploads.append(upload)
        merged = average_params(uploads)
        for state in states:
            state.params = merged
        return merged
    # pairwise_sim: every pool model, weighted by inverse parameter distance
    uploads = {}
    for i in participants:
        trained, upload = _train_upload(states[i], cfg, round_index)
        states[i].params = trained
        uploads[i] = upload
    pool = ModelPool(round_index, uploads)
    staged = {}
    for i in participants:
        state = states[i]
        raw = {i: 1.0 / PAIRWISE_SELF_DIST}
        for j in pool.others(i):
            d = param_distance(state.params, pool.models[j])
            raw[j] = 1.0 / (d + PAIRWISE_EPS)
        total = sum(raw.values())
        staged[i] = weighted_aggregate(
            [(_member_params(state, pool, j), w / total) for j, w in sorted(raw.items())]
        )
    for i, params in staged.items():
        states[i].params = params
    return None


def _test_accuracy(state: ClientState, cfg: ExperimentConfig, round_index: int) -> float:
    params = state.params
    if cfg.algorithm == "fedavg_ft":
        params = local_train(
            params,
            _train_batch(state.split),
            cfg.epochs,
            cfg.lr,
            cfg.batch_size,
            stream(cfg.seed, "finetune", round_index, state.id),
        )
    return evaluate(params, _test_batch(state.split))[0]


def run_experiment(cfg: ExperimentConfig) -> SimulationResult:
    """Full simulation for whichever algorithm the config names."""
    cfg.validate()
    ds, partition, states = build_clients(cfg)
    server = states[0].params  # all clients share the initial point
    reports = []
    for t in range(cfg.rounds):
        participants = client_participation_sampler(
            cfg.clients, cfg.participation, stream(cfg.seed, "participation", t)
        )
        if cfg.algorithm == "pfedsv":
            records, evals = _personalization_round(states, cfg, t, participants)
        else:
            server = _baseline_round(states, cfg, t, participants, server)
            records, evals = [None] * len(states), 0
        accuracies = tuple(_test_accuracy(s, cfg, t) for s in states)
        k_eff = tuple(len(r.members) - 1 if r is not None else 0 for r in records)
        reports.append(
            RoundReport(
                round_index=t,
                participants=participants,
                accuracies=accuracies,
                mta=float(np.mean(accuracies)),
                k_eff=k_eff,
                records=tuple(records),
                utility_evaluations=evals,
            )
        )
    return SimulationResult(cfg, ds, partition, states, reports)


def run_pfedsv(cfg: ExperimentConfig) -> SimulationResult:
    if cfg.algorithm != "pfedsv":
        raise ValueError("config names a different algorithm")
    return run_experiment(cfg)


def run_baseline(cfg: ExperimentConfig, algo: str) -> SimulationResult:
    from pfedsv.config import with_algorithm

    if algo == "pfedsv":
        raise ValueError("use run_pfedsv for the main algorithm")
    return run_experiment(with_algorithm(cfg, algo))
