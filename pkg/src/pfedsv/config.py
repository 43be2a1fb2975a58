"""Flat key=value experiment configuration: schema, parsing, serialization."""

from dataclasses import dataclass, fields, replace

from pfedsv.errors import ParseError, ValidationError

ALGORITHMS = ("pfedsv", "separate", "fedavg", "fedavg_ft", "pairwise_sim")
DISTANCES = ("l2", "l2sq")
DATASETS = ("synth", "idx")
PARTITIONS = ("pathological", "dirichlet")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment. Group-specific fields are None when their group is off."""

    clients: int
    algorithm: str = "pfedsv"
    participation: float = 1.0
    rounds: int = 20
    epochs: int = 5
    lr: float = 0.1
    batch_size: int = 32
    k: int = 5
    mc_samples: int | None = None  # None = 3 * coalition size
    alpha_ema: float = 0.5
    exact_threshold: int = 6
    force_monte_carlo: bool = False
    distance: str = "l2"
    hidden_dim: int | None = None
    dataset: str = "synth"
    synth_classes: int | None = 10
    synth_dim: int | None = 16
    synth_per_class: int | None = 100
    synth_spread: float | None = 0.1
    idx_images: str | None = None
    idx_labels: str | None = None
    partition: str = "pathological"
    labels_per_client: int | None = 2
    dirichlet_alpha: float | None = None
    val_frac: float = 0.2
    test_frac: float = 0.2
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        def bad(field, why):
            raise ValidationError(f"{field}: {why}")

        if self.algorithm not in ALGORITHMS:
            bad("algorithm", f"must be one of {', '.join(ALGORITHMS)}")
        if self.clients < 1:
            bad("clients", "must be >= 1")
        if not 0 < self.participation <= 1:
            bad("participation", "must be in (0, 1]")
        if self.rounds < 0:
            bad("rounds", "must be >= 0")
        if self.epochs < 1:
            bad("epochs", "must be >= 1")
        if self.lr <= 0:
            bad("lr", "must be > 0")
        if self.batch_size < 1:
            bad("batch_size", "must be >= 1")
        if self.k < 1:
            bad("k", "must be >= 1")
        if self.mc_samples is not None and self.mc_samples < 1:
            bad("mc_samples", "must be >= 1 or auto")
        if not 0 <= self.alpha_ema <= 1:
            bad("alpha_ema", "must be in [0, 1]")
        if self.exact_threshold < 1:
            bad("exact_threshold", "must be >= 1")
        if self.distance not in DISTANCES:
            bad("distance", f"must be one of {', '.join(DISTANCES)}")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            bad("hidden_dim", "must be >= 1 or 0 for a linear model")
        if self.dataset not in DATASETS:
            bad("dataset", f"must be one of {', '.join(DATASETS)}")
        if self.dataset == "synth":
            if self.idx_images is not None or self.idx_labels is not None:
                bad("idx_images", "only applies when dataset = idx")
            if self.synth_classes is None or self.synth_classes < 2:
                bad("synth_classes", "must be >= 2")
            if self.synth_dim is None or self.synth_dim < 1:
                bad("synth_dim", "must be >= 1")
            if self.synth_per_class is None or self.synth_per_class < 1:
                bad("synth_per_class", "must be >= 1")
            if self.synth_spread is None or self.synth_spread <= 0:
                bad("synth_spread", "must be > 0")
        else:
            if self.idx_images is None or self.idx_labels is None:
                bad("idx_images", "dataset = idx needs idx_images and idx_labels")
            for f in ("synth_classes", "synth_dim", "synth_per_class", "synth_spread"):
                if getattr(self, f) is not None:
                    bad(f, "only applies when dataset = synth")
        if self.partition not in PARTITIONS:
            bad("partition", f"must be one of {', '.join(PARTITIONS)}")
        if self.partition == "pathological":
            if self.dirichlet_alpha is not None:
                bad("dirichlet_alpha", "only applies when partition = dirichlet")
            if self.labels_per_client is None or self.labels_per_client < 1:
                bad("labels_per_client", "must be >= 1")
        else:
            if self.labels_per_client is not None:
                bad("labels_per_client", "only applies when partition = pathological")
            if self.dirichlet_alpha is None or self.dirichlet_alpha <= 0:
                bad("dirichlet_alpha", "must be > 0")
        if self.val_frac <= 0 or self.test_frac <= 0 or self.val_frac + self.test_frac >= 1:
            bad("val_frac", "need 0 < val_frac, test_frac with val_frac + test_frac < 1")
        if self.noise_sigma < 0:
            bad("noise_sigma", "must be >= 0")
        return self


def _to_bool(raw):
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValueError("expected true or false")


def _to_int(raw):
    return int(raw, 10)


def _to_samples(raw):
    return None if raw == "auto" else int(raw, 10)


def _to_hidden(raw):
    value = int(raw, 10)
    return None if value == 0 else value


_PARSERS = {
    "algorithm": str,
    "clients": _to_int,
    "participation": float,
    "rounds": _to_int,
    "epochs": _to_int,
    "lr": float,
    "batch_size": _to_int,
    "k": _to_int,
    "mc_samples": _to_samples,
    "alpha_ema": float,
    "exact_threshold": _to_int,
    "force_monte_carlo": _to_bool,
    "distance": str,
    "hidden_dim": _to_hidden,
    "dataset": str,
    "synth_classes": _to_int,
    "synth_dim": _to_int,
    "synth_per_class": _to_int,
    "synth_spread": float,
    "idx_images": str,
    "idx_labels": str,
    "partition": str,
    "labels_per_client": _to_int,
    "dirichlet_alpha": float,
    "val_frac": float,
    "test_frac": float,
    "noise_sigma": float,
    "seed": _to_int,
}

# fields whose defaults belong to one dataset/partition group only
_GROUP_DEFAULTS = {
    ("dataset", "idx"): {
        "synth_classes": None,
        "synth_dim": None,
        "synth_per_class": None,
        "synth_spread": None,
    },
    ("partition", "dirichlet"): {"labels_per_client": None, "dirichlet_alpha": 0.5},
}


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ParseError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if key not in _PARSERS:
            raise ParseError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ParseError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            seen[key] = _PARSERS[key](raw)
        except ValueError as exc:
            raise ParseError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    if "clients" not in seen:
        raise ValidationError("clients: required key is missing")
    values = dict(seen)
    for (switch, active), overrides in _GROUP_DEFAULTS.items():
        if values.get(switch, getattr(ExperimentConfig, switch)) == active:
            for field, default in overrides.items():
                values.setdefault(field, default)
    return ExperimentConfig(**values).validate()


def parse_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def serialize_config(cfg: ExperimentConfig) -> str:
    """Inverse of parse_config_text for any valid config."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None and f.name != "mc_samples":
            continue
        if f.name == "mc_samples":
            rendered = "auto" if value is None else str(value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, seed=seed)


def with_algorithm(cfg: ExperimentConfig, algorithm: str) -> ExperimentConfig:
    return replace(cfg, algorithm=algorithm).validate()
