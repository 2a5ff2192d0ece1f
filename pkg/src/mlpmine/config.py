"""Declarative experiment configuration.

Configs live in flat key=value text files ('#' comments and blank lines
allowed); every field can also be set from the command line.  Grid files use
the same keys with pipe-separated alternatives, e.g.

    dropout_keep=0.75,0.75,1.0|0.5,0.5,1.0
    learning_rate=0.1|0.01
"""

from dataclasses import dataclass, field, replace

from .dataio import N_CLASSES
from .errors import ParameterError
from .losses import PENALTY_KINDS, PenaltyConfig
from .pruning import MEAN_DISTANCE, RECONSTRUCTION_RMSE

OPTIMIZERS = ("adam", "sgd")
PRUNE_METHODS = (MEAN_DISTANCE, RECONSTRUCTION_RMSE)


@dataclass
class ExperimentConfig:
    """One training run: architecture, regularization, optimizer, data mining."""

    architecture: list = field(default_factory=lambda: [784, 128, 128, 128, 47])
    activation: str = "relu"
    dropout_keep: list = None  # one keep probability per hidden layer
    penalty_kind: str = "none"
    penalty_lambda: float = 0.0
    optimizer: str = "adam"
    learning_rate: float = 0.1
    epochs: int = 100
    batch_size: int = 100
    seed: int = 1
    pca_components: int = None
    prune_method: str = None
    prune_keep_k: int = None
    prune_chain_after_mean: bool = False
    early_stop_patience: int = None

    def penalty(self):
        return PenaltyConfig(self.penalty_kind, self.penalty_lambda)

    def validate(self):
        if len(self.architecture) < 2:
            raise ParameterError("architecture needs at least 2 widths")
        if any(w < 1 for w in self.architecture):
            raise ParameterError("architecture widths must be >= 1")
        if self.architecture[-1] != N_CLASSES:
            raise ParameterError(
                "output width must be %d, got %d" % (N_CLASSES, self.architecture[-1])
            )
        if self.activation != "relu":
            raise ParameterError("only relu activations are implemented, got %r" % self.activation)
        if self.dropout_keep is not None:
            n_hidden = len(self.architecture) - 2
            if len(self.dropout_keep) != n_hidden:
                raise ParameterError(
                    "dropout_keep needs %d entries (one per hidden layer), got %d"
                    % (n_hidden, len(self.dropout_keep))
                )
            if any(not 0.0 < p <= 1.0 for p in self.dropout_keep):
                raise ParameterError("dropout keep probabilities must lie in (0, 1]")
        self.penalty()  # raises on a bad kind/lambda combination
        if self.optimizer not in OPTIMIZERS:
            raise ParameterError("optimizer must be one of %s, got %r" % (OPTIMIZERS, self.optimizer))
        if self.learning_rate <= 0.0:
            raise ParameterError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.pca_components is not None and self.pca_components < 1:
            raise ParameterError("pca_components must be >= 1")
        if self.prune_method is not None and self.prune_method not in PRUNE_METHODS:
            raise ParameterError(
                "prune_method must be one of %s, got %r" % (PRUNE_METHODS, self.prune_method)
            )
        if self.prune_method is not None and (self.prune_keep_k is None or self.prune_keep_k < 1):
            raise ParameterError("pruning requires prune_keep_k >= 1")
        if self.prune_method == RECONSTRUCTION_RMSE and self.pca_components is None:
            raise ParameterError("reconstruction-rmse pruning requires pca_components")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ParameterError("early_stop_patience must be >= 1")
        return self

    def to_dict(self):
        return {
            "architecture": ",".join(str(w) for w in self.architecture),
            "activation": self.activation,
            "dropout_keep": ""
            if self.dropout_keep is None
            else ",".join(repr(p) for p in self.dropout_keep),
            "penalty": self.penalty_kind,
            "penalty_lambda": repr(self.penalty_lambda),
            "optimizer": self.optimizer,
            "learning_rate": repr(self.learning_rate),
            "epochs": str(self.epochs),
            "batch_size": str(self.batch_size),
            "seed": str(self.seed),
            "pca_components": "" if self.pca_components is None else str(self.pca_components),
            "prune_method": "" if self.prune_method is None else self.prune_method,
            "prune_keep_k": "" if self.prune_keep_k is None else str(self.prune_keep_k),
            "prune_chain_after_mean": "true" if self.prune_chain_after_mean else "false",
            "early_stop_patience": ""
            if self.early_stop_patience is None
            else str(self.early_stop_patience),
        }


def _parse_optional(raw, parse):
    raw = raw.strip()
    if raw == "" or raw.lower() == "none":
        return None
    return parse(raw)


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ParameterError("expected a boolean, got %r" % raw)


def _parse_penalty_kind(raw):
    for kind in PENALTY_KINDS:
        if raw.strip().lower() == kind.lower():
            return kind
    raise ParameterError("penalty must be one of %s, got %r" % (PENALTY_KINDS, raw))


_FIELD_PARSERS = {
    "architecture": lambda raw: [int(w) for w in raw.split(",") if w.strip()],
    "activation": lambda raw: raw.strip(),
    "dropout_keep": lambda raw: _parse_optional(
        raw, lambda r: [float(p) for p in r.split(",") if p.strip()]
    ),
    "penalty": _parse_penalty_kind,
    "penalty_lambda": float,
    "optimizer": lambda raw: raw.strip().lower(),
    "learning_rate": float,
    "epochs": int,
    "batch_size": int,
    "seed": int,
    "pca_components": lambda raw: _parse_optional(raw, int),
    "prune_method": lambda raw: _parse_optional(raw, lambda r: r.strip()),
    "prune_keep_k": lambda raw: _parse_optional(raw, int),
    "prune_chain_after_mean": _parse_bool,
    "early_stop_patience": lambda raw: _parse_optional(raw, int),
}

_FIELD_NAMES = {  # file key -> dataclass attribute
    key: ("penalty_kind" if key == "penalty" else key) for key in _FIELD_PARSERS
}


def set_field(config, key, raw_value):
    """Set one config field from its textual form; returns a new config."""
    key = key.strip()
    if key not in _FIELD_PARSERS:
        raise ParameterError(
            "unknown config field %r (known: %s)" % (key, ", ".join(sorted(_FIELD_PARSERS)))
        )
    try:
        value = _FIELD_PARSERS[key](raw_value)
    except ParameterError:
        raise
    except ValueError as exc:
        raise ParameterError("bad value for %s: %r (%s)" % (key, raw_value, exc))
    return replace(config, **{_FIELD_NAMES[key]: value})


def _iter_assignments(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ParameterError("%s:%d: expected key=value, got %r" % (path, lineno, line.rstrip()))
            key, _, value = stripped.partition("=")
            yield key.strip(), value.strip()


def load_config(path, base=None):
    """Read a key=value config file on top of ``base`` (or the defaults)."""
    config = base if base is not None else ExperimentConfig()
    for key, value in _iter_assignments(path):
        config = set_field(config, key, value)
    return config


def apply_overrides(config, overrides):
    """Apply "key=value" strings (e.g. from --set flags)."""
    for item in overrides:
        if "=" not in item:
            raise ParameterError("override %r is not of the form key=value" % item)
        key, _, value = item.partition("=")
        config = set_field(config, key, value)
    return config


def load_grid(path):
    """Read a grid file: each line key=alt1|alt2|... in file order."""
    grid = {}
    for key, value in _iter_assignments(path):
        if key not in _FIELD_PARSERS:
            raise ParameterError("unknown grid field %r" % key)
        alternatives = [v.strip() for v in value.split("|")]
        if not alternatives or any(not v and key != "dropout_keep" for v in alternatives):
            raise ParameterError("grid line for %r has an empty alternative" % key)
        grid[key] = alternatives
    if not grid:
        raise ParameterError("grid file %s defines no axes" % path)
    return grid
