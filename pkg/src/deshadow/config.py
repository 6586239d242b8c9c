"""Flat dotted-key configuration.

Config files are plain text, one ``key = value`` per line, ``#`` starts
a comment. Overrides are ``key=value`` strings applied after the file.
Unknown keys are rejected; value types are pinned by the defaults. The
fingerprint hashes the canonical serialization and guards checkpoint
resumes against silent config drift.
"""

import hashlib

from .validation import ValidationError

__all__ = ["DEFAULTS", "Config"]

DEFAULTS = {
    "data.image_size": 64,
    "priors.gamma": 2.0,
    "priors.highfreq_kernel": "laplacian3",
    "model.base_channels": 16,
    "model.depth": 3,
    "model.use_agba": True,
    "model.agba_stages": "3,2",
    "model.agba_heads": 4,
    "model.agba_embed_dim": 32,
    "model.agba_gate_hidden": 16,
    "diffusion.timesteps": 100,
    "diffusion.schedule": "linear",
    "diffusion.base_channels": 16,
    "diffusion.depth": 3,
    "diffusion.condition_on_priors": True,
    "diffusion.condition_on_content": True,
    "diffusion.sample_steps": 25,
    "loss.lambda_high": 0.1,
    "loss.lambda_cssim": 0.1,
    "train.lr": 1e-4,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.weight_decay": 1e-4,
    "train.ema_every": 100,
    "train.ema_decay": 0.999,
    "train.batch_size": 8,
    "train.max_steps": 2000,
    "train.seed": 0,
    "train.grad_clip": 1.0,
    "train.augment": True,
    "train.checkpoint_every": 0,
}


def _parse_bool(raw, key):
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValidationError(f"config key {key}: expected a boolean, got {raw!r}")


def _coerce(key, raw):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return _parse_bool(raw, key)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ValidationError(
            f"config key {key}: cannot parse {raw!r} as {type(default).__name__}"
        )


def _canonical(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Config:
    """Immutable-ish view over DEFAULTS plus file values plus overrides."""

    def __init__(self, values=None):
        self._values = dict(DEFAULTS)
        if values:
            for key, val in values.items():
                self._set(key, val)

    def _set(self, key, value):
        if key not in DEFAULTS:
            raise ValidationError(f"unknown config key: {key}")
        if isinstance(value, str) and not isinstance(DEFAULTS[key], str):
            value = _coerce(key, value)
        expected = type(DEFAULTS[key])
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, expected) or isinstance(value, bool) is not (expected is bool):
            raise ValidationError(
                f"config key {key}: expected {expected.__name__}, got {type(value).__name__}"
            )
        self._values[key] = value

    @classmethod
    def from_file(cls, path):
        values = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = stripped.split("=", 1)
                values[key.strip()] = raw.strip()
        return cls(values)

    @classmethod
    def from_dict(cls, values):
        return cls(values)

    def with_overrides(self, overrides):
        """Return a new Config with ``key=value`` override strings applied."""
        out = Config(self._values)
        for item in overrides:
            if "=" not in item:
                raise ValidationError(f"override {item!r} is not of the form key=value")
            key, raw = item.split("=", 1)
            out._set(key.strip(), raw.strip())
        return out

    def get(self, key):
        if key not in self._values:
            raise ValidationError(f"unknown config key: {key}")
        return self._values[key]

    def __getitem__(self, key):
        return self.get(key)

    def to_dict(self):
        return dict(self._values)

    def to_text(self):
        lines = [f"{k} = {_canonical(v)}" for k, v in sorted(self._values.items())]
        return "\n".join(lines) + "\n"

    def fingerprint(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def diff(self, other):
        """Keys whose values differ between two configs."""
        mine, theirs = self.to_dict(), other.to_dict()
        return sorted(k for k in mine if mine[k] != theirs.get(k))

    def agba_stages(self):
        raw = self.get("model.agba_stages").strip()
        if not raw:
            return ()
        try:
            return tuple(int(s) for s in raw.split(","))
        except ValueError:
            raise ValidationError(f"model.agba_stages: cannot parse {raw!r}")
