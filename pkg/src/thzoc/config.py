"""INI run configuration with typed defaults and THZ_<SECTION>_<KEY> overrides."""

import configparser
import hashlib
import json
import os

from .errors import ConfigError

# every key with its default; the type of the default is the type of the key
DEFAULTS = {
    "domain": {
        "scenario": "crystal",          # crystal | vacuum
        "period": 1.0,
        "n_periods": 3,
        "domains_per_period": 2,
        "pml_width": 1.0,
        "elems_per_unit": 16,
    },
    "material": {
        "gamma0": 0.5,
        "nu_t": 3.0,
        "eps_omega": 1.5,
        "eps_Omega": 2.5,
        "chi2": 0.1,
        "abs_value": False,
    },
    "time": {
        "k": 0.03125,
        "n_steps": 384,
        "t_shift": 3.0,
        "newton_abs_tol": 1e-10,
        "newton_rel_tol": 1e-12,
        "newton_max_iter": 25,
        "levels": 5,
    },
    "pml": {
        "grade_power": 2,
        "attenuation": 1e-6,
    },
    "network": {
        "kind": "fno",                  # fno | gru | identity
        "layers": 4,
        "width": 8,
        "n_modes": 24,
        "proj_hidden": 141,
        "activation": "tanh",
        "pad_fraction": 0.25,
        "gru_layers": 1,
        "gru_hidden": 16,
    },
    "training": {
        "epochs": 300,
        "lr": 3e-3,
        "loss": "l_c1",
        "optimizer": "adamw",
        "batch_size": 0,
        "weight_decay": 0.0,
        "h_max": 10,
        "workers": 1,
        "seed": 0,
        "n_pulses": 16,
        "n_val": 4,
        "train_interfaces": 2,
        "plane_frequencies": [1.0, 0.9, 2.0, 1.8],
        "augment_shifts": [43.0, 86.0],
    },
    "ocp": {
        "tau": 1.5,
        "p": 1.0,
        "a": [0.5, 0.5],
        "phi": [0.0, 0.0],
        "zeta": [0.0, 0.0],
        "f": [1.0, 0.8],
        "tau_max": 10.0,
        "p_max": 10.0,
        "a_max": 1.0,
        "phi_max": 6.283185307179586,
        "zeta_max": 1.0,
        "f_max": 10.0,
        "f_omega": 0.2,
        "r": 0.1,
        "alpha": 6e-14,
        "sense": "maximize",
        "optimizer": "adam",
        "lr": 0.02,
        "max_iter": 15,
        "step_tol": 1e-8,
        "free": "a",
    },
}


def _parse(raw, default, where):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None
    return raw


class RunConfig:
    """Sections of typed values; attribute access by section, item access by key."""

    def __init__(self, values):
        self.values = values

    def __getitem__(self, section):
        return self.values[section]

    def as_dict(self):
        return json.loads(json.dumps(self.values))

    def hash(self):
        text = json.dumps(self.values, sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _override_target(name):
    """Section and key for THZ_<SECTION>_<KEY>.

    The key matches as written or fully upper-cased; an upper-cased name that
    fits two keys (eps_omega / eps_Omega) must spell the key exactly.
    """
    rest = name[4:]
    exact, folded = [], []
    for s in DEFAULTS:
        for k in DEFAULTS[s]:
            if rest == f"{s.upper()}_{k}":
                exact.append((s, k))
            elif rest == f"{s.upper()}_{k.upper()}":
                folded.append((s, k))
    if exact:
        return exact[0]
    if len(folded) == 1:
        return folded[0]
    if len(folded) > 1:
        raise ConfigError(f"ambiguous override {name}; spell the key exactly")
    raise ConfigError(f"unknown override {name}")


def load_config(path=None, env=None, text=None):
    """Read an INI file (or text), apply environment overrides, fill defaults."""
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if text is not None:
        parser.read_string(text)
    elif path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    values = {s: dict(d) for s, d in DEFAULTS.items()}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[section][key] = _parse(raw, DEFAULTS[section][key], f"[{section}] {key}")
    for name, raw in sorted(env.items()):
        if name.startswith("THZ_"):
            s, k = _override_target(name)
            values[s][k] = _parse(raw, DEFAULTS[s][k], name)
    return RunConfig(values)
