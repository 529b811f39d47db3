"""Binary checkpoints.

Layout: 8 magic bytes, a little-endian ``uint32`` format version, a
``uint32`` header length, a UTF-8 JSON header, then an ``.npz`` archive
with every array (network weights, Adam moments, replay buffers). Random
generator states live in the header, so a resumed run continues the exact
same random streams.
"""

from __future__ import annotations

import io
import json
import struct
import zipfile
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_from_dict
from .meta import MetaLearner

MAGIC = b"PEARLCKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


class CheckpointError(ValueError):
    pass


def learner_state(learner: MetaLearner) -> tuple[dict, dict[str, np.ndarray]]:
    """Split the learner's state into a JSON-able header part and arrays."""
    arrays: dict[str, np.ndarray] = {}
    for name, net in learner.nets.named_networks().items():
        for i, a in enumerate(net.get_arrays()):
            arrays[f"net/{name}/{i}"] = a
    opt_steps = {}
    for name, opt in learner.opt.items():
        st = opt.state_arrays()
        opt_steps[name] = st["step"]
        for i, (m, v) in enumerate(zip(st["m"], st["v"])):
            arrays[f"opt/{name}/m/{i}"] = m
            arrays[f"opt/{name}/v/{i}"] = v
    for t, buf in enumerate(learner.buffers):
        for k, a in buf.state().items():
            arrays[f"buffer/{t}/{k}"] = a
    header = {
        "iteration": learner.iteration,
        "env_steps": learner.env_steps,
        "curve": learner.curve,
        "rng": learner.streams.state(),
        "optimizer_steps": opt_steps,
    }
    return header, arrays


def restore_learner(learner: MetaLearner, header: dict, arrays: dict[str, np.ndarray]) -> None:
    for name, net in learner.nets.named_networks().items():
        n = len(net.parameters())
        try:
            net.set_arrays([arrays[f"net/{name}/{i}"] for i in range(n)])
        except KeyError:
            raise CheckpointError(f"checkpoint lacks weights for network {name!r}") from None
    for name, opt in learner.opt.items():
        n = len(opt.params)
        opt.load_state_arrays(
            {
                "step": header["optimizer_steps"][name],
                "m": [arrays[f"opt/{name}/m/{i}"] for i in range(n)],
                "v": [arrays[f"opt/{name}/v/{i}"] for i in range(n)],
            }
        )
    for t, buf in enumerate(learner.buffers):
        prefix = f"buffer/{t}/"
        buf.load_state({k[len(prefix):]: a for k, a in arrays.items() if k.startswith(prefix)})
    learner.streams.load_state(header["rng"])
    learner.iteration = int(header["iteration"])
    learner.env_steps = int(header["env_steps"])
    learner.curve = [dict(r) for r in header["curve"]]


def save_checkpoint(path, learner: MetaLearner, cfg: ExperimentConfig) -> None:
    state, arrays = learner_state(learner)
    header = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        **state,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = io.BytesIO()
    np.savez(payload, **arrays)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload.getvalue())
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, n = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format {version} is not supported (expected {FORMAT_VERSION})")
    start = _PREFIX.size
    if len(data) < start + n:
        raise CheckpointError(f"{path}: truncated checkpoint")
    try:
        header = json.loads(data[start : start + n].decode("utf-8"))
        with np.load(io.BytesIO(data[start + n :]), allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (ValueError, OSError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint ({e})") from e
    return header, arrays


def load_checkpoint(path, expect_hash: str | None = None) -> tuple[MetaLearner, ExperimentConfig]:
    """Rebuild the learner stored in ``path``.

    With ``expect_hash`` set, refuse checkpoints written under a different
    configuration.
    """
    header, arrays = read_checkpoint(path)
    cfg = config_from_dict(header["config"])
    if cfg.config_hash() != header["config_hash"]:
        raise CheckpointError(f"{path}: stored configuration does not match its hash")
    if expect_hash is not None and expect_hash != header["config_hash"]:
        raise CheckpointError(
            f"{path}: configuration hash {header['config_hash'][:12]} differs from the current "
            f"configuration {expect_hash[:12]}; refusing to resume"
        )
    learner = MetaLearner(cfg.train, cfg.env)
    restore_learner(learner, header, arrays)
    return learner, cfg


def describe_checkpoint(path) -> dict:
    header, arrays = read_checkpoint(path)
    nets: dict[str, int] = {}
    for k, a in arrays.items():
        if k.startswith("net/"):
            name = k.split("/")[1]
            nets[name] = nets.get(name, 0) + int(a.size)
    n_transitions = sum(int(a.shape[0]) for k, a in arrays.items() if k.startswith("buffer/") and k.endswith("/rewards"))
    return {
        "format_version": header["format_version"],
        "config_hash": header["config_hash"],
        "family": header["config"]["family"],
        "seed": header["config"]["seed"],
        "iteration": header["iteration"],
        "env_steps": header["env_steps"],
        "network_parameters": dict(sorted(nets.items())),
        "optimizer_steps": header["optimizer_steps"],
        "buffered_transitions": n_transitions,
        "rng_streams": sorted(header["rng"]),
    }
