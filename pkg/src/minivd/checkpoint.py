"""Checkpoint files: parameters, optimizer state, RNG state, config.

Checkpoints are canonical JSON (sorted keys, shortest-roundtrip float
repr), so save -> load -> save is byte-identical and double values
survive exactly.
"""

import json

import numpy as np

from .optim import AdamState

FORMAT = "minivd-checkpoint-1"


def checkpoint_payload(model, optimizer, rng_state, config, epoch, vocab_tokens):
    return {
        "format": FORMAT,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "epoch": epoch,
        "vocab": list(vocab_tokens),
        "params": {
            name: {"shape": list(t.data.shape), "data": t.data.ravel(order="C").tolist()}
            for name, t in model.params.items()
        },
        "optimizer": optimizer.to_dict(),
        "rng": rng_state,
    }


def save_checkpoint(path, model, optimizer, rng_state, config, epoch, vocab_tokens):
    payload = checkpoint_payload(model, optimizer, rng_state, config, epoch, vocab_tokens)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    return payload


def restore_model(payload, build_model):
    """Rebuild a model from a payload via `build_model(config_dict, vocab)`.

    Returns (model, optimizer, rng_state, config_dict).
    """
    arrays = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["params"].items()
    }
    model = build_model(payload["config"], payload["vocab"])
    expected = set(model.params)
    if expected != set(arrays):
        missing = expected.symmetric_difference(arrays)
        raise ValueError(f"checkpoint parameters do not match model: {sorted(missing)}")
    model.load_param_arrays(arrays)
    optimizer = AdamState.from_dict(payload["optimizer"], {k: v.shape for k, v in arrays.items()})
    return model, optimizer, payload["rng"], payload["config"]
